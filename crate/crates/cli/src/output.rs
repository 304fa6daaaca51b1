use std::io::Write;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

/// A command's result in each output format.
pub struct Output {
    pub json: Value,
    pub text: String,
    pub csv: Vec<Vec<String>>,
}

impl Output {
    pub fn new<T: Serialize>(doc: &T, text: String, csv: Vec<Vec<String>>) -> Self {
        Output {
            json: serde_json::to_value(doc).expect("result documents serialize"),
            text,
            csv,
        }
    }

    pub fn write(&self, format: Format, out: &mut impl Write) -> std::io::Result<()> {
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut *out, &self.json)?;
                writeln!(out)
            }
            Format::Text => write!(out, "{}", self.text),
            Format::Csv => {
                for row in &self.csv {
                    let cells: Vec<String> = row.iter().map(|c| csv_field(c)).collect();
                    writeln!(out, "{}", cells.join(","))?;
                }
                Ok(())
            }
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One CSV row from anything `Display`.
#[macro_export]
macro_rules! row {
    ($($cell:expr),* $(,)?) => {
        vec![$(($cell).to_string()),*]
    };
}
