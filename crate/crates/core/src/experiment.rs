//! Seeded Monte Carlo Bell experiments.
//!
//! A run draws a setting pair per trial, then an outcome from the configured
//! source. Trials are generated in fixed blocks of [`BLOCK_SIZE`]; block `b`
//! uses the substream `rng::substream(seed, b)`, so a dataset depends only on
//! the configuration and seed, never on the number of worker threads.
//!
//! Within a trial the setting draw comes first (one uniform, `floor(9u)` or
//! `floor(4u)` indexing the pair list), followed by the source's own draws.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lhv_models::{LhvModel, LhvModelFile};
use crate::loophole::{LoopholeModel, LpSolution};
use crate::quantum_model::{match_table, AngleTriple, MatchProbabilityTable};
use crate::rng::{self, StreamRng};
use crate::setting::{Setting, SettingPair, Spin};

/// Trials per RNG substream.
pub const BLOCK_SIZE: u64 = 4096;

/// Spin recorded for an undetected particle under all-pairs accounting.
pub const FILL_SPIN: Spin = Spin::Down;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SettingDistribution {
    /// All nine pairs, equally likely.
    #[default]
    #[serde(rename = "uniform-9")]
    Uniform9,
    /// Only the four pairs in the Bell statistic.
    #[serde(rename = "uniform-4")]
    Uniform4,
}

impl SettingDistribution {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> SettingPair {
        let u = rng::uniform(rng);
        match self {
            SettingDistribution::Uniform9 => {
                let k = ((u * 9.0) as usize).min(8);
                let x1 = Setting::ALL[k / 3];
                let x2 = Setting::ALL[k % 3];
                SettingPair { x1, x2 }
            }
            SettingDistribution::Uniform4 => {
                SettingPair::statistic_pairs()[((u * 4.0) as usize).min(3)]
            }
        }
    }
}

/// Data source of an experiment with its model payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceSpec {
    Quantum,
    DeterministicLhv { model: LhvModelFile },
    StochasticLhv { model: LhvModelFile },
    Loophole { solution: LpSolution },
}

impl SourceSpec {
    pub fn from_lhv(model: &LhvModel) -> Self {
        let file = LhvModelFile::from_model(model);
        match model {
            LhvModel::Deterministic(_) => SourceSpec::DeterministicLhv { model: file },
            LhvModel::Stochastic(_) => SourceSpec::StochasticLhv { model: file },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SourceSpec::Quantum => "quantum",
            SourceSpec::DeterministicLhv { .. } => "deterministic-lhv",
            SourceSpec::StochasticLhv { .. } => "stochastic-lhv",
            SourceSpec::Loophole { .. } => "loophole",
        }
    }
}

impl PartialEq for LhvModelFile {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_trials: u64,
    pub angles: AngleTriple,
    pub source: SourceSpec,
    pub seed: u64,
    #[serde(default)]
    pub setting_distribution: SettingDistribution,
}

enum PreparedSource {
    Quantum(MatchProbabilityTable),
    Lhv(LhvModel),
    Loophole(LoopholeModel),
}

impl PreparedSource {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(match &config.source {
            SourceSpec::Quantum => PreparedSource::Quantum(match_table(&config.angles)),
            SourceSpec::DeterministicLhv { model } => match model.clone().into_model()? {
                m @ LhvModel::Deterministic(_) => PreparedSource::Lhv(m),
                LhvModel::Stochastic(_) => {
                    return Err(Error::config(
                        "deterministic-lhv source given a stochastic model",
                    ))
                }
            },
            SourceSpec::StochasticLhv { model } => match model.clone().into_model()? {
                m @ LhvModel::Stochastic(_) => PreparedSource::Lhv(m),
                LhvModel::Deterministic(_) => {
                    return Err(Error::config("stochastic-lhv source given a mixture model"))
                }
            },
            SourceSpec::Loophole { solution } => PreparedSource::Loophole(
                LoopholeModel::new(solution).map_err(|e| Error::config(e.to_string()))?,
            ),
        })
    }

    fn trial(&self, index: u64, pair: SettingPair, rng: &mut StreamRng) -> TrialRecord {
        let (y1, y2) = match self {
            PreparedSource::Quantum(table) => {
                let (a, b) = crate::quantum_model::sample_outcome_pair(pair, table, rng);
                (Some(a), Some(b))
            }
            PreparedSource::Lhv(model) => {
                let (a, b) = model.sample(pair, rng);
                (Some(a), Some(b))
            }
            PreparedSource::Loophole(model) => {
                let out = model.sample(pair, rng);
                (out.y1, out.y2)
            }
        };
        TrialRecord {
            index,
            x1: pair.x1,
            x2: pair.x2,
            y1,
            y2,
            d1: y1.is_some(),
            d2: y2.is_some(),
        }
    }
}

/// One simulated measurement event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u64,
    pub x1: Setting,
    pub x2: Setting,
    pub y1: Option<Spin>,
    pub y2: Option<Spin>,
    pub d1: bool,
    pub d2: bool,
}

impl TrialRecord {
    pub fn pair(&self) -> SettingPair {
        SettingPair {
            x1: self.x1,
            x2: self.x2,
        }
    }

    pub fn coincident(&self) -> bool {
        self.d1 && self.d2
    }
}

/// Generates the dataset described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    run_experiment_with(config, Execution::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, exec: Execution) -> Result<Vec<TrialRecord>> {
    if config.n_trials == 0 {
        return Err(Error::config("n_trials must be at least 1"));
    }
    let source = PreparedSource::new(config)?;
    let n = config.n_trials;
    let blocks = n.div_ceil(BLOCK_SIZE) as usize;
    let chunks = exec::map_range(exec, blocks, |b| {
        let start = b as u64 * BLOCK_SIZE;
        let end = (start + BLOCK_SIZE).min(n);
        let mut rng = rng::substream(config.seed, b as u64);
        (start..end)
            .map(|index| {
                let pair = config.setting_distribution.draw(&mut rng);
                source.trial(index, pair, &mut rng)
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Every trial counts; a missing spin is read as [`FILL_SPIN`].
    AllPairs,
    /// Only trials with both particles detected count.
    #[default]
    CoincidencesOnly,
}

/// Tallies for one setting pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCounts {
    pub trials: u64,
    pub coincidences: u64,
    /// Matches among coincident trials.
    pub coincident_matches: u64,
    /// Matches over all trials with missing spins read as [`FILL_SPIN`].
    pub filled_matches: u64,
}

impl CellCounts {
    fn add(&mut self, o: &CellCounts) {
        self.trials += o.trials;
        self.coincidences += o.coincidences;
        self.coincident_matches += o.coincident_matches;
        self.filled_matches += o.filled_matches;
    }

    /// Trials without a coincidence, i.e. with at least one spin filled in.
    pub fn filled(&self) -> u64 {
        self.trials - self.coincidences
    }

    /// `(matches, denominator)` under the given conditioning.
    pub fn counts(&self, conditioning: Conditioning) -> (u64, u64) {
        match conditioning {
            Conditioning::AllPairs => (self.filled_matches, self.trials),
            Conditioning::CoincidencesOnly => (self.coincident_matches, self.coincidences),
        }
    }
}

pub type CellGrid = [[CellCounts; 3]; 3];

const TALLY_CHUNK: usize = 1 << 15;

/// Single-pass tally of a dataset, folded per chunk and summed.
pub fn tally(dataset: &[TrialRecord], exec: Execution) -> CellGrid {
    let chunks = dataset.len().div_ceil(TALLY_CHUNK);
    let partials = exec::map_range(exec, chunks, |c| {
        let mut grid = CellGrid::default();
        let end = ((c + 1) * TALLY_CHUNK).min(dataset.len());
        for r in &dataset[c * TALLY_CHUNK..end] {
            let cell = &mut grid[r.x1.index()][r.x2.index()];
            cell.trials += 1;
            if r.coincident() {
                cell.coincidences += 1;
                if r.y1 == r.y2 {
                    cell.coincident_matches += 1;
                }
            }
            if r.y1.unwrap_or(FILL_SPIN) == r.y2.unwrap_or(FILL_SPIN) {
                cell.filled_matches += 1;
            }
        }
        grid
    });
    let mut total = CellGrid::default();
    for g in &partials {
        for (row, grow) in total.iter_mut().zip(g) {
            for (cell, gc) in row.iter_mut().zip(grow) {
                cell.add(gc);
            }
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellEstimate {
    pub cell_counts: CellGrid,
    pub conditioning: Conditioning,
    /// Match frequencies `(m12, m02, m10, m00)`.
    pub rates: [f64; 4],
    pub statistic: f64,
    pub std_error: f64,
    pub confidence: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl BellEstimate {
    /// The statistic recomputed from the stored cell counts.
    pub fn recomputed_statistic(&self) -> f64 {
        let r =
            cell_rates(&self.cell_counts, self.conditioning).expect("estimate cells are nonempty");
        r[0] - r[1] - r[2] - r[3]
    }

    /// Fraction of trials with both particles detected.
    pub fn coincidence_rate(&self) -> f64 {
        let (c, t) = self
            .cell_counts
            .iter()
            .flatten()
            .fold((0, 0), |(c, t), cell| {
                (c + cell.coincidences, t + cell.trials)
            });
        if t == 0 {
            0.0
        } else {
            c as f64 / t as f64
        }
    }
}

fn cell_rates(cells: &CellGrid, conditioning: Conditioning) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (slot, pair) in out.iter_mut().zip(SettingPair::statistic_pairs()) {
        let (m, n) = cells[pair.x1.index()][pair.x2.index()].counts(conditioning);
        if n == 0 {
            return Err(Error::EmptyCell {
                x1: pair.x1.value(),
                x2: pair.x2.value(),
            });
        }
        *slot = m as f64 / n as f64;
    }
    Ok(out)
}

fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Estimates the Bell statistic with a two-sided normal interval at level
/// `confidence`. The standard error treats the four cells as independent
/// binomials: `sqrt(sum p(1-p)/n)`.
pub fn estimate(
    dataset: &[TrialRecord],
    conditioning: Conditioning,
    confidence: f64,
) -> Result<BellEstimate> {
    estimate_from_counts(
        tally(dataset, Execution::default()),
        conditioning,
        confidence,
    )
}

pub fn estimate_from_counts(
    cells: CellGrid,
    conditioning: Conditioning,
    confidence: f64,
) -> Result<BellEstimate> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::domain(format!(
            "confidence {confidence} is not in (0,1)"
        )));
    }
    let rates = cell_rates(&cells, conditioning)?;
    let statistic = rates[0] - rates[1] - rates[2] - rates[3];
    let variance: f64 = SettingPair::statistic_pairs()
        .iter()
        .zip(rates)
        .map(|(pair, p)| {
            let (_, n) = cells[pair.x1.index()][pair.x2.index()].counts(conditioning);
            p * (1.0 - p) / n as f64
        })
        .sum();
    let std_error = variance.sqrt();
    let z = standard_normal_quantile(0.5 + confidence / 2.0);
    Ok(BellEstimate {
        cell_counts: cells,
        conditioning,
        rates,
        statistic,
        std_error,
        confidence,
        ci_low: statistic - z * std_error,
        ci_high: statistic + z * std_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub reject_lhv: bool,
    /// One-sided lower confidence bound at level `1 - alpha`.
    pub margin: f64,
    pub alpha: f64,
}

/// Rejects local hidden variables iff the one-sided `1 - alpha` lower bound
/// on the statistic is positive.
pub fn decide(est: &BellEstimate, alpha: f64) -> Result<Decision> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha {alpha} is not in (0,1)")));
    }
    let margin = est.statistic - standard_normal_quantile(1.0 - alpha) * est.std_error;
    Ok(Decision {
        reject_lhv: margin > 0.0,
        margin,
        alpha,
    })
}

/// Estimate plus decision, as emitted on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: BellEstimate,
    pub decision: Decision,
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

pub const CSV_HEADER: [&str; 7] = ["index", "x1", "x2", "y1", "y2", "d1", "d2"];

/// Writes `index,x1,x2,y1,y2,d1,d2` rows; missing spins are empty fields.
pub fn write_dataset_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let spin = |s: Option<Spin>| s.map(|s| s.value().to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.index.to_string(),
            r.x1.to_string(),
            r.x2.to_string(),
            spin(r.y1),
            spin(r.y2),
            u8::from(r.d1).to_string(),
            u8::from(r.d2).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset, enforcing the header, `y_i` present iff `d_i = 1`, and
/// strictly increasing indices.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Dataset(format!(
            "expected header {}, found {}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    let mut last: Option<u64> = None;
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::Dataset(format!("row {}: {what}", line + 1));
        let int = |k: usize| -> Result<i64> {
            row.get(k)
                .ok_or_else(|| bad("missing field"))?
                .trim()
                .parse::<i64>()
                .map_err(|_| bad(&format!("field {} is not an integer", CSV_HEADER[k])))
        };
        let flag = |k: usize| -> Result<bool> {
            match int(k)? {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(bad(&format!("{} must be 0 or 1, got {v}", CSV_HEADER[k]))),
            }
        };
        let spin = |k: usize| -> Result<Option<Spin>> {
            let f = row.get(k).ok_or_else(|| bad("missing field"))?.trim();
            if f.is_empty() {
                Ok(None)
            } else {
                Spin::from_value(int(k)?)
                    .map(Some)
                    .map_err(|e| bad(&e.to_string()))
            }
        };
        let setting = |k: usize| -> Result<Setting> {
            let v = int(k)?;
            u8::try_from(v)
                .ok()
                .and_then(|v| Setting::new(v).ok())
                .ok_or_else(|| bad(&format!("{} = {v} is not a setting", CSV_HEADER[k])))
        };
        let index = u64::try_from(int(0)?).map_err(|_| bad("negative index"))?;
        if last.is_some_and(|l| index <= l) {
            return Err(bad("index is not strictly increasing"));
        }
        last = Some(index);
        let rec = TrialRecord {
            index,
            x1: setting(1)?,
            x2: setting(2)?,
            y1: spin(3)?,
            y2: spin(4)?,
            d1: flag(5)?,
            d2: flag(6)?,
        };
        if rec.y1.is_some() != rec.d1 || rec.y2.is_some() != rec.d2 {
            return Err(bad("spin must be present exactly when detected"));
        }
        out.push(rec);
    }
    Ok(out)
}

/// JSON sidecar written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub config: ExperimentConfig,
    pub angles_degrees: [f64; 3],
    pub n_records: u64,
    pub generator: String,
    pub block_size: u64,
}

impl DatasetMetadata {
    pub fn new(config: &ExperimentConfig, n_records: usize) -> Self {
        DatasetMetadata {
            config: config.clone(),
            angles_degrees: config.angles.degrees(),
            n_records: n_records as u64,
            generator: "splitmix64".into(),
            block_size: BLOCK_SIZE,
        }
    }
}
