use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use causal_bell::counterfactuals::{
    lhv_max_bell_statistic_over, theorem1_contradiction_trace, violation_margin, Branch,
    TableFilter,
};
use causal_bell::experiment::{
    self, decide, estimate, run_experiment_with, Conditioning, DatasetMetadata, ExperimentConfig,
    SettingDistribution, SourceSpec, TrialRecord,
};
use causal_bell::lhv_models::{stochastic_bell_supremum, LhvModelFile};
use causal_bell::loophole::{efficiency_report, solve_faking, FakingProblem, LpSolution};
use causal_bell::quantum_model::{match_table, AngleTriple, MatchProbabilityTable};
use causal_bell::{Execution, SettingPair};
use serde_json::json;

use crate::output::{Format, Output};
use crate::row;
use crate::{
    BranchArg, Cli, Command, ConditioningArg, FilterArg, LoopholeArgs, SettingsArg, SimulateArgs,
    SourceArg, TestArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] causal_bell::Error),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Usage(String),
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Runs a parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> CliResult<u8> {
    let format = cli.format;
    let (out, code) = match cli.command {
        Command::Correlations(a) => (correlations(a.angles), 0),
        Command::LhvMax { filter } => (lhv_max(filter), 0),
        Command::TraceProof { branch } => (trace_proof(branch), 0),
        Command::StochasticSup { grid_steps } => (stochastic_sup(grid_steps)?, 0),
        Command::Loophole(args) => (loophole(&args)?, 0),
        Command::Test(args) => test(&args)?,
        Command::Simulate(args) => return simulate(&args, format).map(|()| 0),
    };
    echo_config(&out.json["config"]);
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    out.write(format.unwrap_or(Format::Text), &mut lock)?;
    lock.flush()?;
    Ok(code)
}

fn echo_config(config: &serde_json::Value) {
    eprintln!("config: {config}");
}

/// Formats a float with at most 12 decimals, without trailing zeros.
fn num(x: f64) -> String {
    let s = format!("{:.12}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn table_text(t: &MatchProbabilityTable) -> String {
    let mut s = String::from("        x2=0      x2=1      x2=2\n");
    for (i, r) in t.p.iter().enumerate() {
        s.push_str(&format!(
            "x1={i} {:>9.6} {:>9.6} {:>9.6}\n",
            r[0], r[1], r[2]
        ));
    }
    s
}

fn correlations(deg: [f64; 3]) -> Output {
    let angles = AngleTriple::from_degrees(deg);
    let table = match_table(&angles);
    let margin = violation_margin(&angles);
    let doc = json!({
        "config": { "angles_degrees": deg },
        "match_probability": table.p,
        "bell_statistic": table.bell_statistic(),
        "violation_margin": margin,
    });
    let text = format!(
        "match probabilities for angles {}:\n{}violation margin: {}\n",
        deg.map(num).join(","),
        table_text(&table),
        num(margin)
    );
    let mut csv = vec![row!["quantity", "x1", "x2", "value"]];
    for pair in SettingPair::all() {
        csv.push(row![
            &"match_probability",
            &pair.x1,
            &pair.x2,
            &num(table.get(pair))
        ]);
    }
    csv.push(row![&"violation_margin", &"", &"", &num(margin)]);
    Output::new(&doc, text, csv)
}

fn lhv_max(filter: FilterArg) -> Output {
    let (f, name) = match filter {
        FilterArg::All => (TableFilter::All, "all"),
        FilterArg::AntiCorrelatedDiagonal => (
            TableFilter::AntiCorrelatedDiagonal,
            "anti-correlated-diagonal",
        ),
        FilterArg::EqualSpins => (TableFilter::EqualSpins, "equal-spins"),
        FilterArg::AllSpinsEqual => (TableFilter::AllSpinsEqual, "all-spins-equal"),
    };
    let (max, table) = lhv_max_bell_statistic_over(f);
    let doc = json!({
        "config": { "filter": name },
        "max_bell_statistic": max,
        "argmax_table": table,
        "argmax_index": table.index(),
    });
    let text = format!(
        "{}\nattained by table {} {table}\n",
        num(max),
        table.index()
    );
    let csv = vec![
        row!["filter", "max_bell_statistic", "argmax_index"],
        row![&name, &num(max), &table.index()],
    ];
    Output::new(&doc, text, csv)
}

fn trace_proof(branch: Option<BranchArg>) -> Output {
    let branches: Vec<Branch> = match branch {
        None => Branch::BOTH.to_vec(),
        Some(BranchArg::A) => vec![Branch::A],
        Some(BranchArg::B) => vec![Branch::B],
    };
    let traces: Vec<_> = branches
        .iter()
        .map(|&b| theorem1_contradiction_trace(b))
        .collect();
    let labels: Vec<String> = branches.iter().map(|b| b.label().to_string()).collect();
    let doc = json!({ "config": { "branches": labels }, "traces": traces });
    let text = traces
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n");
    let mut csv = vec![row!["branch", "step", "kind", "statement", "justification"]];
    for t in &traces {
        for (n, step) in t.steps.iter().enumerate() {
            let stmt: Vec<String> = step.statement.iter().map(ToString::to_string).collect();
            csv.push(row![
                &t.branch.label(),
                &(n + 1),
                &format!("{:?}", step.kind).to_lowercase(),
                &stmt.join("; "),
                &step.justification,
            ]);
        }
    }
    Output::new(&doc, text, csv)
}

fn stochastic_sup(grid_steps: usize) -> CliResult<Output> {
    let s = stochastic_bell_supremum(grid_steps)?;
    let doc = json!({ "config": { "grid_steps": grid_steps }, "supremum": s });
    let text = format!(
        "{}\ngrid points: {}\nargmax p1={:?} p2={:?} (vertex: {})\nvertex maximum: {}\n",
        num(s.max),
        s.points,
        &s.argmax[..3],
        &s.argmax[3..],
        s.argmax_is_vertex,
        num(s.vertex_max)
    );
    let csv = vec![
        row![
            "grid_steps",
            "points",
            "max",
            "vertex_max",
            "argmax_is_vertex"
        ],
        row![
            &grid_steps,
            &s.points,
            &num(s.max),
            &num(s.vertex_max),
            &s.argmax_is_vertex
        ],
    ];
    Ok(Output::new(&doc, text, csv))
}

fn solve_loophole(angles: [f64; 3], floor: f64) -> CliResult<LpSolution> {
    let targets = match_table(&AngleTriple::from_degrees(angles));
    Ok(solve_faking(&FakingProblem::new(targets, floor)?)?)
}

fn statistic_of(grid: &[[Option<f64>; 3]; 3]) -> Option<f64> {
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(SettingPair::statistic_pairs()) {
        *slot = grid[p.x1.index()][p.x2.index()]?;
    }
    Some(v[0] - v[1] - v[2] - v[3])
}

fn loophole(args: &LoopholeArgs) -> CliResult<Output> {
    let angles = args.angles;
    if args.max_efficiency {
        let targets = match_table(&AngleTriple::from_degrees(angles));
        let r = efficiency_report(&targets)?;
        let doc = json!({
            "config": { "angles_degrees": angles, "max_efficiency": true },
            "max_efficiency": r.bisection,
            "report": r,
        });
        let text = format!(
            "{}\nbisection {} over {} LP solves; direct optimum {}\n",
            num(r.bisection),
            num(r.bisection),
            r.bisection_steps,
            num(r.direct)
        );
        let csv = vec![
            row!["max_efficiency", "direct", "bisection_steps"],
            row![&num(r.bisection), &num(r.direct), &r.bisection_steps],
        ];
        return Ok(Output::new(&doc, text, csv));
    }
    let floor = args.floor.unwrap_or(0.0);
    let sol = solve_loophole(angles, floor)?;
    let coincident_statistic = statistic_of(&sol.rescore().conditional_match());
    let all_pairs = sol.is_feasible().then(|| {
        sol.imputed_match_table([experiment::FILL_SPIN; 2])
            .bell_statistic()
    });
    let doc = json!({
        "config": { "angles_degrees": angles, "floor": floor },
        "solution": sol,
        "coincident_statistic": coincident_statistic,
        "all_pairs_statistic": all_pairs,
    });
    let mut text = format!("status: {:?}\n", sol.status).to_lowercase();
    if sol.is_feasible() {
        text.push_str(&format!(
            "min coincidence rate: {}\nsupport: {} strategies\ncoincidence-conditioned statistic: {}\nall-pairs statistic (missing spins read as {}): {}\n",
            num(sol.min_coincidence()),
            sol.weights.len(),
            coincident_statistic.map(num).unwrap_or_else(|| "undefined".into()),
            experiment::FILL_SPIN,
            all_pairs.map(num).unwrap_or_default(),
        ));
    }
    let mut csv = vec![row!["strategy", "weight"]];
    for w in &sol.weights {
        csv.push(row![&w.index, &num(w.weight)]);
    }
    Ok(Output::new(&doc, text, csv))
}

fn read_model(path: &Path) -> CliResult<LhvModelFile> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let file: LhvModelFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    // Validate eagerly so a bad file is reported before generation.
    file.clone().into_model()?;
    Ok(file)
}

fn source_spec(args: &SimulateArgs) -> CliResult<SourceSpec> {
    let model = || {
        args.model
            .as_deref()
            .ok_or_else(|| CliError::Usage("--model is required for lhv sources".into()))
            .and_then(read_model)
    };
    Ok(match args.source {
        SourceArg::Quantum => SourceSpec::Quantum,
        SourceArg::DeterministicLhv => SourceSpec::DeterministicLhv { model: model()? },
        SourceArg::StochasticLhv => SourceSpec::StochasticLhv { model: model()? },
        SourceArg::Loophole => {
            let solution = solve_loophole(args.angles, args.floor)?;
            if !solution.is_feasible() {
                return Err(CliError::Usage(format!(
                    "the faking LP is infeasible at floor {}",
                    args.floor
                )));
            }
            SourceSpec::Loophole { solution }
        }
    })
}

fn generate(config: &ExperimentConfig, workers: Option<usize>) -> CliResult<Vec<TrialRecord>> {
    match workers {
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(1) => Ok(run_experiment_with(config, Execution::Sequential)?),
        #[cfg(feature = "parallel")]
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            Ok(pool.install(|| run_experiment_with(config, Execution::Parallel))?)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(run_experiment_with(config, Execution::Sequential)?),
        None => Ok(run_experiment_with(config, Execution::default())?),
    }
}

fn metadata_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn simulate(args: &SimulateArgs, format: Option<Format>) -> CliResult<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => {
            let s = rand::random::<u64>();
            eprintln!("seed: {s} (generated)");
            s
        }
    };
    let config = ExperimentConfig {
        n_trials: args.n,
        angles: AngleTriple::from_degrees(args.angles),
        source: source_spec(args)?,
        seed,
        setting_distribution: match args.settings {
            SettingsArg::Uniform9 => SettingDistribution::Uniform9,
            SettingsArg::Uniform4 => SettingDistribution::Uniform4,
        },
    };
    let echo = json!({
        "source": config.source.name(),
        "angles_degrees": args.angles,
        "n_trials": config.n_trials,
        "seed": seed,
        "setting_distribution": config.setting_distribution,
        "floor": matches!(args.source, SourceArg::Loophole).then_some(args.floor),
        "model": args.model,
        "workers": args.workers,
        "out": args.out,
    });
    echo_config(&echo);
    let records = generate(&config, args.workers)?;
    let meta = DatasetMetadata::new(&config, records.len());
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match &args.out {
        Some(path) => {
            let file = File::create(path).map_err(|source| CliError::File {
                path: path.clone(),
                source,
            })?;
            experiment::write_dataset_csv(&records, BufWriter::new(file))?;
            let meta_path = metadata_path(path);
            let file = File::create(&meta_path).map_err(|source| CliError::File {
                path: meta_path.clone(),
                source,
            })?;
            serde_json::to_writer_pretty(BufWriter::new(file), &meta)
                .map_err(causal_bell::Error::from)?;
            let coincidences = records.iter().filter(|r| r.coincident()).count();
            let doc = json!({
                "config": echo,
                "records": records.len(),
                "coincidences": coincidences,
                "dataset": path,
                "metadata": meta_path,
            });
            let text = format!(
                "wrote {} trials ({} coincidences) to {}\nmetadata: {}\n",
                records.len(),
                coincidences,
                path.display(),
                meta_path.display()
            );
            let csv = vec![
                row!["dataset", "metadata", "records", "coincidences"],
                row![
                    &path.display(),
                    &meta_path.display(),
                    &records.len(),
                    &coincidences
                ],
            ];
            Output::new(&doc, text, csv).write(format.unwrap_or(Format::Text), &mut lock)?;
        }
        None => match format {
            Some(Format::Json) => {
                let doc = json!({ "config": echo, "metadata": meta, "records": records });
                serde_json::to_writer(&mut lock, &doc).map_err(causal_bell::Error::from)?;
                writeln!(lock)?;
            }
            _ => experiment::write_dataset_csv(&records, &mut lock)?,
        },
    }
    lock.flush()?;
    Ok(())
}

fn test(args: &TestArgs) -> CliResult<(Output, u8)> {
    let conditioning = match args.conditioning {
        ConditioningArg::AllPairs => Conditioning::AllPairs,
        ConditioningArg::CoincidencesOnly => Conditioning::CoincidencesOnly,
    };
    let records = match &args.input {
        Some(path) => {
            let file = File::open(path).map_err(|source| CliError::File {
                path: path.clone(),
                source,
            })?;
            experiment::read_dataset_csv(BufReader::new(file))?
        }
        None => {
            let mut buf = Vec::new();
            io::stdin().lock().read_to_end(&mut buf)?;
            experiment::read_dataset_csv(&buf[..])?
        }
    };
    let est = estimate(&records, conditioning, args.confidence)?;
    let decision = decide(&est, args.alpha)?;
    let doc = json!({
        "config": {
            "alpha": args.alpha,
            "conditioning": conditioning,
            "confidence": args.confidence,
            "input": args.input,
            "records": records.len(),
        },
        "estimate": est,
        "decision": decision,
    });
    let verdict = if decision.reject_lhv {
        "reject"
    } else {
        "retain"
    };
    let text = format!(
        "statistic: {}\nstandard error: {}\n{}% interval: [{}, {}]\ncoincidence rate: {}\none-sided {}% lower bound: {}\ndecision: {verdict} local hidden variables\n",
        num(est.statistic),
        num(est.std_error),
        num(args.confidence * 100.0),
        num(est.ci_low),
        num(est.ci_high),
        num(est.coincidence_rate()),
        num((1.0 - args.alpha) * 100.0),
        num(decision.margin),
    );
    let csv = vec![
        row![
            "statistic",
            "std_error",
            "ci_low",
            "ci_high",
            "margin",
            "decision"
        ],
        row![
            &num(est.statistic),
            &num(est.std_error),
            &num(est.ci_low),
            &num(est.ci_high),
            &num(decision.margin),
            &verdict,
        ],
    ];
    Ok((
        Output::new(&doc, text, csv),
        if decision.reject_lhv { 0 } else { 1 },
    ))
}
