//! `aoi`: run scenario suites, ablations and parameter sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aoi_core::config::{Ablation, EngineConfig, SummarizerKind, SweepParam};
use aoi_core::engine::{summarizer_for, Engine, RunOutput};
use aoi_core::metrics::{aggregate, render_table, MetricsReport, RunRecord, ScalingProfile};
use aoi_core::simenv::corpus::{bundled_fixtures, write_fixtures};
use aoi_core::simenv::scenario::{bundled_corpus, load_dir, write_corpus};
use aoi_core::simenv::ScenarioSpec;
use aoi_core::AoiError;
use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "aoi", version, about = "Multi-agent incident remediation on a simulated infrastructure")]
struct Cli {
    /// Directory of scenario JSON files; the bundled corpus when omitted.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Comma-separated run seeds (overrides the config file).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Engine configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path (JSON); a plain-text table is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scenario runs in parallel; defaults to the host's parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Run the five ablation configurations.
    #[arg(long, conflicts_with = "sweep")]
    ablate: bool,
    /// Sweep one parameter: window_size, lambda or retention.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated sweep values (default: the parameter's grid).
    #[arg(long, value_delimiter = ',', requires = "sweep")]
    values: Option<Vec<f64>>,
    /// extractive or remote.
    #[arg(long)]
    summarizer: Option<String>,
    /// Maximum environment steps per run.
    #[arg(long)]
    step_budget: Option<u64>,
    /// Concurrency for the scalability index; 0 skips it.
    #[arg(long, default_value_t = 20)]
    scaling: usize,
    /// Write the bundled scenario corpus and log fixtures under this directory, then exit.
    #[arg(long)]
    emit_corpus: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
}

impl From<AoiError> for CliError {
    fn from(e: AoiError) -> Self {
        match e {
            AoiError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    config: &'a EngineConfig,
    scenarios: usize,
    report: &'a MetricsReport,
}

#[derive(Serialize)]
struct AblationRow<'a> {
    ablation: Ablation,
    label: &'static str,
    report: &'a MetricsReport,
}

#[derive(Serialize)]
struct SweepPoint<'a> {
    value: f64,
    report: &'a MetricsReport,
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum Report<'a> {
    Run(RunReport<'a>),
    Ablate { config: &'a EngineConfig, scenarios: usize, rows: Vec<AblationRow<'a>> },
    Sweep { config: &'a EngineConfig, scenarios: usize, parameter: SweepParam, points: Vec<SweepPoint<'a>> },
}

struct Suite {
    specs: Vec<ScenarioSpec>,
    pool: rayon::ThreadPool,
    errors: Vec<String>,
}

impl Suite {
    /// Every scenario under every seed, results in input order.
    fn run(&mut self, engine: &Engine, seeds: &[u64]) -> Vec<RunRecord> {
        let jobs: Vec<(&ScenarioSpec, u64)> = self.specs.iter().flat_map(|s| seeds.iter().map(move |seed| (s, *seed))).collect();
        let outputs: Vec<(String, u64, aoi_core::Result<RunOutput>)> = self.pool.install(|| {
            jobs.par_iter().map(|(s, seed)| (s.scenario_id.clone(), *seed, engine.run(s, *seed))).collect()
        });
        let mut records = Vec::with_capacity(outputs.len());
        for (id, seed, out) in outputs {
            match out {
                Ok(o) => records.push(o.record),
                Err(e) => {
                    let msg = format!("run {id} seed {seed}: {e}");
                    eprintln!("error: {msg}");
                    self.errors.push(msg);
                }
            }
        }
        records
    }

    fn report(&mut self, config: &EngineConfig, engine: &Engine, scaling: usize) -> Result<MetricsReport, CliError> {
        let records = self.run(engine, &config.seeds);
        let profile = if scaling > 1 && !records.is_empty() {
            let loaded = self.run(&engine.clone().with_concurrency(scaling), &config.seeds);
            let tsr = |r: &[RunRecord]| r.iter().filter(|x| x.success).count() as f64 / r.len().max(1) as f64;
            Some(ScalingProfile { concurrency: scaling, tsr_single: tsr(&records), tsr_concurrent: tsr(&loaded) })
        } else {
            None
        };
        Ok(aggregate(&records, profile)?)
    }
}

fn load_config(cli: &Cli) -> Result<EngineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(s) = &cli.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(s) = &cli.summarizer {
        cfg.summarizer = s.parse::<SummarizerKind>()?;
    }
    if let Some(b) = cli.step_budget {
        cfg.step_budget = b;
    }
    cfg.check()?;
    Ok(cfg)
}

fn engine(cfg: &EngineConfig) -> Result<Engine, CliError> {
    Ok(Engine::new(cfg.clone(), summarizer_for(cfg)?)?)
}

fn check_out(out: &Path) -> Result<(), CliError> {
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::Run(format!("output directory {} does not exist", parent.display())));
    }
    if out.is_dir() {
        return Err(CliError::Run(format!("output path {} is a directory", out.display())));
    }
    Ok(())
}

/// Writes via a temporary file so a failure leaves no partial report.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, contents)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            CliError::Run(format!("cannot write {}: {e}", path.display()))
        })
}

fn emit_corpus(dir: &Path) -> Result<(), CliError> {
    let scenarios = dir.join("scenarios");
    let fixtures = dir.join("fixtures").join("logs");
    for d in [&scenarios, &fixtures] {
        std::fs::create_dir_all(d).map_err(|e| CliError::Run(format!("{}: {e}", d.display())))?;
    }
    let n = write_corpus(&scenarios)?;
    let m = write_fixtures(&fixtures, &bundled_fixtures()?)?;
    println!("wrote {n} scenarios to {} and {m} fixtures to {}", scenarios.display(), fixtures.display());
    Ok(())
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    if let Some(dir) = &cli.emit_corpus {
        emit_corpus(dir)?;
        return Ok(true);
    }
    let cfg = load_config(cli)?;
    let sweep = cli.sweep.as_deref().map(str::parse::<SweepParam>).transpose()?;
    let sweep_values = match sweep {
        Some(p) => {
            let values = cli.values.clone().unwrap_or_else(|| p.default_values());
            let configs = values.iter().map(|v| p.apply(&cfg, *v).map(|c| (*v, c))).collect::<aoi_core::Result<Vec<_>>>()?;
            Some((p, configs))
        }
        None => None,
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("report.json"));
    check_out(&out)?;

    let (specs, bad) = match &cli.scenarios {
        Some(dir) => load_dir(dir)?,
        None => (bundled_corpus(), Vec::new()),
    };
    let mut errors: Vec<String> = bad.iter().map(|(p, e)| format!("skipped {}: {e}", p.display())).collect();
    for e in &errors {
        eprintln!("error: {e}");
    }
    if specs.is_empty() {
        return Err(CliError::Run("no scenarios to run".into()));
    }
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let mut suite = Suite { specs, pool, errors: Vec::new() };
    let n = suite.specs.len();

    let (json, table) = if cli.ablate {
        let mut reports = Vec::new();
        for a in Ablation::ALL {
            let c = cfg.clone().with_ablation(a);
            reports.push((a, suite.report(&c, &engine(&c)?, cli.scaling)?));
        }
        let rows: Vec<AblationRow> = reports.iter().map(|(a, r)| AblationRow { ablation: *a, label: a.label(), report: r }).collect();
        let table = render_table(&reports.iter().map(|(a, r)| (a.label().to_string(), r)).collect::<Vec<_>>());
        (serde_json::to_string_pretty(&Report::Ablate { config: &cfg, scenarios: n, rows }), table)
    } else if let Some((param, configs)) = sweep_values {
        let mut reports = Vec::new();
        for (v, c) in &configs {
            reports.push((*v, suite.report(c, &engine(c)?, cli.scaling)?));
        }
        let points: Vec<SweepPoint> = reports.iter().map(|(v, r)| SweepPoint { value: *v, report: r }).collect();
        let label = |v: f64| format!("{} = {v}", cli.sweep.as_deref().unwrap_or_default());
        let table = render_table(&reports.iter().map(|(v, r)| (label(*v), r)).collect::<Vec<_>>());
        (serde_json::to_string_pretty(&Report::Sweep { config: &cfg, scenarios: n, parameter: param, points }), table)
    } else {
        let report = suite.report(&cfg, &engine(&cfg)?, cli.scaling)?;
        let table = render_table(&[("AOI".to_string(), &report)]);
        (serde_json::to_string_pretty(&Report::Run(RunReport { config: &cfg, scenarios: n, report: &report })), table)
    };
    let json = json.map_err(|e| CliError::Run(format!("report serialization: {e}")))?;
    errors.append(&mut suite.errors);
    write_atomic(&out, &(json + "\n"))?;
    write_atomic(&out.with_extension("txt"), &table)?;
    print!("{table}");
    Ok(errors.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
