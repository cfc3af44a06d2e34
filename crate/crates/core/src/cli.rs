//! Command-line front end: `run`, `sweep` and `validate`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{build_drop, load_config, RunConfig, SCHEMA_VERSION};
use crate::error::{FbError, Result};
use crate::metrics::{dedup_iterations, mean, percentile, sweep_iterations, SweepRow};
use crate::protocol::{run, FbTrace, Scenario, Strategy};

#[derive(Debug, Parser)]
#[command(name = "fbtrain", version, about = "Forward-backward beamformer training simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured strategy for `scenario.iterations` rounds.
    Run(RunArgs),
    /// Effective throughput versus number of rounds.
    Sweep(SweepArgs),
    /// Check a config without simulating.
    Validate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set scenario.iterations=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub drops: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated `T` values; defaults to the config's `t_values`.
    #[arg(long, value_delimiter = ',')]
    pub t: Vec<usize>,
}

pub fn main_with(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(&args).map(|_| ()),
        Command::Sweep(args) => cmd_sweep(&args).map(|_| ()),
        Command::Validate(args) => cmd_validate(&args),
    }
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&args.common.config, &args.common.overrides)?;
    if let Some(d) = args.drops {
        cfg.drops = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_validate(args: &CommonArgs) -> Result<()> {
    let cfg = load_config(&args.config, &args.overrides)?;
    cfg.validate()?;
    info!("{} is valid", args.config.display());
    Ok(())
}

/// Result of one drop across all strategies (baseline first).
#[derive(Debug)]
pub struct DropOutcome {
    pub index: usize,
    pub result: Result<DropTraces>,
}

#[derive(Debug)]
pub struct DropTraces {
    pub baseline_rate: f64,
    pub traces: Vec<FbTrace>,
}

/// Runs `strategies` for `iterations` rounds on every drop. Drops are spread
/// over `config.workers` threads; the output is ordered by drop index.
pub fn simulate(config: &RunConfig, strategies: &[Strategy], iterations: usize) -> Result<Vec<DropOutcome>> {
    let base = config.topology.build()?;
    let one = |index: usize| -> Result<DropTraces> {
        let setup = build_drop(config, &base, index)?;
        let baseline = run(
            &Scenario { strategy: Strategy::Uncoordinated, iterations: 0, ..config.scenario.clone() },
            setup.input(),
        )?;
        let traces = strategies
            .iter()
            .map(|&s| run(&Scenario { iterations, ..config.scenario_for(s) }, setup.input()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DropTraces { baseline_rate: baseline.points[0].sum_rate, traces })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| FbError::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    let outcomes = pool.install(|| {
        (0..config.drops)
            .into_par_iter()
            .map(|index| DropOutcome { index, result: one(index) })
            .collect::<Vec<_>>()
    });
    for o in &outcomes {
        if let Err(e) = &o.result {
            warn!("drop {} failed: {e}", o.index);
        }
    }
    Ok(outcomes)
}

#[derive(Debug, Serialize)]
struct TraceRow<'a> {
    strategy: &'a str,
    drop: usize,
    iteration: usize,
    sum_rate: f64,
    eff_throughput: f64,
    pilots: usize,
    objective: f64,
}

#[derive(Debug, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub label: String,
    pub gamma_per_round: f64,
    pub pilots_per_round: usize,
    pub mean_sum_rate: Vec<f64>,
    pub p5_sum_rate: Vec<f64>,
    pub p95_sum_rate: Vec<f64>,
    pub mean_eff_throughput: Vec<f64>,
    /// Mean final sum rate over mean uncoordinated sum rate, minus one.
    pub gain_over_uncoordinated: f64,
}

#[derive(Debug, Serialize)]
pub struct FailedDrop {
    pub drop: usize,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config: RunConfig,
    pub completed_drops: usize,
    pub failed_drops: Vec<FailedDrop>,
    pub uncoordinated_mean_sum_rate: f64,
    pub strategies: Vec<StrategySummary>,
}

pub fn summarize(config: &RunConfig, outcomes: &[DropOutcome]) -> RunSummary {
    let ok: Vec<&DropTraces> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    let failed_drops = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().err().map(|e| FailedDrop { drop: o.index, error: e.to_string() }))
        .collect();
    let baseline = mean(&ok.iter().map(|d| d.baseline_rate).collect::<Vec<_>>());
    let strategies = config
        .strategies
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let scenario = config.scenario_for(s);
            let len = ok.first().map_or(0, |d| d.traces[i].points.len());
            let column = |t: usize, f: fn(&crate::protocol::TracePoint) -> f64| -> Vec<f64> {
                ok.iter().map(|d| f(&d.traces[i].points[t])).collect()
            };
            let rates: Vec<Vec<f64>> = (0..len).map(|t| column(t, |p| p.sum_rate)).collect();
            let eff: Vec<Vec<f64>> = (0..len).map(|t| column(t, |p| p.eff_throughput)).collect();
            let final_mean = rates.last().map_or(f64::NAN, |r| mean(r));
            StrategySummary {
                strategy: s,
                label: s.label().to_string(),
                gamma_per_round: scenario.round_gamma(),
                pilots_per_round: scenario.pilots_per_round(config.num_streams()),
                mean_sum_rate: rates.iter().map(|r| mean(r)).collect(),
                p5_sum_rate: rates.iter().map(|r| percentile(r, 5.0)).collect(),
                p95_sum_rate: rates.iter().map(|r| percentile(r, 95.0)).collect(),
                mean_eff_throughput: eff.iter().map(|r| mean(r)).collect(),
                gain_over_uncoordinated: final_mean / baseline - 1.0,
            }
        })
        .collect();
    RunSummary {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        completed_drops: ok.len(),
        failed_drops,
        uncoordinated_mean_sum_rate: baseline,
        strategies,
    }
}

pub fn write_trace_csv(path: &Path, config: &RunConfig, outcomes: &[DropOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for o in outcomes {
        let Ok(d) = &o.result else { continue };
        for (trace, &s) in d.traces.iter().zip(&config.strategies) {
            for p in &trace.points {
                w.serialize(TraceRow {
                    strategy: s.label(),
                    drop: o.index,
                    iteration: p.iteration,
                    sum_rate: p.sum_rate,
                    eff_throughput: p.eff_throughput,
                    pilots: p.pilots,
                    objective: p.objective,
                })
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> FbError {
    FbError::Io(std::io::Error::other(e))
}

pub struct RunOutput {
    pub trace_csv: PathBuf,
    pub summary_json: PathBuf,
    pub summary: RunSummary,
}

pub fn cmd_run(args: &RunArgs) -> Result<RunOutput> {
    let cfg = load(args)?;
    fs::create_dir_all(&args.out)?;
    let outcomes = simulate(&cfg, &cfg.strategies, cfg.scenario.iterations)?;
    let trace_csv = args.out.join("trace.csv");
    write_trace_csv(&trace_csv, &cfg, &outcomes)?;
    let summary = summarize(&cfg, &outcomes);
    let summary_json = args.out.join("summary.json");
    fs::write(&summary_json, serde_json::to_string_pretty(&summary)?)?;
    info!("wrote {} and {}", trace_csv.display(), summary_json.display());
    Ok(RunOutput { trace_csv, summary_json, summary })
}

#[derive(Debug, Serialize)]
struct SweepCsvRow<'a> {
    strategy: &'a str,
    #[serde(rename = "T")]
    t: usize,
    gamma: f64,
    total_overhead: f64,
    mean_r: f64,
    mean_eff_tput: f64,
    p5: f64,
    p95: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub t_values: Vec<usize>,
    pub completed_drops: usize,
    pub failed_drops: Vec<FailedDrop>,
    pub curves: Vec<SweepCurveSummary>,
}

#[derive(Debug, Serialize)]
pub struct SweepCurveSummary {
    pub strategy: Strategy,
    pub label: String,
    pub best_t: usize,
    pub best_total_overhead: f64,
    pub best_mean_eff_tput: f64,
    pub rows: Vec<SweepRow>,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepSummary> {
    let cfg = load(&args.run)?;
    let requested = if args.t.is_empty() { cfg.t_values.clone() } else { args.t.clone() };
    if requested.is_empty() {
        return Err(FbError::Config("sweep needs T values (--t or t_values)".into()));
    }
    let (t_values, dup) = dedup_iterations(&requested);
    if dup {
        warn!("duplicate T values removed; sweeping {t_values:?}");
    }
    let t_max = *t_values.last().unwrap();
    fs::create_dir_all(&args.run.out)?;
    let outcomes = simulate(&cfg, &cfg.strategies, t_max)?;
    let ok: Vec<&DropTraces> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(FbError::InvalidState("every drop failed".into()));
    }
    let mut w = csv::Writer::from_path(args.run.out.join("sweep.csv")).map_err(csv_err)?;
    let mut curves = Vec::new();
    for (i, &s) in cfg.strategies.iter().enumerate() {
        let traces: Vec<FbTrace> = ok.iter().map(|d| d.traces[i].clone()).collect();
        let gamma = cfg.scenario_for(s).round_gamma();
        let curve = sweep_iterations(&traces, &t_values, gamma)?;
        for r in &curve.rows {
            w.serialize(SweepCsvRow {
                strategy: s.label(),
                t: r.t,
                gamma: r.gamma,
                total_overhead: r.total_overhead,
                mean_r: r.mean_rate,
                mean_eff_tput: r.mean_eff_tput,
                p5: r.p5,
                p95: r.p95,
            })
            .map_err(csv_err)?;
        }
        let best = curve.best();
        curves.push(SweepCurveSummary {
            strategy: s,
            label: s.label().to_string(),
            best_t: best.t,
            best_total_overhead: best.total_overhead,
            best_mean_eff_tput: best.mean_eff_tput,
            rows: curve.rows.clone(),
        });
    }
    w.flush()?;
    let summary = SweepSummary {
        schema_version: SCHEMA_VERSION,
        t_values,
        completed_drops: ok.len(),
        failed_drops: outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| FailedDrop { drop: o.index, error: e.to_string() }))
            .collect(),
        curves,
    };
    fs::write(args.run.out.join("sweep_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
