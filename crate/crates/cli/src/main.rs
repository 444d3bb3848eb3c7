//! `gram`: dataset generation, training, equivalence verification,
//! benchmarking and dataset statistics.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 verification failure,
//! 3 numerical abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gram::dataset::{io, Dataset, DatasetMetadata, DatasetStats};
use gram::instrument::{speed_report, SpeedReport};
use gram::model::{checkpoint, ParamSet};
use gram::training::{verify_equivalence, Latency, TrainOutcome};
use gram::{train, Mode, Precision, RunConfig, RunReport, Scalar};
use num_rational::Ratio;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gram",
    version,
    about = "Alternating CE/CF training with gradient accumulation"
)]
struct Cli {
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true, env = "GRAM_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config; defaults are used for missing keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and write items.tsv / interactions.tsv.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write report.json, epochs.csv, report.txt and model.ckpt.
    Train {
        #[command(flatten)]
        common: Common,
        /// e2e | gram | no-content | no-finetune
        #[arg(long)]
        mode: Option<Mode>,
        /// 1S | 10S | 0.5E | 1E | N=<int>
        #[arg(long)]
        latency: Option<Latency>,
        /// Re-encode items every step instead of carrying cached targets.
        #[arg(long)]
        recompute_encodings: bool,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long, value_parser = parse_precision)]
        precision: Option<Precision>,
    },
    /// Compare E2E and Single-step GRAM gradients and trajectories.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Train several modes on identical batches and compare their costs.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: e2e, gram[:<latency>][:recompute], no-content, no-finetune
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "e2e,gram:1S,gram:10S,gram:0.5E,gram:1E"
        )]
        modes: Vec<String>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long, value_parser = parse_precision)]
        precision: Option<Precision>,
    },
    /// Print dataset statistics, including the epoch boost ratio.
    Stats {
        /// Dataset directory with items.tsv and interactions.tsv.
        #[arg(required_unless_present = "metadata", conflicts_with = "metadata")]
        dir: Option<PathBuf>,
        /// JSON file with published totals instead of raw files.
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s.to_ascii_lowercase().as_str() {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(format!("unknown precision {other:?} (f32 or f64)")),
    }
}

/// A failed verification, reported with exit code 2.
#[derive(Debug)]
struct VerificationFailed(String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<VerificationFailed>().is_some() {
        return 2;
    }
    match e.chain().find_map(|c| c.downcast_ref::<gram::Error>()) {
        Some(g) if g.is_numerical() => 3,
        _ => 1,
    }
}

fn load_config(common: &Common, output_dir: &Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = load_config(&common, &cli.output_dir)?;
            let ds = cfg.dataset()?;
            io::save(&ds, &out)?;
            println!("{}", stats_json(None, &ds.stats())?);
            Ok(())
        }
        Command::Train {
            common,
            mode,
            latency,
            recompute_encodings,
            max_epochs,
            precision,
        } => {
            let mut cfg = load_config(&common, &cli.output_dir)?;
            if let Some(m) = mode {
                cfg.train.mode = m;
            }
            if let Some(l) = latency {
                cfg.train.latency = l;
            }
            cfg.train.recompute_encodings |= recompute_encodings;
            if let Some(e) = max_epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(p) = precision {
                cfg.precision = p;
            }
            cfg.validate()?;
            let ds = cfg.dataset()?;
            let report = match cfg.precision {
                Precision::F32 => train_and_save::<f32>(&ds, &cfg)?,
                Precision::F64 => train_and_save::<f64>(&ds, &cfg)?,
            };
            print!("{}", report.table());
            Ok(())
        }
        Command::Verify { common, trials } => {
            let mut cfg = load_config(&common, &cli.output_dir)?;
            if let Some(t) = trials {
                cfg.verify.trials = t;
            }
            cfg.validate()?;
            let ds = cfg.dataset()?;
            let report = verify_equivalence(&ds, &cfg.model, &cfg.verify, cfg.seeds().verify)?;
            write_file(
                &cfg.output_dir,
                "verify.json",
                &serde_json::to_string_pretty(&report)?,
            )?;
            let rows = [
                ("trials", report.trials.len().to_string()),
                (
                    "max_ce_grad_rel_err",
                    format!("{:.3e}", report.max_ce_grad_rel_err),
                ),
                (
                    "max_cf_grad_rel_err",
                    format!("{:.3e}", report.max_cf_grad_rel_err),
                ),
                (
                    "max_trajectory_rel_err_sgd",
                    format!("{:.3e}", report.max_trajectory_rel_err_sgd),
                ),
                (
                    "max_trajectory_rel_err_adam",
                    format!("{:.3e}", report.max_trajectory_rel_err_adam),
                ),
                ("grad_tolerance", format!("{:e}", cfg.verify.tolerance)),
                (
                    "trajectory_tolerance",
                    format!("{:e}", cfg.verify.trajectory_tolerance),
                ),
                (
                    "status",
                    if report.grad_ok && report.trajectory_ok {
                        "ok"
                    } else {
                        "FAILED"
                    }
                    .to_string(),
                ),
            ];
            print_rows(&rows);
            if !report.grad_ok {
                bail!(VerificationFailed(format!(
                    "max gradient error {:e} exceeds {:e}",
                    report.max_param_grad_rel_err, cfg.verify.tolerance
                )));
            }
            if !report.trajectory_ok {
                bail!(VerificationFailed(format!(
                    "max trajectory divergence {:e} exceeds {:e}",
                    report.max_trajectory_rel_err, cfg.verify.trajectory_tolerance
                )));
            }
            Ok(())
        }
        Command::Bench {
            common,
            modes,
            max_epochs,
            precision,
        } => {
            let mut cfg = load_config(&common, &cli.output_dir)?;
            if let Some(e) = max_epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(p) = precision {
                cfg.precision = p;
            }
            bench(&cfg, &modes)
        }
        Command::Stats { dir, metadata } => {
            let out = match (dir, metadata) {
                (_, Some(path)) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let meta: DatasetMetadata = serde_json::from_str(&text)
                        .map_err(|e| gram::Error::Config(format!("{}: {e}", path.display())))?;
                    stats_json(meta.name.clone(), &meta.stats())?
                }
                (Some(dir), None) => stats_json(None, &io::load(&dir)?.stats())?,
                (None, None) => unreachable!("clap requires one source"),
            };
            println!("{out}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct StatsOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(flatten)]
    stats: &'a DatasetStats,
    epoch_boost_ratio_exact: String,
}

fn stats_json(name: Option<String>, stats: &DatasetStats) -> Result<String> {
    let exact = if stats.n_items == 0 {
        "undefined".to_string()
    } else {
        Ratio::new(stats.n_interactions, stats.n_items).to_string()
    };
    Ok(serde_json::to_string_pretty(&StatsOut {
        name,
        stats,
        epoch_boost_ratio_exact: exact,
    })?)
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn print_rows(rows: &[(&str, String)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<width$}  {v}");
    }
}

fn train_and_save<T: Scalar>(ds: &Dataset, cfg: &RunConfig) -> Result<RunReport> {
    let TrainOutcome { report, state, .. } = train::<T>(ds, cfg)?;
    report.write_to(&cfg.output_dir)?;
    let mut groups: Vec<(&str, &dyn ParamSet<T>)> = vec![("ce.", &state.ce), ("cf.", &state.cf)];
    if let Some(table) = &state.item_table {
        groups.push(("items.", table));
    }
    checkpoint::save::<T>(&cfg.output_dir.join("model.ckpt"), &groups)?;
    Ok(report)
}

struct BenchMode {
    label: String,
    mode: Mode,
    latency: Option<Latency>,
    recompute: bool,
}

fn parse_bench_mode(spec: &str) -> Result<BenchMode> {
    let mut parts = spec.trim().split(':');
    let mode: Mode = parts.next().unwrap_or_default().parse()?;
    let (mut latency, mut recompute) = (None, false);
    for p in parts {
        if p.eq_ignore_ascii_case("recompute") {
            recompute = true;
        } else {
            latency = Some(p.parse::<Latency>()?);
        }
    }
    if mode != Mode::Gram && (latency.is_some() || recompute) {
        bail!(gram::Error::Config(format!(
            "bench mode {spec:?}: latency and recompute apply to gram only"
        )));
    }
    Ok(BenchMode {
        label: spec.trim().to_string(),
        mode,
        latency,
        recompute,
    })
}

#[derive(Serialize)]
struct BenchRow {
    label: String,
    report: RunReport,
}

fn bench(cfg: &RunConfig, specs: &[String]) -> Result<()> {
    let modes = specs
        .iter()
        .map(|s| parse_bench_mode(s))
        .collect::<Result<Vec<_>>>()?;
    let ds = cfg.dataset()?;
    let mut rows = Vec::with_capacity(modes.len());
    for m in &modes {
        let mut run_cfg = cfg.clone();
        run_cfg.train.mode = m.mode;
        if let Some(l) = m.latency {
            run_cfg.train.latency = l;
        }
        run_cfg.train.recompute_encodings = m.recompute;
        // identical epoch counts keep the call counts comparable
        run_cfg.train.patience = 0;
        run_cfg.validate()?;
        let report = match run_cfg.precision {
            Precision::F32 => train::<f32>(&ds, &run_cfg)?.report,
            Precision::F64 => train::<f64>(&ds, &run_cfg)?.report,
        };
        rows.push(BenchRow {
            label: m.label.clone(),
            report,
        });
    }

    let e2e = rows
        .iter()
        .find(|r| r.report.mode == Mode::E2e)
        .map(|r| r.report.counters.clone());
    let mut speeds: Vec<Option<SpeedReport>> = Vec::with_capacity(rows.len());
    for row in &mut rows {
        let r = &row.report;
        let speed = match (&e2e, r.mode) {
            (Some(e2e), Mode::Gram) => {
                let unique = if r.recompute_encodings {
                    r.windows.batch_unique_items
                } else {
                    r.windows.window_unique_items
                };
                Some(speed_report(
                    e2e,
                    &r.counters,
                    r.windows.interactions,
                    unique,
                    !r.recompute_encodings,
                )?)
            }
            _ => None,
        };
        row.report.speed = speed.clone();
        speeds.push(speed);
    }

    let mut csv = String::from(
        "mode,latency,accumulation_steps,recompute_encodings,epochs,test_auc,test_cs_auc,ce_forward_calls,\
         ce_backward_calls,cf_forward_calls,activation_elements_peak,flop_estimate,wall_clock_ms,\
         measured_call_ratio,theoretical_r,activation_peak_ratio\n",
    );
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
    for (row, speed) in rows.iter().zip(&speeds) {
        let r = &row.report;
        let c = &r.counters;
        let (measured, theory, act) = match speed {
            Some(s) => (
                format!("{}/{}", s.measured_call_ratio.0, s.measured_call_ratio.1),
                format!("{}/{}", s.theoretical_r.0, s.theoretical_r.1),
                format!("{:.4}", s.activation_peak_ratio),
            ),
            None => Default::default(),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.1},{},{},{}\n",
            row.label,
            r.latency.clone().unwrap_or_default(),
            r.accumulation_steps
                .map_or_else(String::new, |n| n.to_string()),
            r.recompute_encodings,
            r.epochs.len(),
            opt(r.test.auc),
            opt(r.test.cs_auc),
            c.ce_forward_calls,
            c.ce_backward_calls,
            c.cf_forward_calls,
            c.activation_elements_peak,
            c.flop_estimate,
            c.wall_clock_ns as f64 / 1e6,
            measured,
            theory,
            act,
        ));
    }
    write_file(&cfg.output_dir, "bench.csv", &csv)?;
    write_file(
        &cfg.output_dir,
        "bench.json",
        &serde_json::to_string_pretty(&rows)?,
    )?;
    print!("{csv}");
    for (row, speed) in rows.iter().zip(&speeds) {
        if let Some(s) = speed {
            println!(
                "{}: measured {}/{} vs R {}/{} ({}), CF phase {:.1} ms, CE phase {:.1} ms",
                row.label,
                s.measured_call_ratio.0,
                s.measured_call_ratio.1,
                s.theoretical_r.0,
                s.theoretical_r.1,
                if s.agrees { "agrees" } else { "differs" },
                s.gram_cf_phase_ns as f64 / 1e6,
                s.gram_ce_phase_ns as f64 / 1e6,
            );
        }
    }
    Ok(())
}
