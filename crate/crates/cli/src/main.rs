//! `pats` — train and compare noisy fine-tuning optimizers on desk-scale
//! synthetic tasks.
//!
//! Typical flow:
//!
//! ```text
//! pats pretrain run.toml --out ckpt.json
//! pats train run.toml --checkpoint ckpt.json --optimizer pats --out-dir runs/
//! pats sweep run.toml --checkpoint ckpt.json --fractions 0.1,0.25,0.5,1.0 --out-dir sweep/
//! pats analyze runs/*.summary.json --out report.json
//! ```
//!
//! Exit codes: 0 on success (a diverged run is a recorded outcome, not a
//! failure), 2 for configuration/usage errors, 3 for I/O and checkpoint
//! errors.

mod runfile;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use pats::checkpoint::{atomic_write, Checkpoint};
use pats::harness::{
    self, data_fraction_sweep, pretrain_then_snapshot, train_run, FractionSummary, MetricsRecord,
    RunSpec, RunStatus, SweepRow,
};
use pats::optim::OptimizerKind;
use pats::{Error, Result};

use runfile::Resolved;

#[derive(Parser)]
#[command(
    name = "pats",
    version,
    about = "Sensitivity-scaled noisy fine-tuning, desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain on the source task and write a checkpoint.
    Pretrain {
        /// TOML run file.
        run_file: PathBuf,
        /// Checkpoint path to write.
        #[arg(long, default_value = "checkpoint.json")]
        out: PathBuf,
    },
    /// Fine-tune on the shifted target task and write metrics.
    Train {
        /// TOML run file.
        run_file: PathBuf,
        /// Start from this checkpoint (omit to train from random init).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override the run file's optimizer (standard | pats | noisy_tune | sage_style).
        #[arg(long)]
        optimizer: Option<OptimizerKind>,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the training-data fraction (0, 1].
        #[arg(long)]
        fraction: Option<f64>,
        /// Directory for <run_id>.summary.json and <run_id>.metrics.jsonl.
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Run optimizers x data fractions x seeds and write a comparison CSV.
    Sweep {
        /// TOML run file.
        run_file: PathBuf,
        /// Start every run from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated optimizers to compare.
        #[arg(long, default_value = "standard,pats")]
        optimizers: String,
        /// Comma-separated run seeds.
        #[arg(long, default_value = "1,2,3,4,5")]
        seeds: String,
        /// Comma-separated training-data fractions.
        #[arg(long, default_value = "1.0")]
        fractions: String,
        /// Worker threads (results are identical for any worker count).
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Directory for sweep.csv, sweep_summary.json and per-run summaries.
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Aggregate run summaries into a per-optimizer comparison report.
    Analyze {
        /// Paths of *.summary.json files from `train` or `sweep`.
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resolve a run file (defaults + preset) and print the full config.
    PrintConfig {
        /// TOML run file.
        run_file: PathBuf,
    },
    /// Print the hyperparameter search grid as TOML.
    PrintGrid,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(exit_code(&err));
    }
}

/// 3 for filesystem and checkpoint integrity errors, 2 for everything a
/// run file or command line can get wrong.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Checkpoint(_) => 3,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { run_file, out } => cmd_pretrain(&run_file, &out),
        Command::Train {
            run_file,
            checkpoint,
            optimizer,
            seed,
            fraction,
            out_dir,
        } => cmd_train(
            &run_file,
            checkpoint.as_deref(),
            optimizer,
            seed,
            fraction,
            &out_dir,
        ),
        Command::Sweep {
            run_file,
            checkpoint,
            optimizers,
            seeds,
            fractions,
            workers,
            out_dir,
        } => cmd_sweep(
            &run_file,
            checkpoint.as_deref(),
            &optimizers,
            &seeds,
            &fractions,
            workers,
            &out_dir,
        ),
        Command::Analyze { summaries, out } => cmd_analyze(&summaries, out.as_deref()),
        Command::PrintConfig { run_file } => {
            let resolved = load_run_file(&run_file)?;
            emit_stdout(&runfile::render_resolved(&resolved))
        }
        Command::PrintGrid => {
            let grid = runfile::search_grid();
            let text = toml::to_string(&grid)
                .map_err(|e| Error::InvalidInput(format!("serialize grid: {e}")))?;
            emit_stdout(&text)
        }
    }
}

/// Writes to stdout without panicking when the reader hangs up (e.g.
/// `pats analyze ... | head`); a closed pipe ends the program quietly.
fn emit_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().write_all(text.as_bytes()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(Error::io("stdout", e)),
    }
}

/// A missing or malformed run file is a usage error (exit 2), unlike a
/// missing checkpoint (exit 3), so the read error is folded into Config.
fn load_run_file(path: &Path) -> Result<Resolved> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read run file {}: {e}", path.display())))?;
    runfile::parse(&text)?.resolve()
}

fn cmd_pretrain(run_file: &Path, out: &Path) -> Result<()> {
    let resolved = load_run_file(run_file)?;
    let run = &resolved.run;
    let (checkpoint, report) = pretrain_then_snapshot(
        &run.model,
        &run.task,
        resolved.pretrain_steps,
        run.batch_size,
        run.seed,
        &run.config,
    )?;
    checkpoint.save(out)?;
    eprintln!(
        "pretrained {} steps on the source task: loss {:.4} -> {:.4}, source dev accuracy {:.3}",
        report.steps, report.first_loss, report.last_loss, report.source_dev_accuracy
    );
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_train(
    run_file: &Path,
    checkpoint: Option<&Path>,
    optimizer: Option<OptimizerKind>,
    seed: Option<u64>,
    fraction: Option<f64>,
    out_dir: &Path,
) -> Result<()> {
    let resolved = load_run_file(run_file)?;
    let mut run = resolved.run;
    if let Some(kind) = optimizer {
        run.optimizer = kind;
    }
    if let Some(seed) = seed {
        run.seed = seed;
    }
    if let Some(fraction) = fraction {
        run.data_fraction = fraction;
    }
    run.validate()?;

    let start = checkpoint.map(Checkpoint::load).transpose()?;
    if start.is_none() {
        eprintln!("no checkpoint given; fine-tuning from random init");
    }
    let record = train_run(&run, start.as_ref())?;
    write_run_artifacts(&record, out_dir)?;
    report_run(&record);
    Ok(())
}

fn write_run_artifacts(record: &MetricsRecord, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary = out_dir.join(format!("{}.summary.json", record.run_id));
    let metrics = out_dir.join(format!("{}.metrics.jsonl", record.run_id));
    harness::write_summary_json(record, &summary)?;
    harness::write_metrics_jsonl(record, &metrics)?;
    eprintln!("wrote {}", summary.display());
    eprintln!("wrote {}", metrics.display());
    Ok(())
}

fn report_run(record: &MetricsRecord) {
    let status = match record.status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::Diverged { step } => format!("diverged at step {step}"),
    };
    eprintln!(
        "{}: {status}, best dev accuracy {:.3}, final {:.3} ({} steps, {:.2}s)",
        record.run_id,
        record.best_dev_accuracy,
        record.final_dev_accuracy,
        record.total_steps,
        record.wall_clock_secs
    );
}

/// Per-optimizer sweep results, in the order requested on the command
/// line. Serialized to sweep_summary.json.
#[derive(Serialize)]
struct SweepSummary {
    optimizer: OptimizerKind,
    fractions: Vec<FractionSummary>,
}

fn cmd_sweep(
    run_file: &Path,
    checkpoint: Option<&Path>,
    optimizers: &str,
    seeds: &str,
    fractions: &str,
    workers: usize,
    out_dir: &Path,
) -> Result<()> {
    let resolved = load_run_file(run_file)?;
    let optimizers = parse_optimizer_list(optimizers)?;
    let seeds = parse_list::<u64>(seeds, "seeds")?;
    let fractions = parse_list::<f64>(fractions, "fractions")?;
    let start = checkpoint.map(Checkpoint::load).transpose()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut rows: Vec<SweepRow> = Vec::new();
    let mut summaries: Vec<SweepSummary> = Vec::new();
    for &kind in &optimizers {
        let base = RunSpec {
            optimizer: kind,
            ..resolved.run.clone()
        };
        let levels = data_fraction_sweep(&base, &fractions, &seeds, start.as_ref(), workers)?;
        for level in &levels {
            eprintln!(
                "{kind} fraction {}: best dev accuracy {:.3} +/- {:.3} over {} seeds ({} diverged)",
                level.fraction,
                level.sweep.mean_best_accuracy,
                level.sweep.std_best_accuracy,
                level.sweep.seeds.len(),
                level.sweep.diverged_runs
            );
            for record in &level.sweep.records {
                rows.push(SweepRow::from_record(record));
                let path = out_dir.join(format!("{}.summary.json", record.run_id));
                harness::write_summary_json(record, &path)?;
            }
        }
        summaries.push(SweepSummary {
            optimizer: kind,
            fractions: levels,
        });
    }

    let csv_path = out_dir.join("sweep.csv");
    harness::write_sweep_csv(&rows, &csv_path)?;
    let summary_path = out_dir.join("sweep_summary.json");
    let json = serde_json::to_string_pretty(&summaries)
        .map_err(|e| Error::InvalidInput(format!("serialize sweep summary: {e}")))?;
    atomic_write(&summary_path, format!("{json}\n").as_bytes())?;
    eprintln!("wrote {}", csv_path.display());
    eprintln!("wrote {}", summary_path.display());
    Ok(())
}

fn parse_optimizer_list(text: &str) -> Result<Vec<OptimizerKind>> {
    let kinds = text
        .split(',')
        .map(|part| part.trim().parse())
        .collect::<Result<Vec<OptimizerKind>>>()?;
    if kinds.is_empty() {
        return Err(Error::Config("optimizer list is empty".into()));
    }
    Ok(kinds)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(Error::Config(format!(
                "empty entry in {what} list {text:?}"
            )));
        }
        out.push(
            part.parse::<T>()
                .map_err(|e| Error::Config(format!("bad {what} entry {part:?}: {e}")))?,
        );
    }
    Ok(out)
}

/// Aggregate over one optimizer's runs within an analysis report.
#[derive(Serialize)]
struct OptimizerAggregate {
    optimizer: OptimizerKind,
    runs: usize,
    diverged_runs: usize,
    mean_best_accuracy: f64,
    std_best_accuracy: f64,
    mean_final_accuracy: f64,
    std_final_accuracy: f64,
    mean_log10_sensitivity_std: Option<f64>,
}

/// Aggregate over one (optimizer, data fraction) cell.
#[derive(Serialize)]
struct FractionCell {
    optimizer: OptimizerKind,
    fraction: f64,
    n_train_used: usize,
    runs: usize,
    mean_best_accuracy: f64,
    std_best_accuracy: f64,
}

#[derive(Serialize)]
struct AnalysisReport {
    runs: usize,
    optimizers: Vec<OptimizerAggregate>,
    cells: Vec<FractionCell>,
}

fn cmd_analyze(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut records = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let record: MetricsRecord = serde_json::from_str(&text).map_err(|e| {
            Error::InvalidInput(format!("{} is not a run summary: {e}", path.display()))
        })?;
        records.push(record);
    }
    let report = analyze(&records);
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidInput(format!("serialize report: {e}")))?;
    match out {
        Some(path) => {
            atomic_write(path, format!("{json}\n").as_bytes())?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => emit_stdout(&format!("{json}\n")),
    }
}

fn analyze(records: &[MetricsRecord]) -> AnalysisReport {
    let mut kinds: Vec<OptimizerKind> = Vec::new();
    for record in records {
        if !kinds.contains(&record.optimizer) {
            kinds.push(record.optimizer);
        }
    }
    kinds.sort_by_key(|k| k.name());

    let optimizers = kinds
        .iter()
        .map(|&kind| {
            let group: Vec<&MetricsRecord> =
                records.iter().filter(|r| r.optimizer == kind).collect();
            let best: Vec<f64> = group.iter().map(|r| r.best_dev_accuracy).collect();
            let final_: Vec<f64> = group.iter().map(|r| r.final_dev_accuracy).collect();
            let (mean_best, std_best) = mean_and_sample_std(&best);
            let (mean_final, std_final) = mean_and_sample_std(&final_);
            let spreads: Vec<f64> = group
                .iter()
                .filter_map(|r| r.log10_sensitivity_std())
                .collect();
            OptimizerAggregate {
                optimizer: kind,
                runs: group.len(),
                diverged_runs: group
                    .iter()
                    .filter(|r| matches!(r.status, RunStatus::Diverged { .. }))
                    .count(),
                mean_best_accuracy: mean_best,
                std_best_accuracy: std_best,
                mean_final_accuracy: mean_final,
                std_final_accuracy: std_final,
                mean_log10_sensitivity_std: if spreads.is_empty() {
                    None
                } else {
                    Some(spreads.iter().sum::<f64>() / spreads.len() as f64)
                },
            }
        })
        .collect();

    let mut fraction_keys: Vec<(OptimizerKind, f64)> = Vec::new();
    for record in records {
        let key = (record.optimizer, record.data_fraction);
        if !fraction_keys.contains(&key) {
            fraction_keys.push(key);
        }
    }
    fraction_keys.sort_by(|a, b| a.0.name().cmp(b.0.name()).then(a.1.total_cmp(&b.1)));
    let cells = fraction_keys
        .iter()
        .map(|&(kind, fraction)| {
            let group: Vec<&MetricsRecord> = records
                .iter()
                .filter(|r| r.optimizer == kind && r.data_fraction == fraction)
                .collect();
            let best: Vec<f64> = group.iter().map(|r| r.best_dev_accuracy).collect();
            let (mean_best, std_best) = mean_and_sample_std(&best);
            FractionCell {
                optimizer: kind,
                fraction,
                n_train_used: group[0].n_train_used,
                runs: group.len(),
                mean_best_accuracy: mean_best,
                std_best_accuracy: std_best,
            }
        })
        .collect();

    AnalysisReport {
        runs: records.len(),
        optimizers,
        cells,
    }
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(kind: OptimizerKind, seed: u64, fraction: f64, best: f64) -> MetricsRecord {
        MetricsRecord {
            run_id: harness::run_id(kind, seed, fraction),
            optimizer: kind,
            seed,
            data_fraction: fraction,
            n_train_used: 100,
            epochs: 1,
            batch_size: 10,
            total_steps: 10,
            status: RunStatus::Completed,
            best_dev_accuracy: best,
            final_dev_accuracy: best,
            sensitivity: None,
            events: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    #[test]
    fn analyze_groups_by_optimizer_and_fraction() {
        let records = vec![
            record(OptimizerKind::Pats, 1, 0.1, 0.8),
            record(OptimizerKind::Pats, 2, 0.1, 0.9),
            record(OptimizerKind::Standard, 1, 0.1, 0.7),
            record(OptimizerKind::Pats, 1, 1.0, 0.95),
        ];
        let report = analyze(&records);
        assert_eq!(report.runs, 4);
        assert_eq!(report.optimizers.len(), 2);
        // Sorted by name: pats before standard.
        assert_eq!(report.optimizers[0].optimizer, OptimizerKind::Pats);
        assert_eq!(report.optimizers[0].runs, 3);
        assert!((report.optimizers[0].mean_best_accuracy - (0.8 + 0.9 + 0.95) / 3.0).abs() < 1e-12);
        assert_eq!(report.cells.len(), 3);
        assert_eq!(report.cells[0].fraction, 0.1);
        assert_eq!(report.cells[0].runs, 2);
        assert!((report.cells[0].mean_best_accuracy - 0.85).abs() < 1e-12);
    }

    #[test]
    fn list_parsing_rejects_garbage_with_context() {
        assert_eq!(parse_list::<u64>("1, 2,3", "seeds").unwrap(), vec![1, 2, 3]);
        let err = parse_list::<f64>("0.1,,0.5", "fractions").unwrap_err();
        assert!(err.to_string().contains("fractions"), "{err}");
        let err = parse_list::<u64>("1,x", "seeds").unwrap_err();
        assert!(err.to_string().contains("\"x\""), "{err}");
    }

    #[test]
    fn io_and_checkpoint_errors_exit_3_config_errors_exit_2() {
        let io = Error::io(Path::new("x"), std::io::Error::other("gone"));
        assert_eq!(exit_code(&io), 3);
        assert_eq!(exit_code(&Error::Checkpoint("bad".into())), 3);
        assert_eq!(exit_code(&Error::Config("bad".into())), 2);
        assert_eq!(exit_code(&Error::InvalidInput("bad".into())), 2);
    }
}
