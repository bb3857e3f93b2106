//! Experiment harness: pretrain -> fine-tune runs, seed sweeps, data
//! fraction sweeps, and the metrics files they produce.
//!
//! A [`RunSpec`] binds a model, a task pair, an optimizer and its config.
//! [`train_run`] fine-tunes on the *target* split (optionally from a
//! pretrained checkpoint) and returns a [`MetricsRecord`]; sweeps fan runs
//! out over seeds and data fractions, optionally across worker threads.
//! Every run is bit-reproducible from its spec: the same `RunSpec` and
//! checkpoint produce byte-identical metrics files.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::checkpoint::{atomic_write, Checkpoint};
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};
use crate::optim::{
    noisytune_perturb, step_pats, step_sage, step_standard, OptimConfig, OptimizerKind,
};
use crate::rng::{shuffle, RngStream};
use crate::sensitivity::{self, ReportScope, SensitivityReport, Window};
use crate::tasks::{self, TaskSpec};

/// Histogram bins in per-run sensitivity reports.
const REPORT_BINS: usize = 40;

/// Everything that defines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub model: ModelSpec,
    pub task: TaskSpec,
    pub optimizer: OptimizerKind,
    pub config: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Run seed: weight init (when not starting from a checkpoint), batch
    /// order and noise draws. Data comes from `task.seed` instead, so
    /// seed sweeps rerun the *same* data.
    pub seed: u64,
    /// Fraction of the target training split to use, in (0, 1].
    pub data_fraction: f64,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate()?;
        self.config.validate()?;
        if self.epochs == 0 {
            return Err(Error::Spec("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Spec("batch_size must be at least 1".into()));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Spec(format!(
                "data_fraction must be in (0, 1], got {}",
                self.data_fraction
            )));
        }
        if self.n_train_used() == 0 {
            return Err(Error::Spec(format!(
                "data_fraction {} of {} training examples leaves nothing to train on",
                self.data_fraction, self.task.n_train
            )));
        }
        // Model/task compatibility.
        match &self.model {
            ModelSpec::Mlp { layers } => {
                if self.task.is_token_task() {
                    return Err(Error::Spec(
                        "mlp takes dense features; token_pattern needs the transformer".into(),
                    ));
                }
                if layers[0] != self.task.input_dim {
                    return Err(Error::Spec(format!(
                        "mlp input width {} != task input_dim {}",
                        layers[0], self.task.input_dim
                    )));
                }
                if *layers.last().unwrap() != self.task.classes {
                    return Err(Error::Spec(format!(
                        "mlp output width {} != task classes {}",
                        layers.last().unwrap(),
                        self.task.classes
                    )));
                }
            }
            ModelSpec::TinyTransformer {
                vocab,
                seq_len,
                classes,
                ..
            } => {
                if !self.task.is_token_task() {
                    return Err(Error::Spec(
                        "the transformer takes token sequences; use an mlp for dense tasks".into(),
                    ));
                }
                if *vocab != self.task.vocab || *seq_len != self.task.seq_len {
                    return Err(Error::Spec(format!(
                        "transformer vocab/seq_len {}x{} != task {}x{}",
                        vocab, seq_len, self.task.vocab, self.task.seq_len
                    )));
                }
                if *classes != self.task.classes {
                    return Err(Error::Spec(format!(
                        "transformer classes {} != task classes {}",
                        classes, self.task.classes
                    )));
                }
            }
        }
        Ok(())
    }

    /// Training examples after applying the data fraction (floor).
    pub fn n_train_used(&self) -> usize {
        (self.data_fraction * self.task.n_train as f64).floor() as usize
    }

    /// Optimizer steps this run will take.
    pub fn total_steps(&self) -> u64 {
        let per_epoch = self.n_train_used().div_ceil(self.batch_size);
        (self.epochs * per_epoch) as u64
    }
}

/// Stable identifier used in file names and CSV rows.
pub fn run_id(optimizer: OptimizerKind, seed: u64, fraction: f64) -> String {
    format!("{optimizer}_seed{seed}_frac{fraction}")
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    /// All epochs ran.
    Completed,
    /// The loss went non-finite at `step`; the run stopped there. This is
    /// a recorded outcome, not an error.
    Diverged { step: u64 },
}

/// One line of the per-run metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// One optimizer step.
    Step {
        step: u64,
        epoch: usize,
        loss: f64,
        lr: f64,
    },
    /// One dev-set evaluation (epoch 0 = before any training).
    Epoch {
        epoch: usize,
        step: u64,
        dev_accuracy: f64,
    },
}

/// Everything a finished run reports.
///
/// `events` go to the JSONL stream and `wall_clock_secs` to stderr; both
/// are skipped during serialization so the summary JSON is byte-identical
/// across reruns of the same spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub data_fraction: f64,
    pub n_train_used: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub status: RunStatus,
    /// Best dev accuracy across all evaluations, including epoch 0.
    pub best_dev_accuracy: f64,
    /// Dev accuracy at the last evaluation.
    pub final_dev_accuracy: f64,
    /// Final sensitivity distribution over perturbable groups; absent for
    /// diverged runs (their sensitivities may be non-finite).
    pub sensitivity: Option<SensitivityReport>,
    #[serde(skip)]
    pub events: Vec<Event>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl MetricsRecord {
    /// Spread of the final log10 sensitivity distribution, when recorded.
    pub fn log10_sensitivity_std(&self) -> Option<f64> {
        self.sensitivity.as_ref().map(|r| r.log10_std)
    }
}

/// Outcome of a pretraining phase, alongside the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: u64,
    pub first_loss: f64,
    pub last_loss: f64,
    /// Accuracy on the *source* dev split after pretraining.
    pub source_dev_accuracy: f64,
}

/// Pretrains with plain Adamax on the task's source split and snapshots
/// the weights (no optimizer state: fine-tuning starts fresh). Follows
/// the given config except that the schedule horizon is `steps`.
pub fn pretrain_then_snapshot(
    model_spec: &ModelSpec,
    task: &TaskSpec,
    steps: u64,
    batch_size: usize,
    seed: u64,
    cfg: &OptimConfig,
) -> Result<(Checkpoint, PretrainReport)> {
    if steps == 0 {
        return Err(Error::Spec("pretraining needs at least one step".into()));
    }
    if batch_size == 0 {
        return Err(Error::Spec("batch_size must be at least 1".into()));
    }
    let data = tasks::generate(task)?;
    let mut model = Model::init(model_spec, seed)?;
    let cfg = OptimConfig {
        total_steps: steps,
        ..*cfg
    };
    cfg.validate()?;
    let stream = RngStream::new(seed);
    let train = &data.source_train;
    let per_epoch = train.len().div_ceil(batch_size) as u64;

    let mut first_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    for t in 1..=steps {
        let offset = ((t - 1) % per_epoch) as usize * batch_size;
        if (t - 1) % per_epoch == 0 {
            epoch += 1;
            order = (0..train.len()).collect();
            shuffle(
                &mut order,
                &mut stream.substream("batch", "pretrain", epoch),
            );
        }
        let indices = &order[offset..(offset + batch_size).min(order.len())];
        let (input, labels) = train.batch(indices)?;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &input)?;
        let loss_node = tape.softmax_cross_entropy(fwd.logits, &labels)?;
        let loss = tape.values(loss_node)[0];
        if !loss.is_finite() {
            return Err(Error::State(format!(
                "pretraining diverged at step {t}; lower the learning rate"
            )));
        }
        if t == 1 {
            first_loss = loss;
        }
        last_loss = loss;
        tape.backward(loss_node)?;
        model.pull_grads(&tape, &fwd)?;
        step_standard(&mut model, &cfg, t)?;
    }

    let (dev_input, dev_labels) = data.source_dev.full_batch()?;
    let acc = model.accuracy(&dev_input, &dev_labels)?;
    let ckpt = Checkpoint::capture(&model)?;
    Ok((
        ckpt,
        PretrainReport {
            steps,
            first_loss,
            last_loss,
            source_dev_accuracy: acc,
        },
    ))
}

/// Fine-tunes per `run` on the task's *target* split, starting from
/// `start` when given (its model spec must match). Returns the full
/// metrics record; divergence is a recorded status, not an `Err`.
pub fn train_run(run: &RunSpec, start: Option<&Checkpoint>) -> Result<MetricsRecord> {
    run.validate()?;
    let began = Instant::now();
    let data = tasks::generate(&run.task)?;
    let n_used = run.n_train_used();
    let train = data.target_train.prefix(n_used)?;
    let dev = &data.target_dev;

    let mut model = match start {
        Some(ckpt) => {
            if ckpt.model != run.model {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was built for {:?}, run wants {:?}",
                    ckpt.model, run.model
                )));
            }
            ckpt.restore()?
        }
        None => Model::init(&run.model, run.seed)?,
    };

    let total_steps = run.total_steps();
    let cfg = OptimConfig {
        total_steps,
        ..run.config
    };
    let stream = RngStream::new(run.seed);

    if run.optimizer == OptimizerKind::NoisyTune {
        noisytune_perturb(&mut model, cfg.noisytune_intensity, &stream)?;
    }

    let mut events = Vec::new();
    let mut status = RunStatus::Completed;
    let evaluate = |model: &Model| -> Result<f64> {
        let (input, labels) = dev.full_batch()?;
        model.accuracy(&input, &labels)
    };

    let mut best = evaluate(&model)?;
    let mut final_acc = best;
    events.push(Event::Epoch {
        epoch: 0,
        step: 0,
        dev_accuracy: best,
    });

    let mut t: u64 = 0;
    'epochs: for epoch in 1..=run.epochs {
        let mut order: Vec<usize> = (0..n_used).collect();
        shuffle(&mut order, &mut stream.substream("batch", "", epoch as u64));
        for chunk in order.chunks(run.batch_size) {
            t += 1;
            let (input, labels) = train.batch(chunk)?;
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &input)?;
            let loss_node = tape.softmax_cross_entropy(fwd.logits, &labels)?;
            let loss = tape.values(loss_node)[0];
            if !loss.is_finite() {
                status = RunStatus::Diverged { step: t };
                break 'epochs;
            }
            tape.backward(loss_node)?;
            model.pull_grads(&tape, &fwd)?;
            let lr = match run.optimizer {
                OptimizerKind::Standard | OptimizerKind::NoisyTune => {
                    step_standard(&mut model, &cfg, t)?
                }
                OptimizerKind::Pats => step_pats(&mut model, &cfg, t, &stream)?,
                OptimizerKind::SageStyle => step_sage(&mut model, &cfg, t)?,
            };
            events.push(Event::Step {
                step: t,
                epoch,
                loss,
                lr,
            });
        }
        let acc = evaluate(&model)?;
        events.push(Event::Epoch {
            epoch,
            step: t,
            dev_accuracy: acc,
        });
        final_acc = acc;
        if acc > best {
            best = acc;
        }
    }

    let sensitivity = match status {
        RunStatus::Completed => Some(sensitivity::distribution_report(
            &model.groups,
            ReportScope::Perturbable,
            Window::Auto,
            REPORT_BINS,
        )?),
        RunStatus::Diverged { .. } => None,
    };

    Ok(MetricsRecord {
        run_id: run_id(run.optimizer, run.seed, run.data_fraction),
        optimizer: run.optimizer,
        seed: run.seed,
        data_fraction: run.data_fraction,
        n_train_used: n_used,
        epochs: run.epochs,
        batch_size: run.batch_size,
        total_steps,
        status,
        best_dev_accuracy: best,
        final_dev_accuracy: final_acc,
        sensitivity,
        events,
        wall_clock_secs: began.elapsed().as_secs_f64(),
    })
}

/// Aggregate over seeds of otherwise-identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweep {
    pub seeds: Vec<u64>,
    pub mean_best_accuracy: f64,
    /// Sample standard deviation (n-1); 0 for a single seed.
    pub std_best_accuracy: f64,
    pub mean_final_accuracy: f64,
    pub std_final_accuracy: f64,
    /// Mean over completed runs of the final log10-sensitivity spread;
    /// absent if every run diverged.
    pub mean_log10_sensitivity_std: Option<f64>,
    pub diverged_runs: usize,
    #[serde(skip)]
    pub records: Vec<MetricsRecord>,
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `base` once per seed (in parallel across `workers` threads) and
/// aggregates. Seed order in `records` matches the input order.
pub fn seed_sweep(
    base: &RunSpec,
    seeds: &[u64],
    start: Option<&Checkpoint>,
    workers: usize,
) -> Result<SeedSweep> {
    if seeds.is_empty() {
        return Err(Error::Spec("seed sweep needs at least one seed".into()));
    }
    let runs: Vec<RunSpec> = seeds
        .iter()
        .map(|&seed| RunSpec {
            seed,
            ..base.clone()
        })
        .collect();
    let records = parallel_map(&runs, workers, |run| train_run(run, start))?;
    Ok(aggregate(seeds.to_vec(), records))
}

fn aggregate(seeds: Vec<u64>, records: Vec<MetricsRecord>) -> SeedSweep {
    let best: Vec<f64> = records.iter().map(|r| r.best_dev_accuracy).collect();
    let final_: Vec<f64> = records.iter().map(|r| r.final_dev_accuracy).collect();
    let (mean_best, std_best) = mean_and_sample_std(&best);
    let (mean_final, std_final) = mean_and_sample_std(&final_);
    let spreads: Vec<f64> = records
        .iter()
        .filter_map(|r| r.log10_sensitivity_std())
        .collect();
    let mean_spread = if spreads.is_empty() {
        None
    } else {
        Some(spreads.iter().sum::<f64>() / spreads.len() as f64)
    };
    let diverged = records
        .iter()
        .filter(|r| matches!(r.status, RunStatus::Diverged { .. }))
        .count();
    SeedSweep {
        seeds,
        mean_best_accuracy: mean_best,
        std_best_accuracy: std_best,
        mean_final_accuracy: mean_final,
        std_final_accuracy: std_final,
        mean_log10_sensitivity_std: mean_spread,
        diverged_runs: diverged,
        records,
    }
}

/// One data-fraction level of a low-resource sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSummary {
    pub fraction: f64,
    pub n_train_used: usize,
    pub sweep: SeedSweep,
}

/// Sweeps data fractions x seeds. Every fraction must leave at least one
/// training example; this is validated up front so a bad fraction fails
/// before any compute is spent.
pub fn data_fraction_sweep(
    base: &RunSpec,
    fractions: &[f64],
    seeds: &[u64],
    start: Option<&Checkpoint>,
    workers: usize,
) -> Result<Vec<FractionSummary>> {
    if fractions.is_empty() {
        return Err(Error::Spec(
            "fraction sweep needs at least one fraction".into(),
        ));
    }
    let mut specs = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let spec = RunSpec {
            data_fraction: fraction,
            ..base.clone()
        };
        spec.validate()?;
        specs.push(spec);
    }
    let mut out = Vec::with_capacity(specs.len());
    for spec in &specs {
        let sweep = seed_sweep(spec, seeds, start, workers)?;
        out.push(FractionSummary {
            fraction: spec.data_fraction,
            n_train_used: spec.n_train_used(),
            sweep,
        });
    }
    Ok(out)
}

/// Index-ordered parallel map over run specs. Results come back in input
/// order regardless of which worker finished first; the first error (by
/// input order) wins.
fn parallel_map<T, F>(inputs: &[T], workers: usize, f: F) -> Result<Vec<MetricsRecord>>
where
    T: Sync,
    F: Fn(&T) -> Result<MetricsRecord> + Sync,
{
    let workers = workers.max(1).min(inputs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<MetricsRecord>>>> =
        (0..inputs.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let result = f(&inputs[i]);
                *slots[i].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot poisoned")
                .expect("every slot filled by construction")
        })
        .collect()
}

// ---------------------------------------------------------------------------
// artifacts

/// Writes the per-step/per-epoch event stream as JSON lines.
pub fn write_metrics_jsonl(record: &MetricsRecord, path: &Path) -> Result<()> {
    let mut out = String::new();
    for event in &record.events {
        out.push_str(
            &serde_json::to_string(event)
                .map_err(|e| Error::InvalidInput(format!("serialize event: {e}")))?,
        );
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Writes the run summary (everything except the event stream and wall
/// clock) as pretty JSON. Byte-identical across reruns of the same spec.
pub fn write_summary_json(record: &MetricsRecord, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(record)
        .map_err(|e| Error::InvalidInput(format!("serialize summary: {e}")))?;
    atomic_write(path, format!("{json}\n").as_bytes())
}

/// One row of a sweep CSV: a single (optimizer, fraction, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub optimizer: OptimizerKind,
    pub fraction: f64,
    pub n_train_used: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub best_dev_accuracy: f64,
    pub final_dev_accuracy: f64,
    pub log10_sensitivity_std: Option<f64>,
}

impl SweepRow {
    pub fn from_record(record: &MetricsRecord) -> SweepRow {
        SweepRow {
            optimizer: record.optimizer,
            fraction: record.data_fraction,
            n_train_used: record.n_train_used,
            seed: record.seed,
            status: record.status,
            best_dev_accuracy: record.best_dev_accuracy,
            final_dev_accuracy: record.final_dev_accuracy,
            log10_sensitivity_std: record.log10_sensitivity_std(),
        }
    }
}

/// Writes sweep rows as CSV with a fixed header. Numeric cells use the
/// shortest round-trip float form; a diverged run's sensitivity cell is
/// empty.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut out = String::from(
        "optimizer,fraction,n_train_used,seed,status,best_dev_accuracy,final_dev_accuracy,log10_sensitivity_std\n",
    );
    for row in rows {
        let status = match row.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { step } => format!("diverged@{step}"),
        };
        let spread = row
            .log10_sensitivity_std
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.optimizer,
            row.fraction,
            row.n_train_used,
            row.seed,
            status,
            row.best_dev_accuracy,
            row.final_dev_accuracy,
            spread
        ));
    }
    atomic_write(path, out.as_bytes())
}
