//! TOML run files: schema, defaults, presets, and resolution into core
//! run specs.
//!
//! Every field is optional; omitted fields take documented defaults, and
//! unknown keys are rejected (catching typos like `n_trian`). A `preset`
//! overlays a named bundle of values *between* the defaults and the
//! file's explicit fields, so explicit fields always win.

use serde::{Deserialize, Serialize};

use pats::harness::RunSpec;
use pats::models::ModelSpec;
use pats::optim::{EpsPlacement, OptimConfig, OptimizerKind, Schedule};
use pats::tasks::{Generator, TaskSpec};
use pats::{Error, Result};

/// Run-file schema version this build reads.
pub const RUNFILE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub schema_version: Option<u32>,
    /// Named value bundle applied under the file's own fields.
    /// Available: `"paper-defaults"`.
    pub preset: Option<String>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `"mlp"` (default) or `"tiny_transformer"`.
    pub kind: Option<String>,
    /// MLP widths including input and output. Defaults to
    /// `[input_dim, 16, classes]` for the resolved task.
    pub layers: Option<Vec<usize>>,
    // Transformer-only fields.
    pub vocab: Option<usize>,
    pub embed_dim: Option<usize>,
    pub num_heads: Option<usize>,
    pub seq_len: Option<usize>,
    pub blocks: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub classes: Option<usize>,
    pub perturb_embeddings: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// `"gaussian_clusters"` (default), `"two_moons"`, `"token_pattern"`.
    pub generator: Option<String>,
    pub n_train: Option<usize>,
    pub n_dev: Option<usize>,
    pub input_dim: Option<usize>,
    pub classes: Option<usize>,
    pub vocab: Option<usize>,
    pub seq_len: Option<usize>,
    pub shift: Option<f64>,
    /// Data seed — kept separate from the run seed so seed sweeps rerun
    /// identical data.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    /// Run seed: init (without a checkpoint), batch order, noise.
    pub seed: Option<u64>,
    pub data_fraction: Option<f64>,
    /// Steps for the `pretrain` command.
    pub pretrain_steps: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    /// Default update rule for `train`: `"standard"`, `"pats"`,
    /// `"noisy_tune"`, `"sage_style"`. Overridable with `--optimizer`.
    pub kind: Option<String>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub update_guard: Option<f64>,
    pub sensitivity_beta: Option<f64>,
    pub base_noise: Option<f64>,
    pub sensitivity_margin: Option<f64>,
    pub ratio_guard: Option<f64>,
    pub perturb_prob: Option<f64>,
    pub noisytune_intensity: Option<f64>,
    /// `"constant"` or `"linear_warmup_decay"`.
    pub schedule: Option<String>,
    pub warmup_fraction: Option<f64>,
    /// `"ratio_denominator"` or `"sum_form"`.
    pub eps_placement: Option<String>,
}

/// A run file resolved against defaults and preset.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub run: RunSpec,
    pub pretrain_steps: u64,
}

/// The hyperparameter values the noise rule was originally tuned with.
/// Applied by `preset = "paper-defaults"`.
const PRESET_PAPER_DEFAULTS: [(&str, f64); 6] = [
    ("base_noise", 2e-6),
    ("sensitivity_margin", 0.002),
    ("sensitivity_beta", 0.75),
    ("perturb_prob", 0.2),
    ("warmup_fraction", 0.1),
    ("noisytune_intensity", 0.1),
];

/// Hyperparameter search grid, exposed as data for sweep scripts.
#[derive(Debug, Clone, Serialize)]
pub struct SearchGrid {
    pub lr: Vec<f64>,
    pub base_noise: Vec<f64>,
    pub sensitivity_margin: Vec<f64>,
    pub sensitivity_beta: Vec<f64>,
}

pub fn search_grid() -> SearchGrid {
    SearchGrid {
        lr: vec![1e-5, 3e-5, 5e-5, 7e-5, 8e-5, 1e-4, 2e-4, 3e-4, 5e-4],
        base_noise: vec![5e-7, 8e-7, 1e-6, 2e-6, 3e-6],
        sensitivity_margin: vec![1e-3, 2e-3, 3e-3, 5e-3, 8e-3, 2e-2],
        sensitivity_beta: vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85],
    }
}

pub fn parse(text: &str) -> Result<RunFile> {
    toml::from_str(text).map_err(|e| Error::Config(format!("run file: {e}")))
}

impl RunFile {
    /// Resolves the file against defaults and its preset. The returned
    /// spec has already passed core validation.
    pub fn resolve(&self) -> Result<Resolved> {
        let version = self.schema_version.unwrap_or(RUNFILE_SCHEMA_VERSION);
        if version != RUNFILE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "run file schema_version {version} unsupported (this build reads {RUNFILE_SCHEMA_VERSION})"
            )));
        }

        let preset = match self.preset.as_deref() {
            None => &[][..],
            Some("paper-defaults") => &PRESET_PAPER_DEFAULTS[..],
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?} (available: \"paper-defaults\")"
                )))
            }
        };
        let preset_value = |name: &str| preset.iter().find(|(k, _)| *k == name).map(|(_, v)| *v);

        let task = self.resolve_task()?;
        let model = self.resolve_model(&task)?;
        let optimizer_kind = match self.optimizer.kind.as_deref() {
            None => OptimizerKind::Pats,
            Some(s) => s.parse()?,
        };

        let defaults = OptimConfig::default();
        let pick = |explicit: Option<f64>, name: &str, default: f64| {
            explicit.or_else(|| preset_value(name)).unwrap_or(default)
        };
        let o = &self.optimizer;
        let config = OptimConfig {
            lr: pick(o.lr, "lr", defaults.lr),
            beta1: pick(o.beta1, "beta1", defaults.beta1),
            beta2: pick(o.beta2, "beta2", defaults.beta2),
            update_guard: pick(o.update_guard, "update_guard", defaults.update_guard),
            sensitivity_beta: pick(
                o.sensitivity_beta,
                "sensitivity_beta",
                defaults.sensitivity_beta,
            ),
            base_noise: pick(o.base_noise, "base_noise", defaults.base_noise),
            sensitivity_margin: pick(
                o.sensitivity_margin,
                "sensitivity_margin",
                defaults.sensitivity_margin,
            ),
            ratio_guard: pick(o.ratio_guard, "ratio_guard", defaults.ratio_guard),
            perturb_prob: pick(o.perturb_prob, "perturb_prob", defaults.perturb_prob),
            noisytune_intensity: pick(
                o.noisytune_intensity,
                "noisytune_intensity",
                defaults.noisytune_intensity,
            ),
            schedule: match o.schedule.as_deref() {
                None => defaults.schedule,
                Some("constant") => Schedule::Constant,
                Some("linear_warmup_decay") => Schedule::LinearWarmupDecay,
                Some(other) => {
                    return Err(Error::Config(format!(
                        "unknown schedule {other:?} (constant | linear_warmup_decay)"
                    )))
                }
            },
            warmup_fraction: pick(
                o.warmup_fraction,
                "warmup_fraction",
                defaults.warmup_fraction,
            ),
            // Overwritten by the harness with the real horizon per run.
            total_steps: defaults.total_steps,
            eps_placement: match o.eps_placement.as_deref() {
                None => defaults.eps_placement,
                Some("ratio_denominator") => EpsPlacement::RatioDenominator,
                Some("sum_form") => EpsPlacement::SumForm,
                Some(other) => {
                    return Err(Error::Config(format!(
                        "unknown eps_placement {other:?} (ratio_denominator | sum_form)"
                    )))
                }
            },
        };

        let run = RunSpec {
            model,
            task,
            optimizer: optimizer_kind,
            config,
            epochs: self.train.epochs.unwrap_or(10),
            batch_size: self.train.batch_size.unwrap_or(16),
            seed: self.train.seed.unwrap_or(1),
            data_fraction: self.train.data_fraction.unwrap_or(1.0),
        };
        run.validate()?;
        let pretrain_steps = self.train.pretrain_steps.unwrap_or(400);
        if pretrain_steps == 0 {
            return Err(Error::Config("pretrain_steps must be at least 1".into()));
        }
        Ok(Resolved {
            run,
            pretrain_steps,
        })
    }

    fn resolve_task(&self) -> Result<TaskSpec> {
        let d = TaskSpec::default();
        let generator = match self.task.generator.as_deref() {
            None => Generator::GaussianClusters,
            Some("gaussian_clusters") => Generator::GaussianClusters,
            Some("two_moons") => Generator::TwoMoons,
            Some("token_pattern") => Generator::TokenPattern,
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown generator {other:?} (gaussian_clusters | two_moons | token_pattern)"
                )))
            }
        };
        Ok(TaskSpec {
            generator,
            n_train: self.task.n_train.unwrap_or(d.n_train),
            n_dev: self.task.n_dev.unwrap_or(d.n_dev),
            input_dim: self.task.input_dim.unwrap_or(match generator {
                Generator::TwoMoons => 2,
                _ => d.input_dim,
            }),
            // Two-moons and token-pattern generators are binary by
            // construction; only gaussian clusters take the default count.
            classes: self.task.classes.unwrap_or(match generator {
                Generator::TwoMoons | Generator::TokenPattern => 2,
                Generator::GaussianClusters => d.classes,
            }),
            vocab: self.task.vocab.unwrap_or(d.vocab),
            seq_len: self.task.seq_len.unwrap_or(d.seq_len),
            shift: self.task.shift.unwrap_or(d.shift),
            seed: self.task.seed.unwrap_or(d.seed),
        })
    }

    fn resolve_model(&self, task: &TaskSpec) -> Result<ModelSpec> {
        let m = &self.model;
        let kind = m.kind.as_deref().unwrap_or(match task.generator {
            Generator::TokenPattern => "tiny_transformer",
            _ => "mlp",
        });
        let transformer_fields: [(&str, bool); 8] = [
            ("vocab", m.vocab.is_some()),
            ("embed_dim", m.embed_dim.is_some()),
            ("num_heads", m.num_heads.is_some()),
            ("seq_len", m.seq_len.is_some()),
            ("blocks", m.blocks.is_some()),
            ("ffn_dim", m.ffn_dim.is_some()),
            ("classes", m.classes.is_some()),
            ("perturb_embeddings", m.perturb_embeddings.is_some()),
        ];
        match kind {
            "mlp" => {
                if let Some((name, _)) = transformer_fields.iter().find(|(_, set)| *set) {
                    return Err(Error::Config(format!(
                        "[model] {name} only applies to kind = \"tiny_transformer\""
                    )));
                }
                // Default widths fit the default task: input_dim in,
                // one hidden layer, `classes` out.
                let layers = m
                    .layers
                    .clone()
                    .unwrap_or_else(|| vec![task.input_dim, 16, task.classes]);
                Ok(ModelSpec::Mlp { layers })
            }
            "tiny_transformer" => {
                if m.layers.is_some() {
                    return Err(Error::Config(
                        "[model] layers only applies to kind = \"mlp\"".into(),
                    ));
                }
                Ok(ModelSpec::TinyTransformer {
                    vocab: m.vocab.unwrap_or(task.vocab),
                    embed_dim: m.embed_dim.unwrap_or(16),
                    num_heads: m.num_heads.unwrap_or(2),
                    seq_len: m.seq_len.unwrap_or(task.seq_len),
                    blocks: m.blocks.unwrap_or(1),
                    ffn_dim: m.ffn_dim.unwrap_or(32),
                    classes: m.classes.unwrap_or(task.classes),
                    perturb_embeddings: m.perturb_embeddings.unwrap_or(false),
                })
            }
            other => Err(Error::Config(format!(
                "unknown model kind {other:?} (mlp | tiny_transformer)"
            ))),
        }
    }
}

/// Renders a resolved run back as a complete TOML document (every value
/// explicit, no preset). Parsing the output resolves to the same run.
pub fn render_resolved(resolved: &Resolved) -> String {
    let run = &resolved.run;
    let mut out = String::new();
    out.push_str(&format!("schema_version = {RUNFILE_SCHEMA_VERSION}\n\n"));

    out.push_str("[model]\n");
    match &run.model {
        ModelSpec::Mlp { layers } => {
            out.push_str("kind = \"mlp\"\n");
            let widths: Vec<String> = layers.iter().map(|w| w.to_string()).collect();
            out.push_str(&format!("layers = [{}]\n", widths.join(", ")));
        }
        ModelSpec::TinyTransformer {
            vocab,
            embed_dim,
            num_heads,
            seq_len,
            blocks,
            ffn_dim,
            classes,
            perturb_embeddings,
        } => {
            out.push_str("kind = \"tiny_transformer\"\n");
            out.push_str(&format!("vocab = {vocab}\n"));
            out.push_str(&format!("embed_dim = {embed_dim}\n"));
            out.push_str(&format!("num_heads = {num_heads}\n"));
            out.push_str(&format!("seq_len = {seq_len}\n"));
            out.push_str(&format!("blocks = {blocks}\n"));
            out.push_str(&format!("ffn_dim = {ffn_dim}\n"));
            out.push_str(&format!("classes = {classes}\n"));
            out.push_str(&format!("perturb_embeddings = {perturb_embeddings}\n"));
        }
    }

    let t = &run.task;
    let generator = match t.generator {
        Generator::GaussianClusters => "gaussian_clusters",
        Generator::TwoMoons => "two_moons",
        Generator::TokenPattern => "token_pattern",
    };
    out.push_str("\n[task]\n");
    out.push_str(&format!("generator = \"{generator}\"\n"));
    out.push_str(&format!("n_train = {}\n", t.n_train));
    out.push_str(&format!("n_dev = {}\n", t.n_dev));
    out.push_str(&format!("input_dim = {}\n", t.input_dim));
    out.push_str(&format!("classes = {}\n", t.classes));
    out.push_str(&format!("vocab = {}\n", t.vocab));
    out.push_str(&format!("seq_len = {}\n", t.seq_len));
    out.push_str(&format!("shift = {}\n", float_toml(t.shift)));
    out.push_str(&format!("seed = {}\n", t.seed));

    out.push_str("\n[train]\n");
    out.push_str(&format!("epochs = {}\n", run.epochs));
    out.push_str(&format!("batch_size = {}\n", run.batch_size));
    out.push_str(&format!("seed = {}\n", run.seed));
    out.push_str(&format!(
        "data_fraction = {}\n",
        float_toml(run.data_fraction)
    ));
    out.push_str(&format!("pretrain_steps = {}\n", resolved.pretrain_steps));

    let c = &run.config;
    let schedule = match c.schedule {
        Schedule::Constant => "constant",
        Schedule::LinearWarmupDecay => "linear_warmup_decay",
    };
    let placement = match c.eps_placement {
        EpsPlacement::RatioDenominator => "ratio_denominator",
        EpsPlacement::SumForm => "sum_form",
    };
    out.push_str("\n[optimizer]\n");
    out.push_str(&format!("kind = \"{}\"\n", run.optimizer));
    out.push_str(&format!("lr = {}\n", float_toml(c.lr)));
    out.push_str(&format!("beta1 = {}\n", float_toml(c.beta1)));
    out.push_str(&format!("beta2 = {}\n", float_toml(c.beta2)));
    out.push_str(&format!("update_guard = {}\n", float_toml(c.update_guard)));
    out.push_str(&format!(
        "sensitivity_beta = {}\n",
        float_toml(c.sensitivity_beta)
    ));
    out.push_str(&format!("base_noise = {}\n", float_toml(c.base_noise)));
    out.push_str(&format!(
        "sensitivity_margin = {}\n",
        float_toml(c.sensitivity_margin)
    ));
    out.push_str(&format!("ratio_guard = {}\n", float_toml(c.ratio_guard)));
    out.push_str(&format!("perturb_prob = {}\n", float_toml(c.perturb_prob)));
    out.push_str(&format!(
        "noisytune_intensity = {}\n",
        float_toml(c.noisytune_intensity)
    ));
    out.push_str(&format!("schedule = \"{schedule}\"\n"));
    out.push_str(&format!(
        "warmup_fraction = {}\n",
        float_toml(c.warmup_fraction)
    ));
    out.push_str(&format!("eps_placement = \"{placement}\"\n"));
    out
}

/// TOML floats must contain a `.` or exponent; Rust's shortest form for
/// whole floats ("1") would re-parse as an integer.
fn float_toml(v: f64) -> String {
    let s = v.to_string();
    if s.contains('.') || s.contains('e') || s.contains('E') {
        s
    } else {
        format!("{s}.0")
    }
}
