//! Synthetic pretrain/fine-tune task pairs.
//!
//! Every task is a *pair* of classification datasets: a `source` task for
//! pretraining and a `target` task for fine-tuning, where the target is
//! the same generative process deformed by a `shift` parameter. `shift = 0`
//! makes the two distributions identical; growing it manufactures the
//! pretrain/fine-tune distribution gap that the noisy optimizers are
//! supposed to bridge.
//!
//! Three generators:
//! - `gaussian_clusters`: class-conditional Gaussians in `input_dim`
//!   dimensions; the target rotates inputs by `shift` radians in a random
//!   (seed-determined) 2-plane.
//! - `two_moons`: the classic interleaved half-circles in 2-D; the target
//!   rotates the plane by `shift` radians about the moons' centroid.
//! - `token_pattern`: sequences of uniform random tokens where class 1
//!   means "contains the trigger bigram"; the target rotates the trigger's
//!   token ids by `round(shift * vocab)`.
//!
//! Examples are generated one at a time from per-split substreams, so the
//! first `n` examples of a split are the same no matter how many follow —
//! the property that makes nested data-fraction subsets honest.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::BatchInput;
use crate::rng::{standard_normal, RngStream};

/// Cluster geometry for `gaussian_clusters`: class means sit at this
/// radius with unit isotropic noise — separable but not trivially so.
const CLUSTER_SPREAD: f64 = 2.0;
const CLUSTER_STD: f64 = 1.0;
/// Coordinate noise for `two_moons`.
const MOON_STD: f64 = 0.15;
/// The moons' approximate centroid, used as the rotation pivot.
const MOON_PIVOT: (f64, f64) = (0.5, 0.25);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    GaussianClusters,
    TwoMoons,
    TokenPattern,
}

/// Full description of a task pair. `seed` drives the data only — run
/// seeds (init, batching, noise) live elsewhere, so sweeps across run
/// seeds hold the data fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub generator: Generator,
    pub n_train: usize,
    pub n_dev: usize,
    /// Feature width (dense generators).
    pub input_dim: usize,
    pub classes: usize,
    /// Token id range (token generator).
    pub vocab: usize,
    /// Sequence length (token generator).
    pub seq_len: usize,
    /// Source-to-target deformation: radians for the dense generators, a
    /// fraction of the vocabulary for the token generator. 0 = no shift.
    pub shift: f64,
    pub seed: u64,
}

/// The default task pair: six gaussian clusters in four dimensions with a
/// 1.5-radian plane rotation between source and target. Calibrated so the
/// pretrained model genuinely degrades under the shift (dev accuracy drops
/// to roughly chance level) and recovery scales with the amount of target
/// data, giving the fraction sweep a real learning curve.
impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            generator: Generator::GaussianClusters,
            n_train: 512,
            n_dev: 512,
            input_dim: 4,
            classes: 6,
            vocab: 12,
            seq_len: 6,
            shift: 1.5,
            seed: 1234,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_dev == 0 {
            return Err(Error::Spec("n_train and n_dev must be at least 1".into()));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return Err(Error::Spec(format!(
                "shift must be non-negative and finite, got {}",
                self.shift
            )));
        }
        match self.generator {
            Generator::GaussianClusters => {
                if self.input_dim < 2 {
                    return Err(Error::Spec(
                        "gaussian_clusters needs input_dim >= 2 (the shift rotates a 2-plane)"
                            .into(),
                    ));
                }
                if self.classes < 2 {
                    return Err(Error::Spec("gaussian_clusters needs >= 2 classes".into()));
                }
            }
            Generator::TwoMoons => {
                if self.input_dim != 2 || self.classes != 2 {
                    return Err(Error::Spec(
                        "two_moons is a 2-D binary task: input_dim = 2, classes = 2".into(),
                    ));
                }
            }
            Generator::TokenPattern => {
                if self.vocab < 4 {
                    return Err(Error::Spec("token_pattern needs vocab >= 4".into()));
                }
                if self.seq_len < 3 {
                    return Err(Error::Spec("token_pattern needs seq_len >= 3".into()));
                }
                if self.classes != 2 {
                    return Err(Error::Spec(
                        "token_pattern is binary: trigger present or absent".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// True when this task feeds token sequences (vs dense features).
    pub fn is_token_task(&self) -> bool {
        self.generator == Generator::TokenPattern
    }
}

/// Stored example features.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    Dense { dim: usize, values: Vec<f64> },
    Tokens { seq_len: usize, tokens: Vec<usize> },
}

/// A labelled split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Inputs,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the examples at `indices` into a minibatch.
    pub fn batch(&self, indices: &[usize]) -> Result<(BatchInput, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("empty batch requested".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidInput(format!(
                "example index {bad} out of range for {} examples",
                self.len()
            )));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let input = match &self.inputs {
            Inputs::Dense { dim, values } => BatchInput::Dense {
                rows: indices.len(),
                dim: *dim,
                values: indices
                    .iter()
                    .flat_map(|&i| values[i * dim..(i + 1) * dim].iter().copied())
                    .collect(),
            },
            Inputs::Tokens { seq_len, tokens } => BatchInput::Tokens {
                rows: indices.len(),
                seq_len: *seq_len,
                tokens: indices
                    .iter()
                    .flat_map(|&i| tokens[i * seq_len..(i + 1) * seq_len].iter().copied())
                    .collect(),
            },
        };
        Ok((input, labels))
    }

    /// The whole split as one batch (for evaluation).
    pub fn full_batch(&self) -> Result<(BatchInput, Vec<usize>)> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    /// The first `n` examples, preserving generation order. This is how
    /// data fractions nest: the subset at a smaller fraction is a prefix
    /// of the subset at a larger one.
    pub fn prefix(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::Spec(format!(
                "prefix of {n} examples from a split of {}",
                self.len()
            )));
        }
        let inputs = match &self.inputs {
            Inputs::Dense { dim, values } => Inputs::Dense {
                dim: *dim,
                values: values[..n * dim].to_vec(),
            },
            Inputs::Tokens { seq_len, tokens } => Inputs::Tokens {
                seq_len: *seq_len,
                tokens: tokens[..n * seq_len].to_vec(),
            },
        };
        Ok(Dataset {
            inputs,
            labels: self.labels[..n].to_vec(),
        })
    }
}

/// The four splits of a task pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub source_train: Dataset,
    pub source_dev: Dataset,
    pub target_train: Dataset,
    pub target_dev: Dataset,
}

/// Generates all four splits of a task pair from its spec.
pub fn generate(spec: &TaskSpec) -> Result<TaskData> {
    spec.validate()?;
    let stream = RngStream::new(spec.seed);
    match spec.generator {
        Generator::GaussianClusters => generate_gaussian(spec, &stream),
        Generator::TwoMoons => generate_moons(spec, &stream),
        Generator::TokenPattern => generate_tokens(spec, &stream),
    }
}

// ---------------------------------------------------------------------------
// gaussian clusters

/// Rotation by `angle` radians in the plane spanned by orthonormal `u`, `v`;
/// the orthogonal complement is untouched. `angle = 0` is exactly identity.
fn rotate_in_plane(x: &mut [f64], u: &[f64], v: &[f64], angle: f64) {
    if angle == 0.0 {
        return;
    }
    let (cos, sin) = (angle.cos(), angle.sin());
    let xu: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
    let xv: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
    for j in 0..x.len() {
        x[j] += (cos - 1.0) * (xu * u[j] + xv * v[j]) + sin * (xu * v[j] - xv * u[j]);
    }
}

fn generate_gaussian(spec: &TaskSpec, stream: &RngStream) -> Result<TaskData> {
    let dim = spec.input_dim;

    // Class means on a sphere of radius CLUSTER_SPREAD.
    let mut means_rng = stream.substream("task-means", "", 0);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let mut m: Vec<f64> = (0..dim).map(|_| standard_normal(&mut means_rng)).collect();
            let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in &mut m {
                *v *= CLUSTER_SPREAD / norm;
            }
            m
        })
        .collect();

    // Shift plane: two orthonormal directions from their own substream.
    let mut plane_rng = stream.substream("task-shift", "plane", 0);
    let mut u: Vec<f64> = (0..dim).map(|_| standard_normal(&mut plane_rng)).collect();
    let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    u.iter_mut().for_each(|v| *v /= nu);
    let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(&mut plane_rng)).collect();
    let uv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    for j in 0..dim {
        v[j] -= uv * u[j];
    }
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= nv);

    let split = |name: &str, n: usize, angle: f64| -> Dataset {
        let mut rng = stream.substream("task-data", name, 0);
        let mut values = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % spec.classes; // round-robin: every prefix stays balanced
            let mut x: Vec<f64> = means[label]
                .iter()
                .map(|&m| m + CLUSTER_STD * standard_normal(&mut rng))
                .collect();
            rotate_in_plane(&mut x, &u, &v, angle);
            values.extend_from_slice(&x);
            labels.push(label);
        }
        Dataset {
            inputs: Inputs::Dense { dim, values },
            labels,
        }
    };

    Ok(TaskData {
        source_train: split("source.train", spec.n_train, 0.0),
        source_dev: split("source.dev", spec.n_dev, 0.0),
        target_train: split("target.train", spec.n_train, spec.shift),
        target_dev: split("target.dev", spec.n_dev, spec.shift),
    })
}

// ---------------------------------------------------------------------------
// two moons

fn generate_moons(spec: &TaskSpec, stream: &RngStream) -> Result<TaskData> {
    let split = |name: &str, n: usize, angle: f64| -> Dataset {
        let mut rng = stream.substream("task-data", name, 0);
        let (cos, sin) = (angle.cos(), angle.sin());
        let mut values = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            let phi = rng.random_range(0.0..std::f64::consts::PI);
            let (mut x, mut y) = if label == 0 {
                (phi.cos(), phi.sin())
            } else {
                (1.0 - phi.cos(), 0.5 - phi.sin())
            };
            x += MOON_STD * standard_normal(&mut rng);
            y += MOON_STD * standard_normal(&mut rng);
            if angle != 0.0 {
                let (dx, dy) = (x - MOON_PIVOT.0, y - MOON_PIVOT.1);
                x = MOON_PIVOT.0 + cos * dx - sin * dy;
                y = MOON_PIVOT.1 + sin * dx + cos * dy;
            }
            values.push(x);
            values.push(y);
            labels.push(label);
        }
        Dataset {
            inputs: Inputs::Dense { dim: 2, values },
            labels,
        }
    };

    Ok(TaskData {
        source_train: split("source.train", spec.n_train, 0.0),
        source_dev: split("source.dev", spec.n_dev, 0.0),
        target_train: split("target.train", spec.n_train, spec.shift),
        target_dev: split("target.dev", spec.n_dev, spec.shift),
    })
}

// ---------------------------------------------------------------------------
// token pattern

/// True if the trigger bigram occurs anywhere in `seq`.
fn contains_trigger(seq: &[usize], trigger: (usize, usize)) -> bool {
    seq.windows(2).any(|w| (w[0], w[1]) == trigger)
}

fn generate_tokens(spec: &TaskSpec, stream: &RngStream) -> Result<TaskData> {
    let vocab = spec.vocab;
    let seq_len = spec.seq_len;

    // Source trigger bigram (two distinct ids); target rotates it by
    // round(shift * vocab) positions through the vocabulary.
    let mut pattern_rng = stream.substream("task-pattern", "", 0);
    let a = pattern_rng.random_range(0..vocab);
    let mut b = pattern_rng.random_range(0..vocab - 1);
    if b >= a {
        b += 1;
    }
    let offset = ((spec.shift * vocab as f64).round() as usize) % vocab;
    let shifted = ((a + offset) % vocab, (b + offset) % vocab);

    let split = |name: &str, n: usize, trigger: (usize, usize)| -> Dataset {
        let mut rng = stream.substream("task-data", name, 0);
        let mut tokens = Vec::with_capacity(n * seq_len);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            let seq = loop {
                let mut seq: Vec<usize> =
                    (0..seq_len).map(|_| rng.random_range(0..vocab)).collect();
                if label == 1 {
                    // Plant the trigger at a random position.
                    let pos = rng.random_range(0..seq_len - 1);
                    seq[pos] = trigger.0;
                    seq[pos + 1] = trigger.1;
                    break seq;
                }
                // Negatives must genuinely lack the trigger; the accidental
                // hit rate is ~(seq_len-1)/vocab^2, so rejection is cheap.
                if !contains_trigger(&seq, trigger) {
                    break seq;
                }
            };
            tokens.extend_from_slice(&seq);
            labels.push(label);
        }
        Dataset {
            inputs: Inputs::Tokens { seq_len, tokens },
            labels,
        }
    };

    Ok(TaskData {
        source_train: split("source.train", spec.n_train, (a, b)),
        source_dev: split("source.dev", spec.n_dev, (a, b)),
        target_train: split("target.train", spec.n_train, shifted),
        target_dev: split("target.dev", spec.n_dev, shifted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_spec(seed: u64, shift: f64) -> TaskSpec {
        TaskSpec {
            shift,
            seed,
            ..TaskSpec::default()
        }
    }

    /// Independent probe: nearest class centroid, fit on one split.
    fn centroid_probe(train: &Dataset, eval: &Dataset) -> f64 {
        let (dim, tv) = match &train.inputs {
            Inputs::Dense { dim, values } => (*dim, values),
            _ => panic!("dense probe"),
        };
        let classes = train.labels.iter().max().unwrap() + 1;
        let mut centroids = vec![vec![0.0; dim]; classes];
        let mut counts = vec![0usize; classes];
        for (i, &y) in train.labels.iter().enumerate() {
            counts[y] += 1;
            for j in 0..dim {
                centroids[y][j] += tv[i * dim + j];
            }
        }
        for (c, count) in counts.iter().enumerate() {
            for coord in centroids[c].iter_mut() {
                *coord /= *count as f64;
            }
        }
        let (edim, ev) = match &eval.inputs {
            Inputs::Dense { dim, values } => (*dim, values),
            _ => panic!("dense probe"),
        };
        assert_eq!(dim, edim);
        let mut hits = 0;
        for (i, &y) in eval.labels.iter().enumerate() {
            let x = &ev[i * dim..(i + 1) * dim];
            let pred = (0..classes)
                .min_by(|&a, &b| {
                    let da: f64 = x
                        .iter()
                        .zip(&centroids[a])
                        .map(|(p, q)| (p - q).powi(2))
                        .sum();
                    let db: f64 = x
                        .iter()
                        .zip(&centroids[b])
                        .map(|(p, q)| (p - q).powi(2))
                        .sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            if pred == y {
                hits += 1;
            }
        }
        hits as f64 / eval.labels.len() as f64
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let a = generate(&gaussian_spec(7, 0.5)).unwrap();
        let b = generate(&gaussian_spec(7, 0.5)).unwrap();
        let c = generate(&gaussian_spec(8, 0.5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.source_train, c.source_train);
    }

    #[test]
    fn shift_leaves_source_untouched() {
        let a = generate(&gaussian_spec(7, 0.0)).unwrap();
        let b = generate(&gaussian_spec(7, 0.9)).unwrap();
        assert_eq!(a.source_train, b.source_train);
        assert_eq!(a.source_dev, b.source_dev);
        assert_ne!(a.target_dev, b.target_dev);
    }

    #[test]
    fn zero_shift_target_equals_unshifted_pipeline() {
        // shift = 0 must be the identity transform, so the target split
        // equals what the target streams generate with no rotation at all.
        let a = generate(&gaussian_spec(3, 0.0)).unwrap();
        match (&a.source_train.inputs, &a.target_train.inputs) {
            (Inputs::Dense { values: s, .. }, Inputs::Dense { values: t, .. }) => {
                // Different streams, so values differ...
                assert_ne!(s, t);
                // ...but the distributions match: compare split means.
                let ms: f64 = s.iter().sum::<f64>() / s.len() as f64;
                let mt: f64 = t.iter().sum::<f64>() / t.len() as f64;
                assert!((ms - mt).abs() < 0.1, "means {ms} vs {mt}");
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn gaussian_source_probe_degrades_under_shift() {
        // A source-fit probe must lose accuracy on the shifted target —
        // that is the whole point of the task pair. Directional across
        // five seeds.
        let mut degradations = 0;
        for seed in 0..5 {
            let data = generate(&gaussian_spec(100 + seed, 0.5)).unwrap();
            let on_source = centroid_probe(&data.source_train, &data.source_dev);
            let on_target = centroid_probe(&data.source_train, &data.target_dev);
            // Chance is 1/classes ~ 0.17 here; the clusters overlap enough
            // that even the near-Bayes centroid probe tops out around 0.7.
            assert!(on_source > 0.55, "seed {seed}: source probe {on_source}");
            if on_target < on_source {
                degradations += 1;
            }
        }
        assert!(degradations >= 4, "only {degradations}/5 seeds degraded");
    }

    #[test]
    fn moons_probe_degrades_under_half_turn() {
        let mut degradations = 0;
        for seed in 0..5 {
            let spec = TaskSpec {
                generator: Generator::TwoMoons,
                input_dim: 2,
                classes: 2,
                shift: std::f64::consts::PI / 2.0,
                seed: 200 + seed,
                ..TaskSpec::default()
            };
            let data = generate(&spec).unwrap();
            let on_source = centroid_probe(&data.source_train, &data.source_dev);
            let on_target = centroid_probe(&data.source_train, &data.target_dev);
            if on_target < on_source {
                degradations += 1;
            }
        }
        assert!(degradations >= 4, "only {degradations}/5 seeds degraded");
    }

    #[test]
    fn token_labels_match_trigger_presence_exactly() {
        let spec = TaskSpec {
            generator: Generator::TokenPattern,
            classes: 2,
            shift: 0.5,
            seed: 9,
            ..TaskSpec::default()
        };
        let data = generate(&spec).unwrap();
        // Recover the source trigger from the generator's own substream
        // logic: label-1 sequences all contain it, label-0 none. Find the
        // unique bigram present in every positive and no negative.
        let (seq_len, tokens) = match &data.source_train.inputs {
            Inputs::Tokens { seq_len, tokens } => (*seq_len, tokens),
            _ => unreachable!(),
        };
        let mut candidates: Option<Vec<(usize, usize)>> = None;
        for (i, &label) in data.source_train.labels.iter().enumerate() {
            if label != 1 {
                continue;
            }
            let seq = &tokens[i * seq_len..(i + 1) * seq_len];
            let bigrams: Vec<(usize, usize)> = seq.windows(2).map(|w| (w[0], w[1])).collect();
            candidates = Some(match candidates {
                None => bigrams,
                Some(prev) => prev.into_iter().filter(|b| bigrams.contains(b)).collect(),
            });
        }
        let candidates = candidates.unwrap();
        assert!(!candidates.is_empty(), "positives share no bigram");
        // Every surviving candidate must be absent from all negatives.
        for (i, &label) in data.source_train.labels.iter().enumerate() {
            if label != 0 {
                continue;
            }
            let seq = &tokens[i * seq_len..(i + 1) * seq_len];
            for &c in &candidates {
                assert!(!contains_trigger(seq, c), "negative {i} contains {c:?}");
            }
        }
    }

    #[test]
    fn token_shift_moves_the_trigger() {
        // With shift = 0.5 and vocab = 12 the trigger moves by 6 ids, so a
        // detector for the source trigger scores ~chance on the target.
        let spec = TaskSpec {
            generator: Generator::TokenPattern,
            classes: 2,
            shift: 0.5,
            seed: 10,
            n_dev: 1000,
            ..TaskSpec::default()
        };
        let data = generate(&spec).unwrap();
        let find_trigger = |d: &Dataset| -> (usize, usize) {
            let (seq_len, tokens) = match &d.inputs {
                Inputs::Tokens { seq_len, tokens } => (*seq_len, tokens),
                _ => unreachable!(),
            };
            let mut cands: Option<Vec<(usize, usize)>> = None;
            for (i, &label) in d.labels.iter().enumerate().take(200) {
                if label != 1 {
                    continue;
                }
                let seq = &tokens[i * seq_len..(i + 1) * seq_len];
                let bigrams: Vec<(usize, usize)> = seq.windows(2).map(|w| (w[0], w[1])).collect();
                cands = Some(match cands {
                    None => bigrams,
                    Some(prev) => prev.into_iter().filter(|b| bigrams.contains(b)).collect(),
                });
            }
            cands.unwrap()[0]
        };
        let src = find_trigger(&data.source_dev);
        let tgt = find_trigger(&data.target_dev);
        assert_ne!(src, tgt);
        assert_eq!(((src.0 + 6) % 12, (src.1 + 6) % 12), tgt);
    }

    #[test]
    fn fraction_prefixes_nest_and_stay_balanced() {
        let data = generate(&gaussian_spec(2, 0.5)).unwrap();
        let small = data.target_train.prefix(128).unwrap();
        let large = data.target_train.prefix(256).unwrap();
        match (&small.inputs, &large.inputs) {
            (Inputs::Dense { values: s, .. }, Inputs::Dense { values: l, .. }) => {
                assert_eq!(&l[..s.len()], s.as_slice(), "prefixes must nest");
            }
            _ => unreachable!(),
        }
        let classes = small.labels.iter().max().unwrap() + 1;
        let counts: Vec<usize> = (0..classes)
            .map(|c| small.labels.iter().filter(|&&y| y == c).count())
            .collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(
            hi - lo <= 1,
            "round-robin labels keep prefixes balanced: {counts:?}"
        );
    }

    #[test]
    fn batch_gathers_requested_rows() {
        let data = generate(&gaussian_spec(2, 0.5)).unwrap();
        let (batch, labels) = data.source_train.batch(&[3, 0, 3]).unwrap();
        assert_eq!(batch.rows(), 3);
        assert_eq!(labels[0], data.source_train.labels[3]);
        assert_eq!(labels[1], data.source_train.labels[0]);
        assert!(data.source_train.batch(&[99999]).is_err());
        assert!(data.source_train.batch(&[]).is_err());
    }

    #[test]
    fn validation_rejects_degenerate_specs() {
        let bad = [
            TaskSpec {
                n_train: 0,
                ..TaskSpec::default()
            },
            TaskSpec {
                shift: -0.1,
                ..TaskSpec::default()
            },
            TaskSpec {
                input_dim: 1,
                ..TaskSpec::default()
            },
            TaskSpec {
                generator: Generator::TwoMoons,
                input_dim: 8,
                classes: 2,
                ..TaskSpec::default()
            },
            TaskSpec {
                generator: Generator::TokenPattern,
                vocab: 2,
                classes: 2,
                ..TaskSpec::default()
            },
            TaskSpec {
                generator: Generator::TokenPattern,
                seq_len: 2,
                classes: 2,
                ..TaskSpec::default()
            },
        ];
        for spec in bad {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
    }

    #[test]
    fn rotation_preserves_norms_and_fixes_complement() {
        let dim = 6;
        let stream = RngStream::new(55);
        let mut rng = stream.substream("t", "", 0);
        let mut u: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= nu);
        let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        let uv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        for j in 0..dim {
            v[j] -= uv * u[j];
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);

        let x: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        let mut rotated = x.clone();
        rotate_in_plane(&mut rotated, &u, &v, 0.8);
        let n_before: f64 = x.iter().map(|a| a * a).sum();
        let n_after: f64 = rotated.iter().map(|a| a * a).sum();
        assert!((n_before - n_after).abs() < 1e-10, "rotation must be rigid");

        // A vector orthogonal to the plane is a fixed point.
        let mut w: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        let wu: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
        let wv: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        for j in 0..dim {
            w[j] -= wu * u[j] + wv * v[j];
        }
        let mut w_rot = w.clone();
        rotate_in_plane(&mut w_rot, &u, &v, 0.8);
        for (a, b) in w.iter().zip(&w_rot) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
