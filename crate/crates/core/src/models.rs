//! Toy models: an MLP classifier and a tiny transformer encoder.
//!
//! Parameters live in named [`ParamGroup`]s, one per weight matrix or
//! vector, in a fixed order. Each group carries its own optimizer state
//! (first moment, infinity norm, sensitivity average) and a `perturbable`
//! flag that marks it as eligible for weight noise. By default only the
//! 2-D weight matrices of the trainable stack are perturbable; layer-norm
//! gains/biases, plain biases and the classifier head never are, and
//! embedding tables are opt-in.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{standard_normal, RngStream};

/// Architecture description; everything needed to rebuild a model
/// deterministically (together with an init seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Fully connected tanh network. `layers` lists the width of every
    /// layer including input and output, so `[4, 8, 2]` is one hidden
    /// layer of 8 units between a 4-d input and 2 classes.
    Mlp { layers: Vec<usize> },
    /// Single-stack transformer encoder over a token sequence: learned
    /// token + position embeddings, `blocks` post-norm encoder blocks of
    /// multi-head self-attention and a relu MLP, mean pooling, and a
    /// linear classifier head.
    TinyTransformer {
        vocab: usize,
        embed_dim: usize,
        num_heads: usize,
        seq_len: usize,
        blocks: usize,
        ffn_dim: usize,
        classes: usize,
        /// Whether embedding tables are eligible for weight noise.
        #[serde(default)]
        perturb_embeddings: bool,
    },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Mlp { layers } => {
                if layers.len() < 2 {
                    return Err(Error::Spec(format!(
                        "mlp needs at least input and output widths, got {layers:?}"
                    )));
                }
                if layers.contains(&0) {
                    return Err(Error::Spec(format!("mlp layer width of 0 in {layers:?}")));
                }
                if *layers.last().unwrap() < 2 {
                    return Err(Error::Spec("mlp output width must be >= 2 classes".into()));
                }
                Ok(())
            }
            ModelSpec::TinyTransformer {
                vocab,
                embed_dim,
                num_heads,
                seq_len,
                blocks,
                ffn_dim,
                classes,
                ..
            } => {
                if *vocab < 2 {
                    return Err(Error::Spec("transformer vocab must be >= 2".into()));
                }
                if *embed_dim == 0 || *ffn_dim == 0 || *seq_len == 0 {
                    return Err(Error::Spec(
                        "transformer dims (embed, ffn, seq_len) must be positive".into(),
                    ));
                }
                if *num_heads == 0 || embed_dim % num_heads != 0 {
                    return Err(Error::Spec(format!(
                        "embed_dim {embed_dim} must be a positive multiple of num_heads {num_heads}"
                    )));
                }
                if !(1..=2).contains(blocks) {
                    return Err(Error::Spec(format!(
                        "transformer supports 1 or 2 blocks, got {blocks}"
                    )));
                }
                if *classes < 2 {
                    return Err(Error::Spec("transformer classes must be >= 2".into()));
                }
                Ok(())
            }
        }
    }

    /// Number of output classes.
    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::Mlp { layers } => *layers.last().unwrap_or(&0),
            ModelSpec::TinyTransformer { classes, .. } => *classes,
        }
    }
}

/// One named parameter tensor plus its per-parameter optimizer state.
///
/// `first_moment`, `inf_norm` and `sensitivity` always have the same shape
/// as `weights` and start at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub weights: Tensor,
    pub first_moment: Tensor,
    pub inf_norm: Tensor,
    pub sensitivity: Tensor,
    /// Eligible for weight noise. Never true for 1-D parameters.
    pub perturbable: bool,
}

impl ParamGroup {
    fn new(name: impl Into<String>, weights: Tensor, perturbable: bool) -> Self {
        let shape = weights.shape().to_vec();
        ParamGroup {
            name: name.into(),
            first_moment: Tensor::zeros(shape.clone()),
            inf_norm: Tensor::zeros(shape.clone()),
            sensitivity: Tensor::zeros(shape),
            weights,
            perturbable,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// One minibatch of model input.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchInput {
    /// `rows` feature vectors of width `dim`, row-major.
    Dense {
        rows: usize,
        dim: usize,
        values: Vec<f64>,
    },
    /// `rows` token sequences of equal length, flattened row-major.
    Tokens {
        rows: usize,
        seq_len: usize,
        tokens: Vec<usize>,
    },
}

impl BatchInput {
    pub fn rows(&self) -> usize {
        match self {
            BatchInput::Dense { rows, .. } | BatchInput::Tokens { rows, .. } => *rows,
        }
    }
}

/// Result of wiring a forward pass onto a tape.
#[derive(Debug)]
pub struct Forward {
    /// `[batch, classes]` pre-softmax scores.
    pub logits: NodeId,
    /// Leaf node per parameter group, in group order.
    pub leaves: Vec<NodeId>,
}

/// A concrete model: spec + parameter groups in a fixed, documented order.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    init_seed: u64,
    pub groups: Vec<ParamGroup>,
}

impl Model {
    /// Deterministically initializes parameters from `seed`. Weight
    /// matrices draw `N(0, 1/fan_in)` entries from a per-group substream;
    /// biases start at zero and layer-norm gains at one, so two models
    /// built from the same spec and seed are bit-identical.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let stream = RngStream::new(seed);
        let mut groups = Vec::new();

        let weight = |name: &str, rows: usize, cols: usize, fan_in: usize| -> Tensor {
            let mut rng = stream.substream("init", name, 0);
            let std = 1.0 / (fan_in as f64).sqrt();
            let values = (0..rows * cols)
                .map(|_| std * standard_normal(&mut rng))
                .collect();
            Tensor::new(vec![rows, cols], values).expect("sized by construction")
        };

        match spec {
            ModelSpec::Mlp { layers } => {
                for i in 0..layers.len() - 1 {
                    let (fan_in, fan_out) = (layers[i], layers[i + 1]);
                    let name = format!("mlp.{i}.weight");
                    groups.push(ParamGroup::new(
                        name.clone(),
                        weight(&name, fan_in, fan_out, fan_in),
                        true,
                    ));
                    groups.push(ParamGroup::new(
                        format!("mlp.{i}.bias"),
                        Tensor::zeros(vec![fan_out]),
                        false,
                    ));
                }
            }
            ModelSpec::TinyTransformer {
                vocab,
                embed_dim,
                seq_len,
                blocks,
                ffn_dim,
                classes,
                perturb_embeddings,
                ..
            } => {
                let d = *embed_dim;
                groups.push(ParamGroup::new(
                    "embedding.token",
                    weight("embedding.token", *vocab, d, d),
                    *perturb_embeddings,
                ));
                groups.push(ParamGroup::new(
                    "embedding.position",
                    weight("embedding.position", *seq_len, d, d),
                    *perturb_embeddings,
                ));
                for b in 0..*blocks {
                    for proj in ["wq", "wk", "wv", "wo"] {
                        let name = format!("encoder.{b}.attn.{proj}");
                        groups.push(ParamGroup::new(name.clone(), weight(&name, d, d, d), true));
                    }
                    groups.push(ParamGroup::new(
                        format!("encoder.{b}.attn.layernorm.gain"),
                        ones(d),
                        false,
                    ));
                    groups.push(ParamGroup::new(
                        format!("encoder.{b}.attn.layernorm.bias"),
                        Tensor::zeros(vec![d]),
                        false,
                    ));
                    let w1 = format!("encoder.{b}.ffn.w1");
                    groups.push(ParamGroup::new(
                        w1.clone(),
                        weight(&w1, d, *ffn_dim, d),
                        true,
                    ));
                    groups.push(ParamGroup::new(
                        format!("encoder.{b}.ffn.b1"),
                        Tensor::zeros(vec![*ffn_dim]),
                        false,
                    ));
                    let w2 = format!("encoder.{b}.ffn.w2");
                    groups.push(ParamGroup::new(
                        w2.clone(),
                        weight(&w2, *ffn_dim, d, *ffn_dim),
                        true,
                    ));
                    groups.push(ParamGroup::new(
                        format!("encoder.{b}.ffn.b2"),
                        Tensor::zeros(vec![d]),
                        false,
                    ));
                    groups.push(ParamGroup::new(
                        format!("encoder.{b}.ffn.layernorm.gain"),
                        ones(d),
                        false,
                    ));
                    groups.push(ParamGroup::new(
                        format!("encoder.{b}.ffn.layernorm.bias"),
                        Tensor::zeros(vec![d]),
                        false,
                    ));
                }
                groups.push(ParamGroup::new(
                    "head.weight",
                    weight("head.weight", d, *classes, d),
                    false,
                ));
                groups.push(ParamGroup::new(
                    "head.bias",
                    Tensor::zeros(vec![*classes]),
                    false,
                ));
            }
        }

        Ok(Model {
            spec: spec.clone(),
            init_seed: seed,
            groups,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Total scalar parameter count across all groups.
    pub fn param_count(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    /// True if every parameter in every group is finite.
    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(|g| g.weights.is_finite())
    }

    /// Clears any gradients left on parameter tensors.
    pub fn clear_grads(&mut self) {
        for g in &mut self.groups {
            g.weights.clear_grad();
        }
    }

    /// Copies gradients from a consumed tape back onto the parameter
    /// tensors, leaf-by-leaf in group order.
    pub fn pull_grads(&mut self, tape: &Tape, fwd: &Forward) -> Result<()> {
        if !tape.is_consumed() {
            return Err(Error::State(
                "pull_grads requires a tape on which backward has run".into(),
            ));
        }
        if fwd.leaves.len() != self.groups.len() {
            return Err(Error::State(
                "forward handle does not belong to this model".into(),
            ));
        }
        for (group, &leaf) in self.groups.iter_mut().zip(&fwd.leaves) {
            group.weights.set_grad(tape.grad(leaf).to_vec())?;
        }
        Ok(())
    }

    /// Wires a forward pass for one minibatch onto `tape`, registering one
    /// leaf per parameter group, and returns the logits node.
    pub fn forward(&self, tape: &mut Tape, input: &BatchInput) -> Result<Forward> {
        let leaves: Vec<NodeId> = self.groups.iter().map(|g| tape.leaf(&g.weights)).collect();
        let logits = match &self.spec {
            ModelSpec::Mlp { layers } => self.forward_mlp(tape, input, layers, &leaves)?,
            ModelSpec::TinyTransformer { .. } => self.forward_transformer(tape, input, &leaves)?,
        };
        Ok(Forward { logits, leaves })
    }

    fn forward_mlp(
        &self,
        tape: &mut Tape,
        input: &BatchInput,
        layers: &[usize],
        leaves: &[NodeId],
    ) -> Result<NodeId> {
        let (rows, dim, values) = match input {
            BatchInput::Dense { rows, dim, values } => (*rows, *dim, values),
            BatchInput::Tokens { .. } => {
                return Err(Error::InvalidInput(
                    "mlp takes dense inputs, got token sequences".into(),
                ))
            }
        };
        if dim != layers[0] {
            return Err(Error::ShapeMismatch {
                op: "mlp_input",
                lhs: vec![rows, dim],
                rhs: vec![rows, layers[0]],
            });
        }
        if rows == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut x = tape.leaf(&Tensor::new(vec![rows, dim], values.clone())?);
        let n_layers = layers.len() - 1;
        for i in 0..n_layers {
            let w = leaves[2 * i];
            let b = leaves[2 * i + 1];
            let h = tape.matmul(x, w)?;
            let h = tape.add_row_bias(h, b)?;
            x = if i + 1 < n_layers { tape.tanh(h) } else { h };
        }
        Ok(x)
    }

    fn forward_transformer(
        &self,
        tape: &mut Tape,
        input: &BatchInput,
        leaves: &[NodeId],
    ) -> Result<NodeId> {
        let ModelSpec::TinyTransformer {
            embed_dim,
            num_heads,
            seq_len,
            blocks,
            ..
        } = &self.spec
        else {
            unreachable!("checked by caller");
        };
        let (rows, batch_seq_len, tokens) = match input {
            BatchInput::Tokens {
                rows,
                seq_len,
                tokens,
            } => (*rows, *seq_len, tokens),
            BatchInput::Dense { .. } => {
                return Err(Error::InvalidInput(
                    "transformer takes token sequences, got dense inputs".into(),
                ))
            }
        };
        if batch_seq_len != *seq_len {
            return Err(Error::ShapeMismatch {
                op: "transformer_input",
                lhs: vec![rows, batch_seq_len],
                rhs: vec![rows, *seq_len],
            });
        }
        if rows == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }

        // Leaf layout (see `Model::init`): token, position, then 12 nodes
        // per block, then head weight and bias.
        let tok_table = leaves[0];
        let pos_table = leaves[1];
        let per_block = 12;
        let head_w = leaves[2 + blocks * per_block];
        let head_b = leaves[2 + blocks * per_block + 1];

        let d = *embed_dim;
        let heads = *num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut pooled = Vec::with_capacity(rows);
        for s in 0..rows {
            let ids = &tokens[s * seq_len..(s + 1) * seq_len];
            let e = tape.embedding(tok_table, ids)?;
            let mut x = tape.add(e, pos_table)?;
            for b in 0..*blocks {
                let at = 2 + b * per_block;
                let (wq, wk, wv, wo) = (leaves[at], leaves[at + 1], leaves[at + 2], leaves[at + 3]);
                let (ln1_g, ln1_b) = (leaves[at + 4], leaves[at + 5]);
                let (w1, b1, w2, b2) = (
                    leaves[at + 6],
                    leaves[at + 7],
                    leaves[at + 8],
                    leaves[at + 9],
                );
                let (ln2_g, ln2_b) = (leaves[at + 10], leaves[at + 11]);

                let q = tape.matmul(x, wq)?;
                let k = tape.matmul(x, wk)?;
                let v = tape.matmul(x, wv)?;
                let mut ctx_heads = Vec::with_capacity(heads);
                for h in 0..heads {
                    let qh = tape.slice_cols(q, h * dh, dh)?;
                    let kh = tape.slice_cols(k, h * dh, dh)?;
                    let vh = tape.slice_cols(v, h * dh, dh)?;
                    let scores = tape.matmul_nt(qh, kh)?;
                    let scores = tape.scale(scores, scale);
                    let attn = tape.softmax_rows(scores)?;
                    ctx_heads.push(tape.matmul(attn, vh)?);
                }
                let ctx = tape.concat_cols(&ctx_heads)?;
                let attn_out = tape.matmul(ctx, wo)?;
                let res = tape.add(x, attn_out)?;
                x = tape.layer_norm(res, ln1_g, ln1_b)?;

                let f = tape.matmul(x, w1)?;
                let f = tape.add_row_bias(f, b1)?;
                let f = tape.relu(f);
                let f = tape.matmul(f, w2)?;
                let f = tape.add_row_bias(f, b2)?;
                let res = tape.add(x, f)?;
                x = tape.layer_norm(res, ln2_g, ln2_b)?;
            }
            pooled.push(tape.mean_rows(x)?);
        }
        let batch = tape.concat_rows(&pooled)?;
        let logits = tape.matmul(batch, head_w)?;
        tape.add_row_bias(logits, head_b)
    }

    /// Argmax class predictions without touching gradients or parameters.
    pub fn predict(&self, input: &BatchInput) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, input)?;
        let c = self.spec.classes();
        let logits = tape.values(fwd.logits);
        Ok(logits
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j)
                    .unwrap_or(0)
            })
            .collect())
    }

    /// Fraction of `labels` matched by argmax predictions.
    pub fn accuracy(&self, input: &BatchInput, labels: &[usize]) -> Result<f64> {
        if labels.len() != input.rows() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} input rows",
                labels.len(),
                input.rows()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidInput("accuracy of an empty batch".into()));
        }
        let preds = self.predict(input)?;
        let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn ones(n: usize) -> Tensor {
    Tensor::new(vec![n], vec![1.0; n]).expect("sized by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_spec() -> ModelSpec {
        ModelSpec::Mlp {
            layers: vec![4, 8, 2],
        }
    }

    fn tt_spec() -> ModelSpec {
        ModelSpec::TinyTransformer {
            vocab: 12,
            embed_dim: 16,
            num_heads: 2,
            seq_len: 6,
            blocks: 1,
            ffn_dim: 32,
            classes: 2,
            perturb_embeddings: false,
        }
    }

    fn dense_batch(rows: usize, dim: usize, seed: u64) -> BatchInput {
        let stream = RngStream::new(seed);
        let mut rng = stream.substream("test-input", "", 0);
        BatchInput::Dense {
            rows,
            dim,
            values: (0..rows * dim).map(|_| standard_normal(&mut rng)).collect(),
        }
    }

    #[test]
    fn mlp_param_count_matches_hand_count() {
        let m = Model::init(&mlp_spec(), 0).unwrap();
        // 4*8 + 8 + 8*2 + 2
        assert_eq!(m.param_count(), 58);
        assert_eq!(m.groups.len(), 4);
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = Model::init(&mlp_spec(), 7).unwrap();
        let b = Model::init(&mlp_spec(), 7).unwrap();
        let c = Model::init(&mlp_spec(), 8).unwrap();
        for (ga, gb) in a.groups.iter().zip(&b.groups) {
            assert_eq!(ga.weights.values(), gb.weights.values());
        }
        assert_ne!(
            a.groups[0].weights.values(),
            c.groups[0].weights.values(),
            "different seeds must give different weights"
        );
    }

    #[test]
    fn mlp_perturbable_covers_exactly_weight_matrices() {
        let m = Model::init(&mlp_spec(), 0).unwrap();
        for g in &m.groups {
            let is_matrix = g.weights.shape().len() == 2;
            assert_eq!(g.perturbable, is_matrix, "group {}", g.name);
        }
    }

    #[test]
    fn transformer_excludes_layernorm_biases_and_head() {
        let m = Model::init(&tt_spec(), 3).unwrap();
        assert!(m.group("encoder.0.attn.layernorm.gain").is_some());
        for g in &m.groups {
            if g.name.contains("layernorm") || g.name.starts_with("head.") {
                assert!(!g.perturbable, "group {} must not be perturbable", g.name);
            }
            if g.weights.shape().len() == 1 {
                assert!(
                    !g.perturbable,
                    "1-D group {} must not be perturbable",
                    g.name
                );
            }
            if g.name.contains(".attn.w") || g.name.contains(".ffn.w") {
                assert!(
                    g.perturbable,
                    "encoder matrix {} must be perturbable",
                    g.name
                );
            }
            // Embeddings stay frozen out of the noise set unless opted in.
            if g.name.starts_with("embedding.") {
                assert!(!g.perturbable);
            }
        }
    }

    #[test]
    fn embeddings_opt_in_to_perturbation() {
        let ModelSpec::TinyTransformer {
            vocab,
            embed_dim,
            num_heads,
            seq_len,
            blocks,
            ffn_dim,
            classes,
            ..
        } = tt_spec()
        else {
            unreachable!()
        };
        let spec = ModelSpec::TinyTransformer {
            vocab,
            embed_dim,
            num_heads,
            seq_len,
            blocks,
            ffn_dim,
            classes,
            perturb_embeddings: true,
        };
        let m = Model::init(&spec, 0).unwrap();
        assert!(m.group("embedding.token").unwrap().perturbable);
        assert!(m.group("embedding.position").unwrap().perturbable);
    }

    #[test]
    fn mlp_forward_shapes_and_finite_logits() {
        let m = Model::init(&mlp_spec(), 1).unwrap();
        let mut tape = Tape::new();
        let fwd = m.forward(&mut tape, &dense_batch(5, 4, 11)).unwrap();
        assert_eq!(tape.shape(fwd.logits), &[5, 2]);
        assert!(tape.values(fwd.logits).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mlp_rejects_wrong_input_width() {
        let m = Model::init(&mlp_spec(), 1).unwrap();
        let mut tape = Tape::new();
        let err = m.forward(&mut tape, &dense_batch(5, 3, 11)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn transformer_forward_shapes_and_grads_flow_everywhere() {
        let m = Model::init(&tt_spec(), 5).unwrap();
        let mut tape = Tape::new();
        let input = BatchInput::Tokens {
            rows: 3,
            seq_len: 6,
            tokens: vec![0, 1, 2, 3, 4, 5, 5, 4, 3, 2, 1, 0, 7, 7, 7, 7, 7, 7],
        };
        let fwd = m.forward(&mut tape, &input).unwrap();
        assert_eq!(tape.shape(fwd.logits), &[3, 2]);
        let loss = tape.softmax_cross_entropy(fwd.logits, &[0, 1, 0]).unwrap();
        tape.backward(loss).unwrap();
        let mut m2 = m.clone();
        m2.pull_grads(&tape, &fwd).unwrap();
        for g in &m2.groups {
            let grad = g.weights.grad().expect("every group gets a gradient");
            let norm: f64 = grad.iter().map(|v| v * v).sum();
            assert!(
                norm > 0.0,
                "gradient of {} is identically zero — broken wiring?",
                g.name
            );
        }
    }

    #[test]
    fn predict_does_not_disturb_parameters() {
        let m = Model::init(&mlp_spec(), 2).unwrap();
        let before: Vec<Vec<f64>> = m
            .groups
            .iter()
            .map(|g| g.weights.values().to_vec())
            .collect();
        let _ = m.predict(&dense_batch(4, 4, 3)).unwrap();
        for (g, b) in m.groups.iter().zip(&before) {
            assert_eq!(g.weights.values(), b.as_slice());
        }
    }

    #[test]
    fn validate_rejects_bad_specs() {
        assert!(ModelSpec::Mlp { layers: vec![4] }.validate().is_err());
        assert!(ModelSpec::Mlp {
            layers: vec![4, 0, 2]
        }
        .validate()
        .is_err());
        let bad_heads = ModelSpec::TinyTransformer {
            vocab: 10,
            embed_dim: 16,
            num_heads: 3,
            seq_len: 4,
            blocks: 1,
            ffn_dim: 8,
            classes: 2,
            perturb_embeddings: false,
        };
        assert!(bad_heads.validate().is_err());
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let m = Model::init(&mlp_spec(), 4).unwrap();
        let input = dense_batch(8, 4, 9);
        let preds = m.predict(&input).unwrap();
        let acc = m.accuracy(&input, &preds).unwrap();
        assert_eq!(acc, 1.0);
        let wrong: Vec<usize> = preds.iter().map(|p| 1 - p).collect();
        assert_eq!(m.accuracy(&input, &wrong).unwrap(), 0.0);
    }
}
