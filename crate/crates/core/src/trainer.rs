//! End-to-end model assembly, training and prediction.
//!
//! One batch builds one tape: parameters are bound as leaves, the relation
//! embeddings are propagated once (they depend only on parameters), every
//! training unit contributes an attention-pooled bag representation scored
//! against the propagated embeddings, and the loss is the mean negative
//! log-likelihood plus the scaled exclusion penalty. Plain SGD with an
//! optional global-norm clip; runs are bit-reproducible under a fixed seed.

mod checkpoint;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{expand_training_units, Bag, TrainingUnit};
use crate::encoder::{bag_attention, embed_sentence, pcnn_encode, EmbeddingTables, PcnnParams};
use crate::graph::{exclusion_penalty_on, gcn_forward_on, Activation, GcnParams, GraphError, TiesGraph};
use crate::tensor::{Tape, Tensor, TensorError, VarId};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}; last finite loss {last_finite}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        last_finite: f64,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Numeric width of stored parameters. `F64` is the reference mode; `F32`
/// rounds parameters through single precision after every update so the
/// checkpoint blocks stay lossless either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(Precision::F32),
            "f64" => Some(Precision::F64),
            _ => None,
        }
    }
}

/// Hyperparameters. Defaults: kernel 3, 320
/// feature maps, 50/5 embedding dims, learning rate 0.19, threshold 0.18,
/// harmonic factor 0.25, two propagation layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Transition-filter threshold.
    pub theta: f64,
    /// Harmonic factor balancing the exclusion penalty against the NLL.
    pub lambda: f64,
    pub gcn_layers: usize,
    pub kernel: usize,
    pub feature_maps: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub max_pos_distance: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// When false the transition matrix is replaced by the identity and the
    /// penalty weight is forced to zero (the plain encoder+attention
    /// ablation).
    pub graph_enabled: bool,
    pub activation: Activation,
    /// Global gradient-norm clip; `None` disables clipping for fidelity runs.
    pub clip_norm: Option<f64>,
    pub precision: Precision,
    /// Renormalize transition rows after thresholding (experiment flag).
    pub renormalize_rows: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.19,
            theta: 0.18,
            lambda: 0.25,
            gcn_layers: 2,
            kernel: 3,
            feature_maps: 320,
            word_dim: 50,
            pos_dim: 5,
            max_pos_distance: 30,
            batch_size: 50,
            epochs: 10,
            seed: 7,
            graph_enabled: true,
            activation: Activation::Tanh,
            clip_norm: Some(5.0),
            precision: Precision::F64,
            renormalize_rows: false,
        }
    }
}

impl TrainConfig {
    /// Relation-embedding dimension; equals the sentence-vector length so
    /// attention queries and classifier scores are plain dot products.
    pub fn rel_dim(&self) -> usize {
        3 * self.feature_maps
    }

    /// Per-token input width fed to the convolution.
    pub fn input_dim(&self) -> usize {
        self.word_dim + 2 * self.pos_dim
    }

    /// Number of position-embedding rows.
    pub fn pos_vocab(&self) -> usize {
        2 * self.max_pos_distance + 1
    }

    /// Penalty weight actually applied; zero when the graph is disabled.
    pub fn effective_lambda(&self) -> f64 {
        if self.graph_enabled {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(TrainError::Config("lambda must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(TrainError::Config(format!(
                "theta {} outside [0, 1)",
                self.theta
            )));
        }
        if self.gcn_layers == 0 {
            return Err(TrainError::Config("need at least one propagation layer".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(TrainError::Config(format!(
                "kernel width must be odd, got {}",
                self.kernel
            )));
        }
        for (name, v) in [
            ("feature_maps", self.feature_maps),
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("max_pos_distance", self.max_pos_distance),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// All learnable state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tables: EmbeddingTables,
    pub pcnn: PcnnParams,
    pub gcn: GcnParams,
    pub class_bias: Tensor,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, radius: f64) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(-radius..radius)).collect())
        .expect("shape/length agree")
}

impl ModelParams {
    /// Init from the configured seed alone.
    pub fn init_seeded(config: &TrainConfig, vocab_size: usize, k: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::init(config, vocab_size, k, &mut rng)
    }

    /// Fan-balanced uniform init for weights and filters, flat ±0.25 for the
    /// embedding tables, zero biases.
    pub fn init(config: &TrainConfig, vocab_size: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = config.rel_dim();
        let d_in = config.input_dim();
        let filter_fan = (config.kernel * d_in + config.feature_maps) as f64;
        let filter_radius = (6.0 / filter_fan).sqrt();
        let weight_radius = (6.0 / (2 * d) as f64).sqrt();
        let mut params = Self {
            tables: EmbeddingTables {
                word: uniform_tensor(rng, vec![vocab_size, config.word_dim], 0.25),
                pos1: uniform_tensor(rng, vec![config.pos_vocab(), config.pos_dim], 0.25),
                pos2: uniform_tensor(rng, vec![config.pos_vocab(), config.pos_dim], 0.25),
            },
            pcnn: PcnnParams {
                filters: uniform_tensor(
                    rng,
                    vec![config.kernel, d_in, config.feature_maps],
                    filter_radius,
                ),
                bias: Tensor::zeros(vec![config.feature_maps]),
            },
            gcn: GcnParams {
                h0: uniform_tensor(rng, vec![k, d], 0.25),
                weights: (0..config.gcn_layers)
                    .map(|_| uniform_tensor(rng, vec![d, d], weight_radius))
                    .collect(),
            },
            class_bias: Tensor::zeros(vec![k]),
        };
        if config.precision == Precision::F32 {
            params.quantize_f32();
        }
        params
    }

    pub fn relation_count(&self) -> usize {
        self.class_bias.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.tables.word.rows()
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut list = vec![
            &self.tables.word,
            &self.tables.pos1,
            &self.tables.pos2,
            &self.pcnn.filters,
            &self.pcnn.bias,
            &self.gcn.h0,
        ];
        list.extend(self.gcn.weights.iter());
        list.push(&self.class_bias);
        list
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut list = vec![
            &mut self.tables.word,
            &mut self.tables.pos1,
            &mut self.tables.pos2,
            &mut self.pcnn.filters,
            &mut self.pcnn.bias,
            &mut self.gcn.h0,
        ];
        list.extend(self.gcn.weights.iter_mut());
        list.push(&mut self.class_bias);
        list
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Rounds every value through single precision.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.values_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            word: tape.leaf(&self.tables.word),
            pos1: tape.leaf(&self.tables.pos1),
            pos2: tape.leaf(&self.tables.pos2),
            filters: tape.leaf(&self.pcnn.filters),
            filter_bias: tape.leaf(&self.pcnn.bias),
            h0: tape.leaf(&self.gcn.h0),
            gcn_weights: self.gcn.weights.iter().map(|w| tape.leaf(w)).collect(),
            class_bias: tape.leaf(&self.class_bias),
        }
    }
}

/// Tape handles for one binding of the parameters.
struct BoundParams {
    word: VarId,
    pos1: VarId,
    pos2: VarId,
    filters: VarId,
    filter_bias: VarId,
    h0: VarId,
    gcn_weights: Vec<VarId>,
    class_bias: VarId,
}

impl BoundParams {
    fn ids(&self) -> Vec<VarId> {
        let mut ids = vec![
            self.word,
            self.pos1,
            self.pos2,
            self.filters,
            self.filter_bias,
            self.h0,
        ];
        ids.extend(self.gcn_weights.iter().copied());
        ids.push(self.class_bias);
        ids
    }
}

fn effective_transition(graph: &TiesGraph, config: &TrainConfig) -> Vec<f64> {
    if config.graph_enabled {
        graph.transition.clone()
    } else {
        let k = graph.k;
        let mut identity = vec![0.0; k * k];
        for i in 0..k {
            identity[i * k + i] = 1.0;
        }
        identity
    }
}

struct BatchForward {
    bound: BoundParams,
    loss: VarId,
    mean_nll: VarId,
    penalty: VarId,
    unit_logits: Vec<VarId>,
}

fn encode_bag_reps(
    tape: &mut Tape,
    bound: &BoundParams,
    bag: &Bag,
) -> Result<Vec<VarId>, TensorError> {
    bag.sentences
        .iter()
        .map(|inst| {
            let embedded = embed_sentence(tape, bound.word, bound.pos1, bound.pos2, inst)?;
            pcnn_encode(
                tape,
                embedded,
                bound.filters,
                bound.filter_bias,
                inst.head_pos,
                inst.tail_pos,
            )
        })
        .collect()
}

fn build_batch(
    tape: &mut Tape,
    units: &[TrainingUnit],
    bags: &[Bag],
    params: &ModelParams,
    graph: &TiesGraph,
    config: &TrainConfig,
) -> Result<BatchForward, TrainError> {
    if units.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let k = graph.k;
    let bound = params.bind(tape);
    let transition = effective_transition(graph, config);
    let h = gcn_forward_on(tape, &transition, k, bound.h0, &bound.gcn_weights, config.activation)?;
    let bias_row = tape.reshape(bound.class_bias, vec![1, k])?;

    let mut nlls = Vec::with_capacity(units.len());
    let mut unit_logits = Vec::with_capacity(units.len());
    for unit in units {
        let bag = &bags[unit.bag];
        let reps = encode_bag_reps(tape, &bound, bag)?;
        let query = tape.row(h, unit.relation)?;
        let (bag_rep, _) = bag_attention(tape, &reps, query)?;
        let raw_scores = tape.matmul_nt(bag_rep, h)?;
        let logits = tape.add(raw_scores, bias_row)?;
        nlls.push(tape.nll_from_logits(logits, unit.relation)?);
        unit_logits.push(logits);
    }
    let nll_sum = tape.add_n(&nlls)?;
    let mean_nll = tape.scale(nll_sum, 1.0 / units.len() as f64);
    let penalty = exclusion_penalty_on(tape, h, &graph.exclusion, k)?;
    let lambda = config.effective_lambda();
    let loss = if lambda != 0.0 {
        let weighted = tape.scale(penalty, lambda);
        tape.add(mean_nll, weighted)?
    } else {
        mean_nll
    };
    Ok(BatchForward {
        bound,
        loss,
        mean_nll,
        penalty,
        unit_logits,
    })
}

/// Joint objective over a batch of training units: mean NLL of each unit's
/// gold relation under gold-queried attention, plus `lambda` times the
/// exclusion penalty. Returns the scalar loss and per-unit logits.
pub fn forward_loss(
    units: &[TrainingUnit],
    bags: &[Bag],
    params: &ModelParams,
    graph: &TiesGraph,
    config: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let mut tape = Tape::new();
    let fwd = build_batch(&mut tape, units, bags, params, graph, config)?;
    let logits = fwd
        .unit_logits
        .iter()
        .map(|&id| tape.values(id).to_vec())
        .collect();
    Ok((tape.scalar_value(fwd.loss), logits))
}

/// Mean NLL and raw penalty of a batch, for diagnostics.
pub fn forward_loss_parts(
    units: &[TrainingUnit],
    bags: &[Bag],
    params: &ModelParams,
    graph: &TiesGraph,
    config: &TrainConfig,
) -> Result<(f64, f64), TrainError> {
    let mut tape = Tape::new();
    let fwd = build_batch(&mut tape, units, bags, params, graph, config)?;
    Ok((tape.scalar_value(fwd.mean_nll), tape.scalar_value(fwd.penalty)))
}

/// Per-relation prediction probabilities for one bag. Attention runs once per
/// candidate relation with that relation's propagated embedding as the query;
/// the k bag scores go through one softmax.
pub fn predict_bag(
    bag: &Bag,
    params: &ModelParams,
    graph: &TiesGraph,
    config: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    let k = graph.k;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let transition = effective_transition(graph, config);
    let h = gcn_forward_on(
        &mut tape,
        &transition,
        k,
        bound.h0,
        &bound.gcn_weights,
        config.activation,
    )?;
    let reps = encode_bag_reps(&mut tape, &bound, bag)?;
    let mut scores = Vec::with_capacity(k);
    for relation in 0..k {
        let query = tape.row(h, relation)?;
        let (bag_rep, _) = bag_attention(&mut tape, &reps, query)?;
        let matched = tape.mul(bag_rep, query)?;
        scores.push(tape.sum(matched));
    }
    let stacked = tape.stack_rows(&scores)?;
    let flat = tape.reshape(stacked, vec![k])?;
    let logits = tape.add(flat, bound.class_bias)?;
    let probs = tape.softmax_row(logits)?;
    Ok(tape.values(probs).to_vec())
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean loss per epoch, unit-weighted across batches.
    pub epoch_losses: Vec<f64>,
}

pub fn train(
    bags: &[Bag],
    vocab_size: usize,
    graph: &TiesGraph,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_progress(bags, vocab_size, graph, config, |_, _| {})
}

pub fn train_with_progress(
    bags: &[Bag],
    vocab_size: usize,
    graph: &TiesGraph,
    config: &TrainConfig,
    progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome, TrainError> {
    let params = ModelParams::init_seeded(config, vocab_size, graph.k);
    train_from(params, bags, graph, config, progress)
}

/// Mini-batch SGD over the expanded training units starting from the given
/// parameters (fresh or preloaded with word vectors). Shuffling draws from
/// its own seeded stream, so identical `(config, seed)` runs reproduce
/// parameters bit for bit in 64-bit mode.
pub fn train_from(
    mut params: ModelParams,
    bags: &[Bag],
    graph: &TiesGraph,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let k = graph.k;
    if params.relation_count() != k {
        return Err(TrainError::Config(format!(
            "parameters built for k={}, graph has k={k}",
            params.relation_count()
        )));
    }
    for bag in bags {
        if let Some(&label) = bag.labels.iter().next_back() {
            if label >= k {
                return Err(TrainError::Config(format!(
                    "bag {} labels relation {label}, but the graph has k={k}",
                    bag.bag_id
                )));
            }
        }
    }
    let mut units = expand_training_units(bags);
    if units.is_empty() {
        return Err(TrainError::Config("no training units".into()));
    }

    // shuffle stream independent of the init stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut last_finite = f64::NAN;

    for epoch in 0..config.epochs {
        units.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut unit_count = 0usize;
        for (batch_no, batch) in units.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let fwd = build_batch(&mut tape, batch, bags, &params, graph, config)?;
            let loss = tape.scalar_value(fwd.loss);
            if !loss.is_finite() || loss > 1e6 {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_no,
                    loss,
                    last_finite,
                });
            }
            last_finite = loss;
            loss_sum += loss * batch.len() as f64;
            unit_count += batch.len();

            tape.backward(fwd.loss)?;
            let mut grads: Vec<Vec<f64>> = fwd
                .bound
                .ids()
                .iter()
                .map(|&id| tape.grad(id).to_vec())
                .collect();
            if cfg!(debug_assertions) {
                audit_gradients(&grads);
            }
            if let Some(clip) = config.clip_norm {
                clip_global_norm(&mut grads, clip);
            }
            let lr = config.learning_rate;
            for (tensor, grad) in params.tensors_mut().into_iter().zip(&grads) {
                for (v, g) in tensor.values_mut().iter_mut().zip(grad) {
                    *v -= lr * g;
                }
                tensor.set_grad(grad.clone());
            }
            if config.precision == Precision::F32 {
                params.quantize_f32();
            }
            debug_assert!(params.all_finite(), "non-finite parameter after update");
        }
        let epoch_loss = loss_sum / unit_count as f64;
        progress(epoch, epoch_loss);
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainOutcome {
        params,
        epoch_losses,
    })
}

fn audit_gradients(grads: &[Vec<f64>]) {
    for (i, grad) in grads.iter().enumerate() {
        debug_assert!(
            grad.iter().all(|g| g.is_finite()),
            "parameter {i} received a non-finite gradient"
        );
        debug_assert!(
            grad.iter().any(|&g| g != 0.0),
            "parameter {i} received no gradient (dead path)"
        );
    }
}

fn clip_global_norm(grads: &mut [Vec<f64>], clip: f64) {
    let norm: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *g *= scale;
        }
    }
}
