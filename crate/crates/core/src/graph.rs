//! The relation-tie graph and its two forces.
//!
//! Co-occurrence counts over unique entity pairs give the adjacency matrix
//! `M` and per-relation occurrence counts `N`. Dividing rows of `M` by `N`
//! gives a conditional-probability transition matrix; entries below the
//! threshold are zeroed and the diagonal is forced to 1 so every relation
//! keeps its own representation. GCN layers propagate relation embeddings
//! over the filtered matrix (the attractive side); the exclusion mask marks
//! never-co-occurring pairs whose embedding similarity is penalized (the
//! repulsive side).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Bag;
use crate::tensor::{Tape, Tensor, TensorError, VarId};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("threshold {0} outside [0, 1)")]
    BadThreshold(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Nonlinearity applied after each propagation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: VarId) -> VarId {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Occurrence counts, co-occurrence counts, filtered transition matrix and
/// exclusion mask over `k` relations. Built once from the training split and
/// immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TiesGraph {
    pub k: usize,
    /// `N[i]`: entity pairs whose label set contains relation `i`.
    pub occurrence: Vec<u64>,
    /// `M[i*k+j]`: entity pairs containing both `i` and `j`; `M[i*k+i] = N[i]`.
    pub cooccurrence: Vec<u64>,
    /// Filtered transition matrix, row-major `k x k`.
    pub transition: Vec<f64>,
    /// Exclusion mask (0/1), row-major `k x k`, diagonal forced to 1.
    pub exclusion: Vec<f64>,
    pub theta: f64,
}

/// Counts occurrences and co-occurrences over unique entity pairs. Bags that
/// share a `(head, tail)` pair are merged before counting.
pub fn build_cooccurrence(bags: &[Bag], k: usize) -> (Vec<u64>, Vec<u64>) {
    let mut by_pair: HashMap<(&str, &str), Vec<bool>> = HashMap::new();
    for bag in bags {
        let mask = by_pair
            .entry((bag.head.as_str(), bag.tail.as_str()))
            .or_insert_with(|| vec![false; k]);
        for &label in &bag.labels {
            assert!(label < k, "relation index {label} out of range for k={k}");
            mask[label] = true;
        }
    }
    let mut occurrence = vec![0u64; k];
    let mut cooccurrence = vec![0u64; k * k];
    for mask in by_pair.values() {
        let present: Vec<usize> = (0..k).filter(|&r| mask[r]).collect();
        for &i in &present {
            occurrence[i] += 1;
            for &j in &present {
                cooccurrence[i * k + j] += 1;
            }
        }
    }
    (cooccurrence, occurrence)
}

/// Row-conditional transition probabilities `M[i][j] / N[i]`, thresholded at
/// `theta` and with the diagonal forced to 1. Rows with `N[i] = 0` are zero
/// apart from the self-loop.
pub fn build_transition(
    cooccurrence: &[u64],
    occurrence: &[u64],
    k: usize,
    theta: f64,
) -> Result<Vec<f64>, GraphError> {
    if !(0.0..1.0).contains(&theta) {
        return Err(GraphError::BadThreshold(theta));
    }
    let mut transition = vec![0.0; k * k];
    for i in 0..k {
        if occurrence[i] > 0 {
            let n = occurrence[i] as f64;
            for j in 0..k {
                let p = cooccurrence[i * k + j] as f64 / n;
                transition[i * k + j] = if p < theta { 0.0 } else { p };
            }
        }
        transition[i * k + i] = 1.0;
    }
    Ok(transition)
}

/// Binary exclusion mask: 1 where relations never co-occur, plus a forced
/// diagonal that acts as an embedding-norm stabilizer.
pub fn build_exclusion(cooccurrence: &[u64], k: usize) -> Vec<f64> {
    let mut exclusion = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            if i == j || cooccurrence[i * k + j] == 0 {
                exclusion[i * k + j] = 1.0;
            }
        }
    }
    exclusion
}

impl TiesGraph {
    pub fn build(bags: &[Bag], k: usize, theta: f64) -> Result<Self, GraphError> {
        let (cooccurrence, occurrence) = build_cooccurrence(bags, k);
        let transition = build_transition(&cooccurrence, &occurrence, k, theta)?;
        let exclusion = build_exclusion(&cooccurrence, k);
        Ok(Self {
            k,
            occurrence,
            cooccurrence,
            transition,
            exclusion,
            theta,
        })
    }

    /// Normalizes each transition row to sum to 1 (experiment flag; the
    /// default pipeline applies the filtered matrix as-is).
    pub fn renormalize_rows(&mut self) {
        for i in 0..self.k {
            let row = &mut self.transition[i * self.k..(i + 1) * self.k];
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
    }

    /// Replaces the transition matrix with the identity, cutting all
    /// propagation between relations. Counts and exclusion mask are kept.
    pub fn with_identity_transition(mut self) -> Self {
        self.transition = identity_matrix(self.k);
        self
    }

    /// A graph with no data behind it: identity transition, identity
    /// exclusion, zero counts.
    pub fn identity(k: usize) -> Self {
        Self {
            k,
            occurrence: vec![0; k],
            cooccurrence: vec![0; k * k],
            transition: identity_matrix(k),
            exclusion: identity_matrix(k),
            theta: 0.0,
        }
    }

    pub fn occurrence_count(&self, i: usize) -> u64 {
        self.occurrence[i]
    }

    pub fn cooccurrence_count(&self, i: usize, j: usize) -> u64 {
        self.cooccurrence[i * self.k + j]
    }

    pub fn transition_prob(&self, i: usize, j: usize) -> f64 {
        self.transition[i * self.k + j]
    }

    pub fn excluded(&self, i: usize, j: usize) -> bool {
        self.exclusion[i * self.k + j] == 1.0
    }

    /// Unordered relation pairs that co-occur at least once.
    pub fn cooccurrence_edge_count(&self) -> usize {
        let mut count = 0;
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                if self.cooccurrence[i * self.k + j] > 0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Directed off-diagonal transition entries surviving the threshold.
    pub fn transition_edge_count(&self) -> usize {
        let mut count = 0;
        for i in 0..self.k {
            for j in 0..self.k {
                if i != j && self.transition[i * self.k + j] != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn occurrence_tsv(&self, names: &[String]) -> String {
        let mut out = names.join("\t");
        out.push('\n');
        out.push_str(
            &self
                .occurrence
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("\t"),
        );
        out.push('\n');
        out
    }

    pub fn cooccurrence_tsv(&self, names: &[String]) -> String {
        matrix_tsv(names, self.k, |i, j| {
            self.cooccurrence[i * self.k + j].to_string()
        })
    }

    pub fn transition_tsv(&self, names: &[String]) -> String {
        matrix_tsv(names, self.k, |i, j| {
            self.transition[i * self.k + j].to_string()
        })
    }

    pub fn exclusion_tsv(&self, names: &[String]) -> String {
        matrix_tsv(names, self.k, |i, j| {
            (self.exclusion[i * self.k + j] as u64).to_string()
        })
    }
}

fn identity_matrix(k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        m[i * k + i] = 1.0;
    }
    m
}

fn matrix_tsv(names: &[String], k: usize, cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = String::from("relation\t");
    out.push_str(&names.join("\t"));
    out.push('\n');
    for (i, name) in names.iter().enumerate().take(k) {
        out.push_str(name);
        for j in 0..k {
            out.push('\t');
            out.push_str(&cell(i, j));
        }
        out.push('\n');
    }
    out
}

/// Learnable state of the propagation stack: initial embeddings `[k, d]` and
/// one `[d, d]` weight matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub h0: Tensor,
    pub weights: Vec<Tensor>,
}

/// Propagated relation embeddings on an existing tape:
/// `H = f(P · ... f(P · H0 · W0) ... · W_{l-1})`.
pub fn gcn_forward_on(
    tape: &mut Tape,
    transition: &[f64],
    k: usize,
    h0: VarId,
    weights: &[VarId],
    activation: Activation,
) -> Result<VarId, TensorError> {
    let p_hat = tape.leaf_from(vec![k, k], transition.to_vec())?;
    let mut h = h0;
    for &w in weights {
        let propagated = tape.matmul(p_hat, h)?;
        let mixed = tape.matmul(propagated, w)?;
        h = activation.apply(tape, mixed);
    }
    Ok(h)
}

/// Convenience forward pass producing a plain tensor.
pub fn gcn_forward(
    graph: &TiesGraph,
    params: &GcnParams,
    activation: Activation,
) -> Result<Tensor, GraphError> {
    let mut tape = Tape::new();
    let h0 = tape.leaf(&params.h0);
    let weights: Vec<VarId> = params.weights.iter().map(|w| tape.leaf(w)).collect();
    let h = gcn_forward_on(
        &mut tape,
        &graph.transition,
        graph.k,
        h0,
        &weights,
        activation,
    )?;
    Ok(Tensor::new(tape.shape(h).to_vec(), tape.values(h).to_vec())?)
}

/// Masked pairwise-similarity penalty on an existing tape:
/// `sum((H Hᵀ) ∘ U) / (k · k · d)`.
pub fn exclusion_penalty_on(
    tape: &mut Tape,
    h: VarId,
    exclusion: &[f64],
    k: usize,
) -> Result<VarId, TensorError> {
    let d = tape.shape(h)[1];
    let mask = tape.leaf_from(vec![k, k], exclusion.to_vec())?;
    let gram = tape.matmul_nt(h, h)?;
    let masked = tape.mul(gram, mask)?;
    let raw = tape.sum(masked);
    Ok(tape.scale(raw, 1.0 / (k * k * d) as f64))
}

/// Convenience scalar penalty for a fixed embedding matrix.
pub fn exclusion_penalty(h: &Tensor, graph: &TiesGraph) -> Result<f64, GraphError> {
    let mut tape = Tape::new();
    let hid = tape.leaf(h);
    let omega = exclusion_penalty_on(&mut tape, hid, &graph.exclusion, graph.k)?;
    Ok(tape.scalar_value(omega))
}
