//! Held-out evaluation and tie-recovery reporting.
//!
//! Every test bag yields one prediction record per non-NA relation; records
//! sorted by descending score trace the precision-recall curve, with recall
//! denominated by all gold non-NA facts. Tie recovery compares cosine
//! similarities of trained relation embeddings across planted implication and
//! exclusion pairs, and a principal-axes projection exports 2-D coordinates
//! for inspection.

use std::fmt;

use thiserror::Error;

use crate::corpus::{Bag, PlantedTies, NA_RELATION};
use crate::graph::TiesGraph;
use crate::tensor::Tensor;
use crate::trainer::{predict_bag, ModelParams, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no gold facts: recall is undefined")]
    NoGoldFacts,
    #[error("requested top-{n} of {available} records")]
    NotEnoughRecords { n: usize, available: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// One scored candidate fact: a bag, a non-NA relation and the model's
/// probability, flagged against the gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub bag_id: String,
    pub relation: usize,
    pub score: f64,
    pub is_correct: bool,
}

/// A precision-recall curve with one point per record prefix, ordered by
/// descending score threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// Score threshold at each prefix.
    pub thresholds: Vec<f64>,
    /// `(precision, recall)` at each prefix.
    pub points: Vec<(f64, f64)>,
    /// Trapezoidal area over the recall axis, anchored at `(p=1, r=0)`.
    pub auc: f64,
}

/// Scores every `(bag, non-NA relation)` candidate with the trained model.
pub fn collect_predictions(
    bags: &[Bag],
    params: &ModelParams,
    graph: &TiesGraph,
    config: &TrainConfig,
) -> Result<Vec<PredictionRecord>, EvalError> {
    let mut records = Vec::with_capacity(bags.len() * (graph.k - 1));
    for bag in bags {
        let probs = predict_bag(bag, params, graph, config)?;
        for (relation, &score) in probs.iter().enumerate() {
            if relation == NA_RELATION {
                continue;
            }
            records.push(PredictionRecord {
                bag_id: bag.bag_id.clone(),
                relation,
                score,
                is_correct: bag.labels.contains(&relation),
            });
        }
    }
    Ok(records)
}

/// Deterministic evaluation order: descending score, ties broken by
/// `(bag_id, relation)`.
fn sorted_records(records: &[PredictionRecord]) -> Vec<&PredictionRecord> {
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.bag_id.cmp(&b.bag_id))
            .then_with(|| a.relation.cmp(&b.relation))
    });
    sorted
}

/// Precision-recall curve over the records. Recall is denominated by the
/// total number of gold facts among the records.
pub fn pr_curve(records: &[PredictionRecord]) -> Result<PrCurve, EvalError> {
    let total_gold = records.iter().filter(|r| r.is_correct).count();
    if total_gold == 0 {
        return Err(EvalError::NoGoldFacts);
    }
    let sorted = sorted_records(records);
    let mut thresholds = Vec::with_capacity(sorted.len());
    let mut points = Vec::with_capacity(sorted.len());
    let mut correct = 0usize;
    let mut auc = 0.0;
    let mut prev_precision = 1.0;
    let mut prev_recall = 0.0;
    for (n, record) in sorted.iter().enumerate() {
        if record.is_correct {
            correct += 1;
        }
        let precision = correct as f64 / (n + 1) as f64;
        let recall = correct as f64 / total_gold as f64;
        auc += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        prev_precision = precision;
        prev_recall = recall;
        thresholds.push(record.score);
        points.push((precision, recall));
    }
    Ok(PrCurve {
        thresholds,
        points,
        auc,
    })
}

/// Fraction of correct records among the top `n` by score.
pub fn p_at_n(records: &[PredictionRecord], n: usize) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidArgument("n must be positive".into()));
    }
    if n > records.len() {
        return Err(EvalError::NotEnoughRecords {
            n,
            available: records.len(),
        });
    }
    let sorted = sorted_records(records);
    let correct = sorted[..n].iter().filter(|r| r.is_correct).count();
    Ok(correct as f64 / n as f64)
}

/// `threshold,precision,recall` rows plus a trailing `auc=` summary line.
pub fn pr_curve_csv(curve: &PrCurve) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for (threshold, (precision, recall)) in curve.thresholds.iter().zip(&curve.points) {
        out.push_str(&format!("{threshold},{precision},{recall}\n"));
    }
    out.push_str(&format!("auc={}\n", curve.auc));
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Cosine-similarity summary of how well the embedding geometry matches the
/// planted ties.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    /// Mean cosine over planted implication pairs.
    pub implication_mean_cosine: f64,
    /// Mean cosine over planted exclusion pairs.
    pub exclusion_mean_cosine: f64,
    /// Implication minus exclusion mean; positive when ties are recovered.
    pub margin: f64,
    /// Mean cosine of the NA embedding against every other relation.
    pub na_centrality: f64,
    /// Mean cosine over off-diagonal pairs the exclusion mask marks.
    pub masked_mean_cosine: f64,
    /// Mean cosine over off-diagonal surviving transition edges.
    pub transition_edge_mean_cosine: f64,
}

impl fmt::Display for RecoveryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "implication_mean_cosine = {}", self.implication_mean_cosine)?;
        writeln!(f, "exclusion_mean_cosine = {}", self.exclusion_mean_cosine)?;
        writeln!(f, "margin = {}", self.margin)?;
        writeln!(f, "na_centrality = {}", self.na_centrality)?;
        writeln!(f, "masked_mean_cosine = {}", self.masked_mean_cosine)?;
        writeln!(
            f,
            "transition_edge_mean_cosine = {}",
            self.transition_edge_mean_cosine
        )
    }
}

/// Scores trained relation embeddings against the planted ties; the graph
/// supplies the empirical exclusion mask and transition edges for the
/// supplementary means.
pub fn ties_recovery_report(
    h: &Tensor,
    planted: &PlantedTies,
    graph: &TiesGraph,
) -> RecoveryReport {
    let k = h.rows();
    let implication: Vec<f64> = planted
        .implications
        .iter()
        .map(|rule| cosine(h.row(rule.premise), h.row(rule.conclusion)))
        .collect();
    let exclusion: Vec<f64> = planted
        .exclusions
        .iter()
        .map(|&(a, b)| cosine(h.row(a), h.row(b)))
        .collect();
    let na: Vec<f64> = (0..k)
        .filter(|&r| r != NA_RELATION)
        .map(|r| cosine(h.row(NA_RELATION), h.row(r)))
        .collect();
    let mut masked = Vec::new();
    let mut edges = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let cos = cosine(h.row(i), h.row(j));
            if graph.excluded(i, j) {
                masked.push(cos);
            }
            if graph.transition_prob(i, j) != 0.0 || graph.transition_prob(j, i) != 0.0 {
                edges.push(cos);
            }
        }
    }
    let implication_mean_cosine = mean(&implication);
    let exclusion_mean_cosine = mean(&exclusion);
    RecoveryReport {
        implication_mean_cosine,
        exclusion_mean_cosine,
        margin: implication_mean_cosine - exclusion_mean_cosine,
        na_centrality: mean(&na),
        masked_mean_cosine: mean(&masked),
        transition_edge_mean_cosine: mean(&edges),
    }
}

const POWER_ITERATION_TOL: f64 = 1e-9;
const POWER_ITERATION_CAP: usize = 10_000;

/// Leading right-singular direction of the centered rows, by power iteration
/// on the covariance via `v -> Xᵀ(X v)`. `ortho` fixes already-found axes.
fn principal_axis(rows: &[Vec<f64>], d: usize, ortho: &[Vec<f64>]) -> Vec<f64> {
    // deterministic start spread over all coordinates
    let mut v: Vec<f64> = (0..d).map(|j| 1.0 + (j as f64) / d as f64).collect();
    normalize(&mut v);
    for _ in 0..POWER_ITERATION_CAP {
        // w = Xᵀ (X v)
        let mut w = vec![0.0; d];
        for row in rows {
            let proj: f64 = row.iter().zip(&v).map(|(x, y)| x * y).sum();
            for (wj, xj) in w.iter_mut().zip(row) {
                *wj += proj * xj;
            }
        }
        for axis in ortho {
            let dot: f64 = w.iter().zip(axis).map(|(x, y)| x * y).sum();
            for (wj, aj) in w.iter_mut().zip(axis) {
                *wj -= dot * aj;
            }
        }
        let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            // degenerate direction: no variance left
            return vec![0.0; d];
        }
        w.iter_mut().for_each(|x| *x /= norm);
        let delta: f64 = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let flipped: f64 = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max);
        let converged = delta < POWER_ITERATION_TOL || flipped < POWER_ITERATION_TOL;
        v = w;
        if converged {
            break;
        }
    }
    // sign convention: largest-magnitude component positive
    let lead = v
        .iter()
        .cloned()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

fn normalize(v: &mut [f64]) {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Projects the mean-centered embedding rows onto their top two principal
/// axes. Returns one `(x, y)` per relation.
pub fn project_embeddings(h: &Tensor) -> Result<Vec<(f64, f64)>, EvalError> {
    let k = h.rows();
    if k < 2 {
        return Err(EvalError::InvalidArgument(
            "need at least two relations to project".into(),
        ));
    }
    let d = h.shape()[1];
    let mut center = vec![0.0; d];
    for i in 0..k {
        for (c, x) in center.iter_mut().zip(h.row(i)) {
            *c += x;
        }
    }
    center.iter_mut().for_each(|c| *c /= k as f64);
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| h.row(i).iter().zip(&center).map(|(x, c)| x - c).collect())
        .collect();
    let axis1 = principal_axis(&rows, d, &[]);
    let axis2 = principal_axis(&rows, d, std::slice::from_ref(&axis1));
    Ok(rows
        .iter()
        .map(|row| {
            let x: f64 = row.iter().zip(&axis1).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&axis2).map(|(a, b)| a * b).sum();
            (x, y)
        })
        .collect())
}

/// `relation<TAB>x<TAB>y` lines.
pub fn projection_tsv(names: &[String], coords: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (name, (x, y)) in names.iter().zip(coords) {
        out.push_str(&format!("{name}\t{x}\t{y}\n"));
    }
    out
}
