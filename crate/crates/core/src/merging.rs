//! Task vectors and the strategies that fold them back into the global model.
//!
//! Weighted and fixed task-arithmetic updates are evaluated without
//! intermediate rounding: each task vector keeps the exact remainder of its
//! subtraction and the final sum is correctly rounded. A single episode
//! merged with weight one therefore reproduces the local model bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::numeric::{exact_sum, softmax, two_product, two_sum, ParamVector};

/// `global - local` for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskVector {
    delta: ParamVector,
    /// Exact remainder: `global - local == delta + remainder` per coordinate.
    remainder: Vec<f64>,
    pub episode_index: usize,
    pub global_index: usize,
}

impl TaskVector {
    pub fn delta(&self) -> &ParamVector {
        &self.delta
    }

    pub fn remainder(&self) -> &[f64] {
        &self.remainder
    }
}

pub fn task_vector(
    global: &ParamVector,
    local: &ParamVector,
    episode_index: usize,
    global_index: usize,
) -> Result<TaskVector> {
    global.check_compatible(local)?;
    let (hi, lo): (Vec<f64>, Vec<f64>) = global
        .values()
        .iter()
        .zip(local.values())
        .map(|(&g, &l)| two_sum(g, -l))
        .unzip();
    Ok(TaskVector {
        delta: ParamVector::new(hi, global.layout().clone())?,
        remainder: lo,
        episode_index,
        global_index,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Softmax,
    Minmax,
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeWeights {
    pub weights: Vec<f64>,
    pub scheme: WeightScheme,
}

pub fn softmax_weights(all_scores: &[f64]) -> Result<MergeWeights> {
    if all_scores.is_empty() {
        return arg("no scores to weight");
    }
    Ok(MergeWeights {
        weights: softmax(all_scores)?,
        scheme: WeightScheme::Softmax,
    })
}

pub fn minmax_weights(all_scores: &[f64]) -> Result<MergeWeights> {
    if all_scores.is_empty() {
        return arg("no scores to weight");
    }
    if all_scores.iter().any(|s| !s.is_finite()) {
        return arg("scores must be finite");
    }
    let n = all_scores.len();
    let lo = all_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = if hi == lo {
        vec![1.0 / n as f64; n]
    } else {
        let raw: Vec<f64> = all_scores.iter().map(|s| (s - lo) / (hi - lo)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / total).collect()
    };
    Ok(MergeWeights {
        weights,
        scheme: WeightScheme::Minmax,
    })
}

fn check_vectors(global: &ParamVector, task_vectors: &[TaskVector]) -> Result<()> {
    if task_vectors.is_empty() {
        return arg("no task vectors to merge");
    }
    for tv in task_vectors {
        global.check_compatible(&tv.delta)?;
    }
    Ok(())
}

/// `global - sum_e weights[e] * delta_e`, evaluated exactly then rounded once.
fn subtract_weighted(global: &ParamVector, task_vectors: &[TaskVector], weights: &[f64]) -> Result<ParamVector> {
    let mut terms = Vec::with_capacity(1 + 4 * task_vectors.len());
    let values = (0..global.len())
        .map(|i| {
            terms.clear();
            terms.push(global.values()[i]);
            for (tv, &w) in task_vectors.iter().zip(weights) {
                for part in [tv.delta.values()[i], tv.remainder[i]] {
                    let (p, e) = two_product(w, part);
                    terms.push(-p);
                    terms.push(-e);
                }
            }
            exact_sum(&terms)
        })
        .collect();
    ParamVector::new(values, global.layout().clone())
}

pub fn apply_update(global: &ParamVector, task_vectors: &[TaskVector], weights: &MergeWeights) -> Result<ParamVector> {
    check_vectors(global, task_vectors)?;
    if weights.weights.len() != task_vectors.len() {
        return arg(format!(
            "{} weights for {} task vectors",
            weights.weights.len(),
            task_vectors.len()
        ));
    }
    subtract_weighted(global, task_vectors, &weights.weights)
}

pub fn fixed_ta_merge(global: &ParamVector, task_vectors: &[TaskVector], scale: f64) -> Result<ParamVector> {
    check_vectors(global, task_vectors)?;
    if !scale.is_finite() {
        return arg("task-arithmetic scale must be finite");
    }
    subtract_weighted(global, task_vectors, &vec![scale; task_vectors.len()])
}

/// Trim, elect sign, disjoint mean. Magnitude ties at the trim boundary keep
/// the lower coordinate index.
pub fn ties_merge(global: &ParamVector, task_vectors: &[TaskVector], trim_fraction: f64) -> Result<ParamVector> {
    check_vectors(global, task_vectors)?;
    if !(trim_fraction > 0.0 && trim_fraction < 1.0) {
        return arg("trim fraction must lie in (0, 1)");
    }
    let n = global.len();
    let keep = ((trim_fraction * n as f64).ceil() as usize).clamp(1, n);
    let trimmed: Vec<Vec<f64>> = task_vectors
        .iter()
        .map(|tv| {
            let d = tv.delta.values();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| d[b].abs().total_cmp(&d[a].abs()).then(a.cmp(&b)));
            let mut out = vec![0.0; n];
            for &i in &order[..keep] {
                out[i] = d[i];
            }
            out
        })
        .collect();
    let values = (0..n)
        .map(|i| {
            let total: f64 = trimmed.iter().map(|t| t[i]).sum();
            let agreeing: Vec<f64> = trimmed
                .iter()
                .map(|t| t[i])
                .filter(|v| *v != 0.0 && v.signum() == total.signum())
                .collect();
            let merged = if total == 0.0 || agreeing.is_empty() {
                0.0
            } else {
                agreeing.iter().sum::<f64>() / agreeing.len() as f64
            };
            global.values()[i] - merged
        })
        .collect();
    ParamVector::new(values, global.layout().clone())
}

/// Diagonal-Fisher weighted average of local models; coordinates with zero
/// total Fisher fall back to the plain mean.
pub fn fisher_merge(locals: &[ParamVector], fisher_diagonals: &[ParamVector]) -> Result<ParamVector> {
    if locals.is_empty() {
        return arg("no models to merge");
    }
    if locals.len() != fisher_diagonals.len() {
        return arg(format!(
            "{} models but {} Fisher diagonals",
            locals.len(),
            fisher_diagonals.len()
        ));
    }
    for (m, f) in locals.iter().zip(fisher_diagonals) {
        locals[0].check_compatible(m)?;
        locals[0].check_compatible(f)?;
        if f.values().iter().any(|v| *v < 0.0) {
            return arg("Fisher diagonals must be non-negative");
        }
    }
    // Averages are taken as offsets from the first model, so identical
    // models merge to themselves exactly.
    let anchor = locals[0].values();
    let count = locals.len() as f64;
    let values = (0..anchor.len())
        .map(|i| {
            let offsets = locals.iter().map(|m| m.values()[i] - anchor[i]);
            let total: f64 = fisher_diagonals.iter().map(|f| f.values()[i]).sum();
            if total > 0.0 {
                anchor[i] + offsets.zip(fisher_diagonals).map(|(d, f)| f.values()[i] * d).sum::<f64>() / total
            } else {
                anchor[i] + offsets.sum::<f64>() / count
            }
        })
        .collect();
    ParamVector::new(values, locals[0].layout().clone())
}

/// Share of coordinates, among those touched by any task vector, where two
/// task vectors have non-zero entries of opposite sign.
pub fn sign_conflict_fraction(task_vectors: &[TaskVector]) -> Result<f64> {
    if task_vectors.len() < 2 {
        return arg("sign conflicts need at least two task vectors");
    }
    let first = &task_vectors[0].delta;
    for tv in &task_vectors[1..] {
        first.check_compatible(&tv.delta)?;
    }
    let (mut active, mut conflicts) = (0usize, 0usize);
    for i in 0..first.len() {
        let (mut pos, mut neg) = (false, false);
        for tv in task_vectors {
            let v = tv.delta.values()[i];
            pos |= v > 0.0;
            neg |= v < 0.0;
        }
        if pos || neg {
            active += 1;
        }
        if pos && neg {
            conflicts += 1;
        }
    }
    Ok(if active == 0 { 0.0 } else { conflicts as f64 / active as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeStrategy {
    WeightedTa,
    FixedTa,
    Ties,
    Fisher,
    MinmaxTa,
}

impl MergeStrategy {
    pub const ALL: [MergeStrategy; 5] = [
        MergeStrategy::WeightedTa,
        MergeStrategy::FixedTa,
        MergeStrategy::Ties,
        MergeStrategy::Fisher,
        MergeStrategy::MinmaxTa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MergeStrategy::WeightedTa => "weighted_ta",
            MergeStrategy::FixedTa => "fixed_ta",
            MergeStrategy::Ties => "ties",
            MergeStrategy::Fisher => "fisher",
            MergeStrategy::MinmaxTa => "minmax_ta",
        }
    }
}

/// Units of the validation scores fed to the softmax weighting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    Fraction,
    Percent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeConfig {
    pub strategy: MergeStrategy,
    /// Defaults to `1 / n_e` when absent.
    pub fixed_scale: Option<f64>,
    pub trim_fraction: f64,
    pub fisher_samples: usize,
    pub score_scale: ScoreScale,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            strategy: MergeStrategy::WeightedTa,
            fixed_scale: None,
            trim_fraction: 0.2,
            fisher_samples: 8,
            score_scale: ScoreScale::Fraction,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.fixed_scale {
            if !s.is_finite() {
                return Err(Error::Config("fixed_scale must be finite".into()));
            }
        }
        if !(self.trim_fraction > 0.0 && self.trim_fraction < 1.0) {
            return Err(Error::Config("trim_fraction must lie in (0, 1)".into()));
        }
        if self.strategy == MergeStrategy::Fisher && self.fisher_samples == 0 {
            return Err(Error::Config("fisher_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// What one episode contributes to a merge.
#[derive(Clone, Debug)]
pub struct MergeInput<'a> {
    pub task_vector: &'a TaskVector,
    pub local: &'a ParamVector,
    /// Validation All score as a fraction in [0, 1].
    pub score: f64,
    pub fisher: Option<&'a ParamVector>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutcome {
    pub params: ParamVector,
    /// Per-episode weights; uniform for strategies that do not weight episodes.
    pub weights: Vec<f64>,
    pub sign_conflict: Option<f64>,
    /// `|new - global|_1`.
    pub update_l1: f64,
}

/// Runs the configured strategy over the surviving episodes.
pub fn merge(cfg: &MergeConfig, global: &ParamVector, inputs: &[MergeInput<'_>]) -> Result<MergeOutcome> {
    if inputs.is_empty() {
        return arg("no episodes to merge");
    }
    let tvs: Vec<TaskVector> = inputs.iter().map(|m| m.task_vector.clone()).collect();
    let n = inputs.len();
    let uniform = vec![1.0 / n as f64; n];
    let scores: Vec<f64> = inputs
        .iter()
        .map(|m| match cfg.score_scale {
            ScoreScale::Fraction => m.score,
            ScoreScale::Percent => 100.0 * m.score,
        })
        .collect();
    let (params, weights) = match cfg.strategy {
        MergeStrategy::WeightedTa => {
            let w = softmax_weights(&scores)?;
            (apply_update(global, &tvs, &w)?, w.weights)
        }
        MergeStrategy::MinmaxTa => {
            let w = minmax_weights(&scores)?;
            (apply_update(global, &tvs, &w)?, w.weights)
        }
        MergeStrategy::FixedTa => {
            let scale = cfg.fixed_scale.unwrap_or(1.0 / n as f64);
            (fixed_ta_merge(global, &tvs, scale)?, vec![scale; n])
        }
        MergeStrategy::Ties => (ties_merge(global, &tvs, cfg.trim_fraction)?, uniform),
        MergeStrategy::Fisher => {
            let locals: Vec<ParamVector> = inputs.iter().map(|m| m.local.clone()).collect();
            let fishers = inputs
                .iter()
                .map(|m| m.fisher.cloned().ok_or_else(|| Error::State("missing Fisher diagonal".into())))
                .collect::<Result<Vec<_>>>()?;
            (fisher_merge(&locals, &fishers)?, uniform)
        }
    };
    let sign_conflict = if n >= 2 { Some(sign_conflict_fraction(&tvs)?) } else { None };
    let update_l1 = params.l1_distance(global)?;
    Ok(MergeOutcome {
        params,
        weights,
        sign_conflict,
        update_l1,
    })
}
