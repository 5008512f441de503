//! Episodic training loop: per global update, fine-tune independent copies of
//! the global encoder on freshly sampled episodes, score each copy on the
//! validation domains, and merge the resulting task vectors.
//!
//! Every random stream is keyed by `(seed, global update, episode, purpose)`,
//! so results do not depend on whether episodes run in parallel.

use std::collections::BTreeSet;

use log::{debug, info, warn};
use rayon::prelude::*;

use crate::config::{TargetK, TrainingConfig};
use crate::encoder::{init_from_global, Architecture, ClassifierParams, EncoderParams, EpisodeModel};
use crate::error::{Error, Result};
use crate::eval::{cluster_and_score, estimate_k, GcdMetrics};
use crate::losses::{episode_objective, LossTerms, ObjectiveBatch, PrototypeSet};
use crate::merging::{merge, task_vector, MergeConfig, MergeInput, MergeOutcome, MergeStrategy, TaskVector};
use crate::numeric::{ParamVector, SeededRng};
use crate::synth::{
    augment, sample_episode, source_classes, source_only_episode, ClassId, EpisodeData, LabeledSample,
    SplitMode, SyntheticProblem, UnlabeledSample, ValidationSet,
};

// Stream tags mixed into derived seeds.
const TAG_INIT: u64 = 0x1417;
const TAG_EPISODE_DATA: u64 = 0xE9;
const TAG_DOMAIN_ORDER: u64 = 0xD0;
const TAG_TRAIN: u64 = 0x7A;
const TAG_VALID: u64 = 0x5C;
const TAG_FISHER: u64 = 0xF1;
const TAG_TARGET: u64 = 0x7E;

/// One optimizer step of one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub global_index: usize,
    pub episode_index: usize,
    pub step: usize,
    pub lr: f64,
    pub terms: LossTerms,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub episode_index: usize,
    pub global_index: usize,
    pub local_params: ParamVector,
    pub task_vector: TaskVector,
    pub valid_metrics: GcdMetrics,
    /// Number of clusters used for the validation score.
    pub valid_k: usize,
    pub known_classes: Vec<ClassId>,
    pub fisher: Option<ParamVector>,
    pub trace: Vec<StepRecord>,
}

impl EpisodeResult {
    /// Total loss before the first and after the last update, evaluated on
    /// the same batch as the corresponding step.
    pub fn first_and_last_loss(&self) -> Option<(f64, f64)> {
        Some((self.trace.first()?.terms.total, self.trace.last()?.terms.total))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EpisodeOutcome {
    Completed(Box<EpisodeResult>),
    Aborted { episode_index: usize, reason: String },
}

impl EpisodeOutcome {
    pub fn completed(&self) -> Option<&EpisodeResult> {
        match self {
            EpisodeOutcome::Completed(r) => Some(r),
            EpisodeOutcome::Aborted { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub global_index: usize,
    /// `|theta_g - theta_{g-1}|_1`.
    pub weight_diff_l1: f64,
    pub episode_metrics: Vec<(usize, GcdMetrics)>,
    /// Merge weight per surviving episode, aligned with `episode_metrics`.
    pub weights: Vec<f64>,
    pub sign_conflict: Option<f64>,
    pub aborted: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalModelState {
    pub params: ParamVector,
    pub global_index: usize,
    pub history: Vec<HistoryRow>,
}

impl GlobalModelState {
    pub fn initial(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::derive(seed, &[TAG_INIT]);
        Ok(GlobalModelState {
            params: EncoderParams::init_random(arch, &mut rng).to_param_vector()?,
            global_index: 0,
            history: Vec::new(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct UpdateReport {
    pub global_index: usize,
    pub outcomes: Vec<EpisodeOutcome>,
    pub merge: MergeOutcome,
}

fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Endless reshuffled pass over `0..n`.
struct CyclicOrder {
    order: Vec<usize>,
    cursor: usize,
}

impl CyclicOrder {
    fn new(n: usize, rng: &mut SeededRng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        CyclicOrder { order, cursor: 0 }
    }

    fn take(&mut self, count: usize, rng: &mut SeededRng) -> Vec<usize> {
        let count = count.min(self.order.len());
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.cursor == self.order.len() {
                rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

struct EpisodeBatcher<'a> {
    labeled: &'a [LabeledSample],
    unlabeled: &'a [UnlabeledSample],
    local_label: Vec<usize>,
    labeled_order: CyclicOrder,
    unlabeled_order: CyclicOrder,
    batch_size: usize,
    jitter: f64,
    rotation: f64,
}

impl<'a> EpisodeBatcher<'a> {
    fn new(data: &'a EpisodeData, cfg: &TrainingConfig, rng: &mut SeededRng) -> Result<Self> {
        let local_label = data
            .labeled_source
            .iter()
            .map(|s| {
                data.known_classes
                    .iter()
                    .position(|c| *c == s.label)
                    .ok_or_else(|| Error::Argument(format!("labeled class {} is not marked known", s.label)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EpisodeBatcher {
            labeled: &data.labeled_source,
            unlabeled: &data.unlabeled_pseudo_target,
            local_label,
            labeled_order: CyclicOrder::new(data.labeled_source.len(), rng),
            unlabeled_order: CyclicOrder::new(data.unlabeled_pseudo_target.len(), rng),
            batch_size: cfg.batch_size,
            jitter: cfg.problem.jitter_sigma,
            rotation: cfg.problem.augment_rotation,
        })
    }

    fn steps_per_epoch(&self) -> usize {
        self.labeled.len().max(self.unlabeled.len()).div_ceil(self.batch_size)
    }

    fn next(&mut self, labeled: usize, unlabeled: usize, rng: &mut SeededRng) -> Result<ObjectiveBatch> {
        let mut batch = ObjectiveBatch::default();
        for i in self.labeled_order.take(labeled, rng) {
            let x = &self.labeled[i].features;
            batch.labeled.push(augment(x, rng, self.jitter, self.rotation)?);
            batch.labeled_aug.push(augment(x, rng, self.jitter, self.rotation)?);
            batch.labels.push(self.local_label[i]);
        }
        for i in self.unlabeled_order.take(unlabeled, rng) {
            let x = &self.unlabeled[i].features;
            batch.unlabeled.push(augment(x, rng, self.jitter, self.rotation)?);
            batch.unlabeled_aug.push(augment(x, rng, self.jitter, self.rotation)?);
        }
        Ok(batch)
    }
}

fn embed_all(encoder: &EncoderParams, rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    rows.map(|x| encoder.embed(&x)).collect()
}

/// Scores an encoder on held-out samples with `k` set to the number of
/// classes present.
fn validate_encoder(
    encoder: &EncoderParams,
    samples: &[UnlabeledSample],
    old_classes: &[ClassId],
    cfg: &TrainingConfig,
    rng: &mut SeededRng,
) -> Result<(GcdMetrics, usize)> {
    let labels: Vec<ClassId> = samples.iter().map(|s| s.hidden_label().reveal()).collect();
    let k = labels.iter().collect::<BTreeSet<_>>().len();
    let emb = embed_all(encoder, samples.iter().map(|s| s.features.clone()))?;
    let m = cluster_and_score(&emb, &labels, old_classes, k, rng, cfg.eval.clustering())?;
    Ok((m, k))
}

fn fisher_diagonal(
    model: &mut EpisodeModel,
    batcher: &mut EpisodeBatcher<'_>,
    protos: &PrototypeSet,
    cfg: &TrainingConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let samples = cfg.merge.fisher_samples;
    let unlabeled = usize::from(!batcher.unlabeled.is_empty());
    let labeled = if unlabeled == 0 { 2 } else { 1 };
    let mut acc = vec![0.0; model.encoder.architecture().param_count()];
    for _ in 0..samples {
        let batch = batcher.next(labeled, unlabeled, rng)?;
        let (_, g) = episode_objective(model, &batch, protos, &cfg.loss)?;
        for (a, v) in acc.iter_mut().zip(&g.encoder) {
            *a += v * v / samples as f64;
        }
    }
    Ok(acc)
}

/// Fine-tunes a copy of `global` on one episode and scores it.
pub fn run_episode(
    global: &ParamVector,
    data: &EpisodeData,
    validation: &ValidationSet,
    cfg: &TrainingConfig,
    global_index: usize,
) -> Result<EpisodeOutcome> {
    let e = data.episode_index;
    let abort = |reason: String| {
        warn!("global update {global_index}, episode {e}: aborted ({reason})");
        Ok(EpisodeOutcome::Aborted { episode_index: e, reason })
    };
    let arch = cfg.architecture();
    let mut rng = SeededRng::derive(cfg.seed, &[TAG_TRAIN, global_index as u64, e as u64]);
    let encoder = init_from_global(global, arch)?;
    let n_local = data.known_classes.len();
    let classifier = ClassifierParams::init_random(n_local, arch.embed, cfg.model.classifier_init_scale, &mut rng);
    let mut model = EpisodeModel::new(encoder, classifier)?;
    let mut batcher = EpisodeBatcher::new(data, cfg, &mut rng)?;
    if data.labeled_source.is_empty() {
        return Err(Error::Argument(format!("episode {e} has no labeled samples")));
    }

    let initial = embed_all(&model.encoder, data.labeled_source.iter().map(|s| s.features.clone()));
    let mut protos = match initial.and_then(|z| PrototypeSet::from_batch(&z, &batcher.local_label, n_local, None)) {
        Ok(p) => p,
        Err(err) => return abort(err.to_string()),
    };

    let total_steps = cfg.epochs_per_episode * batcher.steps_per_epoch();
    let mut trace = Vec::with_capacity(total_steps);
    for step in 0..total_steps {
        let lr = cosine_lr(cfg.lr, step, total_steps);
        let batch = batcher.next(cfg.batch_size, cfg.batch_size, &mut rng)?;
        let step_result = embed_all(&model.encoder, batch.labeled.iter().cloned())
            .and_then(|z| PrototypeSet::from_batch(&z, &batch.labels, n_local, Some(&protos)))
            .and_then(|p| {
                protos = p;
                episode_objective(&mut model, &batch, &protos, &cfg.loss)
            });
        let (terms, grads) = match step_result {
            Ok(v) => v,
            Err(err @ (Error::Degenerate(_) | Error::Evaluation(_))) => return abort(err.to_string()),
            Err(err) => return Err(err),
        };
        if !terms.is_finite() || !grads.is_finite() {
            return abort(format!("non-finite loss at step {step}"));
        }
        model.encoder.apply_step(&grads.encoder, lr);
        model.classifier.apply_step(&grads.classifier, lr);
        trace.push(StepRecord {
            global_index,
            episode_index: e,
            step,
            lr,
            terms,
        });
    }
    if let Some(last) = trace.last() {
        debug!("global update {global_index}, episode {e}: final loss {:.4}", last.terms.total);
    }

    let fisher = if cfg.merge.strategy == MergeStrategy::Fisher && !cfg.ablations.minmax_weights {
        let mut fisher_rng = SeededRng::derive(cfg.seed, &[TAG_FISHER, global_index as u64, e as u64]);
        match fisher_diagonal(&mut model, &mut batcher, &protos, cfg, &mut fisher_rng) {
            Ok(f) => Some(ParamVector::new(f, arch.layout_id())?),
            Err(err @ (Error::Degenerate(_) | Error::Evaluation(_) | Error::Argument(_))) => {
                return abort(format!("Fisher estimate failed: {err}"))
            }
            Err(err) => return Err(err),
        }
    } else {
        None
    };

    let local_params = match model.encoder.to_param_vector() {
        Ok(p) => p,
        Err(err) => return abort(err.to_string()),
    };
    let tv = task_vector(global, &local_params, e, global_index)?;
    let mut valid_rng = SeededRng::derive(cfg.seed, &[TAG_VALID, global_index as u64, e as u64]);
    let samples = if cfg.ablations.episode_local_validation {
        &data.unlabeled_pseudo_target
    } else {
        &validation.samples
    };
    let (valid_metrics, valid_k) =
        match validate_encoder(&model.encoder, samples, &data.known_classes, cfg, &mut valid_rng) {
            Ok(v) => v,
            Err(err @ Error::Degenerate(_)) => return abort(err.to_string()),
            Err(err) => return Err(err),
        };
    Ok(EpisodeOutcome::Completed(Box::new(EpisodeResult {
        episode_index: e,
        global_index,
        local_params,
        task_vector: tv,
        valid_metrics,
        valid_k,
        known_classes: data.known_classes.clone(),
        fisher,
        trace,
    })))
}

/// Samples the `n_e` episodes of global update `global_index`. Train domains
/// are shuffled once per update and assigned round-robin.
pub fn sample_episodes(problem: &SyntheticProblem, cfg: &TrainingConfig, global_index: usize) -> Result<Vec<EpisodeData>> {
    let mut order_rng = SeededRng::derive(cfg.seed, &[TAG_DOMAIN_ORDER, global_index as u64]);
    let mut domains = problem.train_domains.clone();
    order_rng.shuffle(&mut domains);
    let pool = source_classes(&problem.source);
    let split = if cfg.ablations.static_split {
        let count = (cfg.known_fraction * pool.len() as f64).round() as usize;
        SplitMode::Static(pool[..count].to_vec())
    } else {
        SplitMode::Dynamic
    };
    (0..cfg.n_e)
        .map(|e| {
            let mut rng = SeededRng::derive(cfg.seed, &[TAG_EPISODE_DATA, global_index as u64, e as u64]);
            if cfg.ablations.no_synthetic {
                source_only_episode(&problem.source, e, cfg.known_fraction, &split, &mut rng)
            } else {
                let domain = std::slice::from_ref(&domains[e % domains.len()]);
                sample_episode(
                    &problem.source,
                    &problem.classes,
                    domain,
                    e,
                    cfg.known_fraction,
                    &split,
                    cfg.problem.pseudo_samples_per_class,
                    &mut rng,
                )
            }
        })
        .collect()
}

/// Runs every episode from the same starting parameters and merges them.
pub fn run_global_update(
    state: &GlobalModelState,
    episodes: &[EpisodeData],
    validation: &ValidationSet,
    cfg: &TrainingConfig,
) -> Result<(GlobalModelState, UpdateReport)> {
    let g = state.global_index + 1;
    let run = |data: &EpisodeData| run_episode(&state.params, data, validation, cfg, g);
    let outcomes: Vec<EpisodeOutcome> = if cfg.parallel {
        episodes.par_iter().map(run).collect::<Result<_>>()?
    } else {
        episodes.iter().map(run).collect::<Result<_>>()?
    };
    let survivors: Vec<&EpisodeResult> = outcomes.iter().filter_map(EpisodeOutcome::completed).collect();
    if survivors.is_empty() {
        return Err(Error::Run(format!("every episode of global update {g} was aborted")));
    }
    let inputs: Vec<MergeInput> = survivors
        .iter()
        .map(|r| MergeInput {
            task_vector: &r.task_vector,
            local: &r.local_params,
            score: r.valid_metrics.all,
            fisher: r.fisher.as_ref(),
        })
        .collect();
    let merge_cfg = MergeConfig {
        strategy: cfg.effective_strategy(),
        ..cfg.merge.clone()
    };
    let merged = merge(&merge_cfg, &state.params, &inputs)?;
    let aborted: Vec<usize> = outcomes
        .iter()
        .filter_map(|o| match o {
            EpisodeOutcome::Aborted { episode_index, .. } => Some(*episode_index),
            EpisodeOutcome::Completed(_) => None,
        })
        .collect();
    let mut history = state.history.clone();
    history.push(HistoryRow {
        global_index: g,
        weight_diff_l1: merged.update_l1,
        episode_metrics: survivors
            .iter()
            .map(|r| (r.episode_index, r.valid_metrics.clone()))
            .collect(),
        weights: merged.weights.clone(),
        sign_conflict: merged.sign_conflict,
        aborted,
    });
    info!(
        "global update {g}: mean validation All {:.4}, update L1 {:.4}",
        survivors.iter().map(|r| r.valid_metrics.all).sum::<f64>() / survivors.len() as f64,
        merged.update_l1
    );
    let next = GlobalModelState {
        params: merged.params.clone(),
        global_index: g,
        history,
    };
    Ok((
        next,
        UpdateReport {
            global_index: g,
            outcomes,
            merge: merged,
        },
    ))
}

/// Runs all global updates. `on_update` sees each new state with its report,
/// in order.
pub fn train<F>(cfg: &TrainingConfig, problem: &SyntheticProblem, mut on_update: F) -> Result<GlobalModelState>
where
    F: FnMut(&GlobalModelState, &UpdateReport) -> Result<()>,
{
    let mut state = GlobalModelState::initial(cfg.architecture(), cfg.seed)?;
    for _ in 0..cfg.effective_n_g() {
        let episodes = sample_episodes(problem, cfg, state.global_index + 1)?;
        let (next, report) = run_global_update(&state, &episodes, &problem.validation, cfg)?;
        on_update(&next, &report)?;
        state = next;
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetEvaluation {
    pub metrics: GcdMetrics,
    pub k_used: usize,
}

/// Clusters the target set under `params`. Old classes are the source classes.
pub fn evaluate_on_target(
    params: &ParamVector,
    problem: &SyntheticProblem,
    cfg: &TrainingConfig,
) -> Result<TargetEvaluation> {
    let encoder = init_from_global(params, cfg.architecture())?;
    let labels: Vec<ClassId> = problem.target.iter().map(|s| s.hidden_label().reveal()).collect();
    let emb = embed_all(&encoder, problem.target.iter().map(|s| s.features.clone()))?;
    let k_used = match cfg.eval.target_k {
        TargetK::GroundTruth => labels.iter().collect::<BTreeSet<_>>().len(),
        TargetK::Estimate => {
            let lab_x = embed_all(&encoder, problem.source.iter().map(|s| s.features.clone()))?;
            let lab_y: Vec<ClassId> = problem.source.iter().map(|s| s.label).collect();
            let k_max = cfg.eval.k_max.min(emb.len() + lab_x.len());
            estimate_k(
                &emb,
                (&lab_x, &lab_y),
                problem.known_classes.len(),
                k_max,
                cfg.seed,
                cfg.eval.clustering(),
            )?
            .k_hat
        }
    };
    let mut rng = SeededRng::derive(cfg.seed, &[TAG_TARGET, 0]);
    let metrics = cluster_and_score(&emb, &labels, &problem.known_classes, k_used, &mut rng, cfg.eval.clustering())?;
    Ok(TargetEvaluation { metrics, k_used })
}

/// Result of one complete run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub state: GlobalModelState,
    pub target: TargetEvaluation,
}

pub fn train_and_evaluate(cfg: &TrainingConfig, problem: &SyntheticProblem) -> Result<RunSummary> {
    let state = train(cfg, problem, |_, _| Ok(()))?;
    let target = evaluate_on_target(&state.params, problem, cfg)?;
    Ok(RunSummary { state, target })
}

/// Independent runs for each episode count on the same data.
pub fn sweep_episodes(
    cfg: &TrainingConfig,
    problem: &SyntheticProblem,
    episode_counts: &[usize],
) -> Result<Vec<(usize, TargetEvaluation)>> {
    if let Some(bad) = episode_counts.iter().find(|n| **n == 0) {
        return Err(Error::Argument(format!("episode count {bad} must be at least 1")));
    }
    episode_counts
        .iter()
        .map(|&n_e| {
            let run_cfg = TrainingConfig { n_e, ..cfg.clone() };
            Ok((n_e, train_and_evaluate(&run_cfg, problem)?.target))
        })
        .collect()
}

/// One run per merge strategy on the same data and initialization.
pub fn compare_merges(
    cfg: &TrainingConfig,
    problem: &SyntheticProblem,
    strategies: &[MergeStrategy],
) -> Result<Vec<(MergeStrategy, RunSummary)>> {
    strategies
        .iter()
        .map(|&strategy| {
            let mut run_cfg = cfg.clone();
            run_cfg.merge.strategy = strategy;
            run_cfg.ablations.minmax_weights = false;
            Ok((strategy, train_and_evaluate(&run_cfg, problem)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainingConfig {
        let mut cfg = TrainingConfig {
            n_g: 2,
            n_e: 2,
            epochs_per_episode: 2,
            batch_size: 32,
            ..Default::default()
        };
        cfg.problem.samples_per_class = 20;
        cfg.problem.pseudo_samples_per_class = 10;
        cfg.problem.validation_samples_per_class_per_domain = 8;
        cfg.problem.target_samples_per_class = 10;
        cfg.eval.restarts = 1;
        cfg
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0.1, 9, 10) > 0.0);
    }

    #[test]
    fn zero_epochs_leave_a_zero_task_vector() {
        let mut cfg = small_cfg();
        cfg.epochs_per_episode = 0;
        let problem = SyntheticProblem::generate(&cfg.problem, 3).unwrap();
        let state = GlobalModelState::initial(cfg.architecture(), cfg.seed).unwrap();
        let episodes = sample_episodes(&problem, &cfg, 1).unwrap();
        let out = run_episode(&state.params, &episodes[0], &problem.validation, &cfg, 1).unwrap();
        let r = out.completed().unwrap();
        assert!(r.task_vector.delta().values().iter().all(|v| *v == 0.0));
        let encoder = init_from_global(&state.params, cfg.architecture()).unwrap();
        let mut rng = SeededRng::derive(cfg.seed, &[TAG_VALID, 1, 0]);
        let (m, _) = validate_encoder(&encoder, &problem.validation.samples, &r.known_classes, &cfg, &mut rng).unwrap();
        assert_eq!(m, r.valid_metrics);
    }

    #[test]
    fn episodes_are_deterministic() {
        let cfg = small_cfg();
        let problem = SyntheticProblem::generate(&cfg.problem, 4).unwrap();
        let state = GlobalModelState::initial(cfg.architecture(), cfg.seed).unwrap();
        let episodes = sample_episodes(&problem, &cfg, 1).unwrap();
        let a = run_episode(&state.params, &episodes[1], &problem.validation, &cfg, 1).unwrap();
        let b = run_episode(&state.params, &episodes[1], &problem.validation, &cfg, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn history_grows_one_row_per_update() {
        let cfg = small_cfg();
        let problem = SyntheticProblem::generate(&cfg.problem, 5).unwrap();
        let mut seen = Vec::new();
        let state = train(&cfg, &problem, |s, r| {
            seen.push((s.history.len(), r.global_index));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(1, 1), (2, 2)]);
        assert_eq!(state.history.len(), state.global_index);
    }

    #[test]
    fn single_episode_update_returns_local_model() {
        let mut cfg = small_cfg();
        cfg.n_e = 1;
        let problem = SyntheticProblem::generate(&cfg.problem, 6).unwrap();
        let state = GlobalModelState::initial(cfg.architecture(), cfg.seed).unwrap();
        let episodes = sample_episodes(&problem, &cfg, 1).unwrap();
        let (next, report) = run_global_update(&state, &episodes, &problem.validation, &cfg).unwrap();
        let local = &report.outcomes[0].completed().unwrap().local_params;
        assert_eq!(&next.params, local);
        assert_eq!(next.history[0].sign_conflict, None);
    }

    #[test]
    fn zero_updates_return_initial_model() {
        let mut cfg = small_cfg();
        cfg.n_g = 0;
        let problem = SyntheticProblem::generate(&cfg.problem, 7).unwrap();
        let state = train(&cfg, &problem, |_, _| Ok(())).unwrap();
        assert_eq!(state, GlobalModelState::initial(cfg.architecture(), cfg.seed).unwrap());
    }

    #[test]
    fn static_split_reuses_classes_and_no_synthetic_drops_pseudo_targets() {
        let mut cfg = small_cfg();
        cfg.n_e = 4;
        cfg.ablations.static_split = true;
        cfg.ablations.no_synthetic = true;
        let problem = SyntheticProblem::generate(&cfg.problem, 8).unwrap();
        let eps = sample_episodes(&problem, &cfg, 1).unwrap();
        assert!(eps.iter().all(|e| e.known_classes == eps[0].known_classes));
        assert!(eps.iter().all(|e| e.unlabeled_pseudo_target.is_empty()));
    }
}
