//! Run configuration, loaded from TOML. Every section rejects unknown keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Architecture;
use crate::error::{Error, Result};
use crate::eval::ClusteringSettings;
use crate::losses::LossConfig;
use crate::merging::{MergeConfig, MergeStrategy};
use crate::synth::ProblemConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// Source-only episodes: no pseudo-target data and no open-set terms.
    pub no_synthetic: bool,
    /// Every episode uses the same known-class subset.
    pub static_split: bool,
    /// Score episodes on their own pseudo-target instead of the held-out
    /// validation domains.
    pub episode_local_validation: bool,
    pub single_global_update: bool,
    /// Replace softmax merge weights with min-max normalized ones.
    pub minmax_weights: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetK {
    /// The number of classes actually present in the target set.
    GroundTruth,
    /// Brent search over `[n_known, k_max]`.
    Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub max_iters: usize,
    pub restarts: usize,
    pub target_k: TargetK,
    pub k_max: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_iters: 100,
            restarts: 4,
            target_k: TargetK::GroundTruth,
            k_max: 20,
        }
    }
}

impl EvalConfig {
    pub fn clustering(&self) -> ClusteringSettings {
        ClusteringSettings {
            max_iters: self.max_iters,
            restarts: self.restarts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
    /// Standard deviation of the freshly drawn classifier weights.
    pub classifier_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            embed: 16,
            classifier_init_scale: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub seed: u64,
    pub n_g: usize,
    pub n_e: usize,
    pub epochs_per_episode: usize,
    pub batch_size: usize,
    /// Initial step size; decays with a cosine schedule inside each episode.
    pub lr: f64,
    /// Share of the source classes labeled in each episode.
    pub known_fraction: f64,
    /// Run the episodes of one global update on the rayon pool.
    pub parallel: bool,
    pub model: ModelConfig,
    pub problem: ProblemConfig,
    pub loss: LossConfig,
    pub merge: MergeConfig,
    pub eval: EvalConfig,
    pub ablations: Ablations,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            seed: 0,
            n_g: 10,
            n_e: 6,
            epochs_per_episode: 8,
            batch_size: 128,
            lr: 0.1,
            known_fraction: 0.5,
            parallel: true,
            model: ModelConfig::default(),
            problem: ProblemConfig::default(),
            loss: LossConfig::default(),
            merge: MergeConfig::default(),
            eval: EvalConfig::default(),
            ablations: Ablations::default(),
        }
    }
}

impl TrainingConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainingConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_g == 0 || self.n_e == 0 || self.epochs_per_episode == 0 {
            return bad("n_g, n_e and epochs_per_episode must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.known_fraction > 0.0 && self.known_fraction < 1.0) {
            return bad("known_fraction must lie in (0, 1)");
        }
        if self.ablations.no_synthetic && self.ablations.episode_local_validation {
            return bad("episode_local_validation needs pseudo-target data");
        }
        if self.eval.max_iters == 0 || self.eval.restarts == 0 {
            return bad("eval.max_iters and eval.restarts must be at least 1");
        }
        if self.eval.k_max <= self.problem.n_known {
            return bad("eval.k_max must exceed problem.n_known");
        }
        if !(self.model.classifier_init_scale >= 0.0) {
            return bad("model.classifier_init_scale must be non-negative");
        }
        self.problem.validate()?;
        self.architecture().validate()?;
        self.loss.validate()?;
        self.merge.validate()?;
        let known = (self.known_fraction * self.problem.n_known as f64).round() as usize;
        if known == 0 || known >= self.problem.n_known {
            return bad("known_fraction must select a strict, non-empty subset of the source classes");
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input: self.problem.dim,
            hidden: self.model.hidden,
            embed: self.model.embed,
        }
    }

    /// Global updates actually run, after ablations.
    pub fn effective_n_g(&self) -> usize {
        if self.ablations.single_global_update {
            1
        } else {
            self.n_g
        }
    }

    pub fn effective_strategy(&self) -> MergeStrategy {
        if self.ablations.minmax_weights {
            MergeStrategy::MinmaxTa
        } else {
            self.merge.strategy
        }
    }
}
