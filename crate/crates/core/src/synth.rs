//! Procedural data: a labeled source domain, style-shifted pseudo-target
//! domains, a frozen mixed validation set and per-episode splits.
//!
//! A style domain applies `x' = R(angle) diag(scale) x + shift + noise` to fresh
//! draws from the class Gaussians. `R(angle)` is a block rotation acting on the
//! coordinate pairs `(0,1), (2,3), ...`; an odd trailing coordinate is left
//! untouched. The transform never changes a sample's class.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::numeric::{squared_distance, SeededRng};

pub type ClassId = usize;

/// Axis-aligned Gaussian class model in feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub class_id: ClassId,
    pub mean: Vec<f64>,
    /// Standard deviation along the class-informative axes.
    pub covariance_scale: f64,
    /// Standard deviation per axis; equals `covariance_scale` on informative
    /// axes and the nuisance level elsewhere.
    pub axis_sigma: Vec<f64>,
}

impl ClassSpec {
    fn draw(&self, rng: &mut SeededRng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.axis_sigma)
            .map(|(m, s)| m + s * rng.normal())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainRole {
    Source,
    EpisodeTrain,
    Validation,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub domain_id: String,
    pub rotation_angle: f64,
    pub scale_factors: Vec<f64>,
    pub shift: Vec<f64>,
    pub noise_sigma: f64,
    pub role: DomainRole,
}

/// Ranges from which random style domains are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleRanges {
    pub max_rotation: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub shift_sigma: f64,
    pub noise_max: f64,
}

impl Default for StyleRanges {
    fn default() -> Self {
        StyleRanges {
            max_rotation: 0.6,
            scale_min: 0.6,
            scale_max: 1.6,
            shift_sigma: 1.0,
            noise_max: 0.3,
        }
    }
}

impl DomainSpec {
    pub fn identity(domain_id: impl Into<String>, dim: usize, role: DomainRole) -> Self {
        DomainSpec {
            domain_id: domain_id.into(),
            rotation_angle: 0.0,
            scale_factors: vec![1.0; dim],
            shift: vec![0.0; dim],
            noise_sigma: 0.0,
            role,
        }
    }

    pub fn random(
        domain_id: impl Into<String>,
        role: DomainRole,
        dim: usize,
        ranges: &StyleRanges,
        rng: &mut SeededRng,
    ) -> Self {
        let rotation_angle = rng.uniform_range(-ranges.max_rotation, ranges.max_rotation);
        let scale_factors = (0..dim)
            .map(|_| rng.uniform_range(ranges.scale_min, ranges.scale_max))
            .collect();
        let shift = (0..dim).map(|_| ranges.shift_sigma * rng.normal()).collect();
        let noise_sigma = rng.uniform_range(0.0, ranges.noise_max);
        DomainSpec {
            domain_id: domain_id.into(),
            rotation_angle,
            scale_factors,
            shift,
            noise_sigma,
            role,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale_factors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_factors.iter().any(|s| !(*s > 0.0)) {
            return arg(format!("domain {}: scale factors must be positive", self.domain_id));
        }
        if !(self.noise_sigma >= 0.0) {
            return arg(format!("domain {}: negative noise", self.domain_id));
        }
        if self.shift.len() != self.scale_factors.len() {
            return arg(format!("domain {}: shift/scale dimension mismatch", self.domain_id));
        }
        Ok(())
    }

    fn same_transform(&self, other: &DomainSpec) -> bool {
        self.rotation_angle == other.rotation_angle
            && self.scale_factors == other.scale_factors
            && self.shift == other.shift
            && self.noise_sigma == other.noise_sigma
    }

    /// Deterministic part of the style transform (no noise).
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().zip(&self.scale_factors).map(|(v, s)| v * s).collect();
        let (sin, cos) = self.rotation_angle.sin_cos();
        for pair in y.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = cos * a - sin * b;
            pair[1] = sin * a + cos * b;
        }
        for (v, s) in y.iter_mut().zip(&self.shift) {
            *v += s;
        }
        y
    }
}

/// Ground-truth class of an unlabeled sample. Only evaluation code reads it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HiddenLabel(ClassId);

impl HiddenLabel {
    pub(crate) fn new(class_id: ClassId) -> Self {
        HiddenLabel(class_id)
    }

    /// Reveal the label. Training code must never call this.
    pub fn reveal(self) -> ClassId {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: ClassId,
    pub domain_id: Arc<str>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSample {
    pub features: Vec<f64>,
    pub domain_id: Arc<str>,
    truth: HiddenLabel,
}

impl UnlabeledSample {
    pub fn hidden_label(&self) -> HiddenLabel {
        self.truth
    }
}

impl LabeledSample {
    /// Forget the label, keeping it sealed for evaluation.
    pub fn to_unlabeled(&self) -> UnlabeledSample {
        UnlabeledSample {
            features: self.features.clone(),
            domain_id: self.domain_id.clone(),
            truth: HiddenLabel::new(self.label),
        }
    }
}

/// One episode's cross-domain task.
#[derive(Clone, Debug)]
pub struct EpisodeData {
    pub episode_index: usize,
    pub labeled_source: Vec<LabeledSample>,
    pub unlabeled_pseudo_target: Vec<UnlabeledSample>,
    pub known_classes: Vec<ClassId>,
    pub pseudo_target_domain: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ValidationSet {
    pub samples: Vec<UnlabeledSample>,
    pub source_domains: Vec<DomainSpec>,
}

/// Isotropic classes: every axis carries class information.
pub fn generate_source(
    n_classes: usize,
    dim: usize,
    samples_per_class: usize,
    covariance_scale: f64,
    mean_spread: f64,
    rng: &mut SeededRng,
) -> Result<(Vec<ClassSpec>, Vec<LabeledSample>)> {
    generate_source_with_nuisance(n_classes, dim, dim, samples_per_class, covariance_scale, covariance_scale, mean_spread, rng)
}

/// Class means differ only on the first `informative_dims` axes; the rest
/// carry class-independent noise with standard deviation `nuisance_sigma`.
/// Means are pairwise at least `4 * covariance_scale` apart.
#[allow(clippy::too_many_arguments)]
pub fn generate_source_with_nuisance(
    n_classes: usize,
    dim: usize,
    informative_dims: usize,
    samples_per_class: usize,
    covariance_scale: f64,
    nuisance_sigma: f64,
    mean_spread: f64,
    rng: &mut SeededRng,
) -> Result<(Vec<ClassSpec>, Vec<LabeledSample>)> {
    if n_classes < 2 || dim < 2 || samples_per_class < 1 {
        return arg("need n_classes >= 2, dim >= 2 and samples_per_class >= 1");
    }
    if informative_dims == 0 || informative_dims > dim {
        return arg("informative_dims must lie in 1..=dim");
    }
    if !(covariance_scale > 0.0) || !(mean_spread > 0.0) || !(nuisance_sigma > 0.0) {
        return arg("covariance_scale, nuisance_sigma and mean_spread must be positive");
    }
    const MAX_ATTEMPTS: usize = 10_000;
    let min_sq = (4.0 * covariance_scale).powi(2);
    let axis_sigma: Vec<f64> = (0..dim)
        .map(|i| if i < informative_dims { covariance_scale } else { nuisance_sigma })
        .collect();
    let mut classes: Vec<ClassSpec> = Vec::with_capacity(n_classes);
    for class_id in 0..n_classes {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let mean: Vec<f64> = (0..dim)
                .map(|i| if i < informative_dims { mean_spread * rng.normal() } else { 0.0 })
                .collect();
            if classes.iter().all(|c| squared_distance(&c.mean, &mean) >= min_sq) {
                classes.push(ClassSpec {
                    class_id,
                    mean,
                    covariance_scale,
                    axis_sigma: axis_sigma.clone(),
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not separate class {class_id} after {MAX_ATTEMPTS} draws"
            )));
        }
    }
    let domain: Arc<str> = Arc::from("source");
    let mut samples = Vec::with_capacity(n_classes * samples_per_class);
    for class in &classes {
        for _ in 0..samples_per_class {
            samples.push(LabeledSample {
                features: class.draw(rng),
                label: class.class_id,
                domain_id: domain.clone(),
            });
        }
    }
    Ok((classes, samples))
}

pub fn generate_pseudo_target(
    classes: &[ClassSpec],
    domain: &DomainSpec,
    samples_per_class: usize,
    rng: &mut SeededRng,
) -> Result<Vec<UnlabeledSample>> {
    if domain.role == DomainRole::Source {
        return arg("pseudo-target domains cannot have the source role");
    }
    domain.validate()?;
    if let Some(c) = classes.iter().find(|c| c.mean.len() != domain.dim()) {
        return arg(format!(
            "class {} has dimension {} but domain {} expects {}",
            c.class_id,
            c.mean.len(),
            domain.domain_id,
            domain.dim()
        ));
    }
    let id: Arc<str> = Arc::from(domain.domain_id.as_str());
    let mut out = Vec::with_capacity(classes.len() * samples_per_class);
    for class in classes {
        for _ in 0..samples_per_class {
            let mut x = domain.transform(&class.draw(rng));
            for v in &mut x {
                *v += domain.noise_sigma * rng.normal();
            }
            out.push(UnlabeledSample {
                features: x,
                domain_id: id.clone(),
                truth: HiddenLabel::new(class.class_id),
            });
        }
    }
    Ok(out)
}

/// How the per-episode known classes are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitMode {
    /// Fresh uniformly random subset each episode.
    Dynamic,
    /// The same subset every episode.
    Static(Vec<ClassId>),
}

/// Uniformly random subset of `pool` with `round(known_fraction * |pool|)` members, sorted.
pub fn choose_known_classes(
    pool: &[ClassId],
    known_fraction: f64,
    rng: &mut SeededRng,
) -> Result<Vec<ClassId>> {
    if !(known_fraction > 0.0 && known_fraction < 1.0) {
        return arg("known_fraction must lie in (0, 1)");
    }
    let count = (known_fraction * pool.len() as f64).round() as usize;
    if count == 0 || count >= pool.len() {
        return arg(format!(
            "known_fraction {known_fraction} selects {count} of {} classes",
            pool.len()
        ));
    }
    let mut shuffled = pool.to_vec();
    rng.shuffle(&mut shuffled);
    shuffled.truncate(count);
    shuffled.sort_unstable();
    Ok(shuffled)
}

pub fn source_classes(source: &[LabeledSample]) -> Vec<ClassId> {
    source
        .iter()
        .map(|s| s.label)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Build one episode: a labeled reduced-class source subset and an unlabeled
/// pseudo-target covering every source class, drawn from one randomly chosen
/// episode-train domain.
#[allow(clippy::too_many_arguments)]
pub fn sample_episode(
    source: &[LabeledSample],
    classes: &[ClassSpec],
    domains: &[DomainSpec],
    episode_index: usize,
    known_fraction: f64,
    split: &SplitMode,
    pseudo_samples_per_class: usize,
    rng: &mut SeededRng,
) -> Result<EpisodeData> {
    let train_domains: Vec<&DomainSpec> = domains
        .iter()
        .filter(|d| d.role == DomainRole::EpisodeTrain)
        .collect();
    if train_domains.is_empty() {
        return arg("no episode-train domain available");
    }
    let pool = source_classes(source);
    let known_classes = match split {
        SplitMode::Dynamic => choose_known_classes(&pool, known_fraction, rng)?,
        SplitMode::Static(fixed) => {
            if fixed.is_empty() || fixed.len() >= pool.len() || fixed.iter().any(|c| !pool.contains(c)) {
                return arg("static split must be a strict non-empty subset of the source classes");
            }
            fixed.clone()
        }
    };
    let domain = train_domains[rng.below(train_domains.len())];
    let covered: Vec<ClassSpec> = classes
        .iter()
        .filter(|c| pool.contains(&c.class_id))
        .cloned()
        .collect();
    let unlabeled = generate_pseudo_target(&covered, domain, pseudo_samples_per_class, rng)?;
    let labeled = source
        .iter()
        .filter(|s| known_classes.contains(&s.label))
        .cloned()
        .collect();
    Ok(EpisodeData {
        episode_index,
        labeled_source: labeled,
        unlabeled_pseudo_target: unlabeled,
        known_classes,
        pseudo_target_domain: Some(domain.domain_id.clone()),
    })
}

/// Episode without any pseudo-target (source-only ablation).
pub fn source_only_episode(
    source: &[LabeledSample],
    episode_index: usize,
    known_fraction: f64,
    split: &SplitMode,
    rng: &mut SeededRng,
) -> Result<EpisodeData> {
    let pool = source_classes(source);
    let known_classes = match split {
        SplitMode::Dynamic => choose_known_classes(&pool, known_fraction, rng)?,
        SplitMode::Static(fixed) => fixed.clone(),
    };
    Ok(EpisodeData {
        episode_index,
        labeled_source: source
            .iter()
            .filter(|s| known_classes.contains(&s.label))
            .cloned()
            .collect(),
        unlabeled_pseudo_target: Vec::new(),
        known_classes,
        pseudo_target_domain: None,
    })
}

pub fn build_validation_set(
    classes: &[ClassSpec],
    validation_domains: &[DomainSpec],
    episode_domains: &[DomainSpec],
    samples_per_class_per_domain: usize,
    rng: &mut SeededRng,
) -> Result<ValidationSet> {
    for v in validation_domains {
        if v.role != DomainRole::Validation {
            return Err(Error::Config(format!(
                "domain {} does not have the validation role",
                v.domain_id
            )));
        }
        if let Some(e) = episode_domains
            .iter()
            .find(|e| e.domain_id == v.domain_id || e.same_transform(v))
        {
            return Err(Error::Config(format!(
                "validation domain {} overlaps episode domain {}",
                v.domain_id, e.domain_id
            )));
        }
    }
    let mut samples = Vec::new();
    for d in validation_domains {
        samples.extend(generate_pseudo_target(classes, d, samples_per_class_per_domain, rng)?);
    }
    Ok(ValidationSet {
        samples,
        source_domains: validation_domains.to_vec(),
    })
}

/// Random rotation in one random coordinate plane plus Gaussian jitter.
pub fn augment(x: &[f64], rng: &mut SeededRng, jitter_sigma: f64, max_rotation: f64) -> Result<Vec<f64>> {
    if !(jitter_sigma >= 0.0) || !(max_rotation >= 0.0) {
        return arg("jitter_sigma and max_rotation must be non-negative");
    }
    let mut y = x.to_vec();
    let dim = y.len();
    if dim >= 2 {
        let i = rng.below(dim);
        let mut j = rng.below(dim - 1);
        if j >= i {
            j += 1;
        }
        let angle = rng.uniform_range(-max_rotation, max_rotation);
        let (sin, cos) = angle.sin_cos();
        let (a, b) = (y[i], y[j]);
        y[i] = cos * a - sin * b;
        y[j] = sin * a + cos * b;
    }
    for v in &mut y {
        *v += jitter_sigma * rng.normal();
    }
    Ok(y)
}

/// Parameters of the synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Total classes; the target domain contains all of them.
    pub n_classes: usize,
    /// Labeled source classes (the first `n_known` class ids).
    pub n_known: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub pseudo_samples_per_class: usize,
    pub validation_samples_per_class_per_domain: usize,
    pub target_samples_per_class: usize,
    pub covariance_scale: f64,
    pub mean_spread: f64,
    /// Leading axes whose class means differ.
    pub informative_dims: usize,
    /// Noise level on the remaining axes.
    pub nuisance_sigma: f64,
    pub n_train_domains: usize,
    pub n_validation_domains: usize,
    pub style: StyleRanges,
    pub jitter_sigma: f64,
    pub augment_rotation: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            n_classes: 7,
            n_known: 4,
            dim: 8,
            samples_per_class: 50,
            pseudo_samples_per_class: 50,
            validation_samples_per_class_per_domain: 20,
            target_samples_per_class: 50,
            covariance_scale: 1.0,
            mean_spread: 3.0,
            informative_dims: 4,
            nuisance_sigma: 5.0,
            n_train_domains: 6,
            n_validation_domains: 3,
            style: StyleRanges::default(),
            jitter_sigma: 0.1,
            augment_rotation: 0.2,
        }
    }
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_known < 2 || self.n_known > self.n_classes {
            return Err(Error::Config("need 2 <= n_known <= n_classes".into()));
        }
        if self.informative_dims == 0 || self.informative_dims > self.dim {
            return Err(Error::Config("informative_dims must lie in 1..=dim".into()));
        }
        if self.n_train_domains == 0 || self.n_validation_domains == 0 {
            return Err(Error::Config("need at least one train and one validation domain".into()));
        }
        if self.style.scale_min <= 0.0 || self.style.scale_max < self.style.scale_min {
            return Err(Error::Config("invalid style scale range".into()));
        }
        Ok(())
    }
}

/// Everything a run needs: class models, labeled source, style domains,
/// the frozen validation set and the unseen target.
#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    pub config: ProblemConfig,
    pub classes: Vec<ClassSpec>,
    pub known_classes: Vec<ClassId>,
    pub source: Vec<LabeledSample>,
    pub train_domains: Vec<DomainSpec>,
    pub validation: ValidationSet,
    pub target_domain: DomainSpec,
    pub target: Vec<UnlabeledSample>,
}

impl SyntheticProblem {
    pub fn generate(config: &ProblemConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::derive(seed, &[0xDA7A]);
        let (classes, all_source) = generate_source_with_nuisance(
            config.n_classes,
            config.dim,
            config.informative_dims,
            config.samples_per_class,
            config.covariance_scale,
            config.nuisance_sigma,
            config.mean_spread,
            &mut rng,
        )?;
        let known_classes: Vec<ClassId> = (0..config.n_known).collect();
        let source: Vec<LabeledSample> = all_source
            .into_iter()
            .filter(|s| s.label < config.n_known)
            .collect();
        let train_domains: Vec<DomainSpec> = (0..config.n_train_domains)
            .map(|i| {
                DomainSpec::random(
                    format!("train-{i}"),
                    DomainRole::EpisodeTrain,
                    config.dim,
                    &config.style,
                    &mut rng,
                )
            })
            .collect();
        let validation_domains: Vec<DomainSpec> = (0..config.n_validation_domains)
            .map(|i| {
                DomainSpec::random(
                    format!("valid-{i}"),
                    DomainRole::Validation,
                    config.dim,
                    &config.style,
                    &mut rng,
                )
            })
            .collect();
        let known_specs: Vec<ClassSpec> = classes[..config.n_known].to_vec();
        let validation = build_validation_set(
            &known_specs,
            &validation_domains,
            &train_domains,
            config.validation_samples_per_class_per_domain,
            &mut rng,
        )?;
        let target_domain =
            DomainSpec::random("target", DomainRole::Target, config.dim, &config.style, &mut rng);
        let target =
            generate_pseudo_target(&classes, &target_domain, config.target_samples_per_class, &mut rng)?;
        Ok(SyntheticProblem {
            config: config.clone(),
            classes,
            known_classes,
            source,
            train_domains,
            validation,
            target_domain,
            target,
        })
    }

    pub fn known_specs(&self) -> Vec<ClassSpec> {
        self.classes
            .iter()
            .filter(|c| self.known_classes.contains(&c.class_id))
            .cloned()
            .collect()
    }
}

/// Write samples as CSV rows `domain_id,hidden_label,f0,..,f{D-1}`.
pub fn write_samples_csv<W: Write>(out: W, samples: &[UnlabeledSample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["domain_id".to_string(), "hidden_label".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for s in samples {
        if s.features.len() != dim {
            return arg("samples have inconsistent dimensions");
        }
        let mut row = vec![s.domain_id.to_string(), s.truth.0.to_string()];
        row.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<UnlabeledSample>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() < 3 {
            return Err(Error::Format(format!("row {line}: too few columns")));
        }
        let label: ClassId = rec[1]
            .parse()
            .map_err(|_| Error::Format(format!("row {line}: bad label")))?;
        let features = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("row {line}: bad feature")))?;
        out.push(UnlabeledSample {
            features,
            domain_id: Arc::from(&rec[0]),
            truth: HiddenLabel::new(label),
        });
    }
    Ok(out)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_of(rows: &[&Vec<f64>]) -> Vec<f64> {
        let mut m = vec![0.0; rows[0].len()];
        for r in rows {
            for (a, b) in m.iter_mut().zip(r.iter()) {
                *a += b;
            }
        }
        m.iter().map(|v| v / rows.len() as f64).collect()
    }

    #[test]
    fn source_cardinality() {
        let mut rng = SeededRng::new(1);
        let (classes, samples) = generate_source(7, 8, 50, 1.0, 1.5, &mut rng).unwrap();
        assert_eq!(classes.len(), 7);
        assert_eq!(samples.len(), 350);
        for c in &classes {
            assert_eq!(samples.iter().filter(|s| s.label == c.class_id).count(), 50);
        }
        for (i, a) in classes.iter().enumerate() {
            for b in &classes[i + 1..] {
                assert!(squared_distance(&a.mean, &b.mean).sqrt() >= 4.0);
            }
        }
        let (_, two) = generate_source(2, 2, 1, 1.0, 3.0, &mut rng).unwrap();
        assert_eq!(two.len(), 2);
        assert_ne!(two[0].label, two[1].label);
    }

    #[test]
    fn source_is_deterministic() {
        let a = generate_source(5, 4, 10, 1.0, 2.0, &mut SeededRng::new(9)).unwrap();
        let b = generate_source(5, 4, 10, 1.0, 2.0, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn source_rejects_bad_arguments_and_infeasible_separation() {
        let mut rng = SeededRng::new(0);
        assert!(generate_source(1, 8, 5, 1.0, 1.0, &mut rng).is_err());
        assert!(generate_source(3, 1, 5, 1.0, 1.0, &mut rng).is_err());
        assert!(matches!(
            generate_source(50, 2, 1, 1.0, 0.01, &mut rng),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn shift_only_domain_moves_means() {
        let mut rng = SeededRng::new(3);
        let (classes, _) = generate_source(2, 3, 1, 1.0, 2.0, &mut rng).unwrap();
        let mut d = DomainSpec::identity("shifted", 3, DomainRole::EpisodeTrain);
        d.shift = vec![2.0, -1.0, 0.5];
        let n = 10_000;
        let samples = generate_pseudo_target(&classes, &d, n, &mut rng).unwrap();
        for c in &classes {
            let rows: Vec<&Vec<f64>> = samples
                .iter()
                .filter(|s| s.hidden_label().reveal() == c.class_id)
                .map(|s| &s.features)
                .collect();
            let m = mean_of(&rows);
            // 5 standard errors of a unit-variance mean over 10^4 draws
            for k in 0..3 {
                assert!((m[k] - c.mean[k] - d.shift[k]).abs() < 0.05);
            }
        }
    }

    #[test]
    fn domains_differ_and_dimension_checked() {
        let mut rng = SeededRng::new(4);
        let (classes, _) = generate_source(3, 4, 1, 1.0, 2.0, &mut rng).unwrap();
        let ranges = StyleRanges::default();
        let d1 = DomainSpec::random("a", DomainRole::EpisodeTrain, 4, &ranges, &mut rng);
        let d2 = DomainSpec::random("b", DomainRole::EpisodeTrain, 4, &ranges, &mut rng);
        let s1 = generate_pseudo_target(&classes, &d1, 5, &mut SeededRng::new(1)).unwrap();
        let s2 = generate_pseudo_target(&classes, &d2, 5, &mut SeededRng::new(1)).unwrap();
        assert_ne!(s1[0].features, s2[0].features);
        assert_eq!(s1[0].hidden_label(), s2[0].hidden_label());
        let wrong = DomainSpec::identity("w", 3, DomainRole::Target);
        assert!(generate_pseudo_target(&classes, &wrong, 5, &mut rng).is_err());
        let src = DomainSpec::identity("s", 4, DomainRole::Source);
        assert!(generate_pseudo_target(&classes, &src, 5, &mut rng).is_err());
    }

    fn episode_fixture() -> (Vec<ClassSpec>, Vec<LabeledSample>, Vec<DomainSpec>) {
        let mut rng = SeededRng::new(11);
        let (classes, source) = generate_source(7, 8, 10, 1.0, 1.5, &mut rng).unwrap();
        let domains = (0..6)
            .map(|i| {
                DomainSpec::random(
                    format!("train-{i}"),
                    DomainRole::EpisodeTrain,
                    8,
                    &StyleRanges::default(),
                    &mut rng,
                )
            })
            .collect();
        (classes, source, domains)
    }

    #[test]
    fn episode_split_sizes() {
        let (classes, source, domains) = episode_fixture();
        let mut rng = SeededRng::new(5);
        let ep = sample_episode(&source, &classes, &domains, 0, 4.0 / 7.0, &SplitMode::Dynamic, 10, &mut rng)
            .unwrap();
        assert_eq!(ep.known_classes.len(), 4);
        assert!(ep.labeled_source.iter().all(|s| ep.known_classes.contains(&s.label)));
        assert_eq!(ep.labeled_source.len(), 40);
        let covered: BTreeSet<ClassId> = ep
            .unlabeled_pseudo_target
            .iter()
            .map(|s| s.hidden_label().reveal())
            .collect();
        assert_eq!(covered.len(), 7);
        assert!(sample_episode(&source, &classes, &domains, 0, 0.05, &SplitMode::Dynamic, 10, &mut rng).is_err());
        assert!(sample_episode(&source, &classes, &domains, 0, 0.97, &SplitMode::Dynamic, 10, &mut rng).is_err());
        assert!(sample_episode(&source, &classes, &[], 0, 0.5, &SplitMode::Dynamic, 10, &mut rng).is_err());
    }

    #[test]
    fn episode_subsets_vary_unless_static() {
        let (classes, source, domains) = episode_fixture();
        let mut rng = SeededRng::new(6);
        let mut seen = BTreeSet::new();
        for e in 0..100 {
            let ep = sample_episode(&source, &classes, &domains, e, 4.0 / 7.0, &SplitMode::Dynamic, 1, &mut rng)
                .unwrap();
            seen.insert(ep.known_classes);
        }
        // 35 possible 4-subsets of 7; 100 draws should visit many of them
        assert!(seen.len() > 10);
        let fixed = SplitMode::Static(vec![0, 2, 4, 6]);
        for e in 0..10 {
            let ep = sample_episode(&source, &classes, &domains, e, 4.0 / 7.0, &fixed, 1, &mut rng).unwrap();
            assert_eq!(ep.known_classes, vec![0, 2, 4, 6]);
        }
    }

    #[test]
    fn validation_set_rules() {
        let (classes, _, train) = episode_fixture();
        let mut rng = SeededRng::new(8);
        let valid: Vec<DomainSpec> = (0..3)
            .map(|i| {
                DomainSpec::random(format!("valid-{i}"), DomainRole::Validation, 8, &StyleRanges::default(), &mut rng)
            })
            .collect();
        let v = build_validation_set(&classes, &valid, &train, 20, &mut SeededRng::new(1)).unwrap();
        assert_eq!(v.samples.len(), 420);
        let again = build_validation_set(&classes, &valid, &train, 20, &mut SeededRng::new(1)).unwrap();
        assert_eq!(v.samples, again.samples);
        let mut clash = valid.clone();
        clash[0].domain_id = "train-0".into();
        assert!(matches!(
            build_validation_set(&classes, &clash, &train, 20, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn augment_identity_and_determinism() {
        let x = vec![0.5, -1.0, 2.0, 0.25];
        let mut rng = SeededRng::new(2);
        assert_eq!(augment(&x, &mut rng, 0.0, 0.0).unwrap(), x);
        let a = augment(&x, &mut SeededRng::new(3), 0.1, 0.2).unwrap();
        let b = augment(&x, &mut SeededRng::new(3), 0.1, 0.2).unwrap();
        assert_eq!(a, b);
        assert!(augment(&x, &mut rng, -1.0, 0.0).is_err());
    }

    #[test]
    fn problem_layout() {
        let cfg = ProblemConfig::default();
        let p = SyntheticProblem::generate(&cfg, 1).unwrap();
        assert_eq!(p.classes.len(), 7);
        assert_eq!(p.source.len(), 4 * 50);
        assert_eq!(p.validation.samples.len(), 4 * 3 * 20);
        assert_eq!(p.target.len(), 7 * 50);
        let train_ids: BTreeSet<&str> = p.train_domains.iter().map(|d| d.domain_id.as_str()).collect();
        assert!(p.validation.source_domains.iter().all(|d| !train_ids.contains(d.domain_id.as_str())));
    }

    #[test]
    fn csv_round_trip() {
        let p = SyntheticProblem::generate(&ProblemConfig::default(), 2).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &p.target).unwrap();
        let back = read_samples_csv(buf.as_slice()).unwrap();
        assert_eq!(back, p.target);
    }
}
