mod common;

use std::collections::BTreeSet;

use episodic_core::encoder::{ClassProbabilities, EncoderParams};
use episodic_core::eval::ClusteringSettings;
use episodic_core::losses::{adv_osda, margin, source_ce, sup_contrastive, unsup_contrastive, PrototypeSet};
use episodic_core::orchestrator::sample_episodes;
use episodic_core::synth::{augment, generate_pseudo_target, generate_source_with_nuisance};
use episodic_core::{
    estimate_k, hungarian_accuracy, read_checkpoint, train, write_checkpoint, Architecture, DomainRole, DomainSpec,
    ProblemConfig, SeededRng, SyntheticProblem, TrainingConfig,
};
use proptest::prelude::*;

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn identity_domain_preserves_marginals() {
    let mut rng = SeededRng::new(21);
    let (classes, source) = generate_source_with_nuisance(5, 8, 4, 2000, 1.0, 3.0, 2.5, &mut rng).unwrap();
    let identity = DomainSpec::identity("copy", 8, DomainRole::EpisodeTrain);
    let copy = generate_pseudo_target(&classes, &identity, 2000, &mut rng).unwrap();
    let (n, m) = (source.len() as f64, copy.len() as f64);
    assert_eq!((n, m), (1e4, 1e4));
    // Critical value of the two-sample test at significance 0.01.
    let critical = 1.628 * ((n + m) / (n * m)).sqrt();
    for d in 0..8 {
        let stat = ks_statistic(
            source.iter().map(|s| s.features[d]).collect(),
            copy.iter().map(|s| s.features[d]).collect(),
        );
        assert!(stat < critical, "coordinate {d}: D = {stat} >= {critical}");
    }
}

#[test]
fn pseudo_targets_keep_their_class() {
    let mut rng = SeededRng::new(5);
    let (classes, _) = generate_source_with_nuisance(4, 8, 4, 1, 1.0, 1.0, 3.0, &mut rng).unwrap();
    let domain = DomainSpec::random("d", DomainRole::EpisodeTrain, 8, &Default::default(), &mut rng);
    let samples = generate_pseudo_target(&classes, &domain, 30, &mut rng).unwrap();
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s.hidden_label().reveal(), classes[i / 30].class_id);
    }
}

#[test]
fn augmentation_displacement_bound() {
    let (jitter, rotation, dim) = (0.1, 0.2, 8);
    let mut rng = SeededRng::new(99);
    let mut violations = 0;
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..dim).map(|_| 3.0 * rng.normal()).collect();
        let y = augment(&x, &mut rng, jitter, rotation).unwrap();
        let moved = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let size = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if moved > size * rotation + 6.0 * jitter * (dim as f64).sqrt() {
            violations += 1;
        }
    }
    // Probability above 0.999 means at most 10 misses in 10^4 draws.
    assert!(violations <= 10, "{violations} draws exceeded the bound");
}

#[test]
fn episode_splits_and_domain_separation() {
    let cfg = TrainingConfig::default();
    let problem = SyntheticProblem::generate(&cfg.problem, 4).unwrap();
    let pool: BTreeSet<usize> = problem.source.iter().map(|s| s.label).collect();
    let validation: BTreeSet<&str> = problem.validation.source_domains.iter().map(|d| d.domain_id.as_str()).collect();
    for g in 1..=20 {
        for e in sample_episodes(&problem, &cfg, g).unwrap() {
            let known: BTreeSet<usize> = e.known_classes.iter().copied().collect();
            assert!(!known.is_empty() && known.len() < pool.len() && known.is_subset(&pool));
            assert!(e.labeled_source.iter().all(|s| known.contains(&s.label)));
            let domain = e.pseudo_target_domain.as_deref().unwrap();
            assert!(!validation.contains(domain));
            assert!(e.unlabeled_pseudo_target.iter().all(|s| &*s.domain_id == domain));
        }
    }
}

fn probabilities(rng: &mut SeededRng, n: usize, spread: f64) -> ClassProbabilities {
    let logits: Vec<f64> = (0..n).map(|_| spread * rng.normal()).collect();
    ClassProbabilities::from_logits(&logits).unwrap()
}

#[test]
fn head_losses_are_bounded() {
    let mut rng = SeededRng::new(3);
    let m = 0.7;
    for _ in 0..10_000 {
        let n = 2 + rng.below(6);
        let p = probabilities(&mut rng, n, 3.0);
        let known = p.known();
        let best = known.iter().copied().fold(f64::MIN, f64::max);
        let gap = (best - p.open_set()).abs();
        let h = margin(&p, m).unwrap();
        assert!(h.loss >= 0.0 && h.loss <= m);
        if gap >= m {
            assert_eq!(h.loss, 0.0);
        }
        let ce = source_ce(&p, rng.below(n - 1)).unwrap();
        let adv = adv_osda(&p, 0.5).unwrap();
        assert!(ce.loss.is_finite() && ce.loss >= 0.0);
        assert!(adv.loss.is_finite() && adv.loss >= 0.0);
    }
}

fn unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sup_contrastive_ignores_class_relabeling(seed in any::<u64>(), shift in 1usize..5) {
        let mut rng = SeededRng::new(seed);
        let k = 5;
        let protos: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng, 6)).collect();
        let z: Vec<Vec<f64>> = (0..8).map(|_| unit(&mut rng, 6)).collect();
        let labels: Vec<usize> = (0..8).map(|_| rng.below(k)).collect();
        let relabel = |y: usize| (y + shift) % k;
        let mut moved = vec![Vec::new(); k];
        for (y, p) in protos.iter().enumerate() {
            moved[relabel(y)] = p.clone();
        }
        let new_labels: Vec<usize> = labels.iter().map(|&y| relabel(y)).collect();
        let (a, ga) = sup_contrastive(&z, &labels, &PrototypeSet::new(protos).unwrap(), 0.1).unwrap();
        let (b, gb) = sup_contrastive(&z, &new_labels, &PrototypeSet::new(moved).unwrap(), 0.1).unwrap();
        prop_assert!(a >= 0.0 && (a - b).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert!(common::rel_err(&ga.concat(), &gb.concat(), 1e-12) < 1e-12);
    }

    #[test]
    fn unsup_contrastive_is_non_negative(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = SeededRng::new(seed);
        let a: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, 4)).collect();
        let p: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, 4)).collect();
        let (loss, _, _) = unsup_contrastive(&a, &p, 0.1).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }

    #[test]
    fn hungarian_ignores_index_permutations(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..80),
        cluster_shift in 0usize..5,
        class_shift in 0usize..5,
    ) {
        let assignments: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let old = [0usize, 2];
        let base = hungarian_accuracy(&assignments, &labels, &old).unwrap();
        let moved_assign: Vec<usize> = assignments.iter().map(|c| (c + cluster_shift) % 5).collect();
        let moved_labels: Vec<usize> = labels.iter().map(|y| (y + class_shift) % 5).collect();
        let moved_old: Vec<usize> = old.iter().map(|y| (y + class_shift) % 5).collect();
        let moved = hungarian_accuracy(&moved_assign, &moved_labels, &moved_old).unwrap();
        prop_assert_eq!((base.all, base.old, base.new), (moved.all, moved.old, moved.new));
        prop_assert_eq!(base.all, (base.correct_old + base.correct_new) as f64 / labels.len() as f64);
        prop_assert_eq!(base.correct_old + base.correct_new, common::brute_force_correct(&assignments, &labels));
        for v in [base.all, base.old, base.new] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn estimate_k_trace_is_reproducible() {
    let mut rng = SeededRng::new(8);
    let (_, samples) = generate_source_with_nuisance(4, 6, 6, 40, 1.0, 1.0, 3.0, &mut rng).unwrap();
    let (lab, unl): (Vec<_>, Vec<_>) = samples.iter().enumerate().partition(|(i, _)| i % 4 == 0);
    let lab_x: Vec<Vec<f64>> = lab.iter().map(|(_, s)| s.features.clone()).collect();
    let lab_y: Vec<usize> = lab.iter().map(|(_, s)| s.label).collect();
    let unl_x: Vec<Vec<f64>> = unl.iter().map(|(_, s)| s.features.clone()).collect();
    let run = || estimate_k(&unl_x, (&lab_x, &lab_y), 2, 12, 5, ClusteringSettings::default()).unwrap();
    let (a, b) = (run(), run());
    assert!((2..=12).contains(&a.k_hat));
    let bits = |t: &[(usize, f64)]| t.iter().map(|(k, s)| (*k, s.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a.trace), bits(&b.trace));
    assert_eq!(a.k_hat, b.k_hat);
}

#[test]
fn embedding_changes_smoothly_with_weights() {
    let arch = Architecture::default();
    let mut rng = SeededRng::new(17);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let enc = EncoderParams::init_random(arch, &mut rng);
        let x: Vec<f64> = (0..arch.input).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        let step: Vec<f64> = (0..arch.param_count()).map(|_| 1e-6 * rng.normal()).collect();
        let size = step.iter().map(|s| s * s).sum::<f64>().sqrt();
        let mut moved = enc.clone();
        moved.apply_step(&step, -1.0);
        let (a, b) = (enc.embed(&x).unwrap(), moved.embed(&x).unwrap());
        let change = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(change / size);
    }
    // Measured for the default architecture on inputs in [-3, 3]^8.
    assert!(worst < 25.0, "embedding moved {worst} times the weight change");
}

#[test]
fn history_matches_checkpoints() {
    let cfg = TrainingConfig {
        n_g: 3,
        n_e: 2,
        epochs_per_episode: 2,
        problem: ProblemConfig {
            samples_per_class: 20,
            pseudo_samples_per_class: 20,
            validation_samples_per_class_per_domain: 8,
            target_samples_per_class: 10,
            ..ProblemConfig::default()
        },
        ..TrainingConfig::default()
    };
    let problem = SyntheticProblem::generate(&cfg.problem, cfg.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let arch = cfg.architecture();
    let dims = [arch.input as u32, arch.hidden as u32, arch.embed as u32];
    let initial = episodic_core::GlobalModelState::initial(arch, cfg.seed).unwrap();
    write_checkpoint(std::fs::File::create(dir.path().join("0.ckpt")).unwrap(), &initial.params, &dims).unwrap();
    let state = train(&cfg, &problem, |next, _| {
        let f = std::fs::File::create(dir.path().join(format!("{}.ckpt", next.global_index)))?;
        write_checkpoint(f, &next.params, &dims)
    })
    .unwrap();
    assert_eq!(state.history.len(), state.global_index);
    let load = |g: usize| read_checkpoint(std::fs::File::open(dir.path().join(format!("{g}.ckpt"))).unwrap()).unwrap().0;
    for row in &state.history {
        let (before, after) = (load(row.global_index - 1), load(row.global_index));
        assert_eq!(after.layout(), before.layout());
        assert_eq!(row.weight_diff_l1, after.l1_distance(&before).unwrap());
    }
    assert_eq!(load(state.global_index).values(), state.params.values());
}
