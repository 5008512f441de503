//! Deterministic inputs for the kernel benchmarks.

use episodic_core::encoder::EncoderParams;
use episodic_core::losses::{ObjectiveBatch, PrototypeSet};
use episodic_core::merging::{task_vector, TaskVector};
use episodic_core::{Architecture, ClassifierParams, EpisodeModel, ParamVector, SeededRng};

pub use episodic_core;

fn gaussian_rows(rng: &mut SeededRng, rows: usize, width: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..width).map(|_| scale * rng.normal()).collect()).collect()
}

/// A global model and `n` task vectors from small random perturbations of it.
pub fn merge_fixture(n: usize, seed: u64) -> (ParamVector, Vec<TaskVector>) {
    let arch = Architecture::default();
    let mut rng = SeededRng::new(seed);
    let global = EncoderParams::init_random(arch, &mut rng).to_param_vector().unwrap();
    let tvs = (0..n)
        .map(|e| {
            let local: Vec<f64> = global.values().iter().map(|v| v + 0.01 * rng.normal()).collect();
            let local = ParamVector::new(local, global.layout().clone()).unwrap();
            task_vector(&global, &local, e, 1).unwrap()
        })
        .collect();
    (global, tvs)
}

/// `clusters` Gaussian blobs of `per_cluster` points in `dim` dimensions.
pub fn blobs(clusters: usize, per_cluster: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = SeededRng::new(seed);
    let centers = gaussian_rows(&mut rng, clusters, dim, 4.0);
    let mut points = Vec::with_capacity(clusters * per_cluster);
    let mut labels = Vec::with_capacity(clusters * per_cluster);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_cluster {
            points.push(center.iter().map(|m| m + rng.normal()).collect());
            labels.push(c);
        }
    }
    (points, labels)
}

/// One training step's model, batch and prototypes at the default sizes.
pub fn objective_fixture(labeled: usize, unlabeled: usize, seed: u64) -> (EpisodeModel, ObjectiveBatch, PrototypeSet) {
    let arch = Architecture::default();
    let mut rng = SeededRng::new(seed);
    let known = 2;
    let model = EpisodeModel::new(
        EncoderParams::init_random(arch, &mut rng),
        ClassifierParams::init_random(known, arch.embed, 0.01, &mut rng),
    )
    .unwrap();
    let batch = ObjectiveBatch {
        labeled: gaussian_rows(&mut rng, labeled, arch.input, 1.0),
        labels: (0..labeled).map(|i| i % known).collect(),
        labeled_aug: gaussian_rows(&mut rng, labeled, arch.input, 1.0),
        unlabeled: gaussian_rows(&mut rng, unlabeled, arch.input, 1.0),
        unlabeled_aug: gaussian_rows(&mut rng, unlabeled, arch.input, 1.0),
    };
    let protos = PrototypeSet::new(
        gaussian_rows(&mut rng, known, arch.embed, 1.0)
            .into_iter()
            .map(|p| {
                let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                p.into_iter().map(|x| x / n).collect()
            })
            .collect(),
    )
    .unwrap();
    (model, batch, protos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_shapes() {
        let (global, tvs) = merge_fixture(6, 1);
        assert_eq!(tvs.len(), 6);
        assert!(tvs.iter().all(|t| t.delta().len() == global.len()));
        let (points, labels) = blobs(7, 50, 16, 2);
        assert_eq!((points.len(), labels.len(), points[0].len()), (350, 350, 16));
        let (_, batch, protos) = objective_fixture(64, 64, 3);
        assert_eq!((batch.rows().len(), protos.len()), (256, 2));
    }
}
