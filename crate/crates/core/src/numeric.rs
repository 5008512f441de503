//! Flat parameter vectors, small vector helpers, seeded randomness and a
//! central-difference gradient oracle.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg, Error, Result};

/// Identifies the network architecture a flat parameter vector was laid out for.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LayoutId(Arc<str>);

impl LayoutId {
    pub fn new(id: impl AsRef<str>) -> Self {
        LayoutId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LayoutId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Model weights flattened into a single vector.
///
/// Arithmetic between two vectors is only defined when their layouts match.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: LayoutId,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: LayoutId) -> Result<Self> {
        if values.is_empty() {
            return arg("parameter vector must be non-empty");
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return arg(format!("parameter {i} is not finite"));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(len: usize, layout: LayoutId) -> Result<Self> {
        Self::new(vec![0.0; len], layout)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &LayoutId {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return arg(format!(
                "layout mismatch: {} vs {}",
                self.layout, other.layout
            ));
        }
        if self.values.len() != other.values.len() {
            return arg(format!(
                "length mismatch: {} vs {}",
                self.values.len(),
                other.values.len()
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        ParamVector::new(values, self.layout.clone())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Result<ParamVector> {
        ParamVector::new(
            self.values.iter().map(|v| v * factor).collect(),
            self.layout.clone(),
        )
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Distance in L1 between two compatible vectors.
    pub fn l1_distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Deterministic random stream. Identical seeds give identical streams.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `base` and a path of indices, e.g.
    /// `(run_seed, global_index, episode_index)`.
    pub fn derive(base: u64, path: &[u64]) -> Self {
        let mut h = splitmix64(base);
        for &p in path {
            h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        SeededRng::new(h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return arg("softmax of an empty list");
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return arg(format!("softmax input {i} is not finite"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log(sum(exp(xs)))` without overflow. Input must be non-empty.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return arg(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm vector in cosine similarity".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate("cannot normalize a zero vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `a + b` split into the rounded sum and its exact rounding error.
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `a * b` split into the rounded product and its exact rounding error.
pub fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Correctly rounded sum of `xs` (Shewchuk's non-overlapping partials).
pub fn exact_sum(xs: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::with_capacity(8);
    for &value in xs {
        let mut x = value;
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Round-half-even correction when the remaining partials push the tail
    // past the halfway point.
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Central-difference gradient `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return arg("finite-difference step must be positive");
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Evaluation(format!("objective at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / norm(a).max(norm(b)).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax(&[42.0]).unwrap(), vec![1.0]);
        let w = softmax(&[0.7, 0.3]).unwrap();
        assert!((w[0] - 0.598688).abs() < 1e-6);
        assert!((w[1] - 0.401312).abs() < 1e-6);
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn softmax_survives_large_scores() {
        let w = softmax(&[1000.0, 999.0]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > w[1]);
    }

    #[test]
    fn softmax_of_ten_thousand_scores() {
        let mut rng = SeededRng::new(5);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
        let w = softmax(&scores).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_sum_is_correctly_rounded() {
        assert_eq!(exact_sum(&[]), 0.0);
        assert_eq!(exact_sum(&[1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum(&[0.1; 10]), 1.0);
        assert_eq!(exact_sum(&[1.0, 1e-16, 1e-16]), 1.0 + 2.220446049250313e-16);
        let (s, e) = two_sum(1.0, 1e-20);
        assert_eq!((s, e), (1.0, 1e-20));
        let (p, e) = two_product(0.1, 0.1);
        assert_eq!(exact_sum(&[p, e, -p]), e);
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - 0.707107).abs() < 1e-6);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let u = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| dot(x, x), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 3.5, &[1.0, -2.0, 0.1], 1e-5).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let g = finite_diff_grad(|x| x.iter().sum(), &[0.4, 7.0, -3.0], 1e-5).unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-8));
        assert!(finite_diff_grad(|x| 1.0 / x[0], &[0.0], 1e-5).is_ok());
        assert!(matches!(
            finite_diff_grad(|_| f64::NAN, &[0.0], 1e-5),
            Err(Error::Evaluation(_))
        ));
        assert!(finite_diff_grad(|x| x[0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn param_vector_rules() {
        let a = ParamVector::new(vec![1.0, 2.0], LayoutId::new("a")).unwrap();
        let b = ParamVector::new(vec![0.5, 0.25], LayoutId::new("a")).unwrap();
        let c = ParamVector::new(vec![0.5, 0.25], LayoutId::new("c")).unwrap();
        assert_eq!(a.sub(&b).unwrap().add(&b).unwrap(), a);
        assert!(a.add(&c).is_err());
        assert!(ParamVector::new(vec![], LayoutId::new("a")).is_err());
        assert!(ParamVector::new(vec![f64::NAN], LayoutId::new("a")).is_err());
        assert_eq!(a.l1_distance(&b).unwrap(), 2.25);
    }

    #[test]
    fn seeded_streams_repeat() {
        let mut a = SeededRng::new(17);
        let mut b = SeededRng::new(17);
        for _ in 0..1_000_000 {
            assert_eq!(rand::RngCore::next_u64(&mut a), rand::RngCore::next_u64(&mut b));
        }
        let mut c = SeededRng::derive(17, &[1, 2]);
        let mut d = SeededRng::derive(17, &[2, 1]);
        assert_ne!(rand::RngCore::next_u64(&mut c), rand::RngCore::next_u64(&mut d));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(scores in prop::collection::vec(-50.0f64..50.0, 1..200)) {
            let w = softmax(&scores).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|v| *v > 0.0 && *v <= 1.0));
        }

        #[test]
        fn softmax_shift_invariant(scores in prop::collection::vec(-5.0f64..5.0, 1..50), c in -100.0f64..100.0) {
            let a = softmax(&scores).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_keeps_unique_argmax(scores in prop::collection::vec(-5.0f64..5.0, 2..50)) {
            let arg_max = |v: &[f64]| v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
            let m = arg_max(&scores);
            let unique = scores.iter().filter(|s| **s == scores[m]).count() == 1;
            prop_assume!(unique);
            prop_assert_eq!(arg_max(&softmax(&scores).unwrap()), m);
        }

        #[test]
        fn normalize_gives_unit_norm(v in prop::collection::vec(-10.0f64..10.0, 1..30)) {
            prop_assume!(norm(&v) > 1e-6);
            let u = l2_normalize(&v).unwrap();
            prop_assert!((norm(&u) - 1.0).abs() < 1e-12);
        }
    }
}
