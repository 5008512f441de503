//! Clustering evaluation: seeded k-means, Hungarian-matched accuracy with the
//! All/Old/New split, and cluster-count estimation.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{arg, Error, Result};
use crate::numeric::{squared_distance, SeededRng};

const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment pass.
    pub inertia_trace: Vec<f64>,
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, squared_distance(point, &centers[0]));
    for (c, center) in centers.iter().enumerate().skip(1) {
        let d = squared_distance(point, center);
        if d < best.1 - TIE_TOLERANCE {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.below(points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(points.len())
        };
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` passes have run. Empty clusters are re-seeded to
/// the point farthest from its current center.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut SeededRng, max_iters: usize) -> Result<ClusteringResult> {
    if k == 0 {
        return arg("k must be at least 1");
    }
    if points.len() < k {
        return arg(format!("{} points cannot form {k} clusters", points.len()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return arg("points must share one dimension");
    }
    let mut centers = plus_plus_init(points, k, rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut inertia_trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        let pass: Vec<(usize, f64)> = points.iter().map(|p| nearest(p, &centers)).collect();
        let next: Vec<usize> = pass.iter().map(|(c, _)| *c).collect();
        inertia_trace.push(pass.iter().map(|(_, d)| d).sum());
        if next == assignments {
            break;
        }
        assignments = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, squared_distance(p, &centers[assignments[i]])))
                    .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0;
                counts[assignments[far]] -= 1;
                counts[c] = 1;
                assignments[far] = c;
                centers[c] = points[far].clone();
            }
        }
    }
    // Final pass against the returned centers so the result is a fixpoint.
    let pass: Vec<(usize, f64)> = points.iter().map(|p| nearest(p, &centers)).collect();
    let assignments: Vec<usize> = pass.iter().map(|(c, _)| *c).collect();
    let inertia: f64 = pass.iter().map(|(_, d)| d).sum();
    Ok(ClusteringResult {
        assignments,
        centers,
        inertia,
        inertia_trace,
    })
}

/// Best of `restarts` k-means runs by inertia (first wins ties).
pub fn kmeans_restarts(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut SeededRng,
    max_iters: usize,
    restarts: usize,
) -> Result<ClusteringResult> {
    let mut best = kmeans(points, k, rng, max_iters)?;
    for _ in 1..restarts {
        let next = kmeans(points, k, rng, max_iters)?;
        if next.inertia < best.inertia {
            best = next;
        }
    }
    Ok(best)
}

/// Maximum-weight perfect matching on a square integer matrix. Returns the
/// column assigned to each row.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Result<Vec<usize>> {
    let n = weights.len();
    if n == 0 || weights.iter().any(|r| r.len() != n) {
        return arg("assignment matrix must be square and non-empty");
    }
    let top = weights.iter().flatten().copied().max().unwrap_or(0);
    // Shortest augmenting path with potentials on cost = top - weight.
    let cost = |i: usize, j: usize| top - weights[i][j];
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut min_to = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < min_to[j] {
                        min_to[j] = cur;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    Ok(row_to_col)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GcdMetrics {
    pub all: f64,
    pub old: f64,
    pub new: f64,
    /// Matched (cluster, class) pairs from the global matching.
    pub matching: Vec<(usize, usize)>,
    pub correct_old: usize,
    pub correct_new: usize,
    pub n_old: usize,
    pub n_new: usize,
}

impl GcdMetrics {
    pub fn n(&self) -> usize {
        self.n_old + self.n_new
    }
}

/// Hungarian-matched accuracy. One matching is computed on the full set and
/// then scored on the Old and New subsets; an empty subset scores 0. Among
/// matchings with the same total, the one with the most correct Old samples
/// wins, so the Old/New split does not depend on how indices are numbered.
pub fn hungarian_accuracy(assignments: &[usize], labels: &[usize], old_classes: &[usize]) -> Result<GcdMetrics> {
    if assignments.is_empty() {
        return arg("cannot score an empty evaluation set");
    }
    if assignments.len() != labels.len() {
        return arg("assignments and labels differ in length");
    }
    let index_of = |values: &[usize]| -> BTreeMap<usize, usize> {
        let mut map = BTreeMap::new();
        for &v in values {
            let next = map.len();
            map.entry(v).or_insert(next);
        }
        map.into_iter().enumerate().map(|(i, (v, _))| (v, i)).collect()
    };
    let clusters = index_of(assignments);
    let classes = index_of(labels);
    let size = clusters.len().max(classes.len());
    let major = assignments.len() as i64 + 1;
    let mut table = vec![vec![0i64; size]; size];
    for (a, y) in assignments.iter().zip(labels) {
        table[clusters[a]][classes[y]] += major + old_classes.contains(y) as i64;
    }
    let row_to_col = max_weight_assignment(&table)?;
    let cluster_ids: Vec<usize> = clusters.keys().copied().collect();
    let class_ids: Vec<usize> = classes.keys().copied().collect();
    let mut matched_class: BTreeMap<usize, usize> = BTreeMap::new();
    let mut matching = Vec::new();
    for (r, &c) in row_to_col.iter().enumerate() {
        if r < cluster_ids.len() && c < class_ids.len() {
            matched_class.insert(cluster_ids[r], class_ids[c]);
            matching.push((cluster_ids[r], class_ids[c]));
        }
    }
    let (mut correct_old, mut correct_new, mut n_old, mut n_new) = (0, 0, 0, 0);
    for (a, y) in assignments.iter().zip(labels) {
        let hit = matched_class.get(a) == Some(y);
        if old_classes.contains(y) {
            n_old += 1;
            correct_old += hit as usize;
        } else {
            n_new += 1;
            correct_new += hit as usize;
        }
    }
    let ratio = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(GcdMetrics {
        all: (correct_old + correct_new) as f64 / assignments.len() as f64,
        old: ratio(correct_old, n_old),
        new: ratio(correct_new, n_new),
        matching,
        correct_old,
        correct_new,
        n_old,
        n_new,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClusteringSettings {
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for ClusteringSettings {
    fn default() -> Self {
        ClusteringSettings {
            max_iters: 100,
            restarts: 4,
        }
    }
}

/// Clusters `embeddings` into `k` groups and scores them against `labels`.
pub fn cluster_and_score(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    old_classes: &[usize],
    k: usize,
    rng: &mut SeededRng,
    settings: ClusteringSettings,
) -> Result<GcdMetrics> {
    let clusters = kmeans_restarts(embeddings, k, rng, settings.max_iters, settings.restarts)?;
    hungarian_accuracy(&clusters.assignments, labels, old_classes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KEstimate {
    pub k_hat: usize,
    pub bounds: (usize, usize),
    /// Every distinct `k` evaluated, in evaluation order.
    pub trace: Vec<(usize, f64)>,
}

/// Minimizes `f` on `[lo, hi]` with Brent's parabolic/golden-section method.
pub fn brent_minimize<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64)> {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    if !(lo < hi) || !(tol > 0.0) {
        return arg("Brent search needs lo < hi and a positive tolerance");
    }
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..max_iter {
        let mid = 0.5 * (a + b);
        let tol2 = 2.0 * tol;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if mid >= x { tol } else { -tol };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol { x + d } else { x + tol * d.signum() };
        let fu = f(u)?;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Ok((x, fx))
}

/// Highest score, smallest `k` on ties.
fn best_k(scores: &BTreeMap<usize, f64>) -> Result<usize> {
    scores
        .iter()
        .fold(None, |acc: Option<(usize, f64)>, (&k, &s)| match acc {
            Some((_, best)) if s <= best => acc,
            _ => Some((k, s)),
        })
        .map(|(k, _)| k)
        .ok_or_else(|| Error::Evaluation("no cluster-count score".into()))
}

/// Estimates the cluster count. For each candidate `k` the unlabeled and
/// labeled embeddings are clustered together and the score is the matched
/// accuracy on the labeled part. Brent's method searches the rounded
/// objective, then the neighbours of the best `k` seen are checked; ties go to
/// the smaller `k`.
pub fn estimate_k(
    unlabeled: &[Vec<f64>],
    labeled: (&[Vec<f64>], &[usize]),
    k_min: usize,
    k_max: usize,
    seed: u64,
    settings: ClusteringSettings,
) -> Result<KEstimate> {
    let (lab_x, lab_y) = labeled;
    if k_min < 1 || k_max <= k_min {
        return arg(format!("invalid bounds [{k_min}, {k_max}]"));
    }
    if lab_x.is_empty() || lab_x.len() != lab_y.len() {
        return arg("labeled subset must be non-empty and aligned");
    }
    let mut points: Vec<Vec<f64>> = unlabeled.to_vec();
    points.extend(lab_x.iter().cloned());
    if points.len() < k_max {
        return arg(format!("{} points cannot form {k_max} clusters", points.len()));
    }
    let offset = unlabeled.len();
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    let mut trace = Vec::new();
    let mut score = |k: usize, scores: &mut BTreeMap<usize, f64>| -> Result<f64> {
        if let Some(s) = scores.get(&k) {
            return Ok(*s);
        }
        let mut rng = SeededRng::derive(seed, &[0xE57, k as u64]);
        let c = kmeans_restarts(&points, k, &mut rng, settings.max_iters, settings.restarts)?;
        let s = hungarian_accuracy(&c.assignments[offset..], lab_y, &[])?.all;
        scores.insert(k, s);
        trace.push((k, s));
        Ok(s)
    };
    let clamp = |x: f64| (x.round() as i64).clamp(k_min as i64, k_max as i64) as usize;
    brent_minimize(|x| Ok(-score(clamp(x), &mut scores)?), k_min as f64, k_max as f64, 0.5, 100)?;
    // The rounded objective is flat between integers, so score the endpoints too.
    score(k_min, &mut scores)?;
    score(k_max, &mut scores)?;
    let center = best_k(&scores)?;
    for k in [center.saturating_sub(1), center + 1] {
        if (k_min..=k_max).contains(&k) {
            score(k, &mut scores)?;
        }
    }
    let k_hat = best_k(&scores)?;
    Ok(KEstimate {
        k_hat,
        bounds: (k_min, k_max),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(rng: &mut SeededRng, center: &[f64], n: usize, sigma: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| center.iter().map(|c| c + sigma * rng.normal()).collect())
            .collect()
    }

    #[test]
    fn single_cluster_center_is_mean() {
        let mut rng = SeededRng::new(1);
        let pts = cloud(&mut rng, &[1.0, -2.0], 50, 1.0);
        let r = kmeans(&pts, 1, &mut rng, 50).unwrap();
        for d in 0..2 {
            let mean = pts.iter().map(|p| p[d]).sum::<f64>() / 50.0;
            assert!((r.centers[0][d] - mean).abs() < 1e-12);
        }
        assert!(kmeans(&pts[..1], 2, &mut rng, 10).is_err());
        assert!(kmeans(&pts, 0, &mut rng, 10).is_err());
    }

    #[test]
    fn separated_clouds_recover_means() {
        let mut rng = SeededRng::new(2);
        let mut pts = cloud(&mut rng, &[0.0, 0.0], 100, 0.5);
        pts.extend(cloud(&mut rng, &[10.0, 0.0], 100, 0.5));
        let r = kmeans(&pts, 2, &mut rng, 100).unwrap();
        let mut centers = r.centers.clone();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(squared_distance(&centers[0], &[0.0, 0.0]).sqrt() < 0.1);
        assert!(squared_distance(&centers[1], &[10.0, 0.0]).sqrt() < 0.1);
    }

    #[test]
    fn inertia_never_increases_and_ends_at_fixpoint() {
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed);
            let pts = cloud(&mut rng, &[0.0, 0.0, 0.0], 120, 1.0);
            let r = kmeans(&pts, 6, &mut rng, 200).unwrap();
            for w in r.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
            for (p, &a) in pts.iter().zip(&r.assignments) {
                assert_eq!(nearest(p, &r.centers).0, a);
            }
        }
    }

    #[test]
    fn hungarian_examples() {
        let m = hungarian_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0], &[0, 1]).unwrap();
        assert_eq!(m.all, 1.0);
        let m = hungarian_accuracy(&[0, 1, 0, 1], &[0, 0, 1, 1], &[0]).unwrap();
        assert_eq!(m.all, 0.5);
        assert_eq!(m.correct_old + m.correct_new, 2);
        assert!(hungarian_accuracy(&[], &[], &[]).is_err());
        assert!(hungarian_accuracy(&[0], &[0, 1], &[]).is_err());
        let m = hungarian_accuracy(&[3, 3, 3], &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert!((m.all - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.new, 0.0);
    }

    #[test]
    fn brent_finds_parabola_minimum() {
        let (x, fx) = brent_minimize(|x| Ok((x - 2.3) * (x - 2.3) + 1.0), 0.0, 10.0, 1e-8, 200).unwrap();
        assert!((x - 2.3).abs() < 1e-6);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_k_on_adjacent_bounds_picks_better() {
        let mut rng = SeededRng::new(9);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]].iter().enumerate() {
            pts.extend(cloud(&mut rng, center, 30, 0.3));
            labels.extend(std::iter::repeat(c).take(30));
        }
        let est = estimate_k(&[], (&pts, &labels), 2, 3, 4, ClusteringSettings::default()).unwrap();
        assert_eq!(est.k_hat, 3);
        assert!(estimate_k(&[], (&pts, &labels), 3, 3, 4, ClusteringSettings::default()).is_err());
    }
}
