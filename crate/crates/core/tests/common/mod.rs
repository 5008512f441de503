//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::io::Write;

use episodic_core::report::{target_row, update_rows, MetricsWriter};
use episodic_core::{evaluate_on_target, train, SyntheticProblem, TrainingConfig};

/// Central differences with step `h`, written without the library helper.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b|_2 / max(|a|_2, |b|_2, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    n(&d) / n(a).max(n(b)).max(floor)
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Largest number of points that any one-to-one cluster/class pairing gets
/// right, by enumerating every pairing.
pub fn brute_force_correct(assignments: &[usize], labels: &[usize]) -> usize {
    let nc = assignments.iter().max().map_or(0, |m| m + 1);
    let nl = labels.iter().max().map_or(0, |m| m + 1);
    let side = nc.max(nl);
    let mut counts = vec![vec![0usize; side]; side];
    for (&c, &y) in assignments.iter().zip(labels) {
        counts[c][y] += 1;
    }
    let mut perms = Vec::new();
    permutations(&mut (0..side).collect(), 0, &mut perms);
    perms
        .iter()
        .map(|p| (0..side).map(|c| counts[c][p[c]]).sum::<usize>())
        .max()
        .unwrap_or(0)
}

/// Trains one run and writes the metrics table the way the command line does.
pub fn metrics_csv(cfg: &TrainingConfig, problem: &SyntheticProblem) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut w = MetricsWriter::new(&mut buf);
        let run_id = format!("seed-{}", cfg.seed);
        let strategy = cfg.effective_strategy().name();
        let state = train(cfg, problem, |_, report| {
            for row in update_rows(&run_id, strategy, report) {
                w.write(&row)?;
            }
            Ok(())
        })
        .unwrap();
        let target = evaluate_on_target(&state.params, problem, cfg).unwrap();
        w.write(&target_row(&run_id, strategy, state.global_index, &target)).unwrap();
        w.flush().unwrap();
    }
    buf.flush().unwrap();
    buf
}
