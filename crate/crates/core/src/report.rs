//! Tabular run outputs: the metrics table and the per-step training trace.
//! Floats are written in shortest round-trip form, so identical runs give
//! byte-identical files.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::GcdMetrics;
use crate::orchestrator::{EpisodeOutcome, TargetEvaluation, UpdateReport};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub global_update: usize,
    pub episode: Option<usize>,
    /// `valid`, `merge` or `target`.
    pub split: &'static str,
    pub all: Option<f64>,
    pub old: Option<f64>,
    pub new: Option<f64>,
    pub k_used: Option<usize>,
    pub strategy: String,
    pub weight: Option<f64>,
    pub sign_conflict: Option<f64>,
    pub update_l1: Option<f64>,
}

fn metric_row(run_id: &str, g: usize, episode: Option<usize>, split: &'static str, m: &GcdMetrics, k: usize, strategy: &str) -> MetricsRow {
    MetricsRow {
        run_id: run_id.to_string(),
        global_update: g,
        episode,
        split,
        all: Some(m.all),
        old: Some(m.old),
        new: Some(m.new),
        k_used: Some(k),
        strategy: strategy.to_string(),
        weight: None,
        sign_conflict: None,
        update_l1: None,
    }
}

/// Per-episode validation rows followed by the merge summary row. Aborted
/// episodes get a row with empty metrics.
pub fn update_rows(run_id: &str, strategy: &str, report: &UpdateReport) -> Vec<MetricsRow> {
    let g = report.global_index;
    let mut rows = Vec::new();
    let mut weights = report.merge.weights.iter();
    for outcome in &report.outcomes {
        match outcome {
            EpisodeOutcome::Completed(r) => {
                let mut row = metric_row(run_id, g, Some(r.episode_index), "valid", &r.valid_metrics, r.valid_k, strategy);
                row.weight = weights.next().copied();
                rows.push(row);
            }
            EpisodeOutcome::Aborted { episode_index, .. } => rows.push(MetricsRow {
                run_id: run_id.to_string(),
                global_update: g,
                episode: Some(*episode_index),
                split: "valid",
                all: None,
                old: None,
                new: None,
                k_used: None,
                strategy: strategy.to_string(),
                weight: None,
                sign_conflict: None,
                update_l1: None,
            }),
        }
    }
    rows.push(MetricsRow {
        run_id: run_id.to_string(),
        global_update: g,
        episode: None,
        split: "merge",
        all: None,
        old: None,
        new: None,
        k_used: None,
        strategy: strategy.to_string(),
        weight: None,
        sign_conflict: report.merge.sign_conflict,
        update_l1: Some(report.merge.update_l1),
    });
    rows
}

pub fn target_row(run_id: &str, strategy: &str, global_update: usize, target: &TargetEvaluation) -> MetricsRow {
    metric_row(run_id, global_update, None, "target", &target.metrics, target.k_used, strategy)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Streams metrics rows as CSV with a header.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        MetricsWriter {
            inner: csv::Writer::from_writer(out),
        }
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row).map_err(csv_error)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(Error::from)
    }
}

#[derive(Serialize)]
struct TraceRow {
    global_update: usize,
    episode: usize,
    step: usize,
    lr: f64,
    sup: f64,
    unsup: f64,
    ce: f64,
    adv: f64,
    margin: f64,
    total: f64,
    clamped: usize,
}

/// Writes the per-step loss terms of every completed episode.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter {
            inner: csv::Writer::from_writer(out),
        }
    }

    pub fn write_update(&mut self, report: &UpdateReport) -> Result<()> {
        for r in report.outcomes.iter().filter_map(EpisodeOutcome::completed) {
            for s in &r.trace {
                self.inner
                    .serialize(TraceRow {
                        global_update: s.global_index,
                        episode: s.episode_index,
                        step: s.step,
                        lr: s.lr,
                        sup: s.terms.sup,
                        unsup: s.terms.unsup,
                        ce: s.terms.ce,
                        adv: s.terms.adv,
                        margin: s.terms.margin,
                        total: s.terms.total,
                        clamped: s.terms.clamped,
                    })
                    .map_err(csv_error)?;
            }
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(Error::from)
    }
}
