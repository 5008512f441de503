//! Episode objective: prototype-supervised contrastive loss, instance
//! contrastive loss, open-set adversarial loss with gradient reversal, the
//! known/open-set margin hinge, and the source cross-entropy that trains the
//! adversarial classifier.
//!
//! Embeddings handed to the contrastive losses are unit-norm, so cosine
//! similarity is a dot product and gradients are taken with respect to the
//! (already normalized) embedding coordinates. Head losses return gradients
//! with respect to the classifier logits.

use serde::{Deserialize, Serialize};

use crate::encoder::{ClassProbabilities, EpisodeModel, Gradients, OutputGradients};
use crate::error::{arg, Error, Result};
use crate::numeric::{dot, l2_normalize, log_sum_exp, softmax};

/// Floor applied inside every logarithm of a probability.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda_margin: f64,
    pub margin_m: f64,
    pub alpha: f64,
    pub grl_factor: f64,
    pub sup_weight: f64,
    pub unsup_weight: f64,
    /// Scales the adversarial open-set term.
    pub adv_weight: f64,
    /// Scales the source cross-entropy of the adversarial classifier.
    pub ce_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.1,
            lambda_margin: 0.20,
            margin_m: 0.7,
            alpha: 0.5,
            grl_factor: 1.0,
            sup_weight: 1.0,
            unsup_weight: 1.0,
            adv_weight: 1.0,
            ce_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.margin_m > 0.0 && self.margin_m < 1.0) {
            return Err(Error::Config("margin m must lie in (0, 1)".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        let weights = [
            self.lambda_margin,
            self.sup_weight,
            self.unsup_weight,
            self.adv_weight,
            self.ce_weight,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) || !self.grl_factor.is_finite() {
            return Err(Error::Config("loss weights must be non-negative and finite".into()));
        }
        Ok(())
    }
}

/// Unit-norm class-mean embeddings, indexed by episode-local class index.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    protos: Vec<Vec<f64>>,
}

impl PrototypeSet {
    pub fn new(protos: Vec<Vec<f64>>) -> Result<Self> {
        if protos.is_empty() {
            return arg("prototype set must be non-empty");
        }
        Ok(PrototypeSet { protos })
    }

    /// Normalized per-class means of `embeddings`. Classes with no member in
    /// the batch fall back to `previous`.
    pub fn from_batch(
        embeddings: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        previous: Option<&PrototypeSet>,
    ) -> Result<Self> {
        if embeddings.len() != labels.len() || embeddings.is_empty() {
            return arg("embeddings and labels must be non-empty and aligned");
        }
        let dim = embeddings[0].len();
        let mut sums = vec![vec![0.0; dim]; n_classes];
        let mut counts = vec![0usize; n_classes];
        for (z, &y) in embeddings.iter().zip(labels) {
            if y >= n_classes {
                return arg(format!("label {y} out of range for {n_classes} classes"));
            }
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(z) {
                *s += v;
            }
        }
        let mut protos = Vec::with_capacity(n_classes);
        for (c, sum) in sums.iter().enumerate() {
            let fallback = previous.and_then(|p| p.protos.get(c)).cloned();
            let proto = if counts[c] > 0 {
                match l2_normalize(sum) {
                    Ok(p) => p,
                    Err(_) => fallback.ok_or_else(|| {
                        Error::Degenerate(format!("class {c} embeddings cancel out"))
                    })?,
                }
            } else {
                fallback.ok_or_else(|| Error::Argument(format!("no embeddings or fallback for class {c}")))?
            };
            protos.push(proto);
        }
        Ok(PrototypeSet { protos })
    }

    pub fn len(&self) -> usize {
        self.protos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protos.is_empty()
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.protos.get(class).map(Vec::as_slice)
    }
}

/// Prototype-anchored contrastive loss. Returns the mean loss and
/// `d(loss)/d(embedding)` per row; prototypes are constants.
pub fn sup_contrastive(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    protos: &PrototypeSet,
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if embeddings.is_empty() || embeddings.len() != labels.len() {
        return arg("labeled batch must be non-empty and aligned with labels");
    }
    if let Some(y) = labels.iter().find(|y| **y >= protos.len()) {
        return arg(format!("label {y} has no prototype"));
    }
    let n = embeddings.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(embeddings.len());
    for (z, &y) in embeddings.iter().zip(labels) {
        let logits: Vec<f64> = protos.protos.iter().map(|mu| dot(z, mu) / tau).collect();
        loss += log_sum_exp(&logits) - logits[y];
        let p = softmax(&logits)?;
        let mut g = vec![0.0; z.len()];
        for (k, mu) in protos.protos.iter().enumerate() {
            let coef = (p[k] - if k == y { 1.0 } else { 0.0 }) / (tau * n);
            for (gi, m) in g.iter_mut().zip(mu) {
                *gi += coef * m;
            }
        }
        grads.push(g);
    }
    Ok((loss / n, grads))
}

/// Instance contrastive loss. For anchor `i` the softmax runs over its own
/// positive and every other anchor in the batch (the anchor itself excluded).
/// Returns the mean loss and gradients for anchors and positives.
pub fn unsup_contrastive(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = anchors.len();
    if n < 2 {
        return arg("instance contrastive loss needs at least two anchors");
    }
    if positives.len() != n {
        return arg("positives must be index-aligned with anchors");
    }
    let dim = anchors[0].len();
    let mut ga = vec![vec![0.0; dim]; n];
    let mut gp = vec![vec![0.0; dim]; n];
    let mut loss = 0.0;
    let scale = 1.0 / (tau * n as f64);
    // logits[0] is the positive; the rest follow anchor order skipping i.
    let mut logits = Vec::with_capacity(n);
    for i in 0..n {
        logits.clear();
        logits.push(dot(&anchors[i], &positives[i]) / tau);
        for j in (0..n).filter(|&j| j != i) {
            logits.push(dot(&anchors[i], &anchors[j]) / tau);
        }
        loss += log_sum_exp(&logits) - logits[0];
        let q = softmax(&logits)?;
        let (zi, pi) = (anchors[i].clone(), &positives[i]);
        let pos_coef = (q[0] - 1.0) * scale;
        for d in 0..dim {
            ga[i][d] += pos_coef * pi[d];
            gp[i][d] += pos_coef * zi[d];
        }
        for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
            let coef = q[slot + 1] * scale;
            for d in 0..dim {
                ga[i][d] += coef * anchors[j][d];
                ga[j][d] += coef * zi[d];
            }
        }
    }
    Ok((loss / n as f64, ga, gp))
}

/// Head loss value and its gradient with respect to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadLoss {
    pub loss: f64,
    pub dlogits: Vec<f64>,
    /// True when a probability hit [`PROB_FLOOR`] and the gradient was zeroed.
    pub clamped: bool,
}

pub fn source_ce(probs: &ClassProbabilities, label: usize) -> Result<HeadLoss> {
    if label >= probs.n_known() {
        return arg(format!("label {label} is not a known class"));
    }
    let p = probs.all()[label];
    if p < PROB_FLOOR {
        return Ok(HeadLoss {
            loss: -PROB_FLOOR.ln(),
            dlogits: vec![0.0; probs.all().len()],
            clamped: true,
        });
    }
    let mut dprobs = vec![0.0; probs.all().len()];
    dprobs[label] = -1.0 / p;
    Ok(HeadLoss {
        loss: -p.ln(),
        dlogits: probs.logit_gradient(&dprobs),
        clamped: false,
    })
}

/// `-alpha log p_open - (1 - alpha) log(1 - p_open)` for a pseudo-target sample.
pub fn adv_osda(probs: &ClassProbabilities, alpha: f64) -> Result<HeadLoss> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return arg("alpha must lie in (0, 1)");
    }
    let raw = probs.open_set();
    let p = raw.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let clamped = p != raw;
    let loss = -alpha * p.ln() - (1.0 - alpha) * (1.0 - p).ln();
    let dlogits = if clamped {
        vec![0.0; probs.all().len()]
    } else {
        let mut dprobs = vec![0.0; probs.all().len()];
        *dprobs.last_mut().unwrap() = -alpha / p + (1.0 - alpha) / (1.0 - p);
        probs.logit_gradient(&dprobs)
    };
    Ok(HeadLoss { loss, dlogits, clamped })
}

/// `max(0, m - |max_q p_q - p_open|)` with `p_open = 1 - sum_q p_q`.
/// Subgradient is zero at the hinge and when the gap is exactly zero; argmax
/// ties go to the lowest class index.
pub fn margin(probs: &ClassProbabilities, m: f64) -> Result<HeadLoss> {
    if !(m > 0.0 && m < 1.0) {
        return arg("margin m must lie in (0, 1)");
    }
    let known = probs.known();
    let (best, p_best) = known
        .iter()
        .enumerate()
        .fold((0, known[0]), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    let p_open = 1.0 - known.iter().sum::<f64>();
    let gap = p_best - p_open;
    let slack = m - gap.abs();
    let mut dlogits = vec![0.0; probs.all().len()];
    if slack <= 0.0 {
        return Ok(HeadLoss {
            loss: 0.0,
            dlogits,
            clamped: false,
        });
    }
    let sign = if gap > 0.0 {
        1.0
    } else if gap < 0.0 {
        -1.0
    } else {
        0.0
    };
    if sign != 0.0 {
        let mut dprobs = vec![0.0; probs.all().len()];
        dprobs[best] = -sign;
        *dprobs.last_mut().unwrap() = sign;
        dlogits = probs.logit_gradient(&dprobs);
    }
    Ok(HeadLoss {
        loss: slack,
        dlogits,
        clamped: false,
    })
}

/// One training step's inputs. Labels are episode-local class indices.
#[derive(Clone, Debug, Default)]
pub struct ObjectiveBatch {
    pub labeled: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub labeled_aug: Vec<Vec<f64>>,
    pub unlabeled: Vec<Vec<f64>>,
    pub unlabeled_aug: Vec<Vec<f64>>,
}

impl ObjectiveBatch {
    fn validate(&self) -> Result<()> {
        if self.labeled.is_empty() {
            return arg("objective needs a non-empty labeled batch");
        }
        if self.labels.len() != self.labeled.len()
            || self.labeled_aug.len() != self.labeled.len()
            || self.unlabeled_aug.len() != self.unlabeled.len()
        {
            return arg("objective batch parts are not aligned");
        }
        Ok(())
    }

    /// Every input row in forward order.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(2 * (self.labeled.len() + self.unlabeled.len()));
        rows.extend(self.labeled.iter().cloned());
        rows.extend(self.labeled_aug.iter().cloned());
        rows.extend(self.unlabeled.iter().cloned());
        rows.extend(self.unlabeled_aug.iter().cloned());
        rows
    }
}

/// Per-term loss values for one step (unweighted means) and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub sup: f64,
    pub unsup: f64,
    pub ce: f64,
    pub adv: f64,
    pub margin: f64,
    pub total: f64,
    pub clamped: usize,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.sup, self.unsup, self.ce, self.adv, self.margin, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Total episode loss and gradients for encoder and classifier.
///
/// `total = w_s L_sup + w_u L_unsup + w_ce L_ce + w_adv L_adv + lambda L_margin`.
/// The classifier descends on every term it sees; the encoder receives the
/// adversarial term's gradient multiplied by `-grl_factor`.
pub fn episode_objective(
    model: &mut EpisodeModel,
    batch: &ObjectiveBatch,
    protos: &PrototypeSet,
    cfg: &LossConfig,
) -> Result<(LossTerms, Gradients)> {
    batch.validate()?;
    let nl = batch.labeled.len();
    let nu = batch.unlabeled.len();
    let out = model.forward(&batch.rows())?;
    let z = &out.embeddings;
    let rows = z.len();
    let n_out = out.probabilities[0].all().len();
    let embed_dim = z[0].len();
    let mut grads = OutputGradients::zeros(rows, embed_dim, n_out);
    let mut terms = LossTerms::default();

    let add = |dst: &mut Vec<f64>, src: &[f64], w: f64| {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    };

    let labeled_z = &z[..nl];
    if cfg.sup_weight > 0.0 {
        let (loss, g) = sup_contrastive(labeled_z, &batch.labels, protos, cfg.tau)?;
        terms.sup = loss;
        for (r, gr) in g.iter().enumerate() {
            add(&mut grads.embedding[r], gr, cfg.sup_weight);
        }
    }

    if cfg.unsup_weight > 0.0 && nl + nu >= 2 {
        let anchor_rows: Vec<usize> = (0..nl).chain(2 * nl..2 * nl + nu).collect();
        let positive_rows: Vec<usize> = (nl..2 * nl).chain(2 * nl + nu..2 * nl + 2 * nu).collect();
        let anchors: Vec<Vec<f64>> = anchor_rows.iter().map(|&r| z[r].clone()).collect();
        let positives: Vec<Vec<f64>> = positive_rows.iter().map(|&r| z[r].clone()).collect();
        let (loss, ga, gp) = unsup_contrastive(&anchors, &positives, cfg.tau)?;
        terms.unsup = loss;
        for (k, &r) in anchor_rows.iter().enumerate() {
            add(&mut grads.embedding[r], &ga[k], cfg.unsup_weight);
        }
        for (k, &r) in positive_rows.iter().enumerate() {
            add(&mut grads.embedding[r], &gp[k], cfg.unsup_weight);
        }
    }

    if cfg.ce_weight > 0.0 {
        let scale = cfg.ce_weight / nl as f64;
        for r in 0..nl {
            let h = source_ce(&out.probabilities[r], batch.labels[r])?;
            terms.ce += h.loss / nl as f64;
            terms.clamped += h.clamped as usize;
            add(&mut grads.logits[r], &h.dlogits, scale);
        }
    }

    if nu > 0 {
        let adv_scale = cfg.adv_weight / nu as f64;
        let margin_scale = cfg.lambda_margin / nu as f64;
        for r in 2 * nl..2 * nl + nu {
            let p = &out.probabilities[r];
            if cfg.adv_weight > 0.0 {
                let h = adv_osda(p, cfg.alpha)?;
                terms.adv += h.loss / nu as f64;
                terms.clamped += h.clamped as usize;
                add(&mut grads.adversarial_logits[r], &h.dlogits, adv_scale);
            }
            if cfg.lambda_margin > 0.0 {
                let h = margin(p, cfg.margin_m)?;
                terms.margin += h.loss / nu as f64;
                add(&mut grads.logits[r], &h.dlogits, margin_scale);
            }
        }
    }

    terms.total = cfg.sup_weight * terms.sup
        + cfg.unsup_weight * terms.unsup
        + cfg.ce_weight * terms.ce
        + cfg.adv_weight * terms.adv
        + cfg.lambda_margin * terms.margin;
    let g = model.backward(&grads, cfg.grl_factor)?;
    Ok((terms, g))
}
