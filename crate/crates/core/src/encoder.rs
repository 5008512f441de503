//! Small tanh MLP embedding network and the episode-specific open-set
//! classifier head, with hand-written backpropagation.
//!
//! Flat layout (layer index, then row-major): `W1 (H x D)`, `b1 (H)`,
//! `W2 (E x H)`, `b2 (E)`. The classifier is `W (C+1 x E)`, `b (C+1)`, with the
//! last output reserved for the open-set class.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::numeric::{dot, softmax, LayoutId, ParamVector, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input: 8,
            hidden: 32,
            embed: 16,
        }
    }
}

impl Architecture {
    pub fn layout_id(&self) -> LayoutId {
        LayoutId::new(format!("mlp-tanh:{}-{}-{}", self.input, self.hidden, self.embed))
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.embed * self.hidden + self.embed
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.embed < 2 {
            return Err(Error::Config("architecture dimensions must be positive (embed >= 2)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    arch: Architecture,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Cached activations of one forward pass through the encoder.
#[derive(Clone, Debug)]
pub struct EmbedTrace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    norm: f64,
    pub embedding: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(arch: Architecture) -> Self {
        EncoderParams {
            arch,
            w1: vec![0.0; arch.hidden * arch.input],
            b1: vec![0.0; arch.hidden],
            w2: vec![0.0; arch.embed * arch.hidden],
            b2: vec![0.0; arch.embed],
        }
    }

    /// Gaussian init with variance `1 / fan_in`, zero biases.
    pub fn init_random(arch: Architecture, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(arch);
        let s1 = (1.0 / arch.input as f64).sqrt();
        let s2 = (1.0 / arch.hidden as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = s1 * rng.normal());
        p.w2.iter_mut().for_each(|w| *w = s2 * rng.normal());
        p
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn from_param_vector(v: &ParamVector, arch: Architecture) -> Result<Self> {
        if v.layout() != &arch.layout_id() || v.len() != arch.param_count() {
            return arg(format!(
                "parameter layout {} does not match encoder {}",
                v.layout(),
                arch.layout_id()
            ));
        }
        let vals = v.values();
        let (a, rest) = vals.split_at(arch.hidden * arch.input);
        let (b, rest) = rest.split_at(arch.hidden);
        let (c, d) = rest.split_at(arch.embed * arch.hidden);
        Ok(EncoderParams {
            arch,
            w1: a.to_vec(),
            b1: b.to_vec(),
            w2: c.to_vec(),
            b2: d.to_vec(),
        })
    }

    pub fn to_param_vector(&self) -> Result<ParamVector> {
        ParamVector::new(self.flat(), self.arch.layout_id())
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.arch.param_count());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    fn segments_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// `self -= step * grad`, with `grad` in flat layout order.
    pub fn apply_step(&mut self, grad: &[f64], step: f64) {
        let mut offset = 0;
        for seg in self.segments_mut() {
            for w in seg.iter_mut() {
                *w -= step * grad[offset];
                offset += 1;
            }
        }
    }

    pub fn embed_traced(&self, x: &[f64]) -> Result<EmbedTrace> {
        let Architecture { input, hidden, embed } = self.arch;
        if x.len() != input {
            return arg(format!("input has dimension {}, expected {input}", x.len()));
        }
        let h: Vec<f64> = (0..hidden)
            .map(|j| (dot(&self.w1[j * input..(j + 1) * input], x) + self.b1[j]).tanh())
            .collect();
        let u: Vec<f64> = (0..embed)
            .map(|k| dot(&self.w2[k * hidden..(k + 1) * hidden], &h) + self.b2[k])
            .collect();
        let norm = dot(&u, &u).sqrt();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::Degenerate("encoder output has zero norm".into()));
        }
        let z = u.iter().map(|v| v / norm).collect();
        Ok(EmbedTrace {
            input: x.to_vec(),
            hidden: h,
            norm,
            embedding: z,
        })
    }

    /// Unit-norm embedding of `x`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed_traced(x)?.embedding)
    }

    /// Accumulate `d(loss)/d(params)` given `d(loss)/d(embedding)` into `grad`
    /// (flat layout).
    pub fn accumulate_backward(&self, trace: &EmbedTrace, dz: &[f64], grad: &mut [f64]) {
        let Architecture { input, hidden, embed } = self.arch;
        let z = &trace.embedding;
        let radial = dot(z, dz);
        let du: Vec<f64> = dz.iter().zip(z).map(|(g, zi)| (g - zi * radial) / trace.norm).collect();
        let off_b1 = hidden * input;
        let off_w2 = off_b1 + hidden;
        let off_b2 = off_w2 + embed * hidden;
        let mut dh = vec![0.0; hidden];
        for k in 0..embed {
            let row = &self.w2[k * hidden..(k + 1) * hidden];
            let gw = &mut grad[off_w2 + k * hidden..off_w2 + (k + 1) * hidden];
            for j in 0..hidden {
                gw[j] += du[k] * trace.hidden[j];
                dh[j] += row[j] * du[k];
            }
            grad[off_b2 + k] += du[k];
        }
        for j in 0..hidden {
            let da = dh[j] * (1.0 - trace.hidden[j] * trace.hidden[j]);
            let gw = &mut grad[j * input..(j + 1) * input];
            for i in 0..input {
                gw[i] += da * trace.input[i];
            }
            grad[off_b1 + j] += da;
        }
    }
}

/// Copy the global parameters into a fresh, independently owned encoder.
pub fn init_from_global(global: &ParamVector, arch: Architecture) -> Result<EncoderParams> {
    EncoderParams::from_param_vector(global, arch)
}

/// Predicted distribution over `n_known` known classes plus the open-set slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbabilities {
    probs: Vec<f64>,
}

impl ClassProbabilities {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() < 2 {
            return arg("need at least one known class plus the open-set class");
        }
        Ok(ClassProbabilities {
            probs: softmax(logits)?,
        })
    }

    /// Build from an explicit distribution; entries must be in `[0, 1]` and sum to 1.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return arg("need at least one known class plus the open-set class");
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return arg("probabilities must lie in [0, 1]");
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return arg("probabilities must sum to 1");
        }
        Ok(ClassProbabilities { probs })
    }

    pub fn known(&self) -> &[f64] {
        &self.probs[..self.probs.len() - 1]
    }

    pub fn open_set(&self) -> f64 {
        self.probs[self.probs.len() - 1]
    }

    pub fn all(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_known(&self) -> usize {
        self.probs.len() - 1
    }

    /// Chain rule through the softmax: `dL/dlogit_k = p_k (g_k - sum_i g_i p_i)`.
    pub fn logit_gradient(&self, dprobs: &[f64]) -> Vec<f64> {
        let mean = dot(dprobs, &self.probs);
        self.probs.iter().zip(dprobs).map(|(p, g)| p * (g - mean)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    n_known: usize,
    embed: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(n_known: usize, embed: usize) -> Self {
        ClassifierParams {
            n_known,
            embed,
            w: vec![0.0; (n_known + 1) * embed],
            b: vec![0.0; n_known + 1],
        }
    }

    pub fn init_random(n_known: usize, embed: usize, scale: f64, rng: &mut SeededRng) -> Self {
        let mut c = Self::zeros(n_known, embed);
        c.w.iter_mut().for_each(|w| *w = scale * rng.normal());
        c
    }

    pub fn n_known(&self) -> usize {
        self.n_known
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.w.clone();
        v.extend_from_slice(&self.b);
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return arg("classifier parameter count mismatch");
        }
        let (w, b) = values.split_at(self.w.len());
        self.w.copy_from_slice(w);
        self.b.copy_from_slice(b);
        Ok(())
    }

    pub fn apply_step(&mut self, grad: &[f64], step: f64) {
        for (p, g) in self.w.iter_mut().chain(self.b.iter_mut()).zip(grad) {
            *p -= step * g;
        }
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.embed {
            return arg(format!("embedding has dimension {}, expected {}", z.len(), self.embed));
        }
        Ok((0..=self.n_known)
            .map(|c| dot(&self.w[c * self.embed..(c + 1) * self.embed], z) + self.b[c])
            .collect())
    }

    pub fn classify(&self, z: &[f64]) -> Result<ClassProbabilities> {
        ClassProbabilities::from_logits(&self.logits(z)?)
    }

    /// Accumulate classifier gradients into `grad` and return `d(loss)/dz`.
    pub fn accumulate_backward(&self, z: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let e = self.embed;
        let off_b = self.w.len();
        let mut dz = vec![0.0; e];
        for (c, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &self.w[c * e..(c + 1) * e];
            for k in 0..e {
                grad[c * e + k] += g * z[k];
                dz[k] += g * row[k];
            }
            grad[off_b + c] += g;
        }
        dz
    }
}

/// Gradients arriving at the network outputs for one batch, one row per input.
#[derive(Clone, Debug, Default)]
pub struct OutputGradients {
    /// Contrastive branch, `d/d(embedding)`. Never reversed.
    pub embedding: Vec<Vec<f64>>,
    /// Classifier branch whose encoder gradient is passed through unchanged.
    pub logits: Vec<Vec<f64>>,
    /// Adversarial branch; its encoder gradient is scaled by `-grl_factor`.
    pub adversarial_logits: Vec<Vec<f64>>,
}

impl OutputGradients {
    pub fn zeros(rows: usize, embed: usize, classes: usize) -> Self {
        OutputGradients {
            embedding: vec![vec![0.0; embed]; rows],
            logits: vec![vec![0.0; classes]; rows],
            adversarial_logits: vec![vec![0.0; classes]; rows],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<f64>,
    pub classifier: Vec<f64>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.encoder.iter().chain(&self.classifier).all(|g| g.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub embeddings: Vec<Vec<f64>>,
    pub probabilities: Vec<ClassProbabilities>,
}

/// Encoder plus episode classifier, caching activations between
/// [`EpisodeModel::forward`] and [`EpisodeModel::backward`].
#[derive(Clone, Debug)]
pub struct EpisodeModel {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    cache: Option<Vec<EmbedTrace>>,
}

impl EpisodeModel {
    pub fn new(encoder: EncoderParams, classifier: ClassifierParams) -> Result<Self> {
        if encoder.arch.embed != classifier.embed {
            return arg("classifier input does not match encoder embedding size");
        }
        Ok(EpisodeModel {
            encoder,
            classifier,
            cache: None,
        })
    }

    /// Forward every row; `Err(Degenerate)` names the first row whose
    /// pre-normalization embedding vanished.
    pub fn forward(&mut self, inputs: &[Vec<f64>]) -> Result<ForwardOutput> {
        self.cache = None;
        let mut traces = Vec::with_capacity(inputs.len());
        let mut probabilities = Vec::with_capacity(inputs.len());
        for (row, x) in inputs.iter().enumerate() {
            let t = self.encoder.embed_traced(x).map_err(|e| match e {
                Error::Degenerate(m) => Error::Degenerate(format!("row {row}: {m}")),
                other => other,
            })?;
            probabilities.push(self.classifier.classify(&t.embedding)?);
            traces.push(t);
        }
        let embeddings = traces.iter().map(|t| t.embedding.clone()).collect();
        self.cache = Some(traces);
        Ok(ForwardOutput {
            embeddings,
            probabilities,
        })
    }

    pub fn backward(&self, grads: &OutputGradients, grl_factor: f64) -> Result<Gradients> {
        let traces = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let rows = traces.len();
        if grads.embedding.len() != rows || grads.logits.len() != rows || grads.adversarial_logits.len() != rows {
            return arg("output gradient rows do not match the cached forward pass");
        }
        let mut enc = vec![0.0; self.encoder.arch.param_count()];
        let mut clf = vec![0.0; self.classifier.param_count()];
        for (r, t) in traces.iter().enumerate() {
            let z = &t.embedding;
            let mut dz = grads.embedding[r].clone();
            let normal = self.classifier.accumulate_backward(z, &grads.logits[r], &mut clf);
            let adversarial = self
                .classifier
                .accumulate_backward(z, &grads.adversarial_logits[r], &mut clf);
            for k in 0..dz.len() {
                dz[k] += normal[k] - grl_factor * adversarial[k];
            }
            self.encoder.accumulate_backward(t, &dz, &mut enc);
        }
        Ok(Gradients {
            encoder: enc,
            classifier: clf,
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"EPCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialize a parameter vector: magic, version, layout id, dims, then the
/// values as little-endian `f64`.
pub fn write_checkpoint<W: Write>(mut out: W, params: &ParamVector, dims: &[u32]) -> Result<()> {
    let id = params.layout().as_str().as_bytes();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(id.len() as u32).to_le_bytes())?;
    out.write_all(id)?;
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        out.write_all(&d.to_le_bytes())?;
    }
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(ParamVector, Vec<u32>)> {
    fn u32_of(r: &mut impl Read) -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = u32_of(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let id_len = u32_of(&mut input)? as usize;
    let mut id = vec![0u8; id_len];
    input.read_exact(&mut id)?;
    let id = String::from_utf8(id).map_err(|_| Error::Format("layout id is not utf-8".into()))?;
    let ndims = u32_of(&mut input)? as usize;
    let dims = (0..ndims).map(|_| u32_of(&mut input)).collect::<Result<Vec<_>>>()?;
    let mut n = [0u8; 8];
    input.read_exact(&mut n)?;
    let n = u64::from_le_bytes(n) as usize;
    let mut values = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        input.read_exact(&mut b)?;
        values.push(f64::from_le_bytes(b));
    }
    Ok((ParamVector::new(values, LayoutId::new(id))?, dims))
}
