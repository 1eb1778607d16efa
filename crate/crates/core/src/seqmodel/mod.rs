//! Per-step LSTM risk model with hand-written backpropagation through time.
//!
//! Gate blocks are stacked `[input, forget, cell, output]` in every `4H`
//! parameter. Dropout is inverted dropout with masks stored in the cache, so
//! the backward pass differentiates exactly the function the forward pass
//! evaluated.

mod checkpoint;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use train::{auroc, train, EpochReport, TrainingExample, TrainingReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMatrix, Method, RiskModel};
use crate::error::{Error, Result};
use crate::events::StepSeries;

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside logarithms.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub input_dropout: f64,
    pub output_dropout: f64,
    pub recurrent_dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub eta: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub attention_head: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            input_dropout: 0.03,
            output_dropout: 0.02,
            recurrent_dropout: 0.01,
            learning_rate: 0.002,
            batch_size: 16,
            clip_norm: 6.0,
            eta: 0.0,
            max_epochs: 20,
            patience: 3,
            attention_head: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::config("hidden_size", "must be positive"));
        }
        for (name, p) in [
            ("input_dropout", self.input_dropout),
            ("output_dropout", self.output_dropout),
            ("recurrent_dropout", self.recurrent_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(name, format!("{p} not in [0, 1)")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn dropout(&self, seed: u64) -> DropoutSpec {
        DropoutSpec { input: self.input_dropout, output: self.output_dropout, recurrent: self.recurrent_dropout, seed }
    }
}

/// LSTM weights plus the scalar output head and optional attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hidden_size: usize,
    pub input_dim: usize,
    /// `4H x d`, row-major.
    pub w: Vec<f64>,
    /// `4H x H`, row-major.
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
    /// `H x H` bilinear attention form.
    pub attention: Option<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ModelParams {
    /// Uniform(-s, s) weights with `s = 1/sqrt(H)`, forget bias 1, zero
    /// output head.
    pub fn init(config: &ModelConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::config("input_dim", "must be at least 1"));
        }
        let h = config.hidden_size;
        let s = 1.0 / (h as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..s)).collect() };
        let w = draw(4 * h * input_dim);
        let u = draw(4 * h * h);
        let attention = config.attention_head.then(|| draw(h * h));
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].fill(1.0);
        Ok(Self { hidden_size: h, input_dim, w, u, b, w_out: vec![0.0; h], b_out: 0.0, attention })
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            hidden_size: self.hidden_size,
            input_dim: self.input_dim,
            w: vec![0.0; self.w.len()],
            u: vec![0.0; self.u.len()],
            b: vec![0.0; self.b.len()],
            w_out: vec![0.0; self.w_out.len()],
            b_out: 0.0,
            attention: self.attention.as_ref().map(|a| vec![0.0; a.len()]),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.w, &self.u, &self.b, &self.w_out, std::slice::from_ref(&self.b_out)];
        if let Some(a) = &self.attention {
            out.push(a);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> =
            vec![&mut self.w, &mut self.u, &mut self.b, &mut self.w_out, std::slice::from_mut(&mut self.b_out)];
        if let Some(a) = &mut self.attention {
            out.push(a);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Accumulate `other * scale` into `self`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * scale;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Output of the head on the initial (zero) hidden state.
    pub fn base_probability(&self) -> f64 {
        sigmoid(self.b_out)
    }
}

/// Dropout rates and the seed the masks are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub input: f64,
    pub output: f64,
    pub recurrent: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    Train(DropoutSpec),
}

/// Per-step predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSeries {
    pub p: Vec<f64>,
    pub logits: Vec<f64>,
    pub step_time: Vec<f64>,
    /// Prediction on the empty prefix.
    pub p_base: f64,
}

impl RiskSeries {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AttentionCache {
    query: Vec<f64>,
    weights: Vec<f64>,
    context: Vec<f64>,
    p: f64,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    steps: usize,
    hidden: usize,
    dim: usize,
    input_mask: Option<Vec<f64>>,
    recurrent_mask: Option<Vec<f64>>,
    output_mask: Option<Vec<f64>>,
    /// Masked inputs, `T x d`.
    x_in: Vec<f64>,
    /// Activated gates, `T x 4H`.
    gates: Vec<f64>,
    /// `(T + 1) x H`, row 0 is the initial state.
    c: Vec<f64>,
    h: Vec<f64>,
    tanh_c: Vec<f64>,
    p: Vec<f64>,
    attention: Option<AttentionCache>,
}

impl ForwardCache {
    /// Unmasked hidden state after 1-based step `t` (`t = 0` is the initial state).
    pub fn hidden_state(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden..(t + 1) * self.hidden]
    }

    pub fn attention_prediction(&self) -> Option<f64> {
        self.attention.as_ref().map(|a| a.p)
    }
}

fn inverted_mask(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Option<Vec<f64>> {
    (rate > 0.0).then(|| {
        let keep = 1.0 - rate;
        (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep }).collect()
    })
}

struct Masks {
    input: Option<Vec<f64>>,
    recurrent: Option<Vec<f64>>,
    output: Option<Vec<f64>>,
}

impl Masks {
    fn draw(spec: &DropoutSpec, steps: usize, dim: usize, hidden: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let input = inverted_mask(&mut rng, steps * dim, spec.input);
        let recurrent = inverted_mask(&mut rng, hidden, spec.recurrent);
        let output = inverted_mask(&mut rng, steps * hidden, spec.output);
        Masks { input, recurrent, output }
    }
}

fn check_dim(params: &ModelParams, steps: &StepSeries) -> Result<()> {
    if steps.dim() != params.input_dim {
        return Err(Error::Dimension(format!(
            "model expects {} inputs per step, series has {}",
            params.input_dim,
            steps.dim()
        )));
    }
    Ok(())
}

/// Recurrence over the first `t_len` rows of a row-major input matrix.
fn run(params: &ModelParams, x: &[f64], t_len: usize, masks: Masks) -> ForwardCache {
    let hs = params.hidden_size;
    let d = params.input_dim;
    let g4 = 4 * hs;
    let mut x_in = x[..t_len * d].to_vec();
    if let Some(m) = &masks.input {
        for (v, k) in x_in.iter_mut().zip(m) {
            *v *= k;
        }
    }
    let mut gates = vec![0.0; t_len * g4];
    let mut c = vec![0.0; (t_len + 1) * hs];
    let mut h = vec![0.0; (t_len + 1) * hs];
    let mut tanh_c = vec![0.0; t_len * hs];
    let mut p = vec![0.0; t_len];
    let mut h_prev_masked = vec![0.0; hs];
    let mut z = vec![0.0; g4];

    for t in 0..t_len {
        let xt = &x_in[t * d..(t + 1) * d];
        let h_prev = &h[t * hs..(t + 1) * hs];
        match &masks.recurrent {
            Some(m) => {
                for ((dst, &v), &k) in h_prev_masked.iter_mut().zip(h_prev).zip(m) {
                    *dst = v * k;
                }
            }
            None => h_prev_masked.copy_from_slice(h_prev),
        }
        for r in 0..g4 {
            let wr = &params.w[r * d..(r + 1) * d];
            let ur = &params.u[r * hs..(r + 1) * hs];
            let mut acc = params.b[r];
            for (a, b) in wr.iter().zip(xt) {
                acc += a * b;
            }
            for (a, b) in ur.iter().zip(&h_prev_masked) {
                acc += a * b;
            }
            z[r] = acc;
        }
        let gt = &mut gates[t * g4..(t + 1) * g4];
        for j in 0..hs {
            gt[j] = sigmoid(z[j]);
            gt[hs + j] = sigmoid(z[hs + j]);
            gt[2 * hs + j] = z[2 * hs + j].tanh();
            gt[3 * hs + j] = sigmoid(z[3 * hs + j]);
        }
        let mut logit = params.b_out;
        for j in 0..hs {
            let c_prev = c[t * hs + j];
            let c_new = gt[hs + j] * c_prev + gt[j] * gt[2 * hs + j];
            let tc = c_new.tanh();
            let h_new = gt[3 * hs + j] * tc;
            c[(t + 1) * hs + j] = c_new;
            tanh_c[t * hs + j] = tc;
            h[(t + 1) * hs + j] = h_new;
            let out = match &masks.output {
                Some(m) => h_new * m[t * hs + j],
                None => h_new,
            };
            logit += params.w_out[j] * out;
        }
        p[t] = logit;
    }

    let mut cache = ForwardCache {
        steps: t_len,
        hidden: hs,
        dim: d,
        input_mask: masks.input,
        recurrent_mask: masks.recurrent,
        output_mask: masks.output,
        x_in,
        gates,
        c,
        h,
        tanh_c,
        p,
        attention: None,
    };
    if let (Some(att), true) = (&params.attention, t_len > 0) {
        cache.attention = Some(attend(params, att, &cache));
    }
    cache
}

fn attend(params: &ModelParams, att: &[f64], cache: &ForwardCache) -> AttentionCache {
    let hs = params.hidden_size;
    let t_len = cache.steps;
    let last = cache.hidden_state(t_len);
    let query: Vec<f64> =
        (0..hs).map(|i| att[i * hs..(i + 1) * hs].iter().zip(last).map(|(a, b)| a * b).sum()).collect();
    let scores: Vec<f64> =
        (1..=t_len).map(|t| cache.hidden_state(t).iter().zip(&query).map(|(a, b)| a * b).sum()).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let weights: Vec<f64> = exp.iter().map(|e| e / total).collect();
    let mut context = vec![0.0; hs];
    for (t, &a) in weights.iter().enumerate() {
        for (c, h) in context.iter_mut().zip(cache.hidden_state(t + 1)) {
            *c += a * h;
        }
    }
    let logit = params.b_out + params.w_out.iter().zip(&context).map(|(a, b)| a * b).sum::<f64>();
    AttentionCache { query, weights, context, p: sigmoid(logit) }
}

fn risk_from_cache(params: &ModelParams, cache: &ForwardCache, steps: &StepSeries) -> RiskSeries {
    let logits = cache.p.clone();
    RiskSeries {
        p: logits.iter().map(|&l| sigmoid(l)).collect(),
        logits,
        step_time: steps.step_time[..cache.steps].to_vec(),
        p_base: params.base_probability(),
    }
}

/// Per-step risk; dropout only in [`Mode::Train`].
pub fn forward(params: &ModelParams, steps: &StepSeries, mode: Mode) -> Result<(RiskSeries, ForwardCache)> {
    check_dim(params, steps)?;
    let masks = match mode {
        Mode::Eval => Masks { input: None, recurrent: None, output: None },
        Mode::Train(spec) => Masks::draw(&spec, steps.len(), params.input_dim, params.hidden_size),
    };
    let cache = run(params, steps.inputs(), steps.len(), masks);
    Ok((risk_from_cache(params, &cache, steps), cache))
}

/// Re-run the forward pass with the dropout masks stored in `cache`.
pub fn replay(params: &ModelParams, steps: &StepSeries, cache: &ForwardCache) -> Result<(RiskSeries, ForwardCache)> {
    check_dim(params, steps)?;
    let masks = Masks {
        input: cache.input_mask.clone(),
        recurrent: cache.recurrent_mask.clone(),
        output: cache.output_mask.clone(),
    };
    let again = run(params, steps.inputs(), cache.steps, masks);
    Ok((risk_from_cache(params, &again, steps), again))
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

fn bce(p: f64, outcome: bool) -> f64 {
    let pc = clamp_p(p);
    if outcome {
        -pc.ln()
    } else {
        -(1.0 - pc).ln()
    }
}

/// d bce / d logit; zero where the clamp is active.
fn bce_logit_grad(p: f64, outcome: bool) -> f64 {
    if !(P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
        return 0.0;
    }
    p - if outcome { 1.0 } else { 0.0 }
}

/// `eta * sum_{t>=2} (p_t - p_{t-1})^2`.
pub fn smoothing_penalty(p: &[f64], eta: f64) -> f64 {
    eta * p.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>()
}

/// Mean per-step cross-entropy against the episode outcome plus the
/// smoothing penalty on probabilities.
pub fn loss(risk: &RiskSeries, outcome: bool, eta: f64) -> f64 {
    let t = risk.p.len();
    if t == 0 {
        return 0.0;
    }
    let ce = risk.p.iter().map(|&p| bce(p, outcome)).sum::<f64>() / t as f64;
    ce + smoothing_penalty(&risk.p, eta)
}

/// Training objective: [`loss`] plus the attention head's cross-entropy when
/// the cache carries one.
pub fn objective(risk: &RiskSeries, cache: &ForwardCache, outcome: bool, eta: f64) -> f64 {
    loss(risk, outcome, eta) + cache.attention.as_ref().map_or(0.0, |a| bce(a.p, outcome))
}

fn loss_logit_grads(p: &[f64], outcome: bool, eta: f64) -> Vec<f64> {
    let t_len = p.len();
    let inv_t = 1.0 / t_len as f64;
    (0..t_len)
        .map(|t| {
            let mut dp = 0.0;
            if t > 0 {
                dp += 2.0 * eta * (p[t] - p[t - 1]);
            }
            if t + 1 < t_len {
                dp -= 2.0 * eta * (p[t + 1] - p[t]);
            }
            bce_logit_grad(p[t], outcome) * inv_t + dp * p[t] * (1.0 - p[t])
        })
        .collect()
}

/// Backpropagation through time given upstream gradients on each logit and
/// (optionally) on each unmasked hidden state. Returns input gradients,
/// row-major `T x d`.
fn bptt(
    params: &ModelParams,
    cache: &ForwardCache,
    dlogit: &[f64],
    dh_ext: Option<&[f64]>,
    grads: &mut ModelParams,
) -> Vec<f64> {
    let hs = cache.hidden;
    let d = cache.dim;
    let g4 = 4 * hs;
    let t_len = cache.steps;
    let mut dx = vec![0.0; t_len * d];
    let mut dh_next = vec![0.0; hs];
    let mut dc_next = vec![0.0; hs];
    let mut dh = vec![0.0; hs];
    let mut dz = vec![0.0; g4];
    let mut h_prev_masked = vec![0.0; hs];

    for t in (0..t_len).rev() {
        let h_t = &cache.h[(t + 1) * hs..(t + 2) * hs];
        let dl = dlogit[t];
        for j in 0..hs {
            let out_mask = cache.output_mask.as_ref().map_or(1.0, |m| m[t * hs + j]);
            dh[j] = dh_next[j] + params.w_out[j] * dl * out_mask;
            if let Some(ext) = dh_ext {
                dh[j] += ext[t * hs + j];
            }
            grads.w_out[j] += dl * h_t[j] * out_mask;
        }
        grads.b_out += dl;

        let gt = &cache.gates[t * g4..(t + 1) * g4];
        for j in 0..hs {
            let (i, f, g, o) = (gt[j], gt[hs + j], gt[2 * hs + j], gt[3 * hs + j]);
            let tc = cache.tanh_c[t * hs + j];
            let c_prev = cache.c[t * hs + j];
            let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
            let d_o = dh[j] * tc;
            dz[j] = dc * g * i * (1.0 - i);
            dz[hs + j] = dc * c_prev * f * (1.0 - f);
            dz[2 * hs + j] = dc * i * (1.0 - g * g);
            dz[3 * hs + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }

        let h_prev = &cache.h[t * hs..(t + 1) * hs];
        match &cache.recurrent_mask {
            Some(m) => {
                for ((dst, &v), &k) in h_prev_masked.iter_mut().zip(h_prev).zip(m) {
                    *dst = v * k;
                }
            }
            None => h_prev_masked.copy_from_slice(h_prev),
        }
        let xt = &cache.x_in[t * d..(t + 1) * d];
        let dxt = &mut dx[t * d..(t + 1) * d];
        dh_next.fill(0.0);
        for r in 0..g4 {
            let g = dz[r];
            if g == 0.0 {
                continue;
            }
            grads.b[r] += g;
            let wr = &params.w[r * d..(r + 1) * d];
            let gw = &mut grads.w[r * d..(r + 1) * d];
            for k in 0..d {
                gw[k] += g * xt[k];
                dxt[k] += g * wr[k];
            }
            let ur = &params.u[r * hs..(r + 1) * hs];
            let gu = &mut grads.u[r * hs..(r + 1) * hs];
            for k in 0..hs {
                gu[k] += g * h_prev_masked[k];
                dh_next[k] += g * ur[k];
            }
        }
        if let Some(m) = &cache.recurrent_mask {
            for (v, k) in dh_next.iter_mut().zip(m) {
                *v *= k;
            }
        }
        if let Some(m) = &cache.input_mask {
            for (v, k) in dxt.iter_mut().zip(&m[t * d..(t + 1) * d]) {
                *v *= k;
            }
        }
    }
    dx
}

/// Gradients of the attention head's logit feed into `grads` and a `T x H`
/// matrix of hidden-state gradients.
fn attention_backward(
    params: &ModelParams,
    cache: &ForwardCache,
    att: &AttentionCache,
    dlogit: f64,
    grads: &mut ModelParams,
) -> Vec<f64> {
    let hs = cache.hidden;
    let t_len = cache.steps;
    let w_att = params.attention.as_ref().expect("attention parameters");
    let mut dh = vec![0.0; t_len * hs];
    for j in 0..hs {
        grads.w_out[j] += dlogit * att.context[j];
    }
    grads.b_out += dlogit;
    let dctx: Vec<f64> = params.w_out.iter().map(|w| w * dlogit).collect();
    let dalpha: Vec<f64> =
        (1..=t_len).map(|t| cache.hidden_state(t).iter().zip(&dctx).map(|(a, b)| a * b).sum()).collect();
    let mean: f64 = att.weights.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
    let mut dq = vec![0.0; hs];
    for t in 0..t_len {
        let ds = att.weights[t] * (dalpha[t] - mean);
        let h_t = cache.hidden_state(t + 1);
        for j in 0..hs {
            dh[t * hs + j] += att.weights[t] * dctx[j] + ds * att.query[j];
            dq[j] += ds * h_t[j];
        }
    }
    let last = cache.hidden_state(t_len);
    let ga = grads.attention.as_mut().expect("attention gradients");
    for i in 0..hs {
        for k in 0..hs {
            ga[i * hs + k] += dq[i] * last[k];
            dh[(t_len - 1) * hs + k] += w_att[i * hs + k] * dq[i];
        }
    }
    dh
}

/// Gradients of [`objective`] with respect to every parameter and every
/// input vector (row-major `T x d`).
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    steps: &StepSeries,
    outcome: bool,
    eta: f64,
) -> Result<(ModelParams, Vec<f64>)> {
    check_dim(params, steps)?;
    if cache.steps > steps.len() || cache.hidden != params.hidden_size {
        return Err(Error::Dimension("forward cache does not match parameters or steps".into()));
    }
    let mut grads = params.zeros_like();
    if cache.steps == 0 {
        return Ok((grads, Vec::new()));
    }
    let p: Vec<f64> = cache.p.iter().map(|&l| sigmoid(l)).collect();
    let dlogit = loss_logit_grads(&p, outcome, eta);
    let dh_ext = cache
        .attention
        .as_ref()
        .map(|att| attention_backward(params, cache, att, bce_logit_grad(att.p, outcome), &mut grads));
    let dx = bptt(params, cache, &dlogit, dh_ext.as_deref(), &mut grads);
    Ok((grads, dx))
}

/// `p_{t1}` and `dp_{t1}/dx_t` for `t <= t1`, eval mode, over a raw matrix.
fn prefix_gradient(params: &ModelParams, x: &[f64], t1: usize) -> (f64, Vec<f64>) {
    let masks = Masks { input: None, recurrent: None, output: None };
    let cache = run(params, x, t1, masks);
    let p = sigmoid(cache.p[t1 - 1]);
    let mut dlogit = vec![0.0; t1];
    dlogit[t1 - 1] = p * (1.0 - p);
    let mut scratch = params.zeros_like();
    let dx = bptt(params, &cache, &dlogit, None, &mut scratch);
    (p, dx)
}

impl RiskModel for ModelParams {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn risk_and_gradient(&self, x: &[f64], t1: usize) -> (f64, Vec<f64>) {
        prefix_gradient(self, x, t1)
    }

    fn risk(&self, x: &[f64], t1: usize) -> f64 {
        let masks = Masks { input: None, recurrent: None, output: None };
        sigmoid(run(self, x, t1, masks).p[t1 - 1])
    }
}

/// Column `t` holds `dp_{t1}/dx_t`; columns after `t1` are zero.
pub fn grad_wrt_inputs(params: &ModelParams, steps: &StepSeries, t1: usize) -> Result<AttributionMatrix> {
    check_dim(params, steps)?;
    if t1 == 0 || t1 > steps.len() {
        return Err(Error::Window(format!("t1={t1} outside 1..={}", steps.len())));
    }
    let (_, dx) = prefix_gradient(params, steps.inputs(), t1);
    let mut weights = dx;
    weights.resize(steps.len() * steps.dim(), 0.0);
    AttributionMatrix::from_rows(weights, steps.dim(), Method::Gradients)
}

/// Attention-head prediction and softmax weights over the steps (eval mode).
pub fn attention_forward(params: &ModelParams, steps: &StepSeries) -> Result<(f64, Vec<f64>)> {
    check_dim(params, steps)?;
    if params.attention.is_none() {
        return Err(Error::config("attention_head", "model was built without an attention projection"));
    }
    if steps.is_empty() {
        return Err(Error::Empty("attention over an empty series".into()));
    }
    let (_, cache) = forward(params, steps, Mode::Eval)?;
    let att = cache.attention.expect("attention computed");
    Ok((att.p, att.weights))
}

/// Attention weights placed on each step's active feature.
pub fn attention_attribution(params: &ModelParams, steps: &StepSeries) -> Result<AttributionMatrix> {
    let (_, weights) = attention_forward(params, steps)?;
    let mut a = AttributionMatrix::zeros(steps.len(), steps.dim(), Method::Attention);
    for (t, w) in weights.into_iter().enumerate() {
        let channel = steps.value_channel(steps.step_feature[t]);
        a.column_mut(t + 1)[channel] = w;
    }
    Ok(a)
}
