//! Dynamical attribution methods over step series.
//!
//! Step indices are 1-based throughout: step `t` is row `t - 1` of the
//! input matrix, and a window `(t0, t1]` keeps steps `t0 < t <= t1`
//! (`t0 = 0` is the episode start).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::StepSeries;
use crate::seqmodel::RiskSeries;

/// Attribution methods compared by the benchmark, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Gradients,
    Attention,
    SmoothedDerivatives,
    TimeDiffedOddsRatio,
    TimeDiffedRothman,
    TimeRestrictedOddsRatio,
    TemporalIg,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Random,
        Method::Gradients,
        Method::Attention,
        Method::SmoothedDerivatives,
        Method::TimeDiffedOddsRatio,
        Method::TimeDiffedRothman,
        Method::TimeRestrictedOddsRatio,
        Method::TemporalIg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Gradients => "gradients",
            Method::Attention => "attention",
            Method::SmoothedDerivatives => "smoothed_derivatives",
            Method::TimeDiffedOddsRatio => "time_diffed_odds_ratio",
            Method::TimeDiffedRothman => "time_diffed_rothman",
            Method::TimeRestrictedOddsRatio => "time_restricted_odds_ratio",
            Method::TemporalIg => "temporal_ig",
        }
    }

    pub fn available() -> String {
        Method::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", ")
    }

    /// Parse a comma-separated list; `all` expands to every method.
    pub fn parse_list(list: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if name == "all" {
                out.extend(Method::ALL);
            } else {
                out.push(name.parse()?);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn needs_bins(self) -> bool {
        matches!(self, Method::TimeDiffedOddsRatio | Method::TimeDiffedRothman | Method::TimeRestrictedOddsRatio)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMethod { name: s.to_string(), available: Method::available() })
    }
}

/// Weights over `T` steps and `d` input channels, stored one step per row.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    dim: usize,
    weights: Vec<f64>,
    window: Option<(usize, usize)>,
    method: Method,
}

impl AttributionMatrix {
    pub fn zeros(steps: usize, dim: usize, method: Method) -> Self {
        Self { dim, weights: vec![0.0; steps * dim], window: None, method }
    }

    /// From row-major `steps x dim` weights.
    pub fn from_rows(weights: Vec<f64>, dim: usize, method: Method) -> Result<Self> {
        if dim == 0 || weights.len() % dim != 0 {
            return Err(Error::Dimension(format!("{} weights do not split into rows of {dim}", weights.len())));
        }
        Ok(Self { dim, weights, window: None, method })
    }

    pub fn steps(&self) -> usize {
        self.weights.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> Option<(usize, usize)> {
        self.window
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// Extend with zero rows up to `steps` rows.
    pub fn padded(mut self, steps: usize) -> Self {
        if steps > self.steps() {
            self.weights.resize(steps * self.dim, 0.0);
        }
        self
    }

    pub fn as_rows(&self) -> &[f64] {
        &self.weights
    }

    /// Weights for 1-based step `t`.
    pub fn column(&self, t: usize) -> &[f64] {
        &self.weights[(t - 1) * self.dim..t * self.dim]
    }

    pub fn column_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.weights[(t - 1) * self.dim..t * self.dim]
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weight of the event at step `t`: its active feature's value channel.
    pub fn event_weight(&self, steps: &StepSeries, t: usize) -> f64 {
        self.column(t)[steps.value_channel(steps.step_feature[t - 1])]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { weights: self.weights.iter().map(|w| w * factor).collect(), ..self.clone() }
    }

    fn in_window(&self, t: usize) -> bool {
        self.window.map_or(true, |(t0, t1)| t0 < t && t <= t1)
    }
}

fn check_window(t0: usize, t1: usize, len: usize) -> Result<()> {
    if t0 > t1 {
        return Err(Error::Window(format!("t0={t0} exceeds t1={t1}")));
    }
    if t1 > len {
        return Err(Error::Window(format!("t1={t1} beyond {len} steps")));
    }
    Ok(())
}

/// Keep steps in `(t0, t1]`, zero the rest, and record the window.
pub fn time_restrict(a: &AttributionMatrix, t0: usize, t1: usize) -> Result<AttributionMatrix> {
    check_window(t0, t1, a.steps())?;
    let mut out = a.clone();
    for t in 1..=a.steps() {
        if t <= t0 || t > t1 {
            out.column_mut(t).fill(0.0);
        }
    }
    out.window = Some((t0, t1));
    Ok(out)
}

/// Counterfactual input in which nothing changed after `t0`: every later
/// measurement repeats its feature's latest value at or before `t0` (0 when
/// the feature had not been seen). Indicators and delta-time are kept.
pub fn build_carry_forward_baseline(steps: &StepSeries, t0: usize) -> Result<StepSeries> {
    if t0 == 0 || t0 > steps.len() {
        return Err(Error::Window(format!("baseline anchor t0={t0} outside 1..={}", steps.len())));
    }
    let mut last = vec![0.0; steps.n_features()];
    for row in 0..t0 {
        last[steps.step_feature[row]] = steps.active_value(row);
    }
    let mut out = steps.clone();
    for row in t0..steps.len() {
        let f = steps.step_feature[row];
        let channel = steps.value_channel(f);
        out.row_mut(row)[channel] = last[f];
    }
    Ok(out)
}

/// A differentiable model emitting one risk per step.
///
/// `x` is a row-major `T x input_dim` matrix; only its first `t1` rows may
/// influence the result.
pub trait RiskModel: Sync {
    fn input_dim(&self) -> usize;

    /// `p_{t1}` and `dp_{t1}/dx_t` for `t = 1..=t1`, row-major `t1 x d`.
    fn risk_and_gradient(&self, x: &[f64], t1: usize) -> (f64, Vec<f64>);

    fn risk(&self, x: &[f64], t1: usize) -> f64 {
        self.risk_and_gradient(x, t1).0
    }
}

/// Path-integrated gradients from the carry-forward baseline at `t0` to the
/// observed inputs, explaining `p_{t1}`. Midpoint rule with `m` nodes.
pub fn integrated_gradients<M: RiskModel + ?Sized>(
    model: &M,
    steps: &StepSeries,
    t0: usize,
    t1: usize,
    m: usize,
) -> Result<AttributionMatrix> {
    if m == 0 {
        return Err(Error::config("m", "integration steps must be at least 1"));
    }
    if !(1 <= t0 && t0 < t1 && t1 <= steps.len()) {
        return Err(Error::Window(format!(
            "integrated gradients need 1 <= t0 < t1 <= {}, got ({t0}, {t1})",
            steps.len()
        )));
    }
    if model.input_dim() != steps.dim() {
        return Err(Error::Dimension(format!(
            "model expects {} inputs, steps have {}",
            model.input_dim(),
            steps.dim()
        )));
    }
    let d = steps.dim();
    let baseline = build_carry_forward_baseline(steps, t0)?;
    let target = &steps.inputs()[..t1 * d];
    let base = &baseline.inputs()[..t1 * d];

    let mut avg = vec![0.0; t1 * d];
    let mut point = vec![0.0; t1 * d];
    for j in 0..m {
        let alpha = (j as f64 + 0.5) / m as f64;
        for ((p, &b), &x) in point.iter_mut().zip(base).zip(target) {
            *p = alpha * b + (1.0 - alpha) * x;
        }
        let (_, grad) = model.risk_and_gradient(&point, t1);
        for (a, g) in avg.iter_mut().zip(&grad) {
            *a += g;
        }
    }

    let mut weights = vec![0.0; steps.len() * d];
    for i in 0..t1 * d {
        weights[i] = (target[i] - base[i]) * (avg[i] / m as f64);
    }
    let a = AttributionMatrix::from_rows(weights, d, Method::TemporalIg)?;
    time_restrict(&a, t0, t1)
}

/// `p_{t1}` on the observed inputs minus `p_{t1}` on the baseline.
pub fn integrated_gradients_target<M: RiskModel + ?Sized>(
    model: &M,
    steps: &StepSeries,
    t0: usize,
    t1: usize,
) -> Result<f64> {
    let baseline = build_carry_forward_baseline(steps, t0)?;
    let d = steps.dim();
    Ok(model.risk(&steps.inputs()[..t1 * d], t1) - model.risk(&baseline.inputs()[..t1 * d], t1))
}

/// `(p_t - p_{t-1}) e_{i_t}` per step; step 1 is measured against the
/// empty-prefix prediction.
pub fn discrete_time_derivatives(risk: &RiskSeries, steps: &StepSeries) -> Result<AttributionMatrix> {
    if risk.len() != steps.len() {
        return Err(Error::Dimension(format!("risk has {} steps, inputs have {}", risk.len(), steps.len())));
    }
    let mut a = AttributionMatrix::zeros(steps.len(), steps.dim(), Method::SmoothedDerivatives);
    let mut previous = risk.p_base;
    for t in 1..=steps.len() {
        let p = risk.p[t - 1];
        let channel = steps.value_channel(steps.step_feature[t - 1]);
        a.column_mut(t)[channel] = p - previous;
        previous = p;
    }
    Ok(a)
}

/// What to subtract from an in-window weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDiffReference {
    /// Largest weight of the same feature at or before `t0`.
    #[default]
    Max,
    /// Weight of the feature's most recent event at or before `t0`.
    MostRecent,
}

/// Per-event weights minus the feature's reference weight up to `t0`.
/// `neutral` is subtracted for features with no event up to `t0`.
pub fn time_diff(
    a: &AttributionMatrix,
    steps: &StepSeries,
    t0: usize,
    t1: usize,
    neutral: f64,
    reference: TimeDiffReference,
) -> Result<AttributionMatrix> {
    check_window(t0, t1, steps.len())?;
    if a.steps() != steps.len() || a.dim() != steps.dim() {
        return Err(Error::Dimension("attribution shape does not match steps".into()));
    }
    let mut refs: Vec<Option<f64>> = vec![None; steps.n_features()];
    for t in 1..=t0 {
        let f = steps.step_feature[t - 1];
        let w = a.event_weight(steps, t);
        refs[f] = Some(match (reference, refs[f]) {
            (TimeDiffReference::Max, Some(prev)) => prev.max(w),
            _ => w,
        });
    }
    let mut out = AttributionMatrix::zeros(steps.len(), steps.dim(), a.method());
    for t in t0 + 1..=t1 {
        let f = steps.step_feature[t - 1];
        let channel = steps.value_channel(f);
        out.column_mut(t)[channel] = a.event_weight(steps, t) - refs[f].unwrap_or(neutral);
    }
    out.window = Some((t0, t1));
    Ok(out)
}

/// One selected event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEntry {
    pub step: usize,
    pub time: f64,
    pub feature: usize,
    pub raw_value: f64,
    pub weight: f64,
}

/// Ranked events with pairwise-distinct features. `short` marks lists with
/// fewer than the requested `k` entries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Explanation {
    pub entries: Vec<ExplanationEntry>,
    pub short: bool,
}

impl Explanation {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct features, non-increasing weights, steps inside the window.
    pub fn is_valid(&self, t0: usize, t1: usize) -> bool {
        let mut features: Vec<usize> = self.entries.iter().map(|e| e.feature).collect();
        features.sort_unstable();
        features.dedup();
        features.len() == self.entries.len()
            && self.entries.windows(2).all(|w| w[0].weight >= w[1].weight)
            && self.entries.iter().all(|e| t0 < e.step && e.step <= t1)
    }
}

fn entry(steps: &StepSeries, t: usize, weight: f64) -> ExplanationEntry {
    ExplanationEntry {
        step: t,
        time: steps.step_time[t - 1],
        feature: steps.step_feature[t - 1],
        raw_value: steps.step_raw[t - 1],
        weight,
    }
}

/// Highest-weighted events from `k` distinct features inside the window of
/// `a` (all steps when no window is set). Zero weights are never selected.
/// Ties prefer the later step, then the lower feature index.
pub fn top_k_explanations(a: &AttributionMatrix, steps: &StepSeries, k: usize) -> Result<Explanation> {
    if a.steps() != steps.len() {
        return Err(Error::Dimension(format!("attribution covers {} steps, series has {}", a.steps(), steps.len())));
    }
    let mut candidates: Vec<(usize, f64)> = (1..=steps.len())
        .filter(|&t| a.in_window(t))
        .map(|t| (t, a.event_weight(steps, t)))
        .filter(|&(_, w)| w != 0.0 && w.is_finite())
        .collect();
    candidates.sort_by(|&(ta, wa), &(tb, wb)| {
        wb.total_cmp(&wa).then(tb.cmp(&ta)).then(steps.step_feature[ta - 1].cmp(&steps.step_feature[tb - 1]))
    });
    let mut taken = vec![false; steps.n_features()];
    let mut entries = Vec::with_capacity(k);
    for (t, w) in candidates {
        if entries.len() == k {
            break;
        }
        let f = steps.step_feature[t - 1];
        if !taken[f] {
            taken[f] = true;
            entries.push(entry(steps, t, w));
        }
    }
    Ok(Explanation { short: entries.len() < k, entries })
}

/// Steps in `(t0, t1]` grouped by feature, features ascending.
fn window_groups(steps: &StepSeries, t0: usize, t1: usize) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); steps.n_features()];
    for t in t0 + 1..=t1 {
        groups[steps.step_feature[t - 1]].push(t);
    }
    groups.into_iter().enumerate().filter(|(_, g)| !g.is_empty()).collect()
}

/// `table[i][j]`: elementary symmetric polynomial of order `j` over the
/// counts of groups `i..`.
fn elementary_symmetric_suffix(counts: &[f64], k: usize) -> Vec<Vec<f64>> {
    let n = counts.len();
    let mut table = vec![vec![0.0; k + 1]; n + 1];
    table[n][0] = 1.0;
    for i in (0..n).rev() {
        table[i][0] = 1.0;
        for j in 1..=k {
            table[i][j] = table[i + 1][j] + counts[i] * table[i + 1][j - 1];
        }
    }
    table
}

/// Uniform draw over all sets of `k` window events with pairwise-distinct
/// features, returned in random order with unit weights.
pub fn random_guess(steps: &StepSeries, t0: usize, t1: usize, k: usize, seed: u64) -> Result<Explanation> {
    check_window(t0, t1, steps.len())?;
    let groups = window_groups(steps, t0, t1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = k.min(groups.len());
    let counts: Vec<f64> = groups.iter().map(|(_, g)| g.len() as f64).collect();
    let table = elementary_symmetric_suffix(&counts, take);

    let mut chosen = Vec::with_capacity(take);
    let mut remaining = take;
    for (i, (_, group)) in groups.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let p_include = counts[i] * table[i + 1][remaining - 1] / table[i][remaining];
        if rng.random::<f64>() < p_include {
            chosen.push(group[rng.random_range(0..group.len())]);
            remaining -= 1;
        }
    }
    chosen.shuffle(&mut rng);
    Ok(Explanation { entries: chosen.into_iter().map(|t| entry(steps, t, 1.0)).collect(), short: take < k })
}

/// Probability that each step in `(t0, t1]` appears in [`random_guess`]'s
/// output; index `t - 1` holds step `t`, other steps are 0.
pub fn random_inclusion_probabilities(steps: &StepSeries, t0: usize, t1: usize, k: usize) -> Result<Vec<f64>> {
    check_window(t0, t1, steps.len())?;
    let groups = window_groups(steps, t0, t1);
    let take = k.min(groups.len());
    let mut out = vec![0.0; steps.len()];
    if take == 0 {
        return Ok(out);
    }
    let counts: Vec<f64> = groups.iter().map(|(_, g)| g.len() as f64).collect();
    let total = elementary_symmetric_suffix(&counts, take)[0][take];
    for (i, (_, group)) in groups.iter().enumerate() {
        let mut others = counts.clone();
        others.remove(i);
        let with_event = elementary_symmetric_suffix(&others, take - 1)[0][take - 1];
        for &t in group {
            out[t - 1] = with_event / total;
        }
    }
    Ok(out)
}
