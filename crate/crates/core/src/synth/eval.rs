use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labeler::AkiLabeler;
use crate::alerts::step_at;
use crate::attribution::{random_inclusion_probabilities, Method};
use crate::error::{Error, Result};
use crate::events::{EventSequence, FeatureCatalog, StepSeries, SECONDS_PER_HOUR};
use crate::explain::{ExplainContext, Window};
use crate::rng::seed_for_key;

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const BOOTSTRAP_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// `t0` is the last step at or before the checkpoint minus this many
    /// seconds.
    pub lookback_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { lookback_s: 12.0 * SECONDS_PER_HOUR }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub step: usize,
    pub feature: String,
}

/// An evaluated window and its correct explanations. Windows with an empty
/// truth set are kept for audit but excluded from precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthWindow {
    pub episode: String,
    pub t0: usize,
    pub t1: usize,
    #[serde(default)]
    pub checkpoint_s: Option<f64>,
    pub truth: Vec<TruthEntry>,
}

impl TruthWindow {
    pub fn window(&self) -> Window {
        Window { episode_id: self.episode.clone(), t0: self.t0, t1: self.t1 }
    }

    pub fn contains_step(&self, step: usize) -> bool {
        self.truth.iter().any(|e| e.step == step)
    }
}

/// Steps in `(t0, t1]` whose feature is one of `relevant`.
pub fn ground_truth_set(
    seq: &EventSequence,
    t0: usize,
    t1: usize,
    relevant: &[usize],
    catalog: &FeatureCatalog,
) -> Result<Vec<TruthEntry>> {
    if t0 > t1 || t1 > seq.len() {
        return Err(Error::Window(format!("({t0}, {t1}] outside {} steps", seq.len())));
    }
    Ok((t0 + 1..=t1)
        .filter(|&t| relevant.contains(&seq.events[t - 1].feature))
        .map(|t| TruthEntry { step: t, feature: catalog.id(seq.events[t - 1].feature).to_string() })
        .collect())
}

/// One window per positive episode at its first positive 3-hourly
/// checkpoint. Episodes whose window would start at step 0 are skipped.
pub fn aki_windows(
    corpus: &[EventSequence],
    catalog: &FeatureCatalog,
    config: &WindowConfig,
) -> Result<Vec<TruthWindow>> {
    if !(config.lookback_s > 0.0 && config.lookback_s.is_finite()) {
        return Err(Error::config("lookback_s", "must be positive"));
    }
    let labeler = AkiLabeler::from_catalog(catalog)?;
    let relevant = labeler.relevant_features();
    let mut out = Vec::new();
    for seq in corpus {
        let Some(c) = labeler.first_positive_checkpoint(seq) else {
            continue;
        };
        let times: Vec<f64> = seq.events.iter().map(|e| e.time).collect();
        let (Some(t1), Some(t0)) = (step_at(&times, c), step_at(&times, c - config.lookback_s)) else {
            continue;
        };
        if t0 >= t1 {
            continue;
        }
        out.push(TruthWindow {
            episode: seq.episode_id.clone(),
            t0,
            t1,
            checkpoint_s: Some(c),
            truth: ground_truth_set(seq, t0, t1, &relevant, catalog)?,
        });
    }
    Ok(out)
}

pub fn write_truth_jsonl<W: Write>(mut writer: W, windows: &[TruthWindow]) -> Result<()> {
    for w in windows {
        serde_json::to_writer(&mut writer, w)?;
        writer.write_all(b"\n").map_err(|e| Error::io("truth jsonl", e))?;
    }
    Ok(())
}

pub fn read_truth_jsonl<R: BufRead>(reader: R) -> Result<Vec<TruthWindow>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

/// Share of the first `k` selected steps that are correct; `None` when the
/// window has no correct answer. An empty selection scores 0.
pub fn window_precision(selected: &[usize], truth: &TruthWindow, k: usize) -> Option<f64> {
    if truth.truth.is_empty() {
        return None;
    }
    let chosen = &selected[..selected.len().min(k)];
    if chosen.is_empty() {
        return Some(0.0);
    }
    let hits = chosen.iter().filter(|&&t| truth.contains_step(t)).count();
    Some(hits as f64 / chosen.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionSummary {
    pub mean: f64,
    /// Precision of each included window, in input order.
    pub per_window: Vec<f64>,
    pub excluded: usize,
}

pub fn precision_at_k(selections: &[Vec<usize>], truths: &[TruthWindow], k: usize) -> Result<PrecisionSummary> {
    if selections.len() != truths.len() {
        return Err(Error::Dimension(format!("{} selections for {} windows", selections.len(), truths.len())));
    }
    let mut per_window = Vec::new();
    let mut excluded = 0;
    for (s, t) in selections.iter().zip(truths) {
        match window_precision(s, t, k) {
            Some(p) => per_window.push(p),
            None => excluded += 1,
        }
    }
    if per_window.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(PrecisionSummary { mean: per_window.iter().sum::<f64>() / per_window.len() as f64, per_window, excluded })
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval of the mean, widened if needed so it
/// contains the point mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap over no values".into()));
    }
    if resamples == 0 {
        return Err(Error::config("resamples", "must be positive"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config("level", "must lie in (0, 1)"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lo = quantile(&means, tail).min(mean);
    let hi = quantile(&means, 1.0 - tail).max(mean);
    Ok((lo, hi))
}

/// Expected precision@k of the uniform distinct-feature random guess.
pub fn expected_random_precision(steps: &StepSeries, truth: &TruthWindow, k: usize) -> Result<f64> {
    let probs = random_inclusion_probabilities(steps, truth.t0, truth.t1, k)?;
    let distinct = {
        let mut seen = vec![false; steps.n_features()];
        for t in truth.t0 + 1..=truth.t1 {
            seen[steps.step_feature[t - 1]] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    let take = k.min(distinct);
    if take == 0 {
        return Ok(0.0);
    }
    let hits: f64 = truth.truth.iter().map(|e| probs[e.step - 1]).sum();
    Ok(hits / take as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub k: usize,
    pub mean_precision: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_windows: usize,
}

/// Precision@k with bootstrap intervals for every method and `k`, rows in
/// method order then ascending `k`.
pub fn run_benchmark(
    steps: &BTreeMap<String, StepSeries>,
    windows: &[TruthWindow],
    ctx: &ExplainContext<'_>,
    methods: &[Method],
    ks: &[usize],
) -> Result<Vec<BenchmarkRow>> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::config("k", "need at least one positive k"));
    }
    let k_max = *ks.last().expect("non-empty");
    let included: Vec<&TruthWindow> = windows.iter().filter(|w| !w.truth.is_empty()).collect();
    if included.is_empty() {
        return Err(Error::EmptyEvaluation);
    }

    // precision[window][method][k]
    let precision: Vec<Vec<Vec<f64>>> = included
        .par_iter()
        .map(|w| -> Result<Vec<Vec<f64>>> {
            let s =
                steps.get(&w.episode).ok_or_else(|| Error::Empty(format!("no steps for episode `{}`", w.episode)))?;
            let window = w.window();
            methods
                .iter()
                .map(|&method| {
                    let output = ctx.attribute(s, w.t0, w.t1, method)?;
                    let selections = if method == Method::Random {
                        ks.iter().map(|&k| ctx.select(&output, s, &window, k)).collect::<Result<Vec<_>>>()?
                    } else {
                        vec![ctx.select(&output, s, &window, k_max)?]
                    };
                    Ok(ks
                        .iter()
                        .enumerate()
                        .map(|(ki, &k)| {
                            let e = &selections[ki.min(selections.len() - 1)];
                            let chosen: Vec<usize> = e.entries.iter().map(|x| x.step).collect();
                            window_precision(&chosen, w, k).expect("truth non-empty")
                        })
                        .collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        for (ki, &k) in ks.iter().enumerate() {
            let values: Vec<f64> = precision.iter().map(|p| p[mi][ki]).collect();
            rows.push(benchmark_row(method, k, &values, ctx.seed)?);
        }
    }
    Ok(rows)
}

/// Mean and bootstrap interval of per-window precisions; the resampling
/// seed depends on `seed`, the method and `k` only.
pub fn benchmark_row(method: Method, k: usize, values: &[f64], seed: u64) -> Result<BenchmarkRow> {
    if values.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let seed = seed_for_key(seed, &format!("bootstrap/{method}/{k}"));
    let (ci_lo, ci_hi) = bootstrap_ci(values, BOOTSTRAP_RESAMPLES, BOOTSTRAP_LEVEL, seed)?;
    Ok(BenchmarkRow { method, k, mean_precision: mean, ci_lo, ci_hi, n_windows: values.len() })
}

pub fn write_results_csv<W: Write>(writer: W, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "k", "mean_precision", "ci_lo", "ci_hi", "n_windows"])?;
    for r in rows {
        w.write_record([
            r.method.as_str().to_string(),
            r.k.to_string(),
            format!("{:.6}", r.mean_precision),
            format!("{:.6}", r.ci_lo),
            format!("{:.6}", r.ci_hi),
            r.n_windows.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("results csv", e))?;
    Ok(())
}
