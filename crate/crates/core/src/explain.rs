//! Per-method explanation pipeline for a window `(t0, t1]` of one episode.

use serde::{Deserialize, Serialize};

use crate::attribution::{
    discrete_time_derivatives, integrated_gradients, random_guess, time_diff, time_restrict, top_k_explanations,
    AttributionMatrix, Explanation, Method, TimeDiffReference,
};
use crate::error::{Error, Result};
use crate::events::StepSeries;
use crate::rng::seed_for_key;
use crate::seqmodel::{attention_attribution, forward, grad_wrt_inputs, Mode, ModelParams};
use crate::stats_attr::{stat_weights, BinTable, StatWeightConfig, Statistic};

/// Window to explain: the change from step `t0` to step `t1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub episode_id: String,
    pub t0: usize,
    pub t1: usize,
}

pub struct ExplainContext<'a> {
    pub params: &'a ModelParams,
    pub bins: Option<&'a BinTable>,
    pub stat_config: StatWeightConfig,
    pub m: usize,
    pub seed: u64,
    pub reference: TimeDiffReference,
}

/// Attribution of a method, or the random draw for `Method::Random`.
pub enum MethodOutput {
    Weights(AttributionMatrix),
    Random,
}

impl ExplainContext<'_> {
    fn bins(&self, method: Method) -> Result<&BinTable> {
        self.bins.ok_or_else(|| Error::config("bins", format!("method {method} needs a bin table")))
    }

    /// Windowed attribution of `method`.
    pub fn attribute(&self, steps: &StepSeries, t0: usize, t1: usize, method: Method) -> Result<MethodOutput> {
        let stats = |statistic: Statistic| -> Result<AttributionMatrix> {
            stat_weights(steps, self.bins(method)?, &self.stat_config.with_statistic(statistic))
        };
        let a = match method {
            Method::Random => return Ok(MethodOutput::Random),
            Method::Gradients => time_restrict(&grad_wrt_inputs(self.params, steps, t1)?, t0, t1)?,
            Method::Attention => {
                time_restrict(&attention_attribution(self.params, &steps.prefix(t1))?.padded(steps.len()), t0, t1)?
            }
            Method::SmoothedDerivatives => {
                let (risk, _) = forward(self.params, steps, Mode::Eval)?;
                time_restrict(&discrete_time_derivatives(&risk, steps)?, t0, t1)?
            }
            Method::TimeDiffedOddsRatio => {
                time_diff(&stats(Statistic::OddsRatio)?, steps, t0, t1, 1.0, self.reference)?
            }
            Method::TimeDiffedRothman => time_diff(&stats(Statistic::Rothman)?, steps, t0, t1, 1.0, self.reference)?,
            Method::TimeRestrictedOddsRatio => time_restrict(&stats(Statistic::OddsRatio)?, t0, t1)?,
            Method::TemporalIg => integrated_gradients(self.params, steps, t0, t1, self.m)?,
        };
        Ok(MethodOutput::Weights(a.with_method(method)))
    }

    /// Top-`k` distinct-feature explanation from an attribution.
    pub fn select(&self, output: &MethodOutput, steps: &StepSeries, window: &Window, k: usize) -> Result<Explanation> {
        match output {
            MethodOutput::Weights(a) => top_k_explanations(a, steps, k),
            MethodOutput::Random => {
                let seed = seed_for_key(self.seed, &format!("{}/random/{k}", window.episode_id));
                random_guess(steps, window.t0, window.t1, k, seed)
            }
        }
    }

    pub fn explain(&self, steps: &StepSeries, window: &Window, method: Method, k: usize) -> Result<Explanation> {
        let output = self.attribute(steps, window.t0, window.t1, method)?;
        self.select(&output, steps, window, k)
    }
}

/// Check that a method list can run with the given model and bins.
pub fn check_methods(methods: &[Method], params: &ModelParams, bins: Option<&BinTable>) -> Result<()> {
    for &m in methods {
        if m.needs_bins() && bins.is_none() {
            return Err(Error::config("bins", format!("method {m} needs a bin table")));
        }
        if m == Method::Attention && params.attention.is_none() {
            return Err(Error::config(
                "attention_head",
                "method attention needs a checkpoint trained with an attention head",
            ));
        }
    }
    Ok(())
}
