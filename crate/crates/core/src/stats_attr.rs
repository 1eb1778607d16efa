//! Odds ratio and Rothman index over quantile-binned feature values, and
//! their use as per-event attribution weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMatrix, Method};
use crate::error::{Error, Result};
use crate::events::{EventSequence, FeatureCatalog, Split, StepSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    OddsRatio,
    Rothman,
}

/// Denominator of the Rothman index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RothmanReference {
    /// Risk of the bin holding the feature's train mean.
    #[default]
    MeanBin,
    /// The feature's overall observation-level risk.
    BaseRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatWeightConfig {
    pub statistic: Statistic,
    pub laplace_alpha: f64,
    pub bins_per_feature: usize,
    pub rothman_reference: RothmanReference,
}

impl Default for StatWeightConfig {
    fn default() -> Self {
        Self {
            statistic: Statistic::OddsRatio,
            laplace_alpha: 0.5,
            bins_per_feature: 10,
            rothman_reference: RothmanReference::MeanBin,
        }
    }
}

impl StatWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.laplace_alpha > 0.0 && self.laplace_alpha.is_finite()) {
            return Err(Error::config("laplace_alpha", "must be positive"));
        }
        if self.bins_per_feature < 2 {
            return Err(Error::config("bins_per_feature", "must be at least 2"));
        }
        Ok(())
    }

    pub fn with_statistic(self, statistic: Statistic) -> Self {
        Self { statistic, ..self }
    }
}

/// Bins of one feature. `edges[0]` and `edges[last]` are the train minimum
/// and maximum; bin `j` covers `[edges[j], edges[j+1])`, the last bin is
/// closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBins {
    pub edges: Vec<f64>,
    pub positive: Vec<u64>,
    pub negative: Vec<u64>,
    pub average_bin: usize,
}

impl FeatureBins {
    pub fn n_bins(&self) -> usize {
        self.positive.len()
    }

    /// Bin index for `value`; values beyond the edges fall in the end bins.
    pub fn bin_of(&self, value: f64) -> usize {
        let n = self.n_bins();
        // number of interior edges <= value
        let interior = &self.edges[1..n];
        interior.partition_point(|&e| e <= value).min(n - 1)
    }

    fn totals(&self) -> (u64, u64) {
        (self.positive.iter().sum(), self.negative.iter().sum())
    }
}

/// Per-feature bins; `None` for features absent from the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct BinTable {
    pub features: Vec<Option<FeatureBins>>,
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Quantile bins over raw train values, tallied per observation by episode
/// outcome.
pub fn fit_bins(corpus: &[EventSequence], n_features: usize, config: &StatWeightConfig) -> Result<BinTable> {
    config.validate()?;
    let mut values: Vec<Vec<(f64, bool)>> = vec![Vec::new(); n_features];
    let mut any = false;
    for seq in corpus.iter().filter(|s| s.split == Split::Train) {
        any = true;
        for e in &seq.events {
            if e.feature >= n_features {
                return Err(Error::Dimension(format!("feature {} outside {n_features}", e.feature)));
            }
            values[e.feature].push((e.raw, seq.outcome));
        }
    }
    if !any {
        return Err(Error::Empty("train split for bin fitting".into()));
    }

    let features = values
        .into_iter()
        .map(|obs| {
            if obs.is_empty() {
                return None;
            }
            let mut sorted: Vec<f64> = obs.iter().map(|o| o.0).collect();
            sorted.sort_by(f64::total_cmp);
            let min = sorted[0];
            let max = *sorted.last().expect("non-empty");
            let mut edges = vec![min];
            for j in 1..config.bins_per_feature {
                let cut = quantile(&sorted, j as f64 / config.bins_per_feature as f64);
                if cut > *edges.last().expect("non-empty") {
                    edges.push(cut);
                }
            }
            if max > *edges.last().expect("non-empty") || edges.len() == 1 {
                edges.push(max);
            }
            let n_bins = edges.len() - 1;
            let mut bins = FeatureBins { edges, positive: vec![0; n_bins], negative: vec![0; n_bins], average_bin: 0 };
            for &(v, outcome) in &obs {
                let b = bins.bin_of(v);
                if outcome {
                    bins.positive[b] += 1;
                } else {
                    bins.negative[b] += 1;
                }
            }
            let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
            bins.average_bin = bins.bin_of(mean);
            Some(bins)
        })
        .collect();
    Ok(BinTable { features })
}

impl BinTable {
    fn bins(&self, feature: usize, bin: usize) -> Result<&FeatureBins> {
        let fb = self
            .features
            .get(feature)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Dimension(format!("no bins for feature {feature}")))?;
        if bin >= fb.n_bins() {
            return Err(Error::Dimension(format!("bin {bin} outside {} bins of feature {feature}", fb.n_bins())));
        }
        Ok(fb)
    }

    /// Smoothed odds inside the bin over smoothed odds outside it.
    pub fn odds_ratio(&self, feature: usize, bin: usize, alpha: f64) -> Result<f64> {
        let fb = self.bins(feature, bin)?;
        let (pos, neg) = fb.totals();
        let pos_in = fb.positive[bin] as f64;
        let neg_in = fb.negative[bin] as f64;
        let pos_out = pos as f64 - pos_in;
        let neg_out = neg as f64 - neg_in;
        Ok(((pos_in + alpha) / (neg_in + alpha)) / ((pos_out + alpha) / (neg_out + alpha)))
    }

    /// Smoothed risk of the bin over the reference risk.
    pub fn rothman_index(&self, feature: usize, bin: usize, alpha: f64, reference: RothmanReference) -> Result<f64> {
        let fb = self.bins(feature, bin)?;
        let risk = |pos: f64, neg: f64| (pos + alpha) / (pos + neg + 2.0 * alpha);
        let own = risk(fb.positive[bin] as f64, fb.negative[bin] as f64);
        let denom = match reference {
            RothmanReference::MeanBin => {
                let a = fb.average_bin;
                risk(fb.positive[a] as f64, fb.negative[a] as f64)
            }
            RothmanReference::BaseRate => {
                let (pos, neg) = fb.totals();
                risk(pos as f64, neg as f64)
            }
        };
        Ok(own / denom)
    }

    /// Statistic for a raw value of `feature`; 1 for features without bins.
    pub fn weight(&self, feature: usize, raw: f64, config: &StatWeightConfig) -> Result<f64> {
        let Some(fb) = self.features.get(feature).and_then(Option::as_ref) else {
            return Ok(1.0);
        };
        let bin = fb.bin_of(raw);
        match config.statistic {
            Statistic::OddsRatio => self.odds_ratio(feature, bin, config.laplace_alpha),
            Statistic::Rothman => self.rothman_index(feature, bin, config.laplace_alpha, config.rothman_reference),
        }
    }

    pub fn to_json(&self, catalog: &FeatureCatalog) -> serde_json::Value {
        let map: BTreeMap<String, Option<FeatureBins>> =
            self.features.iter().enumerate().map(|(i, b)| (catalog.id(i).to_string(), b.clone())).collect();
        serde_json::to_value(map).expect("bins serialize")
    }

    pub fn from_json(value: &serde_json::Value, catalog: &FeatureCatalog) -> Result<Self> {
        let map: BTreeMap<String, Option<FeatureBins>> = serde_json::from_value(value.clone())?;
        for key in map.keys() {
            if catalog.index_of(key).is_none() {
                return Err(Error::UnknownFeature(key.clone()));
            }
        }
        let features: Vec<Option<FeatureBins>> =
            catalog.entries().iter().map(|e| map.get(&e.id).cloned().flatten()).collect();
        for fb in features.iter().flatten() {
            let n = fb.positive.len();
            let ok = n >= 1
                && fb.negative.len() == n
                && fb.edges.len() == n + 1
                && fb.edges.windows(2).all(|w| w[0] < w[1] || n == 1)
                && fb.average_bin < n;
            if !ok {
                return Err(Error::Dimension("malformed bin table entry".into()));
            }
        }
        Ok(Self { features })
    }
}

/// Statistic of each event's bin on its active feature.
pub fn stat_weights(steps: &StepSeries, table: &BinTable, config: &StatWeightConfig) -> Result<AttributionMatrix> {
    if table.features.len() != steps.n_features() {
        return Err(Error::Dimension(format!(
            "bin table has {} features, series has {}",
            table.features.len(),
            steps.n_features()
        )));
    }
    let method = match config.statistic {
        Statistic::OddsRatio => Method::TimeRestrictedOddsRatio,
        Statistic::Rothman => Method::TimeDiffedRothman,
    };
    let mut a = AttributionMatrix::zeros(steps.len(), steps.dim(), method);
    for t in 1..=steps.len() {
        let f = steps.step_feature[t - 1];
        let w = table.weight(f, steps.step_raw[t - 1], config)?;
        a.column_mut(t)[steps.value_channel(f)] = w;
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn corpus(values: &[(f64, bool)]) -> Vec<EventSequence> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(v, outcome))| EventSequence {
                episode_id: format!("e{i}"),
                events: vec![Event { time: 0.0, feature: 0, value: v, raw: v }],
                outcome,
                split: Split::Train,
            })
            .collect()
    }

    fn table(pos: Vec<u64>, neg: Vec<u64>, average_bin: usize) -> BinTable {
        let n = pos.len();
        BinTable {
            features: vec![Some(FeatureBins {
                edges: (0..=n).map(|i| i as f64).collect(),
                positive: pos,
                negative: neg,
                average_bin,
            })],
        }
    }

    #[test]
    fn median_split() {
        let values: Vec<(f64, bool)> = (1..=10).map(|v| (v as f64, v % 2 == 0)).collect();
        let config = StatWeightConfig { bins_per_feature: 2, ..Default::default() };
        let t = fit_bins(&corpus(&values), 1, &config).unwrap();
        let fb = t.features[0].as_ref().unwrap();
        assert_eq!(fb.edges, vec![1.0, 5.5, 10.0]);
        assert_eq!(fb.positive[0] + fb.negative[0], 5);
        assert_eq!(fb.positive[1] + fb.negative[1], 5);
    }

    #[test]
    fn identical_values_single_bin() {
        let values = vec![(2.0, true), (2.0, false), (2.0, false)];
        let t = fit_bins(&corpus(&values), 1, &StatWeightConfig::default()).unwrap();
        let fb = t.features[0].as_ref().unwrap();
        assert_eq!(fb.n_bins(), 1);
        assert_eq!((fb.positive[0], fb.negative[0]), (1, 2));
        assert_eq!(fb.bin_of(-100.0), 0);
        assert_eq!(fb.bin_of(100.0), 0);
    }

    #[test]
    fn odds_ratio_count_arithmetic() {
        let t = table(vec![30, 10], vec![70, 90], 1);
        let or = t.odds_ratio(0, 0, 0.0).unwrap();
        assert!((or - (30.0 / 70.0) / (10.0 / 90.0)).abs() < 1e-12);
        assert!((or - 3.857).abs() < 1e-3);
        // label swap inverts
        let swapped = table(vec![70, 90], vec![30, 10], 1);
        assert!((swapped.odds_ratio(0, 0, 0.0).unwrap() - 1.0 / or).abs() < 1e-12);
        // no association
        let flat = table(vec![10, 20], vec![30, 60], 0);
        assert!((flat.odds_ratio(0, 0, 0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rothman_examples() {
        // bin risk 0.4 (4/10) over average-bin risk 0.1 (1/10)
        let t = table(vec![4, 1], vec![6, 9], 1);
        assert!((t.rothman_index(0, 0, 0.0, RothmanReference::MeanBin).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(t.rothman_index(0, 1, 0.5, RothmanReference::MeanBin).unwrap(), 1.0);
        let empty = table(vec![0, 1], vec![0, 9], 1);
        let avg_risk = 1.5 / 11.0;
        let got = empty.rothman_index(0, 0, 0.5, RothmanReference::MeanBin).unwrap();
        assert!((got - 0.5 / avg_risk).abs() < 1e-12);
        let base = t.rothman_index(0, 0, 0.0, RothmanReference::BaseRate).unwrap();
        assert!((base - 0.4 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn stat_weight_lookup_and_constancy() {
        let values: Vec<(f64, bool)> = (0..100).map(|v| (v as f64, v >= 70)).collect();
        let config = StatWeightConfig { bins_per_feature: 4, ..Default::default() };
        let t = fit_bins(&corpus(&values), 1, &config).unwrap();
        let steps = crate::attribution::tests::series(1, &[(0, 90.0), (0, 91.0), (0, 10.0)]);
        let a = stat_weights(&steps, &t, &config).unwrap();
        let expect = t.odds_ratio(0, t.features[0].as_ref().unwrap().bin_of(90.0), 0.5).unwrap();
        assert_eq!(a.event_weight(&steps, 1), expect);
        assert_eq!(a.event_weight(&steps, 2), expect);
        let diffed = crate::attribution::time_diff(&a, &steps, 1, 3, 1.0, Default::default()).unwrap();
        assert_eq!(diffed.event_weight(&steps, 2), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let values: Vec<(f64, bool)> = (0..30).map(|v| (v as f64, v % 3 == 0)).collect();
        let t = fit_bins(&corpus(&values), 2, &StatWeightConfig::default()).unwrap();
        let catalog = FeatureCatalog::from_ids(&["a", "b"]).unwrap();
        let back = BinTable::from_json(&t.to_json(&catalog), &catalog).unwrap();
        assert_eq!(back, t);
        assert!(back.features[1].is_none());
    }
}
