//! Event streams: ingestion, normalization and the per-step model encoding.
//!
//! An episode is a list of timestamped scalar observations. The model sees
//! one observation per step, encoded as `[values | indicators | delta-time]`
//! with exactly one active feature.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Lower and upper percentiles used to clamp values before z-scoring.
pub const CLAMP_QUANTILES: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Ordered list of the scalar features a model is built over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    entries: Vec<CatalogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub name: String,
}

impl FeatureCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("feature catalog".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::config("catalog", format!("duplicate feature `{}`", e.id)));
            }
        }
        Ok(Self { entries })
    }

    /// Catalog whose display names equal the identifiers.
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        Self::new(
            ids.iter().map(|id| CatalogEntry { id: id.as_ref().to_string(), name: id.as_ref().to_string() }).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn id(&self, index: usize) -> &str {
        &self.entries[index].id
    }

    /// Model input dimension: value channels, indicator channels, delta-time.
    pub fn input_dim(&self) -> usize {
        2 * self.entries.len() + 1
    }

    /// Stable hex digest over identifiers in order.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.id.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

/// A single observation. `value` is the model-facing value (normalized once
/// [`normalize`] ran); `raw` keeps the native-unit reading for display.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub feature: usize,
    pub value: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    pub episode_id: String,
    pub events: Vec<Event>,
    pub outcome: bool,
    pub split: Split,
}

impl EventSequence {
    /// Sort by time, then catalog order; the sort is stable so input order
    /// breaks the remaining ties.
    pub fn sort_events(&mut self) {
        self.events.sort_by(|a, b| a.time.total_cmp(&b.time).then_with(|| a.feature.cmp(&b.feature)));
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// One line of the JSONL event format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRecord {
    pub episode: String,
    pub time_s: f64,
    pub feature: String,
    pub value: f64,
    pub outcome: u8,
    pub split: Split,
}

/// Parse the JSONL event log into episodes ordered by first appearance.
pub fn parse_event_log<R: BufRead>(reader: R, catalog: &FeatureCatalog) -> Result<Vec<EventSequence>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_episode: BTreeMap<String, EventSequence> = BTreeMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line_number = lineno + 1;
        let line = line.map_err(|e| Error::Parse { line: line_number, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_number, message: e.to_string() })?;
        let feature = catalog.index_of(&rec.feature).ok_or_else(|| Error::UnknownFeature(rec.feature.clone()))?;
        if !rec.time_s.is_finite() || !rec.value.is_finite() {
            return Err(Error::Parse { line: line_number, message: "non-finite time or value".into() });
        }
        if rec.time_s < 0.0 {
            return Err(Error::NegativeTime { episode: rec.episode, time: rec.time_s });
        }
        let outcome = match rec.outcome {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parse { line: line_number, message: format!("outcome must be 0 or 1, got {other}") })
            }
        };

        let event = Event { time: rec.time_s, feature, value: rec.value, raw: rec.value };
        match by_episode.get_mut(&rec.episode) {
            Some(seq) => {
                if seq.outcome != outcome || seq.split != rec.split {
                    return Err(Error::InconsistentEpisode {
                        episode: rec.episode,
                        message: format!("line {line_number}: outcome/split disagree with earlier lines"),
                    });
                }
                seq.events.push(event);
            }
            None => {
                order.push(rec.episode.clone());
                by_episode.insert(
                    rec.episode.clone(),
                    EventSequence { episode_id: rec.episode, events: vec![event], outcome, split: rec.split },
                );
            }
        }
    }

    Ok(order
        .into_iter()
        .map(|id| {
            let mut seq = by_episode.remove(&id).expect("episode recorded in order");
            seq.sort_events();
            seq
        })
        .collect())
}

/// Serialize episodes back to the JSONL event format using raw values.
pub fn write_event_log<W: std::io::Write>(
    mut writer: W,
    seqs: &[EventSequence],
    catalog: &FeatureCatalog,
) -> Result<()> {
    for seq in seqs {
        for e in &seq.events {
            let rec = EventRecord {
                episode: seq.episode_id.clone(),
                time_s: e.time,
                feature: catalog.id(e.feature).to_string(),
                value: e.raw,
                outcome: u8::from(seq.outcome),
                split: seq.split,
            };
            serde_json::to_writer(&mut writer, &rec)?;
            writer.write_all(b"\n").map_err(|e| Error::io("<event log>", e))?;
        }
    }
    Ok(())
}

/// Train-split summary of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl FeatureStat {
    /// Zero spread after clamping; such features normalize to 0.
    pub fn is_degenerate(&self) -> bool {
        !(self.std > 0.0)
    }

    pub fn normalize(&self, value: f64) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        (value.clamp(self.lower, self.upper) - self.mean) / self.std
    }
}

/// Per-feature normalization statistics indexed by catalog position.
/// `None` marks a feature never observed in the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub entries: Vec<Option<FeatureStat>>,
}

/// Nearest-rank percentile of an ascending slice.
pub(crate) fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn fit_feature_stats(corpus: &[EventSequence], catalog: &FeatureCatalog) -> Result<FeatureStats> {
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); catalog.len()];
    let mut any_train = false;
    for seq in corpus.iter().filter(|s| s.split == Split::Train) {
        any_train = true;
        for e in &seq.events {
            if e.feature >= catalog.len() {
                return Err(Error::Dimension(format!(
                    "feature index {} outside catalog of {}",
                    e.feature,
                    catalog.len()
                )));
            }
            values[e.feature].push(e.value);
        }
    }
    if !any_train {
        return Err(Error::Empty("no train-split sequence to fit feature statistics".into()));
    }

    let entries = values
        .into_iter()
        .map(|mut v| {
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            let lower = nearest_rank(&v, CLAMP_QUANTILES.0);
            let upper = nearest_rank(&v, CLAMP_QUANTILES.1);
            let n = v.len() as f64;
            let mean = v.iter().map(|x| x.clamp(lower, upper)).sum::<f64>() / n;
            let var = v
                .iter()
                .map(|x| {
                    let d = x.clamp(lower, upper) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            Some(FeatureStat { mean, std: var.sqrt(), lower, upper, count: v.len() })
        })
        .collect();
    Ok(FeatureStats { entries })
}

impl FeatureStats {
    pub fn normalize_value(&self, feature: usize, value: f64) -> f64 {
        match self.entries.get(feature).copied().flatten() {
            Some(stat) => stat.normalize(value),
            None => 0.0,
        }
    }

    /// JSON object keyed by feature identifier; absent features map to null.
    pub fn to_json(&self, catalog: &FeatureCatalog) -> serde_json::Value {
        let map: BTreeMap<String, Option<FeatureStat>> =
            self.entries.iter().enumerate().map(|(i, s)| (catalog.id(i).to_string(), *s)).collect();
        serde_json::to_value(map).expect("feature stats serialize")
    }

    pub fn from_json(value: &serde_json::Value, catalog: &FeatureCatalog) -> Result<Self> {
        let map: BTreeMap<String, Option<FeatureStat>> = serde_json::from_value(value.clone())?;
        for key in map.keys() {
            if catalog.index_of(key).is_none() {
                return Err(Error::UnknownFeature(key.clone()));
            }
        }
        let entries = catalog.entries().iter().map(|e| map.get(&e.id).copied().flatten()).collect();
        Ok(Self { entries })
    }
}

/// Replace each value by its clamp-then-z-score; `raw` is left untouched.
pub fn normalize(seq: &EventSequence, stats: &FeatureStats) -> EventSequence {
    let mut out = seq.clone();
    for e in &mut out.events {
        e.value = stats.normalize_value(e.feature, e.value);
    }
    out
}

/// Model-facing encoding of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSeries {
    n_features: usize,
    /// Row-major `T x dim` inputs.
    x: Vec<f64>,
    pub step_feature: Vec<usize>,
    pub step_time: Vec<f64>,
    /// Native-unit reading behind each step, for display and binning.
    pub step_raw: Vec<f64>,
}

/// `log(1 + hours)` for a gap in seconds.
pub fn delta_time_channel(gap_seconds: f64) -> f64 {
    (gap_seconds / SECONDS_PER_HOUR).ln_1p()
}

impl StepSeries {
    /// Build directly from rows; used by tests and foreign callers.
    pub fn from_parts(
        n_features: usize,
        x: Vec<f64>,
        step_feature: Vec<usize>,
        step_time: Vec<f64>,
        step_raw: Vec<f64>,
    ) -> Result<Self> {
        let dim = 2 * n_features + 1;
        let t = step_feature.len();
        if x.len() != t * dim || step_time.len() != t || step_raw.len() != t {
            return Err(Error::Dimension(format!(
                "step series with {t} steps needs {} inputs, {t} times and {t} raw values",
                t * dim
            )));
        }
        if let Some(&f) = step_feature.iter().find(|&&f| f >= n_features) {
            return Err(Error::Dimension(format!("active feature {f} outside {n_features} features")));
        }
        Ok(Self { n_features, x, step_feature, step_time, step_raw })
    }

    pub fn len(&self) -> usize {
        self.step_feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step_feature.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn dim(&self) -> usize {
        2 * self.n_features + 1
    }

    /// Input vector at 0-based row `row`.
    pub fn row(&self, row: usize) -> &[f64] {
        let d = self.dim();
        &self.x[row * d..(row + 1) * d]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.x[row * d..(row + 1) * d]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.x
    }

    pub fn inputs_mut(&mut self) -> &mut [f64] {
        &mut self.x
    }

    pub fn value_channel(&self, feature: usize) -> usize {
        feature
    }

    pub fn indicator_channel(&self, feature: usize) -> usize {
        self.n_features + feature
    }

    pub fn delta_channel(&self) -> usize {
        2 * self.n_features
    }

    /// Normalized value carried by 0-based row `row`.
    pub fn active_value(&self, row: usize) -> f64 {
        self.row(row)[self.step_feature[row]]
    }

    /// First `t` steps.
    pub fn prefix(&self, t: usize) -> StepSeries {
        let t = t.min(self.len());
        StepSeries {
            n_features: self.n_features,
            x: self.x[..t * self.dim()].to_vec(),
            step_feature: self.step_feature[..t].to_vec(),
            step_time: self.step_time[..t].to_vec(),
            step_raw: self.step_raw[..t].to_vec(),
        }
    }

    /// Same measurement pattern with a replacement input matrix.
    pub fn with_inputs(&self, x: Vec<f64>) -> StepSeries {
        assert_eq!(x.len(), self.x.len(), "input matrix shape");
        StepSeries { x, ..self.clone() }
    }
}

/// One step per event; value, indicator and delta-time channels filled for
/// the active feature.
pub fn encode_steps(seq: &EventSequence, catalog: &FeatureCatalog) -> Result<StepSeries> {
    let n_features = catalog.len();
    let dim = 2 * n_features + 1;
    let mut x = vec![0.0; seq.events.len() * dim];
    let mut step_feature = Vec::with_capacity(seq.events.len());
    let mut step_time = Vec::with_capacity(seq.events.len());
    let mut step_raw = Vec::with_capacity(seq.events.len());
    let mut previous = 0.0;
    for (row, e) in seq.events.iter().enumerate() {
        if e.feature >= n_features {
            return Err(Error::Dimension(format!("feature index {} outside catalog of {n_features}", e.feature)));
        }
        let r = &mut x[row * dim..(row + 1) * dim];
        r[e.feature] = e.value;
        r[n_features + e.feature] = 1.0;
        r[2 * n_features] = delta_time_channel((e.time - previous).max(0.0));
        previous = e.time;
        step_feature.push(e.feature);
        step_time.push(e.time);
        step_raw.push(e.raw);
    }
    Ok(StepSeries { n_features, x, step_feature, step_time, step_raw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn catalog() -> FeatureCatalog {
        FeatureCatalog::from_ids(&["temp", "hr"]).unwrap()
    }

    fn line(ep: &str, t: f64, f: &str, v: f64) -> String {
        format!(r#"{{"episode":"{ep}","time_s":{t},"feature":"{f}","value":{v},"outcome":1,"split":"train"}}"#)
    }

    fn seq(values: &[(f64, usize, f64)], split: Split) -> EventSequence {
        EventSequence {
            episode_id: "e".into(),
            events: values.iter().map(|&(time, feature, value)| Event { time, feature, value, raw: value }).collect(),
            outcome: false,
            split,
        }
    }

    #[test]
    fn parse_sorts_by_time() {
        let text = [line("e1", 7200.0, "temp", 37.0), line("e1", 3600.0, "hr", 80.0)].join("\n");
        let seqs = parse_event_log(text.as_bytes(), &catalog()).unwrap();
        assert_eq!(seqs.len(), 1);
        let times: Vec<f64> = seqs[0].events.iter().map(|e| e.time).collect();
        assert_eq!(times, vec![3600.0, 7200.0]);
    }

    #[test]
    fn parse_empty_stream() {
        assert!(parse_event_log("".as_bytes(), &catalog()).unwrap().is_empty());
    }

    #[test]
    fn parse_rejects_negative_time() {
        let err = parse_event_log(line("e1", -5.0, "temp", 1.0).as_bytes(), &catalog()).unwrap_err();
        assert!(matches!(err, Error::NegativeTime { .. }));
        assert!(err.to_string().contains("negative time"));
    }

    #[test]
    fn parse_reports_line_and_unknown_feature() {
        let text = format!("{}\nnot json\n", line("e1", 1.0, "temp", 1.0));
        match parse_event_log(text.as_bytes(), &catalog()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_event_log(line("e1", 1.0, "lactate", 1.0).as_bytes(), &catalog()).unwrap_err();
        assert!(err.to_string().contains("lactate"));
    }

    #[test]
    fn parse_rejects_disagreeing_outcome() {
        let a = line("e1", 1.0, "temp", 1.0);
        let b = line("e1", 2.0, "temp", 1.0).replace("\"outcome\":1", "\"outcome\":0");
        let err = parse_event_log(format!("{a}\n{b}").as_bytes(), &catalog()).unwrap_err();
        assert!(matches!(err, Error::InconsistentEpisode { .. }));
    }

    #[test]
    fn simultaneous_events_follow_catalog_then_input_order() {
        let text = [line("e", 10.0, "hr", 1.0), line("e", 10.0, "temp", 2.0), line("e", 10.0, "hr", 3.0)].join("\n");
        let s = &parse_event_log(text.as_bytes(), &catalog()).unwrap()[0];
        let order: Vec<(usize, f64)> = s.events.iter().map(|e| (e.feature, e.value)).collect();
        assert_eq!(order, vec![(0, 2.0), (1, 1.0), (1, 3.0)]);
    }

    #[test]
    fn degenerate_feature_normalizes_to_zero() {
        let s = seq(&[(0.0, 0, 1.0), (1.0, 0, 1.0), (2.0, 0, 1.0)], Split::Train);
        let stats = fit_feature_stats(&[s.clone()], &catalog()).unwrap();
        let st = stats.entries[0].unwrap();
        assert_eq!(st.mean, 1.0);
        assert!(st.is_degenerate());
        assert!(normalize(&s, &stats).events.iter().all(|e| e.value == 0.0));
        // never observed
        assert!(stats.entries[1].is_none());
        assert_eq!(stats.normalize_value(1, 42.0), 0.0);
    }

    #[test]
    fn two_point_statistics() {
        let s = seq(&[(0.0, 0, 0.0), (1.0, 0, 10.0)], Split::Train);
        let st = fit_feature_stats(&[s], &catalog()).unwrap().entries[0].unwrap();
        assert_eq!(st.mean, 5.0);
        assert_eq!(st.std, 5.0);
        assert_eq!(st.normalize(5.0), 0.0);
        assert_eq!(st.normalize(10.0), 1.0);
    }

    #[test]
    fn stats_ignore_non_train_splits() {
        let train = seq(&[(0.0, 0, 0.0), (1.0, 0, 10.0)], Split::Train);
        let test = seq(&[(0.0, 0, 1000.0)], Split::Test);
        let st = fit_feature_stats(&[train, test.clone()], &catalog()).unwrap();
        assert_eq!(st.entries[0].unwrap().mean, 5.0);
        assert!(fit_feature_stats(&[test], &catalog()).is_err());
    }

    #[test]
    fn recovered_mean_within_three_standard_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr::Normal::new(3.0, 2.0).unwrap();
        let events: Vec<(f64, usize, f64)> = (0..1000).map(|i| (i as f64, 0, rng.sample(normal))).collect();
        let st = fit_feature_stats(&[seq(&events, Split::Train)], &catalog()).unwrap().entries[0].unwrap();
        // direct sample mean of the draws
        let direct = events.iter().map(|e| e.2).sum::<f64>() / 1000.0;
        assert!((st.mean - 3.0).abs() < 3.0 * 2.0 / 1000f64.sqrt());
        assert!((st.mean - direct).abs() < 3.0 * 2.0 / 1000f64.sqrt());
    }

    #[test]
    fn values_beyond_clamp_match_clamp_value() {
        let events: Vec<(f64, usize, f64)> = (0..500).map(|i| (i as f64, 0, i as f64)).collect();
        let st = fit_feature_stats(&[seq(&events, Split::Train)], &catalog()).unwrap().entries[0].unwrap();
        // clamp-first oracle: nearest-rank 99th percentile of 0..499 is 494
        assert_eq!(st.upper, 494.0);
        assert_eq!(st.normalize(10_000.0), st.normalize(494.0));
        assert_eq!(st.lower, 4.0);
        assert_eq!(st.normalize(-3.0), st.normalize(4.0));
    }

    #[test]
    fn encode_single_event() {
        let mut s = seq(&[(3600.0, 0, 0.5)], Split::Train);
        s.events[0].raw = 99.0;
        let steps = encode_steps(&s, &catalog()).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps.row(0), &[0.5, 0.0, 1.0, 0.0, 2f64.ln()]);
        assert_eq!(steps.step_feature, vec![0]);
        assert_eq!(steps.step_raw, vec![99.0]);
    }

    #[test]
    fn simultaneous_events_have_zero_gap() {
        let s = seq(&[(3600.0, 0, 0.5), (3600.0, 1, -1.0)], Split::Train);
        let steps = encode_steps(&s, &catalog()).unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps.row(1)[steps.delta_channel()], 0.0);
    }

    #[test]
    fn stats_json_round_trip() {
        let s = seq(&[(0.0, 0, 0.0), (1.0, 0, 10.0)], Split::Train);
        let st = fit_feature_stats(&[s], &catalog()).unwrap();
        let json = st.to_json(&catalog());
        assert!(json["hr"].is_null());
        assert_eq!(FeatureStats::from_json(&json, &catalog()).unwrap(), st);
    }

    #[test]
    fn fingerprint_depends_on_order() {
        let a = FeatureCatalog::from_ids(&["a", "b"]).unwrap();
        let b = FeatureCatalog::from_ids(&["b", "a"]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert!(FeatureCatalog::from_ids(&["a", "a"]).is_err());
    }

    fn arb_sequence() -> impl Strategy<Value = EventSequence> {
        prop::collection::vec((0.0f64..1e6, 0usize..3, -50.0f64..50.0), 1..40).prop_map(|mut ev| {
            ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            seq(&ev, Split::Train)
        })
    }

    proptest! {
        #[test]
        fn encoding_is_one_hot_and_invertible(s in arb_sequence()) {
            let cat = FeatureCatalog::from_ids(&["a", "b", "c"]).unwrap();
            let steps = encode_steps(&s, &cat).unwrap();
            prop_assert_eq!(steps.len(), s.len());
            for (row, e) in s.events.iter().enumerate() {
                let r = steps.row(row);
                let indicators = &r[3..6];
                prop_assert_eq!(indicators.iter().sum::<f64>(), 1.0);
                // decode by scanning the indicator block
                let active = indicators.iter().position(|&v| v == 1.0).unwrap();
                prop_assert_eq!(active, e.feature);
                prop_assert_eq!(r[active], e.value);
                for f in 0..3 {
                    if f != active {
                        prop_assert_eq!(r[f], 0.0);
                    }
                }
                prop_assert!(r[6] >= 0.0);
            }
            prop_assert!(steps.step_time.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn refitted_normalization_is_centered(s in arb_sequence()) {
            let cat = FeatureCatalog::from_ids(&["a", "b", "c"]).unwrap();
            let once = normalize(&s, &fit_feature_stats(&[s.clone()], &cat).unwrap());
            let twice = normalize(&once, &fit_feature_stats(&[once.clone()], &cat).unwrap());
            for f in 0..3 {
                let vals: Vec<f64> = twice.events.iter().filter(|e| e.feature == f).map(|e| e.value).collect();
                if !vals.is_empty() {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    prop_assert!(mean.abs() < 1e-9, "feature {} mean {}", f, mean);
                }
            }
        }
    }

    #[test]
    fn delta_channel_matches_definition() {
        assert_relative_eq!(delta_time_channel(7200.0), 3f64.ln());
    }
}
