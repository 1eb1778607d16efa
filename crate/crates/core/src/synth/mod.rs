//! Synthetic acute-kidney-injury scenario: generator, labeler and the
//! precision@k evaluation harness.

mod eval;
mod generator;
mod labeler;

pub use eval::{
    aki_windows, benchmark_row, bootstrap_ci, expected_random_precision, ground_truth_set, precision_at_k,
    read_truth_jsonl, run_benchmark, window_precision, write_results_csv, write_truth_jsonl, BenchmarkRow,
    PrecisionSummary, TruthEntry, TruthWindow, WindowConfig, BOOTSTRAP_LEVEL, BOOTSTRAP_RESAMPLES,
};
pub use generator::{generate_corpus, generate_patient, Deterioration};
pub use labeler::{AkiLabeler, CHECKPOINT_INTERVAL_S};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{CatalogEntry, FeatureCatalog};

pub const CREATININE: &str = "creatinine";
pub const URINE_RATE: &str = "urine_rate";

/// Stationary distractor: patient mean drawn around `mean` with spread
/// `between_sd`, observations add noise with spread `noise_sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorSpec {
    pub id: String,
    pub name: String,
    pub mean: f64,
    pub between_sd: f64,
    pub noise_sd: f64,
}

fn distractor(id: &str, name: &str, mean: f64, between_sd: f64, noise_sd: f64) -> DistractorSpec {
    DistractorSpec { id: id.into(), name: name.into(), mean, between_sd, noise_sd }
}

pub fn default_distractors() -> Vec<DistractorSpec> {
    vec![
        distractor("heart_rate", "Heart rate (bpm)", 85.0, 10.0, 6.0),
        distractor("resp_rate", "Respiratory rate (/min)", 18.0, 3.0, 2.0),
        distractor("temperature", "Temperature (C)", 37.0, 0.4, 0.3),
        distractor("sodium", "Sodium (mmol/l)", 140.0, 3.0, 1.5),
        distractor("potassium", "Potassium (mmol/l)", 4.2, 0.4, 0.25),
        distractor("glucose", "Glucose (mg/dl)", 120.0, 20.0, 15.0),
        distractor("hemoglobin", "Hemoglobin (g/dl)", 11.0, 1.5, 0.5),
        distractor("wbc", "White blood cells (K/ul)", 9.0, 2.5, 1.5),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_episodes: usize,
    pub deterioration_fraction: f64,
    pub episode_hours: f64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    /// Mean inter-arrival hours.
    pub creatinine_interarrival_h: f64,
    pub urine_interarrival_h: f64,
    /// Distractor means are spread evenly over this range.
    pub distractor_interarrival_h: (f64, f64),
    /// Half-width of the uniform creatinine measurement noise (mg/dl).
    pub creatinine_noise: f64,
    pub urine_noise_sd: f64,
    pub distractors: Vec<DistractorSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_episodes: 2000,
            deterioration_fraction: 0.3,
            episode_hours: 48.0,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            creatinine_interarrival_h: 4.0,
            urine_interarrival_h: 2.0,
            distractor_interarrival_h: (1.0, 2.0),
            creatinine_noise: 0.1,
            urine_noise_sd: 6.0,
            distractors: default_distractors(),
        }
    }
}

/// Stable-patient creatinine noise must stay below half the labeler's rise.
const MAX_CREATININE_NOISE: f64 = 0.15;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 {
            return Err(Error::config("n_episodes", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.deterioration_fraction) {
            return Err(Error::config("deterioration_fraction", "must lie in [0, 1]"));
        }
        if !(self.episode_hours >= 24.0 && self.episode_hours.is_finite()) {
            return Err(Error::config("episode_hours", "must be at least 24"));
        }
        let fractions_ok = (0.0..=1.0).contains(&self.train_fraction)
            && (0.0..=1.0).contains(&self.validation_fraction)
            && self.train_fraction + self.validation_fraction <= 1.0 + 1e-12;
        if !fractions_ok {
            return Err(Error::config("train_fraction", "split fractions must be in [0, 1] and sum to at most 1"));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.creatinine_interarrival_h) {
            return Err(Error::config("creatinine_interarrival_h", "must be positive"));
        }
        if !positive(self.urine_interarrival_h) {
            return Err(Error::config("urine_interarrival_h", "must be positive"));
        }
        let (lo, hi) = self.distractor_interarrival_h;
        if !(positive(lo) && positive(hi) && lo <= hi) {
            return Err(Error::config("distractor_interarrival_h", "must be a positive, ordered range"));
        }
        if !(self.creatinine_noise >= 0.0 && self.creatinine_noise < MAX_CREATININE_NOISE) {
            return Err(Error::config("creatinine_noise", format!("must lie in [0, {MAX_CREATININE_NOISE})")));
        }
        if !(self.urine_noise_sd >= 0.0 && self.urine_noise_sd.is_finite()) {
            return Err(Error::config("urine_noise_sd", "must be non-negative"));
        }
        if self.distractors.len() < 8 {
            return Err(Error::config("distractors", "at least 8 distractor features are required"));
        }
        for d in &self.distractors {
            if d.id == CREATININE || d.id == URINE_RATE {
                return Err(Error::config("distractors", format!("`{}` is reserved", d.id)));
            }
            if !(d.between_sd >= 0.0 && d.noise_sd >= 0.0 && d.mean.is_finite()) {
                return Err(Error::config("distractors", format!("bad spread for `{}`", d.id)));
            }
        }
        Ok(())
    }

    /// Creatinine, urine rate, then the distractors.
    pub fn catalog(&self) -> Result<FeatureCatalog> {
        let mut entries = vec![
            CatalogEntry { id: CREATININE.into(), name: "Serum creatinine (mg/dl)".into() },
            CatalogEntry { id: URINE_RATE.into(), name: "Urine output (ml/h)".into() },
        ];
        entries.extend(self.distractors.iter().map(|d| CatalogEntry { id: d.id.clone(), name: d.name.clone() }));
        FeatureCatalog::new(entries)
    }

    pub fn distractor_interarrival(&self, j: usize) -> f64 {
        let (lo, hi) = self.distractor_interarrival_h;
        let n = self.distractors.len();
        if n <= 1 {
            lo
        } else {
            lo + (hi - lo) * j as f64 / (n - 1) as f64
        }
    }
}
