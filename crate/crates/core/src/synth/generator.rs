use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use super::labeler::AkiLabeler;
use super::ScenarioConfig;
use crate::error::{Error, Result};
use crate::events::{Event, EventSequence, Split, SECONDS_PER_HOUR};
use crate::rng::mix_seed;

const MAX_ATTEMPTS: u64 = 64;
const SPLIT_STREAM: u64 = 0x5851_f42d_4c95_7f2d;
const PHASE_STREAM: u64 = 0x14057b7ef767814f;
const URINE_FLOOR: f64 = 30.0;
const URINE_LOW_CAP: f64 = 24.0;
const URINE_DROP_HOURS: f64 = 2.0;

/// Injected kidney-injury trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deterioration {
    pub onset_h: f64,
    /// Creatinine rise (mg/dl) and ramp duration (h).
    pub creatinine: Option<(f64, f64)>,
    /// Urine rate reached after the drop (ml/h).
    pub urine_low: Option<f64>,
}

impl Deterioration {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let kind: f64 = rng.random();
        let onset_h = rng.random_range(12.0..22.0);
        let creatinine =
            (kind < 0.4 || kind >= 0.7).then(|| (rng.random_range(0.6..1.0), rng.random_range(12.0..24.0)));
        let urine_low = (kind >= 0.4).then(|| rng.random_range(8.0..22.0));
        Self { onset_h, creatinine, urine_low }
    }

    fn creatinine_shift(&self, h: f64) -> f64 {
        self.creatinine.map_or(0.0, |(rise, duration)| rise * ((h - self.onset_h) / duration).clamp(0.0, 1.0))
    }
}

/// Whether episode `index` carries an injury: evenly spaced with a seeded
/// phase so the share matches the configured fraction to within one episode.
fn is_deteriorating(config: &ScenarioConfig, index: usize) -> bool {
    let f = config.deterioration_fraction;
    let phase = (mix_seed(config.seed, PHASE_STREAM) >> 11) as f64 / (1u64 << 53) as f64;
    ((index + 1) as f64 * f + phase).floor() > (index as f64 * f + phase).floor()
}

fn split_of(config: &ScenarioConfig, index: usize) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed ^ SPLIT_STREAM, index as u64));
    let u: f64 = rng.random();
    if u < config.train_fraction {
        Split::Train
    } else if u < config.train_fraction + config.validation_fraction {
        Split::Validation
    } else {
        Split::Test
    }
}

fn arrival_times(rng: &mut ChaCha8Rng, mean_h: f64, end_h: f64) -> Vec<f64> {
    let exp = Exp::new(1.0 / mean_h).expect("positive rate");
    let mut out = Vec::new();
    let mut h = rng.random_range(0.0..1.0);
    while h <= end_h {
        out.push(h);
        h += exp.sample(rng);
    }
    out
}

fn draw_events(config: &ScenarioConfig, rng: &mut ChaCha8Rng, det: Option<&Deterioration>) -> Vec<Event> {
    let end = config.episode_hours;
    let mut events = Vec::new();
    let mut push = |h: f64, feature: usize, v: f64| {
        let time = (h * SECONDS_PER_HOUR).round();
        events.push(Event { time, feature, value: v, raw: v });
    };

    let creat_base = rng.random_range(0.7..1.2);
    for h in arrival_times(rng, config.creatinine_interarrival_h, end) {
        let noise = if config.creatinine_noise > 0.0 {
            rng.random_range(-config.creatinine_noise..=config.creatinine_noise)
        } else {
            0.0
        };
        let shift = det.map_or(0.0, |d| d.creatinine_shift(h));
        push(h, 0, creat_base + noise + shift);
    }

    let urine_base: f64 = rng.random_range(45.0..90.0);
    let urine_noise = Normal::new(0.0, config.urine_noise_sd).expect("finite sd");
    for h in arrival_times(rng, config.urine_interarrival_h, end) {
        let noise = urine_noise.sample(rng);
        let v = match det.and_then(|d| d.urine_low.map(|low| (d.onset_h, low))) {
            Some((onset, low)) if h >= onset => {
                let frac = ((h - onset) / URINE_DROP_HOURS).min(1.0);
                let level = urine_base + (low - urine_base) * frac;
                let v = (level + noise).max(1.0);
                if frac >= 1.0 {
                    v.min(URINE_LOW_CAP)
                } else {
                    v
                }
            }
            _ => (urine_base + noise).max(URINE_FLOOR),
        };
        push(h, 1, v);
    }

    for (j, spec) in config.distractors.iter().enumerate() {
        let base = spec.mean + Normal::new(0.0, spec.between_sd).expect("finite sd").sample(rng);
        let noise = Normal::new(0.0, spec.noise_sd).expect("finite sd");
        for h in arrival_times(rng, config.distractor_interarrival(j), end) {
            push(h, j + 2, base + noise.sample(rng));
        }
    }
    events
}

/// Episode `index` of the scenario; deterministic in `(seed, index)`.
pub fn generate_patient(config: &ScenarioConfig, index: usize) -> Result<EventSequence> {
    if index >= config.n_episodes {
        return Err(Error::config("index", format!("{index} outside {} episodes", config.n_episodes)));
    }
    let catalog = config.catalog()?;
    let labeler = AkiLabeler::from_catalog(&catalog)?;
    let deteriorating = is_deteriorating(config, index);
    let episode_seed = mix_seed(config.seed, index as u64);

    let mut seq = EventSequence {
        episode_id: format!("ep{index:05}"),
        events: Vec::new(),
        outcome: false,
        split: split_of(config, index),
    };
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(episode_seed, attempt));
        let det = deteriorating.then(|| Deterioration::draw(&mut rng));
        seq.events = draw_events(config, &mut rng, det.as_ref());
        seq.sort_events();
        seq.outcome = labeler.first_positive_checkpoint(&seq).is_some();
        if seq.outcome == deteriorating {
            break;
        }
    }
    Ok(seq)
}

pub fn generate_corpus(config: &ScenarioConfig) -> Result<Vec<EventSequence>> {
    config.validate()?;
    (0..config.n_episodes).into_par_iter().map(|i| generate_patient(config, i)).collect()
}
