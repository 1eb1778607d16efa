use crate::error::{Error, Result};
use crate::events::{EventSequence, FeatureCatalog, SECONDS_PER_HOUR};

use super::{CREATININE, URINE_RATE};

pub const CHECKPOINT_INTERVAL_S: f64 = 3.0 * SECONDS_PER_HOUR;
const CREATININE_RISE: f64 = 0.3;
const CREATININE_SPAN_S: f64 = 48.0 * SECONDS_PER_HOUR;
const URINE_THRESHOLD: f64 = 25.0;
const URINE_DURATION_S: f64 = 6.0 * SECONDS_PER_HOUR;
const TOL: f64 = 1e-9;

/// Creatinine-rise and low-urine criteria on raw values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AkiLabeler {
    pub creatinine: usize,
    pub urine: usize,
}

impl AkiLabeler {
    pub fn from_catalog(catalog: &FeatureCatalog) -> Result<Self> {
        let find = |id: &str| catalog.index_of(id).ok_or_else(|| Error::UnknownFeature(id.to_string()));
        Ok(Self { creatinine: find(CREATININE)?, urine: find(URINE_RATE)? })
    }

    pub fn relevant_features(&self) -> [usize; 2] {
        [self.creatinine, self.urine]
    }

    /// Some creatinine value in `(t - 48 h, t]` exceeds an earlier one in the
    /// same span by at least 0.3.
    pub fn creatinine_rise(&self, seq: &EventSequence, t: f64) -> bool {
        let mut lowest = f64::INFINITY;
        for e in &seq.events {
            if e.time > t {
                break;
            }
            if e.feature != self.creatinine || e.time <= t - CREATININE_SPAN_S {
                continue;
            }
            if e.raw - lowest >= CREATININE_RISE - TOL {
                return true;
            }
            lowest = lowest.min(e.raw);
        }
        false
    }

    /// The trailing run of sub-threshold urine observations up to `t` has at
    /// least two members and started at least 6 h before `t`.
    pub fn low_urine(&self, seq: &EventSequence, t: f64) -> bool {
        let mut run_start: Option<f64> = None;
        let mut run_len = 0usize;
        for e in seq.events.iter().filter(|e| e.feature == self.urine) {
            if e.time > t {
                break;
            }
            if e.raw < URINE_THRESHOLD {
                run_start.get_or_insert(e.time);
                run_len += 1;
            } else {
                run_start = None;
                run_len = 0;
            }
        }
        matches!(run_start, Some(s) if run_len >= 2 && t - s >= URINE_DURATION_S - TOL)
    }

    pub fn label(&self, seq: &EventSequence, t: f64) -> bool {
        self.creatinine_rise(seq, t) || self.low_urine(seq, t)
    }

    /// Checkpoints `3 h, 6 h, ...` up to the last event.
    pub fn checkpoints(seq: &EventSequence) -> impl Iterator<Item = f64> {
        let end = seq.events.last().map_or(0.0, |e| e.time);
        (1..).map(|j| j as f64 * CHECKPOINT_INTERVAL_S).take_while(move |&c| c <= end)
    }

    pub fn first_positive_checkpoint(&self, seq: &EventSequence) -> Option<f64> {
        Self::checkpoints(seq).find(|&c| self.label(seq, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, Split};

    const H: f64 = SECONDS_PER_HOUR;
    const L: AkiLabeler = AkiLabeler { creatinine: 0, urine: 1 };

    fn seq(events: &[(f64, usize, f64)]) -> EventSequence {
        let mut s = EventSequence {
            episode_id: "e".into(),
            events: events.iter().map(|&(h, feature, v)| Event { time: h * H, feature, value: v, raw: v }).collect(),
            outcome: false,
            split: Split::Train,
        };
        s.sort_events();
        s
    }

    #[test]
    fn creatinine_examples() {
        let t = 50.0 * H;
        assert!(L.label(&seq(&[(10.0, 0, 1.0), (49.0, 0, 1.4), (30.0, 1, 60.0)]), t));
        assert!(!L.label(&seq(&[(10.0, 0, 1.4), (49.0, 0, 1.0), (30.0, 1, 60.0)]), t));
        // exact threshold counts; earlier value outside 48 h does not
        assert!(L.label(&seq(&[(10.0, 0, 1.0), (49.0, 0, 1.3)]), t));
        assert!(!L.label(&seq(&[(2.0, 0, 1.0), (49.0, 0, 1.3)]), t));
        // a later value only counts once observed
        assert!(!L.label(&seq(&[(10.0, 0, 1.0), (51.0, 0, 2.0)]), t));
    }

    #[test]
    fn urine_examples() {
        let t = 20.0 * H;
        assert!(L.label(&seq(&[(14.0, 1, 20.0), (17.0, 1, 20.0), (19.5, 1, 20.0)]), t));
        assert!(!L.label(&seq(&[(14.5, 1, 20.0), (17.0, 1, 20.0), (19.5, 1, 20.0)]), t));
        // an adequate value restarts the run
        assert!(!L.label(&seq(&[(10.0, 1, 20.0), (15.0, 1, 30.0), (19.0, 1, 20.0)]), t));
        // a single observation is not enough
        assert!(!L.label(&seq(&[(10.0, 1, 20.0)]), t));
        assert!(L.label(&seq(&[(10.0, 1, 20.0), (11.0, 1, 24.9)]), t));
    }

    #[test]
    fn first_positive_checkpoint_sweep() {
        let s = seq(&[(1.0, 0, 1.0), (7.0, 0, 1.35), (10.0, 1, 50.0)]);
        assert_eq!(L.first_positive_checkpoint(&s), Some(9.0 * H));
        assert_eq!(AkiLabeler::checkpoints(&s).count(), 3);
    }
}
