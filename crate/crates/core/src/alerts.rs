//! Alert rule on a risk series and the cohort of first alerts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::SECONDS_PER_HOUR;
use crate::seqmodel::RiskSeries;

/// Relative slack on threshold comparisons so that products such as
/// `1.5 * 0.1` do not miss an exactly-met bound by one ulp.
const REL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlertRule {
    pub ratio_threshold: f64,
    pub floor: f64,
    pub anchor_time: f64,
    pub horizon: f64,
    pub check_interval: f64,
    pub min_new_events: usize,
    pub first_alert_only: bool,
}

impl Default for AlertRule {
    fn default() -> Self {
        Self {
            ratio_threshold: 1.5,
            floor: 0.2,
            anchor_time: 12.0 * SECONDS_PER_HOUR,
            horizon: 24.0 * SECONDS_PER_HOUR,
            check_interval: 2.0 * SECONDS_PER_HOUR,
            min_new_events: 40,
            first_alert_only: true,
        }
    }
}

impl AlertRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_threshold > 1.0 && self.ratio_threshold.is_finite()) {
            return Err(Error::config("ratio_threshold", "must exceed 1"));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::config("floor", "must lie in (0, 1)"));
        }
        if !(self.anchor_time >= 0.0 && self.anchor_time < self.horizon && self.horizon.is_finite()) {
            return Err(Error::config("anchor_time", "must be non-negative and before the horizon"));
        }
        if !(self.check_interval > 0.0 && self.check_interval.is_finite()) {
            return Err(Error::config("check_interval", "must be positive"));
        }
        Ok(())
    }

    /// Check times after the anchor, up to and including the horizon.
    pub fn check_times(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 1u32;
        loop {
            let c = self.anchor_time + k as f64 * self.check_interval;
            if c > self.horizon * (1.0 + REL_EPS) {
                break;
            }
            out.push(c);
            k += 1;
        }
        out
    }

    /// Whether risk `p1` at a check alerts against anchor risk `p0`.
    pub fn fires(&self, p0: f64, p1: f64) -> bool {
        let at_least = |v: f64, bound: f64| v >= bound - REL_EPS * bound.abs();
        at_least(p1, self.floor) && at_least(p1, self.ratio_threshold * p0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub episode_id: String,
    pub t0: usize,
    pub t1: usize,
    pub t0_time: f64,
    pub t1_time: f64,
    pub p0: f64,
    pub p1: f64,
    pub new_events: usize,
}

/// Last step (1-based) with time at or before `time`.
pub fn step_at(step_time: &[f64], time: f64) -> Option<usize> {
    let n = step_time.partition_point(|&s| s <= time);
    (n > 0).then_some(n)
}

/// First check at which the held risk meets both thresholds, if any.
pub fn evaluate_alert_rule(episode_id: &str, risk: &RiskSeries, rule: &AlertRule) -> Result<Option<Alert>> {
    let t0 = step_at(&risk.step_time, rule.anchor_time).ok_or(Error::NoAnchor { anchor_s: rule.anchor_time })?;
    let p0 = risk.p[t0 - 1];
    for c in rule.check_times() {
        let t1 = step_at(&risk.step_time, c).expect("anchor step precedes every check");
        let p1 = risk.p[t1 - 1];
        if t1 > t0 && rule.fires(p0, p1) {
            return Ok(Some(Alert {
                episode_id: episode_id.to_string(),
                t0,
                t1,
                t0_time: risk.step_time[t0 - 1],
                t1_time: risk.step_time[t1 - 1],
                p0,
                p1,
                new_events: t1 - t0,
            }));
        }
    }
    Ok(None)
}

/// All alerts of one episode, one per check time that fires.
fn all_alerts(episode_id: &str, risk: &RiskSeries, rule: &AlertRule) -> Vec<Alert> {
    let Some(t0) = step_at(&risk.step_time, rule.anchor_time) else {
        return Vec::new();
    };
    let p0 = risk.p[t0 - 1];
    let mut out: Vec<Alert> = Vec::new();
    for c in rule.check_times() {
        let t1 = step_at(&risk.step_time, c).expect("anchor step precedes every check");
        let p1 = risk.p[t1 - 1];
        if t1 > t0 && rule.fires(p0, p1) && out.last().map_or(true, |a| a.t1 != t1) {
            out.push(Alert {
                episode_id: episode_id.to_string(),
                t0,
                t1,
                t0_time: risk.step_time[t0 - 1],
                t1_time: risk.step_time[t1 - 1],
                p0,
                p1,
                new_events: t1 - t0,
            });
        }
    }
    out
}

/// Alerts across episodes: first alert only (when configured), then those
/// with fewer than `min_new_events` new steps dropped. Episodes without an
/// anchor step are skipped. Sorted by episode id.
pub fn select_alert_cohort(episodes: &[(String, RiskSeries)], rule: &AlertRule) -> Result<Vec<Alert>> {
    rule.validate()?;
    let mut out: Vec<Alert> = episodes
        .par_iter()
        .flat_map_iter(|(id, risk)| {
            let mut alerts = all_alerts(id, risk, rule);
            if rule.first_alert_only {
                alerts.truncate(1);
            }
            alerts.into_iter().filter(|a| a.new_events >= rule.min_new_events)
        })
        .collect();
    out.sort_by(|a, b| a.episode_id.cmp(&b.episode_id).then(a.t1.cmp(&b.t1)));
    Ok(out)
}

pub fn write_alerts_csv<W: std::io::Write>(writer: W, alerts: &[Alert]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["episode", "t0", "t1", "t0_time", "t1_time", "p0", "p1", "new_events"])?;
    for a in alerts {
        w.write_record([
            a.episode_id.clone(),
            a.t0.to_string(),
            a.t1.to_string(),
            a.t0_time.to_string(),
            a.t1_time.to_string(),
            a.p0.to_string(),
            a.p1.to_string(),
            a.new_events.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("alerts csv", e))?;
    Ok(())
}

pub fn read_alerts_csv<R: std::io::Read>(reader: R) -> Result<Vec<Alert>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| Error::Parse { line: i + 2, message: m.to_string() };
        if rec.len() != 8 {
            return Err(bad("expected 8 columns"));
        }
        let num = |j: usize| rec[j].parse::<f64>().map_err(|_| bad("malformed number"));
        let int = |j: usize| rec[j].parse::<usize>().map_err(|_| bad("malformed integer"));
        out.push(Alert {
            episode_id: rec[0].to_string(),
            t0: int(1)?,
            t1: int(2)?,
            t0_time: num(3)?,
            t1_time: num(4)?,
            p0: num(5)?,
            p1: num(6)?,
            new_events: int(7)?,
        });
    }
    Ok(out)
}
