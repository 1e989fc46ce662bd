//! Alarm simulation with SOP/SPH semantics.

use serde::{Deserialize, Serialize};

use super::LabelPolicy;
use crate::error::{Error, Result};
use crate::signal_io::AnnotationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmOutcome {
    TruePrediction,
    FalseAlarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub raise_time_s: f64,
    /// `raise + sph + sop`; the alarm is active on `[raise, expiry)`.
    pub expiry_time_s: f64,
    pub outcome: AlarmOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmSummary {
    pub threshold: f64,
    pub alarms: Vec<AlarmEvent>,
    /// Fraction of seizures with an onset inside some alarm's occurrence period.
    /// `None` without seizures.
    pub sensitivity: Option<f64>,
    pub false_alarms: usize,
    /// Scored time: number of timeline points times their median spacing.
    pub scored_hours: f64,
    pub false_alarm_rate_per_h: Option<f64>,
}

/// Raises an alarm whenever the probability reaches `threshold` and no alarm
/// is active. An alarm raised at `t` predicts correctly iff some onset lies in
/// `[t + sph, t + sph + sop)`.
pub fn simulate_alarms(
    timeline: &[(f64, f64)],
    threshold: f64,
    policy: &LabelPolicy,
    ann: &AnnotationSet,
) -> Result<AlarmSummary> {
    if timeline.windows(2).any(|w| !(w[1].0 >= w[0].0)) {
        return Err(Error::Argument("score timeline must be sorted by time".into()));
    }
    let (sph, sop) = (policy.sph_s(), policy.sop_s());
    let onsets: Vec<f64> = ann.seizures().iter().map(|s| s.onset_s).collect();
    let mut alarms: Vec<AlarmEvent> = Vec::new();
    for &(t, p) in timeline {
        let active = alarms.last().is_some_and(|a| t < a.expiry_time_s);
        if p >= threshold && !active {
            let hit = onsets.iter().any(|&o| o >= t + sph && o < t + sph + sop);
            alarms.push(AlarmEvent {
                raise_time_s: t,
                expiry_time_s: t + sph + sop,
                outcome: if hit { AlarmOutcome::TruePrediction } else { AlarmOutcome::FalseAlarm },
            });
        }
    }
    let predicted = onsets
        .iter()
        .filter(|&&o| {
            alarms
                .iter()
                .any(|a| o >= a.raise_time_s + sph && o < a.expiry_time_s)
        })
        .count();
    let sensitivity = (!onsets.is_empty()).then(|| predicted as f64 / onsets.len() as f64);
    let false_alarms = alarms.iter().filter(|a| a.outcome == AlarmOutcome::FalseAlarm).count();
    let scored_hours = scored_seconds(timeline) / 3600.0;
    let false_alarm_rate_per_h = (scored_hours > 0.0).then(|| false_alarms as f64 / scored_hours);
    Ok(AlarmSummary {
        threshold,
        alarms,
        sensitivity,
        false_alarms,
        scored_hours,
        false_alarm_rate_per_h,
    })
}

fn scored_seconds(timeline: &[(f64, f64)]) -> f64 {
    if timeline.len() < 2 {
        return 0.0;
    }
    let mut gaps: Vec<f64> = timeline.windows(2).map(|w| w[1].0 - w[0].0).collect();
    gaps.sort_by(f64::total_cmp);
    let mid = gaps.len() / 2;
    let median = if gaps.len() % 2 == 1 { gaps[mid] } else { (gaps[mid - 1] + gaps[mid]) / 2.0 };
    median * timeline.len() as f64
}
