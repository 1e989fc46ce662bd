//! Preictal/interictal labeling and patient eligibility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{AnnotationSet, Seizure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelPolicy {
    /// Seizure occurrence period.
    pub sop_min: f64,
    /// Seizure prediction horizon.
    pub sph_min: f64,
    /// Minimum distance from any seizure for interictal data.
    pub interictal_gap_h: f64,
    /// Seizures whose onset follows the previous onset by less than this merge into one.
    pub lead_merge_min: f64,
    /// Patients with this many seizures in any rolling 24 h span are excluded.
    pub max_seizures_per_day: usize,
    pub min_lead_seizures: usize,
    pub min_interictal_h: f64,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        Self {
            sop_min: 30.0,
            sph_min: 5.0,
            interictal_gap_h: 4.0,
            lead_merge_min: 30.0,
            max_seizures_per_day: 10,
            min_lead_seizures: 3,
            min_interictal_h: 3.0,
        }
    }
}

impl LabelPolicy {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.sop_min,
            self.sph_min,
            self.interictal_gap_h,
            self.lead_merge_min,
            self.min_interictal_h,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.max_seizures_per_day == 0
            || self.min_lead_seizures == 0
        {
            return Err(Error::Config("label policy values must be positive".into()));
        }
        if self.interictal_gap_h * 3600.0 < self.preictal_lead_s() {
            return Err(Error::Config(
                "interictal gap must be at least SOP + SPH so the two labels cannot overlap".into(),
            ));
        }
        Ok(())
    }

    pub fn sop_s(&self) -> f64 {
        self.sop_min * 60.0
    }

    pub fn sph_s(&self) -> f64 {
        self.sph_min * 60.0
    }

    /// Start of the preictal interval measured back from onset: SOP + SPH.
    pub fn preictal_lead_s(&self) -> f64 {
        self.sop_s() + self.sph_s()
    }

    pub fn gap_s(&self) -> f64 {
        self.interictal_gap_h * 3600.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentLabel {
    Preictal,
    Interictal,
    Excluded,
}

/// A labeled half-open time interval on the patient clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub label: SegmentLabel,
    /// Index (into the merged annotation set) of the seizure a preictal segment precedes.
    pub seizure: Option<usize>,
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Collapses runs of seizures whose consecutive onsets are closer than
/// `lead_merge_min`. The merged interval keeps the leading onset and the
/// last member's offset.
pub fn merge_leading_seizures(ann: &AnnotationSet, lead_merge_min: f64) -> AnnotationSet {
    let threshold = lead_merge_min * 60.0;
    let mut out: Vec<Seizure> = Vec::with_capacity(ann.len());
    let mut last_onset = f64::NEG_INFINITY;
    for s in ann.seizures() {
        match out.last_mut() {
            Some(cur) if s.onset_s - last_onset < threshold => {
                cur.offset_s = cur.offset_s.max(s.offset_s);
            }
            _ => out.push(*s),
        }
        last_onset = s.onset_s;
    }
    AnnotationSet::new(out).expect("merging keeps intervals sorted and disjoint")
}

/// Partitions `span` into preictal, interictal and excluded segments.
///
/// Preictal is `[onset - (sph + sop), onset - sph)` for every seizure,
/// truncated at the previous seizure's offset. Interictal is everything at
/// least `interictal_gap_h` from every seizure. The rest is excluded.
/// Seizures outside `span` still count for distances.
pub fn label_intervals(span: (f64, f64), ann_merged: &AnnotationSet, policy: &LabelPolicy) -> Vec<Segment> {
    let (lo, hi) = span;
    if !(hi > lo) {
        return Vec::new();
    }
    let seizures = ann_merged.seizures();
    let mut marked: Vec<Segment> = Vec::new();

    let mut prev_offset = f64::NEG_INFINITY;
    for (i, s) in seizures.iter().enumerate() {
        let mut start = s.onset_s - policy.preictal_lead_s();
        let end = (s.onset_s - policy.sph_s()).min(hi);
        if prev_offset > start {
            log::debug!("preictal interval of seizure {i} truncated at {prev_offset} s");
            start = prev_offset;
        }
        let start = start.max(lo);
        if end > start {
            marked.push(Segment { start_s: start, end_s: end, label: SegmentLabel::Preictal, seizure: Some(i) });
        }
        prev_offset = s.offset_s;
    }

    // Forbidden zones are sorted because the seizures are.
    let gap = policy.gap_s();
    let mut cursor = lo;
    for s in seizures {
        let (a, b) = (s.onset_s - gap, s.offset_s + gap);
        if a > cursor {
            let end = a.min(hi);
            if end > cursor {
                marked.push(Segment { start_s: cursor, end_s: end, label: SegmentLabel::Interictal, seizure: None });
            }
        }
        cursor = cursor.max(b);
        if cursor >= hi {
            break;
        }
    }
    if hi > cursor {
        marked.push(Segment { start_s: cursor, end_s: hi, label: SegmentLabel::Interictal, seizure: None });
    }

    marked.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut out = Vec::with_capacity(2 * marked.len() + 1);
    let mut t = lo;
    for seg in marked {
        if seg.start_s > t {
            out.push(Segment { start_s: t, end_s: seg.start_s, label: SegmentLabel::Excluded, seizure: None });
        }
        t = seg.end_s;
        out.push(seg);
    }
    if hi > t {
        out.push(Segment { start_s: t, end_s: hi, label: SegmentLabel::Excluded, seizure: None });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eligibility {
    pub eligible: bool,
    /// Machine-readable reasons: `min_lead_seizures`, `max_seizures_per_day`, `min_interictal_h`.
    pub reasons: Vec<String>,
}

pub fn check_eligibility(ann_merged: &AnnotationSet, interictal_hours: f64, policy: &LabelPolicy) -> Eligibility {
    let mut reasons = Vec::new();
    if ann_merged.len() < policy.min_lead_seizures {
        reasons.push("min_lead_seizures".to_string());
    }
    let onsets: Vec<f64> = ann_merged.seizures().iter().map(|s| s.onset_s).collect();
    let busiest = onsets
        .iter()
        .enumerate()
        .map(|(i, &t)| onsets[i..].iter().take_while(|&&u| u < t + 86_400.0).count())
        .max()
        .unwrap_or(0);
    if busiest >= policy.max_seizures_per_day {
        reasons.push("max_seizures_per_day".to_string());
    }
    if interictal_hours < policy.min_interictal_h {
        reasons.push("min_interictal_h".to_string());
    }
    Eligibility { eligible: reasons.is_empty(), reasons }
}
