//! Window placement inside labeled segments, and stride-based balancing.

use serde::{Deserialize, Serialize};

use super::{window_to_spectrogram, Spectrogram, StftConfig, WindowLabel, WINDOW_S};
use crate::error::{Error, Result};
use crate::eval::{label_intervals, merge_leading_seizures, LabelPolicy, Segment, SegmentLabel};
use crate::signal_io::{AnnotationSet, Recording};

/// Where a window starts (patient clock) and what it is labeled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub start_s: f64,
    pub label: WindowLabel,
    /// Seizure index of a preictal window.
    pub seizure: Option<usize>,
}

fn window_label(l: SegmentLabel) -> Option<WindowLabel> {
    match l {
        SegmentLabel::Preictal => Some(WindowLabel::Preictal),
        SegmentLabel::Interictal => Some(WindowLabel::Interictal),
        SegmentLabel::Excluded => None,
    }
}

/// Consecutive 28 s windows at `stride_s` inside every preictal or interictal
/// segment, anchored at the segment start. Windows never cross a segment end.
pub fn plan_windows(segments: &[Segment], stride_s: f64) -> Result<Vec<WindowPlan>> {
    if !(stride_s > 0.0 && stride_s.is_finite()) {
        return Err(Error::Argument(format!("stride {stride_s} s must be positive")));
    }
    let mut out = Vec::new();
    for seg in segments {
        let Some(label) = window_label(seg.label) else { continue };
        let mut k = 0usize;
        loop {
            let start = seg.start_s + k as f64 * stride_s;
            if start + WINDOW_S > seg.end_s + 1e-9 {
                break;
            }
            out.push(WindowPlan { start_s: start, label, seizure: seg.seizure });
            k += 1;
        }
    }
    out.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(out)
}

/// Labels `rec` with `policy` against the (patient clock) annotations and
/// returns the spectrograms of every labeled window at `stride_s`.
pub fn extract_windows(
    rec: &Recording,
    ann: &AnnotationSet,
    policy: &LabelPolicy,
    stride_s: f64,
    cfg: &StftConfig,
) -> Result<Vec<Spectrogram>> {
    let merged = merge_leading_seizures(ann, policy.lead_merge_min);
    let segments = label_intervals((rec.start_time, rec.end_time()), &merged, policy);
    plan_windows(&segments, stride_s)?
        .into_iter()
        .map(|w| {
            let mut s = window_to_spectrogram(rec, w.start_s, cfg)?;
            s.label = w.label;
            Ok(s)
        })
        .collect()
}

/// Intersection of `segments` with the union of the disjoint intervals `keep`.
pub fn clip_segments(segments: &[Segment], keep: &[(f64, f64)]) -> Vec<Segment> {
    let mut out = Vec::new();
    for seg in segments {
        for &(a, b) in keep {
            let (s, e) = (seg.start_s.max(a), seg.end_s.min(b));
            if e > s {
                out.push(Segment { start_s: s, end_s: e, ..*seg });
            }
        }
    }
    out.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Balanced {
    pub windows: Vec<WindowPlan>,
    pub preictal_stride_s: f64,
    pub interictal_stride_s: f64,
}

/// Re-windows the minority class at `base_stride_s / k` where
/// `k = round(target_ratio * n_majority / n_minority)`, then divides both
/// strides by `factor`. `target_ratio` is the desired minority:majority count.
pub fn balance_and_oversample(
    segments: &[Segment],
    base_stride_s: f64,
    target_ratio: f64,
    factor: usize,
    sample_rate: u32,
) -> Result<Balanced> {
    if factor == 0 {
        return Err(Error::Argument("oversampling factor must be at least 1".into()));
    }
    if !(target_ratio > 0.0 && target_ratio.is_finite()) {
        return Err(Error::Argument(format!("target ratio {target_ratio} must be positive")));
    }
    let base = plan_windows(segments, base_stride_s)?;
    let n_pre = base.iter().filter(|w| w.label == WindowLabel::Preictal).count();
    let n_int = base.iter().filter(|w| w.label == WindowLabel::Interictal).count();
    let mut pre_stride = base_stride_s / factor as f64;
    let mut int_stride = pre_stride;
    if n_pre > 0 && n_int > 0 {
        if n_pre < n_int {
            let k = (target_ratio * n_int as f64 / n_pre as f64).round().max(1.0);
            pre_stride /= k;
        } else {
            let k = (target_ratio * n_pre as f64 / n_int as f64).round().max(1.0);
            int_stride /= k;
        }
    }
    let min_stride = 1.0 / sample_rate as f64;
    if pre_stride < min_stride || int_stride < min_stride {
        return Err(Error::Argument(format!(
            "oversampling needs a stride of {} s, below one sample",
            pre_stride.min(int_stride)
        )));
    }
    let only = |label: SegmentLabel| -> Vec<Segment> {
        segments.iter().filter(|s| s.label == label).copied().collect()
    };
    let mut windows = plan_windows(&only(SegmentLabel::Preictal), pre_stride)?;
    windows.extend(plan_windows(&only(SegmentLabel::Interictal), int_stride)?);
    windows.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(Balanced { windows, preictal_stride_s: pre_stride, interictal_stride_s: int_stride })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: f64, b: f64, label: SegmentLabel) -> Segment {
        Segment { start_s: a, end_s: b, label, seizure: None }
    }

    fn count(w: &[WindowPlan], l: WindowLabel) -> usize {
        w.iter().filter(|x| x.label == l).count()
    }

    #[test]
    fn one_hour_window_counts() {
        let hour = [seg(0.0, 3600.0, SegmentLabel::Interictal)];
        assert_eq!(plan_windows(&hour, 28.0).unwrap().len(), 128);
        assert_eq!(plan_windows(&hour, 14.0).unwrap().len(), 256);
        assert!(plan_windows(&[seg(0.0, 27.9, SegmentLabel::Interictal)], 28.0).unwrap().is_empty());
        assert!(plan_windows(&[seg(0.0, 100.0, SegmentLabel::Excluded)], 28.0).unwrap().is_empty());
        assert!(plan_windows(&hour, 0.0).is_err());
    }

    #[test]
    fn minority_rewindowed_at_reduced_stride() {
        // 100 preictal and 1000 interictal windows at stride 28 s.
        let segs = [
            seg(0.0, 99.0 * 28.0 + 28.0, SegmentLabel::Preictal),
            seg(10_000.0, 10_000.0 + 999.0 * 28.0 + 28.0, SegmentLabel::Interictal),
        ];
        let base = plan_windows(&segs, 28.0).unwrap();
        assert_eq!((count(&base, WindowLabel::Preictal), count(&base, WindowLabel::Interictal)), (100, 1000));
        let b = balance_and_oversample(&segs, 28.0, 1.0, 1, 256).unwrap();
        assert_eq!(b.preictal_stride_s, 2.8);
        assert_eq!(b.interictal_stride_s, 28.0);
        let n_pre = count(&b.windows, WindowLabel::Preictal) as f64;
        assert!((n_pre / 1000.0 - 1.0).abs() < 0.02, "{n_pre}");
    }

    #[test]
    fn balanced_factor_one_is_identity() {
        let segs = [seg(0.0, 1000.0, SegmentLabel::Preictal), seg(5000.0, 6000.0, SegmentLabel::Interictal)];
        let b = balance_and_oversample(&segs, 28.0, 1.0, 1, 256).unwrap();
        assert_eq!(b.windows, plan_windows(&segs, 28.0).unwrap());
    }

    #[test]
    fn factor_ten_multiplies_count() {
        let segs = [seg(0.0, 3600.0, SegmentLabel::Preictal), seg(5000.0, 8600.0, SegmentLabel::Interictal)];
        let base = plan_windows(&segs, 28.0).unwrap().len() as f64;
        let b = balance_and_oversample(&segs, 28.0, 1.0, 10, 256).unwrap();
        let ratio = b.windows.len() as f64 / (10.0 * base);
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
        assert!(balance_and_oversample(&segs, 28.0, 1.0, 10_000, 256).is_err());
        assert!(balance_and_oversample(&segs, 28.0, 1.0, 0, 256).is_err());
    }

    #[test]
    fn clipping_to_parts() {
        let segs = [seg(0.0, 100.0, SegmentLabel::Interictal), seg(200.0, 300.0, SegmentLabel::Interictal)];
        let c = clip_segments(&segs, &[(50.0, 250.0)]);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].start_s, c[0].end_s), (50.0, 100.0));
        assert_eq!((c[1].start_s, c[1].end_s), (200.0, 250.0));
    }
}
