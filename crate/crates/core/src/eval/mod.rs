//! Labeling policy, cross-validation plans, ROC/AUC, alarm simulation and reports.

mod alarms;
mod cv;
mod labels;
mod report;
mod roc;

pub use alarms::{simulate_alarms, AlarmEvent, AlarmOutcome, AlarmSummary};
pub use cv::{make_cv_plan, CvPlan, Fold};
pub use labels::{
    check_eligibility, label_intervals, merge_leading_seizures, Eligibility, LabelPolicy, Segment,
    SegmentLabel,
};
pub use report::{aggregate, format_auc_table, mean_sd, EvalReport};
pub use roc::{roc_auc, trapezoid_area, Roc};
