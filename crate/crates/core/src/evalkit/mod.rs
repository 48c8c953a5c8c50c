//! Measurement: the bias linear fit, stereotype / gender gap metrics and
//! the per-direction variance report of an erasure.

mod bias_fit;
mod delta;
mod report;

pub use bias_fit::{fit_bias_model, BiasFit, ProfessionRecord};
pub use delta::{delta_metrics, Alignment, DeltaMetrics, Group, MetricMode, OutcomeRecord};
pub use report::{variance_report, ReportRow, VarianceReport};
