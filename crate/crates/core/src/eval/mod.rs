//! Classification metrics and report emission.

mod metrics;
mod report;

pub use metrics::{
    accuracy, auroc_ovr, binary_auc, confusion_matrix, macro_f1, rmse, MetricsReport,
};
pub use report::{emit_report, render_report, Report, ReportFormat, SeriesRow, SERIES_COLUMNS};
