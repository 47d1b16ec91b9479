//! Detection metrics, ROC analysis, robustness sweeps, the test-card artifact
//! report and the versioned evaluation report.

mod artifacts;
mod metrics;
mod report;
mod robustness;
mod roc;

pub use artifacts::{artifact_report, ArtifactRow, ColorStats};
pub use metrics::{f1_score, metrics, ConfusionCounts, Metrics};
pub use report::{
    compare_reports, fmt_float, separability, DiffEntry, EvalReport, ReportConfig, SeparabilityRow, Tolerances,
    REPORT_FORMAT,
};
pub use robustness::{robustness_sweep, RobustnessCell, RobustnessGrid, RobustnessRow, Transform};
pub use roc::{roc_auc, tpr_at_fpr, RocCurve, RocPoint};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Validation(String),
    #[error("report format error: {0}")]
    Format(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
