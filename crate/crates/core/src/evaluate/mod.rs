//! Cross-validated evaluation: folds, ROC analysis, agreement statistics,
//! the reconstruction grid and its report.

pub mod bland_altman;
pub mod experiment;
pub mod folds;
pub mod report;
pub mod roc;

pub use bland_altman::{bland_altman, BlandAltman};
pub use experiment::{
    aggregate_lesion_probability, build_feature_table, evaluate_table, load_or_build_features, run_experiment, CellId, CellResult,
    EvalReport, ExperimentGrid, SetSpec,
};
pub use folds::{assign_folds, make_folds, FoldAssignment, LesionRef};
pub use report::emit_report;
pub use roc::{auc, operating_point, roc_area, roc_curve, OperatingPoint, RocCurve, RocPoint};
