//! Ultrasound B-mode reconstruction under configurable log-compression
//! thresholds, and the tooling to measure how the reconstruction choice
//! moves a transfer-learning lesion classifier: cropping and resizing,
//! feature extraction, a class-weighted linear SVM with Platt calibration,
//! patient-grouped cross-validation and ROC analysis.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod par;
pub mod phantom;
pub mod prep;
pub mod reconstruct;
pub mod seed;
pub mod svm;

pub use error::{Error, Result};
