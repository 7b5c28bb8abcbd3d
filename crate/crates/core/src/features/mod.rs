//! Feature extraction: a portable-model (ONNX) adapter for CNN taps and a
//! built-in baseline descriptor, plus an on-disk cache of extracted rows.

pub mod baseline;
pub mod cache;
pub mod portable;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prep::{NetworkInput, NetworkPreprocessSpec};

pub use baseline::{baseline_extract, BASELINE_DIM, BASELINE_ID};
pub use cache::{FeatureTable, VariantKey};
pub use portable::{ExportManifest, PortableModel};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub extractor_id: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, extractor_id: impl Into<String>) -> Self {
        FeatureVector {
            values,
            extractor_id: extractor_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    PortableModel,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub extractor_id: String,
    pub kind: ExtractorKind,
    pub model_path: Option<PathBuf>,
    pub expected_dim: usize,
}

impl ExtractorSpec {
    pub fn baseline() -> Self {
        ExtractorSpec {
            extractor_id: BASELINE_ID.into(),
            kind: ExtractorKind::Baseline,
            model_path: None,
            expected_dim: BASELINE_DIM,
        }
    }

    /// Spec for an exported model directory (or its `manifest.json`).
    pub fn from_export(path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = portable::export_manifest_path(path.as_ref());
        let manifest = ExportManifest::load(&manifest_path)?;
        Ok(ExtractorSpec {
            extractor_id: manifest.extractor_id.clone(),
            kind: ExtractorKind::PortableModel,
            model_path: Some(manifest_path),
            expected_dim: manifest.expected_dim,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ExtractorKind::PortableModel && self.model_path.is_none() {
            return Err(Error::Invalid(format!("extractor {}: portable_model requires model_path", self.extractor_id)));
        }
        if self.expected_dim == 0 {
            return Err(Error::Invalid(format!("extractor {}: expected_dim must be > 0", self.extractor_id)));
        }
        Ok(())
    }
}

/// A ready-to-run extractor.
pub enum Extractor {
    Baseline { spec: ExtractorSpec, preprocess: NetworkPreprocessSpec },
    Portable(Box<PortableModel>),
}

impl Extractor {
    pub fn load(spec: &ExtractorSpec) -> Result<Self> {
        spec.validate()?;
        match spec.kind {
            ExtractorKind::Baseline => Ok(Extractor::Baseline {
                spec: spec.clone(),
                preprocess: NetworkPreprocessSpec::baseline(),
            }),
            ExtractorKind::PortableModel => {
                let path = spec.model_path.as_ref().expect("validated");
                let model = PortableModel::load(path)?;
                if model.manifest.expected_dim != spec.expected_dim {
                    return Err(Error::DimensionMismatch {
                        expected: spec.expected_dim,
                        found: model.manifest.expected_dim,
                    });
                }
                Ok(Extractor::Portable(Box::new(model)))
            }
        }
    }

    pub fn extractor_id(&self) -> &str {
        match self {
            Extractor::Baseline { spec, .. } => &spec.extractor_id,
            Extractor::Portable(m) => &m.manifest.extractor_id,
        }
    }

    pub fn expected_dim(&self) -> usize {
        match self {
            Extractor::Baseline { spec, .. } => spec.expected_dim,
            Extractor::Portable(m) => m.manifest.expected_dim,
        }
    }

    /// Preprocessing the extractor's inputs must go through.
    pub fn preprocess(&self) -> &NetworkPreprocessSpec {
        match self {
            Extractor::Baseline { preprocess, .. } => preprocess,
            Extractor::Portable(m) => &m.preprocess,
        }
    }

    pub fn extract(&self, input: &NetworkInput) -> Result<FeatureVector> {
        let fv = match self {
            Extractor::Baseline { spec, .. } => {
                let mut fv = baseline_extract(input)?;
                fv.extractor_id = spec.extractor_id.clone();
                fv
            }
            Extractor::Portable(m) => m.infer(input)?,
        };
        if fv.dim() != self.expected_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.expected_dim(),
                found: fv.dim(),
            });
        }
        if fv.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} output", fv.extractor_id)));
        }
        Ok(fv)
    }
}

/// One-shot extraction. Loads the model on every call; use [`Extractor`]
/// for batches.
pub fn extract_features(input: &NetworkInput, spec: &ExtractorSpec) -> Result<FeatureVector> {
    Extractor::load(spec)?.extract(input)
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
