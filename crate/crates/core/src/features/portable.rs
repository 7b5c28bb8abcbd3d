//! Adapter for models exported in the ONNX exchange format. An export
//! directory holds `manifest.json`, the model file and
//! `reference_features.f32`, the tap output for an all-128 gray image.

use std::path::{Path, PathBuf};
#[cfg(feature = "onnx")]
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::prep::{self, NetworkInput, NetworkPreprocessSpec};

pub const EXPORT_MANIFEST: &str = "manifest.json";
pub const REFERENCE_FEATURES: &str = "reference_features.f32";
pub const VALIDATION_GRAY: f64 = 128.0;
/// Maximum absolute deviation tolerated against the exporter's reference output.
pub const REFERENCE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub extractor_id: String,
    pub source_network: String,
    pub tap: String,
    pub input_size: usize,
    /// Name of the preprocess spec (`<dir>/<name>.json` or a built-in).
    pub preprocess: String,
    pub expected_dim: usize,
    pub weights_checksum: String,
    #[serde(default = "default_model_file")]
    pub model_file: String,
}

fn default_model_file() -> String {
    "model.onnx".into()
}

pub(crate) fn export_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(EXPORT_MANIFEST)
    } else {
        path.to_path_buf()
    }
}

impl ExportManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = export_manifest_path(path.as_ref());
        let bytes = super::read_bytes(&path)?;
        let manifest: ExportManifest = serde_json::from_slice(&bytes).map_err(|e| Error::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if manifest.expected_dim == 0 || manifest.input_size == 0 {
            return Err(Error::Manifest {
                path,
                message: "input_size and expected_dim must be > 0".into(),
            });
        }
        Ok(manifest)
    }

    /// Resolve the preprocess spec and check it agrees with the export.
    pub fn preprocess_spec(&self, dir: &Path) -> Result<NetworkPreprocessSpec> {
        let local = dir.join(format!("{}.json", self.preprocess));
        let spec = if local.is_file() {
            NetworkPreprocessSpec::load(&local)?
        } else {
            NetworkPreprocessSpec::builtin(&self.preprocess)?
        };
        if spec.input_size != self.input_size {
            return Err(Error::Invalid(format!(
                "export {} declares input_size {} but preprocess spec {} uses {}",
                self.extractor_id, self.input_size, spec.name, spec.input_size
            )));
        }
        Ok(spec)
    }
}

pub struct PortableModel {
    pub manifest: ExportManifest,
    pub preprocess: NetworkPreprocessSpec,
    pub dir: PathBuf,
    #[cfg(feature = "onnx")]
    plan: Mutex<Arc<tract_onnx::prelude::TypedRunnableModel>>,
}

impl std::fmt::Debug for PortableModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PortableModel")
            .field("manifest", &self.manifest)
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

impl PortableModel {
    /// Load from an export directory or its manifest path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = export_manifest_path(path.as_ref());
        let manifest = ExportManifest::load(&manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let preprocess = manifest.preprocess_spec(&dir)?;
        let model_path = dir.join(&manifest.model_file);
        if !model_path.is_file() {
            return Err(Error::io(&model_path, std::io::Error::new(std::io::ErrorKind::NotFound, "model file missing")));
        }
        #[cfg(feature = "onnx")]
        {
            let plan = runtime::load_plan(&model_path, manifest.input_size)?;
            Ok(PortableModel {
                manifest,
                preprocess,
                dir,
                plan: Mutex::new(plan),
            })
        }
        #[cfg(not(feature = "onnx"))]
        {
            let _ = (manifest, preprocess, dir);
            Err(Error::Model("this build has no ONNX runtime (enable the `onnx` feature)".into()))
        }
    }

    pub fn infer(&self, input: &NetworkInput) -> Result<FeatureVector> {
        if input.size != self.manifest.input_size || input.data.len() != 3 * input.size * input.size {
            return Err(Error::Invalid(format!(
                "model {} expects 3x{}x{} input",
                self.manifest.extractor_id, self.manifest.input_size, self.manifest.input_size
            )));
        }
        #[cfg(feature = "onnx")]
        {
            // one inference at a time per session
            let plan = self.plan.lock().map_err(|_| Error::Model("inference session poisoned".into()))?;
            let values = runtime::run(&plan, input)?;
            if values.len() != self.manifest.expected_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.manifest.expected_dim,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{} output", self.manifest.extractor_id)));
            }
            Ok(FeatureVector::new(values, self.manifest.extractor_id.clone()))
        }
        #[cfg(not(feature = "onnx"))]
        {
            Err(Error::Model("this build has no ONNX runtime".into()))
        }
    }

    /// Gray validation image in network input form.
    pub fn validation_input(&self) -> Result<NetworkInput> {
        let size = self.manifest.input_size;
        prep::to_network_input(&Array2::from_elem((size, size), VALIDATION_GRAY), &self.preprocess)
    }

    pub fn reference_features(&self) -> Result<Vec<f32>> {
        let path = self.dir.join(REFERENCE_FEATURES);
        let bytes = super::read_bytes(&path)?;
        if bytes.len() != 4 * self.manifest.expected_dim {
            return Err(Error::DimensionMismatch {
                expected: self.manifest.expected_dim,
                found: bytes.len() / 4,
            });
        }
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }

    /// Max absolute deviation of our inference on the validation image from
    /// the exporter's reference output.
    pub fn reference_deviation(&self) -> Result<f64> {
        let got = self.infer(&self.validation_input()?)?;
        let want = self.reference_features()?;
        Ok(got.values.iter().zip(&want).map(|(g, &w)| (g - f64::from(w)).abs()).fold(0.0, f64::max))
    }
}

#[cfg(feature = "onnx")]
mod runtime {
    use std::path::Path;
    use std::sync::Arc;

    use tract_onnx::prelude::*;

    use crate::error::{Error, Result};
    use crate::prep::NetworkInput;

    fn model_err(e: impl std::fmt::Display) -> Error {
        Error::Model(e.to_string())
    }

    pub fn load_plan(path: &Path, size: usize) -> Result<Arc<TypedRunnableModel>> {
        tract_onnx::onnx()
            .model_for_path(path)
            .and_then(|m| m.with_input_fact(0, InferenceFact::dt_shape(f32::datum_type(), tvec!(1, 3, size, size))))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| Error::Model(format!("{}: {e:#}", path.display())))
    }

    pub fn run(plan: &Arc<TypedRunnableModel>, input: &NetworkInput) -> Result<Vec<f64>> {
        let data: Vec<f32> = input.data.iter().map(|&v| v as f32).collect();
        let tensor: Tensor = tract_ndarray::Array4::from_shape_vec((1, 3, input.size, input.size), data)
            .map_err(model_err)?
            .into();
        let outputs = plan.run(tvec!(tensor.into())).map_err(model_err)?;
        let first = outputs.first().ok_or_else(|| Error::Model("model produced no output".into()))?;
        let view = first.to_plain_array_view::<f32>().map_err(model_err)?;
        Ok(view.iter().map(|&v| f64::from(v)).collect())
    }
}
