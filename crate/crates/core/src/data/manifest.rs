//! Native dataset format: a UTF-8 JSON manifest next to raw little-endian
//! blobs (`f32` RF samples, `u8` 0/1 masks), row-major, shape in the
//! manifest.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, Label, LesionRecord, PixelGeometry, RfFrame, RoiMask, Scan, DEFAULT_SPEED_OF_SOUND};
use crate::error::{Error, Result};
use crate::par;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub lesions: Vec<ManifestLesion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLesion {
    pub lesion_id: String,
    pub patient_id: String,
    pub label: String,
    pub scans: Vec<ManifestScan>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestScan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_id: Option<String>,
    pub rf: String,
    pub shape: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_shape: Option<[usize; 2]>,
    /// Inclusive `[r0, c0, r1, c1]`; expanded to a rectangular mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_bbox: Option<[usize; 4]>,
    pub geometry: ManifestGeometry,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ManifestGeometry {
    pub sampling_rate_hz: f64,
    #[serde(default = "default_speed")]
    pub speed_of_sound_m_s: f64,
    pub lateral_mm_per_line: f64,
}

fn default_speed() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

impl From<PixelGeometry> for ManifestGeometry {
    fn from(g: PixelGeometry) -> Self {
        ManifestGeometry {
            sampling_rate_hz: g.sampling_rate_hz,
            speed_of_sound_m_s: g.speed_of_sound_m_s,
            lateral_mm_per_line: g.lateral_mm_per_line,
        }
    }
}

pub fn default_scan_id(lesion_id: &str, index: usize) -> String {
    format!("{lesion_id}_s{index}")
}

/// Resolve `path` to the manifest file (a directory means `dir/manifest.json`).
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Load and validate a dataset from its manifest.
pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Dataset> {
    let path = manifest_path(manifest.as_ref());
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let parsed: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut seen = HashSet::new();
    for lesion in &parsed.lesions {
        if !seen.insert(lesion.lesion_id.as_str()) {
            return Err(Error::DuplicateLesion {
                lesion_id: lesion.lesion_id.clone(),
                path,
            });
        }
    }

    let lesions = par::try_map(&parsed.lesions, |l| load_lesion(l, &base, &path))?;
    let dataset = Dataset {
        name: parsed.name,
        lesions,
    };
    let has = |label| dataset.lesions.iter().any(|l| l.label == label);
    if !has(Label::Benign) || !has(Label::Malignant) {
        return Err(Error::SingleClass);
    }
    Ok(dataset)
}

fn load_lesion(entry: &ManifestLesion, base: &Path, manifest: &Path) -> Result<LesionRecord> {
    let lesion_err = |message: String| Error::Lesion {
        lesion_id: entry.lesion_id.clone(),
        path: manifest.to_path_buf(),
        message,
    };
    let label: Label = entry.label.parse().map_err(|label| Error::UnknownLabel {
        lesion_id: entry.lesion_id.clone(),
        path: manifest.to_path_buf(),
        label,
    })?;
    if entry.scans.len() != 2 {
        return Err(lesion_err(format!("expected exactly 2 scans, found {}", entry.scans.len())));
    }
    let mut scans = Vec::with_capacity(2);
    for (index, s) in entry.scans.iter().enumerate() {
        let [rows, cols] = s.shape;
        let rf_path = base.join(&s.rf);
        let bytes = fs::read(&rf_path).map_err(|e| Error::io(&rf_path, e))?;
        if bytes.len() != rows * cols * 4 {
            return Err(Error::Lesion {
                lesion_id: entry.lesion_id.clone(),
                path: rf_path,
                message: format!("RF blob has {} bytes, shape {rows}x{cols} needs {}", bytes.len(), rows * cols * 4),
            });
        }
        let samples: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let samples = Array2::from_shape_vec((rows, cols), samples).expect("length checked");
        let geometry = PixelGeometry::new(s.geometry.sampling_rate_hz, s.geometry.speed_of_sound_m_s, s.geometry.lateral_mm_per_line)
            .map_err(|e| lesion_err(e.to_string()))?;
        let scan_id = s.scan_id.clone().unwrap_or_else(|| default_scan_id(&entry.lesion_id, index));
        let frame = RfFrame::new(samples, geometry, scan_id).map_err(|e| Error::Lesion {
            lesion_id: entry.lesion_id.clone(),
            path: rf_path.clone(),
            message: e.to_string(),
        })?;

        let mask = match (&s.mask, s.mask_bbox) {
            (Some(rel), None) => {
                let mask_path = base.join(rel);
                if let Some(declared) = s.mask_shape {
                    if declared != s.shape {
                        return Err(Error::ShapeMismatch {
                            lesion_id: entry.lesion_id.clone(),
                            path: mask_path,
                            frame: (rows, cols),
                            mask: (declared[0], declared[1]),
                        });
                    }
                }
                let bytes = fs::read(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
                if bytes.len() != rows * cols {
                    return Err(Error::Lesion {
                        lesion_id: entry.lesion_id.clone(),
                        path: mask_path,
                        message: format!("mask blob has {} bytes, frame shape {rows}x{cols} needs {}", bytes.len(), rows * cols),
                    });
                }
                if let Some(bad) = bytes.iter().find(|&&b| b > 1) {
                    return Err(Error::Lesion {
                        lesion_id: entry.lesion_id.clone(),
                        path: mask_path,
                        message: format!("mask byte {bad} is not 0 or 1"),
                    });
                }
                RoiMask::new(Array2::from_shape_vec((rows, cols), bytes.into_iter().map(|b| b == 1).collect()).expect("length checked"))
            }
            (None, Some(bbox)) => RoiMask::from_bbox((rows, cols), bbox).map_err(|e| lesion_err(e.to_string()))?,
            _ => return Err(lesion_err(format!("scan {index}: exactly one of `mask` or `mask_bbox` is required"))),
        };
        mask.validate_for((rows, cols)).map_err(|e| lesion_err(format!("scan {index}: {e}")))?;
        scans.push(Scan { frame, mask });
    }
    let scans: [Scan; 2] = scans.try_into().expect("two scans checked");
    Ok(LesionRecord {
        lesion_id: entry.lesion_id.clone(),
        patient_id: entry.patient_id.clone(),
        label,
        scans,
    })
}

fn blob_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Write `dataset` under `dir` as `manifest.json` plus `rf/` and `mask/` blobs.
/// Output bytes depend only on the dataset.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["rf", "mask"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut lesions = Vec::with_capacity(dataset.lesions.len());
    for lesion in &dataset.lesions {
        let mut scans = Vec::with_capacity(2);
        for (index, scan) in lesion.scans.iter().enumerate() {
            let stem = format!("{}_s{index}", blob_name(&lesion.lesion_id));
            let rf_rel = format!("rf/{stem}.f32");
            let mask_rel = format!("mask/{stem}.u8");
            let rf_bytes: Vec<u8> = scan.frame.samples.iter().flat_map(|v| v.to_le_bytes()).collect();
            let mask_bytes: Vec<u8> = scan.mask.mask.iter().map(|&b| u8::from(b)).collect();
            write_file(&dir.join(&rf_rel), &rf_bytes)?;
            write_file(&dir.join(&mask_rel), &mask_bytes)?;
            let (rows, cols) = scan.frame.shape();
            let default_id = default_scan_id(&lesion.lesion_id, index);
            scans.push(ManifestScan {
                scan_id: (scan.frame.scan_id != default_id).then(|| scan.frame.scan_id.clone()),
                rf: rf_rel,
                shape: [rows, cols],
                mask: Some(mask_rel),
                mask_shape: Some([rows, cols]),
                mask_bbox: None,
                geometry: scan.frame.geometry.into(),
            });
        }
        lesions.push(ManifestLesion {
            lesion_id: lesion.lesion_id.clone(),
            patient_id: lesion.patient_id.clone(),
            label: lesion.label.to_string(),
            scans,
        });
    }
    let manifest = Manifest {
        name: dataset.name.clone(),
        lesions,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
