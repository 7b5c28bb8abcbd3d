//! Dataset model and I/O: the native JSON manifest with raw binary blobs,
//! a read-only MAT-file v5 subset, and binary PGM output.

pub mod manifest;
pub mod mat5;
pub mod pgm;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{load_dataset, write_dataset};
pub use mat5::{parse_mat5, MatArray, MatFile};
pub use pgm::{encode_pgm, write_pgm};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 1540.0;
pub const MIN_FRAME_DIM: usize = 64;

/// Physical pixel spacing of an RF frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelGeometry {
    pub axial_mm_per_sample: f64,
    pub lateral_mm_per_line: f64,
    pub sampling_rate_hz: f64,
    pub speed_of_sound_m_s: f64,
}

impl PixelGeometry {
    /// Axial spacing follows from the two-way travel time of one sample.
    pub fn new(sampling_rate_hz: f64, speed_of_sound_m_s: f64, lateral_mm_per_line: f64) -> Result<Self> {
        for (name, v) in [
            ("sampling_rate_hz", sampling_rate_hz),
            ("speed_of_sound_m_s", speed_of_sound_m_s),
            ("lateral_mm_per_line", lateral_mm_per_line),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(PixelGeometry {
            axial_mm_per_sample: speed_of_sound_m_s / (2.0 * sampling_rate_hz) * 1000.0,
            lateral_mm_per_line,
            sampling_rate_hz,
            speed_of_sound_m_s,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let expected = PixelGeometry::new(self.sampling_rate_hz, self.speed_of_sound_m_s, self.lateral_mm_per_line)?;
        let rel = ((self.axial_mm_per_sample - expected.axial_mm_per_sample) / expected.axial_mm_per_sample).abs();
        if !(rel <= 1e-9) {
            return Err(Error::Invalid(format!(
                "axial spacing {} inconsistent with c/(2 fs) = {}",
                self.axial_mm_per_sample, expected.axial_mm_per_sample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malignant,
}

impl Label {
    pub fn is_malignant(self) -> bool {
        self == Label::Malignant
    }

    /// 1 for malignant, 0 for benign.
    pub fn as_binary(self) -> u8 {
        u8::from(self.is_malignant())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            other => Err(other.to_string()),
        }
    }
}

/// Raw RF samples: rows are axial samples, columns are scan lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    pub samples: Array2<f32>,
    pub geometry: PixelGeometry,
    pub scan_id: String,
}

impl RfFrame {
    pub fn new(samples: Array2<f32>, geometry: PixelGeometry, scan_id: impl Into<String>) -> Result<Self> {
        let frame = RfFrame {
            samples,
            geometry,
            scan_id: scan_id.into(),
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.samples.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.shape();
        if rows < MIN_FRAME_DIM || cols < MIN_FRAME_DIM {
            return Err(Error::Invalid(format!(
                "frame {} is {rows}x{cols}; at least {MIN_FRAME_DIM}x{MIN_FRAME_DIM} required",
                self.scan_id
            )));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("frame {}", self.scan_id)));
        }
        self.geometry.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    pub mask: Array2<bool>,
}

impl RoiMask {
    pub fn new(mask: Array2<bool>) -> Self {
        RoiMask { mask }
    }

    /// Full rectangular mask covering rows `r0..=r1`, columns `c0..=c1`.
    pub fn from_bbox(shape: (usize, usize), [r0, c0, r1, c1]: [usize; 4]) -> Result<Self> {
        if r0 > r1 || c0 > c1 || r1 >= shape.0 || c1 >= shape.1 {
            return Err(Error::Invalid(format!(
                "bounding box {:?} does not fit a {}x{} frame",
                [r0, c0, r1, c1],
                shape.0,
                shape.1
            )));
        }
        let mask = Array2::from_shape_fn(shape, |(r, c)| (r0..=r1).contains(&r) && (c0..=c1).contains(&c));
        Ok(RoiMask { mask })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.dim()
    }

    /// Inclusive `(r0, c0, r1, c1)` bounding box of the true region.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for ((r, c), &on) in self.mask.indexed_iter() {
            if on {
                bbox = Some(match bbox {
                    None => (r, c, r, c),
                    Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                });
            }
        }
        bbox
    }

    /// Number of 4-connected components of the true region.
    pub fn component_count(&self) -> usize {
        let (rows, cols) = self.shape();
        let mut seen = Array2::from_elem((rows, cols), false);
        let mut count = 0;
        let mut queue = VecDeque::new();
        for ((r, c), &on) in self.mask.indexed_iter() {
            if !on || seen[[r, c]] {
                continue;
            }
            count += 1;
            seen[[r, c]] = true;
            queue.push_back((r, c));
            while let Some((r, c)) = queue.pop_front() {
                let neighbours = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                for (nr, nc) in neighbours {
                    if nr < rows && nc < cols && self.mask[[nr, nc]] && !seen[[nr, nc]] {
                        seen[[nr, nc]] = true;
                        queue.push_back((nr, nc));
                    }
                }
            }
        }
        count
    }

    pub fn validate_for(&self, frame_shape: (usize, usize)) -> Result<()> {
        if self.shape() != frame_shape {
            return Err(Error::Invalid(format!(
                "mask shape {:?} differs from frame shape {:?}",
                self.shape(),
                frame_shape
            )));
        }
        match self.component_count() {
            0 => Err(Error::Degenerate("empty ROI mask".into())),
            1 => Ok(()),
            n => Err(Error::Invalid(format!("ROI mask has {n} disconnected regions"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub frame: RfFrame,
    pub mask: RoiMask,
}

/// One lesion with its two orthogonal scans.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionRecord {
    pub lesion_id: String,
    pub patient_id: String,
    pub label: Label,
    pub scans: [Scan; 2],
}

impl LesionRecord {
    pub fn validate(&self) -> Result<()> {
        for scan in &self.scans {
            scan.frame.validate()?;
            scan.mask.validate_for(scan.frame.shape())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub lesions: Vec<LesionRecord>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, lesions: Vec<LesionRecord>) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            lesions,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for lesion in &self.lesions {
            if !ids.insert(lesion.lesion_id.as_str()) {
                return Err(Error::Invalid(format!("duplicate lesion id {}", lesion.lesion_id)));
            }
            lesion.validate().map_err(|e| Error::Invalid(format!("lesion {}: {e}", lesion.lesion_id)))?;
        }
        let has = |label| self.lesions.iter().any(|l| l.label == label);
        if !has(Label::Benign) || !has(Label::Malignant) {
            return Err(Error::SingleClass);
        }
        Ok(())
    }

    pub fn lesion(&self, lesion_id: &str) -> Option<&LesionRecord> {
        self.lesions.iter().find(|l| l.lesion_id == lesion_id)
    }

    /// Per patient: (malignant lesion count, benign lesion count).
    pub fn patient_class_counts(&self) -> BTreeMap<&str, (usize, usize)> {
        let mut out: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for l in &self.lesions {
            let entry = out.entry(l.patient_id.as_str()).or_default();
            match l.label {
                Label::Malignant => entry.0 += 1,
                Label::Benign => entry.1 += 1,
            }
        }
        out
    }
}
