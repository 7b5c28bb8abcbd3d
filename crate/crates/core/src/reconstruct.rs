//! B-mode formation: analytic-signal envelope per scan line, log compression
//! against a reference amplitude, and linear mapping of the top
//! `threshold_db` decibels onto `[0, 255]`.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, PixelGeometry, RfFrame};
use crate::error::{Error, Result};
use crate::par;

/// Where the reference amplitude `A_max` is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmaxScope {
    #[default]
    PerFrame,
    PerDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub threshold_db: f64,
    pub a_max_scope: AmaxScope,
    pub a_max_override: Option<f64>,
}

impl CompressionConfig {
    pub fn new(threshold_db: f64) -> Self {
        CompressionConfig {
            threshold_db,
            a_max_scope: AmaxScope::PerFrame,
            a_max_override: None,
        }
    }

    pub fn with_override(self, a_max: f64) -> Self {
        CompressionConfig {
            a_max_override: Some(a_max),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_db.is_finite() && self.threshold_db > 0.0) {
            return Err(Error::Invalid(format!("threshold must be > 0 dB, got {}", self.threshold_db)));
        }
        if let Some(a) = self.a_max_override {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Invalid(format!("A_max override must be > 0, got {a}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage {
    pub pixels: Array2<u8>,
    pub geometry: PixelGeometry,
    pub threshold_db: f64,
    pub lesion_id: Option<String>,
    pub scan_id: String,
}

impl BModeImage {
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        data::write_pgm(&self.pixels, path)
    }
}

/// Envelope of one scan line: `|x + i·H{x}|` via the one-sided spectrum.
pub fn analytic_envelope(line: &[f64]) -> Result<Vec<f64>> {
    if line.len() < 2 {
        return Err(Error::Degenerate(format!("scan line of length {}", line.len())));
    }
    if line.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scan line".into()));
    }
    let plan = EnvelopePlan::new(line.len());
    Ok(plan.envelope(line.iter().copied()))
}

struct EnvelopePlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl EnvelopePlan {
    fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        EnvelopePlan {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    fn envelope(&self, line: impl Iterator<Item = f64>) -> Vec<f64> {
        let n = self.len;
        let mut buf: Vec<Complex<f64>> = line.map(|v| Complex::new(v, 0.0)).collect();
        debug_assert_eq!(buf.len(), n);
        self.forward.process(&mut buf);
        // DC (and Nyquist for even n) keep weight 1, positive bins 2, negative bins 0.
        let positive_end = n.div_ceil(2);
        for v in &mut buf[1..positive_end] {
            *v *= 2.0;
        }
        let negative_start = n / 2 + 1;
        for v in &mut buf[negative_start..] {
            *v = Complex::new(0.0, 0.0);
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        buf.iter().map(|c| c.norm() * scale).collect()
    }
}

/// Envelope of every column (scan line) of a frame.
pub fn envelope_frame(frame: &RfFrame) -> Array2<f64> {
    let (rows, cols) = frame.shape();
    let plan = EnvelopePlan::new(rows);
    let columns = par::map_range(cols, |c| plan.envelope(frame.samples.column(c).iter().map(|&v| f64::from(v))));
    let mut env = Array2::zeros((rows, cols));
    for (c, column) in columns.into_iter().enumerate() {
        for (r, v) in column.into_iter().enumerate() {
            env[[r, c]] = v;
        }
    }
    env
}

/// `20·log10(A / A_max)`; zero amplitude gives `-inf`, which every
/// threshold maps to black.
pub fn log_compress(amplitude: f64, a_max: f64) -> f64 {
    if amplitude <= 0.0 {
        return f64::NEG_INFINITY;
    }
    20.0 * (amplitude / a_max).log10()
}

/// Map `[-threshold_db, 0]` dB linearly onto `[0, 255]`, rounding half away
/// from zero and clamping outside the range.
pub fn quantize(db: f64, threshold_db: f64) -> u8 {
    if !(db > -threshold_db) {
        return 0;
    }
    let level = (255.0 * (1.0 + db / threshold_db)).round();
    level.clamp(0.0, 255.0) as u8
}

pub fn max_amplitude(envelope: &Array2<f64>) -> f64 {
    envelope.iter().copied().fold(0.0, f64::max)
}

pub fn compress_envelope(envelope: &Array2<f64>, a_max: f64, threshold_db: f64) -> Array2<u8> {
    envelope.mapv(|a| quantize(log_compress(a, a_max), threshold_db))
}

/// Resolve the reference amplitude for a frame whose envelope is `envelope`.
pub fn resolve_amax(envelope: &Array2<f64>, config: &CompressionConfig) -> Result<f64> {
    config.validate()?;
    let a_max = match (config.a_max_override, config.a_max_scope) {
        (Some(a), _) => a,
        (None, AmaxScope::PerFrame) => max_amplitude(envelope),
        (None, AmaxScope::PerDataset) => {
            return Err(Error::Invalid(
                "per-dataset A_max scope needs the dataset maximum (see dataset_amax)".into(),
            ))
        }
    };
    if !(a_max > 0.0) {
        return Err(Error::Degenerate("all-zero frame (A_max = 0)".into()));
    }
    Ok(a_max)
}

pub fn reconstruct_bmode(frame: &RfFrame, config: &CompressionConfig) -> Result<BModeImage> {
    let envelope = envelope_frame(frame);
    let a_max = resolve_amax(&envelope, config)?;
    Ok(BModeImage {
        pixels: compress_envelope(&envelope, a_max, config.threshold_db),
        geometry: frame.geometry,
        threshold_db: config.threshold_db,
        lesion_id: None,
        scan_id: frame.scan_id.clone(),
    })
}

/// Largest envelope value over every frame of the dataset.
pub fn dataset_amax(dataset: &Dataset) -> f64 {
    let frames: Vec<&RfFrame> = dataset.lesions.iter().flat_map(|l| l.scans.iter().map(|s| &s.frame)).collect();
    par::map(&frames, |f| max_amplitude(&envelope_frame(f))).into_iter().fold(0.0, f64::max)
}

/// Fill in the `A_max` override when the scope is per-dataset.
pub fn bind_dataset_amax(config: CompressionConfig, dataset: &Dataset) -> Result<CompressionConfig> {
    if config.a_max_scope == AmaxScope::PerDataset && config.a_max_override.is_none() {
        let a_max = dataset_amax(dataset);
        if !(a_max > 0.0) {
            return Err(Error::Degenerate("dataset envelope is identically zero".into()));
        }
        return Ok(config.with_override(a_max));
    }
    Ok(config)
}
