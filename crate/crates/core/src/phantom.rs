//! Synthetic RF lesion phantoms.
//!
//! Point scatterers on the pixel grid are convolved along each line with a
//! Gaussian-modulated cosine pulse. The lesion is an ellipse whose radius is
//! perturbed by low-order sinusoids; scatterers inside it are attenuated by
//! the lesion contrast. The stored mask is the unperturbed ellipse.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    Dataset, Label, LesionRecord, PixelGeometry, RfFrame, RoiMask, Scan, DEFAULT_SPEED_OF_SOUND, MIN_FRAME_DIM,
};
use crate::error::{Error, Result};
use crate::{par, seed};

pub const BENIGN_IRREGULARITY: f64 = 0.05;
pub const MALIGNANT_IRREGULARITY: f64 = 0.35;
/// Harmonics `k = 2..=5` of the boundary perturbation.
const HARMONICS: [f64; 4] = [2.0, 3.0, 4.0, 5.0];
/// Pulse truncation in units of its temporal σ.
const PULSE_HALF_WIDTH_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub rows: usize,
    pub cols: usize,
    pub sampling_rate_hz: f64,
    pub center_frequency_hz: f64,
    /// −6 dB bandwidth as a fraction of the centre frequency.
    pub pulse_bandwidth_fraction: f64,
    /// Probability that a pixel holds a scatterer.
    pub scatterer_density: f64,
    pub lesion_contrast_db: f64,
    /// Extra contrast applied to malignant lesions.
    pub malignant_contrast_offset_db: f64,
    /// Half-width of the uniform per-lesion contrast jitter.
    pub contrast_jitter_db: f64,
    /// `None` selects the class default.
    pub boundary_irregularity: Option<f64>,
    pub speed_of_sound_m_s: f64,
    pub lateral_mm_per_line: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            rows: 1024,
            cols: 256,
            sampling_rate_hz: 40e6,
            center_frequency_hz: 7e6,
            pulse_bandwidth_fraction: 0.6,
            scatterer_density: 0.15,
            lesion_contrast_db: -12.0,
            malignant_contrast_offset_db: -3.0,
            contrast_jitter_db: 2.0,
            boundary_irregularity: None,
            speed_of_sound_m_s: DEFAULT_SPEED_OF_SOUND,
            lateral_mm_per_line: 0.1,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < MIN_FRAME_DIM || self.cols < MIN_FRAME_DIM {
            return Err(Error::Invalid(format!(
                "phantom frame must be at least {MIN_FRAME_DIM}x{MIN_FRAME_DIM}, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.scatterer_density > 0.0 && self.scatterer_density <= 1.0) {
            return Err(Error::Invalid(format!("scatterer density must be in (0, 1], got {}", self.scatterer_density)));
        }
        for (name, v) in [
            ("lesion contrast", self.lesion_contrast_db),
            ("malignant contrast offset", self.malignant_contrast_offset_db),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        if !(self.contrast_jitter_db.is_finite() && self.contrast_jitter_db >= 0.0) {
            return Err(Error::Invalid("contrast jitter must be >= 0".into()));
        }
        if let Some(irr) = self.boundary_irregularity {
            if !(irr.is_finite() && irr >= 0.0) {
                return Err(Error::Invalid(format!("boundary irregularity must be >= 0, got {irr}")));
            }
        }
        if !(self.center_frequency_hz > 0.0 && self.pulse_bandwidth_fraction > 0.0) {
            return Err(Error::Invalid("pulse frequency and bandwidth must be > 0".into()));
        }
        if self.center_frequency_hz >= self.sampling_rate_hz / 2.0 {
            return Err(Error::Invalid("centre frequency must be below Nyquist".into()));
        }
        self.geometry().map(|_| ())
    }

    pub fn geometry(&self) -> Result<PixelGeometry> {
        PixelGeometry::new(self.sampling_rate_hz, self.speed_of_sound_m_s, self.lateral_mm_per_line)
    }

    pub fn irregularity_for(&self, label: Label) -> f64 {
        self.boundary_irregularity.unwrap_or(match label {
            Label::Benign => BENIGN_IRREGULARITY,
            Label::Malignant => MALIGNANT_IRREGULARITY,
        })
    }
}

/// Shape and contrast of one lesion, shared by both of its scans.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionGeometry {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub irregularity: f64,
    pub weights: [f64; 4],
    pub phases: [f64; 4],
    pub contrast_db: f64,
}

impl LesionGeometry {
    pub fn sample(config: &PhantomConfig, label: Label, rng: &mut impl Rng) -> Self {
        let (rows, cols) = (config.rows as f64, config.cols as f64);
        let center = (
            rows * (0.5 + rng.random_range(-0.1..=0.1)),
            cols * (0.5 + rng.random_range(-0.1..=0.1)),
        );
        let semi_axes = (
            rows * rng.random_range(0.25..=0.40) / 2.0,
            cols * rng.random_range(0.25..=0.40) / 2.0,
        );
        let raw: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.1..1.0));
        let total: f64 = raw.iter().sum();
        let weights = raw.map(|w| w / total);
        let phases: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
        let jitter = if config.contrast_jitter_db > 0.0 {
            rng.random_range(-config.contrast_jitter_db..=config.contrast_jitter_db)
        } else {
            0.0
        };
        let offset = if label.is_malignant() { config.malignant_contrast_offset_db } else { 0.0 };
        LesionGeometry {
            center,
            semi_axes,
            irregularity: config.irregularity_for(label),
            weights,
            phases,
            contrast_db: config.lesion_contrast_db + offset + jitter,
        }
    }

    /// Normalised elliptical radius and polar angle of a pixel.
    fn polar(&self, r: usize, c: usize) -> (f64, f64) {
        let y = (r as f64 - self.center.0) / self.semi_axes.0;
        let x = (c as f64 - self.center.1) / self.semi_axes.1;
        (x.hypot(y), y.atan2(x))
    }

    pub fn radius(&self, theta: f64) -> f64 {
        let perturbation: f64 = HARMONICS
            .iter()
            .zip(self.weights.iter().zip(&self.phases))
            .map(|(k, (w, phi))| w * (k * theta + phi).sin())
            .sum();
        1.0 + self.irregularity * perturbation
    }

    /// Region whose scatterers carry the lesion contrast.
    pub fn lesion_region(&self, shape: (usize, usize)) -> Array2<bool> {
        Array2::from_shape_fn(shape, |(r, c)| {
            let (rho, theta) = self.polar(r, c);
            rho <= self.radius(theta)
        })
    }

    /// The unperturbed ellipse.
    pub fn ellipse_mask(&self, shape: (usize, usize)) -> RoiMask {
        RoiMask::new(Array2::from_shape_fn(shape, |(r, c)| self.polar(r, c).0 <= 1.0))
    }
}

/// Gaussian-modulated cosine sampled at the RF rate.
pub fn pulse(config: &PhantomConfig) -> Vec<f64> {
    let sigma_t = 2.0 * (2.0 * 2f64.ln()).sqrt() / (2.0 * PI * config.pulse_bandwidth_fraction * config.center_frequency_hz);
    let sigma_samples = sigma_t * config.sampling_rate_hz;
    let half = (PULSE_HALF_WIDTH_SIGMAS * sigma_samples).ceil() as isize;
    (-half..=half)
        .map(|n| {
            let t = n as f64 / config.sampling_rate_hz;
            (-(t * t) / (2.0 * sigma_t * sigma_t)).exp() * (2.0 * PI * config.center_frequency_hz * t).cos()
        })
        .collect()
}

fn synth_scan(config: &PhantomConfig, lesion: &LesionGeometry, region: &Array2<bool>, scatter_seed: u64, scan_id: String) -> Result<RfFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(scatter_seed);
    let gain = 10f64.powf(lesion.contrast_db / 20.0);
    let (rows, cols) = (config.rows, config.cols);
    let mut field = Array2::<f64>::zeros((rows, cols));
    for ((r, c), v) in field.indexed_iter_mut() {
        if rng.random::<f64>() < config.scatterer_density {
            let a: f64 = rng.sample(StandardNormal);
            *v = if region[(r, c)] { a * gain } else { a };
        }
    }
    let kernel = pulse(config);
    let half = kernel.len() / 2;
    let mut samples = Array2::<f32>::zeros((rows, cols));
    for c in 0..cols {
        let column = field.column(c);
        for r in 0..rows {
            let lo = r.saturating_sub(half);
            let hi = (r + half).min(rows - 1);
            let acc: f64 = (lo..=hi).map(|s| column[s] * kernel[half + r - s]).sum();
            samples[(r, c)] = acc as f32;
        }
    }
    RfFrame::new(samples, config.geometry()?, scan_id)
}

/// One scan of a lesion with the given label. Geometry and speckle both
/// derive from `config.seed`.
pub fn synth_lesion_rf(config: &PhantomConfig, label: Label) -> Result<(RfFrame, RoiMask)> {
    config.validate()?;
    let mut geo_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "geometry", 0));
    let lesion = LesionGeometry::sample(config, label, &mut geo_rng);
    let shape = (config.rows, config.cols);
    let region = lesion.lesion_region(shape);
    let frame = synth_scan(config, &lesion, &region, seed::derive(config.seed, "scatter", 0), "phantom_s0".into())?;
    Ok((frame, lesion.ellipse_mask(shape)))
}

/// `n_benign` benign lesions followed by `n_malignant` malignant ones, one
/// patient each, two independent speckle realisations per lesion.
pub fn synth_dataset(n_benign: usize, n_malignant: usize, base_config: &PhantomConfig, seed: u64) -> Result<Dataset> {
    if n_benign == 0 || n_malignant == 0 {
        return Err(Error::Invalid("phantom needs at least one lesion of each class".into()));
    }
    base_config.validate()?;
    let shape = (base_config.rows, base_config.cols);
    let indices: Vec<usize> = (0..n_benign + n_malignant).collect();
    let lesions = par::try_map(&indices, |&i| -> Result<LesionRecord> {
        let label = if i < n_benign { Label::Benign } else { Label::Malignant };
        let lesion_seed = seed::mix_index(seed, i as u64);
        let mut geo_rng = ChaCha8Rng::seed_from_u64(seed::derive(lesion_seed, "geometry", 0));
        let lesion = LesionGeometry::sample(base_config, label, &mut geo_rng);
        let region = lesion.lesion_region(shape);
        let lesion_id = format!("L{i:04}");
        let scan = |k: usize| -> Result<Scan> {
            let frame = synth_scan(
                base_config,
                &lesion,
                &region,
                seed::derive(lesion_seed, "scatter", k as u64),
                format!("{lesion_id}_s{k}"),
            )?;
            Ok(Scan {
                frame,
                mask: lesion.ellipse_mask(shape),
            })
        };
        Ok(LesionRecord {
            patient_id: format!("P{i:04}"),
            label,
            scans: [scan(0)?, scan(1)?],
            lesion_id,
        })
    })?;
    Dataset::new(format!("phantom-{seed}"), lesions)
}
