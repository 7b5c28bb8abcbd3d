use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Limits of agreement are `mean ± LOA_Z·sd`.
pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub mean_diff: f64,
    /// Sample standard deviation (n − 1).
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `((a+b)/2, a−b)` per lesion.
    pub points: Vec<(f64, f64)>,
}

pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Invalid("Bland-Altman needs at least two paired values".into()));
    }
    let points: Vec<(f64, f64)> = a.iter().zip(b).map(|(x, y)| ((x + y) / 2.0, x - y)).collect();
    let n = points.len() as f64;
    let mean_diff = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sd_diff = (points.iter().map(|p| (p.1 - mean_diff).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(BlandAltman {
        mean_diff,
        sd_diff,
        loa_low: mean_diff - LOA_Z * sd_diff,
        loa_high: mean_diff + LOA_Z * sd_diff,
        points,
    })
}
