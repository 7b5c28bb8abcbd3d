//! Deterministic 64-value descriptor computed from channel 0 of a network
//! input. Used when no CNN is available.
//!
//! Layout:
//! - `0..32`   intensity histogram over the image's own `[min, max]` range, sums to 1
//! - `32..37`  mean, standard deviation, mean cubed z-score, histogram entropy (nats),
//!   mean central-difference gradient magnitude
//! - `37..41`  fraction of pixels below `min + q·(max - min)` for q = 0.10, 0.25, 0.75, 0.90
//! - `41..64`  fixed Gaussian random projection (seed 1234) of the 8×8 block-mean thumbnail

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::prep::NetworkInput;

pub const BASELINE_ID: &str = "baseline";
pub const BASELINE_DIM: usize = 64;
pub const HISTOGRAM_BINS: usize = 32;
pub const THUMBNAIL_SIDE: usize = 8;
pub const PROJECTION_SEED: u64 = 1234;
pub const PROJECTION_DIM: usize = BASELINE_DIM - HISTOGRAM_BINS - 5 - QUANTILE_MARKS.len();
pub const QUANTILE_MARKS: [f64; 4] = [0.10, 0.25, 0.75, 0.90];

/// `PROJECTION_DIM × 64` matrix, rows drawn in order from N(0, 1/64).
pub fn projection_matrix() -> &'static [[f64; THUMBNAIL_SIDE * THUMBNAIL_SIDE]] {
    static MATRIX: OnceLock<Vec<[f64; THUMBNAIL_SIDE * THUMBNAIL_SIDE]>> = OnceLock::new();
    MATRIX.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
        let scale = 1.0 / (THUMBNAIL_SIDE as f64);
        (0..PROJECTION_DIM)
            .map(|_| {
                let mut row = [0.0; THUMBNAIL_SIDE * THUMBNAIL_SIDE];
                for v in &mut row {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z * scale;
                }
                row
            })
            .collect()
    })
}

pub fn baseline_extract(input: &NetworkInput) -> Result<FeatureVector> {
    let side = input.size;
    if side < THUMBNAIL_SIDE || input.data.len() != 3 * side * side {
        return Err(Error::Invalid(format!(
            "baseline extractor needs a square 3-channel input of side >= {THUMBNAIL_SIDE}"
        )));
    }
    let px = input.channel(0);
    if px.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("baseline extractor input".into()));
    }
    let n = px.len() as f64;
    let mut values = Vec::with_capacity(BASELINE_DIM);

    let (lo, hi) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let mut hist = [0.0f64; HISTOGRAM_BINS];
    for &v in px {
        let bin = if range > 0.0 {
            (((v - lo) / range * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        hist[bin] += 1.0;
    }
    for h in &mut hist {
        *h /= n;
    }
    values.extend_from_slice(&hist);

    let mean = px.iter().sum::<f64>() / n;
    let var = px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let skew = if std > 0.0 {
        px.iter().map(|v| ((v - mean) / std).powi(3)).sum::<f64>() / n
    } else {
        0.0
    };
    let entropy = -hist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    values.extend_from_slice(&[mean, std, skew, entropy, mean_gradient(px, side)]);

    for q in QUANTILE_MARKS {
        let mark = lo + q * range;
        values.push(px.iter().filter(|&&v| v < mark).count() as f64 / n);
    }

    let thumb = thumbnail(px, side);
    for row in projection_matrix() {
        values.push(row.iter().zip(&thumb).map(|(w, t)| w * t).sum());
    }
    debug_assert_eq!(values.len(), BASELINE_DIM);
    Ok(FeatureVector::new(values, BASELINE_ID))
}

/// Mean of `sqrt(gx² + gy²)` over interior pixels, central differences.
fn mean_gradient(px: &[f64], side: usize) -> f64 {
    if side < 3 {
        return 0.0;
    }
    let at = |r: usize, c: usize| px[r * side + c];
    let mut acc = 0.0;
    for r in 1..side - 1 {
        for c in 1..side - 1 {
            let gx = (at(r, c + 1) - at(r, c - 1)) / 2.0;
            let gy = (at(r + 1, c) - at(r - 1, c)) / 2.0;
            acc += gx.hypot(gy);
        }
    }
    acc / ((side - 2) * (side - 2)) as f64
}

fn thumbnail(px: &[f64], side: usize) -> [f64; THUMBNAIL_SIDE * THUMBNAIL_SIDE] {
    let mut out = [0.0; THUMBNAIL_SIDE * THUMBNAIL_SIDE];
    let bounds = |b: usize| (b * side / THUMBNAIL_SIDE, (b + 1) * side / THUMBNAIL_SIDE);
    for br in 0..THUMBNAIL_SIDE {
        let (r0, r1) = bounds(br);
        for bc in 0..THUMBNAIL_SIDE {
            let (c0, c1) = bounds(bc);
            let mut acc = 0.0;
            for r in r0..r1 {
                acc += px[r * side + c0..r * side + c1].iter().sum::<f64>();
            }
            out[br * THUMBNAIL_SIDE + bc] = acc / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input_from(side: usize, f: impl Fn(usize, usize) -> f64) -> NetworkInput {
        let ch: Vec<f64> = (0..side * side).map(|i| f(i / side, i % side)).collect();
        NetworkInput {
            size: side,
            data: [ch.clone(), ch.clone(), ch].concat(),
        }
    }

    #[test]
    fn constant_image() {
        let fv = baseline_extract(&input_from(16, |_, _| 0.25)).unwrap();
        assert_eq!(fv.dim(), BASELINE_DIM);
        assert_eq!(fv.values[0], 1.0);
        assert!(fv.values[1..HISTOGRAM_BINS].iter().all(|&v| v == 0.0));
        assert_eq!(fv.values[32], 0.25);
        assert_eq!(fv.values[33], 0.0);
        assert_eq!(fv.values[35], 0.0);
        assert_eq!(fv.values[36], 0.0);
    }

    #[test]
    fn histogram_is_rotation_invariant() {
        let f = |r: usize, c: usize| ((r * 31 + c * 17) % 23) as f64 / 11.0 - 1.0 + 0.01 * r as f64;
        let side = 24;
        let a = baseline_extract(&input_from(side, f)).unwrap();
        let b = baseline_extract(&input_from(side, |r, c| f(side - 1 - c, r))).unwrap();
        assert_eq!(&a.values[..HISTOGRAM_BINS], &b.values[..HISTOGRAM_BINS]);
        assert_ne!(&a.values[41..], &b.values[41..]);
        let total: f64 = a.values[..HISTOGRAM_BINS].iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_small_or_nonfinite() {
        assert!(baseline_extract(&input_from(4, |_, _| 0.0)).is_err());
        assert!(matches!(
            baseline_extract(&input_from(8, |r, _| if r == 3 { f64::NAN } else { 0.0 })),
            Err(Error::NonFinite(_))
        ));
    }
}
