//! Platt sigmoid calibration, `P(y = 1 | f) = 1 / (1 + exp(a·f + b))`, fitted
//! by damped Newton iterations on the smoothed-target negative
//! log-likelihood (Lin, Lin & Weng's formulation).

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;

fn smoothed_targets(labels: &[u8]) -> Result<Vec<f64>> {
    let positives = labels.iter().filter(|&&y| y == 1).count() as f64;
    let negatives = labels.len() as f64 - positives;
    if positives == 0.0 || negatives == 0.0 {
        return Err(Error::SingleClass);
    }
    let hi = (positives + 1.0) / (positives + 2.0);
    let lo = 1.0 / (negatives + 2.0);
    Ok(labels.iter().map(|&y| if y == 1 { hi } else { lo }).collect())
}

/// Smoothed-target NLL, evaluated without overflow.
fn objective(decisions: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    decisions
        .iter()
        .zip(targets)
        .map(|(&f, &t)| {
            let z = a * f + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Fit `(a, b)` on decision values and 0/1 labels.
pub fn fit_platt(decisions: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    if decisions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: decisions.len(),
            found: labels.len(),
        });
    }
    if decisions.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("decision values".into()));
    }
    let targets = smoothed_targets(labels)?;
    let positives = labels.iter().filter(|&&y| y == 1).count() as f64;
    let negatives = labels.len() as f64 - positives;

    let mut a = 0.0;
    let mut b = ((negatives + 1.0) / (positives + 1.0)).ln();
    let mut fval = objective(decisions, &targets, a, b);

    for _ in 0..MAX_ITERATIONS {
        let (mut h11, mut h22, mut h21) = (HESSIAN_RIDGE, HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&f, &t) in decisions.iter().zip(&targets) {
            let z = a * f + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.hypot(g2) < GRADIENT_TOLERANCE {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(decisions, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            log::debug!("platt line search stalled at a={a}, b={b}");
            break;
        }
    }
    Ok((a, b))
}

/// Sigmoid of the calibrated score, kept strictly inside (0, 1).
pub fn platt_probability(decision: f64, a: f64, b: f64) -> f64 {
    let z = a * decision + b;
    let p = if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
