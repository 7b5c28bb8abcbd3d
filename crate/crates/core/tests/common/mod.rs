//! Independent reference implementations shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Envelope through a direct O(n²) DFT and its inverse.
pub fn dft_envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    let spectrum: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * PI * ((k * t) % n) as f64 / nf;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect();
    let weight = |k: usize| {
        if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        }
    };
    (0..n)
        .map(|t| {
            let (re, im) = spectrum.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, &(sr, si))| {
                let a = 2.0 * PI * ((k * t) % n) as f64 / nf;
                let w = weight(k);
                (re + w * (sr * a.cos() - si * a.sin()), im + w * (sr * a.sin() + si * a.cos()))
            });
            (re / nf).hypot(im / nf)
        })
        .collect()
}

/// Catmull-Rom style cubic kernel written out from its definition.
pub fn keys_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic resize as a direct 4×4 kernel sum over edge-clamped taps.
pub fn naive_bicubic(src: &[Vec<f64>], rows: usize, cols: usize, a: f64) -> Vec<Vec<f64>> {
    let (h, w) = (src.len(), src[0].len());
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| {
                    let y = (i as f64 + 0.5) * h as f64 / rows as f64 - 0.5;
                    let x = (j as f64 + 0.5) * w as f64 / cols as f64 - 0.5;
                    let (y0, x0) = (y.floor() as i64, x.floor() as i64);
                    let mut acc = 0.0;
                    for m in y0 - 1..=y0 + 2 {
                        for n in x0 - 1..=x0 + 2 {
                            acc += keys_kernel(y - m as f64, a) * keys_kernel(x - n as f64, a) * src[clamp(m, h)][clamp(n, w)];
                        }
                    }
                    acc.clamp(0.0, 255.0)
                })
                .collect()
        })
        .collect()
}

/// Pair-count AUC.
pub fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Confusion counts `(tp, fp, tn, fn)` for "positive iff score >= t".
pub fn confusion(scores: &[f64], labels: &[u8], t: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= t, y == 1) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

/// Every candidate threshold: +inf and each distinct score, descending.
pub fn all_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = scores.to_vec();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t.insert(0, f64::INFINITY);
    t
}

/// `(sensitivity, specificity, accuracy, threshold)` nearest (0,1) by brute force.
pub fn brute_operating_point(scores: &[f64], labels: &[u8]) -> (f64, f64, f64, f64) {
    let mut best: Option<(f64, usize, f64, (usize, usize, usize, usize))> = None;
    for t in all_thresholds(scores) {
        let c = confusion(scores, labels, t);
        let (p, n) = ((c.0 + c.3) as f64, (c.1 + c.2) as f64);
        let d = ((c.1 as f64 / n).powi(2) + (1.0 - c.0 as f64 / p).powi(2)).sqrt();
        let better = match best {
            None => true,
            Some((bd, btp, bt, _)) => d < bd || (d == bd && (c.0 > btp || (c.0 == btp && t < bt))),
        };
        if better {
            best = Some((d, c.0, t, c));
        }
    }
    let (_, _, t, c) = best.unwrap();
    let (p, n) = ((c.0 + c.3) as f64, (c.1 + c.2) as f64);
    (c.0 as f64 / p, c.2 as f64 / n, (c.0 + c.2) as f64 / (p + n), t)
}

/// Scores in [0,1) drawn on a coarse grid so ties are common.
pub fn tied_instance(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    loop {
        let grid = rng.random_range(3..=40);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..grid) as f64 / grid as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

/// `½‖w‖² + Σ cᵢ max(0, 1 − yᵢ(w·xᵢ + b))` with yᵢ ∈ {−1, +1}.
pub fn primal(w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], c: &[f64]) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    reg + x
        .iter()
        .zip(y)
        .zip(c)
        .map(|((xi, yi), ci)| {
            let f: f64 = xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            ci * (1.0 - yi * f).max(0.0)
        })
        .sum::<f64>()
}

/// Exact minimisation over b: the objective is piecewise linear in b with
/// kinks at `b = yᵢ − w·xᵢ`, so the minimum sits on one of them.
fn best_bias(w: &[f64], x: &[Vec<f64>], y: &[f64], c: &[f64]) -> (f64, f64) {
    x.iter()
        .zip(y)
        .map(|(xi, yi)| yi - xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .map(|b| (primal(w, b, x, y, c), b))
        .fold((f64::INFINITY, 0.0), |acc, v| if v.0 < acc.0 { v } else { acc })
}

fn ternary(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..120 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let m = 0.5 * (lo + hi);
    (m, f(m))
}

/// Minimum of the 2-D primal by nested ternary search over w with exact b.
pub fn primal_oracle_2d(x: &[Vec<f64>], y: &[f64], c: &[f64]) -> f64 {
    let (p0, _) = best_bias(&[0.0, 0.0], x, y, c);
    let r = (2.0 * p0).sqrt() + 1e-9;
    let inner = |w1: f64| ternary(-r, r, |w2| best_bias(&[w1, w2], x, y, c).0).1;
    ternary(-r, r, inner).1
}

/// Sample standard deviation and mean of `a − b` from the textbook formulas.
pub fn bland_altman_scalar(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Patients as `(malignant, benign)` lesion counts.
pub fn random_patients(rng: &mut impl Rng, k: usize, max_patients: usize) -> Vec<(usize, usize)> {
    loop {
        let n = rng.random_range(2 * k..=max_patients.max(2 * k));
        let patients: Vec<(usize, usize)> = (0..n)
            .map(|_| match rng.random_range(0..10) {
                0 => (1, 1),
                1 => (2, 0),
                2 => (0, 2),
                3..=5 => (1, 0),
                _ => (0, 1),
            })
            .collect();
        let mal = patients.iter().filter(|p| p.0 > 0).count();
        let ben = patients.iter().filter(|p| p.1 > 0).count();
        if mal >= k && ben >= k {
            return patients;
        }
    }
}

/// Does any assignment of patients to `k` folds keep every per-class fold
/// count within one of the others?
pub fn balanced_assignment_exists(patients: &[(usize, usize)], k: usize) -> bool {
    fn go(i: usize, patients: &[(usize, usize)], counts: &mut Vec<(usize, usize)>, used: usize, k: usize) -> bool {
        if i == patients.len() {
            let spread = |f: fn(&(usize, usize)) -> usize| {
                let v: Vec<usize> = counts.iter().map(f).collect();
                v.iter().max().unwrap() - v.iter().min().unwrap()
            };
            return spread(|c| c.0) <= 1 && spread(|c| c.1) <= 1;
        }
        // folds are interchangeable: only open one new fold per level
        for f in 0..(used + 1).min(k) {
            counts[f].0 += patients[i].0;
            counts[f].1 += patients[i].1;
            let found = go(i + 1, patients, counts, used.max(f + 1), k);
            counts[f].0 -= patients[i].0;
            counts[f].1 -= patients[i].1;
            if found {
                return true;
            }
        }
        false
    }
    go(0, patients, &mut vec![(0, 0); k], 0, k)
}
