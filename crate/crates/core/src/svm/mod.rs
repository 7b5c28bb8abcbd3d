//! Class-weighted linear soft-margin SVM with Platt calibration.
//!
//! Training minimises `½‖w‖² + Σ C_i·max(0, 1 − y_i(w·x_i + b))` with an
//! unregularised bias. The dual carries the equality constraint
//! `Σ α_i y_i = 0`, so coordinates are updated in pairs: every step takes
//! the maximal violator and the partner with the largest second-order gain.

pub mod platt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

pub use platt::{fit_platt, platt_probability};

/// Curvature floor for degenerate pairs.
const TAU: f64 = 1e-12;
const BOUND_EPS: f64 = 1e-12;
const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `N / (2·N_class)`
    InverseFrequency,
    None,
    Manual { benign: f64, malignant: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// Recorded for completeness; a linear kernel has no γ.
    pub gamma: f64,
    pub class_weighting: ClassWeighting,
    pub tolerance: f64,
    /// Upper bound on epochs, one epoch being `n` pair updates.
    pub max_iterations: usize,
    pub seed: u64,
    /// Standardise every feature with training mean/std before solving.
    pub standardize: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            gamma: 0.001,
            class_weighting: ClassWeighting::InverseFrequency,
            tolerance: 1e-6,
            max_iterations: 20_000,
            seed: 0,
            standardize: true,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Invalid(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Invalid(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if let ClassWeighting::Manual { benign, malignant } = self.class_weighting {
            if !(benign > 0.0 && malignant > 0.0) {
                return Err(Error::Invalid("manual class weights must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// `(w_benign, w_malignant)` for 0/1 labels.
pub fn class_weights(labels: &[u8], weighting: ClassWeighting) -> Result<(f64, f64)> {
    let malignant = labels.iter().filter(|&&y| y == 1).count();
    let benign = labels.len() - malignant;
    if malignant == 0 || benign == 0 {
        return Err(Error::SingleClass);
    }
    let n = labels.len() as f64;
    Ok(match weighting {
        ClassWeighting::InverseFrequency => (n / (2.0 * benign as f64), n / (2.0 * malignant as f64)),
        ClassWeighting::None => (1.0, 1.0),
        ClassWeighting::Manual { benign, malignant } => (benign, malignant),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows() as f64;
        let (mean, scale) = x
            .columns()
            .into_iter()
            .map(|col| {
                let m = col.sum() / n;
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                (m, if s > MIN_SCALE { s } else { 1.0 })
            })
            .unzip();
        Standardization { mean, scale }
    }

    fn apply(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Weights in the (standardised) solver space.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub platt_a: f64,
    pub platt_b: f64,
    pub standardization: Option<Standardization>,
    pub config: SvmConfig,
    pub training_checksum: String,
    pub converged: bool,
    pub epochs: usize,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `w·z(x) + b`, where `z` is the stored standardisation.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        self.decision_iter(x.len(), x.iter().copied())
    }

    pub fn decision_f32(&self, x: &[f32]) -> Result<f64> {
        self.decision_iter(x.len(), x.iter().map(|&v| f64::from(v)))
    }

    fn decision_iter(&self, len: usize, x: impl Iterator<Item = f64>) -> Result<f64> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        let dot: f64 = match &self.standardization {
            Some(s) => x
                .zip(&self.weights)
                .enumerate()
                .map(|(j, (v, w))| w * (v - s.mean[j]) / s.scale[j])
                .sum(),
            None => x.zip(&self.weights).map(|(v, w)| w * v).sum(),
        };
        Ok(dot + self.bias)
    }

    pub fn probability_of_decision(&self, decision: f64) -> f64 {
        platt_probability(decision, self.platt_a, self.platt_b)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelWire::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelWire>(text)?.try_into()
    }
}

pub fn decision_value(model: &SvmModel, x: &FeatureVector) -> Result<f64> {
    model.decision(&x.values)
}

pub fn predict_probability(model: &SvmModel, x: &FeatureVector) -> Result<f64> {
    Ok(model.probability_of_decision(decision_value(model, x)?))
}

pub fn train_svm(features: &[FeatureVector], labels: &[u8], config: &SvmConfig) -> Result<SvmModel> {
    let dim = features.first().map(FeatureVector::dim).ok_or(Error::SingleClass)?;
    let mut x = Array2::zeros((features.len(), dim));
    for (i, f) in features.iter().enumerate() {
        if f.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: f.dim() });
        }
        x.row_mut(i).iter_mut().zip(&f.values).for_each(|(d, &v)| *d = v);
    }
    train_matrix(x, labels, config)
}

/// Train on an `n × d` design matrix with 0/1 labels.
pub fn train_matrix(mut x: Array2<f64>, labels: &[u8], config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: labels.len(),
        });
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features".into()));
    }
    let (w_benign, w_malignant) = class_weights(labels, config.class_weighting)?;
    warn_gamma_once(config.gamma);
    let checksum = training_checksum(&x, labels, config);

    let standardization = config.standardize.then(|| Standardization::fit(&x));
    if let Some(s) = &standardization {
        s.apply(&mut x);
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let cost: Vec<f64> = labels
        .iter()
        .map(|&l| config.c * if l == 1 { w_malignant } else { w_benign })
        .collect();
    let solution = solve_dual(&x, &y, &cost, config.tolerance, config.max_iterations, config.seed);
    if !solution.converged {
        log::warn!(
            "SVM stopped after {} epochs without reaching KKT tolerance {}",
            solution.epochs,
            config.tolerance
        );
    }

    let mut model = SvmModel {
        weights: solution.w,
        bias: solution.b,
        platt_a: 0.0,
        platt_b: 0.0,
        standardization: None,
        config: *config,
        training_checksum: checksum,
        converged: solution.converged,
        epochs: solution.epochs,
    };
    let decisions: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&model.weights).map(|(v, w)| v * w).sum::<f64>() + model.bias)
        .collect();
    let (a, b) = fit_platt(&decisions, labels)?;
    model.platt_a = a;
    model.platt_b = b;
    model.standardization = standardization;
    Ok(model)
}

fn warn_gamma_once(gamma: f64) {
    static ONCE: std::sync::Once = std::sync::Once::new();
    if gamma != 0.0 {
        ONCE.call_once(|| log::warn!("gamma = {gamma} is ignored by the linear kernel"));
    }
}

fn training_checksum(x: &Array2<f64>, labels: &[u8], config: &SvmConfig) -> String {
    let mut h = Sha256::new();
    h.update((x.nrows() as u64).to_le_bytes());
    h.update((x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        h.update(v.to_le_bytes());
    }
    h.update(labels);
    h.update(serde_json::to_vec(config).unwrap_or_default());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
    pub converged: bool,
    pub epochs: usize,
}

fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Pairwise dual solver. `y` holds ±1, `cost` the per-example box bound
/// `C_i`. `max_epochs` caps the number of pair updates at `max_epochs · n`.
pub fn solve_dual(x: &Array2<f64>, y: &[f64], cost: &[f64], tolerance: f64, max_epochs: usize, seed: u64) -> DualSolution {
    let n = x.nrows();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = dot(x.row(i), x.row(j));
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    let k = |i: usize, j: usize| gram[i * n + j];

    let mut alpha = vec![0.0; n];
    // gradient of ½αᵀQα − eᵀα
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, t: usize| if y[t] > 0.0 { a < cost[t] } else { a > 0.0 };
    let in_low = |a: f64, t: usize| if y[t] > 0.0 { a > 0.0 } else { a < cost[t] };

    // ties in the working-set choice go to the lowest rank in a seeded permutation
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rank = vec![0usize; n];
    for (r, &t) in order.iter().enumerate() {
        rank[t] = r;
    }
    let better = |v: f64, t: usize, best: Option<(f64, usize)>, wins: fn(f64, f64) -> bool| match best {
        None => true,
        Some((bv, bt)) => wins(v, bv) || (v == bv && rank[t] < rank[bt]),
    };
    let budget = max_epochs.saturating_mul(n.max(1));
    let mut steps = 0usize;
    let mut converged = false;

    loop {
        let mut up: Option<(f64, usize)> = None;
        for t in 0..n {
            if in_up(alpha[t], t) {
                let v = -y[t] * grad[t];
                if better(v, t, up, |a, b| a > b) {
                    up = Some((v, t));
                }
            }
        }
        let mut low_min = f64::INFINITY;
        let mut low: Option<(f64, usize)> = None;
        if let Some((g_up, i)) = up {
            let row_i = &gram[i * n..(i + 1) * n];
            for t in 0..n {
                if in_low(alpha[t], t) {
                    let v = -y[t] * grad[t];
                    low_min = low_min.min(v);
                    let gap = g_up - v;
                    if gap > 0.0 {
                        let quad = (row_i[i] + gram[t * n + t] - 2.0 * row_i[t]).max(TAU);
                        let gain = -gap * gap / quad;
                        if better(gain, t, low, |a, b| a < b) {
                            low = Some((gain, t));
                        }
                    }
                }
            }
        }
        let (Some((g_up, i)), Some((_, j))) = (up, low) else {
            converged = true;
            break;
        };
        if g_up - low_min < tolerance {
            converged = true;
            break;
        }
        if steps >= budget {
            break;
        }
        steps += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        update_pair(i, j, &mut alpha, &grad, y, cost, &k);
        let (si, sj) = (y[i] * (alpha[i] - old_i), y[j] * (alpha[j] - old_j));
        let (row_i, row_j) = (&gram[i * n..(i + 1) * n], &gram[j * n..(j + 1) * n]);
        for t in 0..n {
            grad[t] += y[t] * (row_i[t] * si + row_j[t] * sj);
        }
    }

    let d = x.ncols();
    let mut w = vec![0.0; d];
    for (i, row) in x.rows().into_iter().enumerate() {
        if alpha[i] != 0.0 {
            let s = alpha[i] * y[i];
            w.iter_mut().zip(row.iter()).for_each(|(wj, v)| *wj += s * v);
        }
    }
    let b = -rho(&alpha, &grad, y, cost);
    DualSolution {
        alpha,
        w,
        b,
        converged,
        epochs: steps.div_ceil(n.max(1)),
    }
}

/// Analytic two-variable step keeping `Σ α y` fixed and the box constraints.
fn update_pair(i: usize, j: usize, alpha: &mut [f64], grad: &[f64], y: &[f64], cost: &[f64], k: &impl Fn(usize, usize) -> f64) {
    let (ci, cj) = (cost[i], cost[j]);
    if y[i] != y[j] {
        let quad = (k(i, i) + k(j, j) + 2.0 * y[i] * y[j] * k(i, j)).max(TAU);
        let delta = (-grad[i] - grad[j]) / quad;
        let diff = alpha[i] - alpha[j];
        alpha[i] += delta;
        alpha[j] += delta;
        if diff > 0.0 {
            if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = -diff;
        }
        if diff > ci - cj {
            if alpha[i] > ci {
                alpha[i] = ci;
                alpha[j] = ci - diff;
            }
        } else if alpha[j] > cj {
            alpha[j] = cj;
            alpha[i] = cj + diff;
        }
    } else {
        let quad = (k(i, i) + k(j, j) - 2.0 * k(i, j)).max(TAU);
        let delta = (grad[i] - grad[j]) / quad;
        let sum = alpha[i] + alpha[j];
        alpha[i] -= delta;
        alpha[j] += delta;
        if sum > ci {
            if alpha[i] > ci {
                alpha[i] = ci;
                alpha[j] = sum - ci;
            }
        } else if alpha[j] < 0.0 {
            alpha[j] = 0.0;
            alpha[i] = sum;
        }
        if sum > cj {
            if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = sum - cj;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = sum;
        }
    }
}

/// Offset from free support vectors, or the midpoint of the feasible
/// interval when none are free.
fn rho(alpha: &[f64], grad: &[f64], y: &[f64], cost: &[f64]) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum) = (0usize, 0.0);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= cost[t] * (1.0 - BOUND_EPS) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= cost[t] * BOUND_EPS {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

#[derive(Serialize, Deserialize)]
struct StandardizationWire {
    mean: String,
    scale: String,
}

#[derive(Serialize, Deserialize)]
struct ModelWire {
    weights: String,
    bias: f64,
    platt_a: f64,
    platt_b: f64,
    standardization: Option<StandardizationWire>,
    config: SvmConfig,
    training_checksum: String,
    converged: bool,
    epochs: usize,
}

fn encode_f64s(v: &[f64]) -> String {
    B64.encode(v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>())
}

fn decode_f64s(s: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(s).map_err(|e| Error::Invalid(format!("model weights: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Invalid("model weights: length is not a multiple of 8".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

impl From<&SvmModel> for ModelWire {
    fn from(m: &SvmModel) -> Self {
        ModelWire {
            weights: encode_f64s(&m.weights),
            bias: m.bias,
            platt_a: m.platt_a,
            platt_b: m.platt_b,
            standardization: m.standardization.as_ref().map(|s| StandardizationWire {
                mean: encode_f64s(&s.mean),
                scale: encode_f64s(&s.scale),
            }),
            config: m.config,
            training_checksum: m.training_checksum.clone(),
            converged: m.converged,
            epochs: m.epochs,
        }
    }
}

impl TryFrom<ModelWire> for SvmModel {
    type Error = Error;

    fn try_from(w: ModelWire) -> Result<Self> {
        let weights = decode_f64s(&w.weights)?;
        let standardization = match w.standardization {
            Some(s) => {
                let st = Standardization {
                    mean: decode_f64s(&s.mean)?,
                    scale: decode_f64s(&s.scale)?,
                };
                if st.mean.len() != weights.len() || st.scale.len() != weights.len() {
                    return Err(Error::Invalid("standardisation length differs from weights".into()));
                }
                Some(st)
            }
            None => None,
        };
        let model = SvmModel {
            weights,
            bias: w.bias,
            platt_a: w.platt_a,
            platt_b: w.platt_b,
            standardization,
            config: w.config,
            training_checksum: w.training_checksum,
            converged: w.converged,
            epochs: w.epochs,
        };
        if model.weights.iter().chain([&model.bias, &model.platt_a, &model.platt_b]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }
}
