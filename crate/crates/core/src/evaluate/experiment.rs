//! The train/test reconstruction grid under patient-grouped cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::bland_altman::{bland_altman, BlandAltman};
use super::folds::FoldAssignment;
use super::roc::{auc, operating_point, roc_curve, RocCurve};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::features::cache::{FeatureTable, VariantKey};
use crate::features::Extractor;
use crate::prep::{enumerate_variants, VariantPlan};
use crate::reconstruct::{dataset_amax, AmaxScope};
use crate::svm::{train_matrix, SvmConfig};
use crate::{par, seed};

/// A row or column of the grid: one reconstruction threshold, or all of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SetSpec {
    Threshold(f64),
    All,
}

impl SetSpec {
    pub fn includes(self, threshold_db: f64) -> bool {
        match self {
            SetSpec::Threshold(t) => t == threshold_db,
            SetSpec::All => true,
        }
    }
}

impl fmt::Display for SetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetSpec::Threshold(t) => write!(f, "{t}"),
            SetSpec::All => f.write_str("ALL"),
        }
    }
}

impl FromStr for SetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(SetSpec::All);
        }
        let t: f64 = s
            .trim_end_matches("dB")
            .trim_end_matches("db")
            .parse()
            .map_err(|_| Error::Invalid(format!("not a threshold set: {s:?}")))?;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Invalid(format!("threshold must be > 0 dB, got {s:?}")));
        }
        Ok(SetSpec::Threshold(t))
    }
}

impl From<SetSpec> for String {
    fn from(s: SetSpec) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for SetSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellId {
    pub train: SetSpec,
    pub test: SetSpec,
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.train, self.test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub train_sets: Vec<SetSpec>,
    pub test_sets: Vec<SetSpec>,
    pub plan: VariantPlan,
    pub folds: FoldAssignment,
    pub bland_altman_pairs: Vec<(CellId, CellId)>,
}

impl ExperimentGrid {
    /// Grid with the default agreement pair: the diagonal cells of the
    /// lowest and highest single-threshold rows, when both are present.
    pub fn new(train_sets: Vec<SetSpec>, test_sets: Vec<SetSpec>, plan: VariantPlan, folds: FoldAssignment) -> Self {
        let diagonal: Vec<CellId> = train_sets
            .iter()
            .filter(|s| matches!(s, SetSpec::Threshold(_)) && test_sets.contains(s))
            .map(|&s| CellId { train: s, test: s })
            .collect();
        let lowest = diagonal.iter().min_by(|a, b| threshold_of(a.train).total_cmp(&threshold_of(b.train)));
        let highest = diagonal.iter().max_by(|a, b| threshold_of(a.train).total_cmp(&threshold_of(b.train)));
        let bland_altman_pairs = match (lowest, highest) {
            (Some(&lo), Some(&hi)) if lo != hi => vec![(lo, hi)],
            _ => Vec::new(),
        };
        ExperimentGrid {
            train_sets,
            test_sets,
            plan,
            folds,
            bland_altman_pairs,
        }
    }

    pub fn cells(&self) -> Vec<CellId> {
        self.train_sets
            .iter()
            .flat_map(|&train| self.test_sets.iter().map(move |&test| CellId { train, test }))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_sets.is_empty() || self.test_sets.is_empty() {
            return Err(Error::Invalid("grid needs at least one train and one test set".into()));
        }
        for s in self.train_sets.iter().chain(&self.test_sets) {
            if let SetSpec::Threshold(t) = s {
                if !self.plan.thresholds_db.contains(t) {
                    return Err(Error::Invalid(format!(
                        "set {s} is not among the configured thresholds {:?}",
                        self.plan.thresholds_db
                    )));
                }
            }
        }
        let cells = self.cells();
        for (a, b) in &self.bland_altman_pairs {
            if !cells.contains(a) || !cells.contains(b) {
                return Err(Error::Invalid(format!("Bland-Altman pair {a} vs {b} is not in the grid")));
            }
        }
        Ok(())
    }
}

fn threshold_of(s: SetSpec) -> f64 {
    match s {
        SetSpec::Threshold(t) => t,
        SetSpec::All => f64::INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRow {
    pub lesion_id: String,
    pub patient_id: String,
    pub label: Label,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub train_set: SetSpec,
    pub test_set: SetSpec,
    pub auc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    #[serde(with = "crate::evaluate::report::float_or_inf")]
    pub threshold: f64,
    /// Pooled out-of-fold lesion probabilities, in lesion order.
    pub probabilities: Vec<f64>,
    pub roc: RocCurve,
}

impl CellResult {
    pub fn id(&self) -> CellId {
        CellId {
            train: self.train_set,
            test: self.test_set,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub train_set: SetSpec,
    pub fold: usize,
    pub n_variants: usize,
    pub converged: bool,
    pub epochs: usize,
    pub training_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub a: CellId,
    pub b: CellId,
    pub stats: BlandAltman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub extractor_id: String,
    pub k: usize,
    pub fold_seed: u64,
    pub svm: SvmConfig,
    pub thresholds_db: Vec<f64>,
    pub margins_mm: Vec<f64>,
    pub lesions: Vec<LesionRow>,
    pub cells: Vec<CellResult>,
    pub bland_altman: Vec<AgreementResult>,
    pub training: Vec<TrainingSummary>,
}

impl EvalReport {
    pub fn cell(&self, train: SetSpec, test: SetSpec) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.train_set == train && c.test_set == test)
    }
}

pub fn aggregate_lesion_probability(variant_probs: &[f64]) -> Result<f64> {
    if variant_probs.is_empty() {
        return Err(Error::Invalid("no variant probabilities to aggregate".into()));
    }
    if variant_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Invalid("variant probabilities must lie in [0, 1]".into()));
    }
    Ok(variant_probs.iter().sum::<f64>() / variant_probs.len() as f64)
}

/// Variant keys in the order [`enumerate_variants`] produces them.
pub fn expected_keys(dataset: &Dataset, plan: &VariantPlan) -> Vec<VariantKey> {
    let mut keys = Vec::with_capacity(dataset.lesions.len() * plan.variants_per_lesion());
    for lesion in &dataset.lesions {
        for scan_index in 0..lesion.scans.len() {
            for &margin_mm in &plan.margins_mm {
                for &threshold_db in &plan.thresholds_db {
                    keys.push(VariantKey {
                        lesion_id: lesion.lesion_id.clone(),
                        scan_index,
                        threshold_db,
                        margin_mm,
                    });
                }
            }
        }
    }
    keys
}

fn bound_plan(dataset: &Dataset, plan: &VariantPlan) -> Result<VariantPlan> {
    let mut plan = VariantPlan::new(&plan.thresholds_db, &plan.margins_mm).map(|p| VariantPlan {
        a_max_scope: plan.a_max_scope,
        a_max_override: plan.a_max_override,
        ..p
    })?;
    if plan.a_max_scope == AmaxScope::PerDataset && plan.a_max_override.is_none() {
        let a_max = dataset_amax(dataset);
        if !(a_max > 0.0 && a_max.is_finite()) {
            return Err(Error::Degenerate("dataset-wide A_max is zero".into()));
        }
        plan.a_max_override = Some(a_max);
    }
    Ok(plan)
}

/// Reconstruct, crop, resize and extract every variant of every lesion.
pub fn build_feature_table(dataset: &Dataset, plan: &VariantPlan, extractor: &Extractor) -> Result<FeatureTable> {
    let plan = bound_plan(dataset, plan)?;
    let per_lesion = par::try_map(&dataset.lesions, |lesion| {
        enumerate_variants(lesion, &plan, extractor.preprocess())?
            .into_iter()
            .map(|v| {
                let features = extractor.extract(&v.input)?;
                let key = VariantKey {
                    lesion_id: v.lesion_id,
                    scan_index: v.scan_index,
                    threshold_db: v.threshold_db,
                    margin_mm: v.margin_mm,
                };
                Ok((key, features))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = FeatureTable::new(extractor.extractor_id(), extractor.expected_dim());
    for (key, features) in per_lesion.into_iter().flatten() {
        table.push(key, &features)?;
    }
    Ok(table)
}

/// Read the cache at `path` if it matches the dataset, plan and extractor;
/// otherwise build the table and write it there.
pub fn load_or_build_features(dataset: &Dataset, plan: &VariantPlan, extractor: &Extractor, path: &Path) -> Result<FeatureTable> {
    if path.exists() {
        match FeatureTable::read(path) {
            Ok(table)
                if table.extractor_id == extractor.extractor_id()
                    && table.dim == extractor.expected_dim()
                    && table.keys == expected_keys(dataset, plan) =>
            {
                log::info!("using cached features from {}", path.display());
                return Ok(table);
            }
            Ok(_) => log::info!("feature cache {} is stale; rebuilding", path.display()),
            Err(e) => log::warn!("ignoring unreadable feature cache {}: {e}", path.display()),
        }
    }
    let table = build_feature_table(dataset, plan, extractor)?;
    table.write(path)?;
    Ok(table)
}

pub fn run_experiment(dataset: &Dataset, grid: &ExperimentGrid, extractor: &Extractor, svm: &SvmConfig) -> Result<EvalReport> {
    grid.validate()?;
    let table = build_feature_table(dataset, &grid.plan, extractor)?;
    evaluate_table(dataset, grid, &table, svm)
}

struct JobOutput {
    summary: TrainingSummary,
    /// `(test set index, lesion index, probability)`
    predictions: Vec<(usize, usize, f64)>,
}

/// Run the grid on precomputed features.
pub fn evaluate_table(dataset: &Dataset, grid: &ExperimentGrid, table: &FeatureTable, svm: &SvmConfig) -> Result<EvalReport> {
    grid.validate()?;
    svm.validate()?;
    if table.keys != expected_keys(dataset, &grid.plan) {
        return Err(Error::Invalid("feature table does not match the dataset and variant plan".into()));
    }
    let k = grid.folds.k;
    let lesions: Vec<LesionRow> = dataset
        .lesions
        .iter()
        .map(|l| {
            let fold = grid
                .folds
                .fold_of(&l.lesion_id)
                .ok_or_else(|| Error::Invalid(format!("lesion {} has no fold", l.lesion_id)))?;
            Ok(LesionRow {
                lesion_id: l.lesion_id.clone(),
                patient_id: l.patient_id.clone(),
                label: l.label,
                fold,
            })
        })
        .collect::<Result<_>>()?;
    check_no_leakage(&lesions, k)?;

    let per_lesion = grid.plan.variants_per_lesion();
    let jobs: Vec<(SetSpec, usize)> = grid.train_sets.iter().flat_map(|&t| (0..k).map(move |f| (t, f))).collect();
    let outputs = par::try_map(&jobs, |&(train_set, fold)| {
        run_job(grid, table, &lesions, per_lesion, train_set, fold, svm).map_err(|e| match e {
            cell @ Error::Cell { .. } => cell,
            other => Error::Cell {
                train: train_set.to_string(),
                test: format!("* (fold {fold})"),
                source: Box::new(other),
            },
        })
    })?;

    let n_test = grid.test_sets.len();
    let mut probs: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut training = Vec::with_capacity(outputs.len());
    for (&(train_set, _), out) in jobs.iter().zip(outputs) {
        let row = grid.train_sets.iter().position(|&s| s == train_set).expect("train set");
        for (test_idx, lesion_idx, p) in out.predictions {
            probs.entry((row, test_idx)).or_insert_with(|| vec![f64::NAN; lesions.len()])[lesion_idx] = p;
        }
        training.push(out.summary);
    }

    let labels: Vec<u8> = lesions.iter().map(|l| l.label.as_binary()).collect();
    let mut cells = Vec::with_capacity(grid.train_sets.len() * n_test);
    for (row, &train_set) in grid.train_sets.iter().enumerate() {
        for (col, &test_set) in grid.test_sets.iter().enumerate() {
            let cell_err = |e: Error| Error::Cell {
                train: train_set.to_string(),
                test: test_set.to_string(),
                source: Box::new(e),
            };
            let probabilities = probs.remove(&(row, col)).unwrap_or_default();
            if probabilities.len() != lesions.len() || probabilities.iter().any(|p| p.is_nan()) {
                return Err(cell_err(Error::Invalid("some lesions received no pooled probability".into())));
            }
            let roc = roc_curve(&probabilities, &labels).map_err(cell_err)?;
            let area = auc(&probabilities, &labels).map_err(cell_err)?;
            let op = operating_point(&roc);
            cells.push(CellResult {
                train_set,
                test_set,
                auc: area,
                accuracy: op.accuracy,
                sensitivity: op.sensitivity,
                specificity: op.specificity,
                threshold: op.threshold,
                probabilities,
                roc,
            });
        }
    }

    let bland_altman_results = grid
        .bland_altman_pairs
        .iter()
        .map(|&(a, b)| {
            let find = |id: CellId| cells.iter().find(|c| c.id() == id).expect("validated pair");
            Ok(AgreementResult {
                a,
                b,
                stats: bland_altman(&find(a).probabilities, &find(b).probabilities)?,
            })
        })
        .collect::<Result<_>>()?;

    Ok(EvalReport {
        extractor_id: table.extractor_id.clone(),
        k,
        fold_seed: grid.folds.seed,
        svm: *svm,
        thresholds_db: grid.plan.thresholds_db.clone(),
        margins_mm: grid.plan.margins_mm.clone(),
        lesions,
        cells,
        bland_altman: bland_altman_results,
        training,
    })
}

/// Every patient must sit in exactly one fold.
pub fn check_no_leakage(lesions: &[LesionRow], k: usize) -> Result<()> {
    let mut folds_of_patient: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for l in lesions {
        if l.fold >= k {
            return Err(Error::Invalid(format!("lesion {} is in fold {} of {k}", l.lesion_id, l.fold)));
        }
        folds_of_patient.entry(&l.patient_id).or_default().insert(l.fold);
    }
    match folds_of_patient.iter().find(|(_, f)| f.len() > 1) {
        Some((patient, folds)) => Err(Error::Invalid(format!("patient {patient} spans folds {folds:?}"))),
        None => Ok(()),
    }
}

fn run_job(
    grid: &ExperimentGrid,
    table: &FeatureTable,
    lesions: &[LesionRow],
    per_lesion: usize,
    train_set: SetSpec,
    fold: usize,
    svm: &SvmConfig,
) -> Result<JobOutput> {
    let rows_of = |lesion_idx: usize| lesion_idx * per_lesion..(lesion_idx + 1) * per_lesion;
    let train_rows: Vec<(usize, u8)> = lesions
        .iter()
        .enumerate()
        .filter(|(_, l)| l.fold != fold)
        .flat_map(|(i, l)| {
            let y = l.label.as_binary();
            rows_of(i)
                .filter(|&r| train_set.includes(table.keys[r].threshold_db))
                .map(move |r| (r, y))
        })
        .collect();
    let mut x = Array2::zeros((train_rows.len(), table.dim));
    for (mut dst, &(r, _)) in x.rows_mut().into_iter().zip(&train_rows) {
        dst.iter_mut().zip(table.row(r)).for_each(|(d, &v)| *d = f64::from(v));
    }
    let labels: Vec<u8> = train_rows.iter().map(|&(_, y)| y).collect();
    let config = SvmConfig {
        seed: seed::derive(svm.seed, &format!("svm/{train_set}"), fold as u64),
        ..*svm
    };
    let model = train_matrix(x, &labels, &config)?;

    let mut predictions = Vec::new();
    for (test_idx, &test_set) in grid.test_sets.iter().enumerate() {
        for (i, _) in lesions.iter().enumerate().filter(|(_, l)| l.fold == fold) {
            let variant_probs = rows_of(i)
                .filter(|&r| test_set.includes(table.keys[r].threshold_db))
                .map(|r| Ok(model.probability_of_decision(model.decision_f32(table.row(r))?)))
                .collect::<Result<Vec<f64>>>()?;
            let p = aggregate_lesion_probability(&variant_probs).map_err(|e| Error::Cell {
                train: train_set.to_string(),
                test: test_set.to_string(),
                source: Box::new(e),
            })?;
            predictions.push((test_idx, i, p));
        }
    }
    Ok(JobOutput {
        summary: TrainingSummary {
            train_set,
            fold,
            n_variants: labels.len(),
            converged: model.converged,
            epochs: model.epochs,
            training_checksum: model.training_checksum,
        },
        predictions,
    })
}
