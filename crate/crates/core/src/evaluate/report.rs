//! Report files: grid and probability tables, ROC and Bland-Altman plots,
//! and JSON summaries. Output is a pure function of the report.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::experiment::{AgreementResult, CellResult, EvalReport};
use crate::data::manifest::write_file;
use crate::error::{Error, Result};

pub const GRID_CSV: &str = "grid.csv";
pub const LESION_CSV: &str = "lesion_probabilities.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_JSON: &str = "report.json";

const PLOT: f64 = 360.0;
const PAD: f64 = 50.0;

/// Serialises non-finite floats as strings (`"inf"`, `"-inf"`, `"nan"`),
/// which plain JSON numbers cannot carry.
pub mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Serialize)]
struct CellSummary {
    train_set: String,
    test_set: String,
    auc: f64,
    accuracy: f64,
    sensitivity: f64,
    specificity: f64,
    #[serde(with = "float_or_inf")]
    threshold: f64,
    roc_svg: String,
}

#[derive(Serialize)]
struct AgreementSummary {
    a: String,
    b: String,
    mean_diff: f64,
    sd_diff: f64,
    loa_low: f64,
    loa_high: f64,
    svg: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    extractor_id: &'a str,
    k: usize,
    fold_seed: u64,
    lesions: usize,
    malignant: usize,
    thresholds_db: &'a [f64],
    margins_mm: &'a [f64],
    all_models_converged: bool,
    cells: Vec<CellSummary>,
    bland_altman: Vec<AgreementSummary>,
}

pub fn roc_file_name(cell: &CellResult) -> String {
    format!("roc_{}_{}.svg", cell.train_set, cell.test_set)
}

pub fn bland_altman_file_name(pair: &AgreementResult) -> String {
    format!("bland_altman_{}_vs_{}.svg", pair.a, pair.b)
}

pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join(GRID_CSV), &grid_csv(report)?)?;
    write_file(&out_dir.join(LESION_CSV), &lesion_csv(report)?)?;
    for cell in &report.cells {
        write_file(&out_dir.join(roc_file_name(cell)), roc_svg(cell).as_bytes())?;
    }
    for pair in &report.bland_altman {
        write_file(&out_dir.join(bland_altman_file_name(pair)), bland_altman_svg(pair).as_bytes())?;
    }
    let summary = Summary {
        extractor_id: &report.extractor_id,
        k: report.k,
        fold_seed: report.fold_seed,
        lesions: report.lesions.len(),
        malignant: report.lesions.iter().filter(|l| l.label.is_malignant()).count(),
        thresholds_db: &report.thresholds_db,
        margins_mm: &report.margins_mm,
        all_models_converged: report.training.iter().all(|t| t.converged),
        cells: report
            .cells
            .iter()
            .map(|c| CellSummary {
                train_set: c.train_set.to_string(),
                test_set: c.test_set.to_string(),
                auc: c.auc,
                accuracy: c.accuracy,
                sensitivity: c.sensitivity,
                specificity: c.specificity,
                threshold: c.threshold,
                roc_svg: roc_file_name(c),
            })
            .collect(),
        bland_altman: report
            .bland_altman
            .iter()
            .map(|p| AgreementSummary {
                a: p.a.to_string(),
                b: p.b.to_string(),
                mean_diff: p.stats.mean_diff,
                sd_diff: p.stats.sd_diff,
                loa_low: p.stats.loa_low,
                loa_high: p.stats.loa_high,
                svg: bland_altman_file_name(p),
            })
            .collect(),
    };
    write_file(&out_dir.join(SUMMARY_JSON), &json_bytes(&summary)?)?;
    write_file(&out_dir.join(REPORT_JSON), &json_bytes(report)?)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

fn grid_csv(report: &EvalReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["train_set", "test_set", "auc", "accuracy", "sensitivity", "specificity", "threshold"])
        .map_err(csv_error)?;
    for c in &report.cells {
        w.write_record([
            c.train_set.to_string(),
            c.test_set.to_string(),
            c.auc.to_string(),
            c.accuracy.to_string(),
            c.sensitivity.to_string(),
            c.specificity.to_string(),
            c.threshold.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))
}

fn lesion_csv(report: &EvalReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["lesion_id".to_string(), "patient_id".into(), "label".into(), "fold".into()];
    header.extend(report.cells.iter().map(|c| format!("p_{}", c.id())));
    w.write_record(&header).map_err(csv_error)?;
    for (i, l) in report.lesions.iter().enumerate() {
        let mut row = vec![l.lesion_id.clone(), l.patient_id.clone(), l.label.as_str().to_string(), l.fold.to_string()];
        row.extend(report.cells.iter().map(|c| c.probabilities[i].to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))
}

fn svg_open(title: &str) -> String {
    let size = PLOT + 2.0 * PAD;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <rect class=\"frame\" x=\"{PAD}\" y=\"{PAD}\" width=\"{PLOT}\" height=\"{PLOT}\" fill=\"none\" stroke=\"black\"/>\n",
        size / 2.0,
        PAD / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axis_labels(svg: &mut String, x: &str, y: &str) {
    let size = PLOT + 2.0 * PAD;
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        size / 2.0,
        size - PAD / 4.0,
        escape(x)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 {} {})\">{}</text>",
        PAD / 3.0,
        size / 2.0,
        PAD / 3.0,
        size / 2.0,
        escape(y)
    );
}

pub fn roc_svg(cell: &CellResult) -> String {
    let to_x = |fpr: f64| PAD + fpr * PLOT;
    let to_y = |tpr: f64| PAD + (1.0 - tpr) * PLOT;
    let mut svg = svg_open(&format!(
        "Train {} / Test {}: AUC = {:.3}",
        cell.train_set, cell.test_set, cell.auc
    ));
    let _ = writeln!(
        svg,
        "<path class=\"chance\" d=\"M {} {} L {} {}\" stroke=\"gray\" stroke-dasharray=\"4 4\" fill=\"none\"/>",
        to_x(0.0),
        to_y(0.0),
        to_x(1.0),
        to_y(1.0)
    );
    let points: Vec<String> = cell
        .roc
        .points
        .iter()
        .map(|p| format!("{:.3},{:.3}", to_x(p.fpr), to_y(p.tpr)))
        .collect();
    let _ = writeln!(
        svg,
        "<polyline class=\"roc\" points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>",
        points.join(" ")
    );
    let op_fpr = 1.0 - cell.specificity;
    let _ = writeln!(
        svg,
        "<circle class=\"operating-point\" cx=\"{:.3}\" cy=\"{:.3}\" r=\"4\" fill=\"crimson\"/>",
        to_x(op_fpr),
        to_y(cell.sensitivity)
    );
    axis_labels(&mut svg, "1 - specificity", "sensitivity");
    svg.push_str("</svg>\n");
    svg
}

pub fn bland_altman_svg(pair: &AgreementResult) -> String {
    let s = &pair.stats;
    let ys = s
        .points
        .iter()
        .map(|p| p.1)
        .chain([s.loa_low, s.loa_high, s.mean_diff]);
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let span = (hi - lo).max(1e-3);
    let (lo, hi) = (lo - 0.1 * span, hi + 0.1 * span);
    let to_x = |m: f64| PAD + m.clamp(0.0, 1.0) * PLOT;
    let to_y = |d: f64| PAD + (hi - d) / (hi - lo) * PLOT;

    let mut svg = svg_open(&format!("Agreement: {} vs {}", pair.a, pair.b));
    for &(m, d) in &s.points {
        let _ = writeln!(
            svg,
            "<circle class=\"point\" cx=\"{:.3}\" cy=\"{:.3}\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.7\"/>",
            to_x(m),
            to_y(d)
        );
    }
    for (class, value, dash) in [("mean", s.mean_diff, ""), ("loa-low", s.loa_low, " stroke-dasharray=\"6 4\""), ("loa-high", s.loa_high, " stroke-dasharray=\"6 4\"")] {
        let y = to_y(value);
        let _ = writeln!(
            svg,
            "<line class=\"ref {class}\" x1=\"{PAD}\" y1=\"{y:.3}\" x2=\"{}\" y2=\"{y:.3}\" stroke=\"crimson\"{dash}/>",
            PAD + PLOT
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.3}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{value:.4}</text>",
            PAD + PLOT - 2.0,
            y - 3.0
        );
    }
    axis_labels(&mut svg, "mean probability", "difference");
    svg.push_str("</svg>\n");
    svg
}
