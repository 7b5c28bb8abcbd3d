//! Command-line front end. Exit codes: 0 success, 1 validation error
//! (including bad arguments), 2 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::manifest::write_file;
use crate::data::{self, Dataset, Label, LesionRecord, PixelGeometry, RfFrame, RoiMask, Scan, DEFAULT_SPEED_OF_SOUND};
use crate::error::{Error, Result};
use crate::evaluate::{self, report, ExperimentGrid, SetSpec};
use crate::features::cache::FeatureTable;
use crate::features::{Extractor, ExtractorSpec};
use crate::phantom::{self, PhantomConfig};
use crate::prep::VariantPlan;
use crate::reconstruct::{self, AmaxScope, CompressionConfig};
use crate::svm::SvmConfig;
use crate::{par, seed};

pub const RUN_CONFIG: &str = "run_config.json";
pub const WORKERS_ENV: &str = "USBMODE_WORKERS";

#[derive(Debug, Parser, Serialize)]
#[command(name = "usbmode", version, about = "B-mode reconstruction and lesion classification experiments")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Convert MAT-v5 files listed in a CSV table into the native dataset format.
    Convert(ConvertArgs),
    /// Generate a synthetic phantom dataset.
    Phantom(PhantomArgs),
    /// Write one B-mode PGM per scan.
    Reconstruct(ReconstructArgs),
    /// Build the feature cache for every image variant.
    Extract(ExtractArgs),
    /// Run the cross-validated train/test reconstruction grid.
    RunGrid(RunGridArgs),
    /// Re-emit report files from a saved report.json.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeArg {
    Frame,
    Dataset,
}

impl From<ScopeArg> for AmaxScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Frame => AmaxScope::PerFrame,
            ScopeArg::Dataset => AmaxScope::PerDataset,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    /// CSV with columns lesion_id,patient_id,label,mat_file (paths relative to the table).
    #[arg(long)]
    pub table: PathBuf,
    /// RF variable names for the two scans.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = ["rf1".to_string(), "rf2".to_string()])]
    pub rf_vars: Vec<String>,
    /// Mask variable names for the two scans.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = ["roi1".to_string(), "roi2".to_string()])]
    pub mask_vars: Vec<String>,
    #[arg(long)]
    pub sampling_rate_hz: f64,
    #[arg(long, default_value_t = DEFAULT_SPEED_OF_SOUND)]
    pub speed_of_sound: f64,
    #[arg(long)]
    pub lateral_mm_per_line: f64,
    #[arg(long, default_value = "converted")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PhantomArgs {
    #[arg(long)]
    pub benign: usize,
    #[arg(long)]
    pub malignant: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1024)]
    pub rows: usize,
    #[arg(long, default_value_t = 256)]
    pub cols: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    /// Dataset manifest or directory.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = ScopeArg::Frame)]
    pub amax_scope: ScopeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeatureArgs {
    /// Dataset manifest or directory.
    #[arg(long)]
    pub data: PathBuf,
    /// `baseline`, `inception`, `vgg`, or a path to an exported model directory.
    #[arg(long, default_value = "baseline")]
    pub extractor: String,
    /// Directory holding exported models (`inception_v3/`, `vgg19/`).
    #[arg(long, default_value = "models")]
    pub models_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [40.0, 50.0, 60.0])]
    pub thresholds: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 5.0, 10.0])]
    pub margins: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ScopeArg::Frame)]
    pub amax_scope: ScopeArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub features: FeatureArgs,
    /// Also compare a portable model against its reference features.
    #[arg(long)]
    pub check_reference: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RunGridArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub features: FeatureArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Root seed for folds and solver order.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = ["40".to_string(), "50".to_string(), "60".to_string(), "ALL".to_string()])]
    pub train_sets: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = ["40".to_string(), "50".to_string(), "60".to_string(), "ALL".to_string()])]
    pub test_sets: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iterations: usize,
    /// Solve on raw features instead of standardised ones.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// A report.json written by run-grid.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub parallel: bool,
    pub workers: Option<usize>,
    pub verbosity: i8,
    pub command: &'a Command,
    pub derived_seeds: Vec<(String, u64)>,
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(&cli);
    match par::with_workers(cli.workers, || execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn verbosity(cli: &Cli) -> i8 {
    if cli.quiet {
        -1
    } else {
        cli.verbose as i8
    }
}

fn init_logging(cli: &Cli) {
    let level = match verbosity(cli) {
        -1 => log::LevelFilter::Error,
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_env("USBMODE_LOG").try_init();
}

fn execute(cli: &Cli) -> Result<()> {
    let (out, derived_seeds) = match &cli.command {
        Command::Convert(a) => (&a.out, convert(a)?),
        Command::Phantom(a) => (&a.out, run_phantom(a)?),
        Command::Reconstruct(a) => (&a.out, run_reconstruct(a)?),
        Command::Extract(a) => (&a.out, run_extract(a)?),
        Command::RunGrid(a) => (&a.out, run_grid(a)?),
        Command::Report(a) => (&a.out, run_report(a)?),
    };
    let config = RunConfig {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        parallel: cfg!(feature = "parallel"),
        workers: cli.workers,
        verbosity: verbosity(cli),
        command: &cli.command,
        derived_seeds,
    };
    let mut bytes = serde_json::to_vec_pretty(&config)?;
    bytes.push(b'\n');
    write_file(&out.join(RUN_CONFIG), &bytes)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Deserialize)]
struct ConvertRow {
    lesion_id: String,
    patient_id: String,
    label: String,
    mat_file: PathBuf,
}

fn convert(a: &ConvertArgs) -> Result<Vec<(String, u64)>> {
    let geometry = PixelGeometry::new(a.sampling_rate_hz, a.speed_of_sound, a.lateral_mm_per_line)?;
    let base = a.table.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::Reader::from_path(&a.table).map_err(|e| Error::Manifest {
        path: a.table.clone(),
        message: e.to_string(),
    })?;
    let rows = reader
        .deserialize::<ConvertRow>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Manifest {
            path: a.table.clone(),
            message: e.to_string(),
        })?;
    let lesions = par::try_map(&rows, |row| -> Result<LesionRecord> {
        let path = base.join(&row.mat_file);
        let lesion_err = |message: String| Error::Lesion {
            lesion_id: row.lesion_id.clone(),
            path: path.clone(),
            message,
        };
        let label: Label = row.label.parse().map_err(|_| Error::UnknownLabel {
            lesion_id: row.lesion_id.clone(),
            path: path.clone(),
            label: row.label.clone(),
        })?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mat = data::parse_mat5(&bytes).map_err(|e| lesion_err(e.to_string()))?;
        for w in &mat.warnings {
            log::warn!("{}: {w}", path.display());
        }
        let scan = |k: usize| -> Result<Scan> {
            let rf = mat.get_f64(&a.rf_vars[k]).map_err(|e| lesion_err(e.to_string()))?;
            let mask = mat.get_f64(&a.mask_vars[k]).map_err(|e| lesion_err(e.to_string()))?;
            if rf.dim() != mask.dim() {
                return Err(Error::ShapeMismatch {
                    lesion_id: row.lesion_id.clone(),
                    path: path.clone(),
                    frame: rf.dim(),
                    mask: mask.dim(),
                });
            }
            let frame = RfFrame::new(
                rf.mapv(|v| v as f32),
                geometry,
                data::manifest::default_scan_id(&row.lesion_id, k),
            )
            .map_err(|e| lesion_err(e.to_string()))?;
            Ok(Scan {
                frame,
                mask: RoiMask::new(mask.mapv(|v| v != 0.0)),
            })
        };
        Ok(LesionRecord {
            lesion_id: row.lesion_id.clone(),
            patient_id: row.patient_id.clone(),
            label,
            scans: [scan(0)?, scan(1)?],
        })
    })?;
    let dataset = Dataset::new(a.name.clone(), lesions)?;
    data::write_dataset(&dataset, &a.out)?;
    Ok(Vec::new())
}

fn run_phantom(a: &PhantomArgs) -> Result<Vec<(String, u64)>> {
    let config = PhantomConfig {
        rows: a.rows,
        cols: a.cols,
        seed: a.seed,
        ..PhantomConfig::default()
    };
    let dataset = phantom::synth_dataset(a.benign, a.malignant, &config, a.seed)?;
    data::write_dataset(&dataset, &a.out)?;
    Ok(vec![("phantom".into(), a.seed)])
}

fn run_reconstruct(a: &ReconstructArgs) -> Result<Vec<(String, u64)>> {
    let dataset = data::load_dataset(&a.input)?;
    let mut config = CompressionConfig {
        a_max_scope: a.amax_scope.into(),
        ..CompressionConfig::new(a.threshold)
    };
    config.validate()?;
    if config.a_max_scope == AmaxScope::PerDataset {
        config = reconstruct::bind_dataset_amax(config, &dataset)?;
    }
    create_dir(&a.out)?;
    let scans: Vec<(&LesionRecord, &Scan)> = dataset.lesions.iter().flat_map(|l| l.scans.iter().map(move |s| (l, s))).collect();
    par::try_map(&scans, |(lesion, scan)| -> Result<()> {
        let mut image = reconstruct::reconstruct_bmode(&scan.frame, &config)?;
        image.lesion_id = Some(lesion.lesion_id.clone());
        image.write_pgm(a.out.join(format!("{}_{}dB.pgm", scan.frame.scan_id, a.threshold)))
    })?;
    Ok(Vec::new())
}

/// Resolve the `--extractor` value to a spec.
pub fn extractor_spec(name: &str, models_dir: &Path) -> Result<ExtractorSpec> {
    match name {
        "baseline" => Ok(ExtractorSpec::baseline()),
        "inception" | "inceptionv3" | "inception_v3" => ExtractorSpec::from_export(models_dir.join("inception_v3")),
        "vgg" | "vgg19" => ExtractorSpec::from_export(models_dir.join("vgg19")),
        path => ExtractorSpec::from_export(path),
    }
}

fn variant_plan(f: &FeatureArgs) -> Result<VariantPlan> {
    let mut plan = VariantPlan::new(&f.thresholds, &f.margins)?;
    plan.a_max_scope = f.amax_scope.into();
    Ok(plan)
}

pub fn feature_cache_path(out: &Path, extractor_id: &str) -> PathBuf {
    out.join("features").join(format!("{extractor_id}.usfeat"))
}

fn load_features(f: &FeatureArgs, out: &Path) -> Result<(Dataset, VariantPlan, FeatureTable)> {
    let dataset = data::load_dataset(&f.data)?;
    let plan = variant_plan(f)?;
    let extractor = Extractor::load(&extractor_spec(&f.extractor, &f.models_dir)?)?;
    let path = feature_cache_path(out, extractor.extractor_id());
    create_dir(path.parent().expect("has parent"))?;
    let table = evaluate::load_or_build_features(&dataset, &plan, &extractor, &path)?;
    Ok((dataset, plan, table))
}

fn run_extract(a: &ExtractArgs) -> Result<Vec<(String, u64)>> {
    if a.check_reference {
        let spec = extractor_spec(&a.features.extractor, &a.features.models_dir)?;
        if let Some(path) = &spec.model_path {
            let model = crate::features::portable::PortableModel::load(path)?;
            let deviation = model.reference_deviation()?;
            println!("{}: max |Δ| vs reference features = {deviation:e}", spec.extractor_id);
            if deviation > crate::features::portable::REFERENCE_TOLERANCE {
                return Err(Error::Model(format!(
                    "{} deviates from its reference features by {deviation:e}",
                    spec.extractor_id
                )));
            }
        }
    }
    load_features(&a.features, &a.out)?;
    Ok(Vec::new())
}

fn parse_sets(values: &[String]) -> Result<Vec<SetSpec>> {
    values.iter().map(|s| s.parse()).collect()
}

fn run_grid(a: &RunGridArgs) -> Result<Vec<(String, u64)>> {
    let train_sets = parse_sets(&a.train_sets)?;
    let test_sets = parse_sets(&a.test_sets)?;
    let fold_seed = seed::derive(a.seed, "folds", 0);
    let svm_seed = seed::derive(a.seed, "svm", 0);
    let svm = SvmConfig {
        c: a.c,
        max_iterations: a.max_iterations,
        seed: svm_seed,
        standardize: !a.no_standardize,
        ..SvmConfig::default()
    };
    svm.validate()?;
    let (dataset, plan, table) = load_features(&a.features, &a.out)?;
    let folds = evaluate::make_folds(&dataset, a.folds, fold_seed)?;
    let grid = ExperimentGrid::new(train_sets, test_sets, plan, folds);
    grid.validate()?;
    let report = evaluate::evaluate_table(&dataset, &grid, &table, &svm)?;
    report::emit_report(&report, &a.out)?;
    Ok(vec![("folds".into(), fold_seed), ("svm".into(), svm_seed)])
}

fn run_report(a: &ReportArgs) -> Result<Vec<(String, u64)>> {
    let report = report::read_report(&a.input)?;
    report::emit_report(&report, &a.out)?;
    Ok(Vec::new())
}
