use std::path::Path;

use usbmode::cli::run;

fn usbmode(args: &[&str]) -> i32 {
    run(std::iter::once("usbmode").chain(args.iter().copied()))
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn phantom(dir: &Path, seed: &str) {
    let out = dir.to_str().unwrap();
    let code = usbmode(&["phantom", "--benign", "6", "--malignant", "6", "--seed", seed, "--rows", "128", "--cols", "80", "--out", out]);
    assert_eq!(code, 0);
}

#[test]
fn phantom_writes_manifest_and_run_config() {
    let dir = tempfile::tempdir().unwrap();
    let code = usbmode(&["phantom", "--benign", "2", "--malignant", "2", "--seed", "7", "--rows", "96", "--cols", "64", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(dir.path().join("manifest.json").is_file());
    let cfg: serde_json::Value = serde_json::from_slice(&read(dir.path().join("run_config.json"))).unwrap();
    assert_eq!(cfg["command"]["phantom"]["seed"], 7);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(usbmode(&["run-grid", "--out", "x"]), 1);
    assert_eq!(usbmode(&["phantom", "--bogus"]), 1);
    assert_eq!(usbmode(&["--help"]), 0);
}

#[test]
fn validation_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(usbmode(&["phantom", "--benign", "0", "--malignant", "2", "--out", out]), 1);
    let missing = dir.path().join("missing.json");
    assert_eq!(usbmode(&["reconstruct", "--in", missing.to_str().unwrap(), "--out", out]), 2);
}

#[test]
fn reconstruct_writes_one_pgm_per_scan() {
    let data = tempfile::tempdir().unwrap();
    phantom(data.path(), "3");
    let out = tempfile::tempdir().unwrap();
    let code = usbmode(&["reconstruct", "--in", data.path().to_str().unwrap(), "--threshold", "40", "--amax-scope", "dataset", "--out", out.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let pgm = read(out.path().join("L0000_s1_40dB.pgm"));
    assert!(pgm.starts_with(b"P5\n80 128\n255\n"));
    let count = std::fs::read_dir(out.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count();
    assert_eq!(count, 24);
}

#[test]
fn pipeline_is_reproducible_across_worker_counts() {
    let data = tempfile::tempdir().unwrap();
    phantom(data.path(), "5");
    let data_s = data.path().to_str().unwrap();
    let grid = |out: &Path, workers: &str| {
        let code = usbmode(&[
            "--workers", workers, "run-grid", "--data", data_s, "--folds", "3", "--margins", "2,5", "--seed", "9", "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    grid(a.path(), "1");
    grid(b.path(), "3");
    for f in ["grid.csv", "lesion_probabilities.csv", "report.json", "summary.json", "roc_40_40.svg", "bland_altman_40_40_vs_60_60.svg", "features/baseline.usfeat"] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f}");
    }
    let csv = String::from_utf8(read(a.path().join("grid.csv"))).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "train_set,test_set,auc,accuracy,sensitivity,specificity,threshold");
    assert_eq!(lines.count(), 16);

    // warm cache gives the same report
    grid(a.path(), "1");
    assert_eq!(read(a.path().join("report.json")), read(b.path().join("report.json")));

    let again = tempfile::tempdir().unwrap();
    let code = usbmode(&["report", "--in", a.path().join("report.json").to_str().unwrap(), "--out", again.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    for f in ["grid.csv", "report.json", "roc_ALL_50.svg"] {
        assert_eq!(read(a.path().join(f)), read(again.path().join(f)), "{f}");
    }
}

#[test]
fn convert_reads_mat_table() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mat");
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    let plain = fixtures.join("double_plain.mat");
    let zlib = fixtures.join("double_zlib.mat");
    std::fs::write(
        &table,
        format!("lesion_id,patient_id,label,mat_file\nA,P1,benign,{}\nB,P2,malignant,{}\n", plain.display(), zlib.display()),
    )
    .unwrap();
    let out = dir.path().join("ds");
    let code = usbmode(&[
        "convert", "--table", table.to_str().unwrap(), "--sampling-rate-hz", "40e6", "--lateral-mm-per-line", "0.2", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let ds = usbmode::data::load_dataset(&out).unwrap();
    assert_eq!(ds.lesions.len(), 2);
    assert_eq!(ds.lesions[1].scans[0].frame.samples, ds.lesions[0].scans[0].frame.samples);
    assert_eq!(ds.lesions[0].scans[0].mask.mask.iter().filter(|&&m| m).count(), 400);

    std::fs::write(&table, format!("lesion_id,patient_id,label,mat_file\nA,P1,weird,{}\n", plain.display())).unwrap();
    let code = usbmode(&["convert", "--table", table.to_str().unwrap(), "--sampling-rate-hz", "40e6", "--lateral-mm-per-line", "0.2", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1);
}
