use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use advsieve::config::RunConfig;
use advsieve::dataset::{encode_idx_images, encode_idx_labels};

/// Ten easily separable classes: digit `d` is a bar at column `2d + 4`.
fn write_digits(dir: &Path, per_class: usize) {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class {
        for d in 0..10u8 {
            let mut img = vec![0u8; 784];
            let col = 2 * d as usize + 4;
            for row in 4..24 {
                img[row * 28 + col] = 255;
                img[row * 28 + col + 1] = 200 + (i % 50) as u8;
            }
            images.push(img);
            labels.push(d);
        }
    }
    for prefix in ["train", "t10k"] {
        fs::write(dir.join(format!("{prefix}-images")), encode_idx_images(28, 28, &images)).unwrap();
        fs::write(dir.join(format!("{prefix}-labels")), encode_idx_labels(&labels)).unwrap();
    }
}

const BASE_CONFIG: &str = "\
paths.train_images = train-images
paths.train_labels = train-labels
paths.test_images = t10k-images
paths.test_labels = t10k-labels
paths.params = out/params.fsvp
paths.benchmark_dir = out/bench
paths.reports_dir = out/reports
train.epochs = 4
train.min_accuracy = 0.5
attack.benign_count = 5
attack.targets = 1,2,3
attack.epochs = 40
attack.alpha = 0.05
";

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_digits(dir.path(), 30);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("{BASE_CONFIG}{extra}")).unwrap();
    (dir, cfg)
}

fn advsieve(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advsieve"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn run_all(cfg: &Path) {
    ok(advsieve(cfg, &["train"]));
    ok(advsieve(cfg, &["attack"]));
    ok(advsieve(cfg, &["detect"]));
    ok(advsieve(cfg, &["sweep"]));
}

#[test]
fn missing_labels_file_names_the_path() {
    let (dir, cfg) = setup("");
    fs::remove_file(dir.path().join("train-labels")).unwrap();
    let out = advsieve(&cfg, &["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-labels"));
}

#[test]
fn origin_in_target_set_is_rejected() {
    let (_dir, cfg) = setup("attack.origin_digit = 3\n");
    let out = advsieve(&cfg, &["attack"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("target label 3"));
}

#[test]
fn invalid_arguments_exit_with_validation_status() {
    let (_dir, cfg) = setup("");
    assert_eq!(advsieve(&cfg, &["detect", "--theta", "1.5"]).status.code(), Some(1));
    assert_eq!(advsieve(&cfg, &["detect", "--filter", "box"]).status.code(), Some(1));
    assert_eq!(advsieve(&cfg, &["no-such-verb"]).status.code(), Some(1));
}

#[test]
fn corrupt_params_is_an_input_error() {
    let (dir, cfg) = setup("");
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/params.fsvp"), b"not a parameter file").unwrap();
    let out = advsieve(&cfg, &["attack"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.fsvp"));
}

#[test]
fn accuracy_floor_sets_quality_status() {
    let (_dir, cfg) = setup("train.learning_rate = 0.000001\n");
    let text = fs::read_to_string(&cfg).unwrap().replace("train.min_accuracy = 0.5", "train.min_accuracy = 1");
    fs::write(&cfg, text).unwrap();
    let out = advsieve(&cfg, &["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("below the required 1"));
}

#[test]
fn show_config_round_trips() {
    let (dir, cfg) = setup("detection.theta = 0.92\n");
    let text = ok(advsieve(&cfg, &["show-config", "--seed", "99"]));
    let parsed = RunConfig::parse(&text, dir.path()).unwrap();
    assert_eq!(parsed.detection.theta, 0.92);
    assert_eq!(parsed.train.seed, 99);
    assert_eq!(parsed.attack.seed, 99);
    assert_eq!(parsed.to_text(), text);
}

#[test]
fn full_pipeline_and_threshold_extremes() {
    let (dir, cfg) = setup("");
    run_all(&cfg);
    let reports = dir.path().join("out/reports");
    for name in [
        "attack_log.txt",
        "verdicts_dsg.txt",
        "verdicts_dsm.txt",
        "report_dsg.txt",
        "report_dsm.csv",
        "sweep_dsg.csv",
        "sweep_dsm/theta_0.50.csv",
    ] {
        assert!(reports.join(name).exists(), "{name}");
    }
    assert!(dir.path().join("out/bench/manifest.txt").exists());
    let log = fs::read_to_string(reports.join("attack_log.txt")).unwrap();
    assert_eq!(log.lines().count(), 1 + 5 * 3);

    let report = fs::read_to_string(reports.join("report_dsg.txt")).unwrap();
    assert!(report.contains("F1 score"));
    let before = fs::read(reports.join("report_dsg.csv")).unwrap();
    ok(advsieve(&cfg, &["evaluate"]));
    assert_eq!(fs::read(reports.join("report_dsg.csv")).unwrap(), before);

    // A threshold close to 1 flags almost nothing.
    ok(advsieve(&cfg, &["evaluate", "--theta", "0.999"]));
    let csv = fs::read_to_string(reports.join("report_dsg.csv")).unwrap();
    let count = |key: &str| -> u64 {
        csv.lines()
            .find_map(|l| l.strip_prefix(&format!("{key},")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(count("tp") + count("fp") <= 1, "{csv}");

    // Rebuilding from the corpus reproduces the benchmark.
    let bench = files_under(&dir.path().join("out/bench"));
    ok(advsieve(&cfg, &["build-bench"]));
    assert_eq!(files_under(&dir.path().join("out/bench")), bench);
}

#[test]
fn zero_budget_gives_benign_only_benchmark() {
    let (dir, cfg) = setup("attack.epsilon = 0\n");
    ok(advsieve(&cfg, &["train"]));
    let out = advsieve(&cfg, &["attack"]);
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    let stdout = ok(out);
    assert!(stdout.contains("attacks succeeded: 0/15"), "{stdout}");
    assert!(stderr.contains("epsilon is 0"), "{stderr}");
    let manifest = fs::read_to_string(dir.path().join("out/bench/manifest.txt")).unwrap();
    assert!(!manifest.contains("adversarial"));
    assert_eq!(manifest.lines().filter(|l| l.contains("benign")).count(), 5);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, cfg_a) = setup("");
    let (b, cfg_b) = setup("");
    run_all(&cfg_a);
    run_all(&cfg_b);
    let fa = files_under(&a.path().join("out"));
    let fb = files_under(&b.path().join("out"));
    assert!(!fa.is_empty());
    assert_eq!(fa.len(), fb.len());
    for ((pa, ca), (pb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        assert!(ca == cb, "{} differs", pa.display());
    }
}
