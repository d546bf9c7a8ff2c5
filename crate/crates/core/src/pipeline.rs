//! End-to-end commands over a [`RunConfig`]: train, attack, build the
//! benchmark, detect, evaluate and sweep. Every output lands under the
//! configured directories with fixed file names, and identical inputs give
//! byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attacks::{craft_benchmark_adversarials, format_attack_log};
use crate::classifier::{accuracy, load_params, save_params, train};
use crate::config::RunConfig;
use crate::dataset::{
    build_benchmark, load_idx, parse_manifest, select_digit, BenchmarkSet, GroundTruth, MANIFEST_FILE,
};
use crate::detector::{
    detect_batch, format_verdicts, parse_verdicts, theta_grid, Decision, FilterKind, VerdictRecord,
};
use crate::error::{Error, Result};
use crate::metrics::{format_table, score, ScoreReport, UNDEFINED};

pub const ATTACK_LOG_FILE: &str = "attack_log.txt";
pub const CORPUS_DIR: &str = "corpus";
/// Number of equal steps the sweep divides `(0, 1)` into.
pub const SWEEP_STEPS: u32 = 20;

pub fn verdicts_file(kind: FilterKind) -> String {
    format!("verdicts_{kind}.txt")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub train_size: usize,
    pub test_accuracy: f64,
    pub params_path: PathBuf,
}

/// Trains, records the test accuracy in the parameter file, and saves it.
/// A run below `train.min_accuracy` still saves, then fails.
pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let p = &cfg.paths;
    let train_set = load_idx(&p.train_images, &p.train_labels)?;
    let test_set = load_idx(&p.test_images, &p.test_labels)?;
    let mut params = train(&train_set, &cfg.train_config())?;
    let test_accuracy = accuracy(&params, &test_set)?;
    params.metadata.test_accuracy = Some(test_accuracy);
    save_params(&params, &p.params)?;
    if test_accuracy < cfg.train.min_accuracy {
        return Err(Error::BelowFloor {
            what: "test accuracy",
            value: test_accuracy,
            floor: cfg.train.min_accuracy,
        });
    }
    Ok(TrainSummary {
        train_size: train_set.len(),
        test_accuracy,
        params_path: p.params.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct AttackSummary {
    pub benign: usize,
    pub attempted: usize,
    pub succeeded: usize,
    pub benchmark_len: usize,
}

/// Selects the benign images, attacks each toward every target, and writes
/// the attack log, the unshuffled corpus and the shuffled benchmark.
pub fn run_attack(cfg: &RunConfig) -> Result<AttackSummary> {
    cfg.validate()?;
    let p = &cfg.paths;
    let params = load_params(&p.params)?;
    let test_set = load_idx(&p.test_images, &p.test_labels)?;
    let a = &cfg.attack;
    let benign = select_digit(&test_set, a.origin_digit, a.benign_count, a.seed)?;
    if a.epsilon == 0.0 {
        log::warn!("attack.epsilon is 0: no attack can succeed and the benchmark will be benign only");
    }
    let outcome = craft_benchmark_adversarials(&params, &benign, &a.targets, &cfg.attack_config(a.targets[0]))?;
    write(&p.reports_dir.join(ATTACK_LOG_FILE), format_attack_log(&outcome.log))?;
    BenchmarkSet::unshuffled(&benign, &outcome.records)?.save(&p.reports_dir.join(CORPUS_DIR))?;
    let bench = build_benchmark(&benign, &outcome.records, a.seed)?;
    bench.save(&p.benchmark_dir)?;
    if outcome.succeeded() == 0 {
        log::warn!("no attack succeeded");
    }
    Ok(AttackSummary {
        benign: benign.len(),
        attempted: outcome.attempted(),
        succeeded: outcome.succeeded(),
        benchmark_len: bench.len(),
    })
}

/// Rebuilds the shuffled benchmark from the corpus written by [`run_attack`].
pub fn run_build_bench(cfg: &RunConfig) -> Result<BenchmarkSet> {
    cfg.validate()?;
    let corpus = BenchmarkSet::load(&cfg.paths.reports_dir.join(CORPUS_DIR))?;
    let (benign, adversarials) = corpus.split()?;
    let bench = build_benchmark(&benign, &adversarials, cfg.attack.seed)?;
    bench.save(&cfg.paths.benchmark_dir)?;
    Ok(bench)
}

/// Scores of one detector (or the joint detector) over the benchmark.
#[derive(Debug, Clone)]
pub struct DetectorReport {
    /// `dsg`, `dsm` or `joint`.
    pub name: String,
    pub report: ScoreReport,
}

fn write_reports(reports_dir: &Path, reports: &[DetectorReport]) -> Result<()> {
    for r in reports {
        let title = r.name.to_uppercase();
        write(&reports_dir.join(format!("report_{}.txt", r.name)), format_table(&[(title.as_str(), &r.report)]))?;
        write(&reports_dir.join(format!("report_{}.csv", r.name)), r.report.to_csv())?;
    }
    Ok(())
}

fn score_records(
    truth: &BTreeMap<usize, GroundTruth>,
    records: &[VerdictRecord],
    decide: impl Fn(&VerdictRecord) -> Decision,
) -> Result<ScoreReport> {
    if records.len() != truth.len() {
        return Err(Error::Config(format!(
            "{} verdicts for a benchmark of {} samples",
            records.len(),
            truth.len()
        )));
    }
    let pairs = records
        .iter()
        .map(|r| {
            truth.get(&r.id).map(|&t| (t, decide(r))).ok_or_else(|| Error::BenchmarkRecord {
                id: r.id,
                reason: "verdict for a sample not in the benchmark".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    score(pairs)
}

fn joint_report(
    cfg: &RunConfig,
    truth: &BTreeMap<usize, GroundTruth>,
    per_kind: &BTreeMap<FilterKind, Vec<VerdictRecord>>,
) -> Result<Option<DetectorReport>> {
    let (Some(g), Some(m)) = (per_kind.get(&FilterKind::Dsg), per_kind.get(&FilterKind::Dsm)) else {
        return Ok(None);
    };
    if !cfg.detection.joint {
        return Ok(None);
    }
    let theta = cfg.detection.theta;
    let m_by_id: BTreeMap<usize, &VerdictRecord> = m.iter().map(|r| (r.id, r)).collect();
    let report = score_records(truth, g, |r| {
        let other = m_by_id.get(&r.id).map_or(Decision::Benign, |o| Decision::from_diff(o.diff, theta));
        match (Decision::from_diff(r.diff, theta), other) {
            (Decision::Benign, Decision::Benign) => Decision::Benign,
            _ => Decision::Adversarial,
        }
    })?;
    Ok(Some(DetectorReport {
        name: "joint".into(),
        report,
    }))
}

fn truth_map(bench: &BenchmarkSet) -> BTreeMap<usize, GroundTruth> {
    bench.samples().iter().map(|s| (s.id, s.truth)).collect()
}

/// Runs the selected detectors over the benchmark and writes
/// `verdicts_<kind>.txt` plus `report_<kind>.{txt,csv}`.
pub fn run_detect(cfg: &RunConfig) -> Result<Vec<DetectorReport>> {
    cfg.validate()?;
    let params = load_params(&cfg.paths.params)?;
    let bench = BenchmarkSet::load(&cfg.paths.benchmark_dir)?;
    let truth = truth_map(&bench);
    let mut per_kind = BTreeMap::new();
    let mut reports = Vec::new();
    for kind in cfg.detection.filter.kinds() {
        let dcfg = cfg.detection_config(kind);
        let verdicts = detect_batch(&params, &bench, &dcfg)?;
        let records: Vec<VerdictRecord> = verdicts.iter().map(|(id, v)| v.record(*id)).collect();
        write(&cfg.paths.reports_dir.join(verdicts_file(kind)), format_verdicts(&records))?;
        let report = score_records(&truth, &records, |r| r.decision)?.with_config(dcfg);
        reports.push(DetectorReport {
            name: kind.to_string(),
            report,
        });
        per_kind.insert(kind, records);
    }
    if let Some(j) = joint_report(cfg, &truth, &per_kind)? {
        reports.push(j);
    }
    write_reports(&cfg.paths.reports_dir, &reports)?;
    Ok(reports)
}

/// Rescores saved verdict files against the benchmark manifest at the
/// configured Θ, rewriting the report files.
pub fn run_evaluate(cfg: &RunConfig) -> Result<Vec<DetectorReport>> {
    cfg.validate()?;
    let manifest_path = cfg.paths.benchmark_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let (_, rows) = parse_manifest(&text, &manifest_path)?;
    let truth: BTreeMap<usize, GroundTruth> = rows.iter().map(|r| (r.id, r.truth)).collect();
    let theta = cfg.detection.theta;
    let mut per_kind = BTreeMap::new();
    let mut reports = Vec::new();
    for kind in cfg.detection.filter.kinds() {
        let path = cfg.paths.reports_dir.join(verdicts_file(kind));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let records: Vec<VerdictRecord> = parse_verdicts(&text, &path)?.iter().map(|r| r.rethreshold(theta)).collect();
        let report = score_records(&truth, &records, |r| r.decision)?.with_config(cfg.detection_config(kind));
        reports.push(DetectorReport {
            name: kind.to_string(),
            report,
        });
        per_kind.insert(kind, records);
    }
    if let Some(j) = joint_report(cfg, &truth, &per_kind)? {
        reports.push(j);
    }
    write_reports(&cfg.paths.reports_dir, &reports)?;
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub kind: FilterKind,
    /// One report per Θ, ascending.
    pub points: Vec<(f64, ScoreReport)>,
}

fn theta_name(theta: f64) -> String {
    format!("{theta:.2}")
}

fn show(r: Option<crate::metrics::Ratio>) -> String {
    r.map_or_else(|| UNDEFINED.to_string(), |r| r.value().to_string())
}

/// Detects once per selected filter, then scores the verdicts at every
/// `Θ = k/20`. Writes `sweep_<kind>/theta_<Θ>.csv` and a `sweep_<kind>.csv`
/// summary.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepResult>> {
    cfg.validate()?;
    let params = load_params(&cfg.paths.params)?;
    let bench = BenchmarkSet::load(&cfg.paths.benchmark_dir)?;
    let truth = truth_map(&bench);
    let mut results = Vec::new();
    for kind in cfg.detection.filter.kinds() {
        let base_cfg = cfg.detection_config(kind);
        let records: Vec<VerdictRecord> = detect_batch(&params, &bench, &base_cfg)?
            .iter()
            .map(|(id, v)| v.record(*id))
            .collect();
        let dir = cfg.paths.reports_dir.join(format!("sweep_{kind}"));
        let mut summary = String::from("theta,tp,tn,fp,fn,accuracy,precision,recall,f1\n");
        let mut points = Vec::new();
        for theta in theta_grid(SWEEP_STEPS) {
            let mut dcfg = base_cfg.clone();
            dcfg.theta = theta;
            let report = score_records(&truth, &records, |r| Decision::from_diff(r.diff, theta))?.with_config(dcfg);
            write(&dir.join(format!("theta_{}.csv", theta_name(theta))), report.to_csv())?;
            let m = report.matrix;
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{},{},{}",
                theta_name(theta),
                m.tp,
                m.tn,
                m.fp,
                m.fn_,
                report.accuracy.value(),
                show(report.precision),
                show(report.recall),
                show(report.f1)
            );
            points.push((theta, report));
        }
        write(&cfg.paths.reports_dir.join(format!("sweep_{kind}.csv")), summary)?;
        results.push(SweepResult { kind, points });
    }
    Ok(results)
}

/// Adversarial-verdict ids at one Θ, used to check sweep monotonicity.
pub fn flagged_ids(records: &[VerdictRecord], theta: f64) -> Vec<usize> {
    records
        .iter()
        .filter(|r| Decision::from_diff(r.diff, theta) == Decision::Adversarial)
        .map(|r| r.id)
        .collect()
}
