//! Run configuration: a flat `section.key = value` text file holding every
//! path, seed and hyperparameter of a train → attack → detect run.
//!
//! Lines starting with `#` are comments. Unknown or repeated keys are errors.
//! Relative paths are resolved against the directory of the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attacks::{AttackConfig, AttackObjective};
use crate::classifier::TrainConfig;
use crate::detector::{validate_theta, DetectionConfig, FilterKind, DEFAULT_THETA};
use crate::error::{Error, Result};
use crate::filters::KernelSize;
use crate::image::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct PathsSection {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub params: PathBuf,
    pub benchmark_dir: PathBuf,
    pub reports_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Test accuracy below this fails the run.
    pub min_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSection {
    pub epsilon: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub origin_digit: Label,
    pub targets: Vec<Label>,
    pub benign_count: usize,
    /// Seeds the benign selection and the benchmark shuffle.
    pub seed: u64,
    pub objective: AttackObjective,
}

/// Which detectors a detection run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterSelection {
    Dsg,
    Dsm,
    Both,
}

impl FilterSelection {
    pub fn kinds(self) -> Vec<FilterKind> {
        match self {
            FilterSelection::Dsg => vec![FilterKind::Dsg],
            FilterSelection::Dsm => vec![FilterKind::Dsm],
            FilterSelection::Both => FilterKind::ALL.to_vec(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterSelection::Dsg => "dsg",
            FilterSelection::Dsm => "dsm",
            FilterSelection::Both => "both",
        }
    }
}

impl FromStr for FilterSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dsg" => Ok(FilterSelection::Dsg),
            "dsm" => Ok(FilterSelection::Dsm),
            "both" => Ok(FilterSelection::Both),
            other => Err(Error::Config(format!("filter must be dsg, dsm or both, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSection {
    pub filter: FilterSelection,
    pub theta: f64,
    pub dsg_kernel_sizes: BTreeSet<KernelSize>,
    pub dsm_kernel_sizes: BTreeSet<KernelSize>,
    pub sigma: BTreeMap<KernelSize, f64>,
    /// Also report the detector that fires when either filter fires.
    pub joint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub detection: DetectionSection,
}

fn label(i: usize) -> Label {
    Label::new(i).expect("digit in range")
}

fn size(k: usize) -> KernelSize {
    KernelSize::new(k).expect("odd size")
}

impl RunConfig {
    /// Defaults with paths under `base`.
    pub fn defaults(base: &Path) -> Self {
        let mnist = base.join("data").join("mnist");
        let out = base.join("out");
        let sizes: BTreeSet<KernelSize> = [size(3), size(5)].into();
        Self {
            paths: PathsSection {
                train_images: mnist.join("train-images-idx3-ubyte"),
                train_labels: mnist.join("train-labels-idx1-ubyte"),
                test_images: mnist.join("t10k-images-idx3-ubyte"),
                test_labels: mnist.join("t10k-labels-idx1-ubyte"),
                params: out.join("classifier.fsvp"),
                benchmark_dir: out.join("benchmark"),
                reports_dir: out.join("reports"),
            },
            train: TrainSection {
                epochs: 15,
                batch_size: 32,
                learning_rate: 0.05,
                seed: 1,
                min_accuracy: 0.97,
            },
            attack: AttackSection {
                epsilon: 0.3,
                alpha: 0.01,
                epochs: 500,
                origin_digit: label(0),
                targets: (1..10).map(label).collect(),
                benign_count: 200,
                seed: 7,
                objective: AttackObjective::DescendTarget,
            },
            detection: DetectionSection {
                filter: FilterSelection::Both,
                theta: DEFAULT_THETA,
                sigma: sizes.iter().map(|&k| (k, k.default_sigma())).collect(),
                dsg_kernel_sizes: sizes.clone(),
                dsm_kernel_sizes: sizes,
                joint: false,
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text on top of [`RunConfig::defaults`] and validates it.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::defaults(base);
        let mut seen = BTreeSet::new();
        let mut sigma_given = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key {key}")));
            }
            if key.starts_with("detection.sigma.") && !sigma_given {
                cfg.detection.sigma.clear();
                sigma_given = true;
            }
            cfg.set(key, value, base).map_err(|e| at(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || base.join(value);
        match key {
            "paths.train_images" => self.paths.train_images = path(),
            "paths.train_labels" => self.paths.train_labels = path(),
            "paths.test_images" => self.paths.test_images = path(),
            "paths.test_labels" => self.paths.test_labels = path(),
            "paths.params" => self.paths.params = path(),
            "paths.benchmark_dir" => self.paths.benchmark_dir = path(),
            "paths.reports_dir" => self.paths.reports_dir = path(),
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = num(key, value)?,
            "train.seed" => self.train.seed = num(key, value)?,
            "train.min_accuracy" => self.train.min_accuracy = num(key, value)?,
            "attack.epsilon" => self.attack.epsilon = num(key, value)?,
            "attack.alpha" => self.attack.alpha = num(key, value)?,
            "attack.epochs" => self.attack.epochs = num(key, value)?,
            "attack.origin_digit" => self.attack.origin_digit = Label::new(num(key, value)?)?,
            "attack.targets" => {
                self.attack.targets = list(key, value)?.into_iter().map(Label::new).collect::<Result<_>>()?
            }
            "attack.benign_count" => self.attack.benign_count = num(key, value)?,
            "attack.seed" => self.attack.seed = num(key, value)?,
            "attack.direction" => {
                self.attack.objective = match value {
                    "targeted" => AttackObjective::DescendTarget,
                    "ascend_true" => AttackObjective::AscendTrue,
                    other => return Err(Error::Config(format!("attack.direction must be targeted or ascend_true, got {other:?}"))),
                }
            }
            "detection.filter" => self.detection.filter = value.parse()?,
            "detection.theta" => self.detection.theta = num(key, value)?,
            "detection.dsg.kernel_sizes" => self.detection.dsg_kernel_sizes = sizes(key, value)?,
            "detection.dsm.kernel_sizes" => self.detection.dsm_kernel_sizes = sizes(key, value)?,
            "detection.joint" => self.detection.joint = num(key, value)?,
            other => match other.strip_prefix("detection.sigma.") {
                Some(k) => {
                    let k = KernelSize::new(num(key, k)?)?;
                    self.detection.sigma.insert(k, num(key, value)?);
                }
                None => return Err(Error::Config(format!("unknown key {other}"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if !(0.0..=1.0).contains(&self.train.min_accuracy) {
            return Err(Error::Config(format!("train.min_accuracy {} outside [0, 1]", self.train.min_accuracy)));
        }
        if self.attack.targets.is_empty() {
            return Err(Error::InvalidAttack("attack.targets is empty".into()));
        }
        if self.attack.targets.contains(&self.attack.origin_digit) {
            return Err(Error::TargetEqualsOrigin(self.attack.origin_digit.index()));
        }
        self.attack_config(self.attack.targets[0]).validate()?;
        validate_theta(self.detection.theta)?;
        for kind in FilterKind::ALL {
            self.detection_config(kind).validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.train.seed,
        }
    }

    pub fn attack_config(&self, target: Label) -> AttackConfig {
        AttackConfig {
            epsilon: self.attack.epsilon,
            alpha: self.attack.alpha,
            max_epochs: self.attack.epochs,
            target,
            objective: self.attack.objective,
        }
    }

    pub fn detection_config(&self, kind: FilterKind) -> DetectionConfig {
        let kernel_sizes = match kind {
            FilterKind::Dsg => self.detection.dsg_kernel_sizes.clone(),
            FilterKind::Dsm => self.detection.dsm_kernel_sizes.clone(),
        };
        DetectionConfig {
            filter_kind: kind,
            sigma_per_size: match kind {
                FilterKind::Dsg => self.detection.sigma.clone(),
                FilterKind::Dsm => BTreeMap::new(),
            },
            kernel_sizes,
            theta: self.detection.theta,
        }
    }

    /// Serializes every key; parsing the output yields an equal config.
    pub fn to_text(&self) -> String {
        let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(",");
        let p = &self.paths;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("paths.train_images", p.train_images.display().to_string());
        kv("paths.train_labels", p.train_labels.display().to_string());
        kv("paths.test_images", p.test_images.display().to_string());
        kv("paths.test_labels", p.test_labels.display().to_string());
        kv("paths.params", p.params.display().to_string());
        kv("paths.benchmark_dir", p.benchmark_dir.display().to_string());
        kv("paths.reports_dir", p.reports_dir.display().to_string());
        let t = &self.train;
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.min_accuracy", t.min_accuracy.to_string());
        let a = &self.attack;
        kv("attack.epsilon", a.epsilon.to_string());
        kv("attack.alpha", a.alpha.to_string());
        kv("attack.epochs", a.epochs.to_string());
        kv("attack.origin_digit", a.origin_digit.to_string());
        kv("attack.targets", join(&mut a.targets.iter().map(|l| l.to_string())));
        kv("attack.benign_count", a.benign_count.to_string());
        kv("attack.seed", a.seed.to_string());
        kv(
            "attack.direction",
            match a.objective {
                AttackObjective::DescendTarget => "targeted",
                AttackObjective::AscendTrue => "ascend_true",
            }
            .into(),
        );
        let d = &self.detection;
        kv("detection.filter", d.filter.name().into());
        kv("detection.theta", d.theta.to_string());
        kv("detection.dsg.kernel_sizes", join(&mut d.dsg_kernel_sizes.iter().map(|k| k.to_string())));
        kv("detection.dsm.kernel_sizes", join(&mut d.dsm_kernel_sizes.iter().map(|k| k.to_string())));
        for (k, s) in &d.sigma {
            kv(&format!("detection.sigma.{k}"), s.to_string());
        }
        kv("detection.joint", d.joint.to_string());
        out
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn sizes(key: &str, value: &str) -> Result<BTreeSet<KernelSize>> {
    list(key, value)?.into_iter().map(KernelSize::new).collect()
}
