//! Sieve detector: classify the raw image (the anchor pass), classify low-pass
//! filtered copies (the sieve passes), and flag the input as adversarial when
//! the anchor-class probability drops by more than Θ.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::classifier::ClassifierParams;
use crate::dataset::BenchmarkSet;
use crate::error::{Error, Result};
use crate::filters::{gaussian_kernel, GaussianSieve, KernelSize, MedianSieve, Sieve};
use crate::image::{Image, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FilterKind {
    /// Gaussian sieve.
    Dsg,
    /// Median sieve.
    Dsm,
}

impl FilterKind {
    pub const ALL: [FilterKind; 2] = [FilterKind::Dsg, FilterKind::Dsm];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Dsg => "dsg",
            FilterKind::Dsm => "dsm",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dsg" => Ok(FilterKind::Dsg),
            "dsm" => Ok(FilterKind::Dsm),
            other => Err(Error::InvalidDetection(format!("unknown filter kind {other:?}"))),
        }
    }
}

pub const DEFAULT_THETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionConfig {
    pub filter_kind: FilterKind,
    pub kernel_sizes: BTreeSet<KernelSize>,
    pub theta: f64,
    /// Gaussian σ per window size; ignored by the median sieve.
    pub sigma_per_size: BTreeMap<KernelSize, f64>,
}

impl DetectionConfig {
    /// Config with the default σ for every size.
    pub fn new(filter_kind: FilterKind, kernel_sizes: &[KernelSize], theta: f64) -> Self {
        Self {
            filter_kind,
            kernel_sizes: kernel_sizes.iter().copied().collect(),
            theta,
            sigma_per_size: kernel_sizes.iter().map(|&k| (k, k.default_sigma())).collect(),
        }
    }

    /// 3×3 and 5×5 windows at Θ = 0.1.
    pub fn standard(filter_kind: FilterKind) -> Self {
        let sizes = [3, 5].map(|k| KernelSize::new(k).expect("odd size"));
        Self::new(filter_kind, &sizes, DEFAULT_THETA)
    }

    pub fn validate(&self) -> Result<()> {
        validate_theta(self.theta)?;
        if self.kernel_sizes.is_empty() {
            return Err(Error::InvalidDetection("kernel size set is empty".into()));
        }
        if self.filter_kind == FilterKind::Dsg {
            for k in &self.kernel_sizes {
                match self.sigma_per_size.get(k) {
                    Some(s) if s.is_finite() && *s > 0.0 => {}
                    Some(s) => return Err(Error::InvalidDetection(format!("sigma {s} for {k}x{k} must be positive"))),
                    None => return Err(Error::InvalidDetection(format!("no sigma for {k}x{k} window"))),
                }
            }
        }
        Ok(())
    }

    /// One sieve per kernel size, in ascending size order.
    pub fn sieves(&self) -> Result<Vec<Box<dyn Sieve>>> {
        self.validate()?;
        self.kernel_sizes
            .iter()
            .map(|&k| -> Result<Box<dyn Sieve>> {
                Ok(match self.filter_kind {
                    FilterKind::Dsg => Box::new(GaussianSieve(gaussian_kernel(k, self.sigma_per_size[&k])?)),
                    FilterKind::Dsm => Box::new(MedianSieve(k)),
                })
            })
            .collect()
    }
}

pub fn validate_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidDetection(format!("theta {theta} outside (0, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Benign,
    Adversarial,
}

impl Decision {
    pub fn from_diff(diff: f64, theta: f64) -> Self {
        if diff > theta {
            Decision::Adversarial
        } else {
            Decision::Benign
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Decision::Benign => 0,
            Decision::Adversarial => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub decision: Decision,
    pub anchor_label: Label,
    pub anchor_prob: f64,
    pub min_sieve_prob: f64,
    /// `anchor_prob − min_sieve_prob`, signed.
    pub diff: f64,
    /// Anchor-label probability after each sieve.
    pub per_kernel_probs: BTreeMap<KernelSize, f64>,
}

impl Verdict {
    pub fn record(&self, id: usize) -> VerdictRecord {
        VerdictRecord {
            id,
            decision: self.decision,
            anchor_label: self.anchor_label,
            anchor_prob: self.anchor_prob,
            min_sieve_prob: self.min_sieve_prob,
            diff: self.diff,
        }
    }
}

pub fn detect_with_sieves(params: &ClassifierParams, x: &Image, sieves: &[Box<dyn Sieve>], theta: f64) -> Result<Verdict> {
    validate_theta(theta)?;
    if sieves.is_empty() {
        return Err(Error::InvalidDetection("no sieves".into()));
    }
    let anchor = params.forward_probs(x)?;
    let anchor_label = anchor.argmax();
    let anchor_prob = anchor.prob(anchor_label);
    let mut per_kernel_probs = BTreeMap::new();
    for sieve in sieves {
        let filtered = sieve.apply(x)?;
        per_kernel_probs.insert(sieve.kernel_size(), params.forward_probs(&filtered)?.prob(anchor_label));
    }
    let min_sieve_prob = per_kernel_probs.values().copied().fold(f64::INFINITY, f64::min);
    let diff = anchor_prob - min_sieve_prob;
    Ok(Verdict {
        decision: Decision::from_diff(diff, theta),
        anchor_label,
        anchor_prob,
        min_sieve_prob,
        diff,
        per_kernel_probs,
    })
}

pub fn detect_one(params: &ClassifierParams, x: &Image, cfg: &DetectionConfig) -> Result<Verdict> {
    detect_with_sieves(params, x, &cfg.sieves()?, cfg.theta)
}

/// One verdict per sample, ordered by sample id.
pub fn detect_batch(params: &ClassifierParams, bench: &BenchmarkSet, cfg: &DetectionConfig) -> Result<Vec<(usize, Verdict)>> {
    if bench.is_empty() {
        return Err(Error::EmptyInput("benchmark"));
    }
    let sieves = cfg.sieves()?;
    let mut out: Vec<(usize, Verdict)> = bench
        .samples()
        .par_iter()
        .map(|s| detect_with_sieves(params, &s.image, &sieves, cfg.theta).map(|v| (s.id, v)))
        .collect::<Result<_>>()?;
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}

/// Flags an input when either detector fires.
pub fn joint_decision(a: &Verdict, b: &Verdict) -> Decision {
    if a.decision == Decision::Adversarial || b.decision == Decision::Adversarial {
        Decision::Adversarial
    } else {
        Decision::Benign
    }
}

/// One persisted verdict line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictRecord {
    pub id: usize,
    pub decision: Decision,
    pub anchor_label: Label,
    pub anchor_prob: f64,
    pub min_sieve_prob: f64,
    pub diff: f64,
}

impl VerdictRecord {
    pub fn rethreshold(&self, theta: f64) -> Self {
        Self {
            decision: Decision::from_diff(self.diff, theta),
            ..*self
        }
    }
}

pub const VERDICT_HEADER: &str = "id, decision, anchor_label, anchor_prob, min_sieve_prob, diff";

pub fn format_verdicts(records: &[VerdictRecord]) -> String {
    let mut out = String::from(VERDICT_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{:05}, {}, {}, {}, {}, {}",
            r.id,
            r.decision.code(),
            r.anchor_label,
            r.anchor_prob,
            r.min_sieve_prob,
            r.diff
        );
    }
    out
}

pub fn parse_verdicts(text: &str, path: &Path) -> Result<Vec<VerdictRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == VERDICT_HEADER => {}
        _ => return Err(Error::format(path, format!("expected header {VERDICT_HEADER:?}"))),
    }
    let mut out: Vec<VerdictRecord> = Vec::new();
    for (lineno, line) in lines {
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", lineno + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let id: usize = f[0].parse().map_err(|_| bad("bad id"))?;
        let decision = match f[1] {
            "0" => Decision::Benign,
            "1" => Decision::Adversarial,
            _ => return Err(bad("decision must be 0 or 1")),
        };
        let label: usize = f[2].parse().map_err(|_| bad("bad anchor label"))?;
        let anchor_label = Label::new(label).map_err(|_| bad("anchor label out of range"))?;
        let real = |s: &str, what: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(what));
        let anchor_prob = real(f[3], "bad anchor_prob")?;
        let min_sieve_prob = real(f[4], "bad min_sieve_prob")?;
        let diff = real(f[5], "bad diff")?;
        if out.last().is_some_and(|r| r.id >= id) {
            return Err(bad("ids must be strictly increasing"));
        }
        out.push(VerdictRecord {
            id,
            decision,
            anchor_label,
            anchor_prob,
            min_sieve_prob,
            diff,
        });
    }
    Ok(out)
}

/// Thresholds `k / steps` for `k = 1..steps`.
pub fn theta_grid(steps: u32) -> Vec<f64> {
    (1..steps).map(|k| f64::from(k) / f64::from(steps)).collect()
}
