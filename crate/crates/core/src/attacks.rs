//! Targeted white-box attacks against the classifier: single-step FGSM and
//! iterative L∞-projected gradient descent, plus perturbation norms.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::classifier::ClassifierParams;
use crate::dataset::{AdversarialRecord, LabeledSet};
use crate::error::{Error, Result};
use crate::image::{Image, Label};

/// Distance used to measure a perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    /// Number of differing pixels (difference above 1e-12).
    L0,
    L2,
    LInf,
}

pub fn lp_norm(a: &Image, b: &Image, norm: Norm) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let diffs = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs());
    Ok(match norm {
        Norm::L0 => diffs.filter(|d| *d > 1e-12).count() as f64,
        Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        Norm::LInf => diffs.fold(0.0, f64::max),
    })
}

/// Which loss the signed steps follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttackObjective {
    /// Descend the cross-entropy of the target class.
    #[default]
    DescendTarget,
    /// Ascend the cross-entropy of the true class (untargeted-style steps;
    /// success is still judged against the target).
    AscendTrue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// L∞ budget around the clean image.
    pub epsilon: f64,
    /// Per-epoch step size.
    pub alpha: f64,
    pub max_epochs: usize,
    pub target: Label,
    pub objective: AttackObjective,
}

impl AttackConfig {
    pub fn new(epsilon: f64, alpha: f64, max_epochs: usize, target: Label) -> Self {
        Self {
            epsilon,
            alpha,
            max_epochs,
            target,
            objective: AttackObjective::default(),
        }
    }

    /// `0 < alpha ≤ epsilon ≤ 1` and at least one epoch. A zero budget
    /// (`epsilon == 0`) is accepted and leaves every image untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && (0.0..=1.0).contains(&self.epsilon)) {
            return Err(Error::InvalidAttack(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidAttack(format!("alpha {} must be positive", self.alpha)));
        }
        if self.epsilon > 0.0 && self.alpha > self.epsilon {
            return Err(Error::InvalidAttack(format!(
                "alpha {} exceeds epsilon {}",
                self.alpha, self.epsilon
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidAttack("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Image,
    /// The final iterate is classified as the target.
    pub success: bool,
    pub epochs_used: usize,
    /// Achieved `‖x* − x‖∞`.
    pub delta_inf: f64,
    /// Target-class probability at the final iterate.
    pub target_prob: f64,
}

#[inline]
fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn finish(params: &ClassifierParams, x: &Image, adversarial: Image, target: Label, epochs_used: usize) -> Result<AttackResult> {
    let probs = params.forward_probs(&adversarial)?;
    Ok(AttackResult {
        success: probs.argmax() == target,
        delta_inf: lp_norm(x, &adversarial, Norm::LInf)?,
        target_prob: probs.prob(target),
        adversarial,
        epochs_used,
    })
}

/// One signed step descending the target-class loss:
/// `x* = clamp(x − ε·sign(∇ₓL(x, target)), 0, 1)`.
pub fn fgsm_attack(params: &ClassifierParams, x: &Image, target: Label, epsilon: f64) -> Result<AttackResult> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidAttack(format!("epsilon {epsilon} must be non-negative")));
    }
    let grad = params.input_gradient(x, target)?;
    if let Some(pixel) = grad.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { epoch: 1, pixel });
    }
    let stepped = x
        .data()
        .iter()
        .zip(grad.values())
        .map(|(&v, &g)| (v - epsilon * sign(g)).clamp(0.0, 1.0))
        .collect();
    let (h, w, c) = x.shape();
    finish(params, x, Image::new(h, w, c, stepped)?, target, 1)
}

/// Iterative targeted attack. Each epoch takes a signed step of size `alpha`,
/// projects onto the L∞ ball of radius `epsilon` around `x`, then clamps to
/// `[0, 1]`. Stops as soon as the iterate is classified as the target, when
/// the epoch budget is spent, or when a step no longer moves the iterate
/// (every pixel pinned by the projection or the pixel range).
pub fn pgd_attack(params: &ClassifierParams, x: &Image, y_true: Label, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    if cfg.target == y_true {
        return Err(Error::TargetEqualsOrigin(y_true.index()));
    }
    let (grad_label, direction) = match cfg.objective {
        AttackObjective::DescendTarget => (cfg.target, -1.0),
        AttackObjective::AscendTrue => (y_true, 1.0),
    };
    let (h, w, c) = x.shape();
    let clean = x.data();
    let mut current = x.clone();
    let mut epochs_used = 0;
    loop {
        let (probs, grad) = params.probs_and_input_gradient(&current, grad_label)?;
        if probs.argmax() == cfg.target || epochs_used == cfg.max_epochs {
            break;
        }
        if let Some(pixel) = grad.values().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                epoch: epochs_used + 1,
                pixel,
            });
        }
        let next: Vec<f64> = current
            .data()
            .iter()
            .zip(clean)
            .zip(grad.values())
            .map(|((&v, &v0), &g)| {
                (v + direction * cfg.alpha * sign(g))
                    .clamp(v0 - cfg.epsilon, v0 + cfg.epsilon)
                    .clamp(0.0, 1.0)
            })
            .collect();
        if next == current.data() {
            break;
        }
        current = Image::new(h, w, c, next)?;
        epochs_used += 1;
    }
    finish(params, x, current, cfg.target, epochs_used)
}

/// Outcome of one (clean image, target) attack, as written to the attack log.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackLogEntry {
    pub origin_id: usize,
    pub target: Label,
    pub success: bool,
    pub epochs_used: usize,
    pub delta_inf: f64,
    pub target_prob: f64,
}

pub const ATTACK_LOG_HEADER: &str = "origin_id, target, success, epochs_used, delta_inf, target_prob";

pub fn format_attack_log(entries: &[AttackLogEntry]) -> String {
    let mut out = String::from(ATTACK_LOG_HEADER);
    out.push('\n');
    for e in entries {
        let _ = writeln!(
            out,
            "{}, {}, {}, {}, {}, {}",
            e.origin_id, e.target, e.success, e.epochs_used, e.delta_inf, e.target_prob
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct CraftOutcome {
    /// Successful adversarials in (image, target) order.
    pub records: Vec<AdversarialRecord>,
    /// Every attempted attack, successful or not.
    pub log: Vec<AttackLogEntry>,
}

impl CraftOutcome {
    pub fn attempted(&self) -> usize {
        self.log.len()
    }

    pub fn succeeded(&self) -> usize {
        self.records.len()
    }

    pub fn success_rate(&self) -> f64 {
        if self.log.is_empty() {
            0.0
        } else {
            self.succeeded() as f64 / self.attempted() as f64
        }
    }
}

/// Attacks every benign image toward every target with PGD. Only successful
/// attacks become records; failures are kept in the log.
pub fn craft_benchmark_adversarials(
    params: &ClassifierParams,
    benign: &LabeledSet,
    targets: &[Label],
    template: &AttackConfig,
) -> Result<CraftOutcome> {
    if targets.is_empty() {
        return Err(Error::InvalidAttack("target set is empty".into()));
    }
    template.validate()?;
    let Some(&origin) = benign.labels().first() else {
        return Ok(CraftOutcome {
            records: Vec::new(),
            log: Vec::new(),
        });
    };
    if let Some(other) = benign.labels().iter().find(|&&l| l != origin) {
        return Err(Error::InvalidAttack(format!(
            "benign images must share one label, found {origin} and {other}"
        )));
    }
    if targets.contains(&origin) {
        return Err(Error::TargetEqualsOrigin(origin.index()));
    }

    let jobs: Vec<(usize, Label)> = (0..benign.len())
        .flat_map(|i| targets.iter().map(move |&t| (i, t)))
        .collect();
    let results: Vec<(usize, AttackResult, Label)> = jobs
        .par_iter()
        .map(|&(i, target)| {
            let cfg = AttackConfig {
                target,
                ..template.clone()
            };
            pgd_attack(params, &benign.images()[i], origin, &cfg).map(|r| (i, r, target))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut log = Vec::with_capacity(results.len());
    for (origin_id, result, target) in results {
        log.push(AttackLogEntry {
            origin_id,
            target,
            success: result.success,
            epochs_used: result.epochs_used,
            delta_inf: result.delta_inf,
            target_prob: result.target_prob,
        });
        if result.success {
            records.push(AdversarialRecord {
                image: result.adversarial,
                origin,
                target,
            });
        }
    }
    let failed = log.len() - records.len();
    if failed > 0 {
        log::warn!("{failed} of {} attacks did not reach their target and were excluded", log.len());
    }
    Ok(CraftOutcome { records, log })
}
