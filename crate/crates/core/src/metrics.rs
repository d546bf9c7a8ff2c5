//! Confusion matrices and detection scores, with the adversarial class as the
//! positive class.

use std::fmt::{self, Write as _};

use crate::dataset::GroundTruth;
use crate::detector::{Decision, DetectionConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn add(&mut self, truth: GroundTruth, decision: Decision) {
        match (truth, decision) {
            (GroundTruth::Adversarial, Decision::Adversarial) => self.tp += 1,
            (GroundTruth::Benign, Decision::Benign) => self.tn += 1,
            (GroundTruth::Benign, Decision::Adversarial) => self.fp += 1,
            (GroundTruth::Adversarial, Decision::Benign) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> Option<Ratio> {
        Ratio::new(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<Ratio> {
        Ratio::new(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<Ratio> {
        Ratio::new(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`, the harmonic mean of precision and recall.
    pub fn f1(&self) -> Option<Ratio> {
        Ratio::new(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// Exact non-negative fraction; `None` from [`Ratio::new`] marks an
/// undefined score (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den > 0).then_some(Self { num, den })
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `num/den` in thousandths, rounded half up, computed exactly.
    pub fn thousandths(self) -> u64 {
        let (n, d) = (u128::from(self.num), u128::from(self.den));
        ((2000 * n + d) / (2 * d)) as u64
    }

    /// Three-decimal display form, e.g. `0.999`.
    pub fn rounded(self) -> String {
        let t = self.thousandths();
        format!("{}.{:03}", t / 1000, t % 1000)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.rounded())
    }
}

pub const UNDEFINED: &str = "undefined";

fn show(r: Option<Ratio>) -> String {
    r.map_or_else(|| UNDEFINED.to_string(), Ratio::rounded)
}

fn show_full(r: Option<Ratio>) -> String {
    r.map_or_else(|| UNDEFINED.to_string(), |r| r.value().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub matrix: ConfusionMatrix,
    pub accuracy: Ratio,
    pub precision: Option<Ratio>,
    pub recall: Option<Ratio>,
    pub f1: Option<Ratio>,
    pub config: Option<DetectionConfig>,
}

impl ScoreReport {
    pub fn from_matrix(matrix: ConfusionMatrix) -> Result<Self> {
        let accuracy = matrix.accuracy().ok_or(Error::EmptyInput("verdicts"))?;
        Ok(Self {
            matrix,
            accuracy,
            precision: matrix.precision(),
            recall: matrix.recall(),
            f1: matrix.f1(),
            config: None,
        })
    }

    pub fn with_config(mut self, config: DetectionConfig) -> Self {
        self.config = Some(config);
        self
    }

    /// `metric,value` lines at full precision.
    pub fn to_csv(&self) -> String {
        let m = &self.matrix;
        let mut out = String::from("metric,value\n");
        if let Some(cfg) = &self.config {
            let sizes: Vec<String> = cfg.kernel_sizes.iter().map(|k| k.to_string()).collect();
            let _ = writeln!(out, "filter,{}", cfg.filter_kind);
            let _ = writeln!(out, "kernel_sizes,{}", sizes.join(" "));
            let _ = writeln!(out, "theta,{}", cfg.theta);
        }
        for (name, v) in [("files", m.total()), ("tp", m.tp), ("tn", m.tn), ("fp", m.fp), ("fn", m.fn_)] {
            let _ = writeln!(out, "{name},{v}");
        }
        let _ = writeln!(out, "accuracy,{}", show_full(Some(self.accuracy)));
        let _ = writeln!(out, "precision,{}", show_full(self.precision));
        let _ = writeln!(out, "recall,{}", show_full(self.recall));
        let _ = writeln!(out, "f1,{}", show_full(self.f1));
        out
    }
}

/// Tallies `(ground truth, decision)` pairs. Order does not matter.
pub fn score<I>(verdicts: I) -> Result<ScoreReport>
where
    I: IntoIterator<Item = (GroundTruth, Decision)>,
{
    let mut matrix = ConfusionMatrix::default();
    for (truth, decision) in verdicts {
        matrix.add(truth, decision);
    }
    ScoreReport::from_matrix(matrix)
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Human-readable table with one column per named report, rows matching the
/// usual detection-rate layout.
pub fn format_table(columns: &[(&str, &ScoreReport)]) -> String {
    let theta = |r: &ScoreReport| r.config.as_ref().map_or_else(|| "-".to_string(), |c| c.theta.to_string());
    let rows: Vec<(&str, Vec<String>)> = vec![
        ("No. Files", columns.iter().map(|(_, r)| thousands(r.matrix.total())).collect()),
        ("Threshold", columns.iter().map(|(_, r)| theta(r)).collect()),
        ("True Positive", columns.iter().map(|(_, r)| r.matrix.tp.to_string()).collect()),
        ("True Negative", columns.iter().map(|(_, r)| r.matrix.tn.to_string()).collect()),
        ("False Positive", columns.iter().map(|(_, r)| r.matrix.fp.to_string()).collect()),
        ("False Negative", columns.iter().map(|(_, r)| r.matrix.fn_.to_string()).collect()),
        ("Accuracy", columns.iter().map(|(_, r)| r.accuracy.rounded()).collect()),
        ("Precision", columns.iter().map(|(_, r)| show(r.precision)).collect()),
        ("Recall", columns.iter().map(|(_, r)| show(r.recall)).collect()),
        ("F1 score", columns.iter().map(|(_, r)| show(r.f1)).collect()),
    ];
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let col_w: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, (name, _))| rows.iter().map(|(_, v)| v[i].len()).max().unwrap_or(0).max(name.len()))
        .collect();
    let mut out = format!("{:label_w$}", "");
    for ((name, _), w) in columns.iter().zip(&col_w) {
        let _ = write!(out, " | {name:>w$}");
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(out.trim_end().chars().count()));
    for (label, values) in &rows {
        let _ = write!(out, "{label:label_w$}");
        for (v, w) in values.iter().zip(&col_w) {
            let _ = write!(out, " | {v:>w$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: u64, d: u64) -> Ratio {
        Ratio::new(n, d).unwrap()
    }

    #[test]
    fn half_up_rounding_is_exact() {
        assert_eq!(r(1997, 2000).rounded(), "0.999"); // 0.9985
        assert_eq!(r(1991, 2000).rounded(), "0.996"); // 0.9955
        assert_eq!(r(1, 2000).rounded(), "0.001"); // 0.0005
        assert_eq!(r(1, 2001).rounded(), "0.000");
        assert_eq!(r(5, 5).rounded(), "1.000");
        assert_eq!(r(0, 5).rounded(), "0.000");
    }

    #[test]
    fn mnist_dsg_row() {
        let m = ConfusionMatrix::new(1799, 198, 2, 1);
        assert_eq!(m.total(), 2000);
        assert_eq!(m.accuracy().unwrap().rounded(), "0.999");
        assert!((m.precision().unwrap().value() - 0.99889).abs() < 1e-5);
        assert_eq!(m.precision().unwrap().rounded(), "0.999");
        assert!((m.recall().unwrap().value() - 0.99944).abs() < 1e-5);
        assert_eq!(m.recall().unwrap().rounded(), "0.999");
        assert_eq!(m.f1().unwrap().rounded(), "0.999");
    }

    #[test]
    fn large_scale_dsm_row() {
        let m = ConfusionMatrix::new(2000, 875, 125, 0);
        assert_eq!(m.recall().unwrap().rounded(), "1.000");
        assert_eq!(m.precision().unwrap().rounded(), "0.941");
        assert_eq!(m.accuracy().unwrap().rounded(), "0.958");
    }

    #[test]
    fn all_benign_is_degenerate() {
        let rep = score(vec![(GroundTruth::Benign, Decision::Benign); 7]).unwrap();
        assert_eq!(rep.accuracy.rounded(), "1.000");
        assert_eq!(rep.precision, None);
        assert_eq!(rep.recall, None);
        assert_eq!(rep.f1, None);
        assert!(rep.to_csv().contains("precision,undefined"));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(score(Vec::new()).is_err());
    }

    #[test]
    fn table_layout() {
        let rep = ScoreReport::from_matrix(ConfusionMatrix::new(1799, 198, 2, 1)).unwrap();
        let t = format_table(&[("DSG", &rep)]);
        assert!(t.contains("No. Files"));
        assert!(t.contains("2,000"));
        assert!(t.lines().any(|l| l.starts_with("F1 score") && l.ends_with("0.999")));
    }

    #[test]
    fn csv_lines() {
        let rep = ScoreReport::from_matrix(ConfusionMatrix::new(3, 1, 0, 1)).unwrap();
        let csv = rep.to_csv();
        assert!(csv.starts_with("metric,value\n"));
        assert!(csv.contains("tp,3\n"));
        assert!(csv.contains("recall,0.75\n"));
    }

    fn truth_decision() -> impl Strategy<Value = (GroundTruth, Decision)> {
        (any::<bool>(), any::<bool>()).prop_map(|(t, d)| {
            (
                if t { GroundTruth::Adversarial } else { GroundTruth::Benign },
                if d { Decision::Adversarial } else { Decision::Benign },
            )
        })
    }

    proptest! {
        #[test]
        fn totals_are_conserved_and_order_free(mut v in prop::collection::vec(truth_decision(), 1..200), rot in 0usize..200) {
            let a = score(v.clone()).unwrap();
            prop_assert_eq!(a.matrix.total(), v.len() as u64);
            let k = rot % v.len();
            v.rotate_left(k);
            v.reverse();
            prop_assert_eq!(score(v).unwrap(), a);
        }

        #[test]
        fn f1_is_harmonic_mean(tp in 0u64..3000, fp in 0u64..3000, fn_ in 0u64..3000) {
            let m = ConfusionMatrix::new(tp, 0, fp, fn_);
            if let (Some(p), Some(r), Some(f)) = (m.precision(), m.recall(), m.f1()) {
                let (p, r) = (p.value(), r.value());
                if p + r > 0.0 {
                    prop_assert!((f.value() - 2.0 * p * r / (p + r)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn rounding_within_half_a_thousandth(n in 0u64..100_000, extra in 0u64..100_000) {
            let q = r(n, n + extra + 1);
            let t = q.thousandths() as f64 / 1000.0;
            prop_assert!((t - q.value()).abs() <= 0.0005 + 1e-12);
        }
    }
}
