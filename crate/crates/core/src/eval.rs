//! Recording-level scoring: majority voting over cycles, confusion-matrix
//! rates, ROC AUC, per-domain accuracy spread and McNemar's paired test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::Label;

/// Modal class of a recording's cycle predictions; an exact tie is
/// resolved to abnormal.
pub fn majority_vote(preds: &[Label]) -> Result<Label> {
    if preds.is_empty() {
        return Err(Error::Empty("no segment predictions to vote on".into()));
    }
    let abn = preds.iter().filter(|&&p| p == Label::Abnormal).count();
    Ok(if 2 * abn >= preds.len() {
        Label::Abnormal
    } else {
        Label::Normal
    })
}

/// Counts with abnormal as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Rates with undefined denominators left as `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub confusion: Confusion,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub macc: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

impl BinaryMetrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let sensitivity = ratio(c.tp, c.tp + c.fn_);
        let specificity = ratio(c.tn, c.tn + c.fp);
        BinaryMetrics {
            confusion: c,
            sensitivity,
            specificity,
            macc: sensitivity.zip(specificity).map(|(a, b)| (a + b) / 2.0),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            accuracy: ratio(c.tp + c.tn, c.total()),
        }
    }
}

pub fn binary_metrics(truths: &[Label], preds: &[Label]) -> Result<BinaryMetrics> {
    if truths.len() != preds.len() {
        return Err(Error::shape(format!(
            "{} truths vs {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let mut c = Confusion::default();
    for (&t, &p) in truths.iter().zip(preds) {
        match (t, p) {
            (Label::Abnormal, Label::Abnormal) => c.tp += 1,
            (Label::Normal, Label::Normal) => c.tn += 1,
            (Label::Normal, Label::Abnormal) => c.fp += 1,
            (Label::Abnormal, Label::Normal) => c.fn_ += 1,
        }
    }
    Ok(BinaryMetrics::from_confusion(c))
}

/// Probability that a random abnormal recording outscores a random normal
/// one, ties counting one half. Computed from exact pair counts.
pub fn auc_roc(truths: &[Label], scores: &[f64]) -> Result<f64> {
    if truths.len() != scores.len() {
        return Err(Error::shape(format!(
            "{} truths vs {} scores",
            truths.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("NaN score"));
    }
    let pos: Vec<f64> = truths
        .iter()
        .zip(scores)
        .filter(|(t, _)| **t == Label::Abnormal)
        .map(|(_, &s)| s)
        .collect();
    let mut neg: Vec<f64> = truths
        .iter()
        .zip(scores)
        .filter(|(t, _)| **t == Label::Normal)
        .map(|(_, &s)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::AucUndefined);
    }
    neg.sort_by(f64::total_cmp);
    // Twice the U statistic, kept integral.
    let mut twice_u: u128 = 0;
    for &p in &pos {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice_u as f64 / (2 * pos.len() * neg.len()) as f64)
}

/// Final decision for one test recording.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingResult {
    pub id: String,
    pub domain: String,
    pub truth: Label,
    pub predicted: Label,
    pub p_abnormal: f64,
}

impl RecordingResult {
    pub fn correct(&self) -> bool {
        self.truth == self.predicted
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainStats {
    pub per_domain: BTreeMap<String, DomainAccuracy>,
    pub mean: f64,
    /// Population standard deviation over the domain accuracies.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn domain_stats(records: &[RecordingResult]) -> DomainStats {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = counts.entry(r.domain.clone()).or_default();
        e.0 += usize::from(r.correct());
        e.1 += 1;
    }
    let per_domain: BTreeMap<String, DomainAccuracy> = counts
        .into_iter()
        .map(|(d, (correct, total))| {
            (
                d,
                DomainAccuracy {
                    correct,
                    total,
                    accuracy: correct as f64 / total as f64,
                },
            )
        })
        .collect();
    let accs: Vec<f64> = per_domain.values().map(|a| a.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    DomainStats { per_domain, mean, std }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<RecordingResult>,
    pub metrics: BinaryMetrics,
    /// `None` when the test set holds one class only.
    pub auc: Option<f64>,
    pub domains: DomainStats,
}

impl EvalReport {
    pub fn from_records(records: Vec<RecordingResult>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("no recordings to evaluate".into()));
        }
        let truths: Vec<Label> = records.iter().map(|r| r.truth).collect();
        let preds: Vec<Label> = records.iter().map(|r| r.predicted).collect();
        let scores: Vec<f64> = records.iter().map(|r| r.p_abnormal).collect();
        let metrics = binary_metrics(&truths, &preds)?;
        let auc = match auc_roc(&truths, &scores) {
            Ok(a) => Some(a),
            Err(Error::AucUndefined) => None,
            Err(e) => return Err(e),
        };
        let domains = domain_stats(&records);
        Ok(EvalReport {
            records,
            metrics,
            auc,
            domains,
        })
    }

    /// Named scalar metrics in a fixed order; undefined ones are `None`.
    pub fn metric_values(&self) -> Vec<(&'static str, Option<f64>)> {
        let m = &self.metrics;
        vec![
            ("auc", self.auc),
            ("f1", m.f1),
            ("macc", m.macc),
            ("sensitivity", m.sensitivity),
            ("specificity", m.specificity),
            ("accuracy", m.accuracy),
            ("domain_mean_accuracy", Some(self.domains.mean)),
            ("domain_std_accuracy", Some(self.domains.std)),
        ]
    }

    pub fn render_text(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        let c = self.metrics.confusion;
        let mut s = String::new();
        let _ = writeln!(s, "recordings  {}", self.records.len());
        let _ = writeln!(s, "confusion   TP {}  TN {}  FP {}  FN {}", c.tp, c.tn, c.fp, c.fn_);
        for (name, v) in self.metric_values() {
            let _ = writeln!(s, "{name:<22}{:>8}", pct(v));
        }
        let _ = writeln!(s, "\ndomain      n     accuracy");
        for (d, a) in &self.domains.per_domain {
            let _ = writeln!(s, "{d:<10}{:>5}{:>11.2}", a.total, 100.0 * a.accuracy);
        }
        let _ = writeln!(
            s,
            "mean±std        {:.2}±{:.2}",
            100.0 * self.domains.mean,
            100.0 * self.domains.std
        );
        s
    }
}

/// Discordant counts between two systems scored on the same recordings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairedOutcomes {
    /// System A right, system B wrong.
    pub b: usize,
    /// System A wrong, system B right.
    pub c: usize,
    pub n: usize,
}

impl PairedOutcomes {
    pub fn from_correctness(a: &[bool], b: &[bool]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::shape(format!("{} vs {} outcomes", a.len(), b.len())));
        }
        let mut out = PairedOutcomes { b: 0, c: 0, n: a.len() };
        for (&x, &y) in a.iter().zip(b) {
            match (x, y) {
                (true, false) => out.b += 1,
                (false, true) => out.c += 1,
                _ => {}
            }
        }
        Ok(out)
    }

    /// Aligns by recording id. Both reports must cover the same ids.
    pub fn from_reports(a: &[RecordingResult], b: &[RecordingResult]) -> Result<Self> {
        let index = |rs: &[RecordingResult], which: &str| -> Result<BTreeMap<String, bool>> {
            let mut m = BTreeMap::new();
            for r in rs {
                if m.insert(r.id.clone(), r.correct()).is_some() {
                    return Err(Error::param(format!("recording {} repeated in report {which}", r.id)));
                }
            }
            Ok(m)
        };
        let (ma, mb) = (index(a, "A")?, index(b, "B")?);
        let ka: BTreeSet<&String> = ma.keys().collect();
        let kb: BTreeSet<&String> = mb.keys().collect();
        let diff: Vec<&str> = ka.symmetric_difference(&kb).map(|s| s.as_str()).collect();
        if !diff.is_empty() {
            return Err(Error::param(format!(
                "reports cover different recordings; not in both: {}",
                diff.join(", ")
            )));
        }
        let xa: Vec<bool> = ma.values().copied().collect();
        let xb: Vec<bool> = mb.values().copied().collect();
        Self::from_correctness(&xa, &xb)
    }

    pub fn swapped(self) -> Self {
        PairedOutcomes {
            b: self.c,
            c: self.b,
            n: self.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McNemarResult {
    /// Continuity-corrected statistic.
    pub chi2: f64,
    pub p_value: f64,
    /// Two-sided exact binomial p, reported when `b + c < 25`.
    pub exact_p: Option<f64>,
    /// `p_value < 0.05`.
    pub significant: bool,
}

pub const EXACT_TEST_BELOW: usize = 25;

pub fn mcnemar_test(pair: &PairedOutcomes) -> Result<McNemarResult> {
    let n = pair.b + pair.c;
    if n == 0 {
        return Err(Error::NoDiscordantPairs);
    }
    let d = pair.b.abs_diff(pair.c) as f64;
    let chi2 = (d - 1.0).powi(2) / n as f64;
    let p_value = chi2_sf_df1(chi2);
    let exact_p = (n < EXACT_TEST_BELOW).then(|| binomial_two_sided(pair.b.min(pair.c), n));
    Ok(McNemarResult {
        chi2,
        p_value,
        exact_p,
        significant: p_value < 0.05,
    })
}

/// `P(X ≥ k_min-tail)` doubled: `min(1, 2 Σ_{i ≤ k} C(n, i) / 2ⁿ)`.
fn binomial_two_sided(k: usize, n: usize) -> f64 {
    // Log-space terms keep large n finite.
    let ln_choose = |i: usize| -> f64 { (1..=i).map(|j| ((n - i + j) as f64 / j as f64).ln()).sum() };
    let ln_half_n = n as f64 * 0.5f64.ln();
    let tail: f64 = (0..=k).map(|i| (ln_choose(i) + ln_half_n).exp()).sum();
    (2.0 * tail).min(1.0)
}

/// Survival function of the 1-degree-of-freedom chi-squared law. With
/// `t = u²` the density integrates as `2 φ(u)` over `u ≥ √x`, which is
/// smooth, so adaptive Simpson reaches `1e-10` absolute accuracy.
pub fn chi2_sf_df1(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    let f = |u: f64| (2.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-0.5 * u * u).exp();
    let lo = x.sqrt();
    // 2φ(u) is below 1e-30 past u = 12, so the remaining tail is negligible.
    let hi = lo.max(0.0) + 12.0;
    adaptive_simpson(&f, lo, hi, 1e-13, 50).clamp(0.0, 1.0)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + rec(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, depth)
}
