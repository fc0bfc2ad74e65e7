//! Metric values against hand counts, brute-force recounts and an
//! independent chi-squared implementation.

use pcg_core::eval::{auc_roc, binary_metrics, chi2_sf_df1, majority_vote, mcnemar_test, mean_std, PairedOutcomes};
use pcg_core::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::Check;

const A: Label = Label::Abnormal;
const N: Label = Label::Normal;

/// Label vectors realizing the given confusion counts.
pub fn labels_for(tp: usize, fn_: usize, tn: usize, fp: usize) -> (Vec<Label>, Vec<Label>) {
    let mut t = Vec::new();
    let mut p = Vec::new();
    for (n, truth, pred) in [(tp, A, A), (fn_, A, N), (tn, N, N), (fp, N, A)] {
        t.extend(std::iter::repeat_n(truth, n));
        p.extend(std::iter::repeat_n(pred, n));
    }
    (t, p)
}

fn pct(v: f64) -> f64 {
    (v * 10000.0).round() / 100.0
}

pub fn macc_example() -> Vec<Check> {
    // 4493/5000 = 0.8986, 3870/5000 = 0.7740
    let (t, p) = labels_for(4493, 507, 3870, 1130);
    let m = binary_metrics(&t, &p).unwrap();
    let hand = (4493.0 / 5000.0 + 3870.0 / 5000.0) / 2.0;
    vec![
        Check::below("sensitivity 0.8986", (m.sensitivity.unwrap() - 0.8986).abs(), 1e-9),
        Check::below("specificity 0.7740", (m.specificity.unwrap() - 0.7740).abs(), 1e-9),
        Check::below("Macc vs hand mean", (m.macc.unwrap() - hand).abs(), 1e-12),
        Check::below("Macc 0.8363", (m.macc.unwrap() - 0.8363).abs(), 1e-9),
    ]
}

/// Smallest confusion whose rates round to the published
/// (sensitivity, specificity, F1, Macc) = (89.86, 77.40, 84.07, 83.63).
pub fn published_quadruple() -> Check {
    let (t, p) = labels_for(124, 14, 113, 33);
    let m = binary_metrics(&t, &p).unwrap();
    let got = [m.sensitivity, m.specificity, m.f1, m.macc].map(|v| pct(v.unwrap()));
    Check::holds(
        format!("124/138 and 113/146 give {got:?} = [89.86, 77.4, 84.07, 83.63]"),
        got == [89.86, 77.40, 84.07, 83.63],
    )
}

pub fn hand_counted() -> Vec<Check> {
    let (t, p) = labels_for(3, 1, 5, 1);
    let m = binary_metrics(&t, &p).unwrap();
    let (pt, pp) = labels_for(4, 0, 6, 0);
    let perfect = binary_metrics(&pt, &pp).unwrap();
    let all_one = [
        perfect.sensitivity,
        perfect.specificity,
        perfect.macc,
        perfect.f1,
        perfect.accuracy,
    ]
    .iter()
    .all(|v| *v == Some(1.0));
    vec![
        Check::below("F1 for TP=3 FP=1 FN=1 TN=5", (m.f1.unwrap() - 0.75).abs(), 1e-12),
        Check::below(
            "accuracy for TP=3 FP=1 FN=1 TN=5",
            (m.accuracy.unwrap() - 0.8).abs(),
            1e-12,
        ),
        Check::holds("perfect predictions give 1 everywhere", all_one),
    ]
}

/// Concordant-pair fraction with ties counted half, by exhaustive pairing.
pub fn brute_auc(truths: &[Label], scores: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, ti) in truths.iter().enumerate() {
        for (j, tj) in truths.iter().enumerate() {
            if *ti == A && *tj == N {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

pub fn auc() -> Vec<Check> {
    let example = auc_roc(&[A, A, N, N], &[0.9, 0.7, 0.8, 0.1]).unwrap();
    let separated = auc_roc(&[A, A, N, N], &[0.9, 0.8, 0.3, 0.1]).unwrap();
    let tied = auc_roc(&[A, N, A, N], &[0.4; 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut worst, mut monotone): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let mut t: Vec<Label> = (0..n).map(|_| if rng.random_bool(0.5) { A } else { N }).collect();
        t[0] = A;
        t[1] = N;
        // Coarse scores so ties occur.
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let got = auc_roc(&t, &s).unwrap();
        worst = worst.max((got - brute_auc(&t, &s)).abs());
        let warped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        monotone = monotone.max((auc_roc(&t, &warped).unwrap() - got).abs());
    }
    vec![
        Check::below("AUC {pos .9 .7; neg .8 .1} = 0.75", (example - 0.75).abs(), 1e-12),
        Check::below("AUC of separated scores = 1", (separated - 1.0).abs(), 1e-12),
        Check::below("AUC of identical scores = 0.5", (tied - 0.5).abs(), 1e-12),
        Check::below("AUC vs exhaustive pair count", worst, 1e-12),
        Check::below("AUC under increasing transform", monotone, 1e-12),
    ]
}

fn binom_two_sided(b: usize, c: usize) -> f64 {
    let n = b + c;
    let k = b.min(c);
    let mut coef = 1.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            coef = coef * (n - i + 1) as f64 / i as f64;
        }
        tail += coef;
    }
    (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
}

pub fn mcnemar() -> Vec<Check> {
    let chi = ChiSquared::new(1.0).unwrap();
    let r = mcnemar_test(&PairedOutcomes { b: 5, c: 15, n: 100 }).unwrap();
    let sw = mcnemar_test(&PairedOutcomes { b: 15, c: 5, n: 100 }).unwrap();
    let eq = mcnemar_test(&PairedOutcomes { b: 7, c: 7, n: 50 }).unwrap();
    let lop = mcnemar_test(&PairedOutcomes { b: 10, c: 0, n: 30 }).unwrap();
    let mut sf_err: f64 = 0.0;
    for i in 0..400 {
        let x = i as f64 * 0.05;
        sf_err = sf_err.max((chi2_sf_df1(x) - (1.0 - chi.cdf(x))).abs());
    }
    vec![
        Check::below("b=5 c=15: chi2 = 81/20", (r.chi2 - 4.05).abs(), 1e-12),
        Check::below(
            "b=5 c=15: p vs chi-squared reference",
            (r.p_value - (1.0 - chi.cdf(4.05))).abs(),
            1e-9,
        ),
        Check::below("b=5 c=15: p near 0.0441", (r.p_value - 0.0441).abs(), 1e-4),
        Check::holds("b=5 c=15 significant", r.significant),
        Check::below(
            "b=5 c=15: exact p vs binomial tail",
            (r.exact_p.unwrap() - binom_two_sided(5, 15)).abs(),
            1e-12,
        ),
        Check::holds(
            "swapping systems keeps chi2 and p",
            sw.chi2 == r.chi2 && sw.p_value == r.p_value,
        ),
        Check::holds(
            "b = c gives chi2 1/(2b) and p > 0.05",
            eq.chi2 == 1.0 / 14.0 && eq.p_value > 0.05,
        ),
        Check::below(
            "b=10 c=0: exact p = 2 (1/2)^10",
            (lop.exact_p.unwrap() - 0.001953125).abs(),
            1e-12,
        ),
        Check::below("df=1 survival function vs reference on [0, 20)", sf_err, 1e-10),
    ]
}

pub fn domain_stats() -> Vec<Check> {
    let (m, s) = mean_std(&[78.75, 76.53, 85.71, 90.0, 100.0]);
    let (m2, s2) = mean_std(&[0.6, 1.0]);
    let (m1, s1) = mean_std(&[0.7]);
    vec![
        Check::holds(
            format!("published domain row gives {:.2}±{:.2} = 86.20±8.42", m, s),
            pct(m / 100.0) == 86.20 && pct(s / 100.0) == 8.42,
        ),
        Check::below("two domains: mean 0.8", (m2 - 0.8).abs(), 1e-12),
        Check::below("two domains: STD 0.2", (s2 - 0.2).abs(), 1e-12),
        Check::holds("single domain: STD 0", m1 == 0.7 && s1 == 0.0),
    ]
}

/// Every label sequence up to length 7 against a direct count.
pub fn majority_recount() -> Check {
    let mut ok = majority_vote(&[A, A, N]).unwrap() == A
        && majority_vote(&[N]).unwrap() == N
        && majority_vote(&[A, N]).unwrap() == A;
    for len in 1..=7 {
        for bits in 0u32..(1 << len) {
            let v: Vec<Label> = (0..len).map(|i| if bits >> i & 1 == 1 { A } else { N }).collect();
            let abn = bits.count_ones() as usize;
            let want = if 2 * abn >= len { A } else { N };
            ok &= majority_vote(&v).unwrap() == want;
        }
    }
    Check::holds("majority vote vs recount, all sequences up to 7", ok)
}

pub fn suite() -> Vec<Check> {
    let mut out = macc_example();
    out.push(published_quadruple());
    out.extend(hand_counted());
    out.extend(auc());
    out.extend(mcnemar());
    out.extend(domain_stats());
    out.push(majority_recount());
    out
}
