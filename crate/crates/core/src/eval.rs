//! ROC-AUC, thresholded metrics, McNemar's paired test, run aggregation and
//! relative gains.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("AUC needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cannot aggregate an empty set of runs")]
    Empty,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(u64, u64), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NonFinite(i));
    }
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(EvalError::SingleClass {
            positives: p,
            negatives: n,
        });
    }
    Ok((p as u64, n as u64))
}

/// ROC-AUC by sweeping thresholds over the sorted distinct scores. Tied
/// groups add a trapezoid, which counts each tied pair as one half.
/// Accumulates twice the pair count in integers so the result is exact.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (p, n) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut twice: u64 = 0;
    let mut tp_above: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        twice += gn * (2 * tp_above + gp);
        tp_above += gp;
    }
    Ok(twice as f64 / (2 * p * n) as f64)
}

/// Reference AUC by exhaustive positive/negative pair counting.
pub fn roc_auc_pairwise(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (p, n) = class_counts(scores, labels)?;
    let mut twice: u64 = 0;
    let pos = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(s, _)| *s);
    for si in pos {
        for sj in scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| !l)
            .map(|(s, _)| *s)
        {
            twice += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    Ok(twice as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a denominator was zero and the zero convention applied.
    pub zero_division: bool,
}

/// Predictions are `score > threshold`.
pub fn predictions(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

pub fn precision_recall_f1(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<Prf, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    Ok(prf_from_predictions(
        &predictions(scores, threshold),
        labels,
    ))
}

pub fn prf_from_predictions(preds: &[bool], labels: &[bool]) -> Prf {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    prf_from_counts(tp, fp, fneg)
}

pub fn prf_from_counts(tp: usize, fp: usize, fneg: usize) -> Prf {
    let mut zero_division = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            zero_division = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf {
        precision,
        recall,
        f1,
        zero_division,
    }
}

/// Metrics of one test-set evaluation, keeping scores for paired tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: bool,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl RunMetrics {
    pub fn from_scores(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, EvalError> {
        let auc = roc_auc(&scores, &labels)?;
        let prf = precision_recall_f1(&scores, &labels, 0.5)?;
        Ok(Self {
            auc,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            zero_division: prf.zero_division,
            scores,
            labels,
        })
    }

    pub fn predictions(&self) -> Vec<bool> {
        predictions(&self.scores, 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    ExactBinomial,
    CorrectedChiSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarOutcome {
    pub b: usize,
    pub c: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub method: McNemarMethod,
}

/// Below this many discordant pairs the exact binomial test is used.
pub const EXACT_BELOW: usize = 25;

pub fn mcnemar(
    preds_a: &[bool],
    preds_b: &[bool],
    labels: &[bool],
) -> Result<McNemarOutcome, EvalError> {
    if preds_a.len() != preds_b.len() {
        return Err(EvalError::LengthMismatch(preds_a.len(), preds_b.len()));
    }
    if preds_a.len() != labels.len() {
        return Err(EvalError::LengthMismatch(preds_a.len(), labels.len()));
    }
    let (mut b, mut c) = (0, 0);
    for ((&a, &bb), &l) in preds_a.iter().zip(preds_b).zip(labels) {
        match (a == l, bb == l) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(b, c))
}

/// Exact binomial test below `EXACT_BELOW` discordant pairs, corrected
/// chi-square from there on.
pub fn mcnemar_from_counts(b: usize, c: usize) -> McNemarOutcome {
    if b + c < EXACT_BELOW {
        mcnemar_exact(b, c)
    } else {
        mcnemar_corrected(b, c)
    }
}

/// Two-sided exact binomial McNemar test, computed in integers. Panics
/// above 62 discordant pairs.
pub fn mcnemar_exact(b: usize, c: usize) -> McNemarOutcome {
    let n = b + c;
    assert!(n < 63, "exact McNemar supports at most 62 discordant pairs");
    let k = b.min(c);
    let tail: u64 = (0..=k).map(|i| binomial(n as u64, i as u64)).sum();
    let p = (2.0 * tail as f64 / (1u64 << n) as f64).min(1.0);
    McNemarOutcome {
        b,
        c,
        statistic: k as f64,
        p_value: p,
        method: McNemarMethod::ExactBinomial,
    }
}

/// McNemar chi-square with continuity correction, one degree of freedom.
pub fn mcnemar_corrected(b: usize, c: usize) -> McNemarOutcome {
    let n = b + c;
    let d = (b as f64 - c as f64).abs() - 1.0;
    let stat = if n == 0 { 0.0 } else { d * d / n as f64 };
    McNemarOutcome {
        b,
        c,
        statistic: stat,
        p_value: chi2_1_sf(stat),
        method: McNemarMethod::CorrectedChiSquare,
    }
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub n: usize,
}

impl AggregateMetrics {
    /// `mean ± std` in percentage points, one decimal.
    pub fn display_pct(&self) -> String {
        format!("{:.1} ± {:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}

pub fn aggregate(values: &[f64]) -> Result<AggregateMetrics, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(AggregateMetrics { mean, std, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub auc: AggregateMetrics,
    pub precision: AggregateMetrics,
    pub recall: AggregateMetrics,
    pub f1: AggregateMetrics,
}

pub fn aggregate_runs(runs: &[RunMetrics]) -> Result<RunAggregate, EvalError> {
    let col = |f: fn(&RunMetrics) -> f64| aggregate(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(RunAggregate {
        auc: col(|r| r.auc)?,
        precision: col(|r| r.precision)?,
        recall: col(|r| r.recall)?,
        f1: col(|r| r.f1)?,
    })
}

/// Percentage gain of `fusion` over `best_single`.
pub fn relative_gain(fusion: f64, best_single: f64) -> f64 {
    100.0 * (fusion - best_single) / best_single
}

pub fn format_gain(gain: f64) -> String {
    format!("{gain:.1}%")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn auc_fixtures() {
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&[0.8, 0.35, 0.4, 0.1], &labels).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &labels).unwrap(), 0.5);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClass {
                positives: 2,
                negatives: 0
            })
        ));
    }

    #[test]
    fn sweep_matches_pairs_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(2..=50);
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            labels[0] = true;
            labels[1] = false;
            // coarse grid forces ties
            let scores: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..8) as f64 / 8.0)
                .collect();
            let a = roc_auc(&scores, &labels).unwrap();
            let b = roc_auc_pairwise(&scores, &labels).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn prf_fixtures() {
        let l = [true, true, false, false];
        let p = precision_recall_f1(&[0.9, 0.8, 0.1, 0.2], &l, 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = precision_recall_f1(&[0.1; 4], &l, 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(p.zero_division);
        let p = prf_from_counts(3, 1, 2);
        assert_eq!((p.precision, p.recall), (0.75, 0.6));
        assert!((p.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-15);
        assert!(!p.zero_division);
    }

    #[test]
    fn mcnemar_fixtures() {
        let same = [true, false, true];
        let o = mcnemar(&same, &same, &[true, true, false]).unwrap();
        assert_eq!((o.b, o.c, o.p_value), (0, 0, 1.0));

        let o = mcnemar_from_counts(2, 8);
        assert_eq!(o.method, McNemarMethod::ExactBinomial);
        assert!((o.p_value - 112.0 / 1024.0).abs() < 1e-15);

        let o = mcnemar_from_counts(10, 0);
        assert!((o.p_value - 2.0 / 1024.0).abs() < 1e-15);
        let o = mcnemar_from_counts(40, 15);
        assert_eq!(o.method, McNemarMethod::CorrectedChiSquare);
        assert!((o.statistic - 24.0 * 24.0 / 55.0).abs() < 1e-12);

        let o = mcnemar_corrected(10, 0);
        assert!((o.statistic - 8.1).abs() < 1e-12);
        assert!((o.p_value - 0.00443).abs() < 1e-4);
    }

    #[test]
    fn chi_square_tail_fixture() {
        // (|10 - 0| - 1)^2 / 10
        assert!((chi2_1_sf(8.1) - 0.004427).abs() < 1e-5);
    }

    #[test]
    fn exact_branch_matches_pmf_sum() {
        for n in 0..EXACT_BELOW {
            for b in 0..=n {
                let c = n - b;
                let k = b.min(c);
                let mut tail = 0.0;
                for i in 0..=k {
                    let mut coef = 1.0;
                    for j in 0..i {
                        coef *= (n - j) as f64 / (j + 1) as f64;
                    }
                    tail += coef * 0.5f64.powi(n as i32);
                }
                let o = mcnemar_from_counts(b, c);
                assert!(
                    (o.p_value - (2.0 * tail).min(1.0)).abs() < 1e-12,
                    "b={b} c={c}"
                );
            }
        }
    }

    #[test]
    fn aggregate_fixtures() {
        let a = aggregate(&[0.70, 0.72, 0.74]).unwrap();
        assert!((a.mean - 0.72).abs() < 1e-12 && (a.std - 0.02).abs() < 1e-12);
        assert_eq!(aggregate(&[0.9]).unwrap().std, 0.0);
        assert_eq!(aggregate(&[]), Err(EvalError::Empty));
    }

    #[test]
    fn gain_fixtures() {
        assert_eq!(format_gain(relative_gain(86.0, 81.5)), "5.5%");
        assert!((relative_gain(96.2, 95.2) - 1.0).abs() <= 0.15);
        assert_eq!(relative_gain(0.8, 0.8), 0.0);
    }

    proptest! {
        #[test]
        fn auc_complement_and_monotone(
            raw in proptest::collection::vec((any::<u32>(), any::<bool>()), 2..60)
        ) {
            let mut seen = std::collections::HashSet::new();
            let pairs: Vec<(f64, bool)> = raw.into_iter().filter(|(s, _)| seen.insert(*s)).map(|(s, l)| (s as f64, l)).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            prop_assert!((a + roc_auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
            let transformed: Vec<f64> = scores.iter().map(|s| (s / 1e9).exp() * 3.0 - 1.0).collect();
            prop_assert_eq!(a, roc_auc(&transformed, &labels).unwrap());
        }

        #[test]
        fn mcnemar_symmetric(a in proptest::collection::vec(any::<(bool, bool, bool)>(), 1..80)) {
            let pa: Vec<bool> = a.iter().map(|t| t.0).collect();
            let pb: Vec<bool> = a.iter().map(|t| t.1).collect();
            let l: Vec<bool> = a.iter().map(|t| t.2).collect();
            let x = mcnemar(&pa, &pb, &l).unwrap();
            let y = mcnemar(&pb, &pa, &l).unwrap();
            prop_assert_eq!((x.b, x.c), (y.c, y.b));
            prop_assert_eq!(x.p_value, y.p_value);
            prop_assert!((0.0..=1.0).contains(&x.p_value));
        }

        #[test]
        fn aggregate_permutation_invariant(mut v in proptest::collection::vec(0.0f64..1.0, 1..10)) {
            let a = aggregate(&v).unwrap();
            v.reverse();
            let b = aggregate(&v).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-12 && (a.std - b.std).abs() < 1e-12);
            prop_assert!(a.std >= 0.0);
        }
    }
}
