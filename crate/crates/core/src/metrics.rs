//! Evaluation: Acc_S, Acc_N, Acc_H for noisy test-time adaptation and
//! AUROC / FPR95 for the detection view of the same stream.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::features::GroundTruth;
use crate::pipeline::{Prediction, SampleDecision};

/// TPR level for FPR95, as an integer percentage so the comparison is exact.
const TPR_PERCENT: u64 = 95;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    pub id_total: u64,
    pub id_correct: u64,
    pub noisy_total: u64,
    pub noisy_detected: u64,
    /// `(score, is_clean)` for every accumulated sample.
    pub pairs: Vec<(f64, bool)>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts one original-stream verdict. An ID sample judged noisy is a
    /// misclassification.
    pub fn accumulate(&mut self, d: &SampleDecision) -> Result<()> {
        if d.origin.is_injected() {
            return Err(Error::InjectedRecord);
        }
        self.record(d.truth, d.prediction, d.ranking_score());
        Ok(())
    }

    pub fn record(&mut self, truth: GroundTruth, prediction: Prediction, score: f64) {
        match truth {
            GroundTruth::IdClass(k) => {
                self.id_total += 1;
                if prediction == Prediction::IdClass(k) {
                    self.id_correct += 1;
                }
            }
            GroundTruth::Noisy => {
                self.noisy_total += 1;
                if prediction == Prediction::Noisy {
                    self.noisy_detected += 1;
                }
            }
        }
        self.pairs.push((score, truth.is_clean()));
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.id_total += other.id_total;
        self.id_correct += other.id_correct;
        self.noisy_total += other.noisy_total;
        self.noisy_detected += other.noisy_detected;
        self.pairs.extend_from_slice(&other.pairs);
    }

    pub fn finalize(&self) -> MetricsReport {
        let pct = |num: u64, den: u64| (den > 0).then(|| 100.0 * num as f64 / den as f64);
        let acc_s = pct(self.id_correct, self.id_total);
        let acc_n = pct(self.noisy_detected, self.noisy_total);
        let acc_h = match (acc_s, acc_n) {
            (Some(s), Some(n)) => Some(harmonic_mean(s, n)),
            _ => None,
        };
        MetricsReport {
            acc_s,
            acc_n,
            acc_h,
            auroc: auroc(&self.pairs).ok(),
            fpr95: fpr_at_95_tpr(&self.pairs).ok(),
            n_id: self.id_total,
            n_noisy: self.noisy_total,
        }
    }
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Accuracies are percentages; absent where the denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub acc_s: Option<f64>,
    pub acc_n: Option<f64>,
    pub acc_h: Option<f64>,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
    pub n_id: u64,
    pub n_noisy: u64,
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.decimals$}"))
}

impl MetricsReport {
    pub fn is_empty(&self) -> bool {
        self.n_id == 0 && self.n_noisy == 0
    }

    /// `key = value` lines; absent values are written as `-`.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        if self.is_empty() {
            out.push_str("status = no samples\n");
        }
        for (k, v, dp) in [
            ("acc_s", self.acc_s, 2),
            ("acc_n", self.acc_n, 2),
            ("acc_h", self.acc_h, 2),
            ("auroc", self.auroc, 6),
            ("fpr95", self.fpr95, 6),
        ] {
            let _ = writeln!(out, "{k} = {}", opt(v, dp));
        }
        let _ = writeln!(out, "n_id = {}", self.n_id);
        let _ = writeln!(out, "n_noisy = {}", self.n_noisy);
        out
    }

    pub const TABLE_HEADER: &'static str = "acc_s\tacc_n\tacc_h\tauroc\tfpr95\tn_id\tn_noisy";

    /// Tab-separated row in the column order of [`Self::TABLE_HEADER`].
    pub fn to_table_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            opt(self.acc_s, 2),
            opt(self.acc_n, 2),
            opt(self.acc_h, 2),
            opt(self.auroc, 6),
            opt(self.fpr95, 6),
            self.n_id,
            self.n_noisy
        )
    }
}

fn split_sorted(pairs: &[(f64, bool)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut clean: Vec<f64> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
    let mut noisy: Vec<f64> = pairs.iter().filter(|p| !p.1).map(|p| p.0).collect();
    if clean.is_empty() || noisy.is_empty() {
        return Err(Error::OneClassOnly);
    }
    clean.sort_by(f64::total_cmp);
    noisy.sort_by(f64::total_cmp);
    Ok((clean, noisy))
}

/// Probability that a random clean score exceeds a random noisy one, ties
/// counting one half.
pub fn auroc(pairs: &[(f64, bool)]) -> Result<f64> {
    let (clean, noisy) = split_sorted(pairs)?;
    // twice the Mann-Whitney U statistic, kept integral
    let mut twice_u: u128 = 0;
    let mut lo = 0usize;
    let mut hi = 0usize;
    for &c in &clean {
        while lo < noisy.len() && noisy[lo] < c {
            lo += 1;
        }
        hi = hi.max(lo);
        while hi < noisy.len() && noisy[hi] <= c {
            hi += 1;
        }
        twice_u += 2 * lo as u128 + (hi - lo) as u128;
    }
    let denom = 2 * clean.len() as u128 * noisy.len() as u128;
    Ok(twice_u as f64 / denom as f64)
}

/// Lowest false-positive rate among thresholds (clean iff `score >= t`)
/// reaching a true-positive rate of at least 95%.
pub fn fpr_at_95_tpr(pairs: &[(f64, bool)]) -> Result<f64> {
    let (clean, noisy) = split_sorted(pairs)?;
    let n = clean.len() as u64;
    // smallest k with k / n >= 0.95
    let k = (TPR_PERCENT * n).div_ceil(100) as usize;
    let threshold = clean[clean.len() - k];
    let false_pos = noisy.len() - noisy.partition_point(|&s| s < threshold);
    Ok(false_pos as f64 / noisy.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(clean: &[f64], noisy: &[f64]) -> Vec<(f64, bool)> {
        clean
            .iter()
            .map(|&s| (s, true))
            .chain(noisy.iter().map(|&s| (s, false)))
            .collect()
    }

    #[test]
    fn accumulate_rules() {
        let mut acc = MetricsAccumulator::new();
        acc.record(GroundTruth::IdClass(3), Prediction::IdClass(3), 0.9);
        assert_eq!((acc.id_total, acc.id_correct), (1, 1));
        acc.record(GroundTruth::IdClass(3), Prediction::Noisy, 0.2);
        assert_eq!((acc.id_total, acc.id_correct), (2, 1));
        acc.record(GroundTruth::IdClass(3), Prediction::IdClass(1), 0.8);
        assert_eq!((acc.id_total, acc.id_correct), (3, 1));
        acc.record(GroundTruth::Noisy, Prediction::IdClass(0), 0.7);
        assert_eq!((acc.noisy_total, acc.noisy_detected), (1, 0));
        acc.record(GroundTruth::Noisy, Prediction::Noisy, 0.1);
        assert_eq!((acc.noisy_total, acc.noisy_detected), (2, 1));
    }

    #[test]
    fn harmonic_mean_fixtures() {
        assert!((harmonic_mean(83.55, 98.39) - 90.36).abs() < 0.01);
        assert_eq!(harmonic_mean(42.0, 42.0), 42.0);
        assert_eq!(harmonic_mean(77.0, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn clean_stream_reports_absent_fields() {
        let mut acc = MetricsAccumulator::new();
        acc.record(GroundTruth::IdClass(0), Prediction::IdClass(0), 0.9);
        acc.record(GroundTruth::IdClass(1), Prediction::Noisy, 0.3);
        let r = acc.finalize();
        assert_eq!(r.acc_s, Some(50.0));
        assert_eq!(r.acc_n, None);
        assert_eq!(r.acc_h, None);
        assert_eq!(r.auroc, None);
        assert!(r.to_table_row().starts_with("50.00\t-\t-\t-\t-\t2\t0"));
    }

    #[test]
    fn empty_report_is_flagged() {
        let r = MetricsAccumulator::new().finalize();
        assert!(r.is_empty());
        assert!(r.to_key_values().contains("no samples"));
    }

    #[test]
    fn finalize_is_repeatable_and_merge_adds() {
        let mut a = MetricsAccumulator::new();
        a.record(GroundTruth::IdClass(0), Prediction::IdClass(0), 0.9);
        let mut b = MetricsAccumulator::new();
        b.record(GroundTruth::Noisy, Prediction::Noisy, 0.1);
        assert_eq!(a.finalize(), a.finalize());
        a.merge(&b);
        let r = a.finalize();
        assert_eq!((r.n_id, r.n_noisy), (1, 1));
        assert_eq!(r.acc_h, Some(100.0));
        assert_eq!(r.auroc, Some(1.0));
    }

    #[test]
    fn auroc_fixtures() {
        assert_eq!(auroc(&pairs(&[0.9, 0.8], &[0.2, 0.1])).unwrap(), 1.0);
        assert_eq!(auroc(&pairs(&[0.9, 0.3], &[0.5, 0.1])).unwrap(), 0.75);
        assert_eq!(auroc(&pairs(&[0.4, 0.4, 0.4], &[0.4, 0.4])).unwrap(), 0.5);
        assert!(matches!(auroc(&pairs(&[0.1], &[])), Err(Error::OneClassOnly)));
        assert!(matches!(auroc(&pairs(&[], &[0.1])), Err(Error::OneClassOnly)));
    }

    #[test]
    fn fpr95_fixtures() {
        assert_eq!(fpr_at_95_tpr(&pairs(&[0.9, 0.8], &[0.2, 0.1])).unwrap(), 0.0);
        // 20 clean: k = 19, threshold = 2nd smallest clean score
        let clean: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let noisy = [1.5, 2.0, 2.5, 30.0];
        assert_eq!(fpr_at_95_tpr(&pairs(&clean, &noisy)).unwrap(), 0.75);
        assert!(matches!(fpr_at_95_tpr(&pairs(&[], &[0.3])), Err(Error::OneClassOnly)));
    }
}
