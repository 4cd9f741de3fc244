//! Sliding score window and the variance-minimizing clean/noise threshold.
//!
//! For a window of scores `S` and a cut `t`, the objective is the sum of the
//! two within-partition variances
//!
//! ```text
//! J(t) = sum_{S_i > t} (S_i - mu_hi)^2 / N_hi + sum_{S_i <= t} (S_i - mu_lo)^2 / N_lo
//! ```
//!
//! minimized over the midpoints between consecutive distinct sorted scores.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Threshold returned when the window holds fewer than two distinct scores.
pub const FALLBACK_THRESHOLD: f64 = 0.5;

/// Relative slack under which two objective values count as tied.
pub const TIE_EPS: f64 = 1e-12;

/// FIFO window of recent scores with a sorted mirror kept in step, so the
/// threshold costs `O(n)` per sample rather than a sort.
#[derive(Debug, Clone)]
pub struct ScoreQueue {
    capacity: usize,
    fifo: VecDeque<f64>,
    sorted: Vec<f64>,
}

impl ScoreQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "score queue capacity must be >= 1");
        ScoreQueue {
            capacity,
            fifo: VecDeque::with_capacity(capacity),
            sorted: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    /// Scores in insertion order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.fifo.iter().copied()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn push(&mut self, score: f64) {
        debug_assert!(score.is_finite(), "non-finite score {score}");
        if self.fifo.len() == self.capacity {
            if let Some(old) = self.fifo.pop_front() {
                let at = self.sorted.partition_point(|v| v.total_cmp(&old).is_lt());
                debug_assert_eq!(self.sorted[at].to_bits(), old.to_bits());
                self.sorted.remove(at);
            }
        }
        self.fifo.push_back(score);
        let at = self.sorted.partition_point(|v| v.total_cmp(&score).is_le());
        self.sorted.insert(at, score);
    }

    pub fn clear(&mut self) {
        self.fifo.clear();
        self.sorted.clear();
    }
}

/// Split between two adjacent distinct sorted scores. Uses the midpoint,
/// unless rounding pushed it onto the upper score, in which case the lower
/// score itself separates the partitions.
pub fn split_point(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Threshold and objective value for an ascending score slice.
/// `None` when fewer than two distinct scores exist.
pub fn minimize_within_variance(sorted: &[f64]) -> Option<(f64, f64)> {
    let n = sorted.len();
    if n < 2 || sorted[0] == sorted[n - 1] {
        return None;
    }
    // Welford sums of squared deviations: prefix[i] covers sorted[..=i],
    // suffix[i] covers sorted[i..].
    let mut prefix = vec![0.0; n];
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        let delta = s - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (s - mean);
        prefix[i] = m2;
    }
    let mut suffix = vec![0.0; n];
    mean = 0.0;
    m2 = 0.0;
    for (j, &s) in sorted.iter().enumerate().rev() {
        let count = (n - j) as f64;
        let delta = s - mean;
        mean += delta / count;
        m2 += delta * (s - mean);
        suffix[j] = m2;
    }

    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        if sorted[i] == sorted[i + 1] {
            continue;
        }
        let lo_n = (i + 1) as f64;
        let hi_n = (n - i - 1) as f64;
        let j = prefix[i] / lo_n + suffix[i + 1] / hi_n;
        let lambda = split_point(sorted[i], sorted[i + 1]);
        match best {
            Some((_, bj)) if j >= bj - TIE_EPS * bj.abs() => {}
            _ => best = Some((lambda, j)),
        }
    }
    best
}

pub fn adaptive_threshold(q: &ScoreQueue) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::EmptyQueue);
    }
    Ok(minimize_within_variance(q.sorted())
        .map(|(lambda, _)| lambda)
        .unwrap_or(FALLBACK_THRESHOLD))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    Adaptive,
    Fixed(f64),
}

impl ThresholdPolicy {
    pub fn fixed(lambda: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&lambda) {
            Ok(ThresholdPolicy::Fixed(lambda))
        } else {
            Err(Error::InvalidConfig(format!(
                "fixed threshold {lambda} outside [0, 1]"
            )))
        }
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Adaptive
    }
}

impl std::fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ThresholdPolicy::Adaptive => f.write_str("adaptive"),
            ThresholdPolicy::Fixed(l) => write!(f, "fixed:{l}"),
        }
    }
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "adaptive" {
            return Ok(ThresholdPolicy::Adaptive);
        }
        let value = s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidConfig(format!("bad threshold policy '{s}'")))?;
        ThresholdPolicy::fixed(value)
    }
}

pub fn effective_threshold(policy: ThresholdPolicy, q: &ScoreQueue) -> Result<f64> {
    match policy {
        ThresholdPolicy::Fixed(l) => Ok(l),
        ThresholdPolicy::Adaptive => adaptive_threshold(q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn queue(scores: &[f64], cap: usize) -> ScoreQueue {
        let mut q = ScoreQueue::new(cap);
        for &s in scores {
            q.push(s);
        }
        q
    }

    #[test]
    fn fifo_eviction() {
        let pushed: Vec<f64> = (0..600).map(|i| i as f64 / 600.0).collect();
        let q = queue(&pushed, 512);
        assert_eq!(q.len(), 512);
        let contents: Vec<f64> = q.iter().collect();
        assert_eq!(contents, pushed[88..]);
        assert_eq!(q.sorted(), &pushed[88..]);
    }

    #[test]
    fn single_push() {
        let q = queue(&[0.5], 4);
        assert_eq!(q.iter().collect::<Vec<_>>(), vec![0.5]);
    }

    #[test]
    fn four_point_bimodal() {
        let q = queue(&[0.9, 0.1, 0.8, 0.2], 8);
        let (lambda, j) = minimize_within_variance(q.sorted()).unwrap();
        assert!((lambda - 0.5).abs() < 1e-15);
        assert!((j - 0.005).abs() < 1e-12);
        assert!((adaptive_threshold(&q).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_queue_falls_back() {
        let q = queue(&vec![0.7; 512], 512);
        assert_eq!(adaptive_threshold(&q).unwrap(), FALLBACK_THRESHOLD);
        let q = queue(&[0.3], 4);
        assert_eq!(adaptive_threshold(&q).unwrap(), FALLBACK_THRESHOLD);
    }

    #[test]
    fn empty_queue_errors() {
        let q = ScoreQueue::new(4);
        assert!(matches!(adaptive_threshold(&q), Err(Error::EmptyQueue)));
        assert!(matches!(
            effective_threshold(ThresholdPolicy::Adaptive, &q),
            Err(Error::EmptyQueue)
        ));
        assert_eq!(effective_threshold(ThresholdPolicy::Fixed(0.3), &q).unwrap(), 0.3);
    }

    #[test]
    fn effective_adaptive_delegates() {
        let q = queue(&[0.1, 0.2, 0.8, 0.9], 8);
        assert!((effective_threshold(ThresholdPolicy::Adaptive, &q).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("adaptive".parse::<ThresholdPolicy>().unwrap(), ThresholdPolicy::Adaptive);
        assert_eq!("fixed:0.3".parse::<ThresholdPolicy>().unwrap(), ThresholdPolicy::Fixed(0.3));
        assert!("fixed:1.3".parse::<ThresholdPolicy>().is_err());
        assert!("otsu".parse::<ThresholdPolicy>().is_err());
        assert_eq!(ThresholdPolicy::Fixed(0.3).to_string(), "fixed:0.3");
    }

    #[test]
    fn split_point_never_lands_on_upper() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let s = split_point(lo, hi);
        assert!(s >= lo && s < hi);
    }

    proptest! {
        #[test]
        fn queue_holds_suffix(pushed in prop::collection::vec(0.0f64..1.0, 0..200), cap in 1usize..64) {
            let q = queue(&pushed, cap);
            let start = pushed.len().saturating_sub(cap);
            let contents: Vec<f64> = q.iter().collect();
            prop_assert_eq!(&contents[..], &pushed[start..]);
            let mut sorted = pushed[start..].to_vec();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(q.sorted(), &sorted[..]);
        }

        #[test]
        fn threshold_strictly_inside_range(scores in prop::collection::vec(0.0f64..1.0, 2..100)) {
            let q = queue(&scores, 128);
            let s = q.sorted();
            prop_assume!(s[0] < s[s.len() - 1]);
            let l = adaptive_threshold(&q).unwrap();
            prop_assert!(l >= s[0] && l < s[s.len() - 1]);
            // at least one score on each side
            prop_assert!(s.iter().any(|&v| v > l));
            prop_assert!(s.iter().any(|&v| v <= l));
        }
    }
}
