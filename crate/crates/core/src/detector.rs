//! Two-output linear noise detector trained online with Adam.
//!
//! Parameters are stored flat: the `2 x D` weight matrix row-major (clean row
//! first), followed by the two biases. Gradients and Adam moments share that
//! layout.

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Output classes of the detector.
pub const NUM_OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PseudoLabel {
    Clean,
    Noise,
}

impl PseudoLabel {
    pub fn class_index(self) -> usize {
        match self {
            PseudoLabel::Clean => 0,
            PseudoLabel::Noise => 1,
        }
    }

    /// The signed encoding used by the reference algorithm: +1 clean, -1 noise.
    pub fn signed(self) -> i32 {
        match self {
            PseudoLabel::Clean => 1,
            PseudoLabel::Noise => -1,
        }
    }
}

impl std::fmt::Display for PseudoLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PseudoLabel::Clean => "clean",
            PseudoLabel::Noise => "noise",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDetector {
    dim: usize,
    params: Vec<f64>,
}

impl LinearDetector {
    /// All-zero detector; its clean probability is exactly 0.5 everywhere.
    pub fn zeros(dim: usize) -> Self {
        LinearDetector {
            dim,
            params: vec![0.0; param_count(dim)],
        }
    }

    pub fn from_params(dim: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != param_count(dim) {
            return Err(Error::ShapeMismatch {
                expected: param_count(dim),
                actual: params.len(),
            });
        }
        Ok(LinearDetector { dim, params })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self, class: usize) -> &[f64] {
        &self.params[class * self.dim..(class + 1) * self.dim]
    }

    pub fn bias(&self) -> [f64; 2] {
        let b = 2 * self.dim;
        [self.params[b], self.params[b + 1]]
    }

    pub fn forward(&self, f: &FeatureVector) -> Result<[f64; 2]> {
        if f.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: f.dim(),
            });
        }
        Ok(self.forward_unchecked(f.as_slice()))
    }

    fn forward_unchecked(&self, x: &[f64]) -> [f64; 2] {
        let bias = self.bias();
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.weights(c).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias[c];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

pub fn param_count(dim: usize) -> usize {
    NUM_OUTPUTS * dim + NUM_OUTPUTS
}

/// Softmax probability of the clean output.
pub fn clean_probability(logits: [f64; 2]) -> f64 {
    // 1 / (1 + e^(noise - clean)), overflow-safe either way round
    let margin = logits[0] - logits[1];
    if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy of the detector over `batch` and its exact gradient.
pub fn ce_loss_and_grad(
    det: &LinearDetector,
    batch: &[(&FeatureVector, PseudoLabel)],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = det.dim;
    let mut grad = vec![0.0; param_count(d)];
    let mut loss = 0.0;
    for (f, label) in batch {
        if f.dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                actual: f.dim(),
            });
        }
        let x = f.as_slice();
        let z = det.forward_unchecked(x);
        let max = z[0].max(z[1]);
        let lse = max + ((z[0] - max).exp() + (z[1] - max).exp()).ln();
        let y = label.class_index();
        loss += lse - z[y];
        for c in 0..NUM_OUTPUTS {
            let p = (z[c] - lse).exp();
            let dz = p - if c == y { 1.0 } else { 0.0 };
            for (g, v) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                *g += dz * v;
            }
            grad[2 * d + c] += dz;
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                actual: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

pub fn adam_step(det: &mut LinearDetector, adam: &mut AdamState, grads: &[f64]) -> Result<()> {
    adam.step(&mut det.params, grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub feature: FeatureVector,
    pub pseudo: PseudoLabel,
    /// Logits at enqueue time. Kept for inspection only; training recomputes
    /// them under the current parameters.
    pub cached_logits: [f64; 2],
}

/// Holds up to `L` labelled features; a full queue triggers one optimizer
/// step and is then emptied.
#[derive(Debug, Clone)]
pub struct TrainingQueue {
    capacity: usize,
    entries: Vec<QueueEntry>,
    last_loss: Option<f64>,
}

impl TrainingQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "training queue capacity must be >= 1");
        TrainingQueue {
            capacity,
            entries: Vec::with_capacity(capacity),
            last_loss: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    /// Loss of the batch at the most recent flush, before the update.
    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    /// Appends a sample; returns `true` when this filled the queue and an
    /// optimizer step was taken.
    pub fn enqueue_and_maybe_train(
        &mut self,
        det: &mut LinearDetector,
        adam: &mut AdamState,
        feature: &FeatureVector,
        pseudo: PseudoLabel,
    ) -> Result<bool> {
        let cached_logits = det.forward(feature)?;
        self.entries.push(QueueEntry {
            feature: feature.clone(),
            pseudo,
            cached_logits,
        });
        if self.entries.len() < self.capacity {
            return Ok(false);
        }
        let batch: Vec<(&FeatureVector, PseudoLabel)> =
            self.entries.iter().map(|e| (&e.feature, e.pseudo)).collect();
        let (loss, grads) = ce_loss_and_grad(det, &batch)?;
        adam_step(det, adam, &grads)?;
        self.last_loss = Some(loss);
        self.entries.clear();
        Ok(true)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ZNDT";

/// Parameter dump: magic, u64 D, u64 step count, then `2D + 2` f64 values,
/// all little-endian.
pub fn encode_checkpoint(det: &LinearDetector, steps: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + det.params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(det.dim as u64).to_le_bytes());
    out.extend_from_slice(&steps.to_le_bytes());
    for p in &det.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(LinearDetector, u64)> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 20 {
        return Err(Error::TruncatedPayload {
            expected: 20,
            actual: bytes.len() as u64,
        });
    }
    let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let dim = u64_at(4) as usize;
    let steps = u64_at(12);
    let expected = 20 + param_count(dim) as u64 * 8;
    if bytes.len() as u64 != expected {
        return Err(Error::TruncatedPayload {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let params = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((LinearDetector::from_params(dim, params)?, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_detector_outputs_zero() {
        let det = LinearDetector::zeros(5);
        assert_eq!(det.forward(&fv(&[0.1, 0.2, 0.3, 0.4, 0.5])).unwrap(), [0.0, 0.0]);
        assert_eq!(clean_probability([0.0, 0.0]), 0.5);
    }

    #[test]
    fn basis_vector_forward() {
        let det = LinearDetector::from_params(3, vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(det.forward(&fv(&[1.0, 0.0, 0.0])).unwrap(), [1.0, -1.0]);
        assert!(matches!(
            det.forward(&fv(&[1.0, 0.0])),
            Err(Error::DimMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn forward_matches_naive_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 16;
        let params: Vec<f64> = (0..param_count(d)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let det = LinearDetector::from_params(d, params.clone()).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = det.forward(&fv(&x)).unwrap();
        for c in 0..2 {
            let mut acc = params[2 * d + c];
            for j in 0..d {
                acc += params[c * d + j] * x[j];
            }
            assert!((z[c] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn clean_probability_closed_forms() {
        let expected = 1.0 / (1.0 + (-20.0f64).exp());
        assert!((clean_probability([20.0, 0.0]) - expected).abs() < 1e-15);
        assert!((clean_probability([1.3, -0.4]) - clean_probability([4.3, 2.6])).abs() < 1e-15);
        assert!(clean_probability([-800.0, 800.0]) >= 0.0);
        assert!(clean_probability([800.0, -800.0]) <= 1.0);
        // strictly increasing in the margin
        let mut prev = 0.0;
        for m in -30..=30 {
            let p = clean_probability([m as f64 * 0.5, 0.0]);
            assert!(p > prev);
            prev = p;
        }
    }

    #[test]
    fn zero_detector_loss_is_ln2() {
        let det = LinearDetector::zeros(3);
        let a = fv(&[1.0, 0.0, 0.0]);
        let b = fv(&[0.0, 1.0, 0.0]);
        let (loss, _) =
            ce_loss_and_grad(&det, &[(&a, PseudoLabel::Clean), (&b, PseudoLabel::Noise)]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(ce_loss_and_grad(&det, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn confident_detector_has_vanishing_loss() {
        // bias pushes all mass onto the clean output
        let det = LinearDetector::from_params(2, vec![0.0, 0.0, 0.0, 0.0, 50.0, -50.0]).unwrap();
        let a = fv(&[0.6, 0.8]);
        let (loss, grad) = ce_loss_and_grad(&det, &[(&a, PseudoLabel::Clean)]).unwrap();
        assert!(loss < 1e-40);
        assert!(grad.iter().all(|g| g.abs() < 1e-40));
    }

    fn finite_difference(det: &LinearDetector, batch: &[(&FeatureVector, PseudoLabel)], i: usize) -> f64 {
        let h = 1e-5;
        let mut plus = det.clone();
        plus.params[i] += h;
        let mut minus = det.clone();
        minus.params[i] -= h;
        let lp = ce_loss_and_grad(&plus, batch).unwrap().0;
        let lm = ce_loss_and_grad(&minus, batch).unwrap().0;
        (lp - lm) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 8;
        let params: Vec<f64> = (0..param_count(d)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let det = LinearDetector::from_params(d, params).unwrap();
        let feats: Vec<FeatureVector> = (0..5)
            .map(|_| normalize(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap())
            .collect();
        let batch: Vec<_> = feats
            .iter()
            .enumerate()
            .map(|(i, f)| (f, if i % 2 == 0 { PseudoLabel::Clean } else { PseudoLabel::Noise }))
            .collect();
        let (_, grad) = ce_loss_and_grad(&det, &batch).unwrap();
        for i in 0..grad.len() {
            let fd = finite_difference(&det, &batch, i);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "coordinate {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut det = LinearDetector::from_params(1, vec![0.3, -0.2, 0.1, 0.4]).unwrap();
        let before = det.clone();
        let mut adam = AdamState::new(4, AdamConfig::default());
        adam_step(&mut det, &mut adam, &[0.0; 4]).unwrap();
        assert_eq!(det, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut theta = [0.0];
        let mut adam = AdamState::new(1, AdamConfig::default());
        adam.step(&mut theta, &[1.0]).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = -5e-4 / (1.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut adam = AdamState::new(3, AdamConfig::default());
        let mut p = [0.0; 2];
        assert!(matches!(adam.step(&mut p, &[0.0; 2]), Err(Error::ShapeMismatch { .. })));
        let mut p = [0.0; 3];
        assert!(matches!(adam.step(&mut p, &[0.0; 4]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn queue_trains_on_the_lth_sample() {
        let d = 3;
        let mut det = LinearDetector::zeros(d);
        let mut adam = AdamState::new(param_count(d), AdamConfig::default());
        let mut q = TrainingQueue::new(4);
        let f = fv(&[1.0, 0.0, 0.0]);
        for i in 0..3 {
            assert!(!q.enqueue_and_maybe_train(&mut det, &mut adam, &f, PseudoLabel::Clean).unwrap());
            assert_eq!(q.len(), i + 1);
        }
        assert_eq!(adam.steps(), 0);
        assert!(q.enqueue_and_maybe_train(&mut det, &mut adam, &f, PseudoLabel::Noise).unwrap());
        assert!(q.is_empty());
        assert_eq!(adam.steps(), 1);
        assert!((q.last_loss().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_ne!(det, LinearDetector::zeros(d));
    }

    #[test]
    fn checkpoint_round_trip() {
        let det = LinearDetector::from_params(2, vec![0.5, -1.25, 3.0, 1e-300, -0.0, 7.0]).unwrap();
        let bytes = encode_checkpoint(&det, 42);
        assert_eq!(bytes.len(), 20 + 6 * 8);
        let (back, steps) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(steps, 42);
        assert_eq!(
            back.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
            det.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
        assert!(matches!(decode_checkpoint(&bytes[..30]), Err(Error::TruncatedPayload { .. })));
        assert!(matches!(decode_checkpoint(b"nope"), Err(Error::BadMagic)));
    }
}
