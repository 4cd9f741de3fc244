//! Embedding stream data model.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Norms below this are treated as zero by [`normalize`].
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance on the unit-norm invariant of stored embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-3;

/// One image embedding. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Wraps raw values without rescaling. Fails on NaN or infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// Rounds every entry through `f32`, the precision of the on-disk format.
    pub fn quantized(&self) -> Self {
        FeatureVector(self.0.iter().map(|&v| v as f32 as f64).collect())
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &[f64]) -> Result<FeatureVector> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let norm = l2_norm(v);
    if v.is_empty() || norm < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(FeatureVector(v.iter().map(|x| x / norm).collect()))
}

/// Text prototypes of the frozen zero-shot classifier, one per ID class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank {
    prototypes: Vec<FeatureVector>,
    class_names: Vec<String>,
}

impl ClassifierBank {
    pub fn new(prototypes: Vec<FeatureVector>, class_names: Vec<String>) -> Result<Self> {
        if prototypes.is_empty() {
            return Err(Error::BadBank("at least one class is required".into()));
        }
        if prototypes.len() != class_names.len() {
            return Err(Error::BadBank(format!(
                "{} prototypes but {} class names",
                prototypes.len(),
                class_names.len()
            )));
        }
        let dim = prototypes[0].dim();
        if dim == 0 {
            return Err(Error::BadBank("prototypes have zero dimension".into()));
        }
        for (k, p) in prototypes.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: p.dim(),
                });
            }
            let norm = p.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::BadBank(format!(
                    "prototype {k} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(ClassifierBank {
            prototypes,
            class_names,
        })
    }

    /// Bank with generated names `class_0 .. class_{K-1}`.
    pub fn unnamed(prototypes: Vec<FeatureVector>) -> Result<Self> {
        let names = (0..prototypes.len()).map(|k| format!("class_{k}")).collect();
        Self::new(prototypes, names)
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].dim()
    }

    pub fn prototypes(&self) -> &[FeatureVector] {
        &self.prototypes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroundTruth {
    IdClass(usize),
    Noisy,
}

impl GroundTruth {
    pub fn is_clean(self) -> bool {
        matches!(self, GroundTruth::IdClass(_))
    }

    /// File encoding: class index, or -1 for noisy.
    pub fn to_label(self) -> i32 {
        match self {
            GroundTruth::IdClass(k) => k as i32,
            GroundTruth::Noisy => -1,
        }
    }
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundTruth::IdClass(k) => write!(f, "{k}"),
            GroundTruth::Noisy => f.write_str("noisy"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseType {
    Gaussian,
    Uniform,
    SaltAndPepper,
    Poisson,
    SyntheticGaussianFeature,
}

impl NoiseType {
    pub const ALL: [NoiseType; 5] = [
        NoiseType::Gaussian,
        NoiseType::Uniform,
        NoiseType::SaltAndPepper,
        NoiseType::Poisson,
        NoiseType::SyntheticGaussianFeature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseType::Gaussian => "gaussian",
            NoiseType::Uniform => "uniform",
            NoiseType::SaltAndPepper => "salt_and_pepper",
            NoiseType::Poisson => "poisson",
            NoiseType::SyntheticGaussianFeature => "synthetic_gaussian_feature",
        }
    }
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown noise type '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Original,
    Injected(NoiseType),
}

impl Origin {
    pub fn is_injected(self) -> bool {
        matches!(self, Origin::Injected(_))
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Original => f.write_str("original"),
            Origin::Injected(t) => write!(f, "injected:{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub feature: FeatureVector,
    pub truth: GroundTruth,
    pub origin: Origin,
}

impl StreamRecord {
    pub fn original(feature: FeatureVector, truth: GroundTruth) -> Self {
        StreamRecord {
            feature,
            truth,
            origin: Origin::Original,
        }
    }

    /// Injected records are noisy by construction.
    pub fn injected(feature: FeatureVector, noise_type: NoiseType) -> Self {
        StreamRecord {
            feature,
            truth: GroundTruth::Noisy,
            origin: Origin::Injected(noise_type),
        }
    }
}

/// Pre-encoded noise embeddings drawn from when injecting.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    pub noise_type: NoiseType,
    features: Vec<FeatureVector>,
}

impl NoiseBank {
    pub fn new(noise_type: NoiseType, features: Vec<FeatureVector>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyBank);
        }
        let dim = features[0].dim();
        if let Some(f) = features.iter().find(|f| f.dim() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: f.dim(),
            });
        }
        Ok(NoiseBank {
            noise_type,
            features,
        })
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_three_four_five() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!((v.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((v.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_is_identity() {
        let v = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_zero_and_empty() {
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(normalize(&[1e-13]), Err(Error::ZeroVector)));
        assert!(matches!(normalize(&[]), Err(Error::ZeroVector)));
        assert!(matches!(normalize(&[1.0, f64::NAN]), Err(Error::NonFinite(1))));
    }

    #[test]
    fn random_512_dim_has_unit_norm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..512).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v = normalize(&raw).unwrap();
        // independent recomputation
        let mut acc = 0.0f64;
        for x in v.as_slice() {
            acc += x * x;
        }
        assert!((acc.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bank_validation() {
        let e0 = FeatureVector::new(vec![1.0, 0.0]).unwrap();
        let e1 = FeatureVector::new(vec![0.0, 1.0]).unwrap();
        assert!(ClassifierBank::unnamed(vec![]).is_err());
        assert!(ClassifierBank::new(vec![e0.clone()], vec![]).is_err());
        let long = FeatureVector::new(vec![2.0, 0.0]).unwrap();
        assert!(ClassifierBank::unnamed(vec![e0.clone(), long]).is_err());
        let bank = ClassifierBank::unnamed(vec![e0, e1]).unwrap();
        assert_eq!(bank.num_classes(), 2);
        assert_eq!(bank.class_names()[1], "class_1");
    }

    #[test]
    fn noise_type_names_round_trip() {
        for t in NoiseType::ALL {
            assert_eq!(t.name().parse::<NoiseType>().unwrap(), t);
        }
        assert!("pink".parse::<NoiseType>().is_err());
    }

    #[test]
    fn injected_records_are_noisy() {
        let f = FeatureVector::new(vec![1.0]).unwrap();
        let r = StreamRecord::injected(f, NoiseType::Gaussian);
        assert_eq!(r.truth, GroundTruth::Noisy);
        assert!(r.origin.is_injected());
    }

    proptest! {
        #[test]
        fn normalize_preserves_direction(v in prop::collection::vec(-100.0f64..100.0, 1..64)) {
            prop_assume!(l2_norm(&v) > 1e-6);
            let u = normalize(&v).unwrap();
            prop_assert!((u.norm() - 1.0).abs() < 1e-12);
            let n = l2_norm(&v);
            for (a, b) in u.as_slice().iter().zip(&v) {
                prop_assert!((a * n - b).abs() < 1e-9 * n.max(1.0));
            }
        }
    }
}
