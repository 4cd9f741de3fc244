//! Seeded synthetic embedding streams.
//!
//! ID features are Gaussian perturbations of `K` random unit prototypes
//! (which double as the classifier bank), renormalized. OOD features are drawn
//! the same way around a separate set of prototypes. Each domain also carries
//! a shared offset orthogonal to the prototypes, which keeps cosine
//! similarities low the way real image-text embeddings do, and gives the two
//! domains distinct regions of the space. Everything is quantized to `f32` so
//! synthetic streams survive a trip through a feature file unchanged.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    normalize, ClassifierBank, FeatureVector, GroundTruth, NoiseBank, NoiseType, StreamRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub ood_clusters: usize,
    /// Total OOD records, spread round-robin over the OOD clusters.
    pub n_ood: usize,
    /// Inverse per-coordinate standard deviation of the perturbation.
    /// `f64::INFINITY` yields exact prototypes.
    pub concentration: f64,
    /// Pulls each OOD prototype toward a random ID prototype:
    /// `normalize((1 - mix) * fresh + mix * id_proto)`. Zero keeps them
    /// independent.
    pub ood_mix: f64,
    /// Length of an offset shared by every cluster center of a domain: one
    /// random direction for ID, another for OOD. Zero disables it.
    pub domain_shift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 10,
            dim: 64,
            n_per_class: 400,
            ood_clusters: 10,
            n_ood: 4000,
            concentration: 4.0,
            ood_mix: 0.0,
            domain_shift: 12.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::BadSpec(format!("K={} must be >= 2", self.classes)));
        }
        if self.dim < 2 {
            return Err(Error::BadSpec(format!("D={} must be >= 2", self.dim)));
        }
        if !(self.concentration > 0.0) {
            return Err(Error::BadSpec(format!(
                "concentration {} must be > 0",
                self.concentration
            )));
        }
        if self.n_ood > 0 && self.ood_clusters == 0 {
            return Err(Error::BadSpec("OOD records requested with zero clusters".into()));
        }
        if !(0.0..1.0).contains(&self.ood_mix) {
            return Err(Error::BadSpec(format!("ood_mix {} outside [0, 1)", self.ood_mix)));
        }
        if !(self.domain_shift >= 0.0 && self.domain_shift.is_finite()) {
            return Err(Error::BadSpec(format!(
                "domain_shift {} must be finite and >= 0",
                self.domain_shift
            )));
        }
        Ok(())
    }
}

pub struct SynthStream {
    pub bank: ClassifierBank,
    pub id_records: Vec<StreamRecord>,
    pub ood_records: Vec<StreamRecord>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> FeatureVector {
    loop {
        if let Ok(v) = normalize(&gaussian_vec(rng, dim)) {
            return v;
        }
    }
}

/// Random unit vector orthogonal to the span of `basis` (Gram-Schmidt), so a
/// shared offset along it moves every cosine to the prototypes by the same
/// factor. Falls back to an unconstrained direction when the span is full.
fn orthogonal_unit(rng: &mut ChaCha8Rng, basis: &[FeatureVector]) -> FeatureVector {
    let dim = basis[0].dim();
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut v = b.as_slice().to_vec();
        for q in &ortho {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        if let Ok(u) = normalize(&v) {
            ortho.push(u.into_inner());
        }
    }
    for _ in 0..16 {
        let mut v = gaussian_vec(rng, dim);
        for q in &ortho {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
    random_unit(rng, dim)
}

fn perturb(rng: &mut ChaCha8Rng, center: &FeatureVector, concentration: f64) -> FeatureVector {
    let scale = 1.0 / concentration;
    let noise = gaussian_vec(rng, center.dim());
    let raw: Vec<f64> = center
        .as_slice()
        .iter()
        .zip(&noise)
        .map(|(c, g)| c + scale * g)
        .collect();
    // A perturbation cancelling the center exactly has probability zero; fall
    // back to the center so generation stays total.
    normalize(&raw).unwrap_or_else(|_| center.clone()).quantized()
}

pub fn synth_stream(spec: &SynthSpec) -> Result<SynthStream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let id_protos: Vec<FeatureVector> = (0..spec.classes)
        .map(|_| random_unit(&mut rng, spec.dim).quantized())
        .collect();
    let ood_protos: Vec<FeatureVector> = (0..spec.ood_clusters)
        .map(|c| {
            let fresh = random_unit(&mut rng, spec.dim);
            if spec.ood_mix == 0.0 {
                return fresh;
            }
            let anchor = &id_protos[c % spec.classes];
            let mixed: Vec<f64> = fresh
                .as_slice()
                .iter()
                .zip(anchor.as_slice())
                .map(|(f, a)| (1.0 - spec.ood_mix) * f + spec.ood_mix * a)
                .collect();
            normalize(&mixed).unwrap_or(fresh)
        })
        .collect();

    let id_offset = orthogonal_unit(&mut rng, &id_protos);
    let ood_offset = orthogonal_unit(&mut rng, &id_protos);
    let shifted = |center: &FeatureVector, offset: &FeatureVector| -> FeatureVector {
        let v = center
            .as_slice()
            .iter()
            .zip(offset.as_slice())
            .map(|(c, o)| c + spec.domain_shift * o)
            .collect();
        FeatureVector::new(v).expect("finite by construction")
    };

    let mut id_records = Vec::with_capacity(spec.classes * spec.n_per_class);
    for (k, proto) in id_protos.iter().enumerate() {
        let center = shifted(proto, &id_offset);
        for _ in 0..spec.n_per_class {
            let f = perturb(&mut rng, &center, spec.concentration);
            id_records.push(StreamRecord::original(f, GroundTruth::IdClass(k)));
        }
    }
    let mut ood_records = Vec::with_capacity(spec.n_ood);
    for i in 0..spec.n_ood {
        let center = shifted(&ood_protos[i % spec.ood_clusters], &ood_offset);
        let f = perturb(&mut rng, &center, spec.concentration);
        ood_records.push(StreamRecord::original(f, GroundTruth::Noisy));
    }

    Ok(SynthStream {
        bank: ClassifierBank::unnamed(id_protos)?,
        id_records,
        ood_records,
    })
}

/// Feature-space stand-in for encoded noise images: perturbations around a
/// single random direction, the way noise images collapse to one region of a
/// real embedding space.
pub fn synth_noise_bank(dim: usize, count: usize, concentration: f64, seed: u64) -> Result<NoiseBank> {
    if dim < 2 || !(concentration > 0.0) {
        return Err(Error::BadSpec(format!(
            "noise bank needs D >= 2 and concentration > 0 (D={dim}, concentration={concentration})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6562_616e);
    let center = random_unit(&mut rng, dim);
    let features = (0..count)
        .map(|_| perturb(&mut rng, &center, concentration))
        .collect();
    NoiseBank::new(NoiseType::SyntheticGaussianFeature, features)
}

/// Shuffles all `id` records together with enough `ood` records that the
/// noisy fraction equals `noise_ratio` (to within rounding). OOD records are
/// taken from the front of `ood`.
pub fn mix_streams(
    id: &[StreamRecord],
    ood: &[StreamRecord],
    noise_ratio: f64,
    seed: u64,
) -> Result<Vec<StreamRecord>> {
    if !(0.0..=1.0).contains(&noise_ratio) {
        return Err(Error::InvalidConfig(format!(
            "noise ratio {noise_ratio} outside [0, 1]"
        )));
    }
    let (n_id, n_ood) = if noise_ratio == 1.0 {
        (0, ood.len())
    } else {
        let n_ood = (noise_ratio * id.len() as f64 / (1.0 - noise_ratio)).round() as usize;
        (id.len(), n_ood)
    };
    if n_ood > ood.len() {
        return Err(Error::InsufficientRecords {
            ratio: noise_ratio,
            needed: n_ood,
            available: ood.len(),
        });
    }
    let mut out: Vec<StreamRecord> = id[..n_id].iter().chain(&ood[..n_ood]).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.shuffle(&mut rng);
    Ok(out)
}
