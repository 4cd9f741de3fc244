//! Online zero-shot noisy test-time adaptation over frozen embeddings.
//!
//! A frozen vision-language classifier is represented by its text prototypes
//! ([`ClassifierBank`]). Each incoming image embedding is scored with the
//! maximum temperature-scaled softmax over cosine similarities (MCM), split
//! into clean and noisy with a variance-minimizing threshold over a sliding
//! window, and, once warmed up, re-judged by a small linear noise detector
//! that is trained online on the frozen model's own pseudo-labels. Synthetic
//! noise samples are injected at a fixed cadence so that a noise mode always
//! exists in the score window, even on clean streams.
//!
//! Module map:
//!
//! - [`features`], [`format`], [`synth`]: embedding data model, the `ZNTA`
//!   binary file format, and a seeded synthetic stream generator.
//! - [`scoring`]: cosine similarities, MCM score, zero-shot classification.
//! - [`threshold`]: the score window and adaptive threshold.
//! - [`detector`]: linear detector, cross-entropy gradients, Adam, and the
//!   training queue.
//! - [`pipeline`]: per-sample orchestration of the two-stage method.
//! - [`metrics`]: Acc_S / Acc_N / Acc_H, AUROC and FPR95.
//! - [`experiment`]: configuration sweeps, reports, and score histograms.

pub mod detector;
pub mod error;
pub mod experiment;
pub mod features;
pub mod format;
pub mod metrics;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod threshold;

pub use detector::{AdamState, LinearDetector, PseudoLabel, TrainingQueue};
pub use error::{Error, Result};
pub use features::{
    normalize, ClassifierBank, FeatureVector, GroundTruth, NoiseBank, NoiseType, Origin,
    StreamRecord,
};
pub use metrics::{MetricsAccumulator, MetricsReport};
pub use pipeline::{Method, Pipeline, PipelineConfig, Prediction, PseudoSource, SampleDecision};
pub use scoring::{SimilarityVector, Temperature};
pub use threshold::{ScoreQueue, ThresholdPolicy};
