//! Per-sample orchestration of the two-stage method.
//!
//! For every incoming embedding the pipeline
//!
//! 1. scores it with the frozen classifier (MCM), pushes the score into the
//!    MCM window and derives the zero-shot threshold and pseudo-label;
//! 2. enqueues `(feature, pseudo-label)` for the noise detector, which takes
//!    one Adam step whenever its queue fills;
//! 3. emits a verdict: while fewer than `N` optimizer steps have completed the
//!    frozen rule decides, afterwards the detector's clean probability is
//!    thresholded against its own adaptive window.
//!
//! After every `M` original samples one embedding from the noise bank is
//! pushed through the same path with a forced noise label, so that the
//! threshold windows always contain a noise mode. Injected samples never
//! reach the metrics.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::{
    clean_probability, param_count, AdamConfig, AdamState, LinearDetector, PseudoLabel,
    TrainingQueue,
};
use crate::error::{Error, Result};
use crate::features::{ClassifierBank, GroundTruth, NoiseBank, Origin, StreamRecord};
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::scoring::{classify, cosine_similarities, mcm_score, Temperature};
use crate::threshold::{effective_threshold, ScoreQueue, ThresholdPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Frozen zero-shot classifier with the MCM threshold; never trains.
    FrozenBaseline,
    AdaNd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::FrozenBaseline => "frozen",
            Method::AdaNd => "adand",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" | "zs-clip" | "zsclip" => Ok(Method::FrozenBaseline),
            "adand" => Ok(Method::AdaNd),
            _ => Err(Error::InvalidConfig(format!("unknown method '{s}'"))),
        }
    }
}

/// Where the detector's training labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PseudoSource {
    /// The frozen model's thresholded MCM verdict.
    ZsClip,
    /// The detector's own verdict once stage 2 is reached.
    Detector,
    /// Ground truth; an upper-bound ablation.
    Oracle,
}

impl PseudoSource {
    pub fn name(self) -> &'static str {
        match self {
            PseudoSource::ZsClip => "zsclip",
            PseudoSource::Detector => "detector",
            PseudoSource::Oracle => "oracle",
        }
    }
}

impl fmt::Display for PseudoSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PseudoSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsclip" | "zs-clip" => Ok(PseudoSource::ZsClip),
            "detector" => Ok(PseudoSource::Detector),
            "oracle" => Ok(PseudoSource::Oracle),
            _ => Err(Error::InvalidConfig(format!("unknown pseudo-label source '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub enum Injection {
    #[default]
    Off,
    On(Arc<NoiseBank>),
}

impl Injection {
    pub fn is_on(&self) -> bool {
        matches!(self, Injection::On(_))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub tau: f64,
    /// Inject one noise sample after every `inject_every` original samples.
    pub inject_every: usize,
    /// Training queue capacity.
    pub queue_len: usize,
    /// Score window length for both adaptive thresholds.
    pub score_window: usize,
    /// Completed optimizer steps before the detector takes over.
    pub warmup_steps: u64,
    pub lr: f64,
    pub method: Method,
    pub pseudo_source: PseudoSource,
    pub threshold: ThresholdPolicy,
    pub injection: Injection,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: 0.01,
            inject_every: 8,
            queue_len: 128,
            score_window: 512,
            warmup_steps: 10,
            lr: 5e-4,
            method: Method::AdaNd,
            pseudo_source: PseudoSource::ZsClip,
            threshold: ThresholdPolicy::Adaptive,
            injection: Injection::Off,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        Temperature::new(self.tau)?;
        if self.inject_every == 0 {
            return Err(Error::InvalidConfig("M must be >= 1".into()));
        }
        if self.queue_len == 0 {
            return Err(Error::InvalidConfig("L must be >= 1".into()));
        }
        if self.score_window == 0 {
            return Err(Error::InvalidConfig("N_q must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be > 0", self.lr)));
        }
        if let ThresholdPolicy::Fixed(l) = self.threshold {
            ThresholdPolicy::fixed(l)?;
        }
        if let Injection::On(bank) = &self.injection {
            if bank.is_empty() {
                return Err(Error::EmptyBank);
            }
        }
        Ok(())
    }

    /// Every hyper-parameter and the seed, enough to reproduce a run.
    pub fn fingerprint(&self) -> String {
        let injection = match &self.injection {
            Injection::Off => "off".to_owned(),
            Injection::On(bank) => format!("{}", bank.noise_type),
        };
        format!(
            "method={} pseudo={} threshold={} m={} l={} nq={} n={} lr={} tau={} injection={} seed={}",
            self.method,
            self.pseudo_source,
            self.threshold,
            self.inject_every,
            self.queue_len,
            self.score_window,
            self.warmup_steps,
            self.lr,
            self.tau,
            injection,
            self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prediction {
    IdClass(usize),
    Noisy,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::IdClass(k) => write!(f, "{k}"),
            Prediction::Noisy => f.write_str("noisy"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleDecision {
    /// Position in the original stream; injected samples carry the index of
    /// the original sample they follow.
    pub index: u64,
    pub truth: GroundTruth,
    pub prediction: Prediction,
    pub stage: u8,
    pub mcm_score: f64,
    /// Detector clean probability after any update this sample triggered.
    /// Absent for the frozen baseline.
    pub detector_score: Option<f64>,
    pub pseudo_label: PseudoLabel,
    pub lambda_used: f64,
    pub origin: Origin,
}

impl SampleDecision {
    /// Score used for the ranking metrics: the detector output when there is
    /// one, the MCM score otherwise.
    pub fn ranking_score(&self) -> f64 {
        self.detector_score.unwrap_or(self.mcm_score)
    }
}

/// Clean iff `score > lambda`.
pub fn pseudo_label(score: f64, lambda: f64) -> PseudoLabel {
    if score > lambda {
        PseudoLabel::Clean
    } else {
        PseudoLabel::Noise
    }
}

/// Single-owner mutable state of one online run.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    tau: Temperature,
    bank: ClassifierBank,
    mcm_queue: ScoreQueue,
    detector_queue: ScoreQueue,
    training_queue: TrainingQueue,
    detector: LinearDetector,
    adam: AdamState,
    completed_steps: u64,
    originals_seen: u64,
    injections: u64,
    rng: ChaCha8Rng,
}

impl Pipeline {
    pub fn new(bank: ClassifierBank, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        if let Injection::On(noise) = &config.injection {
            if noise.dim() != bank.dim() {
                return Err(Error::DimMismatch {
                    expected: bank.dim(),
                    actual: noise.dim(),
                });
            }
        }
        let dim = bank.dim();
        let adam_config = AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        };
        Ok(Pipeline {
            tau: Temperature::new(config.tau)?,
            mcm_queue: ScoreQueue::new(config.score_window),
            detector_queue: ScoreQueue::new(config.score_window),
            training_queue: TrainingQueue::new(config.queue_len),
            detector: LinearDetector::zeros(dim),
            adam: AdamState::new(param_count(dim), adam_config),
            completed_steps: 0,
            originals_seen: 0,
            injections: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            bank,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn bank(&self) -> &ClassifierBank {
        &self.bank
    }

    pub fn detector(&self) -> &LinearDetector {
        &self.detector
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn completed_steps(&self) -> u64 {
        self.completed_steps
    }

    pub fn originals_seen(&self) -> u64 {
        self.originals_seen
    }

    pub fn injections(&self) -> u64 {
        self.injections
    }

    pub fn training_queue(&self) -> &TrainingQueue {
        &self.training_queue
    }

    pub fn stage(&self) -> u8 {
        if self.config.method == Method::AdaNd && self.completed_steps >= self.config.warmup_steps {
            2
        } else {
            1
        }
    }

    /// Judges one original stream sample.
    pub fn process_sample(&mut self, record: &StreamRecord) -> Result<SampleDecision> {
        if let Origin::Injected(_) = record.origin {
            return self.ingest(record, Some(PseudoLabel::Noise), self.originals_seen.saturating_sub(1));
        }
        let index = self.originals_seen;
        let decision = self.ingest(record, None, index)?;
        self.originals_seen += 1;
        Ok(decision)
    }

    /// Injects one noise-bank sample if `M` original samples have passed
    /// since the last injection.
    pub fn inject_noise_if_due(&mut self) -> Result<Option<SampleDecision>> {
        let Injection::On(bank) = &self.config.injection else {
            return Ok(None);
        };
        let due = self.originals_seen / self.config.inject_every as u64;
        if self.originals_seen == 0 || self.injections >= due {
            return Ok(None);
        }
        let bank = Arc::clone(bank);
        let pick = self.rng.random_range(0..bank.len());
        let record = StreamRecord::injected(bank.features()[pick].clone(), bank.noise_type);
        self.injections += 1;
        self.ingest(&record, Some(PseudoLabel::Noise), self.originals_seen - 1)
            .map(Some)
    }

    fn ingest(
        &mut self,
        record: &StreamRecord,
        forced: Option<PseudoLabel>,
        index: u64,
    ) -> Result<SampleDecision> {
        let sims = cosine_similarities(&record.feature, &self.bank)?;
        let mcm = mcm_score(&sims, self.tau);
        let class = classify(&sims);
        let policy = self.config.threshold;

        self.mcm_queue.push(mcm);
        let lambda_zs = effective_threshold(policy, &self.mcm_queue)?;
        let zs_pseudo = pseudo_label(mcm, lambda_zs);
        let frozen_verdict = if mcm > lambda_zs {
            Prediction::IdClass(class)
        } else {
            Prediction::Noisy
        };

        if self.config.method == Method::FrozenBaseline {
            return Ok(SampleDecision {
                index,
                truth: record.truth,
                prediction: frozen_verdict,
                stage: 1,
                mcm_score: mcm,
                detector_score: None,
                pseudo_label: forced.unwrap_or(zs_pseudo),
                lambda_used: lambda_zs,
                origin: record.origin,
            });
        }

        let pseudo = match (forced, self.config.pseudo_source) {
            (Some(label), _) => label,
            (None, PseudoSource::ZsClip) => zs_pseudo,
            (None, PseudoSource::Oracle) => {
                if record.truth.is_clean() {
                    PseudoLabel::Clean
                } else {
                    PseudoLabel::Noise
                }
            }
            (None, PseudoSource::Detector) => {
                if self.stage() == 2 && !self.detector_queue.is_empty() {
                    let p = clean_probability(self.detector.forward(&record.feature)?);
                    pseudo_label(p, effective_threshold(policy, &self.detector_queue)?)
                } else {
                    zs_pseudo
                }
            }
        };

        if self.training_queue.enqueue_and_maybe_train(
            &mut self.detector,
            &mut self.adam,
            &record.feature,
            pseudo,
        )? {
            self.completed_steps += 1;
        }

        let p = clean_probability(self.detector.forward(&record.feature)?);
        self.detector_queue.push(p);

        let stage = self.stage();
        let (prediction, lambda_used) = if stage == 2 {
            let lambda = effective_threshold(policy, &self.detector_queue)?;
            let verdict = if p > lambda {
                Prediction::IdClass(class)
            } else {
                Prediction::Noisy
            };
            (verdict, lambda)
        } else {
            (frozen_verdict, lambda_zs)
        };

        Ok(SampleDecision {
            index,
            truth: record.truth,
            prediction,
            stage,
            mcm_score: mcm,
            detector_score: Some(p),
            pseudo_label: pseudo,
            lambda_used,
            origin: record.origin,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Every decision in emission order, injected ones included.
    pub decisions: Vec<SampleDecision>,
    pub report: MetricsReport,
    pub injections: u64,
    pub completed_steps: u64,
    pub detector: LinearDetector,
}

impl RunOutput {
    pub fn original_decisions(&self) -> impl Iterator<Item = &SampleDecision> {
        self.decisions.iter().filter(|d| !d.origin.is_injected())
    }
}

/// Runs a whole stream through a fresh pipeline, strictly in order.
pub fn run_stream(
    bank: &ClassifierBank,
    records: &[StreamRecord],
    config: &PipelineConfig,
) -> Result<RunOutput> {
    let mut pipeline = Pipeline::new(bank.clone(), config.clone())?;
    let mut decisions = Vec::with_capacity(records.len() + records.len() / config.inject_every + 1);
    let mut acc = MetricsAccumulator::new();
    for record in records {
        let d = pipeline.process_sample(record)?;
        if !d.origin.is_injected() {
            acc.accumulate(&d)?;
        }
        decisions.push(d);
        if let Some(injected) = pipeline.inject_noise_if_due()? {
            decisions.push(injected);
        }
    }
    Ok(RunOutput {
        decisions,
        report: acc.finalize(),
        injections: pipeline.injections(),
        completed_steps: pipeline.completed_steps(),
        detector: pipeline.detector,
    })
}

pub const DECISION_LOG_HEADER: &str =
    "index\ttruth\tprediction\tstage\tmcm_score\tdetector_score\tlambda";

/// Tab-separated decision log, original samples only. Scores are written in
/// shortest round-trip form.
pub fn write_decision_log<'a, W: Write>(
    out: &mut W,
    decisions: impl IntoIterator<Item = &'a SampleDecision>,
) -> io::Result<()> {
    writeln!(out, "{DECISION_LOG_HEADER}")?;
    for d in decisions.into_iter().filter(|d| !d.origin.is_injected()) {
        let det = d.detector_score.map_or_else(|| "-".to_owned(), |p| p.to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            d.index, d.truth, d.prediction, d.stage, d.mcm_score, det, d.lambda_used
        )?;
    }
    Ok(())
}

/// One parsed decision-log row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub index: u64,
    pub truth: GroundTruth,
    pub prediction: Prediction,
    pub stage: u8,
    pub mcm_score: f64,
    pub detector_score: Option<f64>,
    pub lambda: f64,
}

pub fn parse_decision_log(text: &str) -> Result<Vec<LogRow>> {
    let bad = |line: usize| Error::InvalidConfig(format!("malformed decision log line {line}"));
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(bad(n + 1));
        }
        let truth = match cols[1] {
            "noisy" => GroundTruth::Noisy,
            k => GroundTruth::IdClass(k.parse().map_err(|_| bad(n + 1))?),
        };
        let prediction = match cols[2] {
            "noisy" => Prediction::Noisy,
            k => Prediction::IdClass(k.parse().map_err(|_| bad(n + 1))?),
        };
        let float = |s: &str| s.parse::<f64>().map_err(|_| bad(n + 1));
        rows.push(LogRow {
            index: cols[0].parse().map_err(|_| bad(n + 1))?,
            truth,
            prediction,
            stage: cols[3].parse().map_err(|_| bad(n + 1))?,
            mcm_score: float(cols[4])?,
            detector_score: match cols[5] {
                "-" => None,
                s => Some(float(s)?),
            },
            lambda: float(cols[6])?,
        });
    }
    Ok(rows)
}
