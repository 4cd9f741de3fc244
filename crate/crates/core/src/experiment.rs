//! Configuration sweeps over whole streams.
//!
//! An [`ExperimentSpec`] names a data source, the fixed hyper-parameters and
//! a list of values per sweep axis. Every cell of the Cartesian product gets
//! its own pipeline; cells run in parallel and results come back in cell
//! order, so serial and parallel runs write identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer};

use crate::error::{Error, Result};
use crate::features::{ClassifierBank, NoiseBank, NoiseType, StreamRecord};
use crate::format::{read_feature_file, read_noise_bank};
use crate::metrics::MetricsReport;
use crate::pipeline::{
    run_stream, write_decision_log, Injection, LogRow, Method, PipelineConfig, PseudoSource,
    SampleDecision,
};
use crate::synth::{mix_streams, synth_noise_bank, synth_stream, SynthSpec};
use crate::threshold::ThresholdPolicy;

/// Environment variable consulted when no output directory is given.
pub const OUT_DIR_ENV: &str = "ADAND_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSource {
    pub stream: SynthSpec,
    pub noise_bank_size: usize,
    pub noise_concentration: f64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            stream: SynthSpec::default(),
            noise_bank_size: 1000,
            noise_concentration: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Files {
        id_features: PathBuf,
        ood_features: Option<PathBuf>,
        noise_banks: Vec<(NoiseType, PathBuf)>,
    },
    Synthetic(SyntheticSource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub methods: Vec<Method>,
    pub noise_ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub inject_every: Vec<usize>,
    pub queue_len: Vec<usize>,
    pub score_window: Vec<usize>,
    pub warmup_steps: Vec<u64>,
    pub noise_types: Vec<NoiseType>,
    pub pseudo_sources: Vec<PseudoSource>,
    pub thresholds: Vec<ThresholdPolicy>,
    pub injection: Vec<bool>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        let base = PipelineConfig::default();
        SweepAxes {
            methods: vec![Method::AdaNd],
            noise_ratios: vec![0.5],
            seeds: vec![0],
            inject_every: vec![base.inject_every],
            queue_len: vec![base.queue_len],
            score_window: vec![base.score_window],
            warmup_steps: vec![base.warmup_steps],
            noise_types: vec![NoiseType::Gaussian],
            pseudo_sources: vec![base.pseudo_source],
            thresholds: vec![base.threshold],
            injection: vec![true],
        }
    }
}

impl SweepAxes {
    fn check(&self) -> Result<()> {
        let lens = [
            ("method", self.methods.len()),
            ("noise-ratio", self.noise_ratios.len()),
            ("seed", self.seeds.len()),
            ("m", self.inject_every.len()),
            ("l", self.queue_len.len()),
            ("nq", self.score_window.len()),
            ("n-init", self.warmup_steps.len()),
            ("noise-type", self.noise_types.len()),
            ("pseudo-source", self.pseudo_sources.len()),
            ("threshold", self.thresholds.len()),
            ("injection", self.injection.len()),
        ];
        if let Some((name, _)) = lens.iter().find(|(_, n)| *n == 0) {
            return Err(Error::InvalidConfig(format!("sweep axis '{name}' is empty")));
        }
        if let Some(r) = self.noise_ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidConfig(format!("noise ratio {r} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.methods.len()
            * self.noise_ratios.len()
            * self.seeds.len()
            * self.inject_every.len()
            * self.queue_len.len()
            * self.score_window.len()
            * self.warmup_steps.len()
            * self.noise_types.len()
            * self.pseudo_sources.len()
            * self.thresholds.len()
            * self.injection.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub source: Source,
    pub tau: f64,
    pub lr: f64,
    pub axes: SweepAxes,
    pub out_dir: Option<PathBuf>,
    pub decision_logs: bool,
    pub histogram_bins: Option<usize>,
    pub parallel: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let base = PipelineConfig::default();
        ExperimentSpec {
            source: Source::Synthetic(SyntheticSource::default()),
            tau: base.tau,
            lr: base.lr,
            axes: SweepAxes::default(),
            out_dir: None,
            decision_logs: false,
            histogram_bins: None,
            parallel: true,
        }
    }
}

/// One point of the sweep.
#[derive(Debug, Clone)]
pub struct Cell {
    pub index: usize,
    pub noise_ratio: f64,
    pub noise_type: NoiseType,
    pub config: PipelineConfig,
}

impl Cell {
    pub fn fingerprint(&self) -> String {
        format!(
            "{} noise_ratio={} noise_type={}",
            self.config.fingerprint(),
            self.noise_ratio,
            self.noise_type
        )
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<MetricsReport, String>,
    pub decisions: Vec<SampleDecision>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "cell\tmethod\tpseudo\tthreshold\tm\tl\tnq\tn\tlr\ttau\tinjection\tnoise_type\tnoise_ratio\tseed\t{}\tstatus",
            MetricsReport::TABLE_HEADER
        );
        for r in &self.cells {
            let c = &r.cell.config;
            let (row, status) = match &r.outcome {
                Ok(rep) => (rep.to_table_row(), "ok".to_owned()),
                Err(e) => (vec!["-"; 7].join("\t"), format!("error: {e}")),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.cell.index,
                c.method,
                c.pseudo_source,
                c.threshold,
                c.inject_every,
                c.queue_len,
                c.score_window,
                c.warmup_steps,
                c.lr,
                c.tau,
                if c.injection.is_on() { "on" } else { "off" },
                r.cell.noise_type,
                r.cell.noise_ratio,
                c.seed,
                row,
                status
            );
        }
        out
    }
}

/// Data shared read-only by every cell.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub bank: ClassifierBank,
    pub id_records: Vec<StreamRecord>,
    pub ood_records: Vec<StreamRecord>,
    pub noise_banks: BTreeMap<NoiseType, Arc<NoiseBank>>,
}

pub fn load_source(source: &Source) -> Result<LoadedData> {
    match source {
        Source::Synthetic(s) => {
            let stream = synth_stream(&s.stream)?;
            let noise = synth_noise_bank(
                s.stream.dim,
                s.noise_bank_size,
                s.noise_concentration,
                s.stream.seed,
            )?;
            let mut noise_banks = BTreeMap::new();
            noise_banks.insert(noise.noise_type, Arc::new(noise));
            Ok(LoadedData {
                bank: stream.bank,
                id_records: stream.id_records,
                ood_records: stream.ood_records,
                noise_banks,
            })
        }
        Source::Files {
            id_features,
            ood_features,
            noise_banks,
        } => {
            let (bank, records) = read_feature_file(id_features)?;
            let (mut id_records, mut ood_records): (Vec<_>, Vec<_>) =
                records.into_iter().partition(|r| r.truth.is_clean());
            if let Some(path) = ood_features {
                let (_, ood) = read_feature_file(path)?;
                ood_records.extend(ood.into_iter().filter(|r| !r.truth.is_clean()));
            }
            for r in id_records.iter().chain(&ood_records) {
                if r.feature.dim() != bank.dim() {
                    return Err(Error::DimMismatch {
                        expected: bank.dim(),
                        actual: r.feature.dim(),
                    });
                }
            }
            id_records.shrink_to_fit();
            let mut banks = BTreeMap::new();
            for (t, path) in noise_banks {
                let nb = read_noise_bank(path, *t)?;
                if nb.dim() != bank.dim() {
                    return Err(Error::DimMismatch {
                        expected: bank.dim(),
                        actual: nb.dim(),
                    });
                }
                banks.insert(*t, Arc::new(nb));
            }
            Ok(LoadedData {
                bank,
                id_records,
                ood_records,
                noise_banks: banks,
            })
        }
    }
}

/// Expands the sweep into cells, in a fixed nesting order.
pub fn expand_cells(spec: &ExperimentSpec, data: &LoadedData) -> Result<Vec<Cell>> {
    spec.axes.check()?;
    let a = &spec.axes;
    let mut cells = Vec::with_capacity(a.cell_count());
    for &method in &a.methods {
        for &pseudo_source in &a.pseudo_sources {
            for &threshold in &a.thresholds {
                for &inject in &a.injection {
                    for &noise_type in &a.noise_types {
                        for &inject_every in &a.inject_every {
                            for &queue_len in &a.queue_len {
                                for &score_window in &a.score_window {
                                    for &warmup_steps in &a.warmup_steps {
                                        for &noise_ratio in &a.noise_ratios {
                                            for &seed in &a.seeds {
                                                let injection = if inject {
                                                    let bank = data.noise_banks.get(&noise_type).ok_or_else(|| {
                                                        Error::InvalidConfig(format!(
                                                            "no noise bank of type {noise_type} loaded"
                                                        ))
                                                    })?;
                                                    Injection::On(Arc::clone(bank))
                                                } else {
                                                    Injection::Off
                                                };
                                                let config = PipelineConfig {
                                                    tau: spec.tau,
                                                    inject_every,
                                                    queue_len,
                                                    score_window,
                                                    warmup_steps,
                                                    lr: spec.lr,
                                                    method,
                                                    pseudo_source,
                                                    threshold,
                                                    injection,
                                                    seed,
                                                };
                                                config.validate()?;
                                                cells.push(Cell {
                                                    index: cells.len(),
                                                    noise_ratio,
                                                    noise_type,
                                                    config,
                                                });
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

pub fn run_cell(cell: &Cell, data: &LoadedData) -> CellResult {
    let run = mix_streams(
        &data.id_records,
        &data.ood_records,
        cell.noise_ratio,
        cell.config.seed,
    )
    .and_then(|stream| run_stream(&data.bank, &stream, &cell.config));
    match run {
        Ok(out) => CellResult {
            cell: cell.clone(),
            outcome: Ok(out.report),
            decisions: out.decisions,
        },
        Err(e) => CellResult {
            cell: cell.clone(),
            outcome: Err(e.to_string()),
            decisions: Vec::new(),
        },
    }
}

/// Runs every cell. Errors here mean the spec itself was unusable; per-cell
/// failures are recorded in the result instead.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let data = load_source(&spec.source)?;
    run_experiment_on(spec, &data)
}

pub fn run_experiment_on(spec: &ExperimentSpec, data: &LoadedData) -> Result<ExperimentResult> {
    let cells = expand_cells(spec, data)?;
    let keep_logs = spec.decision_logs || spec.histogram_bins.is_some();
    let run = |cell: &Cell| {
        let mut r = run_cell(cell, data);
        if !keep_logs {
            r.decisions = Vec::new();
        }
        r
    };
    let cells = if spec.parallel {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };
    let result = ExperimentResult { cells };
    if let Some(dir) = &spec.out_dir {
        write_outputs(spec, &result, dir)?;
    }
    Ok(result)
}

pub fn write_outputs(spec: &ExperimentSpec, result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: String, body: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    for r in &result.cells {
        let mut text = String::new();
        let _ = writeln!(text, "cell = {}", r.cell.index);
        for kv in r.cell.fingerprint().split(' ') {
            if let Some((k, v)) = kv.split_once('=') {
                let _ = writeln!(text, "{k} = {v}");
            }
        }
        match &r.outcome {
            Ok(rep) => text.push_str(&rep.to_key_values()),
            Err(e) => {
                let _ = writeln!(text, "error = {e}");
            }
        }
        write(format!("cell-{:04}.txt", r.cell.index), text.as_bytes())?;
        if spec.decision_logs && r.outcome.is_ok() {
            let mut buf = Vec::new();
            write_decision_log(&mut buf, &r.decisions).map_err(|e| Error::io(dir, e))?;
            write(format!("cell-{:04}.decisions.tsv", r.cell.index), &buf)?;
        }
        if let (Some(bins), Ok(_)) = (spec.histogram_bins, &r.outcome) {
            let rows = decisions_to_rows(&r.decisions);
            if let Ok(table) = emit_score_histogram(&rows, bins, ScoreKind::Ranking) {
                write(format!("cell-{:04}.hist.tsv", r.cell.index), table.as_bytes())?;
            }
        }
    }
    write("results.tsv".into(), result.table().as_bytes())
}

pub fn decisions_to_rows(decisions: &[SampleDecision]) -> Vec<LogRow> {
    decisions
        .iter()
        .filter(|d| !d.origin.is_injected())
        .map(|d| LogRow {
            index: d.index,
            truth: d.truth,
            prediction: d.prediction,
            stage: d.stage,
            mcm_score: d.mcm_score,
            detector_score: d.detector_score,
            lambda: d.lambda_used,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Mcm,
    Detector,
    /// Detector score where present, MCM otherwise.
    Ranking,
}

/// Histogram of scores over `[0, 1]` in `bins` equal bins, split by truth.
/// Rows: `bin_lo  bin_hi  clean  noisy`. Scores of exactly 1 land in the last
/// bin; rows without the requested score are skipped.
pub fn emit_score_histogram(log: &[LogRow], bins: usize, kind: ScoreKind) -> Result<String> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let mut clean = vec![0u64; bins];
    let mut noisy = vec![0u64; bins];
    for row in log {
        let score = match kind {
            ScoreKind::Mcm => Some(row.mcm_score),
            ScoreKind::Detector => row.detector_score,
            ScoreKind::Ranking => Some(row.detector_score.unwrap_or(row.mcm_score)),
        };
        let Some(s) = score else { continue };
        let bin = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        if row.truth.is_clean() {
            clean[bin] += 1;
        } else {
            noisy[bin] += 1;
        }
    }
    let mut out = String::from("bin_lo\tbin_hi\tclean\tnoisy\n");
    for b in 0..bins {
        let _ = writeln!(
            out,
            "{:.6}\t{:.6}\t{}\t{}",
            b as f64 / bins as f64,
            (b + 1) as f64 / bins as f64,
            clean[b],
            noisy[b]
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Flag / config-file surface

/// Raw, unparsed experiment options. Command-line flags and the TOML config
/// file both produce this; list-valued options are comma-separated.
#[derive(Debug, Clone, Default, PartialEq, clap::Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RawOptions {
    /// Feature file with the classifier bank and ID records
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub id_features: Option<String>,
    /// Feature file with OOD records (label -1)
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub ood_features: Option<String>,
    /// Noise bank files as `type=path` (bare path means gaussian)
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub noise_bank: Option<String>,
    /// Synthetic source, e.g. `k=10,d=64,n=400,ood=10,n_ood=4000,conc=4,shift=12,seed=0`
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub synthetic: Option<String>,
    /// frozen | adand
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub method: Option<String>,
    /// zsclip | detector | oracle
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub pseudo_source: Option<String>,
    /// adaptive | fixed:<lambda>
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub threshold: Option<String>,
    /// Noisy fraction of the stream, in [0, 1]
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub noise_ratio: Option<String>,
    /// Stream shuffle, injection and detector seed
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub seed: Option<String>,
    /// Inject one noise sample per M stream samples
    #[arg(long = "m")]
    #[serde(deserialize_with = "flag_value")]
    pub m: Option<String>,
    /// Training queue capacity L
    #[arg(long = "l")]
    #[serde(deserialize_with = "flag_value")]
    pub l: Option<String>,
    /// Score window length N_q
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub nq: Option<String>,
    /// Optimizer steps before the detector takes over (N)
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub n_init: Option<String>,
    /// Adam learning rate
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub lr: Option<String>,
    /// Softmax temperature for the MCM score
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub tau: Option<String>,
    /// on | off
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub injection: Option<String>,
    /// Which loaded noise bank to inject from
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub noise_type: Option<String>,
    /// Directory for `results.tsv` and per-cell files
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub out: Option<String>,
    /// Write per-cell decision logs
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(deserialize_with = "flag_value")]
    pub decision_logs: Option<String>,
    /// Write per-cell score histograms with this many bins
    #[arg(long)]
    #[serde(deserialize_with = "flag_value")]
    pub histogram_bins: Option<String>,
    /// Run cells one after another
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(deserialize_with = "flag_value")]
    pub serial: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FlagValue {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    List(Vec<FlagValue>),
}

impl FlagValue {
    fn render(self) -> String {
        match self {
            FlagValue::Str(s) => s,
            FlagValue::Int(i) => i.to_string(),
            FlagValue::Float(f) => f.to_string(),
            FlagValue::Bool(b) => b.to_string(),
            FlagValue::List(items) => items
                .into_iter()
                .map(FlagValue::render)
                .collect::<Vec<_>>()
                .join(","),
        }
    }
}

fn flag_value<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    Ok(Some(FlagValue::deserialize(d)?.render()))
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RawOptions {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config file: {e}")))
    }

    /// Values set in `top` win.
    pub fn overlay(mut self, top: &RawOptions) -> Self {
        overlay!(
            self, top, id_features, ood_features, noise_bank, synthetic, method, pseudo_source,
            threshold, noise_ratio, seed, m, l, nq, n_init, lr, tau, injection, noise_type, out,
            decision_logs, histogram_bins, serial
        );
        self
    }

    pub fn into_spec(self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::default();

        spec.source = match (&self.id_features, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "--id-features and --synthetic are mutually exclusive".into(),
                ))
            }
            (Some(id), None) => {
                let noise_banks = match &self.noise_bank {
                    Some(list) => split(list)
                        .map(|item| match item.split_once('=') {
                            Some((t, p)) => Ok((t.parse()?, PathBuf::from(p))),
                            None => Ok((NoiseType::Gaussian, PathBuf::from(item))),
                        })
                        .collect::<Result<Vec<_>>>()?,
                    None => Vec::new(),
                };
                Source::Files {
                    id_features: id.into(),
                    ood_features: self.ood_features.as_ref().map(PathBuf::from),
                    noise_banks,
                }
            }
            (None, Some(s)) => Source::Synthetic(parse_synthetic(s)?),
            (None, None) => Source::Synthetic(SyntheticSource::default()),
        };

        if let Some(v) = &self.tau {
            spec.tau = parse_one(v, "tau")?;
        }
        if let Some(v) = &self.lr {
            spec.lr = parse_one(v, "lr")?;
        }
        let axes = &mut spec.axes;
        if let Some(v) = &self.method {
            axes.methods = parse_list(v, "method")?;
        }
        if let Some(v) = &self.pseudo_source {
            axes.pseudo_sources = parse_list(v, "pseudo-source")?;
        }
        if let Some(v) = &self.threshold {
            axes.thresholds = parse_list(v, "threshold")?;
        }
        if let Some(v) = &self.noise_ratio {
            axes.noise_ratios = parse_list(v, "noise-ratio")?;
        }
        if let Some(v) = &self.seed {
            axes.seeds = parse_list(v, "seed")?;
        }
        if let Some(v) = &self.m {
            axes.inject_every = parse_list(v, "m")?;
        }
        if let Some(v) = &self.l {
            axes.queue_len = parse_list(v, "l")?;
        }
        if let Some(v) = &self.nq {
            axes.score_window = parse_list(v, "nq")?;
        }
        if let Some(v) = &self.n_init {
            axes.warmup_steps = parse_list(v, "n-init")?;
        }
        if let Some(v) = &self.noise_type {
            axes.noise_types = parse_list(v, "noise-type")?;
        } else if let Source::Synthetic(_) = spec.source {
            axes.noise_types = vec![NoiseType::SyntheticGaussianFeature];
        }
        if let Some(v) = &self.injection {
            axes.injection = split(v)
                .map(|s| match s {
                    "on" | "true" => Ok(true),
                    "off" | "false" => Ok(false),
                    _ => Err(Error::InvalidConfig(format!("injection: '{s}' is not on/off"))),
                })
                .collect::<Result<_>>()?;
        } else if let Source::Files { noise_banks, .. } = &spec.source {
            if noise_banks.is_empty() {
                axes.injection = vec![false];
            }
        }
        spec.out_dir = self
            .out
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
        spec.decision_logs = parse_flag(self.decision_logs.as_deref(), "decision-logs")?;
        spec.parallel = !parse_flag(self.serial.as_deref(), "serial")?;
        if let Some(v) = &self.histogram_bins {
            spec.histogram_bins = Some(parse_one(v, "histogram-bins")?);
        }
        spec.axes.check()?;
        Ok(spec)
    }
}

fn split(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}

fn parse_one<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{name}: cannot parse '{s}'")))
}

fn parse_list<T: std::str::FromStr>(s: &str, name: &str) -> Result<Vec<T>> {
    let items: Vec<T> = split(s).map(|t| parse_one(t, name)).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::InvalidConfig(format!("{name}: empty list")));
    }
    Ok(items)
}

fn parse_flag(v: Option<&str>, name: &str) -> Result<bool> {
    match v {
        None | Some("false") | Some("off") => Ok(false),
        Some("true") | Some("on") | Some("") => Ok(true),
        Some(other) => Err(Error::InvalidConfig(format!("{name}: '{other}' is not a boolean"))),
    }
}

/// Parses `key=value` pairs separated by commas.
pub fn parse_synthetic(s: &str) -> Result<SyntheticSource> {
    let mut out = SyntheticSource::default();
    if s.trim() == "default" {
        return Ok(out);
    }
    for item in split(s) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("synthetic: '{item}' is not key=value")))?;
        let st = &mut out.stream;
        match k {
            "k" | "classes" => st.classes = parse_one(v, k)?,
            "d" | "dim" => st.dim = parse_one(v, k)?,
            "n" | "n_per_class" => st.n_per_class = parse_one(v, k)?,
            "ood" | "ood_clusters" => st.ood_clusters = parse_one(v, k)?,
            "n_ood" => st.n_ood = parse_one(v, k)?,
            "conc" | "concentration" => st.concentration = parse_one(v, k)?,
            "mix" | "ood_mix" => st.ood_mix = parse_one(v, k)?,
            "shift" | "domain_shift" => st.domain_shift = parse_one(v, k)?,
            "seed" => st.seed = parse_one(v, k)?,
            "bank" | "noise_bank_size" => out.noise_bank_size = parse_one(v, k)?,
            "noise_conc" | "noise_concentration" => out.noise_concentration = parse_one(v, k)?,
            _ => return Err(Error::InvalidConfig(format!("synthetic: unknown key '{k}'"))),
        }
    }
    out.stream.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::GroundTruth;
    use crate::pipeline::Prediction;

    fn row(score: f64, clean: bool) -> LogRow {
        LogRow {
            index: 0,
            truth: if clean { GroundTruth::IdClass(0) } else { GroundTruth::Noisy },
            prediction: Prediction::Noisy,
            stage: 1,
            mcm_score: score,
            detector_score: None,
            lambda: 0.5,
        }
    }

    fn parse_hist(table: &str) -> Vec<(u64, u64)> {
        table
            .lines()
            .skip(1)
            .map(|l| {
                let c: Vec<&str> = l.split('\t').collect();
                (c[2].parse().unwrap(), c[3].parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn separated_scores_fill_disjoint_bins() {
        let log: Vec<LogRow> = (0..50)
            .map(|i| row(0.9 + i as f64 * 0.001, true))
            .chain((0..50).map(|i| row(0.05 + i as f64 * 0.001, false)))
            .collect();
        let h = parse_hist(&emit_score_histogram(&log, 10, ScoreKind::Mcm).unwrap());
        assert_eq!(h.len(), 10);
        for (c, n) in &h {
            assert!(*c == 0 || *n == 0);
        }
        assert_eq!(h[9].0, 50);
        assert_eq!(h[0].1, 50);
    }

    #[test]
    fn uniform_scores_give_flat_histogram_and_rows_sum() {
        let log: Vec<LogRow> = (0..1000).map(|i| row((i as f64 + 0.5) / 1000.0, i % 2 == 0)).collect();
        let h = parse_hist(&emit_score_histogram(&log, 10, ScoreKind::Mcm).unwrap());
        let total: u64 = h.iter().map(|(c, n)| c + n).sum();
        assert_eq!(total, 1000);
        assert!(h.iter().all(|(c, n)| c + n == 100));
        // exact 1.0 lands in the last bin
        let h = parse_hist(&emit_score_histogram(&[row(1.0, true)], 4, ScoreKind::Mcm).unwrap());
        assert_eq!(h[3], (1, 0));
    }

    #[test]
    fn histogram_errors() {
        assert!(matches!(emit_score_histogram(&[], 10, ScoreKind::Mcm), Err(Error::EmptyLog)));
        assert!(emit_score_histogram(&[row(0.2, true)], 0, ScoreKind::Mcm).is_err());
    }

    #[test]
    fn options_overlay_and_parse() {
        let file = RawOptions::from_toml(
            "method = \"frozen,adand\"\nnoise-ratio = [0.0, 0.25]\nseed = 3\nsynthetic = \"k=3,d=8,n=20,n_ood=60,ood=2\"\n",
        )
        .unwrap();
        let flags = RawOptions {
            seed: Some("1,2".into()),
            ..RawOptions::default()
        };
        let spec = file.overlay(&flags).into_spec().unwrap();
        assert_eq!(spec.axes.methods, vec![Method::FrozenBaseline, Method::AdaNd]);
        assert_eq!(spec.axes.noise_ratios, vec![0.0, 0.25]);
        assert_eq!(spec.axes.seeds, vec![1, 2]);
        let Source::Synthetic(s) = &spec.source else { panic!() };
        assert_eq!(s.stream.classes, 3);
        assert_eq!(spec.axes.cell_count(), 8);
    }

    #[test]
    fn bad_options_are_rejected() {
        let bad = [
            RawOptions { method: Some("tent".into()), ..Default::default() },
            RawOptions { noise_ratio: Some("1.5".into()), ..Default::default() },
            RawOptions { seed: Some(",".into()), ..Default::default() },
            RawOptions { threshold: Some("fixed:7".into()), ..Default::default() },
            RawOptions { synthetic: Some("k=1".into()), ..Default::default() },
            RawOptions {
                synthetic: Some("default".into()),
                id_features: Some("x".into()),
                ..Default::default()
            },
        ];
        for b in bad {
            assert!(b.clone().into_spec().is_err(), "{b:?}");
        }
        assert!(RawOptions::from_toml("bogus = 1").is_err());
    }
}
