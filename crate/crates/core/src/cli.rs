//! Experiment runner: JSON config parsing, dataset preparation, seeded
//! trials, checkpoints, reports, and the command-line surface.
//!
//! Every command is file-driven and deterministic given its config (wall
//! clock excluded). Exit codes: 0 success, 1 validation error, 2 runtime or
//! numeric failure.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cells::{closed_form_count, CellKind, CellParams};
use crate::data::{
    chrono_split, decompose_windows, load_csv, make_windows, synth_series, CsvSchema, Dataset,
    Scaler, ScalerKind, SynthConfig, WindowSpec,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{
    compute_metrics, format_mean_std, summarize_metric_results, MetricResult, MetricsSummary,
};
use crate::stl::{stl_decompose, StlConfig};
use crate::train::{init_weights, predict, train, Sample, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

const REPORT_FILE: &str = "report.json";
const COMPARISON_FILE: &str = "comparison.csv";
const DECOMPOSITION_FILE: &str = "decomposition.csv";

// ---------------------------------------------------------------------------
// Configuration

/// Source series: exactly one of `csv` or `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvDataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvDataset {
    pub path: PathBuf,
    #[serde(default)]
    pub timestamp_column: Option<String>,
    #[serde(default)]
    pub value_columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Single cell for `train` and `evaluate`.
    #[serde(default)]
    pub kind: Option<String>,
    /// Row list for `compare`; entries are cell kinds or `stld_*` baselines.
    #[serde(default)]
    pub kinds: Option<Vec<String>>,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_hidden() -> usize {
    16
}
fn default_lambda() -> f64 {
    0.5
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: None,
            kinds: None,
            hidden_dim: default_hidden(),
            lambda: default_lambda(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// `compare` only: one table block per horizon. Defaults to `[horizon]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
}

fn default_lookback() -> usize {
    24
}
fn default_horizon() -> usize {
    1
}
fn default_stride() -> usize {
    1
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            lookback: default_lookback(),
            horizon: default_horizon(),
            stride: default_stride(),
            horizons: None,
        }
    }
}

impl WindowConfig {
    fn spec(&self, horizon: usize) -> WindowSpec {
        WindowSpec {
            window: self.lookback,
            horizon,
            stride: self.stride,
        }
    }
}

/// Decomposition settings: a period plus optional overrides of the derived
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StlSettings {
    pub period: usize,
    #[serde(default)]
    pub seasonal_span: Option<usize>,
    #[serde(default)]
    pub trend_span: Option<usize>,
    #[serde(default)]
    pub inner_iters: Option<usize>,
    #[serde(default)]
    pub outer_iters: Option<usize>,
    #[serde(default)]
    pub loess_degree: Option<usize>,
}

impl StlSettings {
    pub fn to_config(&self) -> Result<StlConfig> {
        let mut cfg = StlConfig::for_period(self.period)?;
        if let Some(v) = self.seasonal_span {
            cfg.seasonal_span = v;
        }
        if let Some(v) = self.trend_span {
            cfg.trend_span = v;
        }
        if let Some(v) = self.inner_iters {
            cfg.inner_iters = v;
        }
        if let Some(v) = self.outer_iters {
            cfg.outer_iters = v;
        }
        if let Some(v) = self.loess_degree {
            cfg.loess_degree = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub window: WindowConfig,
    pub stl: StlSettings,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub scaler: ScalerKind,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_split_ratio() -> f64 {
    0.7
}
fn default_trials() -> usize {
    5
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {}, this build expects {CONFIG_VERSION}",
                self.version
            )));
        }
        match (&self.dataset.csv, &self.dataset.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "dataset gives both csv and synth; pick one".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config("dataset needs either csv or synth".into()))
            }
            (Some(csv), None) => {
                if !csv.path.exists() {
                    return Err(Error::Config(format!(
                        "dataset file {} does not exist",
                        csv.path.display()
                    )));
                }
            }
            (None, Some(_)) => {}
        }
        if self.model.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.model.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.model.lambda
            )));
        }
        if self.window.lookback == 0 || self.window.horizon == 0 || self.window.stride == 0 {
            return Err(Error::Config(
                "window lookback, horizon and stride must be >= 1".into(),
            ));
        }
        if let Some(hs) = &self.window.horizons {
            if hs.is_empty() || hs.iter().any(|&h| h == 0) {
                return Err(Error::Config("horizons must be non-empty and >= 1".into()));
            }
        }
        self.stl.to_config()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio must lie strictly between 0 and 1, got {}",
                self.split_ratio
            )));
        }
        self.train.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        Ok(())
    }

    /// The single cell kind a `train`/`evaluate` run works on.
    pub fn cell_kind(&self) -> Result<CellKind> {
        let name = self.model.kind.as_deref().ok_or_else(|| {
            Error::Config("config needs model.kind for this command".into())
        })?;
        match name.parse::<RunnerKind>()? {
            RunnerKind::Cell(kind) => Ok(kind),
            RunnerKind::Stld(_) => Err(Error::Config(format!(
                "{name} is a composed baseline; it is available under `compare`, not `train`"
            ))),
        }
    }

    pub fn compare_kinds(&self) -> Result<Vec<RunnerKind>> {
        let names = self.model.kinds.as_ref().ok_or_else(|| {
            Error::Config("config needs model.kinds (a list) for compare".into())
        })?;
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "compare needs at least 2 kinds, got {}",
                names.len()
            )));
        }
        names.iter().map(|n| n.parse()).collect()
    }
}

/// Read and validate a config file. A relative csv path is resolved against
/// the config file's directory, so configs travel with their data.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(csv) = &mut cfg.dataset.csv {
        if csv.path.is_relative() {
            if let Some(dir) = path.parent() {
                csv.path = dir.join(&csv.path);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Row kinds for compare: plain cells plus composed decomposition baselines

/// What a comparison row runs: a single cell, or the three-network baseline
/// that trains one copy of a base cell per component and sums the forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunnerKind {
    Cell(CellKind),
    Stld(CellKind),
}

impl RunnerKind {
    pub fn name(self) -> String {
        match self {
            RunnerKind::Cell(k) => k.name().to_string(),
            RunnerKind::Stld(k) => format!("stld_{}", k.name()),
        }
    }

    pub fn parameter_count(self, input: usize, hidden: usize, output: usize) -> usize {
        match self {
            RunnerKind::Cell(k) => closed_form_count(k, input, hidden, output),
            RunnerKind::Stld(k) => 3 * closed_form_count(k, input, hidden, output),
        }
    }

}

impl std::str::FromStr for RunnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(base) = s.strip_prefix("stld_") {
            let kind: CellKind = base.parse()?;
            if kind.uses_decomposition() {
                return Err(Error::Config(format!(
                    "{s}: the composed baseline takes a plain base cell (rnn, lstm or gru)"
                )));
            }
            return Ok(RunnerKind::Stld(kind));
        }
        Ok(RunnerKind::Cell(s.parse()?))
    }
}

impl std::fmt::Display for RunnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

/// Trained parameters with enough header to rebuild the cell. The flat
/// array lists every tensor in the cell's canonical visit order; JSON keeps
/// f64 round-trips exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub lambda: f64,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(p: &CellParams, seed: u64) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: p.kind,
            input_dim: p.input_dim,
            hidden_dim: p.hidden_dim,
            output_dim: p.output_dim,
            lambda: p.lambda,
            seed,
            params: p.weights.flatten(),
        }
    }

    pub fn to_params(&self) -> Result<CellParams> {
        let mut p = CellParams::new(
            self.kind,
            self.input_dim,
            self.hidden_dim,
            self.output_dim,
            self.lambda,
        )?;
        p.weights.assign_from_flat(&self.params)?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}, expected {CHECKPOINT_VERSION}",
                self.version
            )));
        }
        let expected = closed_form_count(
            self.kind,
            self.input_dim,
            self.hidden_dim,
            self.output_dim,
        );
        if self.params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{} checkpoint holds {} parameters, dims say {expected}",
                self.kind.name(),
                self.params.len()
            )));
        }
        if let Some(i) = self.params.iter().position(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "non-finite parameter at flat index {i}"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Checkpoint(format!("cannot read {}: {e}", path.display()))
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub metrics: MetricResult,
    pub loss_curve: Vec<f64>,
    /// Checkpoint filename relative to the report's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

/// Everything a run produced. Self-contained: the echoed config plus the
/// seeds re-run the experiment. `wall_clock_seconds` stays last so a report
/// diff can drop that single line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub kind: String,
    pub parameter_count: usize,
    pub trials: Vec<TrialReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_trial: Option<FailedTrial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<MetricsSummary>,
    pub wall_clock_seconds: f64,
}

fn is_sha256_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

impl ExperimentReport {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported report schema version {}, expected {REPORT_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.config.validate()?;
        if self.parameter_count == 0 {
            return Err(Error::Config("report has a zero parameter count".into()));
        }
        if self.trials.len() > self.config.trials {
            return Err(Error::Config(format!(
                "report lists {} trials but the config ran {}",
                self.trials.len(),
                self.config.trials
            )));
        }
        for t in &self.trials {
            if t.trial >= self.config.trials {
                return Err(Error::Config(format!(
                    "trial index {} out of range for {} trials",
                    t.trial, self.config.trials
                )));
            }
            if t.seed != self.config.seed + t.trial as u64 {
                return Err(Error::Config(format!(
                    "trial {} records seed {}, expected base {} + index",
                    t.trial, t.seed, self.config.seed
                )));
            }
            let finite = t.metrics.rmse.is_finite()
                && t.metrics.mape.is_finite()
                && t.metrics.mape_paper_literal.is_finite();
            if !finite || t.metrics.rmse < 0.0 || t.metrics.n_points == 0 {
                return Err(Error::Config(format!(
                    "trial {} carries invalid metrics",
                    t.trial
                )));
            }
            if t.loss_curve.len() != self.config.train.epochs {
                return Err(Error::Config(format!(
                    "trial {} has {} loss entries for {} epochs",
                    t.trial,
                    t.loss_curve.len(),
                    self.config.train.epochs
                )));
            }
            if let Some(sha) = &t.checkpoint_sha256 {
                if !is_sha256_hex(sha) {
                    return Err(Error::Config(format!(
                        "trial {} checkpoint hash is not 64 hex characters",
                        t.trial
                    )));
                }
            }
        }
        if self.failed_trial.is_none() && self.trials.len() != self.config.trials {
            return Err(Error::Config(format!(
                "report lists {} of {} trials without recording a failure",
                self.trials.len(),
                self.config.trials
            )));
        }
        if self.summary.is_none() && !self.trials.is_empty() {
            return Err(Error::Config(
                "report has trials but no summary block".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ExperimentReport> {
        let text = std::fs::read_to_string(path)?;
        let report: ExperimentReport = serde_json::from_str(&text)?;
        report.validate()?;
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// Data preparation

/// Splits, scaling and windowing done once per run. Scaled windows feed the
/// models; the parallel original-scale test windows provide metric targets
/// and the persistence baseline without round-trip error.
pub struct Prepared {
    pub stl: StlConfig,
    pub scaler: Scaler,
    pub input_dim: usize,
    pub output_dim: usize,
    pub horizon: usize,
    pub train_scaled: Vec<Sample>,
    pub test_scaled: Vec<Sample>,
    pub test_original: Vec<Sample>,
    pub train_rows_scaled: Vec<Vec<f64>>,
    pub test_rows_scaled: Vec<Vec<f64>>,
    pub targets_original: Matrix,
    decomposed: Option<(Vec<Sample>, Vec<Sample>)>,
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.dataset.csv, &cfg.dataset.synth) {
        (Some(csv), None) => load_csv(
            &csv.path,
            &CsvSchema {
                timestamp_column: csv.timestamp_column.clone(),
                value_columns: csv.value_columns.clone(),
            },
        ),
        (None, Some(synth)) => Ok(synth_series(synth)?.to_dataset()),
        _ => Err(Error::Config("dataset needs either csv or synth".into())),
    }
}

pub fn prepare(cfg: &ExperimentConfig, horizon: usize) -> Result<Prepared> {
    let dataset = load_dataset(cfg)?;
    let stl = cfg.stl.to_config()?;
    let (train_rows, test_rows) = chrono_split(&dataset.values, cfg.split_ratio)?;
    let scaler = Scaler::fit(cfg.scaler, train_rows)?;
    let train_rows_scaled = scaler.transform(train_rows)?;
    let test_rows_scaled = scaler.transform(test_rows)?;

    let spec = cfg.window.spec(horizon);
    let train_scaled = make_windows(&train_rows_scaled, &spec)?;
    let test_scaled = make_windows(&test_rows_scaled, &spec)?;
    let test_original = make_windows(test_rows, &spec)?;

    let m = dataset.num_channels();
    let targets: Vec<Vec<f64>> = test_original.iter().map(|s| s.target.clone()).collect();
    Ok(Prepared {
        stl,
        scaler,
        input_dim: m,
        output_dim: m * horizon,
        horizon,
        train_scaled,
        test_scaled,
        test_original,
        train_rows_scaled,
        test_rows_scaled,
        targets_original: Matrix::from_rows(&targets)?,
        decomposed: None,
    })
}

impl Prepared {
    /// Decompose the windows once if `kind` needs them; later kinds share
    /// the result.
    pub fn ensure_decomposed(&mut self, kind: CellKind) -> Result<()> {
        if kind.uses_decomposition() && self.decomposed.is_none() {
            let mut train = self.train_scaled.clone();
            let mut test = self.test_scaled.clone();
            decompose_windows(&mut train, &self.stl)?;
            decompose_windows(&mut test, &self.stl)?;
            self.decomposed = Some((train, test));
        }
        Ok(())
    }

    /// Train and test samples for a kind; decomposition-hungry kinds need a
    /// prior [`Prepared::ensure_decomposed`].
    pub fn samples_for(&self, kind: CellKind) -> Result<(&[Sample], &[Sample])> {
        if !kind.uses_decomposition() {
            return Ok((&self.train_scaled, &self.test_scaled));
        }
        let (train, test) = self.decomposed.as_ref().ok_or_else(|| {
            Error::InvalidParameter(
                "this cell kind needs decomposed windows; decompose them first".into(),
            )
        })?;
        Ok((train, test))
    }

    /// Map one row of scaled predictions back to the original scale; entry k
    /// belongs to channel k mod m.
    fn denormalize_predictions(&self, rows: &[Vec<f64>]) -> Result<Matrix> {
        let m = self.input_dim;
        let denorm: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(k, &v)| self.scaler.inverse_value(k % m, v))
                    .collect()
            })
            .collect();
        Matrix::from_rows(&denorm)
    }

    /// Last observed row repeated over the horizon, in the original scale.
    pub fn persistence_predictions(&self) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = self
            .test_original
            .iter()
            .map(|s| {
                let last = s.inputs.last().expect("windows are non-empty");
                let mut row = Vec::with_capacity(self.output_dim);
                for _ in 0..self.horizon {
                    row.extend_from_slice(last);
                }
                row
            })
            .collect();
        Matrix::from_rows(&rows)
    }
}

// ---------------------------------------------------------------------------
// Trials

pub struct TrialOutcome {
    pub seed: u64,
    pub metrics: MetricResult,
    pub loss_curve: Vec<f64>,
    pub params: Option<CellParams>,
}

fn predict_rows(params: &CellParams, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let p = predict(params, s)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "model produced a non-finite prediction".into(),
            ));
        }
        rows.push(p);
    }
    Ok(rows)
}

fn run_cell_trial(
    kind: CellKind,
    cfg: &ExperimentConfig,
    train_samples: &[Sample],
    test_samples: &[Sample],
    prep: &Prepared,
    seed: u64,
) -> Result<TrialOutcome> {
    let init = init_weights(
        kind,
        prep.input_dim,
        cfg.model.hidden_dim,
        prep.output_dim,
        cfg.model.lambda,
        seed,
    )?;
    let out = train(init, train_samples, &cfg.train)?;
    let preds = prep.denormalize_predictions(&predict_rows(&out.params, test_samples)?)?;
    let metrics = compute_metrics(&prep.targets_original, &preds)?;
    Ok(TrialOutcome {
        seed,
        metrics,
        loss_curve: out.loss_curve,
        params: Some(out.params),
    })
}

fn decompose_rows(
    rows: &[Vec<f64>],
    stl: &StlConfig,
) -> Result<[Vec<Vec<f64>>; 3]> {
    let t_len = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    let mut out = [
        vec![vec![0.0; m]; t_len],
        vec![vec![0.0; m]; t_len],
        vec![vec![0.0; m]; t_len],
    ];
    for ch in 0..m {
        let series: Vec<f64> = rows.iter().map(|r| r[ch]).collect();
        let parts = stl_decompose(&series, stl)?;
        for t in 0..t_len {
            out[0][t][ch] = parts.seasonal[t];
            out[1][t][ch] = parts.trend[t];
            out[2][t][ch] = parts.remainder[t];
        }
    }
    Ok(out)
}

/// One trial of the composed baseline: decompose each split once, train an
/// independent base network per component (seeds 10*seed + 0/1/2 for
/// seasonal/trend/remainder), and sum the three forecasts.
fn run_stld_trial(
    base: CellKind,
    cfg: &ExperimentConfig,
    prep: &Prepared,
    seed: u64,
) -> Result<TrialOutcome> {
    let spec = cfg.window.spec(prep.horizon);
    let train_parts = decompose_rows(&prep.train_rows_scaled, &prep.stl)?;
    let test_parts = decompose_rows(&prep.test_rows_scaled, &prep.stl)?;

    let mut summed: Option<Vec<Vec<f64>>> = None;
    let mut loss_curve = vec![0.0; cfg.train.epochs];
    for c in 0..3 {
        let train_samples = make_windows(&train_parts[c], &spec)?;
        let test_samples = make_windows(&test_parts[c], &spec)?;
        let init = init_weights(
            base,
            prep.input_dim,
            cfg.model.hidden_dim,
            prep.output_dim,
            cfg.model.lambda,
            seed * 10 + c as u64,
        )?;
        let out = train(init, &train_samples, &cfg.train)?;
        for (acc, l) in loss_curve.iter_mut().zip(&out.loss_curve) {
            *acc += l;
        }
        let preds = predict_rows(&out.params, &test_samples)?;
        summed = Some(match summed {
            None => preds,
            Some(mut acc) => {
                for (a, p) in acc.iter_mut().zip(&preds) {
                    for (x, y) in a.iter_mut().zip(p) {
                        *x += y;
                    }
                }
                acc
            }
        });
    }
    let preds = prep.denormalize_predictions(&summed.expect("three components ran"))?;
    let metrics = compute_metrics(&prep.targets_original, &preds)?;
    Ok(TrialOutcome {
        seed,
        metrics,
        loss_curve,
        params: None,
    })
}

fn run_trial(
    kind: RunnerKind,
    cfg: &ExperimentConfig,
    prep: &Prepared,
    train_samples: &[Sample],
    test_samples: &[Sample],
    trial: usize,
) -> Result<TrialOutcome> {
    let seed = cfg.seed + trial as u64;
    match kind {
        RunnerKind::Cell(k) => run_cell_trial(k, cfg, train_samples, test_samples, prep, seed),
        RunnerKind::Stld(base) => run_stld_trial(base, cfg, prep, seed),
    }
}

// ---------------------------------------------------------------------------
// Worker pool

/// Run `count` independent jobs on up to `workers` threads. Job i's result
/// lands in slot i, so output order never depends on scheduling; after the
/// first failure no new jobs start (in-flight ones finish).
pub fn run_jobs<T, F>(count: usize, workers: usize, job: F) -> Vec<Option<Result<T>>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..count).map(|_| None).collect());
    let threads = workers.max(1).min(count.max(1));
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let result = job(i);
                if result.is_err() {
                    stop.store(true, Ordering::Relaxed);
                }
                slots.lock().expect("no panics hold this lock")[i] = Some(result);
            });
        }
    });
    slots.into_inner().expect("all workers joined")
}

// ---------------------------------------------------------------------------
// Commands

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn out_dir(cfg: &ExperimentConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Train `trials` seeded models, write per-trial checkpoints and a report.
/// A failed trial is recorded in the report, which is still written, and the
/// original error is returned so the exit code reflects it.
pub fn cmd_train(args: &RunArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = args.effective_config()?;
    let kind = cfg.cell_kind()?;
    let dir = out_dir(&cfg, &args.out)?;
    let mut prep = prepare(&cfg, cfg.window.horizon)?;
    prep.ensure_decomposed(kind)?;
    let prep = prep;
    let (train_samples, test_samples) = prep.samples_for(kind)?;

    log::info!(
        "training {} x{} trials on {} train / {} test windows",
        kind.name(),
        cfg.trials,
        train_samples.len(),
        test_samples.len()
    );
    let slots = run_jobs(cfg.trials, args.workers.unwrap_or(1), |i| {
        run_trial(
            RunnerKind::Cell(kind),
            &cfg,
            &prep,
            train_samples,
            test_samples,
            i,
        )
    });

    let mut trials = Vec::new();
    let mut first_err: Option<(usize, Error)> = None;
    for (i, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(Ok(outcome)) => trials.push((i, outcome)),
            Some(Err(e)) => {
                if first_err.is_none() {
                    first_err = Some((i, e));
                }
            }
            None => {}
        }
    }

    let mut reports = Vec::new();
    for (i, outcome) in &trials {
        let filename = format!("checkpoint_trial{i}.json");
        let params = outcome.params.as_ref().expect("cell trials keep params");
        Checkpoint::from_params(params, outcome.seed).save(&dir.join(&filename))?;
        let sha = sha256_hex(&std::fs::read(dir.join(&filename))?);
        reports.push(TrialReport {
            trial: *i,
            seed: outcome.seed,
            metrics: outcome.metrics,
            loss_curve: outcome.loss_curve.clone(),
            checkpoint: Some(filename),
            checkpoint_sha256: Some(sha),
        });
    }
    let summary = if reports.is_empty() {
        None
    } else {
        Some(summarize_metric_results(
            &reports.iter().map(|t| t.metrics).collect::<Vec<_>>(),
        )?)
    };
    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        kind: kind.name().to_string(),
        parameter_count: closed_form_count(
            kind,
            prep.input_dim,
            cfg.model.hidden_dim,
            prep.output_dim,
        ),
        trials: reports,
        failed_trial: first_err.as_ref().map(|(i, e)| FailedTrial {
            trial: *i,
            seed: cfg.seed + *i as u64,
            error: e.to_string(),
        }),
        summary,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let report_path = dir.join(REPORT_FILE);
    report.save(&report_path)?;

    print_train_table(&report, args.mape_paper_literal);
    println!("report {}", report_path.display());
    if let Some((i, e)) = first_err {
        return Err(promote_trial_error(i, cfg.seed + i as u64, e));
    }
    Ok(())
}

/// Keep the exit-code class: numeric failures stay numeric (exit 2),
/// anything else surfaces as a validation-grade error (exit 1).
fn promote_trial_error(trial: usize, seed: u64, e: Error) -> Error {
    let msg = format!("trial {trial} (seed {seed}): {e}");
    match e {
        Error::NanLoss { .. } | Error::NonFinite(_) => Error::NonFinite(msg),
        _ => Error::Data(msg),
    }
}

fn print_train_table(report: &ExperimentReport, literal: bool) {
    let label = if literal { "mape_paper_literal" } else { "mape" };
    let pick = |m: &MetricResult| if literal { m.mape_paper_literal } else { m.mape };
    println!(
        "kind {}  hidden {}  params {}",
        report.kind, report.config.model.hidden_dim, report.parameter_count
    );
    for t in &report.trials {
        println!(
            "trial {}  seed {}  rmse {:.6}  {label} {:.6}",
            t.trial,
            t.seed,
            t.metrics.rmse,
            pick(&t.metrics)
        );
    }
    if let Some(s) = &report.summary {
        let m = if literal { s.mape_paper_literal } else { s.mape };
        println!(
            "rmse {}  best {:.6}",
            format_mean_std(s.rmse.mean, s.rmse.std),
            s.rmse.best
        );
        println!(
            "{label} {}  best {:.6}",
            format_mean_std(m.mean, m.std),
            m.best
        );
    }
    if let Some(f) = &report.failed_trial {
        println!("failed trial {}: {}", f.trial, f.error);
    }
}

/// Score a checkpoint (or the persistence baseline) on the config's test
/// split and print the metrics as JSON.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.run.effective_config()?;
    let mut prep = prepare(&cfg, cfg.window.horizon)?;

    let metrics = match (&args.checkpoint, args.persistence) {
        (Some(_), true) | (None, false) => {
            return Err(Error::Config(
                "evaluate needs exactly one of --checkpoint or --persistence".into(),
            ))
        }
        (None, true) => {
            let preds = prep.persistence_predictions()?;
            compute_metrics(&prep.targets_original, &preds)?
        }
        (Some(path), false) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.input_dim != prep.input_dim || ckpt.output_dim != prep.output_dim {
                return Err(Error::shape(
                    "evaluate",
                    format!(
                        "checkpoint with input {} and output {}",
                        prep.input_dim, prep.output_dim
                    ),
                    format!(
                        "input {} and output {} (horizon or channels differ)",
                        ckpt.input_dim, ckpt.output_dim
                    ),
                ));
            }
            let params = ckpt.to_params()?;
            prep.ensure_decomposed(ckpt.kind)?;
            let (_, test_samples) = prep.samples_for(ckpt.kind)?;
            let preds = prep.denormalize_predictions(&predict_rows(&params, test_samples)?)?;
            compute_metrics(&prep.targets_original, &preds)?
        }
    };
    let mut text = serde_json::to_string_pretty(&metrics)?;
    text.push('\n');
    print!("{text}");
    Ok(())
}

struct CompareRow {
    kind: String,
    horizon: usize,
    parameter_count: usize,
    summary: Option<MetricsSummary>,
    error: Option<String>,
}

/// Train every requested kind (cells and composed baselines) over the same
/// seeds and emit a table, one row per kind and horizon. A failing row is
/// recorded and the remaining rows still run.
pub fn cmd_compare(args: &RunArgs) -> Result<()> {
    let cfg = args.effective_config()?;
    let kinds = cfg.compare_kinds()?;
    let dir = out_dir(&cfg, &args.out)?;
    let horizons = cfg
        .window
        .horizons
        .clone()
        .unwrap_or_else(|| vec![cfg.window.horizon]);

    let mut rows = Vec::new();
    for &horizon in &horizons {
        let prep = match prepare(&cfg, horizon) {
            Ok(p) => p,
            Err(e) => {
                for kind in &kinds {
                    rows.push(CompareRow {
                        kind: kind.name(),
                        horizon,
                        parameter_count: 0,
                        summary: None,
                        error: Some(e.to_string()),
                    });
                }
                continue;
            }
        };
        let mut prep = prep;
        for &kind in &kinds {
            let row = run_compare_row(kind, &cfg, &mut prep, args.workers.unwrap_or(1), horizon);
            rows.push(row);
        }
    }

    let csv_path = dir.join(COMPARISON_FILE);
    write_comparison_csv(&csv_path, &rows, args.mape_paper_literal)?;
    print_comparison(&rows, args.mape_paper_literal);
    println!("table {}", csv_path.display());
    Ok(())
}

fn run_compare_row(
    kind: RunnerKind,
    cfg: &ExperimentConfig,
    prep: &mut Prepared,
    workers: usize,
    horizon: usize,
) -> CompareRow {
    let parameter_count =
        kind.parameter_count(prep.input_dim, cfg.model.hidden_dim, prep.output_dim);
    if let RunnerKind::Cell(k) = kind {
        if let Err(e) = prep.ensure_decomposed(k) {
            return CompareRow {
                kind: kind.name(),
                horizon,
                parameter_count,
                summary: None,
                error: Some(e.to_string()),
            };
        }
    }
    let prep: &Prepared = prep;
    let (train_samples, test_samples) = match kind {
        RunnerKind::Cell(k) => match prep.samples_for(k) {
            Ok(pair) => pair,
            Err(e) => {
                return CompareRow {
                    kind: kind.name(),
                    horizon,
                    parameter_count,
                    summary: None,
                    error: Some(e.to_string()),
                }
            }
        },
        RunnerKind::Stld(_) => (&[][..], &[][..]),
    };
    log::info!("comparing {} at horizon {horizon}", kind.name());
    let slots = run_jobs(cfg.trials, workers, |i| {
        run_trial(kind, cfg, prep, &train_samples, &test_samples, i)
    });
    let mut metrics = Vec::new();
    let mut error = None;
    for slot in slots.into_iter().flatten() {
        match slot {
            Ok(outcome) => metrics.push(outcome.metrics),
            Err(e) => {
                if error.is_none() {
                    error = Some(e.to_string());
                }
            }
        }
    }
    let summary = if error.is_none() && metrics.len() == cfg.trials {
        summarize_metric_results(&metrics).ok()
    } else {
        None
    };
    CompareRow {
        kind: kind.name(),
        horizon,
        parameter_count,
        summary,
        error,
    }
}

fn write_comparison_csv(path: &Path, rows: &[CompareRow], literal: bool) -> Result<()> {
    let label = if literal { "mape_paper_literal" } else { "mape" };
    let mut text = format!(
        "kind,horizon,parameter_count,rmse_mean,rmse_std,rmse_best,{label}_mean,{label}_std,{label}_best,error\n"
    );
    for row in rows {
        match (&row.summary, &row.error) {
            (Some(s), None) => {
                let m = if literal { s.mape_paper_literal } else { s.mape };
                text.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},\n",
                    row.kind,
                    row.horizon,
                    row.parameter_count,
                    s.rmse.mean,
                    s.rmse.std,
                    s.rmse.best,
                    m.mean,
                    m.std,
                    m.best
                ));
            }
            (_, err) => {
                let msg = err.clone().unwrap_or_else(|| "incomplete".into());
                text.push_str(&format!(
                    "{},{},{},,,,,,,{}\n",
                    row.kind,
                    row.horizon,
                    row.parameter_count,
                    msg.replace(',', ";")
                ));
            }
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn print_comparison(rows: &[CompareRow], literal: bool) {
    let label = if literal { "mape_paper_literal" } else { "mape" };
    println!(
        "{:<12} {:>7} {:>8}  {:<18} {:>10}  {:<18} {:>10}",
        "kind", "horizon", "params", "rmse", "rmse_best", label, "best"
    );
    for row in rows {
        match (&row.summary, &row.error) {
            (Some(s), None) => {
                let m = if literal { s.mape_paper_literal } else { s.mape };
                println!(
                    "{:<12} {:>7} {:>8}  {:<18} {:>10.3}  {:<18} {:>10.3}",
                    row.kind,
                    row.horizon,
                    row.parameter_count,
                    format_mean_std(s.rmse.mean, s.rmse.std),
                    s.rmse.best,
                    format_mean_std(m.mean, m.std),
                    m.best
                );
            }
            (_, err) => println!(
                "{:<12} {:>7} {:>8}  failed: {}",
                row.kind,
                row.horizon,
                row.parameter_count,
                err.as_deref().unwrap_or("incomplete")
            ),
        }
    }
}

/// Decompose the configured series and write one CSV with original, trend,
/// seasonal and remainder columns per channel.
pub fn cmd_decompose(args: &DecomposeArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let stl = cfg.stl.to_config()?;
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(&cfg, &args.out)?;
    let path = dir.join(DECOMPOSITION_FILE);

    let single = dataset.num_channels() == 1;
    let mut header = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for ch in 0..dataset.num_channels() {
        let series = dataset.channel(ch);
        let parts = stl_decompose(&series, &stl)?;
        let prefix = if single {
            String::new()
        } else {
            format!("{}_", dataset.channel_names[ch])
        };
        for name in ["original", "trend", "seasonal", "remainder"] {
            header.push(format!("{prefix}{name}"));
        }
        columns.push(series);
        columns.push(parts.trend);
        columns.push(parts.seasonal);
        columns.push(parts.remainder);
    }
    let mut text = header.join(",");
    text.push('\n');
    for t in 0..dataset.len() {
        let row: Vec<String> = columns.iter().map(|c| c[t].to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(&path, text)?;

    if args.verify {
        verify_decomposition(&path)?;
        println!("verified: components sum to the original within 1e-9");
    }
    println!("decomposition {}", path.display());
    Ok(())
}

/// Re-read a decomposition CSV and check trend+seasonal+remainder against
/// the original column, groupwise.
fn verify_decomposition(path: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() % 4 != 0 {
        return Err(Error::Data(format!(
            "{} does not hold groups of four component columns",
            path.display()
        )));
    }
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        for g in 0..(headers.len() / 4) {
            let cell = |k: usize| -> Result<f64> {
                record[4 * g + k].parse::<f64>().map_err(|_| {
                    Error::Data(format!("row {}: unparseable value", i + 1))
                })
            };
            let (original, trend, seasonal, remainder) =
                (cell(0)?, cell(1)?, cell(2)?, cell(3)?);
            let sum = trend + seasonal + remainder;
            if (sum - original).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "row {}: components sum to {sum}, original is {original}",
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

/// Print parameter counts: the requested kind, or with `--all` every cell
/// kind plus the three-network baseline constructions.
pub fn cmd_count_params(args: &CountParamsArgs) -> Result<()> {
    let (m, h, o) = (args.input_dim, args.hidden_dim, args.output_dim);
    if m == 0 || h == 0 || o == 0 {
        return Err(Error::InvalidParameter(
            "dimensions must all be >= 1".into(),
        ));
    }
    let rows: Vec<RunnerKind> = if args.all {
        CellKind::ALL
            .iter()
            .map(|&k| RunnerKind::Cell(k))
            .chain(
                [CellKind::Rnn, CellKind::Lstm, CellKind::Gru]
                    .into_iter()
                    .map(RunnerKind::Stld),
            )
            .collect()
    } else {
        let name = args.kind.as_deref().ok_or_else(|| {
            Error::InvalidParameter("pass --kind NAME or --all".into())
        })?;
        vec![name.parse()?]
    };
    for kind in rows {
        println!("{} {}", kind.name(), kind.parameter_count(m, h, o));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Command-line surface

#[derive(Debug, Parser)]
#[command(
    name = "cru",
    about = "Time-series forecasting with decomposition-aware recurrent cells",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose the configured series into trend, seasonal and remainder.
    Decompose(DecomposeArgs),
    /// Train one cell kind over seeded trials; writes report and checkpoints.
    Train(RunArgs),
    /// Score a checkpoint or the persistence baseline on the test split.
    Evaluate(EvaluateArgs),
    /// Train several kinds over the same seeds and tabulate the metrics.
    Compare(RunArgs),
    /// Print exact parameter counts.
    CountParams(CountParamsArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed; overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for trials (default 1).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Report the square-root percentage error variant in tables.
    #[arg(long)]
    pub mape_paper_literal: bool,
}

impl RunArgs {
    fn effective_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Experiment config (JSON); only its dataset and stl sections are used.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Re-read the written CSV and check that components sum to the
    /// original within 1e-9.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint to score.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score the repeat-last-value baseline instead of a checkpoint.
    #[arg(long)]
    pub persistence: bool,
}

#[derive(Debug, Args)]
pub struct CountParamsArgs {
    /// Cell kind or stld_* baseline.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub output_dim: usize,
    /// List every cell kind plus the composed baselines.
    #[arg(long)]
    pub all: bool,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Decompose(args) => cmd_decompose(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::CountParams(args) => cmd_count_params(args),
    }
}

/// Binary entry point: parse, run, map errors to exit codes.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("CRU_LOG", "warn"),
    )
    .try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap already formatted the message; --help lands here too
            let is_help = !e.use_stderr();
            let _ = e.print();
            return if is_help { 0 } else { 1 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthKind;

    fn synth_config() -> ExperimentConfig {
        let text = r#"{
            "version": 1,
            "dataset": {"synth": {"kind": "trend_season_noise", "length": 120, "period": 6, "seed": 3}},
            "model": {"kind": "rnn", "hidden_dim": 4},
            "window": {"lookback": 12, "horizon": 1},
            "stl": {"period": 6},
            "train": {"epochs": 2},
            "trials": 2,
            "seed": 11
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn config_defaults_fill_in_and_unknown_fields_are_rejected() {
        let cfg = synth_config();
        assert_eq!(cfg.model.lambda, 0.5);
        assert_eq!(cfg.window.stride, 1);
        assert_eq!(cfg.split_ratio, 0.7);
        assert_eq!(cfg.scaler, ScalerKind::Zscore);
        assert_eq!(cfg.train.optimizer.learning_rate, 1e-3);

        let bad = r#"{"version": 1, "dataset": {"synth": {"kind": "constant", "length": 20, "period": 4}}, "stl": {"period": 4}, "typo_field": 3}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());

        let wrong_version = r#"{"version": 9, "dataset": {"synth": {"kind": "constant", "length": 20, "period": 4}}, "stl": {"period": 4}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(wrong_version).unwrap();
        assert!(cfg.validate().is_err());

        // version is required, not defaulted
        let missing = r#"{"dataset": {"synth": {"kind": "constant", "length": 20, "period": 4}}, "stl": {"period": 4}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(missing).is_err());
    }

    #[test]
    fn config_rejects_bad_dataset_blocks() {
        let mut cfg = synth_config();
        cfg.dataset.csv = Some(CsvDataset {
            path: PathBuf::from("/nonexistent/data.csv"),
            timestamp_column: None,
            value_columns: None,
        });
        assert!(cfg.validate().is_err()); // both set
        cfg.dataset.synth = None;
        assert!(cfg.validate().is_err()); // file missing
        cfg.dataset.csv = None;
        assert!(cfg.validate().is_err()); // neither set
    }

    #[test]
    fn stl_settings_apply_overrides() {
        let s = StlSettings {
            period: 12,
            seasonal_span: Some(9),
            trend_span: None,
            inner_iters: None,
            outer_iters: Some(3),
            loess_degree: None,
        };
        let cfg = s.to_config().unwrap();
        assert_eq!(cfg.period, 12);
        assert_eq!(cfg.seasonal_span, 9);
        assert_eq!(cfg.trend_span, 19);
        assert_eq!(cfg.outer_iters, 3);

        let bad = StlSettings {
            seasonal_span: Some(4), // even spans are invalid
            ..s
        };
        assert!(bad.to_config().is_err());
    }

    #[test]
    fn runner_kinds_parse_and_count() {
        let k: RunnerKind = "cru".parse().unwrap();
        assert_eq!(k, RunnerKind::Cell(CellKind::Cru));
        let k: RunnerKind = "stld_lstm".parse().unwrap();
        assert_eq!(k, RunnerKind::Stld(CellKind::Lstm));
        assert_eq!(k.name(), "stld_lstm");
        assert!("stld_cru".parse::<RunnerKind>().is_err());
        assert!("nope".parse::<RunnerKind>().is_err());

        assert_eq!(
            k.parameter_count(1, 8, 1),
            3 * closed_form_count(CellKind::Lstm, 1, 8, 1)
        );
        // ordering the comparison table relies on, at the spec's example dims
        let cru = RunnerKind::Cell(CellKind::Cru).parameter_count(1, 32, 1);
        let lstm3 = RunnerKind::Stld(CellKind::Lstm).parameter_count(1, 32, 1);
        let gru_stlc = RunnerKind::Cell(CellKind::GruStlc).parameter_count(1, 32, 1);
        let gru3 = RunnerKind::Stld(CellKind::Gru).parameter_count(1, 32, 1);
        assert!(cru < lstm3);
        assert!(gru_stlc < gru3);
    }

    #[test]
    fn checkpoints_round_trip_bitwise() {
        let params = init_weights(CellKind::LstmStlc, 2, 3, 4, 0.5, 99).unwrap();
        let ckpt = Checkpoint::from_params(&params, 99);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let rebuilt = loaded.to_params().unwrap();
        assert_eq!(rebuilt.weights.flatten(), params.weights.flatten());

        // corrupt the parameter count
        let mut broken = ckpt.clone();
        broken.params.pop();
        assert!(broken.save(&path).is_err());
        let mut nan = ckpt;
        nan.params[0] = f64::NAN;
        assert!(nan.save(&path).is_err());
    }

    #[test]
    fn prepared_pipeline_has_consistent_shapes() {
        let cfg = synth_config();
        let mut prep = prepare(&cfg, 1).unwrap();
        // 120 rows split 84/36; 12-step window + 1 ahead
        assert_eq!(prep.train_scaled.len(), 84 - 12);
        assert_eq!(prep.test_scaled.len(), 36 - 12);
        assert_eq!(prep.test_original.len(), prep.test_scaled.len());
        assert_eq!(prep.targets_original.rows(), prep.test_scaled.len());
        assert_eq!(prep.targets_original.cols(), 1);
        assert_eq!((prep.input_dim, prep.output_dim), (1, 1));

        let (train_plain, _) = prep.samples_for(CellKind::Rnn).unwrap();
        assert!(train_plain[0].decomposed.is_none());
        // decomposition is an explicit step, then shared
        assert!(prep.samples_for(CellKind::Cru).is_err());
        prep.ensure_decomposed(CellKind::Cru).unwrap();
        let (train_dec, test_dec) = prep.samples_for(CellKind::Cru).unwrap();
        assert!(train_dec[0].decomposed.is_some());
        assert!(test_dec[0].decomposed.is_some());
    }

    #[test]
    fn persistence_predictions_repeat_the_last_row() {
        let mut cfg = synth_config();
        cfg.window.horizon = 3;
        let prep = prepare(&cfg, 3).unwrap();
        let preds = prep.persistence_predictions().unwrap();
        assert_eq!(preds.cols(), 3);
        for (i, sample) in prep.test_original.iter().enumerate() {
            let last = sample.inputs.last().unwrap()[0];
            for k in 0..3 {
                assert_eq!(preds.get(i, k), last);
            }
        }
    }

    #[test]
    fn job_pool_is_deterministic_and_stops_after_failure() {
        let job = |i: usize| -> Result<usize> { Ok(i * i) };
        let one = run_jobs(8, 1, job);
        let many = run_jobs(8, 4, job);
        for (a, b) in one.iter().zip(&many) {
            match (a, b) {
                (Some(Ok(x)), Some(Ok(y))) => assert_eq!(x, y),
                other => panic!("unexpected slots {other:?}"),
            }
        }

        let failing = |i: usize| -> Result<usize> {
            if i == 0 {
                Err(Error::InvalidParameter("boom".into()))
            } else {
                Ok(i)
            }
        };
        let slots = run_jobs(64, 1, failing);
        assert!(matches!(slots[0], Some(Err(_))));
        // sequential worker with a stop flag: nothing after the failure ran
        assert!(slots[1..].iter().all(|s| s.is_none()));
    }

    #[test]
    fn stld_trials_run_and_sum_components() {
        let mut cfg = synth_config();
        cfg.train.epochs = 1;
        let prep = prepare(&cfg, 1).unwrap();
        let outcome = run_stld_trial(CellKind::Rnn, &cfg, &prep, 7).unwrap();
        assert!(outcome.metrics.rmse.is_finite());
        assert_eq!(outcome.loss_curve.len(), 1);
        assert!(outcome.params.is_none());

        // determinism: same seed, same metrics
        let again = run_stld_trial(CellKind::Rnn, &cfg, &prep, 7).unwrap();
        assert_eq!(outcome.metrics, again.metrics);
    }

    #[test]
    fn report_validation_catches_inconsistencies() {
        let cfg = synth_config();
        let metrics = MetricResult {
            rmse: 1.0,
            mape: 2.0,
            mape_paper_literal: 2.0f64.sqrt(),
            n_points: 24,
        };
        let trial = TrialReport {
            trial: 0,
            seed: 11,
            metrics,
            loss_curve: vec![0.5, 0.4],
            checkpoint: Some("checkpoint_trial0.json".into()),
            checkpoint_sha256: Some("a".repeat(64)),
        };
        let mut report = ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config: cfg,
            kind: "rnn".into(),
            parameter_count: 10,
            trials: vec![
                trial.clone(),
                TrialReport {
                    trial: 1,
                    seed: 12,
                    ..trial.clone()
                },
            ],
            failed_trial: None,
            summary: Some(
                summarize_metric_results(&[metrics, metrics]).unwrap(),
            ),
            wall_clock_seconds: 0.1,
        };
        report.validate().unwrap();

        let mut bad = report.clone();
        bad.schema_version = 2;
        assert!(bad.validate().is_err());

        let mut bad = report.clone();
        bad.trials[1].seed = 99;
        assert!(bad.validate().is_err());

        let mut bad = report.clone();
        bad.trials[0].loss_curve.pop();
        assert!(bad.validate().is_err());

        let mut bad = report.clone();
        bad.trials[0].checkpoint_sha256 = Some("zz".into());
        assert!(bad.validate().is_err());

        // a missing trial needs a recorded failure
        report.trials.pop();
        assert!(report.validate().is_err());
        report.failed_trial = Some(FailedTrial {
            trial: 1,
            seed: 12,
            error: "training aborted".into(),
        });
        report.validate().unwrap();
    }

    #[test]
    fn synth_dataset_flows_into_load_dataset() {
        let mut cfg = synth_config();
        cfg.dataset.synth = Some(SynthConfig {
            kind: SynthKind::Constant,
            length: 30,
            period: 5,
            seed: 0,
            slope: 0.0,
            amplitude: 0.0,
            noise_std: 0.0,
            level: 2.5,
        });
        let ds = load_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 30);
        assert!(ds.values.iter().all(|r| r[0] == 2.5));
    }
}
