//! Dataset handling: CSV ingestion, scaling, chronological splitting,
//! sliding-window extraction, per-window decomposition, and synthetic
//! series for tests and experiments.
//!
//! Timestamps are validated (parseable, strictly increasing) and then
//! discarded; models only ever see the value columns, uniformly sampled.

use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::cells::DecomposedInput;
use crate::error::{Error, Result};
use crate::stl::{stl_decompose, StlConfig};
use crate::train::Sample;

/// A multichannel series: `values[t][ch]`, all rows the same width, finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channel_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(channel_names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let m = channel_names.len();
        if m == 0 {
            return Err(Error::Data("dataset needs at least one channel".into()));
        }
        for (t, row) in values.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Data(format!(
                    "row {} has {} values, expected {m}",
                    t + 1,
                    row.len()
                )));
            }
            if let Some(ch) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite value in row {}, column {}",
                    t + 1,
                    channel_names[ch]
                )));
            }
        }
        Ok(Dataset {
            channel_names,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel(&self, ch: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[ch]).collect()
    }
}

/// Which CSV columns to read. `timestamp_column`, when set, is parsed and
/// checked for strict increase, then dropped. `value_columns` picks and
/// orders the channels; `None` takes every non-timestamp column in file
/// order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    #[serde(default)]
    pub timestamp_column: Option<String>,
    #[serde(default)]
    pub value_columns: Option<Vec<String>>,
}

/// Accepted timestamp formats: a plain integer index, RFC 3339,
/// `%Y-%m-%dT%H:%M:%S`, `%Y-%m-%d %H:%M:%S`, or a bare `%Y-%m-%d` date.
/// Integer indexes are mapped onto the epoch-seconds axis, which keeps one
/// ordering check for both shapes.
fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(k) = s.parse::<i64>() {
        return chrono::DateTime::from_timestamp(k, 0).map(|dt| dt.naive_utc());
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Load a headered CSV. Rows are reported 1-based, counting data rows.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!(
                "column {name:?} not found; file has columns {}",
                headers.join(", ")
            ))
        })
    };

    let ts_idx = match &schema.timestamp_column {
        Some(name) => Some(find(name)?),
        None => None,
    };
    let value_idx: Vec<usize> = match &schema.value_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|i| Some(*i) != ts_idx).collect(),
    };
    if value_idx.contains(&usize::MAX) || value_idx.is_empty() {
        return Err(Error::Data("no value columns selected".into()));
    }
    if let (Some(ts), Some(names)) = (ts_idx, &schema.value_columns) {
        if names.contains(&headers[ts]) {
            return Err(Error::Data(format!(
                "column {:?} cannot be both timestamp and value",
                headers[ts]
            )));
        }
    }

    let mut values = Vec::new();
    let mut prev_ts: Option<NaiveDateTime> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if let Some(ts) = ts_idx {
            let raw = record.get(ts).ok_or_else(|| {
                Error::Data(format!("row {row} is missing the timestamp column"))
            })?;
            let parsed = parse_timestamp(raw).ok_or_else(|| {
                Error::Data(format!("row {row}: unparseable timestamp {raw:?}"))
            })?;
            if let Some(prev) = prev_ts {
                if parsed <= prev {
                    return Err(Error::Data(format!(
                        "timestamps are not strictly increasing at row {row} ({raw:?})"
                    )));
                }
            }
            prev_ts = Some(parsed);
        }
        let mut out_row = Vec::with_capacity(value_idx.len());
        for &ci in &value_idx {
            let raw = record.get(ci).ok_or_else(|| {
                Error::Data(format!("row {row} is missing column {}", headers[ci]))
            })?;
            let v: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "row {row}, column {}: cannot parse {raw:?} as a number",
                    headers[ci]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {row}, column {}: non-finite value",
                    headers[ci]
                )));
            }
            out_row.push(v);
        }
        values.push(out_row);
    }
    if values.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }
    let names = value_idx.iter().map(|&i| headers[i].clone()).collect();
    Dataset::new(names, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    None,
    #[default]
    Zscore,
    Minmax,
}

/// Per-channel affine normalization: transform(v) = (v - offset) / scale.
/// Fit on the training split only, then applied to both splits. A channel
/// with no spread gets scale 1 so it passes through (shifted to zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Scaler {
    pub fn fit(kind: ScalerKind, data: &[Vec<f64>]) -> Result<Scaler> {
        let m = data.first().map_or(0, |r| r.len());
        if m == 0 {
            return Err(Error::Data("cannot fit a scaler on an empty split".into()));
        }
        let n = data.len() as f64;
        let mut offsets = vec![0.0; m];
        let mut scales = vec![1.0; m];
        match kind {
            ScalerKind::None => {}
            ScalerKind::Zscore => {
                for ch in 0..m {
                    let mean = data.iter().map(|r| r[ch]).sum::<f64>() / n;
                    let var = data.iter().map(|r| (r[ch] - mean).powi(2)).sum::<f64>() / n;
                    offsets[ch] = mean;
                    let std = var.sqrt();
                    scales[ch] = if std > 0.0 { std } else { 1.0 };
                }
            }
            ScalerKind::Minmax => {
                for ch in 0..m {
                    let min = data.iter().map(|r| r[ch]).fold(f64::INFINITY, f64::min);
                    let max = data.iter().map(|r| r[ch]).fold(f64::NEG_INFINITY, f64::max);
                    offsets[ch] = min;
                    let spread = max - min;
                    scales[ch] = if spread > 0.0 { spread } else { 1.0 };
                }
            }
        }
        Ok(Scaler {
            kind,
            offsets,
            scales,
        })
    }

    fn check_width(&self, row_len: usize) -> Result<()> {
        if row_len != self.offsets.len() {
            return Err(Error::shape(
                "scaler",
                format!("rows of width {}", self.offsets.len()),
                format!("width {row_len}"),
            ));
        }
        Ok(())
    }

    pub fn transform(&self, data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        data.iter()
            .map(|row| {
                self.check_width(row.len())?;
                Ok(row
                    .iter()
                    .enumerate()
                    .map(|(ch, v)| (v - self.offsets[ch]) / self.scales[ch])
                    .collect())
            })
            .collect()
    }

    pub fn inverse(&self, data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        data.iter()
            .map(|row| {
                self.check_width(row.len())?;
                Ok(row
                    .iter()
                    .enumerate()
                    .map(|(ch, v)| v * self.scales[ch] + self.offsets[ch])
                    .collect())
            })
            .collect()
    }

    /// Undo normalization for a single value of one channel.
    pub fn inverse_value(&self, channel: usize, v: f64) -> f64 {
        v * self.scales[channel] + self.offsets[channel]
    }
}

/// Chronological train/test split at floor(ratio * T); both sides must be
/// non-empty.
pub fn chrono_split(data: &[Vec<f64>], ratio: f64) -> Result<(&[Vec<f64>], &[Vec<f64>])> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split ratio must lie strictly between 0 and 1, got {ratio}"
        )));
    }
    let cut = (ratio * data.len() as f64).floor() as usize;
    if cut == 0 || cut == data.len() {
        return Err(Error::Data(format!(
            "split of {} rows at ratio {ratio} leaves an empty side",
            data.len()
        )));
    }
    Ok(data.split_at(cut))
}

/// Sliding-window extraction parameters: `window` input steps predicting the
/// next `horizon` steps, window starts `stride` apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window: usize,
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.horizon == 0 || self.stride == 0 {
            return Err(Error::InvalidParameter(format!(
                "window, horizon and stride must be >= 1, got {}, {}, {}",
                self.window, self.horizon, self.stride
            )));
        }
        Ok(())
    }
}

/// Cut a series into samples. Targets are the `horizon` rows after each
/// window, flattened time-major: entry `k` is step `k / m`, channel `k % m`.
/// Yields floor((T - window - horizon) / stride) + 1 samples.
pub fn make_windows(data: &[Vec<f64>], spec: &WindowSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let t_len = data.len();
    if t_len < spec.window + spec.horizon {
        return Err(Error::Data(format!(
            "series of length {t_len} is too short for window {} plus horizon {}",
            spec.window, spec.horizon
        )));
    }
    let mut samples = Vec::new();
    let mut start = 0;
    while start + spec.window + spec.horizon <= t_len {
        let inputs: Vec<Vec<f64>> = data[start..start + spec.window].to_vec();
        let mut target = Vec::with_capacity(spec.horizon * data[0].len());
        for step in 0..spec.horizon {
            target.extend_from_slice(&data[start + spec.window + step]);
        }
        samples.push(Sample {
            inputs,
            decomposed: None,
            target,
        });
        start += spec.stride;
    }
    Ok(samples)
}

/// Decompose every window in place, channel by channel. Each sample's input
/// window is treated as its own series, so windows never leak future values
/// into each other.
pub fn decompose_windows(samples: &mut [Sample], cfg: &StlConfig) -> Result<()> {
    for sample in samples.iter_mut() {
        let len = sample.inputs.len();
        let m = sample.inputs.first().map_or(0, |r| r.len());
        let mut steps: Vec<DecomposedInput> = (0..len)
            .map(|_| DecomposedInput {
                seasonal: vec![0.0; m],
                trend: vec![0.0; m],
                remainder: vec![0.0; m],
            })
            .collect();
        for ch in 0..m {
            let series: Vec<f64> = sample.inputs.iter().map(|r| r[ch]).collect();
            let parts = stl_decompose(&series, cfg)?;
            for t in 0..len {
                steps[t].seasonal[ch] = parts.seasonal[t];
                steps[t].trend[ch] = parts.trend[t];
                steps[t].remainder[ch] = parts.remainder[t];
            }
        }
        sample.decomposed = Some(steps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    TrendSeasonNoise,
    RandomWalk,
    Constant,
}

/// Synthetic single-channel series generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub length: usize,
    pub period: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default)]
    pub level: f64,
}

fn default_slope() -> f64 {
    0.05
}
fn default_amplitude() -> f64 {
    2.0
}
fn default_noise_std() -> f64 {
    0.1
}

/// A generated series together with the ground-truth components that built
/// it; `values[t] = trend[t] + seasonal[t] + noise[t]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSeries {
    pub values: Vec<f64>,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub noise: Vec<f64>,
}

impl SynthSeries {
    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            channel_names: vec!["value".to_string()],
            values: self.values.iter().map(|&v| vec![v]).collect(),
        }
    }
}

/// Standard normal draw via the Box-Muller transform.
fn gaussian(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], keeps the log finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn synth_series(cfg: &SynthConfig) -> Result<SynthSeries> {
    use rand::SeedableRng;
    if cfg.period < 2 {
        return Err(Error::InvalidParameter(format!(
            "synthetic period must be >= 2, got {}",
            cfg.period
        )));
    }
    if cfg.length < 2 * cfg.period {
        return Err(Error::InvalidParameter(format!(
            "synthetic length {} is shorter than two periods ({})",
            cfg.length,
            2 * cfg.period
        )));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise_std must be non-negative, got {}",
            cfg.noise_std
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.length;
    let (mut trend, mut seasonal, mut noise) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    match cfg.kind {
        SynthKind::TrendSeasonNoise => {
            for t in 0..n {
                trend[t] = cfg.level + cfg.slope * t as f64;
                seasonal[t] = cfg.amplitude
                    * (2.0 * std::f64::consts::PI * t as f64 / cfg.period as f64).sin();
                noise[t] = cfg.noise_std * gaussian(&mut rng);
            }
        }
        SynthKind::RandomWalk => {
            let mut acc = cfg.level;
            for t in 0..n {
                acc += cfg.noise_std * gaussian(&mut rng);
                trend[t] = acc;
            }
        }
        SynthKind::Constant => {
            trend.fill(cfg.level);
        }
    }
    let values: Vec<f64> = (0..n).map(|t| trend[t] + seasonal[t] + noise[t]).collect();
    Ok(SynthSeries {
        values,
        trend,
        seasonal,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_timestamped_csv() {
        let f = write_csv(
            "time,load,temp\n\
             2021-01-01 00:00:00,1.5,20.0\n\
             2021-01-01 01:00:00,2.5,21.0\n\
             2021-01-01 02:00:00,3.5,19.5\n",
        );
        let ds = load_csv(
            f.path(),
            &CsvSchema {
                timestamp_column: Some("time".into()),
                value_columns: None,
            },
        )
        .unwrap();
        assert_eq!(ds.channel_names, vec!["load", "temp"]);
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.values[1], vec![2.5, 21.0]);
        assert_eq!(ds.channel(0), vec![1.5, 2.5, 3.5]);
    }

    #[test]
    fn loads_seven_value_columns() {
        let mut body = String::from("ts,c1,c2,c3,c4,c5,c6,c7\n");
        for day in 1..=9 {
            body.push_str(&format!(
                "2021-03-0{day},{},{},{},{},{},{},{}\n",
                day,
                day * 2,
                day * 3,
                day * 4,
                day * 5,
                day * 6,
                day * 7
            ));
        }
        let f = write_csv(&body);
        let ds = load_csv(
            f.path(),
            &CsvSchema {
                timestamp_column: Some("ts".into()),
                value_columns: None,
            },
        )
        .unwrap();
        assert_eq!(ds.num_channels(), 7);
        assert_eq!(ds.len(), 9);
        assert_eq!(ds.values[8][6], 63.0);
    }

    #[test]
    fn loads_single_column_and_integer_indexes() {
        let f = write_csv("v\n1\n2\n3\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.channel(0), vec![1.0, 2.0, 3.0]);

        let f = write_csv("t,v\n1,10\n2,20\n5,50\n");
        let ds = load_csv(
            f.path(),
            &CsvSchema {
                timestamp_column: Some("t".into()),
                value_columns: None,
            },
        )
        .unwrap();
        assert_eq!(ds.channel(0), vec![10.0, 20.0, 50.0]);

        let f = write_csv("t,v\n1,10\n3,30\n2,20\n");
        let err = load_csv(
            f.path(),
            &CsvSchema {
                timestamp_column: Some("t".into()),
                value_columns: None,
            },
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn selects_and_orders_value_columns() {
        let f = write_csv("a,b,c\n1,2,3\n4,5,6\n");
        let ds = load_csv(
            f.path(),
            &CsvSchema {
                timestamp_column: None,
                value_columns: Some(vec!["c".into(), "a".into()]),
            },
        )
        .unwrap();
        assert_eq!(ds.channel_names, vec!["c", "a"]);
        assert_eq!(ds.values, vec![vec![3.0, 1.0], vec![6.0, 4.0]]);
    }

    #[test]
    fn names_the_row_of_a_bad_cell() {
        let f = write_csv("t,v\n2021-01-01,1.0\n2021-01-02,2.0\n2021-01-03,oops\n");
        let err = load_csv(
            f.path(),
            &CsvSchema {
                timestamp_column: Some("t".into()),
                value_columns: None,
            },
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("row 3"), "{err}");
        assert!(err.contains('v'), "{err}");
    }

    #[test]
    fn rejects_unordered_timestamps() {
        let f = write_csv("t,v\n2021-01-02,1.0\n2021-01-02,2.0\n");
        let err = load_csv(
            f.path(),
            &CsvSchema {
                timestamp_column: Some("t".into()),
                value_columns: None,
            },
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("strictly increasing"), "{err}");
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn rejects_garbage_timestamp_ragged_rows_and_missing_file() {
        let f = write_csv("t,v\nnot-a-date,1.0\n");
        assert!(load_csv(
            f.path(),
            &CsvSchema {
                timestamp_column: Some("t".into()),
                value_columns: None
            }
        )
        .is_err());

        let f = write_csv("a,b\n1,2\n3\n");
        assert!(load_csv(f.path(), &CsvSchema::default()).is_err());

        assert!(load_csv(Path::new("/nonexistent/x.csv"), &CsvSchema::default()).is_err());

        let f = write_csv("a,b\n1,2\n");
        let err = load_csv(
            f.path(),
            &CsvSchema {
                timestamp_column: Some("zzz".into()),
                value_columns: None,
            },
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("zzz"), "{err}");
    }

    #[test]
    fn split_matches_floor_and_partitions() {
        let rows = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|i| vec![i as f64]).collect() };
        let d = rows(294);
        let (train, test) = chrono_split(&d, 0.7).unwrap();
        assert_eq!((train.len(), test.len()), (205, 89));

        let d = rows(10);
        assert_eq!(chrono_split(&d, 0.7).unwrap().0.len(), 7);
        assert_eq!(chrono_split(&d, 0.9).unwrap().0.len(), 9);
        let (train, test) = chrono_split(&d, 0.999).unwrap();
        assert_eq!((train.len(), test.len()), (9, 1));

        let (a, b) = chrono_split(&d, 0.33).unwrap();
        let rejoined: Vec<Vec<f64>> = a.iter().chain(b.iter()).cloned().collect();
        assert_eq!(rejoined, d);

        assert!(chrono_split(&d, 0.0).is_err());
        assert!(chrono_split(&d, 1.0).is_err());
        assert!(chrono_split(&rows(2), 0.1).is_err()); // floor gives an empty train side
    }

    #[test]
    fn window_counts_match_the_closed_form() {
        for t_len in 1usize..=40 {
            let data: Vec<Vec<f64>> = (0..t_len).map(|i| vec![i as f64]).collect();
            for window in 1..=8 {
                for horizon in 1..=4 {
                    for stride in 1..=5 {
                        let spec = WindowSpec {
                            window,
                            horizon,
                            stride,
                        };
                        // independent count: walk the starts
                        let mut brute = 0;
                        let mut start = 0;
                        while start + window + horizon <= t_len {
                            brute += 1;
                            start += stride;
                        }
                        match make_windows(&data, &spec) {
                            Ok(samples) => {
                                assert!(t_len >= window + horizon);
                                assert_eq!(samples.len(), brute);
                                assert_eq!(
                                    samples.len(),
                                    (t_len - window - horizon) / stride + 1
                                );
                            }
                            Err(_) => assert!(t_len < window + horizon),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn window_contents_and_target_flattening() {
        let data: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 10.0 * i as f64]).collect();
        let spec = WindowSpec {
            window: 3,
            horizon: 2,
            stride: 1,
        };
        let samples = make_windows(&data, &spec).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(
            samples[0].inputs,
            vec![vec![0.0, 0.0], vec![1.0, 10.0], vec![2.0, 20.0]]
        );
        // time-major: step 3 both channels, then step 4
        assert_eq!(samples[0].target, vec![3.0, 30.0, 4.0, 40.0]);
        assert_eq!(samples[1].target, vec![4.0, 40.0, 5.0, 50.0]);
        assert!(samples[0].decomposed.is_none());
    }

    #[test]
    fn scalers_round_trip_and_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let data: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(100.0..200.0), 7.0])
            .collect();
        for kind in [ScalerKind::None, ScalerKind::Zscore, ScalerKind::Minmax] {
            let scaler = Scaler::fit(kind, &data).unwrap();
            let scaled = scaler.transform(&data).unwrap();
            let back = scaler.inverse(&scaled).unwrap();
            for (a, b) in back.iter().flatten().zip(data.iter().flatten()) {
                assert!((a - b).abs() < 1e-9, "{kind:?}");
            }
            // the constant third channel must not blow up
            assert!(scaled.iter().all(|r| r[2].is_finite()));
            if kind != ScalerKind::None {
                assert!(scaled.iter().all(|r| r[2] == 0.0));
            }
            assert_eq!(
                scaler.inverse_value(1, scaled[4][1]),
                scaled[4][1] * scaler.scales[1] + scaler.offsets[1]
            );
        }

        let z = Scaler::fit(ScalerKind::Zscore, &data).unwrap();
        let scaled = z.transform(&data).unwrap();
        for ch in 0..2 {
            let mean = scaled.iter().map(|r| r[ch]).sum::<f64>() / 50.0;
            let var = scaled.iter().map(|r| (r[ch] - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }

        let mm = Scaler::fit(ScalerKind::Minmax, &data).unwrap();
        let scaled = mm.transform(&data).unwrap();
        assert!(scaled
            .iter()
            .all(|r| r[..2].iter().all(|&v| (0.0..=1.0).contains(&v))));
    }

    #[test]
    fn decomposed_windows_reconstruct_their_inputs() {
        let cfg = StlConfig::for_period(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let data: Vec<Vec<f64>> = (0..60)
            .map(|t| {
                vec![
                    0.2 * t as f64 + (t % 6) as f64 + rng.gen_range(-0.3..0.3),
                    (t % 6) as f64 * 2.0,
                ]
            })
            .collect();
        let spec = WindowSpec {
            window: 24,
            horizon: 2,
            stride: 7,
        };
        let mut samples = make_windows(&data, &spec).unwrap();
        decompose_windows(&mut samples, &cfg).unwrap();
        for sample in &samples {
            let steps = sample.decomposed.as_ref().unwrap();
            assert_eq!(steps.len(), 24);
            for (t, step) in steps.iter().enumerate() {
                for ch in 0..2 {
                    let sum = step.seasonal[ch] + step.trend[ch] + step.remainder[ch];
                    assert!((sum - sample.inputs[t][ch]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn decomposition_handles_constant_and_sinusoid_windows() {
        let cfg = StlConfig::for_period(6).unwrap();
        let spec = WindowSpec {
            window: 24,
            horizon: 1,
            stride: 1,
        };

        // 24 rows cannot hold a 24-step window plus a 1-step horizon
        let short: Vec<Vec<f64>> = (0..24).map(|_| vec![3.25]).collect();
        let err = make_windows(&short, &spec).unwrap_err().to_string();
        assert!(err.contains("too short"), "{err}");

        let constant: Vec<Vec<f64>> = (0..25).map(|_| vec![3.25]).collect();
        let mut samples = make_windows(&constant, &spec).unwrap();
        decompose_windows(&mut samples, &cfg).unwrap();
        for step in samples[0].decomposed.as_ref().unwrap() {
            assert!((step.trend[0] - 3.25).abs() < 1e-6);
            assert!(step.seasonal[0].abs() < 1e-6);
            assert!(step.remainder[0].abs() < 1e-6);
        }

        // four full cycles of a pure sinusoid: the trend slice should sit
        // near the window mean
        let amp = 2.0;
        let sine: Vec<Vec<f64>> = (0..25)
            .map(|t| vec![amp * (2.0 * std::f64::consts::PI * t as f64 / 6.0).sin()])
            .collect();
        let mut samples = make_windows(&sine, &spec).unwrap();
        decompose_windows(&mut samples, &cfg).unwrap();
        let steps = samples[0].decomposed.as_ref().unwrap();
        let mean: f64 = sine[..24].iter().map(|r| r[0]).sum::<f64>() / 24.0;
        let mae: f64 = steps
            .iter()
            .map(|s| (s.trend[0] - mean).abs())
            .sum::<f64>()
            / 24.0;
        assert!(mae <= 0.1 * amp, "trend mae {mae}");
    }

    #[test]
    fn synthetic_series_are_deterministic_and_consistent() {
        let cfg = SynthConfig {
            kind: SynthKind::TrendSeasonNoise,
            length: 500,
            period: 12,
            seed: 7,
            slope: 0.05,
            amplitude: 2.0,
            noise_std: 0.1,
            level: 1.0,
        };
        let a = synth_series(&cfg).unwrap();
        let b = synth_series(&cfg).unwrap();
        assert_eq!(a, b);
        let c = synth_series(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.values, c.values);

        for t in 0..500 {
            let sum = a.trend[t] + a.seasonal[t] + a.noise[t];
            assert!((sum - a.values[t]).abs() < 1e-12);
            assert!((a.trend[t] - (1.0 + 0.05 * t as f64)).abs() < 1e-12);
        }
        // the noise should look like N(0, 0.1): mean near zero, std within 20%
        let mean = a.noise.iter().sum::<f64>() / 500.0;
        let std =
            (a.noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 500.0).sqrt();
        assert!(mean.abs() < 5.0 * 0.1 / (500.0f64).sqrt(), "mean {mean}");
        assert!((std - 0.1).abs() < 0.02, "std {std}");

        let walk = synth_series(&SynthConfig {
            kind: SynthKind::RandomWalk,
            ..cfg
        })
        .unwrap();
        assert_eq!(walk.values, walk.trend);
        assert!(walk.seasonal.iter().all(|&v| v == 0.0));

        let flat = synth_series(&SynthConfig {
            kind: SynthKind::Constant,
            ..cfg
        })
        .unwrap();
        assert!(flat.values.iter().all(|&v| v == 1.0));

        let ds = a.to_dataset();
        assert_eq!(ds.num_channels(), 1);
        assert_eq!(ds.len(), 500);

        // shorter than two periods is rejected
        assert!(synth_series(&SynthConfig {
            length: 23,
            period: 12,
            ..cfg
        })
        .is_err());
    }

    #[test]
    fn dataset_validation_catches_bad_rows() {
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(
            vec!["a".into()],
            vec![vec![1.0], vec![1.0, 2.0]]
        )
        .is_err());
        let err = Dataset::new(vec!["a".into()], vec![vec![1.0], vec![f64::NAN]])
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 2"), "{err}");
    }
}
