//! From CO₂ series to model-ready sliding windows: 1 min mean downsampling,
//! label binarization, per-day windowing, CSV ingestion and export, and the
//! chronological train/validation split.

use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::co2_sim::{Co2Series, SECONDS_PER_MINUTE};
use crate::error::{Error, Result};
use crate::occupancy_sim::{OccupancyTrace, MINUTES_PER_DAY};

pub const WINDOW_LENGTH: usize = 15;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;

/// Number of samples per minute for a series step; errors unless the step
/// divides 60 s.
fn samples_per_minute(step_s: f64) -> Result<usize> {
    let per = (SECONDS_PER_MINUTE as f64 / step_s).round();
    if per < 1.0 || (per * step_s - SECONDS_PER_MINUTE as f64).abs() > 1e-9 {
        return Err(Error::domain(format!("step of {step_s} s does not divide one minute")));
    }
    Ok(per as usize)
}

/// Mean of each complete minute; a trailing partial minute is dropped.
pub fn downsample_mean(series: &Co2Series) -> Result<Vec<f64>> {
    let per = samples_per_minute(series.step_s)?;
    Ok(series
        .values
        .chunks_exact(per)
        .map(|c| c.iter().sum::<f64>() / per as f64)
        .collect())
}

/// 1 iff at least one occupant is present.
pub fn binarize_labels(counts: &[i64]) -> Result<Vec<u8>> {
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c < 0 {
                Err(Error::domain(format!("negative occupant count {c} at index {i}")))
            } else {
                Ok(u8::from(c >= 1))
            }
        })
        .collect()
}

/// Per-minute CO₂ with binary labels, split into days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMinuteSeries {
    pub co2: Vec<f64>,
    pub label: Vec<u8>,
    /// Start index of every day; the first entry is 0.
    pub day_starts: Vec<usize>,
}

impl LabeledMinuteSeries {
    pub fn new(co2: Vec<f64>, label: Vec<u8>, day_starts: Vec<usize>) -> Result<Self> {
        if co2.len() != label.len() {
            return Err(Error::domain(format!(
                "co2 has {} minutes but labels have {}",
                co2.len(),
                label.len()
            )));
        }
        if label.iter().any(|&l| l > 1) {
            return Err(Error::domain("labels must be binary"));
        }
        let sorted = day_starts.windows(2).all(|w| w[0] < w[1]);
        if !sorted || day_starts.first().is_some_and(|&s| s != 0) || day_starts.last().is_some_and(|&s| s > co2.len()) {
            return Err(Error::domain("day starts must be increasing from 0"));
        }
        Ok(Self { co2, label, day_starts })
    }

    /// Pairs a per-minute simulated series with the traces that drove it.
    pub fn from_simulation(minutes: &[f64], traces: &[OccupancyTrace]) -> Result<Self> {
        let label: Vec<u8> = traces.iter().flat_map(|t| t.occ.iter().copied()).collect();
        let day_starts = (0..traces.len()).map(|d| d * MINUTES_PER_DAY).collect();
        Self::new(minutes.to_vec(), label, day_starts)
    }

    /// Downsamples a sensor log and splits it into calendar days (UTC).
    /// A minute counts as occupied when someone is present in at least half
    /// of its samples.
    pub fn from_sensor(series: &Co2Series, counts: &[i64]) -> Result<Self> {
        if counts.len() != series.len() {
            return Err(Error::domain("occupant counts and CO2 samples differ in length"));
        }
        let per = samples_per_minute(series.step_s)?;
        let co2 = downsample_mean(series)?;
        let binary = binarize_labels(counts)?;
        let label: Vec<u8> = binary
            .chunks_exact(per)
            .map(|c| u8::from(2 * c.iter().map(|&b| b as usize).sum::<usize>() >= per))
            .collect();
        let day_of = |i: usize| ((series.start_s + (i * per) as f64 * series.step_s) / 86_400.0).floor() as i64;
        let mut day_starts = Vec::new();
        for i in 0..co2.len() {
            if i == 0 || day_of(i) != day_of(i - 1) {
                day_starts.push(i);
            }
        }
        Self::new(co2, label, day_starts)
    }

    pub fn n_days(&self) -> usize {
        self.day_starts.len()
    }

    pub fn day_range(&self, day: usize) -> std::ops::Range<usize> {
        let start = self.day_starts[day];
        let end = self.day_starts.get(day + 1).copied().unwrap_or(self.co2.len());
        start..end
    }

    pub fn presence_rate(&self) -> f64 {
        self.label.iter().map(|&l| l as usize).sum::<usize>() as f64 / self.label.len().max(1) as f64
    }
}

/// One input window and the occupancy at its final minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub inputs: Vec<f64>,
    pub label: u8,
}

/// Windows per contiguous segment of `n` minutes.
pub fn window_count(n: usize, length: usize, stride: usize) -> usize {
    if n < length {
        0
    } else {
        (n - length) / stride + 1
    }
}

/// Sliding windows over a single day; labeled by the last minute.
pub fn windows_for_day(series: &LabeledMinuteSeries, day: usize, length: usize, stride: usize) -> Vec<WindowSample> {
    let range = series.day_range(day);
    let co2 = &series.co2[range.clone()];
    let label = &series.label[range];
    (0..window_count(co2.len(), length, stride))
        .map(|k| {
            let start = k * stride;
            WindowSample {
                inputs: co2[start..start + length].to_vec(),
                label: label[start + length - 1],
            }
        })
        .collect()
}

/// Windows never cross a day boundary.
pub fn windows_by_day(series: &LabeledMinuteSeries, length: usize, stride: usize) -> Result<Vec<Vec<WindowSample>>> {
    if length == 0 || stride == 0 {
        return Err(Error::domain("window length and stride must be positive"));
    }
    Ok((0..series.n_days())
        .map(|d| windows_for_day(series, d, length, stride))
        .collect())
}

pub fn make_windows(series: &LabeledMinuteSeries, length: usize, stride: usize) -> Result<Vec<WindowSample>> {
    Ok(windows_by_day(series, length, stride)?.into_iter().flatten().collect())
}

/// Chronological split: the final `fraction` of samples becomes validation.
pub fn split<T: Clone>(samples: &[T], fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    let n_val = (samples.len() as f64 * fraction).round() as usize;
    let cut = samples.len() - n_val;
    Ok((samples[..cut].to_vec(), samples[cut..].to_vec()))
}

/// Input standardization, fitted once on a training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { mean: 0.0, std: 1.0 };

    pub fn fit(samples: &[WindowSample]) -> Self {
        let n: usize = samples.iter().map(|s| s.inputs.len()).sum();
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = samples.iter().flat_map(|s| &s.inputs).sum::<f64>() / n as f64;
        let var = samples
            .iter()
            .flat_map(|s| &s.inputs)
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

fn parse_timestamp(s: &str) -> Option<f64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp_micros() as f64 / 1e6);
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|dt| dt.and_utc().timestamp_micros() as f64 / 1e6)
}

/// Formats seconds since the Unix epoch as an ISO-8601 UTC timestamp.
pub fn format_timestamp(seconds: f64) -> String {
    let micros = (seconds * 1e6).round() as i64;
    DateTime::from_timestamp_micros(micros)
        .map(|dt| dt.naive_utc().format("%Y-%m-%dT%H:%M:%S").to_string())
        .unwrap_or_default()
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn headers(reader: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    Ok(reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect())
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, path: &Path, line: usize) -> Result<&'a str> {
    rec.get(idx)
        .ok_or_else(|| parse_error(path, line, format!("missing column {name}")))
}

fn number<T: std::str::FromStr>(s: &str, name: &str, path: &Path, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| parse_error(path, line, format!("invalid {name} value {s:?}")))
}

/// Reads a sensor log with header `timestamp,co2_ppm,occupant_count`.
/// Timestamps are ISO-8601 and must advance by a constant step.
pub fn read_sensor_csv(path: &Path) -> Result<(Co2Series, Vec<i64>)> {
    let mut reader = open_csv(path)?;
    let cols = headers(&mut reader, path)?;
    if cols != ["timestamp", "co2_ppm", "occupant_count"] {
        return Err(parse_error(path, 1, format!("unexpected header {cols:?}")));
    }
    let mut times = Vec::new();
    let mut co2 = Vec::new();
    let mut counts = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_error(path, line, e.to_string()))?;
        let ts = field(&rec, 0, "timestamp", path, line)?;
        let t = parse_timestamp(ts).ok_or_else(|| parse_error(path, line, format!("invalid timestamp {ts:?}")))?;
        let c: f64 = number(field(&rec, 1, "co2_ppm", path, line)?, "co2_ppm", path, line)?;
        if !c.is_finite() || c < 0.0 {
            return Err(parse_error(path, line, format!("invalid co2_ppm value {c}")));
        }
        let n: i64 = number(field(&rec, 2, "occupant_count", path, line)?, "occupant_count", path, line)?;
        if n < 0 {
            return Err(parse_error(path, line, format!("negative occupant_count {n}")));
        }
        if times.len() >= 2 {
            let step = times[1] - times[0];
            let prev: f64 = *times.last().unwrap();
            if ((t - prev) - step).abs() > 1e-3 {
                return Err(parse_error(path, line, format!("timestamp step {} s differs from {step} s", t - prev)));
            }
        }
        times.push(t);
        co2.push(c);
        counts.push(n);
    }
    if times.len() < 2 {
        return Err(parse_error(path, times.len() + 1, "need at least two rows"));
    }
    let step = times[1] - times[0];
    if step <= 0.0 {
        return Err(parse_error(path, 3, "timestamps must increase"));
    }
    Ok((Co2Series::new(times[0], step, co2)?, counts))
}

pub fn write_sensor_csv(path: &Path, series: &Co2Series, counts: &[i64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "timestamp,co2_ppm,occupant_count").map_err(io)?;
    for (i, (c, n)) in series.values.iter().zip(counts).enumerate() {
        writeln!(w, "{},{c},{n}", format_timestamp(series.time(i))).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a series CSV with header `timestamp_s,co2_ppm,...`, as written by
/// the simulator. Extra columns are ignored.
pub fn read_series_csv(path: &Path) -> Result<Co2Series> {
    let mut reader = open_csv(path)?;
    let cols = headers(&mut reader, path)?;
    if cols.first().map(String::as_str) != Some("timestamp_s") || cols.get(1).map(String::as_str) != Some("co2_ppm") {
        return Err(parse_error(path, 1, format!("unexpected header {cols:?}")));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_error(path, line, e.to_string()))?;
        times.push(number::<f64>(field(&rec, 0, "timestamp_s", path, line)?, "timestamp_s", path, line)?);
        values.push(number::<f64>(field(&rec, 1, "co2_ppm", path, line)?, "co2_ppm", path, line)?);
    }
    if times.len() < 2 {
        return Err(parse_error(path, times.len() + 1, "need at least two rows"));
    }
    Co2Series::new(times[0], times[1] - times[0], values)
}

/// Reads either series format, chosen by the header.
pub fn read_any_series(path: &Path) -> Result<Co2Series> {
    let mut reader = open_csv(path)?;
    let cols = headers(&mut reader, path)?;
    if cols.first().map(String::as_str) == Some("timestamp") {
        Ok(read_sensor_csv(path)?.0)
    } else {
        read_series_csv(path)
    }
}

/// Writes samples as `v1,...,vN,label`.
pub fn write_samples(path: &Path, samples: &[WindowSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let len = samples.first().map_or(WINDOW_LENGTH, |s| s.inputs.len());
    let header: Vec<String> = (1..=len).map(|i| format!("v{i}")).chain(["label".to_string()]).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for s in samples {
        let row: Vec<String> = s.inputs.iter().map(f64::to_string).chain([s.label.to_string()]).collect();
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_samples(path: &Path) -> Result<Vec<WindowSample>> {
    let mut reader = open_csv(path)?;
    let cols = headers(&mut reader, path)?;
    if cols.last().map(String::as_str) != Some("label") || cols.len() < 2 {
        return Err(parse_error(path, 1, "sample header must end with label"));
    }
    let len = cols.len() - 1;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_error(path, line, e.to_string()))?;
        if rec.len() != len + 1 {
            return Err(parse_error(path, line, format!("expected {} fields, got {}", len + 1, rec.len())));
        }
        let inputs = (0..len)
            .map(|k| number::<f64>(&rec[k], &cols[k], path, line))
            .collect::<Result<Vec<_>>>()?;
        let label: u8 = number(&rec[len], "label", path, line)?;
        if label > 1 {
            return Err(parse_error(path, line, format!("label must be 0 or 1, got {label}")));
        }
        out.push(WindowSample { inputs, label });
    }
    Ok(out)
}

/// Writes a labeled minute series as `day,minute,co2_ppm,label`.
pub fn write_minute_series(path: &Path, series: &LabeledMinuteSeries) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "day,minute,co2_ppm,label").map_err(io)?;
    for d in 0..series.n_days() {
        let range = series.day_range(d);
        let start = range.start;
        for i in range {
            writeln!(w, "{d},{},{},{}", i - start, series.co2[i], series.label[i]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_minute_series(path: &Path) -> Result<LabeledMinuteSeries> {
    let mut reader = open_csv(path)?;
    let cols = headers(&mut reader, path)?;
    if cols != ["day", "minute", "co2_ppm", "label"] {
        return Err(parse_error(path, 1, format!("unexpected header {cols:?}")));
    }
    let (mut co2, mut label, mut day_starts) = (Vec::new(), Vec::new(), Vec::new());
    let mut last_day = None;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_error(path, line, e.to_string()))?;
        let day: usize = number(field(&rec, 0, "day", path, line)?, "day", path, line)?;
        let c: f64 = number(field(&rec, 2, "co2_ppm", path, line)?, "co2_ppm", path, line)?;
        let l: u8 = number(field(&rec, 3, "label", path, line)?, "label", path, line)?;
        if l > 1 {
            return Err(parse_error(path, line, format!("label must be 0 or 1, got {l}")));
        }
        if last_day != Some(day) {
            if last_day.is_some_and(|d| day < d) {
                return Err(parse_error(path, line, "days must be non-decreasing"));
            }
            day_starts.push(co2.len());
            last_day = Some(day);
        }
        co2.push(c);
        label.push(l);
    }
    LabeledMinuteSeries::new(co2, label, day_starts)
}
