//! Glue for end-to-end runs: simulation setups (the reference room and a
//! perturbed "pseudo-real" room), dataset statistics, and the pipeline
//! configuration file.

use std::fmt;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::co2_sim::{integrate, Co2Series, RoomConfig, SECONDS_PER_MINUTE};
use crate::dataset::LabeledMinuteSeries;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::{NetworkConfig, TrainConfig, ValidationSplit};
use crate::occupancy_sim::{simulate_days, OccupancyConfig, OccupancyTrace, Range};

/// Room physics plus occupant behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SimulationSetup {
    pub room: RoomConfig,
    pub occupancy: OccupancyConfig,
}

impl SimulationSetup {
    /// A room that differs from the defaults: 1.5× infiltration, ventilation
    /// multipliers in [5, 60] and all sojourn bounds stretched by 20%.
    pub fn pseudo_real() -> Self {
        let mut s = Self::default();
        s.room.infiltration_flow *= 1.5;
        s.occupancy.vm_range = Range::new(5.0, 60.0);
        s.occupancy.presence = s.occupancy.presence.scaled(1.2);
        s.occupancy.window = s.occupancy.window.scaled(1.2);
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.occupancy.validate()
    }
}

/// Simulated days with their per-minute CO₂ and labels.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub traces: Vec<OccupancyTrace>,
    pub minutes: LabeledMinuteSeries,
    /// Extremes of the underlying 1 s series.
    pub co2_min: f64,
    pub co2_max: f64,
}

impl SyntheticDataset {
    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            days: self.traces.len(),
            granularity_s: 1.0,
            max_occupants: 1,
            presence_rate: self.minutes.presence_rate(),
            co2_min: self.co2_min,
            co2_max: self.co2_max,
        }
    }
}

/// Simulates `n_days` starting at outdoor level and keeps 1 min means.
pub fn generate(setup: &SimulationSetup, n_days: usize, seed: u64, exec: Execution) -> Result<SyntheticDataset> {
    setup.validate()?;
    let traces = simulate_days(n_days, &setup.occupancy, seed, exec)?;
    let mut minutes = Vec::with_capacity(traces.len() * 1440);
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    integrate(&traces, &setup.room, setup.room.outdoor_co2, |s, c| {
        lo = lo.min(c);
        hi = hi.max(c);
        sum += c;
        if s % SECONDS_PER_MINUTE == SECONDS_PER_MINUTE - 1 {
            minutes.push(sum / SECONDS_PER_MINUTE as f64);
            sum = 0.0;
        }
    })?;
    let minutes = LabeledMinuteSeries::from_simulation(&minutes, &traces)?;
    Ok(SyntheticDataset {
        traces,
        minutes,
        co2_min: lo,
        co2_max: hi,
    })
}

/// A sensor-style log of a simulated room: every `step_s`-th second of the
/// 1 s series plus Gaussian measurement noise, starting at `start_s` (Unix
/// seconds, UTC midnight for calendar-aligned days).
pub fn sensor_log(
    series: &Co2Series,
    traces: &[OccupancyTrace],
    step_s: usize,
    noise_ppm: f64,
    start_s: f64,
    seed: u64,
) -> Result<(Co2Series, Vec<i64>)> {
    if step_s == 0 || SECONDS_PER_MINUTE % step_s != 0 {
        return Err(Error::domain("sensor step must divide 60 s"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_ppm.max(0.0)).map_err(|e| Error::domain(e.to_string()))?;
    let mut values = Vec::with_capacity(series.len() / step_s);
    let mut counts = Vec::with_capacity(series.len() / step_s);
    for i in (0..series.len()).step_by(step_s) {
        let minute = i / SECONDS_PER_MINUTE;
        let (day, t) = (minute / 1440, minute % 1440);
        let n = traces.get(day).map_or(0, |tr| tr.occ[t] as i64);
        let v = series.values[i] + if noise_ppm > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        values.push(v.max(0.0).round());
        counts.push(n);
    }
    Ok((Co2Series::new(start_s, step_s as f64, values)?, counts))
}

/// Summary statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub days: usize,
    pub granularity_s: f64,
    pub max_occupants: usize,
    pub presence_rate: f64,
    pub co2_min: f64,
    pub co2_max: f64,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {} working days", "Dataset Size", self.days)?;
        writeln!(f, "{:<18} {} sec", "Time Granularity", self.granularity_s)?;
        writeln!(f, "{:<18} [0, {}]", "Occupancy Values", self.max_occupants)?;
        writeln!(f, "{:<18} {:.2}%", "Presence Rate", 100.0 * self.presence_rate)?;
        write!(
            f,
            "{:<18} [{:.0}, {:.0}] ppm",
            "CO2 Value Range", self.co2_min, self.co2_max
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolSettings {
    pub k: Vec<usize>,
    pub seeds: usize,
    pub wraparound: bool,
    /// Validation split of the per-fold training runs.
    pub validation_split: ValidationSplit,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        Self {
            k: vec![1, 2, 3, 4],
            seeds: 10,
            wraparound: false,
            validation_split: ValidationSplit::Shuffled,
        }
    }
}

/// Everything a full run needs. Every field has the reference default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub weights_dir: PathBuf,
    pub report_dir: PathBuf,
    pub simulation: SimulationSetup,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub protocol: ProtocolSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            weights_dir: "weights".into(),
            report_dir: "reports".into(),
            simulation: SimulationSetup::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            protocol: ProtocolSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        if self.protocol.k.iter().any(|&k| k == 0) || self.protocol.seeds == 0 {
            return Err(Error::domain("protocol k values and seed count must be >= 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
