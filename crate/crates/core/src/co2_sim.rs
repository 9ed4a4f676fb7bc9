//! Indoor CO₂ mass balance, integrated with explicit Euler steps of 1 s.
//!
//! Concentrations are in ppm and flows are volumetric:
//!
//! ```text
//! dc/dt = (Q(t) / V) * (c_out - c) + 1e6 * Q_occ(t) / V
//! ```
//!
//! where `Q(t)` is the infiltration flow (times the ventilation multiplier
//! while a window is open) and `Q_occ` the exhaled CO₂ flow. This is the
//! mass-flow form divided through by air density at constant pressure; the
//! mass-form quantities are still available from [`RoomConfig`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy_sim::{OccupancyTrace, MINUTES_PER_DAY};

pub const SECONDS_PER_MINUTE: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomConfig {
    /// Room volume, m³.
    pub volume: f64,
    /// Infiltration flow with all windows closed, m³/s.
    pub infiltration_flow: f64,
    /// Outdoor CO₂, ppm.
    pub outdoor_co2: f64,
    /// Exhaled CO₂ per occupant, l/min.
    pub occupant_generation: f64,
    /// Dry air density at STP, g/l.
    pub air_density: f64,
    /// CO₂ density at STP, g/l.
    pub co2_density: f64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            volume: 77.5,
            infiltration_flow: 0.0046,
            outdoor_co2: 360.0,
            occupant_generation: 0.24,
            air_density: 1.2754,
            co2_density: 1.977,
        }
    }
}

impl RoomConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("volume", self.volume),
            ("infiltration_flow", self.infiltration_flow),
            ("outdoor_co2", self.outdoor_co2),
            ("occupant_generation", self.occupant_generation),
            ("air_density", self.air_density),
            ("co2_density", self.co2_density),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("room {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Infiltration as a mass flow, g/s (g/l is numerically kg/m³).
    pub fn infiltration_mass_flow(&self) -> f64 {
        self.infiltration_flow * 1000.0 * self.air_density
    }

    /// Air exchange rate with windows closed, 1/s.
    pub fn air_exchange_rate(&self) -> f64 {
        self.infiltration_flow / self.volume
    }
}

fn check_count(n: i64) -> Result<f64> {
    if n < 0 {
        return Err(Error::domain(format!("occupant count must be >= 0, got {n}")));
    }
    Ok(n as f64)
}

/// Exhaled CO₂ as a volumetric flow, m³/s.
pub fn generation_volumetric(n: i64, cfg: &RoomConfig) -> Result<f64> {
    Ok(check_count(n)? * cfg.occupant_generation / 60_000.0)
}

/// Exhaled CO₂ as a mass flow, mg/s: `n * g_occ * m_co2 * 1000 / 60`.
pub fn generation_mass(n: i64, cfg: &RoomConfig) -> Result<f64> {
    Ok(check_count(n)? * cfg.occupant_generation * cfg.co2_density * 1000.0 / 60.0)
}

/// Total air flow through the room, m³/s.
pub fn effective_flow(window_open: bool, vm: f64, cfg: &RoomConfig) -> Result<f64> {
    if !(vm >= 1.0) {
        return Err(Error::domain(format!("ventilation multiplier must be >= 1, got {vm}")));
    }
    Ok(if window_open {
        cfg.infiltration_flow * vm
    } else {
        cfg.infiltration_flow
    })
}

/// Rate of change in ppm/s for a volumetric source `source` (m³/s).
#[inline]
fn derivative(c: f64, source: f64, flow: f64, cfg: &RoomConfig) -> f64 {
    flow / cfg.volume * (cfg.outdoor_co2 - c) + 1e6 * source / cfg.volume
}

/// One forward-Euler step of length `dt` seconds.
pub fn step_co2(c: f64, n: i64, flow: f64, cfg: &RoomConfig, dt: f64) -> Result<f64> {
    let source = generation_volumetric(n, cfg)?;
    Ok(c + dt * derivative(c, source, flow, cfg))
}

/// Fixed point of the mass balance for constant occupancy and flow.
pub fn steady_state(n: i64, flow: f64, cfg: &RoomConfig) -> Result<f64> {
    if !(flow > 0.0) {
        return Err(Error::domain("flow must be positive"));
    }
    Ok(cfg.outdoor_co2 + 1e6 * generation_volumetric(n, cfg)? / flow)
}

/// Regularly sampled CO₂ concentrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Co2Series {
    /// Time of the first sample, seconds from an arbitrary origin.
    pub start_s: f64,
    pub step_s: f64,
    pub values: Vec<f64>,
}

impl Co2Series {
    pub fn new(start_s: f64, step_s: f64, values: Vec<f64>) -> Result<Self> {
        if !(step_s > 0.0) {
            return Err(Error::domain("series step must be positive"));
        }
        Ok(Self {
            start_s,
            step_s,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_s + i as f64 * self.step_s
    }
}

/// Per-minute inputs of the integrator, derived from a trace.
#[derive(Debug, Clone, Copy)]
struct MinuteDrive {
    source: f64,
    flow: f64,
}

fn minute_drives(trace: &OccupancyTrace, cfg: &RoomConfig) -> Result<Vec<MinuteDrive>> {
    (0..MINUTES_PER_DAY)
        .map(|t| {
            Ok(MinuteDrive {
                source: generation_volumetric(trace.occ[t] as i64, cfg)?,
                flow: effective_flow(trace.window[t] == 1, trace.vent_multiplier[t], cfg)?,
            })
        })
        .collect()
}

/// Integrates the traces back to back at 1 s, calling `emit(second, c)` for
/// every sample, starting with `c0` at second 0. Occupancy, window and
/// multiplier are held constant within each minute.
pub fn integrate<F: FnMut(usize, f64)>(
    traces: &[OccupancyTrace],
    cfg: &RoomConfig,
    c0: f64,
    mut emit: F,
) -> Result<f64> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::domain("no occupancy traces to simulate"));
    }
    if !(c0 >= 0.0) {
        return Err(Error::domain("initial concentration must be >= 0"));
    }
    let mut c = c0;
    let mut second = 0usize;
    for trace in traces {
        for drive in minute_drives(trace, cfg)? {
            for _ in 0..SECONDS_PER_MINUTE {
                emit(second, c);
                c += derivative(c, drive.source, drive.flow, cfg);
                second += 1;
            }
        }
    }
    Ok(c)
}

/// Continuous 1 s series over all traces.
pub fn simulate_co2(traces: &[OccupancyTrace], cfg: &RoomConfig, c0: f64) -> Result<Co2Series> {
    let mut values = Vec::with_capacity(traces.len() * MINUTES_PER_DAY * SECONDS_PER_MINUTE);
    integrate(traces, cfg, c0, |_, c| values.push(c))?;
    Co2Series::new(0.0, 1.0, values)
}

/// Same integration as [`simulate_co2`], but keeps only per-minute means of
/// the 1 s samples. Identical to downsampling the full series.
pub fn simulate_co2_per_minute(traces: &[OccupancyTrace], cfg: &RoomConfig, c0: f64) -> Result<Co2Series> {
    let mut values = Vec::with_capacity(traces.len() * MINUTES_PER_DAY);
    let mut sum = 0.0;
    integrate(traces, cfg, c0, |s, c| {
        sum += c;
        if s % SECONDS_PER_MINUTE == SECONDS_PER_MINUTE - 1 {
            values.push(sum / SECONDS_PER_MINUTE as f64);
            sum = 0.0;
        }
    })?;
    Co2Series::new(0.0, SECONDS_PER_MINUTE as f64, values)
}

/// Writes `timestamp_s,co2_ppm,occ,window` for a series at 1 s or 1 min
/// steps aligned with `traces`.
pub fn write_series_csv(path: &Path, series: &Co2Series, traces: &[OccupancyTrace]) -> Result<()> {
    let per_minute = (series.step_s / SECONDS_PER_MINUTE as f64).round() as usize;
    let samples_per_minute = (SECONDS_PER_MINUTE as f64 / series.step_s).round() as usize;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "timestamp_s,co2_ppm,occ,window").map_err(io)?;
    for (i, c) in series.values.iter().enumerate() {
        let minute = if per_minute >= 1 { i * per_minute } else { i / samples_per_minute };
        let (day, t) = (minute / MINUTES_PER_DAY, minute % MINUTES_PER_DAY);
        let (occ, window) = traces
            .get(day)
            .map(|tr| (tr.occ[t], tr.window[t]))
            .unwrap_or((0, 0));
        writeln!(w, "{},{},{},{}", series.time(i), c, occ, window).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupancy_sim::{DaySchedule, ScheduleNominals, SojournParams};
    use approx::assert_abs_diff_eq;

    fn empty_trace(day: usize) -> OccupancyTrace {
        OccupancyTrace {
            day_index: day,
            schedule: DaySchedule::nominal(&ScheduleNominals::default()),
            presence_params: SojournParams { s0: 10.0, s1: 30.0 },
            window_params: SojournParams { s0: 60.0, s1: 5.0 },
            occ: vec![0; MINUTES_PER_DAY],
            window: vec![0; MINUTES_PER_DAY],
            vent_multiplier: vec![1.0; MINUTES_PER_DAY],
        }
    }

    #[test]
    fn generation_rates() {
        let cfg = RoomConfig::default();
        assert_eq!(generation_volumetric(0, &cfg).unwrap(), 0.0);
        assert_abs_diff_eq!(generation_volumetric(1, &cfg).unwrap(), 4.0e-6, epsilon = 1e-18);
        let mass = generation_mass(1, &cfg).unwrap();
        assert_abs_diff_eq!(mass, 7.908, epsilon = 1e-12);
        // mg/s over g/l gives ml/s.
        assert_abs_diff_eq!(mass / cfg.co2_density * 1e-6, 4.0e-6, epsilon = 1e-18);
        assert!(generation_volumetric(-1, &cfg).is_err());
    }

    #[test]
    fn flow_by_window_state() {
        let cfg = RoomConfig::default();
        assert_abs_diff_eq!(effective_flow(false, 1.0, &cfg).unwrap(), 0.0046, epsilon = 1e-15);
        assert_abs_diff_eq!(effective_flow(true, 10.0, &cfg).unwrap(), 0.046, epsilon = 1e-15);
        assert_abs_diff_eq!(effective_flow(true, 100.0, &cfg).unwrap(), 0.46, epsilon = 1e-15);
        assert!(effective_flow(true, 0.5, &cfg).is_err());
    }

    #[test]
    fn euler_step_examples() {
        let cfg = RoomConfig::default();
        assert_eq!(step_co2(360.0, 0, 0.0046, &cfg, 1.0).unwrap(), 360.0);
        assert_eq!(step_co2(360.0, 0, 0.46, &cfg, 37.0).unwrap(), 360.0);
        assert_abs_diff_eq!(step_co2(1000.0, 0, 0.0046, &cfg, 1.0).unwrap(), 999.962012, epsilon = 1e-6);
        assert_abs_diff_eq!(step_co2(360.0, 1, 0.0046, &cfg, 1.0).unwrap(), 360.051613, epsilon = 1e-6);
    }

    #[test]
    fn steady_states() {
        let cfg = RoomConfig::default();
        assert_eq!(steady_state(0, 0.0046, &cfg).unwrap(), 360.0);
        assert_abs_diff_eq!(steady_state(1, 0.0046, &cfg).unwrap(), 1229.565, epsilon = 1e-3);
        assert_abs_diff_eq!(steady_state(1, 0.046, &cfg).unwrap(), 446.96, epsilon = 1e-2);
        assert!(steady_state(1, 0.0, &cfg).is_err());
    }

    #[test]
    fn empty_room_stays_at_outdoor_level() {
        let cfg = RoomConfig::default();
        let s = simulate_co2(&[empty_trace(0)], &cfg, 360.0).unwrap();
        assert_eq!(s.len(), 86_400);
        assert!(s.values.iter().all(|&c| c == 360.0));
    }

    #[test]
    fn closed_room_decay_matches_exponential() {
        let cfg = RoomConfig::default();
        let s = simulate_co2(&[empty_trace(0)], &cfg, 1000.0).unwrap();
        let k = cfg.air_exchange_rate();
        for t in 0..=8 * 3600 {
            let exact = 360.0 + 640.0 * (-k * t as f64).exp();
            assert!((s.values[t] - exact).abs() < 0.5, "t={t}");
        }
        // monotone relaxation
        assert!(s.values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn days_chain_continuously() {
        let cfg = RoomConfig::default();
        let mut a = empty_trace(0);
        a.occ[600..700].fill(1);
        let both = simulate_co2(&[a.clone(), empty_trace(1)], &cfg, 360.0).unwrap();
        let first = simulate_co2(&[a], &cfg, 360.0).unwrap();
        let last = *first.values.last().unwrap();
        let carried = step_co2(last, 0, cfg.infiltration_flow, &cfg, 1.0).unwrap();
        assert_eq!(both.values[86_400], carried);
    }

    #[test]
    fn per_minute_matches_downsampled_series() {
        let cfg = RoomConfig::default();
        let mut tr = empty_trace(0);
        tr.occ[500..800].fill(1);
        tr.window[550..560].fill(1);
        tr.vent_multiplier[550..560].fill(40.0);
        let full = simulate_co2(std::slice::from_ref(&tr), &cfg, 500.0).unwrap();
        let minutes = simulate_co2_per_minute(&[tr], &cfg, 500.0).unwrap();
        let down = crate::dataset::downsample_mean(&full).unwrap();
        assert_eq!(minutes.values, down);
    }
}
