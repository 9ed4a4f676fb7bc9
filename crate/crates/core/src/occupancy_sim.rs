//! Stochastic occupant behavior: scheduled status transitions (arrival,
//! breaks, lunch, departure) with random "moving" absences and window
//! openings, each driven by a two-state Markov chain stepped once per minute.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

pub const MINUTES_PER_DAY: usize = 1440;

/// Seeded generator used for every stochastic stage.
pub type SimRng = ChaCha8Rng;

/// Random stream for one simulated day: `base_seed XOR day_index`.
pub fn day_rng(base_seed: u64, day_index: usize) -> SimRng {
    SimRng::seed_from_u64(base_seed ^ day_index as u64)
}

/// Nominal event times (minutes since midnight) and the shift applied to each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleNominals {
    pub arrival: u32,
    pub break1_start: u32,
    pub lunch_start: u32,
    pub break2_start: u32,
    pub departure: u32,
    pub max_shift: u32,
    pub lunch_duration: u32,
    pub break_duration: u32,
}

impl Default for ScheduleNominals {
    fn default() -> Self {
        Self {
            arrival: 8 * 60,
            break1_start: 10 * 60,
            lunch_start: 12 * 60,
            break2_start: 15 * 60,
            departure: 18 * 60,
            max_shift: 15,
            lunch_duration: 60,
            break_duration: 15,
        }
    }
}

impl ScheduleNominals {
    /// Checks that any combination of shifts keeps the events ordered and
    /// inside the day.
    pub fn validate(&self) -> Result<()> {
        let s = self.max_shift;
        let ordered = self.arrival >= s
            && self.arrival + s < self.break1_start.saturating_sub(s)
            && self.break1_start + s + self.break_duration < self.lunch_start.saturating_sub(s)
            && self.lunch_start + s + self.lunch_duration < self.break2_start.saturating_sub(s)
            && self.break2_start + s + self.break_duration < self.departure.saturating_sub(s)
            && self.departure + s <= MINUTES_PER_DAY as u32;
        if ordered {
            Ok(())
        } else {
            Err(Error::domain(
                "schedule nominals overlap once shifted by max_shift",
            ))
        }
    }
}

/// One day's event times, minutes since midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaySchedule {
    pub arrival: u32,
    pub break1_start: u32,
    pub lunch_start: u32,
    pub break2_start: u32,
    pub departure: u32,
    pub lunch_duration: u32,
    pub break_duration: u32,
}

impl DaySchedule {
    pub fn nominal(n: &ScheduleNominals) -> Self {
        Self {
            arrival: n.arrival,
            break1_start: n.break1_start,
            lunch_start: n.lunch_start,
            break2_start: n.break2_start,
            departure: n.departure,
            lunch_duration: n.lunch_duration,
            break_duration: n.break_duration,
        }
    }

    /// Half-open minute intervals of basic occupancy.
    pub fn basic_spans(&self) -> [(usize, usize); 4] {
        let u = |m: u32| m as usize;
        [
            (u(self.arrival), u(self.break1_start)),
            (u(self.break1_start + self.break_duration), u(self.lunch_start)),
            (u(self.lunch_start + self.lunch_duration), u(self.break2_start)),
            (u(self.break2_start + self.break_duration), u(self.departure)),
        ]
    }

    pub fn is_basic_occupancy(&self, minute: usize) -> bool {
        self.basic_spans()
            .iter()
            .any(|&(a, b)| (a..b).contains(&minute))
    }
}

/// Draws a schedule with an independent integer shift in
/// `[-max_shift, +max_shift]` for each event.
pub fn sample_day_schedule<R: Rng + ?Sized>(nominals: &ScheduleNominals, rng: &mut R) -> DaySchedule {
    let s = nominals.max_shift as i64;
    let mut shift = |m: u32| (m as i64 + rng.random_range(-s..=s)) as u32;
    DaySchedule {
        arrival: shift(nominals.arrival),
        break1_start: shift(nominals.break1_start),
        lunch_start: shift(nominals.lunch_start),
        break2_start: shift(nominals.break2_start),
        departure: shift(nominals.departure),
        lunch_duration: nominals.lunch_duration,
        break_duration: nominals.break_duration,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainRole {
    Presence,
    Window,
}

/// Expected sojourn times in minutes: `s0` in state 0 (absent / closed),
/// `s1` in state 1 (present / open).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournParams {
    pub s0: f64,
    pub s1: f64,
}

impl SojournParams {
    pub fn new(s0: f64, s1: f64) -> Result<Self> {
        if !(s0 >= 1.0 && s1 >= 1.0) {
            return Err(Error::domain(format!(
                "sojourn times must be >= 1 minute, got s0={s0}, s1={s1}"
            )));
        }
        Ok(Self { s0, s1 })
    }
}

/// Inclusive range for a sojourn time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.min..=self.max).contains(&x)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.min * factor, self.max * factor)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournBounds {
    pub s0: Range,
    pub s1: Range,
}

impl SojournBounds {
    pub fn for_role(role: ChainRole) -> Self {
        match role {
            ChainRole::Presence => Self {
                s0: Range::new(10.0, 60.0),
                s1: Range::new(30.0, 180.0),
            },
            ChainRole::Window => Self {
                s0: Range::new(60.0, 480.0),
                s1: Range::new(5.0, 30.0),
            },
        }
    }

    pub fn contains(&self, p: &SojournParams) -> bool {
        self.s0.contains(p.s0) && self.s1.contains(p.s1)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            s0: self.s0.scaled(factor),
            s1: self.s1.scaled(factor),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.s0, self.s1] {
            if !(r.min >= 1.0 && r.max >= r.min) {
                return Err(Error::domain(format!(
                    "invalid sojourn range [{}, {}]",
                    r.min, r.max
                )));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SojournParams {
        SojournParams {
            s0: self.s0.sample(rng),
            s1: self.s1.sample(rng),
        }
    }
}

/// Row-stochastic 2×2 matrix; `p[i][j]` is the probability of moving from
/// state `i` to state `j` in one minute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    pub p: [[f64; 2]; 2],
}

impl TransitionMatrix {
    pub fn leave_probability(&self, state: u8) -> f64 {
        let s = state as usize;
        self.p[s][1 - s]
    }

    /// Advances a chain by one step.
    pub fn step<R: Rng + ?Sized>(&self, state: u8, rng: &mut R) -> u8 {
        if rng.random::<f64>() < self.leave_probability(state) {
            1 - state
        } else {
            state
        }
    }
}

pub fn transition_matrix(params: &SojournParams) -> Result<TransitionMatrix> {
    let params = SojournParams::new(params.s0, params.s1)?;
    let p01 = 1.0 / params.s0;
    let p10 = 1.0 / params.s1;
    Ok(TransitionMatrix {
        p: [[1.0 - p01, p01], [p10, 1.0 - p10]],
    })
}

/// Runs a chain for `steps` steps starting from `initial`.
pub fn run_chain<R: Rng + ?Sized>(
    matrix: &TransitionMatrix,
    initial: u8,
    steps: usize,
    rng: &mut R,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(steps);
    let mut state = initial;
    for i in 0..steps {
        if i > 0 {
            state = matrix.step(state, rng);
        }
        out.push(state);
    }
    out
}

/// Per-minute presence. Each basic-occupancy span starts present, then
/// follows the chain; minutes outside the spans are absent.
pub fn simulate_presence<R: Rng + ?Sized>(
    schedule: &DaySchedule,
    params: &SojournParams,
    rng: &mut R,
) -> Result<Vec<u8>> {
    let matrix = transition_matrix(params)?;
    let mut occ = vec![0u8; MINUTES_PER_DAY];
    for (start, end) in schedule.basic_spans() {
        let end = end.min(MINUTES_PER_DAY);
        if start >= end {
            continue;
        }
        let run = run_chain(&matrix, 1, end - start, rng);
        occ[start..end].copy_from_slice(&run);
    }
    Ok(occ)
}

/// Per-minute window state and ventilation multiplier. The chain starts
/// closed at arrival and runs through breaks until departure; every opening
/// draws a fresh multiplier from `vm_range` that holds until the window
/// closes again.
pub fn simulate_windows<R: Rng + ?Sized>(
    schedule: &DaySchedule,
    params: &SojournParams,
    vm_range: Range,
    rng: &mut R,
) -> Result<(Vec<u8>, Vec<f64>)> {
    let matrix = transition_matrix(params)?;
    let mut window = vec![0u8; MINUTES_PER_DAY];
    let mut vm = vec![1.0; MINUTES_PER_DAY];
    let start = schedule.arrival as usize;
    let end = (schedule.departure as usize).min(MINUTES_PER_DAY);
    let mut state = 0u8;
    let mut current_vm = 1.0;
    for t in start..end {
        if t > start {
            let next = matrix.step(state, rng);
            if state == 0 && next == 1 {
                current_vm = vm_range.sample(rng);
            } else if next == 0 {
                current_vm = 1.0;
            }
            state = next;
        }
        window[t] = state;
        vm[t] = current_vm;
    }
    Ok((window, vm))
}

/// Everything that shapes the occupant simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    pub schedule: ScheduleNominals,
    pub presence: SojournBounds,
    pub window: SojournBounds,
    /// Range of the ventilation multiplier drawn at each window opening.
    pub vm_range: Range,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleNominals::default(),
            presence: SojournBounds::for_role(ChainRole::Presence),
            window: SojournBounds::for_role(ChainRole::Window),
            vm_range: Range::new(10.0, 100.0),
        }
    }
}

impl OccupancyConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.presence.validate()?;
        self.window.validate()?;
        if !(self.vm_range.min >= 1.0 && self.vm_range.max >= self.vm_range.min) {
            return Err(Error::domain("vm_range must satisfy 1 <= min <= max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTrace {
    pub day_index: usize,
    pub schedule: DaySchedule,
    pub presence_params: SojournParams,
    pub window_params: SojournParams,
    pub occ: Vec<u8>,
    pub window: Vec<u8>,
    pub vent_multiplier: Vec<f64>,
}

impl OccupancyTrace {
    pub fn occupied_minutes(&self) -> usize {
        self.occ.iter().filter(|&&o| o == 1).count()
    }

    /// Checks the structural invariants of a generated trace.
    pub fn check_invariants(&self, vm_range: Range) -> Result<()> {
        let fail = |m: String| Err(Error::domain(format!("day {}: {m}", self.day_index)));
        if self.occ.len() != MINUTES_PER_DAY
            || self.window.len() != MINUTES_PER_DAY
            || self.vent_multiplier.len() != MINUTES_PER_DAY
        {
            return fail("trace length is not 1440".into());
        }
        let arrival = self.schedule.arrival as usize;
        let departure = self.schedule.departure as usize;
        for t in 0..MINUTES_PER_DAY {
            if self.occ[t] > 1 || self.window[t] > 1 {
                return fail(format!("non-binary state at minute {t}"));
            }
            if self.occ[t] == 1 && !self.schedule.is_basic_occupancy(t) {
                return fail(format!("presence outside basic occupancy at minute {t}"));
            }
            if self.window[t] == 1 && !(arrival..departure).contains(&t) {
                return fail(format!("window open outside working hours at minute {t}"));
            }
            let vm = self.vent_multiplier[t];
            if self.window[t] == 0 && vm != 1.0 {
                return fail(format!("closed window with vm {vm} at minute {t}"));
            }
            if self.window[t] == 1 && !vm_range.contains(vm) {
                return fail(format!("vm {vm} outside range at minute {t}"));
            }
            if t > 0 && self.window[t] == 1 && self.window[t - 1] == 1 && vm != self.vent_multiplier[t - 1] {
                return fail(format!("vm changed within an open run at minute {t}"));
            }
        }
        Ok(())
    }
}

/// Simulates one day from its own random stream.
pub fn simulate_day(day_index: usize, config: &OccupancyConfig, base_seed: u64) -> Result<OccupancyTrace> {
    let mut rng = day_rng(base_seed, day_index);
    let presence_params = config.presence.sample(&mut rng);
    let window_params = config.window.sample(&mut rng);
    let schedule = sample_day_schedule(&config.schedule, &mut rng);
    let occ = simulate_presence(&schedule, &presence_params, &mut rng)?;
    let (window, vent_multiplier) = simulate_windows(&schedule, &window_params, config.vm_range, &mut rng)?;
    Ok(OccupancyTrace {
        day_index,
        schedule,
        presence_params,
        window_params,
        occ,
        window,
        vent_multiplier,
    })
}

/// Simulates `n_days` independent days; sojourn parameters and schedule are
/// redrawn for every day.
pub fn simulate_days(
    n_days: usize,
    config: &OccupancyConfig,
    base_seed: u64,
    exec: Execution,
) -> Result<Vec<OccupancyTrace>> {
    if n_days == 0 {
        return Err(Error::domain("n_days must be at least 1"));
    }
    config.validate()?;
    exec.try_map_indices(n_days, |d| simulate_day(d, config, base_seed))
}

/// Fraction of all simulated minutes (24 h days) with someone present.
pub fn presence_rate(traces: &[OccupancyTrace]) -> f64 {
    let occupied: usize = traces.iter().map(OccupancyTrace::occupied_minutes).sum();
    occupied as f64 / (traces.len() * MINUTES_PER_DAY) as f64
}

/// Writes traces as `day,minute,occ,window,vm`, one row per minute.
pub fn write_traces_csv(path: &Path, traces: &[OccupancyTrace]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "day,minute,occ,window,vm").map_err(io)?;
    for tr in traces {
        for t in 0..MINUTES_PER_DAY {
            writeln!(
                w,
                "{},{},{},{},{}",
                tr.day_index, t, tr.occ[t], tr.window[t], tr.vent_multiplier[t]
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Lengths of maximal runs of `state` in `seq`.
pub fn run_lengths(seq: &[u8], state: u8) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = 0;
    for &s in seq {
        if s == state {
            current += 1;
        } else if current > 0 {
            runs.push(current);
            current = 0;
        }
    }
    if current > 0 {
        runs.push(current);
    }
    runs
}
