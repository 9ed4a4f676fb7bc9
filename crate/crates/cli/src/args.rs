use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable that overrides the data directory.
pub const DATA_DIR_ENV: &str = "OCCUPANCY_DATA_DIR";

/// Occupancy detection from CO2 readings: simulate a room, calibrate its
/// air exchange, pretrain a detector on synthetic days and evaluate transfer
/// to measured data.
#[derive(Debug, Parser)]
#[command(name = "occupancy", version)]
pub struct Cli {
    /// Pipeline configuration (JSON). Missing fields take reference
    /// defaults; command-line flags take precedence over the file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Maximum number of worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate occupant behavior and room CO2; write traces, series and
    /// labeled minutes, and print dataset statistics.
    Simulate(SimulateArgs),
    /// Fit the closed-room decay curve to an unoccupied CO2 series.
    Calibrate(CalibrateArgs),
    /// Train a base detector on a simulated dataset.
    Pretrain(PretrainArgs),
    /// Run the cross-validation protocol (transfer, cold start, logistic
    /// regression) on measured data.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Granularity {
    #[value(name = "1s")]
    Second,
    #[value(name = "1min")]
    Minute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Setup {
    /// Room and occupant parameters from the configuration.
    Reference,
    /// Perturbed room: 1.5x infiltration, ventilation multiplier in [5, 60],
    /// sojourn bounds stretched by 20%.
    PseudoReal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    Reduced,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Final fraction in chronological order.
    Tail,
    /// Final fraction after a seeded shuffle.
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum ModeArg {
    Transfer,
    Cold,
    Logistic,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of working days to simulate.
    #[arg(long, value_name = "N")]
    pub days: usize,

    /// Output directory [env: OCCUPANCY_DATA_DIR; default: data dir of the
    /// configuration, else ./data].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Base random seed; day d uses seed ^ d.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Time step of the written CO2 series (labels are always per minute).
    #[arg(long, value_enum, default_value = "1min")]
    pub granularity: Granularity,

    /// Which room to simulate.
    #[arg(long, value_enum, default_value = "reference")]
    pub setup: Setup,

    /// Also write a sensor-style log (timestamp,co2_ppm,occupant_count)
    /// sampled every SECONDS seconds.
    #[arg(long, value_name = "SECONDS")]
    pub sensor_step: Option<usize>,

    /// Gaussian noise (ppm) added to the sensor log.
    #[arg(long, default_value_t = 0.0, requires = "sensor_step")]
    pub sensor_noise: f64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CO2 series CSV (simulator series or sensor log) covering an
    /// unoccupied, closed-window period.
    #[arg(long, value_name = "FILE")]
    pub series: PathBuf,

    /// Room volume in m³ [default: from the configuration, 77.5].
    #[arg(long, value_name = "M3")]
    pub volume: Option<f64>,

    /// Output file for the fit (JSON).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Network and training overrides shared by pretrain and evaluate.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Network configuration (JSON). Overrides --preset.
    #[arg(long, value_name = "FILE")]
    pub net: Option<PathBuf>,

    /// Built-in network size, used when --net is absent.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,

    /// Training configuration (JSON).
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,

    /// Cap on training epochs.
    #[arg(long, value_name = "N")]
    pub max_epochs: Option<usize>,

    /// Early-stopping patience in epochs.
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,

    /// Validation split of each training run [default: tail for pretrain,
    /// shuffled for evaluate].
    #[arg(long, value_enum)]
    pub validation: Option<SplitArg>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Dataset directory written by `simulate` (reads minutes.csv)
    /// [env: OCCUPANCY_DATA_DIR; default: data dir of the configuration].
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Stride between consecutive training windows.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: u64,

    /// Keep the last N days out of training and report base-model metrics
    /// on them.
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub holdout_days: usize,

    /// Output weights file; the training report goes next to it as
    /// <out>.report.json.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Measured data: a sensor log, a labeled minute CSV, or a directory
    /// holding minutes.csv.
    #[arg(long, value_name = "PATH")]
    pub real: PathBuf,

    /// Base weights for transfer mode. Without them only cold start and
    /// logistic regression run.
    #[arg(long, value_name = "FILE")]
    pub base: Option<PathBuf>,

    /// Training-day counts, comma separated [default: 1,2,3,4].
    #[arg(long, value_delimiter = ',', value_name = "K,...")]
    pub k: Option<Vec<usize>>,

    /// Number of seeds per fold (seeds 0..N).
    #[arg(long, value_name = "N")]
    pub seeds: Option<usize>,

    /// Modes to run, comma separated [default: all].
    #[arg(long, value_enum, value_delimiter = ',')]
    pub modes: Option<Vec<ModeArg>>,

    /// Restrict to these fold indices, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "I,...")]
    pub folds: Option<Vec<usize>>,

    /// Let training blocks wrap around the last day (n folds per k instead
    /// of n - k + 1).
    #[arg(long)]
    pub wraparound: bool,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Report file (JSON); a text table (.txt) and per-run CSV (.csv) are
    /// written next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}
