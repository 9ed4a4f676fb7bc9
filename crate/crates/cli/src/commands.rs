use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use occupancy_core::calibration::{fit_decay, DecayFit};
use occupancy_core::co2_sim::{simulate_co2, write_series_csv, Co2Series};
use occupancy_core::dataset::{
    read_minute_series, read_sensor_csv, windows_by_day, write_minute_series, write_sensor_csv, LabeledMinuteSeries,
    WindowSample,
};
use occupancy_core::eval::{accuracy, f1, format_table, results_csv, run_protocol, Mode, ProtocolConfig, ProtocolReport};
use occupancy_core::exec::set_worker_count;
use occupancy_core::models::{
    load_weights, load_weights_for, predict, save_weights, train, Init, NetworkConfig, TrainConfig, TrainingReport,
    ValidationSplit,
};
use occupancy_core::occupancy_sim::write_traces_csv;
use occupancy_core::pipeline::{generate, sensor_log, PipelineConfig, SimulationSetup};
use occupancy_core::{Error, Execution};

use crate::args::{
    CalibrateArgs, Cli, Command, EvaluateArgs, Granularity, ModeArg, ModelArgs, Preset, PretrainArgs, Setup,
    SimulateArgs, SplitArg, DATA_DIR_ENV,
};
use crate::UsageError;

pub const TRACES_FILE: &str = "traces.csv";
pub const SERIES_FILE: &str = "co2.csv";
pub const MINUTES_FILE: &str = "minutes.csv";
pub const SENSOR_FILE: &str = "sensor.csv";
pub const STATS_FILE: &str = "stats.json";

/// Sensor logs start at 2020-01-06T00:00:00Z so days align with UTC dates.
const SENSOR_EPOCH_S: f64 = 1_578_268_800.0;

struct Env {
    config: PipelineConfig,
    exec: Execution,
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            PipelineConfig::from_json(&text).map_err(|e| e.context(format!("config {}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    let exec = match cli.jobs {
        Some(1) => Execution::Sequential,
        Some(n) => {
            set_worker_count(n as usize);
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let ctx = Env { config, exec };
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Pretrain(a) => pretrain(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
    }
}

/// Flag, then the environment variable, then the configuration.
fn data_dir(flag: Option<PathBuf>, config: &PipelineConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| config.data_dir.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn simulate(ctx: &Env, args: SimulateArgs) -> Result<()> {
    if args.days == 0 {
        bail!(UsageError("--days must be at least 1".into()));
    }
    let setup = match args.setup {
        Setup::Reference => ctx.config.simulation.clone(),
        Setup::PseudoReal => SimulationSetup::pseudo_real(),
    };
    let out = data_dir(args.out, &ctx.config);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let ds = generate(&setup, args.days, args.seed, ctx.exec)?;
    write_traces_csv(&out.join(TRACES_FILE), &ds.traces)?;
    write_minute_series(&out.join(MINUTES_FILE), &ds.minutes)?;

    let needs_full = args.granularity == Granularity::Second || args.sensor_step.is_some();
    let full = if needs_full {
        Some(simulate_co2(&ds.traces, &setup.room, setup.room.outdoor_co2)?)
    } else {
        None
    };
    let series = match (&full, args.granularity) {
        (Some(full), Granularity::Second) => full.clone(),
        _ => Co2Series::new(0.0, 60.0, ds.minutes.co2.clone())?,
    };
    write_series_csv(&out.join(SERIES_FILE), &series, &ds.traces)?;
    if let (Some(full), Some(step)) = (&full, args.sensor_step) {
        let (log, counts) = sensor_log(full, &ds.traces, step, args.sensor_noise, SENSOR_EPOCH_S, args.seed)?;
        write_sensor_csv(&out.join(SENSOR_FILE), &log, &counts)?;
    }
    let stats = ds.stats();
    write_json(&out.join(STATS_FILE), &stats)?;
    println!("{stats}");
    Ok(())
}

fn calibrate(ctx: &Env, args: CalibrateArgs) -> Result<()> {
    let volume = args.volume.unwrap_or(ctx.config.simulation.room.volume);
    let series = occupancy_core::dataset::read_any_series(&args.series)?;
    let fit: DecayFit = match fit_decay(&series, volume) {
        Ok(fit) => fit,
        Err(Error::NotConverged { iterations, best }) => {
            ensure_parent(&args.out)?;
            write_json(&args.out, &best)?;
            return Err(Error::NotConverged { iterations, best }.into());
        }
        Err(e) => return Err(e.context(format!("calibrating {}", args.series.display())).into()),
    };
    ensure_parent(&args.out)?;
    write_json(&args.out, &fit)?;
    println!(
        "lambda {:.6e} 1/s, infiltration {:.6} m3/s, c_out {:.2} ppm, c0 {:.2} ppm, mse {:.4}, {} iterations",
        fit.lambda, fit.infiltration_flow, fit.c_out, fit.c0, fit.mse, fit.iterations
    );
    Ok(())
}

/// Network config from --net, else --preset; `None` when neither is given.
fn network_config(args: &ModelArgs) -> Result<Option<NetworkConfig>> {
    let cfg = match (&args.net, args.preset) {
        (Some(path), _) => read_json(path)?,
        (None, Some(Preset::Default)) => NetworkConfig::default(),
        (None, Some(Preset::Reduced)) => NetworkConfig::reduced(),
        (None, Some(Preset::Tiny)) => NetworkConfig::tiny(),
        (None, None) => return Ok(None),
    };
    Ok(Some(cfg))
}

/// Training settings from --train or the pipeline config. `split` replaces
/// the configured validation split unless --validation is given.
fn train_config(args: &ModelArgs, config: &PipelineConfig, split: Option<ValidationSplit>) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &args.train {
        Some(path) => read_json(path)?,
        None => config.train.clone(),
    };
    cfg.validation_split = match args.validation {
        Some(SplitArg::Tail) => ValidationSplit::Tail,
        Some(SplitArg::Shuffled) => ValidationSplit::Shuffled,
        None => split.unwrap_or(cfg.validation_split),
    };
    if let Some(n) = args.max_epochs {
        cfg.max_epochs = n;
    }
    if let Some(n) = args.patience {
        cfg.early_stop_patience = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads labeled minutes from a sensor log, a minute CSV, or a directory
/// containing minutes.csv.
fn read_minutes(path: &Path) -> Result<LabeledMinuteSeries> {
    let file = if path.is_dir() { path.join(MINUTES_FILE) } else { path.to_path_buf() };
    let mut head = String::new();
    fs::File::open(&file)
        .and_then(|f| BufReader::new(f).read_line(&mut head))
        .map_err(|e| Error::Io {
            path: file.clone(),
            source: e,
        })?;
    if head.trim_start().starts_with("timestamp,") {
        let (series, counts) = read_sensor_csv(&file)?;
        Ok(LabeledMinuteSeries::from_sensor(&series, &counts)
            .map_err(|e| e.context(format!("labeling {}", file.display())))?)
    } else {
        Ok(read_minute_series(&file)?)
    }
}

#[derive(Debug, Serialize)]
struct HoldoutMetrics {
    days: usize,
    samples: usize,
    accuracy: f64,
    f1: f64,
}

#[derive(Debug, Serialize)]
struct PretrainReport {
    training_days: usize,
    training_samples: usize,
    stride: u64,
    training: TrainingReport,
    holdout: Option<HoldoutMetrics>,
}

fn pretrain(ctx: &Env, args: PretrainArgs) -> Result<()> {
    let dir = data_dir(args.data, &ctx.config);
    let minutes = read_minutes(&dir)?;
    let net = network_config(&args.model)?.unwrap_or_else(|| ctx.config.network.clone());
    net.validate()?;
    let mut tc = train_config(&args.model, &ctx.config, None)?;
    if let Some(seed) = args.seed {
        tc.seed = seed;
    }
    let n_days = minutes.n_days();
    if args.holdout_days >= n_days {
        bail!(UsageError(format!(
            "--holdout-days {} leaves no training days out of {n_days}",
            args.holdout_days
        )));
    }
    let train_days = n_days - args.holdout_days;
    let strided = windows_by_day(&minutes, net.input_length, args.stride as usize)?;
    let samples: Vec<WindowSample> = strided.into_iter().take(train_days).flatten().collect();
    let (weights, report) = train(&samples, &net, &tc, Init::Fresh, ctx.exec)?;
    ensure_parent(&args.out)?;
    save_weights(&args.out, &weights)?;

    let holdout = if args.holdout_days > 0 {
        let test: Vec<WindowSample> = windows_by_day(&minutes, net.input_length, 1)?
            .into_iter()
            .skip(train_days)
            .flatten()
            .collect();
        let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
        let pred = predict(&weights, &test, ctx.exec)?;
        Some(HoldoutMetrics {
            days: args.holdout_days,
            samples: test.len(),
            accuracy: accuracy(&pred, &labels)?,
            f1: f1(&pred, &labels, 1)?,
        })
    } else {
        None
    };
    println!(
        "trained on {train_days} days ({} windows): best epoch {} of {}, validation loss {:.5}",
        samples.len(),
        report.epochs_to_best,
        report.epochs_trained,
        report.best_val_loss
    );
    if let Some(h) = &holdout {
        println!("held-out {} days: accuracy {:.4}, F1 {:.4}", h.days, h.accuracy, h.f1);
    }
    let summary = PretrainReport {
        training_days: train_days,
        training_samples: samples.len(),
        stride: args.stride,
        training: report,
        holdout,
    };
    write_json(&with_suffix(&args.out, ".report.json"), &summary)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    days: usize,
    presence_rate: f64,
    reports: Vec<ProtocolReport>,
}

fn evaluate(ctx: &Env, args: EvaluateArgs) -> Result<()> {
    let minutes = read_minutes(&args.real)?;
    let n_days = minutes.n_days();
    let ks = args.k.clone().unwrap_or_else(|| ctx.config.protocol.k.clone());
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k >= n_days) {
        bail!(UsageError(format!("--k {bad} needs 1 <= k < {n_days} (days in the data)")));
    }
    let n_seeds = args.seeds.unwrap_or(ctx.config.protocol.seeds);
    if n_seeds == 0 {
        bail!(UsageError("--seeds must be at least 1".into()));
    }
    let requested = network_config(&args.model)?;
    let base = match (&args.base, &requested) {
        (Some(path), Some(net)) => Some(load_weights_for(path, net)?),
        (Some(path), None) => Some(load_weights(path)?),
        (None, _) => None,
    };
    let network = match (&base, requested) {
        (Some(b), _) => b.config.clone(),
        (None, Some(net)) => net,
        (None, None) => ctx.config.network.clone(),
    };
    network.validate()?;
    let tc = train_config(&args.model, &ctx.config, Some(ctx.config.protocol.validation_split))?;
    let modes: Vec<Mode> = match &args.modes {
        Some(m) => m
            .iter()
            .map(|m| match m {
                ModeArg::Transfer => Mode::Transfer,
                ModeArg::Cold => Mode::Cold,
                ModeArg::Logistic => Mode::Logistic,
            })
            .collect(),
        None => vec![Mode::Transfer, Mode::Cold, Mode::Logistic],
    };
    if base.is_none() && modes == [Mode::Transfer] {
        bail!(UsageError("transfer mode needs --base".into()));
    }
    let days = windows_by_day(&minutes, network.input_length, 1)?;

    let mut reports = Vec::new();
    for &k in &ks {
        let mut pc = ProtocolConfig::new(k, n_seeds, network.clone(), tc.clone());
        pc.modes = modes.clone();
        pc.wraparound = args.wraparound || ctx.config.protocol.wraparound;
        pc.folds = args.folds.clone();
        let report = run_protocol(&days, base.as_ref(), &pc, ctx.exec)?;
        if report.results.is_empty() {
            bail!(UsageError(format!("no folds selected for k = {k}")));
        }
        reports.push(report);
    }
    let table = format_table(&reports);
    ensure_parent(&args.out)?;
    write_json(
        &args.out,
        &EvaluationReport {
            days: n_days,
            presence_rate: minutes.presence_rate(),
            reports: reports.clone(),
        },
    )?;
    let txt = args.out.with_extension("txt");
    fs::write(&txt, &table).with_context(|| format!("writing {}", txt.display()))?;
    let csv = args.out.with_extension("csv");
    fs::write(&csv, results_csv(&reports)).with_context(|| format!("writing {}", csv.display()))?;
    print!("{table}");
    Ok(())
}
