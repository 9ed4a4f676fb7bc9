//! Metrics, the consecutive-day cross-validation protocol, and the
//! transfer / cold-start / logistic comparison report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::{fit_logistic, predict, predict_logistic, train, Init, NetworkConfig, NetworkWeights, TrainConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[u8], labels: &[u8], positive: u8) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::domain(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p == positive, y == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }
}

/// Fraction of correct predictions.
pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::domain("accuracy of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::domain("predictions and labels differ in length"));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// F1 score of `positive`; 0 when precision and recall are both 0.
pub fn f1(predictions: &[u8], labels: &[u8], positive: u8) -> Result<f64> {
    let c = Confusion::from_predictions(predictions, labels, positive)?;
    let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let recall = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub index: usize,
    pub train_days: Vec<usize>,
    pub test_days: Vec<usize>,
}

impl FoldSpec {
    pub fn k(&self) -> usize {
        self.train_days.len()
    }
}

/// Blocks of `k` consecutive training days; the rest are test days.
/// Without wraparound there are `n_days - k + 1` folds, with it `n_days`.
pub fn make_folds(n_days: usize, k: usize, wraparound: bool) -> Result<Vec<FoldSpec>> {
    if k == 0 || k >= n_days {
        return Err(Error::domain(format!("need 1 <= k < {n_days} training days, got k={k}")));
    }
    let n_folds = if wraparound { n_days } else { n_days - k + 1 };
    Ok((0..n_folds)
        .map(|start| {
            let train_days: Vec<usize> = (0..k).map(|i| (start + i) % n_days).collect();
            let test_days = (0..n_days).filter(|d| !train_days.contains(d)).collect();
            FoldSpec {
                index: start,
                train_days,
                test_days,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Transfer,
    Cold,
    Logistic,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Transfer => "Transfer Model",
            Mode::Cold => "Non-Transferred Model",
            Mode::Logistic => "Logistic Regression (LR)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub k: usize,
    pub fold: usize,
    pub seed: u64,
    pub mode: Mode,
    pub accuracy: f64,
    pub f1: f64,
    /// Not defined for the logistic baseline.
    pub epochs_to_best: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over all fold × seed runs.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub k: usize,
    pub runs: usize,
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    pub epochs_to_best: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub wraparound: bool,
    /// Restrict to these fold indices; all folds when `None`.
    pub folds: Option<Vec<usize>>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl ProtocolConfig {
    pub fn new(k: usize, n_seeds: usize, network: NetworkConfig, train: TrainConfig) -> Self {
        Self {
            k,
            seeds: (0..n_seeds as u64).collect(),
            modes: vec![Mode::Transfer, Mode::Cold, Mode::Logistic],
            wraparound: false,
            folds: None,
            network,
            train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub k: usize,
    pub folds: Vec<FoldSpec>,
    /// Ordered by (fold, seed, mode).
    pub results: Vec<RunResult>,
    pub summary: Vec<ModeSummary>,
}

impl ProtocolReport {
    pub fn summary_for(&self, mode: Mode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }
}

/// Mean and standard deviation per mode, pooled over folds and seeds.
pub fn summarize(k: usize, results: &[RunResult]) -> Vec<ModeSummary> {
    let mut modes: Vec<Mode> = results.iter().map(|r| r.mode).collect();
    modes.sort();
    modes.dedup();
    modes
        .into_iter()
        .filter_map(|mode| {
            let runs: Vec<&RunResult> = results.iter().filter(|r| r.mode == mode).collect();
            let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
            let f1s: Vec<f64> = runs.iter().map(|r| r.f1).collect();
            let epochs: Vec<f64> = runs.iter().filter_map(|r| r.epochs_to_best.map(|e| e as f64)).collect();
            Some(ModeSummary {
                mode,
                k,
                runs: runs.len(),
                accuracy: MeanStd::of(&acc)?,
                f1: MeanStd::of(&f1s)?,
                epochs_to_best: MeanStd::of(&epochs),
            })
        })
        .collect()
}

fn concat_days(days: &[Vec<WindowSample>], which: &[usize]) -> Vec<WindowSample> {
    which.iter().flat_map(|&d| days[d].iter().cloned()).collect()
}

/// One fold × seed × mode run: train on the fold's days, score on the rest.
pub fn run_single(
    days: &[Vec<WindowSample>],
    fold: &FoldSpec,
    seed: u64,
    mode: Mode,
    base: Option<&NetworkWeights>,
    network: &NetworkConfig,
    train_config: &TrainConfig,
) -> Result<RunResult> {
    let train_set = concat_days(days, &fold.train_days);
    let test_set = concat_days(days, &fold.test_days);
    let labels: Vec<u8> = test_set.iter().map(|s| s.label).collect();
    let (predictions, epochs_to_best) = match mode {
        Mode::Logistic => {
            let w = fit_logistic(&train_set)?;
            (test_set.iter().map(|s| predict_logistic(&w, s)).collect(), None)
        }
        Mode::Cold | Mode::Transfer => {
            let init = match (mode, base) {
                (Mode::Transfer, Some(b)) => Init::WarmStart(b.clone()),
                (Mode::Transfer, None) => return Err(Error::domain("transfer mode needs base weights")),
                _ => Init::Fresh,
            };
            let tc = TrainConfig {
                seed,
                ..train_config.clone()
            };
            let (w, report) = train(&train_set, network, &tc, init, Execution::Sequential)?;
            (predict(&w, &test_set, Execution::Sequential)?, Some(report.epochs_to_best))
        }
    };
    Ok(RunResult {
        k: fold.k(),
        fold: fold.index,
        seed,
        mode,
        accuracy: accuracy(&predictions, &labels)?,
        f1: f1(&predictions, &labels, 1)?,
        epochs_to_best,
    })
}

/// Runs every fold × seed × mode combination. Runs are independent and are
/// distributed by `exec`; results keep (fold, seed, mode) order.
pub fn run_protocol(
    days: &[Vec<WindowSample>],
    base: Option<&NetworkWeights>,
    config: &ProtocolConfig,
    exec: Execution,
) -> Result<ProtocolReport> {
    let mut folds = make_folds(days.len(), config.k, config.wraparound)?;
    if let Some(keep) = &config.folds {
        folds.retain(|f| keep.contains(&f.index));
    }
    let mut modes = config.modes.clone();
    if base.is_none() {
        modes.retain(|&m| m != Mode::Transfer);
    }
    modes.sort();
    modes.dedup();
    let mut tasks = Vec::new();
    for fold in &folds {
        for &seed in &config.seeds {
            for &mode in &modes {
                tasks.push((fold, seed, mode));
            }
        }
    }
    let results = exec.try_map_indices(tasks.len(), |i| {
        let (fold, seed, mode) = tasks[i];
        run_single(days, fold, seed, mode, base, &config.network, &config.train)
            .map_err(|e| e.context(format!("k={} fold {} seed {seed} mode {mode:?}", config.k, fold.index)))
    })?;
    Ok(ProtocolReport {
        k: config.k,
        summary: summarize(config.k, &results),
        folds,
        results,
    })
}

fn cell(m: Option<MeanStd>, digits: usize) -> String {
    match m {
        Some(m) => format!("{:.*} (±{:.*})", digits, m.mean, digits, m.std),
        None => "-".into(),
    }
}

/// Text table of mean (± std) per mode and metric, one column per k.
pub fn format_table(reports: &[ProtocolReport]) -> String {
    let mut out = String::new();
    let mut header = format!("{:<26} {:<10}", "", "Training");
    for r in reports {
        let days = if r.k == 1 { "1 Day".to_string() } else { format!("{} Days", r.k) };
        let _ = write!(header, " {:>18}", days);
    }
    out.push_str(&header);
    out.push('\n');
    for mode in [Mode::Transfer, Mode::Cold, Mode::Logistic] {
        if !reports.iter().any(|r| r.summary_for(mode).is_some()) {
            continue;
        }
        let metrics: [(&str, Box<dyn Fn(&ModeSummary) -> Option<MeanStd>>, usize); 3] = [
            ("Accuracy", Box::new(|s| Some(s.accuracy)), 3),
            ("F1 Score", Box::new(|s| Some(s.f1)), 3),
            ("Epochs", Box::new(|s| s.epochs_to_best), 1),
        ];
        for (i, (name, get, digits)) in metrics.iter().enumerate() {
            if mode == Mode::Logistic && *name == "Epochs" {
                continue;
            }
            let label = if i == 0 { mode.label() } else { "" };
            let mut line = format!("{label:<26} {name:<10}");
            for r in reports {
                let _ = write!(line, " {:>18}", cell(r.summary_for(mode).and_then(|s| get(s)), *digits));
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

/// One CSV row per run: `k,fold,seed,mode,accuracy,f1,epochs_to_best`.
pub fn results_csv(reports: &[ProtocolReport]) -> String {
    let mut out = String::from("k,fold,seed,mode,accuracy,f1,epochs_to_best\n");
    for r in reports.iter().flat_map(|r| &r.results) {
        let mode = match r.mode {
            Mode::Transfer => "transfer",
            Mode::Cold => "cold",
            Mode::Logistic => "logistic",
        };
        let epochs = r.epochs_to_best.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{mode},{},{},{epochs}", r.k, r.fold, r.seed, r.accuracy, r.f1);
    }
    out
}
