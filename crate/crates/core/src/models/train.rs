//! Mini-batch RMSprop training with chronological validation split and
//! early stopping on validation loss.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{NetworkConfig, TrainConfig, ValidationSplit};
use super::network::{input_matrix, loss_and_gradients_matrix, loss_matrix, NetworkWeights};
use super::params::Parameters;
use crate::dataset::{split, Normalization, WindowSample};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Starting point of a training run.
#[derive(Debug, Clone)]
pub enum Init {
    /// Glorot-uniform weights; normalization fitted on the training split.
    Fresh,
    /// Copy of a trained model, including its normalization statistics.
    WarmStart(NetworkWeights),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Epoch whose weights were returned; 0 means the initial weights.
    pub epochs_to_best: usize,
    pub best_val_loss: f64,
    pub epochs_trained: usize,
    /// Entry 0 is the evaluation before any update (train loss is NaN there).
    pub history: Vec<EpochStats>,
}

/// Per-parameter RMSprop: `v = rho v + (1 - rho) g^2`,
/// `w -= lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    learning_rate: f64,
    rho: f64,
    epsilon: f64,
    mean_square: Parameters,
}

impl RmsProp {
    pub fn new(cfg: &NetworkConfig, learning_rate: f64, rho: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            rho,
            epsilon,
            mean_square: Parameters::zeros(cfg),
        }
    }

    pub fn update(&mut self, params: &mut Parameters, grads: &Parameters) {
        let grads = grads.slices();
        for ((w, v), (_, _, g)) in params
            .slices_mut()
            .into_iter()
            .zip(self.mean_square.slices_mut())
            .zip(grads)
        {
            for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.rho * *v + (1.0 - self.rho) * g * g;
                *w -= self.learning_rate * g / (v.sqrt() + self.epsilon);
            }
        }
    }
}

fn labels_of(samples: &[WindowSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label as usize).collect()
}

fn gather_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(ndarray::Axis(0), rows)
}

/// Trains the detector. The final `validation_fraction` of `samples` (in the
/// given order, or after a shuffle per `validation_split`) is held out; the
/// weights with the lowest validation loss are returned.
pub fn train(
    samples: &[WindowSample],
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    init: Init,
    exec: Execution,
) -> Result<(NetworkWeights, TrainingReport)> {
    train_config.validate()?;
    net_config.validate()?;
    if samples.len() < 2 * train_config.batch_size {
        return Err(Error::domain(format!(
            "training needs at least {} samples, got {}",
            2 * train_config.batch_size,
            samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let (train_set, val_set) = match train_config.validation_split {
        ValidationSplit::Tail => split(samples, train_config.validation_fraction)?,
        ValidationSplit::Shuffled => {
            let mut shuffled = samples.to_vec();
            shuffled.shuffle(&mut rng);
            split(&shuffled, train_config.validation_fraction)?
        }
    };
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::domain("validation split left an empty partition"));
    }
    let mut weights = match init {
        Init::Fresh => NetworkWeights::new(
            net_config.clone(),
            Normalization::fit(&train_set),
            Parameters::init(net_config, &mut rng),
        )?,
        Init::WarmStart(w) => {
            if &w.config != net_config {
                return Err(Error::Structural(
                    "warm-start weights were built for a different network config".into(),
                ));
            }
            w
        }
    };

    let x_train = input_matrix(net_config, &weights.normalization, &train_set)?;
    let y_train = labels_of(&train_set);
    let x_val = input_matrix(net_config, &weights.normalization, &val_set)?;
    let y_val = labels_of(&val_set);

    let initial_val = loss_matrix(&weights, x_val.view(), &y_val, exec)?;
    let mut history = vec![EpochStats {
        epoch: 0,
        train_loss: f64::NAN,
        val_loss: initial_val,
    }];
    let mut best = (0usize, initial_val, weights.params.clone());
    let mut optimizer = RmsProp::new(net_config, train_config.learning_rate, train_config.rho, train_config.epsilon);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs_trained = 0;

    for epoch in 1..=train_config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(train_config.batch_size).enumerate() {
            let xb = gather_rows(&x_train, batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y_train[i]).collect();
            let (loss, grads) = loss_and_gradients_matrix(&weights, xb.view(), &yb, Some(&mut rng))
                .map_err(|e| e.context(format!("epoch {epoch}, batch {b}")))?;
            if loss > DIVERGENCE_LOSS {
                return Err(Error::Numerical(format!("training diverged at epoch {epoch}, batch {b}: loss {loss}")));
            }
            optimizer.update(&mut weights.params, &grads);
            loss_sum += loss * batch.len() as f64;
        }
        let val_loss = loss_matrix(&weights, x_val.view(), &y_val, exec)?;
        if !val_loss.is_finite() || val_loss > DIVERGENCE_LOSS {
            return Err(Error::Numerical(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        epochs_trained = epoch;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, weights.params.clone());
        } else if epoch - best.0 >= train_config.early_stop_patience {
            break;
        }
    }

    let (epochs_to_best, best_val_loss, params) = best;
    weights.params = params;
    Ok((
        weights,
        TrainingReport {
            epochs_to_best,
            best_val_loss,
            epochs_trained,
            history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::network::{forward, predict};

    fn separable(n: usize, len: usize) -> Vec<WindowSample> {
        (0..n)
            .map(|i| {
                let high = i % 2 == 0;
                let base = if high { 1200.0 } else { 400.0 };
                WindowSample {
                    inputs: (0..len).map(|k| base + ((i * 7 + k * 13) % 50) as f64).collect(),
                    label: u8::from(high),
                }
            })
            .collect()
    }

    #[test]
    fn rmsprop_first_step() {
        let cfg = NetworkConfig::tiny();
        let mut p = Parameters::zeros(&cfg);
        let mut g = Parameters::zeros(&cfg);
        g.output.bias[0] = 2.0;
        g.output.bias[1] = -0.5;
        let mut opt = RmsProp::new(&cfg, 0.001, 0.9, 1e-7);
        opt.update(&mut p, &g);
        // v = 0.1 g^2, step = lr * g / (sqrt(0.1) |g| + eps)
        let expected = |g: f64| -0.001 * g / ((0.1f64).sqrt() * g.abs() + 1e-7);
        assert!((p.output.bias[0] - expected(2.0)).abs() < 1e-15);
        assert!((p.output.bias[1] - expected(-0.5)).abs() < 1e-15);
        assert_eq!(p.output.weight.sum(), 0.0);
    }

    #[test]
    fn learns_separable_windows() {
        let cfg = NetworkConfig::tiny();
        let data = separable(400, 8);
        let tc = TrainConfig {
            max_epochs: 50,
            seed: 1,
            ..TrainConfig::default()
        };
        let (w, report) = train(&data, &cfg, &tc, Init::Fresh, Execution::Sequential).unwrap();
        assert!(report.epochs_trained <= 50);
        let preds = predict(&w, &data, Execution::Sequential).unwrap();
        let correct = preds.iter().zip(&data).filter(|(p, s)| **p == s.label).count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn warm_start_without_epochs_returns_base() {
        let cfg = NetworkConfig::tiny();
        let data = separable(200, 8);
        let tc = TrainConfig {
            max_epochs: 3,
            seed: 2,
            ..TrainConfig::default()
        };
        let (base, _) = train(&data, &cfg, &tc, Init::Fresh, Execution::Sequential).unwrap();
        let zero = TrainConfig {
            max_epochs: 0,
            ..tc.clone()
        };
        let (again, report) = train(&data, &cfg, &zero, Init::WarmStart(base.clone()), Execution::Sequential).unwrap();
        assert_eq!(report.epochs_to_best, 0);
        assert_eq!(again, base);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            forward(&again, &data, false, &mut rng).unwrap(),
            forward(&base, &data, false, &mut rng).unwrap()
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = NetworkConfig::tiny();
        let data = separable(200, 8);
        let tc = TrainConfig {
            max_epochs: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg, &tc, Init::Fresh, Execution::Sequential).unwrap();
        let b = train(&data, &cfg, &tc, Init::Fresh, Execution::Parallel).unwrap();
        assert_eq!(a.0, b.0);
        // Epoch 0 carries a NaN train loss, so compare the debug rendering.
        assert_eq!(format!("{:?}", a.1), format!("{:?}", b.1));
    }

    #[test]
    fn best_epoch_has_minimum_validation_loss() {
        let cfg = NetworkConfig::tiny();
        let data = separable(300, 8);
        let tc = TrainConfig {
            max_epochs: 30,
            early_stop_patience: 5,
            seed: 4,
            ..TrainConfig::default()
        };
        let (_, r) = train(&data, &cfg, &tc, Init::Fresh, Execution::Sequential).unwrap();
        let min = r.history.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_val_loss, min);
        assert_eq!(r.history[r.epochs_to_best].val_loss, min);
        assert!(r.epochs_trained - r.epochs_to_best <= 5);
    }

    #[test]
    fn shuffled_split_validates_on_both_classes() {
        let cfg = NetworkConfig::tiny();
        // Chronological tail is all-absent.
        let mut data = separable(300, 8);
        data.sort_by_key(|s| std::cmp::Reverse(s.label));
        let tc = TrainConfig {
            max_epochs: 0,
            seed: 5,
            validation_split: ValidationSplit::Shuffled,
            ..TrainConfig::default()
        };
        let (w, _) = train(&data, &cfg, &tc, Init::Fresh, Execution::Sequential).unwrap();
        // Normalization comes from the training part, which now mixes both levels.
        assert!(w.normalization.mean > 500.0 && w.normalization.mean < 1100.0);
        let tail = TrainConfig {
            validation_split: ValidationSplit::Tail,
            ..tc
        };
        let (w, _) = train(&data, &cfg, &tail, Init::Fresh, Execution::Sequential).unwrap();
        assert!(w.normalization.mean > 750.0);
    }

    #[test]
    fn too_few_samples() {
        let cfg = NetworkConfig::tiny();
        let err = train(&separable(139, 8), &cfg, &TrainConfig::default(), Init::Fresh, Execution::Sequential);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn huge_learning_rate_diverges_or_survives_finitely() {
        let cfg = NetworkConfig::tiny();
        let tc = TrainConfig {
            learning_rate: 1e6,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        match train(&separable(200, 8), &cfg, &tc, Init::Fresh, Execution::Sequential) {
            Ok((w, _)) => assert!(w.params.is_finite()),
            Err(e) => assert!(matches!(e.root(), Error::Numerical(_)), "{e}"),
        }
    }
}
