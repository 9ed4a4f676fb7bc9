//! Logistic-regression baseline on the normalized window values.

use serde::{Deserialize, Serialize};

use crate::dataset::{Normalization, WindowSample};
use crate::error::{Error, Result};

pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LRWeights {
    pub normalization: Normalization,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
}

impl LRWeights {
    pub fn zeros(inputs: usize) -> Self {
        Self {
            normalization: Normalization::IDENTITY,
            coefficients: vec![0.0; inputs],
            intercept: 0.0,
            iterations: 0,
        }
    }

    pub fn probability(&self, sample: &WindowSample) -> f64 {
        let z = self.intercept
            + self
                .coefficients
                .iter()
                .zip(&sample.inputs)
                .map(|(w, &v)| w * self.normalization.apply(v))
                .sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Problem {
    /// Mean negative log-likelihood; `theta` = coefficients then intercept.
    fn loss(&self, theta: &[f64]) -> f64 {
        let d = theta.len() - 1;
        self.x
            .iter()
            .zip(&self.y)
            .map(|(x, &y)| {
                let z = theta[d] + x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
                softplus(z) - y * z
            })
            .sum::<f64>()
            / self.y.len() as f64
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d = theta.len() - 1;
        let mut g = vec![0.0; d + 1];
        for (x, &y) in self.x.iter().zip(&self.y) {
            let z = theta[d] + x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            let r = 1.0 / (1.0 + (-z).exp()) - y;
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += r * xi;
            }
            g[d] += r;
        }
        let n = self.y.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }
}

/// Full-batch gradient descent with Armijo backtracking, until the gradient
/// norm falls below 1e-6 or 10⁴ iterations.
pub fn fit_logistic(samples: &[WindowSample]) -> Result<LRWeights> {
    let positives = samples.iter().filter(|s| s.label == 1).count();
    if samples.is_empty() || positives == 0 || positives == samples.len() {
        return Err(Error::Degenerate(
            "logistic regression needs samples of both classes".into(),
        ));
    }
    let d = samples[0].inputs.len();
    if samples.iter().any(|s| s.inputs.len() != d) {
        return Err(Error::Structural("samples differ in window length".into()));
    }
    let normalization = Normalization::fit(samples);
    let problem = Problem {
        x: samples
            .iter()
            .map(|s| s.inputs.iter().map(|&v| normalization.apply(v)).collect())
            .collect(),
        y: samples.iter().map(|s| s.label as f64).collect(),
    };
    let mut theta = vec![0.0; d + 1];
    let mut loss = problem.loss(&theta);
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let g = problem.gradient(&theta);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2.sqrt() < GRADIENT_TOLERANCE {
            break;
        }
        iterations += 1;
        step = (step * 2.0).min(1e6);
        loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let cand_loss = problem.loss(&cand);
            if cand_loss <= loss - 0.5 * step * g2 {
                theta = cand;
                loss = cand_loss;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Ok(finish(theta, normalization, iterations));
            }
        }
    }
    Ok(finish(theta, normalization, iterations))
}

fn finish(mut theta: Vec<f64>, normalization: Normalization, iterations: usize) -> LRWeights {
    let intercept = theta.pop().unwrap_or(0.0);
    LRWeights {
        normalization,
        coefficients: theta,
        intercept,
        iterations,
    }
}

/// 1 when the predicted probability is at least 0.5.
pub fn predict_logistic(weights: &LRWeights, sample: &WindowSample) -> u8 {
    u8::from(weights.probability(sample) >= 0.5)
}
