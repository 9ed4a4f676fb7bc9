//! Tracer-gas calibration: fits the closed-window, unoccupied solution of
//! the mass balance to a measured CO₂ decay.

use serde::{Deserialize, Serialize};

use crate::co2_sim::Co2Series;
use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 100;
pub const MSE_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Air exchange rate, 1/s.
    pub lambda: f64,
    pub c_out: f64,
    pub c0: f64,
    /// `lambda * volume`, m³/s.
    pub infiltration_flow: f64,
    pub mse: f64,
    pub iterations: usize,
}

/// `c_out + (c0 - c_out) * exp(-lambda * t)`.
pub fn decay_model(t: f64, lambda: f64, c_out: f64, c0: f64) -> f64 {
    c_out + (c0 - c_out) * (-lambda * t).exp()
}

/// Mean squared error of the decay model against `(t, y)` samples.
pub fn decay_mse(times: &[f64], values: &[f64], lambda: f64, c_out: f64, c0: f64) -> f64 {
    let sse: f64 = times
        .iter()
        .zip(values)
        .map(|(&t, &y)| {
            let r = decay_model(t, lambda, c_out, c0) - y;
            r * r
        })
        .sum();
    sse / values.len() as f64
}

/// Solves a 3×3 system with partial pivoting; `None` if singular.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Initial guess: `c_out` just below the minimum, `c0` at the first sample,
/// `lambda` from a log-linear regression of `ln(c - c_out)` on time.
fn initial_guess(times: &[f64], values: &[f64]) -> [f64; 3] {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c_out = min - (0.01 * (max - min)).max(1e-3);
    let (mut st, mut sy, mut stt, mut sty, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &y) in times.iter().zip(values) {
        let ly = (y - c_out).ln();
        st += t;
        sy += ly;
        stt += t * t;
        sty += t * ly;
        n += 1.0;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    let span = times.last().copied().unwrap_or(1.0).max(1.0);
    let lambda = if slope.is_finite() && slope < 0.0 { -slope } else { 1.0 / span };
    [lambda, c_out, values[0]]
}

/// Levenberg-Marquardt fit of `(lambda, c_out, c0)` minimizing the mean
/// squared error against `series`. Only relative time matters.
pub fn fit_decay(series: &Co2Series, volume: f64) -> Result<DecayFit> {
    let values = &series.values;
    if values.len() < MIN_SAMPLES {
        return Err(Error::domain(format!(
            "decay fit needs at least {MIN_SAMPLES} samples, got {}",
            values.len()
        )));
    }
    if !(volume > 0.0) {
        return Err(Error::domain("room volume must be positive"));
    }
    let q = values.len() / 4;
    let first = mean(&values[..q]);
    let last = mean(&values[values.len() - q..]);
    if last >= first {
        return Err(Error::NoDecay(format!(
            "last-quartile mean {last:.2} ppm is not below first-quartile mean {first:.2} ppm"
        )));
    }
    let times: Vec<f64> = (0..values.len()).map(|i| i as f64 * series.step_s).collect();

    let mut p = initial_guess(&times, values);
    let mut mse = decay_mse(&times, values, p[0], p[1], p[2]);
    let mut mu = 1e-3;
    let fit = |p: [f64; 3], mse: f64, iterations: usize| DecayFit {
        lambda: p[0],
        c_out: p[1],
        c0: p[2],
        infiltration_flow: p[0] * volume,
        mse,
        iterations,
    };

    for iteration in 1..=MAX_ITERATIONS {
        // Normal equations J^T J and J^T r.
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&t, &y) in times.iter().zip(values.iter()) {
            let e = (-p[0] * t).exp();
            let r = p[1] + (p[2] - p[1]) * e - y;
            let j = [-(p[2] - p[1]) * t * e, 1.0 - e, e];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }

        loop {
            let mut damped = jtj;
            for (k, row) in damped.iter_mut().enumerate() {
                row[k] += mu * jtj[k][k].max(1e-300);
            }
            let step = solve3(damped, [-jtr[0], -jtr[1], -jtr[2]]);
            if let Some(d) = step {
                let cand = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
                if cand[0] > 0.0 {
                    let cand_mse = decay_mse(&times, values, cand[0], cand[1], cand[2]);
                    if cand_mse <= mse {
                        let change = mse - cand_mse;
                        p = cand;
                        mse = cand_mse;
                        mu = (mu / 10.0).max(1e-12);
                        if change < MSE_TOLERANCE {
                            return finish(fit(p, mse, iteration));
                        }
                        break;
                    }
                }
            }
            mu *= 10.0;
            if mu > 1e16 {
                // No descent direction left at this precision.
                return finish(fit(p, mse, iteration));
            }
        }
    }
    Err(Error::NotConverged {
        iterations: MAX_ITERATIONS,
        best: Box::new(fit(p, mse, MAX_ITERATIONS)),
    })
}

fn finish(fit: DecayFit) -> Result<DecayFit> {
    if fit.c0 <= fit.c_out || fit.c_out <= 0.0 {
        return Err(Error::NoDecay(format!(
            "fitted levels are not a decay (c0 {:.2}, c_out {:.2})",
            fit.c0, fit.c_out
        )));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const LAMBDA: f64 = 0.0046 / 77.5;

    fn synthetic(lambda: f64, c_out: f64, c0: f64, n: usize, step: f64) -> Co2Series {
        let values = (0..n).map(|i| decay_model(i as f64 * step, lambda, c_out, c0)).collect();
        Co2Series::new(0.0, step, values).unwrap()
    }

    #[test]
    fn model_examples() {
        assert_eq!(decay_model(0.0, LAMBDA, 360.0, 1000.0), 1000.0);
        assert_abs_diff_eq!(decay_model(1e9, LAMBDA, 360.0, 1000.0), 360.0, epsilon = 1e-9);
        assert_abs_diff_eq!(decay_model(3600.0, 5.935e-5, 360.0, 1000.0), 877.0, epsilon = 0.5);
    }

    #[test]
    fn noiseless_round_trip() {
        let s = synthetic(LAMBDA, 360.0, 1200.0, 8 * 60 + 1, 60.0);
        let f = fit_decay(&s, 77.5).unwrap();
        assert!((f.lambda / LAMBDA - 1.0).abs() < 0.01, "{f:?}");
        assert!((f.c_out - 360.0).abs() < 2.0, "{f:?}");
        assert!(f.mse < 1e-6, "{f:?}");
        assert_abs_diff_eq!(f.infiltration_flow, f.lambda * 77.5);
    }

    #[test]
    fn noisy_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noise = Normal::new(0.0, 5.0).unwrap();
        for _ in 0..20 {
            let mut s = synthetic(LAMBDA, 360.0, 1200.0, 10 * 60, 60.0);
            s.values.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            let f = fit_decay(&s, 77.5).unwrap();
            assert!((f.lambda / LAMBDA - 1.0).abs() < 0.05, "{f:?}");
            assert!((f.c_out - 360.0).abs() < 5.0, "{f:?}");
        }
    }

    #[test]
    fn identifiable_across_lambda_range() {
        for lambda in [1e-5f64, 3e-5, 1e-4, 3e-4, 1e-3] {
            // cover roughly three time constants
            let step = (3.0 / lambda / 400.0).max(1.0);
            let s = synthetic(lambda, 400.0, 1500.0, 400, step);
            let f = fit_decay(&s, 50.0).unwrap();
            assert!((f.lambda / lambda - 1.0).abs() < 0.01, "lambda {lambda}: {f:?}");
            assert!((f.c_out - 400.0).abs() < 2.0, "lambda {lambda}: {f:?}");
        }
    }

    #[test]
    fn constant_series_has_no_decay() {
        let s = Co2Series::new(0.0, 60.0, vec![360.0; 200]).unwrap();
        assert!(matches!(fit_decay(&s, 77.5), Err(Error::NoDecay(_))));
    }

    #[test]
    fn too_short_series_is_rejected() {
        let s = synthetic(LAMBDA, 360.0, 1200.0, 50, 60.0);
        assert!(matches!(fit_decay(&s, 77.5), Err(Error::Domain(_))));
    }

    #[test]
    fn start_time_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let mut s = synthetic(LAMBDA, 360.0, 1100.0, 300, 60.0);
        s.values.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        let a = fit_decay(&s, 77.5).unwrap();
        s.start_s = 1.6e9;
        let b = fit_decay(&s, 77.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_is_a_local_minimum_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let mut s = synthetic(LAMBDA, 360.0, 1200.0, 300, 60.0);
        s.values.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        let f = fit_decay(&s, 77.5).unwrap();
        let times: Vec<f64> = (0..s.len()).map(|i| i as f64 * s.step_s).collect();
        let axis = |v: f64| (0..20).map(move |i| v * (0.5 + i as f64 / 19.0));
        for l in axis(f.lambda) {
            for co in axis(f.c_out) {
                for c0 in axis(f.c0) {
                    assert!(decay_mse(&times, &s.values, l, co, c0) >= f.mse);
                }
            }
        }
    }

    #[test]
    fn solve3_matches_known_solution() {
        let a = [[2.0, 1.0, -1.0], [-3.0, -1.0, 2.0], [-2.0, 1.0, 2.0]];
        let x = solve3(a, [8.0, -11.0, -3.0]).unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[2], -1.0, epsilon = 1e-12);
        assert!(solve3([[0.0; 3]; 3], [1.0; 3]).is_none());
    }
}
