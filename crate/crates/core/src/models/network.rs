//! Forward and reverse-mode passes of the detector, batched along rows.
//!
//! Pipeline: 1-D valid convolution + ReLU → max-pool (floor) → stacked
//! bidirectional LSTMs (the last one reduced to its two final states) →
//! [dropout → dense + ReLU]* → dense → softmax.
//!
//! Sequences are stored time-major as `(T * B) × width` matrices, so row
//! `t * B + b` is sample `b` at time `t`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::config::NetworkConfig;
use super::params::{BiLstm, Dense, LstmCell, Parameters};
use crate::dataset::{Normalization, WindowSample};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Everything needed to run the detector: shapes, input statistics and tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub config: NetworkConfig,
    pub normalization: Normalization,
    pub params: Parameters,
}

impl NetworkWeights {
    pub fn new(config: NetworkConfig, normalization: Normalization, params: Parameters) -> Result<Self> {
        config.validate()?;
        let expected = Parameters::zeros(&config);
        for ((name, want, _), (_, got, _)) in expected.slices().iter().zip(params.slices().iter()) {
            if want != got {
                return Err(Error::Structural(format!("tensor {name} has shape {got:?}, expected {want:?}")));
            }
        }
        if expected.slices().len() != params.slices().len() {
            return Err(Error::Structural("tensor count does not match config".into()));
        }
        Ok(Self {
            config,
            normalization,
            params,
        })
    }

    pub fn zeros(config: &NetworkConfig) -> Self {
        Self {
            config: config.clone(),
            normalization: Normalization::IDENTITY,
            params: Parameters::zeros(config),
        }
    }
}

/// Stacks normalized sample inputs into a `B × (length * channels)` matrix.
pub fn input_matrix(cfg: &NetworkConfig, norm: &Normalization, samples: &[WindowSample]) -> Result<Array2<f64>> {
    let width = cfg.input_length * cfg.input_channels;
    let mut x = Array2::zeros((samples.len(), width));
    for (i, s) in samples.iter().enumerate() {
        if s.inputs.len() != width {
            return Err(Error::Structural(format!(
                "sample {i} has {} inputs, network expects {width}",
                s.inputs.len()
            )));
        }
        for (dst, &v) in x.row_mut(i).iter_mut().zip(&s.inputs) {
            *dst = norm.apply(v);
        }
    }
    Ok(x)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_bias(m: &mut Array2<f64>, b: &Array1<f64>) {
    m.rows_mut().into_iter().for_each(|mut r| r += b);
}

fn relu_inplace(m: &mut Array2<f64>) {
    m.mapv_inplace(|v| v.max(0.0));
}

/// Rows `t*B..(t+1)*B` of a time-major matrix.
fn step_rows(m: &Array2<f64>, t: usize, batch: usize) -> ArrayView2<'_, f64> {
    m.slice(s![t * batch..(t + 1) * batch, ..])
}

struct ConvCache {
    patches: Array2<f64>,
    act: Array2<f64>,
    /// For each pooled entry `(t2 * B + b) * F + f`, the row in `act` that won.
    argmax: Vec<usize>,
}

fn conv_forward(cfg: &NetworkConfig, conv: &Dense, x: ArrayView2<f64>) -> (Array2<f64>, ConvCache) {
    let batch = x.nrows();
    let (k, c, f) = (cfg.conv_kernel, cfg.input_channels, cfg.conv_filters);
    let l1 = cfg.conv_output_length();
    let l2 = cfg.pooled_length();
    let mut patches = Array2::zeros((l1 * batch, k * c));
    for t in 0..l1 {
        patches
            .slice_mut(s![t * batch..(t + 1) * batch, ..])
            .assign(&x.slice(s![.., t * c..(t + k) * c]));
    }
    let mut act = patches.dot(&conv.weight);
    add_bias(&mut act, &conv.bias);
    relu_inplace(&mut act);

    let p = cfg.pool_factor;
    let mut pooled = Array2::zeros((l2 * batch, f));
    let mut argmax = vec![0; l2 * batch * f];
    for t2 in 0..l2 {
        for b in 0..batch {
            for ch in 0..f {
                let mut best_row = (t2 * p) * batch + b;
                let mut best = act[[best_row, ch]];
                for j in 1..p {
                    let row = (t2 * p + j) * batch + b;
                    if act[[row, ch]] > best {
                        best = act[[row, ch]];
                        best_row = row;
                    }
                }
                pooled[[t2 * batch + b, ch]] = best;
                argmax[(t2 * batch + b) * f + ch] = best_row;
            }
        }
    }
    (pooled, ConvCache { patches, act, argmax })
}

fn conv_backward(cache: &ConvCache, d_pooled: &Array2<f64>, grad: &mut Dense) {
    let f = d_pooled.ncols();
    let mut d_act = Array2::zeros(cache.act.raw_dim());
    for (idx, &row) in cache.argmax.iter().enumerate() {
        let (pr, ch) = (idx / f, idx % f);
        if cache.act[[row, ch]] > 0.0 {
            d_act[[row, ch]] += d_pooled[[pr, ch]];
        }
    }
    grad.weight += &cache.patches.t().dot(&d_act);
    grad.bias += &d_act.sum_axis(Axis(0));
}

/// Activations of one LSTM direction, indexed by processing step.
struct DirCache {
    /// Activated gates `[i, f, g, o]`, each `B × 4H`.
    gates: Vec<Array2<f64>>,
    cell: Vec<Array2<f64>>,
    tanh_cell: Vec<Array2<f64>>,
    hidden: Vec<Array2<f64>>,
}

fn time_of(step: usize, len: usize, reverse: bool) -> usize {
    if reverse {
        len - 1 - step
    } else {
        step
    }
}

fn lstm_forward(cell: &LstmCell, xs: &Array2<f64>, len: usize, batch: usize, reverse: bool) -> DirCache {
    let h = cell.units();
    let mut xw = xs.dot(&cell.input);
    add_bias(&mut xw, &cell.bias);
    let mut cache = DirCache {
        gates: Vec::with_capacity(len),
        cell: Vec::with_capacity(len),
        tanh_cell: Vec::with_capacity(len),
        hidden: Vec::with_capacity(len),
    };
    for step in 0..len {
        let t = time_of(step, len, reverse);
        let mut g = step_rows(&xw, t, batch).to_owned();
        if step > 0 {
            g += &cache.hidden[step - 1].dot(&cell.recurrent);
        }
        for mut row in g.rows_mut() {
            let row = row.as_slice_mut().expect("contiguous row");
            for (j, v) in row.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&j) { v.tanh() } else { sigmoid(*v) };
            }
        }
        let mut c = Array2::zeros((batch, h));
        Zip::from(&mut c)
            .and(g.slice(s![.., 0..h]))
            .and(g.slice(s![.., 2 * h..3 * h]))
            .for_each(|c, &i, &gg| *c = i * gg);
        if step > 0 {
            Zip::from(&mut c)
                .and(g.slice(s![.., h..2 * h]))
                .and(&cache.cell[step - 1])
                .for_each(|c, &f, &cp| *c += f * cp);
        }
        let tc = c.mapv(f64::tanh);
        let mut hid = Array2::zeros((batch, h));
        Zip::from(&mut hid)
            .and(g.slice(s![.., 3 * h..4 * h]))
            .and(&tc)
            .for_each(|hv, &o, &t| *hv = o * t);
        cache.gates.push(g);
        cache.cell.push(c);
        cache.tanh_cell.push(tc);
        cache.hidden.push(hid);
    }
    cache
}

/// Backpropagates through one direction. `d_hidden` holds the gradient
/// reaching each processing step's hidden state from outside the cell.
/// Accumulates parameter gradients into `grad` and returns the input
/// gradient in time-major order.
fn lstm_backward(
    cell: &LstmCell,
    cache: &DirCache,
    xs: &Array2<f64>,
    d_hidden: &[Option<Array2<f64>>],
    batch: usize,
    reverse: bool,
    grad: &mut LstmCell,
) -> Array2<f64> {
    let h = cell.units();
    let len = cache.gates.len();
    let mut d_gates_all = Array2::zeros((len * batch, 4 * h));
    let mut dh_next: Option<Array2<f64>> = None;
    let mut dc_next: Option<Array2<f64>> = None;
    for step in (0..len).rev() {
        let t = time_of(step, len, reverse);
        let mut dh = match (&d_hidden[step], dh_next.take()) {
            (Some(a), Some(b)) => a + &b,
            (Some(a), None) => a.clone(),
            (None, Some(b)) => b,
            (None, None) => Array2::zeros((batch, h)),
        };
        let g = &cache.gates[step];
        let tc = &cache.tanh_cell[step];
        let mut dg = d_gates_all.slice_mut(s![t * batch..(t + 1) * batch, ..]);
        // dc = dh * o * (1 - tanh(c)^2) + dc_next
        let mut dc = Array2::zeros((batch, h));
        Zip::from(&mut dc)
            .and(&dh)
            .and(g.slice(s![.., 3 * h..4 * h]))
            .and(tc)
            .for_each(|dc, &dh, &o, &t| *dc = dh * o * (1.0 - t * t));
        if let Some(next) = dc_next.take() {
            dc += &next;
        }
        Zip::from(dg.slice_mut(s![.., 3 * h..4 * h]))
            .and(&dh)
            .and(g.slice(s![.., 3 * h..4 * h]))
            .and(tc)
            .for_each(|d, &dh, &o, &t| *d = dh * t * o * (1.0 - o));
        Zip::from(dg.slice_mut(s![.., 0..h]))
            .and(&dc)
            .and(g.slice(s![.., 0..h]))
            .and(g.slice(s![.., 2 * h..3 * h]))
            .for_each(|d, &dc, &i, &gg| *d = dc * gg * i * (1.0 - i));
        Zip::from(dg.slice_mut(s![.., 2 * h..3 * h]))
            .and(&dc)
            .and(g.slice(s![.., 0..h]))
            .and(g.slice(s![.., 2 * h..3 * h]))
            .for_each(|d, &dc, &i, &gg| *d = dc * i * (1.0 - gg * gg));
        if step > 0 {
            Zip::from(dg.slice_mut(s![.., h..2 * h]))
                .and(&dc)
                .and(g.slice(s![.., h..2 * h]))
                .and(&cache.cell[step - 1])
                .for_each(|d, &dc, &f, &cp| *d = dc * cp * f * (1.0 - f));
            dc *= &g.slice(s![.., h..2 * h]);
            dc_next = Some(dc);
            let dg = dg.view();
            grad.recurrent += &cache.hidden[step - 1].t().dot(&dg);
            dh = dg.dot(&cell.recurrent.t());
            dh_next = Some(dh);
        } else {
            dg.slice_mut(s![.., h..2 * h]).fill(0.0);
        }
    }
    grad.input += &xs.t().dot(&d_gates_all);
    grad.bias += &d_gates_all.sum_axis(Axis(0));
    d_gates_all.dot(&cell.input.t())
}

struct BiCache {
    input: Array2<f64>,
    forward: DirCache,
    backward: DirCache,
}

/// Runs a bidirectional layer; returns the full sequence of concatenated
/// states, or only the two final states when `last` is set.
fn bilstm_forward(layer: &BiLstm, xs: Array2<f64>, len: usize, batch: usize, last: bool) -> (Array2<f64>, BiCache) {
    let h = layer.forward.units();
    let fwd = lstm_forward(&layer.forward, &xs, len, batch, false);
    let bwd = lstm_forward(&layer.backward, &xs, len, batch, true);
    let out = if last {
        let mut out = Array2::zeros((batch, 2 * h));
        out.slice_mut(s![.., 0..h]).assign(&fwd.hidden[len - 1]);
        out.slice_mut(s![.., h..2 * h]).assign(&bwd.hidden[len - 1]);
        out
    } else {
        let mut out = Array2::zeros((len * batch, 2 * h));
        for t in 0..len {
            out.slice_mut(s![t * batch..(t + 1) * batch, 0..h]).assign(&fwd.hidden[t]);
            out.slice_mut(s![t * batch..(t + 1) * batch, h..2 * h]).assign(&bwd.hidden[len - 1 - t]);
        }
        out
    };
    (
        out,
        BiCache {
            input: xs,
            forward: fwd,
            backward: bwd,
        },
    )
}

fn bilstm_backward(
    layer: &BiLstm,
    cache: &BiCache,
    d_out: &Array2<f64>,
    len: usize,
    batch: usize,
    last: bool,
    grad: &mut BiLstm,
) -> Array2<f64> {
    let h = layer.forward.units();
    let mut d_fwd: Vec<Option<Array2<f64>>> = vec![None; len];
    let mut d_bwd: Vec<Option<Array2<f64>>> = vec![None; len];
    if last {
        d_fwd[len - 1] = Some(d_out.slice(s![.., 0..h]).to_owned());
        d_bwd[len - 1] = Some(d_out.slice(s![.., h..2 * h]).to_owned());
    } else {
        for t in 0..len {
            d_fwd[t] = Some(d_out.slice(s![t * batch..(t + 1) * batch, 0..h]).to_owned());
            d_bwd[len - 1 - t] = Some(d_out.slice(s![t * batch..(t + 1) * batch, h..2 * h]).to_owned());
        }
    }
    let dx_f = lstm_backward(&layer.forward, &cache.forward, &cache.input, &d_fwd, batch, false, &mut grad.forward);
    let dx_b = lstm_backward(&layer.backward, &cache.backward, &cache.input, &d_bwd, batch, true, &mut grad.backward);
    dx_f + dx_b
}

struct DenseCache {
    /// Input after dropout.
    input: Array2<f64>,
    mask: Option<Array2<f64>>,
    act: Array2<f64>,
}

struct ForwardCache {
    conv: ConvCache,
    recurrent: Vec<BiCache>,
    dense: Vec<DenseCache>,
    /// Input of the output layer.
    top: Array2<f64>,
    logits: Array2<f64>,
}

fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

fn forward_cached<R: Rng + ?Sized>(
    cfg: &NetworkConfig,
    params: &Parameters,
    x: ArrayView2<f64>,
    mut dropout: Option<&mut R>,
) -> ForwardCache {
    let batch = x.nrows();
    let len = cfg.pooled_length();
    let (mut seq, conv) = conv_forward(cfg, &params.conv, x);
    let mut recurrent = Vec::with_capacity(params.recurrent.len());
    let n_layers = params.recurrent.len();
    for (l, layer) in params.recurrent.iter().enumerate() {
        let (out, cache) = bilstm_forward(layer, seq, len, batch, l + 1 == n_layers);
        recurrent.push(cache);
        seq = out;
    }
    let mut v = seq;
    let mut dense = Vec::with_capacity(params.hidden.len());
    for (layer, &p) in params.hidden.iter().zip(&cfg.dropout_probs) {
        let mask = match dropout.as_deref_mut() {
            Some(rng) if p > 0.0 => Some(dropout_mask(v.dim(), p, rng)),
            _ => None,
        };
        let input = match &mask {
            Some(m) => &v * m,
            None => v,
        };
        let mut act = input.dot(&layer.weight);
        add_bias(&mut act, &layer.bias);
        relu_inplace(&mut act);
        v = act.clone();
        dense.push(DenseCache { input, mask, act });
    }
    let mut logits = v.dot(&params.output.weight);
    add_bias(&mut logits, &params.output.bias);
    ForwardCache {
        conv,
        recurrent,
        dense,
        top: v,
        logits,
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Mean cross-entropy from logits, via log-sum-exp.
fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / labels.len() as f64
}

fn check_input(cfg: &NetworkConfig, x: ArrayView2<f64>) -> Result<()> {
    let width = cfg.input_length * cfg.input_channels;
    if x.ncols() != width {
        return Err(Error::Structural(format!("input has {} columns, network expects {width}", x.ncols())));
    }
    Ok(())
}

/// Class probabilities for already-normalized inputs.
pub fn forward_matrix<R: Rng + ?Sized>(
    weights: &NetworkWeights,
    x: ArrayView2<f64>,
    dropout: Option<&mut R>,
) -> Result<Array2<f64>> {
    check_input(&weights.config, x)?;
    let cache = forward_cached(&weights.config, &weights.params, x, dropout);
    Ok(softmax_rows(&cache.logits))
}

/// Class probabilities per sample. Dropout is only active in `train_mode`.
pub fn forward<R: Rng + ?Sized>(
    weights: &NetworkWeights,
    samples: &[WindowSample],
    train_mode: bool,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let x = input_matrix(&weights.config, &weights.normalization, samples)?;
    forward_matrix(weights, x.view(), train_mode.then_some(rng))
}

/// Mean cross-entropy and its gradient for normalized inputs. Dropout masks
/// are drawn from `dropout` when given.
pub fn loss_and_gradients_matrix<R: Rng + ?Sized>(
    weights: &NetworkWeights,
    x: ArrayView2<f64>,
    labels: &[usize],
    dropout: Option<&mut R>,
) -> Result<(f64, Parameters)> {
    let cfg = &weights.config;
    let params = &weights.params;
    check_input(cfg, x)?;
    let batch = x.nrows();
    if batch == 0 || labels.len() != batch {
        return Err(Error::domain("batch must be non-empty with one label per sample"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= cfg.classes) {
        return Err(Error::domain(format!("label {y} out of range")));
    }
    let cache = forward_cached(cfg, params, x, dropout);
    let loss = cross_entropy(&cache.logits, labels);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {loss}")));
    }

    let mut grad = Parameters::zeros(cfg);
    let mut d = softmax_rows(&cache.logits);
    for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row /= batch as f64;
    }
    grad.output.weight = cache.top.t().dot(&d);
    grad.output.bias = d.sum_axis(Axis(0));
    let mut dv = d.dot(&params.output.weight.t());
    for (l, layer) in params.hidden.iter().enumerate().rev() {
        let dc = &cache.dense[l];
        Zip::from(&mut dv).and(&dc.act).for_each(|d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
        grad.hidden[l].weight = dc.input.t().dot(&dv);
        grad.hidden[l].bias = dv.sum_axis(Axis(0));
        dv = dv.dot(&layer.weight.t());
        if let Some(m) = &dc.mask {
            dv *= m;
        }
    }
    let len = cfg.pooled_length();
    let n_layers = params.recurrent.len();
    for (l, layer) in params.recurrent.iter().enumerate().rev() {
        dv = bilstm_backward(layer, &cache.recurrent[l], &dv, len, batch, l + 1 == n_layers, &mut grad.recurrent[l]);
    }
    conv_backward(&cache.conv, &dv, &mut grad.conv);
    Ok((loss, grad))
}

/// Mean cross-entropy over a batch of samples and gradients for every
/// tensor, with dropout disabled.
pub fn loss_and_gradients(weights: &NetworkWeights, samples: &[WindowSample]) -> Result<(f64, Parameters)> {
    let x = input_matrix(&weights.config, &weights.normalization, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label as usize).collect();
    loss_and_gradients_matrix::<rand_chacha::ChaCha8Rng>(weights, x.view(), &labels, None)
}

const INFERENCE_CHUNK: usize = 1024;

/// Probability of class 1 for each row of a normalized input matrix.
pub fn predict_matrix(weights: &NetworkWeights, x: ArrayView2<f64>, exec: Execution) -> Result<Vec<f64>> {
    check_input(&weights.config, x)?;
    let n_chunks = x.nrows().div_ceil(INFERENCE_CHUNK);
    let parts = exec.map_indices(n_chunks, |c| {
        let rows = c * INFERENCE_CHUNK..((c + 1) * INFERENCE_CHUNK).min(x.nrows());
        let cache = forward_cached::<rand_chacha::ChaCha8Rng>(&weights.config, &weights.params, x.slice(s![rows, ..]), None);
        let p = softmax_rows(&cache.logits);
        (p.column(1).to_vec(), cache.logits)
    });
    Ok(parts.into_iter().flat_map(|(p, _)| p).collect())
}

/// Mean inference-mode cross-entropy over a normalized input matrix.
pub fn loss_matrix(weights: &NetworkWeights, x: ArrayView2<f64>, labels: &[usize], exec: Execution) -> Result<f64> {
    check_input(&weights.config, x)?;
    let n_chunks = x.nrows().div_ceil(INFERENCE_CHUNK);
    let sums = exec.map_indices(n_chunks, |c| {
        let rows = c * INFERENCE_CHUNK..((c + 1) * INFERENCE_CHUNK).min(x.nrows());
        let cache = forward_cached::<rand_chacha::ChaCha8Rng>(
            &weights.config,
            &weights.params,
            x.slice(s![rows.clone(), ..]),
            None,
        );
        cross_entropy(&cache.logits, &labels[rows.clone()]) * rows.len() as f64
    });
    Ok(sums.iter().sum::<f64>() / x.nrows().max(1) as f64)
}

/// Predicted class per sample: 1 when its probability is at least 0.5.
pub fn predict(weights: &NetworkWeights, samples: &[WindowSample], exec: Execution) -> Result<Vec<u8>> {
    let x = input_matrix(&weights.config, &weights.normalization, samples)?;
    Ok(predict_matrix(weights, x.view(), exec)?
        .into_iter()
        .map(|p| u8::from(p >= 0.5))
        .collect())
}
