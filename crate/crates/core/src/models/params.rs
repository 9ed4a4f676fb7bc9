//! Trainable tensors of the detector, with a flat view for optimizers,
//! serialization and gradient checks.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::config::NetworkConfig;
use crate::error::{Error, Result};

/// Affine map `x · weight + bias`; `weight` is `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }
}

/// One LSTM direction. Gate blocks are ordered input, forget, cell, output
/// along the `4 * units` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input: Array2<f64>,
    pub recurrent: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmCell {
    fn zeros(inputs: usize, units: usize) -> Self {
        Self {
            input: Array2::zeros((inputs, 4 * units)),
            recurrent: Array2::zeros((units, 4 * units)),
            bias: Array1::zeros(4 * units),
        }
    }

    pub fn units(&self) -> usize {
        self.recurrent.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// Convolution as a dense map over flattened `kernel × channels` patches.
    pub conv: Dense,
    pub recurrent: Vec<BiLstm>,
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

/// Name and shape of every tensor, in [`Parameters::slices`] order.
pub fn tensor_layout(cfg: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    Parameters::zeros(cfg)
        .slices()
        .into_iter()
        .map(|(name, shape, _)| (name, shape))
        .collect()
}

impl Parameters {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let mut recurrent = Vec::new();
        let mut width = cfg.conv_filters;
        for &units in &cfg.recurrent_units {
            recurrent.push(BiLstm {
                forward: LstmCell::zeros(width, units),
                backward: LstmCell::zeros(width, units),
            });
            width = 2 * units;
        }
        let mut hidden = Vec::new();
        for &units in &cfg.fc_units {
            hidden.push(Dense::zeros(width, units));
            width = units;
        }
        Self {
            conv: Dense::zeros(cfg.conv_kernel * cfg.input_channels, cfg.conv_filters),
            recurrent,
            hidden,
            output: Dense::zeros(width, cfg.classes),
        }
    }

    /// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        let mut fill = |w: &mut Array2<f64>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            w.iter_mut().for_each(|v| *v = dist.sample(rng));
        };
        let conv_in = cfg.conv_kernel * cfg.input_channels;
        fill(&mut p.conv.weight, conv_in, cfg.conv_kernel * cfg.conv_filters);
        for layer in &mut p.recurrent {
            for cell in [&mut layer.forward, &mut layer.backward] {
                let (d, g) = cell.input.dim();
                fill(&mut cell.input, d, g);
                let (h, g) = cell.recurrent.dim();
                fill(&mut cell.recurrent, h, g);
                let h = cell.units();
                cell.bias.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
            }
        }
        for d in p.hidden.iter_mut().chain(std::iter::once(&mut p.output)) {
            let (i, o) = d.weight.dim();
            fill(&mut d.weight, i, o);
        }
        p
    }

    fn dense_slices<'a>(name: &str, d: &'a Dense, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        out.push((format!("{name}.weight"), d.weight.shape().to_vec(), d.weight.as_slice().expect("standard layout")));
        out.push((format!("{name}.bias"), d.bias.shape().to_vec(), d.bias.as_slice().expect("standard layout")));
    }

    /// Every tensor as `(name, shape, row-major data)`.
    pub fn slices(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        Self::dense_slices("conv", &self.conv, &mut out);
        for (l, layer) in self.recurrent.iter().enumerate() {
            for (dir, cell) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                let n = format!("lstm{l}.{dir}");
                out.push((format!("{n}.input"), cell.input.shape().to_vec(), cell.input.as_slice().expect("standard layout")));
                out.push((format!("{n}.recurrent"), cell.recurrent.shape().to_vec(), cell.recurrent.as_slice().expect("standard layout")));
                out.push((format!("{n}.bias"), cell.bias.shape().to_vec(), cell.bias.as_slice().expect("standard layout")));
            }
        }
        for (l, d) in self.hidden.iter().enumerate() {
            Self::dense_slices(&format!("fc{l}"), d, &mut out);
        }
        Self::dense_slices("output", &self.output, &mut out);
        out
    }

    /// Mutable tensors in the same order as [`Parameters::slices`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let conv = &mut self.conv;
        out.push(conv.weight.as_slice_mut().expect("standard layout"));
        out.push(conv.bias.as_slice_mut().expect("standard layout"));
        for layer in &mut self.recurrent {
            for cell in [&mut layer.forward, &mut layer.backward] {
                out.push(cell.input.as_slice_mut().expect("standard layout"));
                out.push(cell.recurrent.as_slice_mut().expect("standard layout"));
                out.push(cell.bias.as_slice_mut().expect("standard layout"));
            }
        }
        for d in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    /// Builds parameters from named tensors, checking each shape against `cfg`.
    pub fn from_tensors(cfg: &NetworkConfig, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        let layout = tensor_layout(cfg);
        if layout.len() != tensors.len() {
            return Err(Error::Structural(format!(
                "expected {} tensors for this config, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((slot, (name, shape)), (t_name, t_shape, data)) in p.slices_mut().into_iter().zip(&layout).zip(tensors) {
            if name != t_name || shape != t_shape {
                return Err(Error::Structural(format!(
                    "tensor {t_name} has shape {t_shape:?}, config expects {name} with shape {shape:?}"
                )));
            }
            if data.len() != slot.len() {
                return Err(Error::Structural(format!(
                    "tensor {t_name} holds {} values, shape {shape:?} needs {}",
                    data.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(data);
        }
        Ok(p)
    }
}
