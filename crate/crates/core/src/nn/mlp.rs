use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat parameter access in a fixed visiting order (weights then bias, layer
/// by layer).
pub trait Parameterized {
    fn param_count(&self) -> usize;
    fn write_params(&self, out: &mut Vec<f64>);
    /// Loads parameters from the front of `src`, returning how many were used.
    fn read_params(&mut self, src: &[f64]) -> usize;

    fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.write_params(&mut v);
        v
    }
}

/// Affine layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// He-normal weights, zero bias.
    pub fn he(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive std");
        Dense {
            weight: Array2::from_shape_simple_fn((inputs, outputs), || normal.sample(rng)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn identity(width: usize) -> Self {
        Dense {
            weight: Array2::eye(width),
            bias: Array1::zeros(width),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Gradients of `W`, `b` and the input given `dy` at the output.
    pub fn backward(&self, x: ArrayView2<f64>, dy: &Array2<f64>) -> (Dense, Array2<f64>) {
        let grad = Dense {
            weight: x.t().dot(dy),
            bias: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.weight.t()))
    }

    pub fn axpy(&mut self, a: f64, g: &Dense) {
        self.weight.scaled_add(a, &g.weight);
        self.bias.scaled_add(a, &g.bias);
    }

    pub fn is_finite(&self) -> bool {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }
}

impl Parameterized for Dense {
    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.weight.iter());
        out.extend(self.bias.iter());
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let nw = self.weight.len();
        for (d, s) in self.weight.iter_mut().zip(&src[..nw]) {
            *d = *s;
        }
        let nb = self.bias.len();
        for (d, s) in self.bias.iter_mut().zip(&src[nw..nw + nb]) {
            *d = *s;
        }
        nw + nb
    }
}

/// Layer widths and roles of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// `widths[0]` is the input width, the rest are layer outputs.
    pub widths: Vec<usize>,
    /// Layer whose (post-ReLU) output is exposed as the mid feature.
    pub mid_layer: usize,
    /// Apply ReLU after the last layer too (encoders).
    #[serde(default)]
    pub relu_output: bool,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        let layers = self.widths.len().saturating_sub(1);
        if layers == 0 || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "MLP widths {:?} need at least one layer",
                self.widths
            )));
        }
        if self.mid_layer >= layers {
            return Err(Error::Config(format!(
                "mid layer {} out of range for {layers} layers",
                self.mid_layer
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Fully connected network with ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub mid_layer: usize,
    pub relu_output: bool,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpPass {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub acts: Vec<Array2<f64>>,
}

impl MlpPass {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("non-empty pass")
    }
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

impl Mlp {
    pub fn new(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        Ok(Mlp {
            layers: spec
                .widths
                .windows(2)
                .map(|w| Dense::he(w[0], w[1], rng))
                .collect(),
            mid_layer: spec.mid_layer,
            relu_output: spec.relu_output,
        })
    }

    pub fn spec(&self) -> MlpSpec {
        let mut widths = vec![self.layers[0].inputs()];
        widths.extend(self.layers.iter().map(Dense::outputs));
        MlpSpec {
            widths,
            mid_layer: self.mid_layer,
            relu_output: self.relu_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn mid_dim(&self) -> usize {
        self.layers[self.mid_layer].outputs()
    }

    fn has_relu(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_output
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpPass> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(
                format!("{} input columns", self.input_dim()),
                x.ncols(),
            ));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts[i].view());
            if self.has_relu(i) {
                relu_inplace(&mut y);
            }
            acts.push(y);
        }
        Ok(MlpPass { acts })
    }

    pub fn mid<'a>(&self, pass: &'a MlpPass) -> &'a Array2<f64> {
        &pass.acts[self.mid_layer + 1]
    }

    /// Backpropagates `d_out` (gradient at the output) plus an optional
    /// gradient injected at the mid feature. Returns parameter gradients in
    /// the shape of `self` and the gradient at the input.
    pub fn backward(
        &self,
        pass: &MlpPass,
        d_out: &Array2<f64>,
        d_mid: Option<&Array2<f64>>,
    ) -> (Mlp, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i == self.mid_layer {
                if let Some(dm) = d_mid {
                    d += dm;
                }
            }
            if self.has_relu(i) {
                d.zip_mut_with(&pass.acts[i + 1], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let (g, dx) = self.layers[i].backward(pass.acts[i].view(), &d);
            grads.push(g);
            d = dx;
        }
        grads.reverse();
        (
            Mlp {
                layers: grads,
                mid_layer: self.mid_layer,
                relu_output: self.relu_output,
            },
            d,
        )
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
            ..self.clone()
        }
    }

    pub fn axpy(&mut self, a: f64, g: &Mlp) {
        for (l, gl) in self.layers.iter_mut().zip(&g.layers) {
            l.axpy(a, gl);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }
}

impl Parameterized for Mlp {
    fn param_count(&self) -> usize {
        self.layers.iter().map(Parameterized::param_count).sum()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        self.layers.iter().for_each(|l| l.write_params(out));
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let mut used = 0;
        for l in &mut self.layers {
            used += l.read_params(&src[used..]);
        }
        used
    }
}

/// Splits `x` column-wise into consecutive blocks of the given widths.
pub(crate) fn split_columns(x: ArrayView2<f64>, widths: &[usize]) -> Vec<Array2<f64>> {
    let mut start = 0;
    widths
        .iter()
        .map(|&w| {
            let block = x.slice(s![.., start..start + w]).to_owned();
            start += w;
            block
        })
        .collect()
}

pub(crate) fn concat_columns(blocks: &[&Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).expect("equal row counts")
}
