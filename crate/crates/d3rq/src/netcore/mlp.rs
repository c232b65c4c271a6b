//! Fully connected layers with reverse-mode gradients.

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Layer sizes `[in, hidden..., out]` plus the output activation. Hidden
/// layers are ReLU; an empty hidden list gives a single affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub output: OutputActivation,
    /// Cached per-layer parameter names ("w{i}", "b{i}").
    names: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    /// Squashes the last layer into (-1, 1); used by actors so actions live
    /// in the action box.
    Tanh,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, output: OutputActivation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let names = (0..sizes.len() - 1)
            .map(|i| (Self::weight_name(i), Self::bias_name(i)))
            .collect();
        MlpSpec { sizes, output, names }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight_name(layer: usize) -> String {
        format!("w{layer}")
    }

    pub fn bias_name(layer: usize) -> String {
        format!("b{layer}")
    }

    /// Orthogonal weights (gain sqrt(2)) and zero biases for every hidden
    /// layer; the final layer uses `final_gain` orthogonal init, or uniform
    /// `[-scale, scale]` when `final_uniform` is set (actors start with
    /// near-zero outputs that way).
    pub fn init_params(&self, rng: &mut DetRng, final_uniform: Option<f64>) -> ParamSet {
        let mut params = ParamSet::new();
        let last = self.n_layers() - 1;
        for layer in 0..self.n_layers() {
            let rows = self.sizes[layer + 1];
            let cols = self.sizes[layer];
            let w = if layer == last {
                match final_uniform {
                    Some(scale) => super::init_uniform(&[rows, cols], scale, rng),
                    None => super::init_orthogonal(rows, cols, 1.0, rng),
                }
            } else {
                super::init_orthogonal(rows, cols, std::f64::consts::SQRT_2, rng)
            };
            params.insert(&Self::weight_name(layer), w).expect("fresh set");
            params
                .insert(&Self::bias_name(layer), Tensor::zeros(&[rows]))
                .expect("fresh set");
        }
        params
    }
}

/// Recorded forward state, consumed (by move) by exactly one backward pass.
#[derive(Debug)]
pub struct Tape {
    pub(super) records: Vec<OpRecord>,
    pub(super) output_len: usize,
}

#[derive(Debug)]
pub(super) enum OpRecord {
    /// y = W x + b; stores the layer input for the weight gradient and the
    /// parameter indices resolved at forward time.
    Affine { w: usize, b: usize, input: Vec<f64> },
    /// ReLU over the pre-activations it stores.
    Relu { pre: Vec<f64> },
    /// tanh; stores outputs since d/dx tanh = 1 - y^2.
    Tanh { out: Vec<f64> },
    /// Strided valid convolution (+ReLU folded separately).
    Conv {
        k: usize,
        b: usize,
        input: Vec<f64>,
        in_shape: [usize; 3],
        out_shape: [usize; 3],
        ksize: usize,
        stride: usize,
    },
}

/// Dot product with four independent accumulators. The fixed summation
/// order keeps results bit-reproducible while letting the lanes pipeline.
#[inline]
pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        s0 += x[0] * y[0];
        s1 += x[1] * y[1];
        s2 += x[2] * y[2];
        s3 += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

pub(super) fn affine_forward(
    params: &ParamSet,
    w_idx: usize,
    b_idx: usize,
    input: &[f64],
) -> Result<Vec<f64>> {
    let w = params.tensor_at(w_idx);
    let b = params.tensor_at(b_idx);
    let (rows, cols) = (w.shape[0], w.shape[1]);
    if input.len() != cols {
        return Err(Error::ShapeMismatch(format!(
            "affine input {} vs {cols} columns",
            input.len()
        )));
    }
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &w.data[r * cols..(r + 1) * cols];
        out.push(b.data[r] + dot(row, input));
    }
    Ok(out)
}

/// Forward pass through the MLP, recording a tape for backward.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamSet, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
    if input.len() != spec.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "mlp input {} vs spec {}",
            input.len(),
            spec.input_dim()
        )));
    }
    let mut records = Vec::with_capacity(spec.n_layers() * 2);
    let mut x = input.to_vec();
    for layer in 0..spec.n_layers() {
        let (w_name, b_name) = &spec.names[layer];
        let w = params.index_of(w_name)?;
        let b = params.index_of(b_name)?;
        let y = affine_forward(params, w, b, &x)?;
        records.push(OpRecord::Affine { w, b, input: std::mem::replace(&mut x, y) });
        let last = layer + 1 == spec.n_layers();
        if !last {
            records.push(OpRecord::Relu { pre: x.clone() });
            for v in x.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        } else if spec.output == OutputActivation::Tanh {
            for v in x.iter_mut() {
                *v = v.tanh();
            }
            records.push(OpRecord::Tanh { out: x.clone() });
        }
    }
    let output_len = x.len();
    Ok((x, Tape { records, output_len }))
}

/// Reverse pass: gradients of `output . output_grad` with respect to every
/// parameter and the input. The tape is consumed.
pub fn backward(params: &ParamSet, tape: Tape, output_grad: &[f64]) -> Result<(ParamSet, Vec<f64>)> {
    let mut grads = params.zeros_like();
    let mut input_grad = Vec::new();
    backward_into(params, tape, output_grad, &mut grads, &mut input_grad)?;
    Ok((grads, input_grad))
}

/// Like [`backward`] but accumulates into `grads` (which must be shaped like
/// `params`) and overwrites `input_grad`; used in batch loops.
pub fn backward_into(
    params: &ParamSet,
    tape: Tape,
    output_grad: &[f64],
    grads: &mut ParamSet,
    input_grad: &mut Vec<f64>,
) -> Result<()> {
    if output_grad.len() != tape.output_len {
        return Err(Error::ShapeMismatch(format!(
            "output grad {} vs tape output {}",
            output_grad.len(),
            tape.output_len
        )));
    }
    let mut g = output_grad.to_vec();
    for record in tape.records.into_iter().rev() {
        match record {
            OpRecord::Tanh { out } => {
                for (gv, y) in g.iter_mut().zip(&out) {
                    *gv *= 1.0 - y * y;
                }
            }
            OpRecord::Relu { pre } => {
                for (gv, p) in g.iter_mut().zip(&pre) {
                    if *p <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            OpRecord::Affine { w, b, input } => {
                let wt = params.tensor_at(w);
                let (rows, cols) = (wt.shape[0], wt.shape[1]);
                {
                    let gw = grads.tensor_at_mut(w);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            let row = &mut gw.data[r * cols..(r + 1) * cols];
                            for (slot, xv) in row.iter_mut().zip(&input) {
                                *slot += gr * xv;
                            }
                        }
                    }
                }
                {
                    let gb = grads.tensor_at_mut(b);
                    for (slot, gv) in gb.data.iter_mut().zip(&g) {
                        *slot += gv;
                    }
                }
                let mut next = vec![0.0; cols];
                for r in 0..rows {
                    let gr = g[r];
                    if gr != 0.0 {
                        let row = &wt.data[r * cols..(r + 1) * cols];
                        for (slot, wv) in next.iter_mut().zip(row) {
                            *slot += gr * wv;
                        }
                    }
                }
                g = next;
            }
            OpRecord::Conv { k, b, input, in_shape, out_shape, ksize, stride } => {
                g = super::conv::conv_backward(
                    params, grads, k, b, &input, in_shape, out_shape, ksize, stride, &g,
                )?;
            }
        }
    }
    *input_grad = g;
    Ok(())
}
