//! Minimal differentiable network stack.
//!
//! Parameters live in [`ParamSet`]s of named, shaped `f64` tensors. Forward
//! passes record a [`Tape`](mlp::Tape) that a single backward pass consumes
//! (by move, so a tape cannot be replayed). The layer zoo is deliberately
//! small: fully connected layers with ReLU/tanh, strided valid convolution,
//! Adam, and Polyak soft target updates.

mod checkpoint;
mod conv;
mod mlp;

pub use checkpoint::{load_tensors, read_checkpoint, save_tensors, write_checkpoint, CHECKPOINT_MAGIC};
pub use conv::{conv_forward, encoder_forward, init_conv_encoder, ConvEncoderSpec, ConvLayerSpec};
pub use mlp::{backward, backward_into, mlp_forward, MlpSpec, OutputActivation, Tape};

use crate::error::{Error, Result};
use crate::rng::DetRng;
use std::collections::HashMap;

/// Dense tensor with shape metadata, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{} elements for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named tensors.
///
/// Shapes are fixed at insertion; values are whatever the optimizer makes of
/// them. Iteration order is insertion order, which the flat view, Adam, and
/// the checkpoint format all share.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::InvalidArgument(format!("unknown parameter {name}"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Positional index of a parameter (insertion order), for hot paths
    /// that resolve names once and then address tensors directly.
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn tensor_at(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub fn tensor_at_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, t) in &self.entries {
            out.insert(name, Tensor::zeros(&t.shape)).expect("fresh set");
        }
        out
    }

    pub fn flat_len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Concatenation of all tensors in insertion order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for (_, t) in &self.entries {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Overwrite all values from a flat vector laid out as [`to_flat`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.flat_len()
            )));
        }
        let mut at = 0;
        for (_, t) in self.entries.iter_mut() {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[at..at + len]);
            at += len;
        }
        Ok(())
    }

    /// self += scale * other, matched by name and shape.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        check_compatible(self, other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.entries.iter_mut() {
            for x in t.data.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }
}

fn check_compatible(a: &ParamSet, b: &ParamSet) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} parameters",
            a.len(),
            b.len()
        )));
    }
    for ((na, ta), (nb, tb)) in a.entries.iter().zip(&b.entries) {
        if na != nb || ta.shape != tb.shape {
            return Err(Error::ShapeMismatch(format!(
                "parameter {na} {:?} vs {nb} {:?}",
                ta.shape, tb.shape
            )));
        }
    }
    Ok(())
}

/// Adam constants. The learning rate is the only value commonly overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(alpha: f64) -> Self {
        AdamConfig { alpha, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_lr(1e-4)
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: ParamSet,
    v: ParamSet,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        AdamState { cfg, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Moment tensors, exposed for checkpointing.
    pub fn moments(&self) -> (&ParamSet, &ParamSet) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(&mut self, m: ParamSet, v: ParamSet, t: u64) -> Result<()> {
        check_compatible(&self.m, &m)?;
        check_compatible(&self.v, &v)?;
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }
}

/// One Adam update with bias correction.
///
/// Rejects non-finite gradients without touching parameters or moments, so
/// a caller can skip the update and keep going.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    check_compatible(params, grads)?;
    check_compatible(params, &state.m)?;
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.t += 1;
    let AdamConfig { alpha, beta1, beta2, eps } = state.cfg;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .entries
        .iter_mut()
        .zip(&grads.entries)
        .zip(state.m.entries.iter_mut().zip(state.v.entries.iter_mut()))
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] -= alpha * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Polyak averaging: `target = tau * online + (1 - tau) * target`, exact
/// per element.
pub fn soft_update(target: &mut ParamSet, online: &ParamSet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    check_compatible(target, online)?;
    for ((_, t), (_, o)) in target.entries.iter_mut().zip(&online.entries) {
        for (tv, ov) in t.data.iter_mut().zip(&o.data) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

/// Orthogonal `[rows, cols]` matrix scaled by `gain`: the smaller dimension
/// is orthonormal (modified Gram-Schmidt on Gaussian draws).
pub fn init_orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut DetRng) -> Tensor {
    let (major, minor) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // columns of a [major, minor] matrix, orthonormalized
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(minor);
    for _ in 0..minor {
        let mut v: Vec<f64> = (0..major).map(|_| rng.normal()).collect();
        for prev in &basis {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // a degenerate draw is astronomically unlikely; a fresh Gaussian
        // column keeps the loop total
        if norm < 1e-12 {
            v = (0..major).map(|_| rng.normal()).collect();
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
        basis.push(v);
    }
    let mut t = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        for c in 0..cols {
            let val = if rows >= cols { basis[c][r] } else { basis[r][c] };
            t.data[r * cols + c] = gain * val;
        }
    }
    t
}

/// Uniform init in [-scale, scale].
pub fn init_uniform(shape: &[usize], scale: f64, rng: &mut DetRng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data.iter_mut() {
        *x = rng.uniform(-scale, scale);
    }
    t
}
