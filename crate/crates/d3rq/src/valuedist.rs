//! Categorical value distributions.
//!
//! A return distribution is represented as probability mass on a fixed grid
//! of atoms `y_i = v_min + i*delta`. This module provides the support grid,
//! softmax normalization of critic logits, expectations, the shift-and-scale
//! Bellman map over atom values, the projection back onto the grid, and the
//! cross-entropy loss with its analytic gradient. All math is `f64`; the
//! projection is mass-conserving and mean-preserving for in-bounds values,
//! which the oracle comparisons in the test suite lean on heavily.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Floor applied to log-probabilities inside the cross-entropy loss so a
/// zero-mass atom cannot produce an infinite loss.
pub const LOG_PROB_FLOOR: f64 = -30.0;

/// Fixed grid of atom values.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub v_min: f64,
    pub v_max: f64,
    pub n_atoms: usize,
    pub atoms: Vec<f64>,
    pub delta: f64,
}

/// Build the atom grid for `[v_min, v_max]` with `n_atoms` evenly spaced
/// atoms, spacing `delta = (v_max - v_min) / (n_atoms - 1)`.
pub fn make_support(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Support> {
    if !(v_min.is_finite() && v_max.is_finite()) {
        return Err(Error::NonFinite(format!("support bounds ({v_min}, {v_max})")));
    }
    if v_max <= v_min {
        return Err(Error::InvalidArgument(format!(
            "support requires v_max > v_min, got ({v_min}, {v_max})"
        )));
    }
    if n_atoms < 2 {
        return Err(Error::InvalidArgument(format!(
            "support requires at least 2 atoms, got {n_atoms}"
        )));
    }
    let delta = (v_max - v_min) / (n_atoms - 1) as f64;
    let atoms = (0..n_atoms).map(|i| v_min + i as f64 * delta).collect();
    Ok(Support { v_min, v_max, n_atoms, atoms, delta })
}

impl Support {
    pub fn shared(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Arc<Support>> {
        make_support(v_min, v_max, n_atoms).map(Arc::new)
    }
}

/// Unnormalized scores over the atoms, as produced by a critic head.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub omega: Vec<f64>,
}

impl Logits {
    pub fn new(omega: Vec<f64>) -> Self {
        Logits { omega }
    }
}

/// Probability mass over a support grid. `probs` sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    pub support: Arc<Support>,
    pub probs: Vec<f64>,
}

impl CategoricalDist {
    /// Wrap a probability vector, checking normalization and nonnegativity.
    pub fn new(support: Arc<Support>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != support.n_atoms {
            return Err(Error::ShapeMismatch(format!(
                "{} probs for {} atoms",
                probs.len(),
                support.n_atoms
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("negative or non-finite mass".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mass sums to {total}, not 1")));
        }
        Ok(CategoricalDist { support, probs })
    }

    /// Mass 1 at `value` (clamped to the bounds), split onto the grid.
    pub fn point_mass(support: Arc<Support>, value: f64) -> Result<Self> {
        let v = value.clamp(support.v_min, support.v_max);
        project(&support, &[v], &[1.0])
    }

    pub fn expectation(&self) -> f64 {
        expectation_of(&self.support, &self.probs)
    }
}

/// Stable softmax in-place over `omega`, writing into `out`.
pub(crate) fn softmax_into(omega: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let max = omega.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &w in omega {
        let e = (w - max).exp();
        out.push(e);
        total += e;
    }
    for p in out.iter_mut() {
        *p /= total;
    }
}

/// Softmax-normalize logits into a distribution on `support`.
///
/// Computed with a max shift so large-magnitude logits cannot overflow.
pub fn normalize(support: &Arc<Support>, logits: &Logits) -> Result<CategoricalDist> {
    if logits.omega.len() != support.n_atoms {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} atoms",
            logits.omega.len(),
            support.n_atoms
        )));
    }
    if logits.omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("logit".into()));
    }
    let mut probs = Vec::with_capacity(support.n_atoms);
    softmax_into(&logits.omega, &mut probs);
    Ok(CategoricalDist { support: support.clone(), probs })
}

pub(crate) fn expectation_of(support: &Support, probs: &[f64]) -> f64 {
    probs
        .iter()
        .zip(&support.atoms)
        .map(|(p, y)| p * y)
        .sum()
}

/// Mean of the distribution, `sum_i p_i * y_i`.
pub fn expectation(dist: &CategoricalDist) -> f64 {
    expectation_of(&dist.support, &dist.probs)
}

/// Shift-and-scale map applied to the atom grid: for each atom `y_j` the
/// target value is `clamp(g + gamma_n * y_j)` when bootstrapping, and
/// `clamp(g)` for every atom otherwise.
pub fn shift_scale_targets(support: &Support, g: f64, gamma_n: f64, bootstrap: bool) -> Vec<f64> {
    support
        .atoms
        .iter()
        .map(|&y| {
            let t = if bootstrap { g + gamma_n * y } else { g };
            t.clamp(support.v_min, support.v_max)
        })
        .collect()
}

/// Project mass at arbitrary in-bounds values back onto the atom grid.
///
/// Each `(target_values[j], target_probs[j])` pair splits its mass between
/// the two atoms bracketing the value, in inverse proportion to distance;
/// a value sitting exactly on an atom deposits all of its mass there. The
/// result conserves mass and preserves the mean of the target values.
pub fn project(
    support: &Arc<Support>,
    target_values: &[f64],
    target_probs: &[f64],
) -> Result<CategoricalDist> {
    let mut probs = vec![0.0; support.n_atoms];
    project_into(support, target_values, target_probs, &mut probs)?;
    Ok(CategoricalDist { support: support.clone(), probs })
}

/// Allocation-free core of [`project`]; accumulates into `out`, which must
/// be zeroed by the caller and have `n_atoms` entries.
pub(crate) fn project_into(
    support: &Support,
    target_values: &[f64],
    target_probs: &[f64],
    out: &mut [f64],
) -> Result<()> {
    if target_values.len() != target_probs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values vs {} probs",
            target_values.len(),
            target_probs.len()
        )));
    }
    debug_assert_eq!(out.len(), support.n_atoms);
    let last = (support.n_atoms - 1) as f64;
    for (&t, &p) in target_values.iter().zip(target_probs) {
        if t < support.v_min - 1e-12 || t > support.v_max + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "target value {t} outside support [{}, {}]",
                support.v_min, support.v_max
            )));
        }
        let b = ((t - support.v_min) / support.delta).clamp(0.0, last);
        let l = b.floor();
        let u = b.ceil();
        let li = l as usize;
        let ui = u as usize;
        if li == ui {
            out[li] += p;
        } else {
            out[li] += p * (u - b);
            out[ui] += p * (b - l);
        }
    }
    Ok(())
}

/// Cross-entropy between a target distribution and softmax(logits), with the
/// analytic gradient with respect to the logits.
///
/// Returns `(-sum_i p'_i log softmax(omega)_i, softmax(omega) - p')`. The
/// log-probabilities are floored at [`LOG_PROB_FLOOR`] inside the loss; the
/// gradient is always the exact softmax-minus-target expression.
pub fn cross_entropy_loss(target: &CategoricalDist, logits: &Logits) -> Result<(f64, Vec<f64>)> {
    let n = target.probs.len();
    if logits.omega.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} target atoms",
            logits.omega.len(),
            n
        )));
    }
    let mut grad = Vec::with_capacity(n);
    let loss = cross_entropy_into(&target.probs, &logits.omega, &mut grad);
    Ok((loss, grad))
}

/// Core of [`cross_entropy_loss`] on raw slices. `grad` is overwritten with
/// `softmax(omega) - target`.
pub(crate) fn cross_entropy_into(target: &[f64], omega: &[f64], grad: &mut Vec<f64>) -> f64 {
    softmax_into(omega, grad);
    let mut loss = 0.0;
    for (&p_target, p_model) in target.iter().zip(grad.iter()) {
        if p_target > 0.0 {
            loss -= p_target * p_model.ln().max(LOG_PROB_FLOOR);
        }
    }
    for (g, &p_target) in grad.iter_mut().zip(target) {
        *g -= p_target;
    }
    loss
}
