//! Categorical value distributions end to end: build a support grid,
//! normalize critic logits, apply the n-step shift-and-scale map, and
//! project back onto the grid.
//!
//!     cargo run --example categorical_projection

use d3rq::valuedist::{
    expectation, normalize, project, shift_scale_targets, Logits, Support,
};

fn bar(p: f64) -> String {
    "#".repeat((p * 60.0).round() as usize)
}

fn main() -> d3rq::Result<()> {
    let support = Support::shared(0.0, 10.0, 11)?;
    println!("support: [{}, {}] with {} atoms (delta = {})", support.v_min, support.v_max, support.n_atoms, support.delta);

    // a critic head emits unnormalized scores; softmax turns them into mass
    let logits = Logits::new(vec![0.0, 0.2, 0.9, 1.8, 2.2, 1.9, 1.0, 0.3, -0.4, -1.0, -1.6]);
    let dist = normalize(&support, &logits)?;
    println!("\nnormalized critic head (mean = {:.4}):", expectation(&dist));
    for (y, p) in support.atoms.iter().zip(&dist.probs) {
        println!("  y = {y:>5.1}  p = {p:.4}  {}", bar(*p));
    }

    // an n-step backup shifts every atom by the accumulated reward and
    // scales by gamma^n before clamping to the support bounds
    let g = 2.5;
    let gamma_n = 0.9f64.powi(3);
    let targets = shift_scale_targets(&support, g, gamma_n, true);
    println!("\nshift-scale with g = {g}, gamma^3 = {gamma_n:.4}:");
    println!("  atom values become {targets:.2?}");

    // projection splits each target's mass between its bracketing atoms
    let projected = project(&support, &targets, &dist.probs)?;
    println!("\nprojected target distribution (mean = {:.4}):", expectation(&projected));
    for (y, p) in support.atoms.iter().zip(&projected.probs) {
        println!("  y = {y:>5.1}  p = {p:.4}  {}", bar(*p));
    }

    let direct: f64 = targets.iter().zip(&dist.probs).map(|(t, p)| t * p).sum();
    println!("\nmean of shifted values  = {direct:.10}");
    println!("mean after projection   = {:.10}", expectation(&projected));
    println!("(projection preserves the mean of in-bounds targets)");
    Ok(())
}
