//! Exact ground truth on the chain MDP: linear-solve Q values, converged
//! categorical return distributions, brute-force return enumeration, and
//! the n-step distributional operator the agent's target path must match.
//!
//!     cargo run --release --example tabular_oracle

use d3rq::envsim::chain6;
use d3rq::oracle::{
    bellman_residual, brute_force_returns, dist_eval, exact_q, greedy_from_q,
    nstep_dist_operator, TabularPolicy,
};
use d3rq::valuedist::Support;

fn main() -> d3rq::Result<()> {
    let mdp = chain6();
    let policy = TabularPolicy::Deterministic(vec![0; 6]);
    let gamma = mdp.gamma;

    let q = exact_q(&mdp, &policy, gamma)?;
    println!("exact Q under the always-forward policy (gamma = {gamma}):");
    for s in 0..6 {
        println!("  state {s}: forward {:.6}  back {:.6}", q[s * 2], q[s * 2 + 1]);
    }
    println!("Bellman residual: {:.3e}", bellman_residual(&mdp, &policy, gamma, &q));
    let greedy = greedy_from_q(&mdp, &q);
    println!("greedy policy over exact Q: {greedy:?}");

    // categorical fixed point of the projected distributional operator
    let support = Support::shared(-1.0, 11.0, 121)?;
    let z = dist_eval(&mdp, &policy, &support, 2000)?;
    println!("\nconverged return distributions (expectation vs exact Q):");
    for s in 0..6 {
        println!(
            "  state {s}: E[Z] = {:.6}, Q = {:.6}, diff = {:.2e}",
            z.expectation(s, 0),
            q[s * 2],
            (z.expectation(s, 0) - q[s * 2]).abs()
        );
    }

    // spread of the start state's return distribution
    let start = z.entry(0, 0);
    let mean = z.expectation(0, 0);
    let var: f64 = start
        .iter()
        .zip(&support.atoms)
        .map(|(p, y)| p * (y - mean) * (y - mean))
        .sum();
    println!("\nstate 0 forward: mean {:.4}, stddev {:.4}", mean, var.sqrt());

    // brute-force enumeration of ten-step returns
    let horizon = 10;
    let samples = brute_force_returns(&mdp, &policy, horizon, gamma)?;
    let bound = gamma.powi(horizon as i32) * mdp.max_reward() / (1.0 - gamma);
    println!("\nbrute-force {horizon}-step returns ({} outcomes from state 0):", samples.entry(0, 0).len());
    println!(
        "  mean {:.6} vs exact {:.6} (tail bound {:.4})",
        samples.mean(0, 0),
        q[0],
        bound
    );

    // the n-step operator the agent's critic targets are checked against
    let n3 = nstep_dist_operator(&mdp, &policy, &z, 3)?;
    println!("\n3-step operator applied to the fixed point (state 0 forward):");
    println!(
        "  expectation moves {:.6} -> {:.6}",
        z.expectation(0, 0),
        n3.expectation(0, 0)
    );
    Ok(())
}
