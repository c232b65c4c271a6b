//! Exact machinery on finite MDPs.
//!
//! Three independent routes to ground truth, used to pin down the learning
//! stack: expected values from a direct linear solve of the Bellman fixed
//! point, categorical return distributions from iterating the projected
//! distributional operator to convergence, and finite-horizon return
//! distributions from brute-force trajectory enumeration. The n-step
//! operator mirrors what the agent's critic-target path computes, so the
//! two can be compared entry by entry.

use crate::envsim::TabularMDP;
use crate::error::{Error, Result};
use crate::valuedist::{expectation_of, project_into, shift_scale_targets, Support};
use std::sync::Arc;

/// Stationary policy over a finite MDP.
#[derive(Debug, Clone, PartialEq)]
pub enum TabularPolicy {
    Deterministic(Vec<usize>),
    /// Row-stochastic action distribution per state.
    Stochastic(Vec<Vec<f64>>),
}

impl TabularPolicy {
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        match self {
            TabularPolicy::Deterministic(actions) => {
                if actions[state] == action {
                    1.0
                } else {
                    0.0
                }
            }
            TabularPolicy::Stochastic(rows) => rows[state][action],
        }
    }

    pub fn validate(&self, mdp: &TabularMDP) -> Result<()> {
        match self {
            TabularPolicy::Deterministic(actions) => {
                if actions.len() != mdp.n_states {
                    return Err(Error::ShapeMismatch("policy length".into()));
                }
                if actions.iter().any(|&a| a >= mdp.n_actions) {
                    return Err(Error::InvalidArgument("policy action out of range".into()));
                }
            }
            TabularPolicy::Stochastic(rows) => {
                if rows.len() != mdp.n_states {
                    return Err(Error::ShapeMismatch("policy rows".into()));
                }
                for (s, row) in rows.iter().enumerate() {
                    if row.len() != mdp.n_actions {
                        return Err(Error::ShapeMismatch(format!("policy row {s}")));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > 1e-12 || row.iter().any(|p| *p < 0.0) {
                        return Err(Error::InvalidArgument(format!(
                            "policy row {s} sums to {total}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One categorical distribution per (state, action) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnDistTable {
    pub support: Arc<Support>,
    /// dists[s * n_actions + a] is the probability vector for (s, a).
    pub dists: Vec<Vec<f64>>,
    pub n_actions: usize,
}

impl ReturnDistTable {
    pub fn uniform_point(support: Arc<Support>, mdp: &TabularMDP) -> Self {
        // start every entry as a point mass on the atom nearest zero
        let mut probs = vec![0.0; support.n_atoms];
        let zero_idx = support
            .atoms
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        probs[zero_idx] = 1.0;
        ReturnDistTable {
            support,
            dists: vec![probs; mdp.n_states * mdp.n_actions],
            n_actions: mdp.n_actions,
        }
    }

    #[inline]
    pub fn entry(&self, state: usize, action: usize) -> &[f64] {
        &self.dists[state * self.n_actions + action]
    }

    pub fn expectation(&self, state: usize, action: usize) -> f64 {
        expectation_of(&self.support, self.entry(state, action))
    }

    pub fn max_total_variation(&self, other: &ReturnDistTable) -> f64 {
        self.dists
            .iter()
            .zip(&other.dists)
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// exact expected values

/// Solve a dense linear system by Gaussian elimination with partial
/// pivoting. Sized for (states x actions) systems, which stay tiny here.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::InvalidArgument("singular Bellman system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Exact Q values under `policy` via a direct solve of the linear Bellman
/// fixed point `q = r + gamma * P_pi q`. Indexed `s * n_actions + a`.
pub fn exact_q(mdp: &TabularMDP, policy: &TabularPolicy, gamma: f64) -> Result<Vec<f64>> {
    policy.validate(mdp)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1)")));
    }
    let n = mdp.n_states * mdp.n_actions;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for s in 0..mdp.n_states {
        for act in 0..mdp.n_actions {
            let row_idx = s * mdp.n_actions + act;
            b[row_idx] = mdp.reward(s, act);
            a[row_idx][row_idx] += 1.0;
            let p_next = mdp.row(s, act);
            for sp in 0..mdp.n_states {
                if p_next[sp] == 0.0 {
                    continue;
                }
                for ap in 0..mdp.n_actions {
                    let w = policy.prob(sp, ap);
                    if w > 0.0 {
                        a[row_idx][sp * mdp.n_actions + ap] -= gamma * p_next[sp] * w;
                    }
                }
            }
        }
    }
    solve_dense(a, b)
}

/// Sup-norm residual of the Bellman operator at `q`.
pub fn bellman_residual(mdp: &TabularMDP, policy: &TabularPolicy, gamma: f64, q: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states {
        for act in 0..mdp.n_actions {
            let mut applied = mdp.reward(s, act);
            let p_next = mdp.row(s, act);
            for sp in 0..mdp.n_states {
                if p_next[sp] == 0.0 {
                    continue;
                }
                for ap in 0..mdp.n_actions {
                    applied += gamma * p_next[sp] * policy.prob(sp, ap) * q[sp * mdp.n_actions + ap];
                }
            }
            worst = worst.max((applied - q[s * mdp.n_actions + act]).abs());
        }
    }
    worst
}

/// Greedy deterministic policy from a Q table.
pub fn greedy_from_q(mdp: &TabularMDP, q: &[f64]) -> TabularPolicy {
    let actions = (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .max_by(|&i, &j| {
                    q[s * mdp.n_actions + i]
                        .partial_cmp(&q[s * mdp.n_actions + j])
                        .unwrap()
                })
                .unwrap()
        })
        .collect();
    TabularPolicy::Deterministic(actions)
}

// ---------------------------------------------------------------------------
// distributional evaluation

/// One application of the projected distributional Bellman operator: mix
/// successor distributions under `policy`, shift by the reward, scale by
/// gamma, and project back onto the grid.
pub fn one_step_operator(
    mdp: &TabularMDP,
    policy: &TabularPolicy,
    z: &ReturnDistTable,
) -> Result<ReturnDistTable> {
    let support = &z.support;
    let gamma = mdp.gamma;
    let mut dists = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    let mut mixed = vec![0.0; support.n_atoms];
    for s in 0..mdp.n_states {
        for act in 0..mdp.n_actions {
            mixed.iter_mut().for_each(|m| *m = 0.0);
            let p_next = mdp.row(s, act);
            for sp in 0..mdp.n_states {
                if p_next[sp] == 0.0 {
                    continue;
                }
                for ap in 0..mdp.n_actions {
                    let w = p_next[sp] * policy.prob(sp, ap);
                    if w > 0.0 {
                        for (m, z_val) in mixed.iter_mut().zip(z.entry(sp, ap)) {
                            *m += w * z_val;
                        }
                    }
                }
            }
            let values = shift_scale_targets(support, mdp.reward(s, act), gamma, true);
            let mut out = vec![0.0; support.n_atoms];
            project_into(support, &values, &mixed, &mut out)?;
            dists.push(out);
        }
    }
    Ok(ReturnDistTable { support: support.clone(), dists, n_actions: mdp.n_actions })
}

/// Iterate the projected operator until the per-entry total variation change
/// drops below 1e-9 (or `iters` is exhausted, which is an error).
pub fn dist_eval(
    mdp: &TabularMDP,
    policy: &TabularPolicy,
    support: &Arc<Support>,
    iters: usize,
) -> Result<ReturnDistTable> {
    policy.validate(mdp)?;
    let mut z = ReturnDistTable::uniform_point(support.clone(), mdp);
    for _ in 0..iters {
        let next = one_step_operator(mdp, policy, &z)?;
        let delta = z.max_total_variation(&next);
        z = next;
        if delta < 1e-9 {
            return Ok(z);
        }
    }
    Err(Error::InvalidArgument(format!(
        "distributional evaluation did not converge within {iters} iterations"
    )))
}

// ---------------------------------------------------------------------------
// n-step operator and brute-force returns

const ENUMERATION_CAP: usize = 2_000_000;

/// One fully expanded length-n trajectory: its probability, the accumulated
/// discounted reward, and the bootstrap (state, action) pair at the end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NStepLeaf {
    pub prob: f64,
    pub reward_sum: f64,
    pub state: usize,
    pub action: usize,
}

/// Enumerate all length-`n` trajectories from (s, a): first action fixed,
/// later actions drawn from the policy.
pub fn enumerate_nstep_leaves(
    mdp: &TabularMDP,
    policy: &TabularPolicy,
    start_state: usize,
    start_action: usize,
    n: u32,
    gamma: f64,
) -> Result<Vec<NStepLeaf>> {
    let mut frontier = vec![NStepLeaf {
        prob: 1.0,
        reward_sum: 0.0,
        state: start_state,
        action: start_action,
    }];
    let mut discount = 1.0;
    for depth in 0..n {
        let mut next = Vec::with_capacity(frontier.len() * mdp.n_states);
        for leaf in &frontier {
            let reward_sum = leaf.reward_sum + discount * mdp.reward(leaf.state, leaf.action);
            let p_next = mdp.row(leaf.state, leaf.action);
            for sp in 0..mdp.n_states {
                if p_next[sp] == 0.0 {
                    continue;
                }
                // both intermediate and bootstrap actions follow the policy
                for ap in 0..mdp.n_actions {
                    let w = policy.prob(sp, ap);
                    if w == 0.0 {
                        continue;
                    }
                    next.push(NStepLeaf {
                        prob: leaf.prob * p_next[sp] * w,
                        reward_sum,
                        state: sp,
                        action: ap,
                    });
                }
            }
            if next.len() > ENUMERATION_CAP {
                return Err(Error::InvalidArgument(format!(
                    "trajectory enumeration exceeded {ENUMERATION_CAP} leaves at depth {depth}"
                )));
            }
        }
        frontier = next;
        discount *= gamma;
    }
    Ok(frontier)
}

/// Exact n-step distributional operator: enumerate length-n trajectories,
/// shift-scale the bootstrap distribution of each leaf, mix by trajectory
/// probability, project once.
pub fn nstep_dist_operator(
    mdp: &TabularMDP,
    policy: &TabularPolicy,
    z: &ReturnDistTable,
    n: u32,
) -> Result<ReturnDistTable> {
    if n < 1 {
        return Err(Error::InvalidArgument("n-step horizon must be >= 1".into()));
    }
    policy.validate(mdp)?;
    let support = &z.support;
    let gamma = mdp.gamma;
    let gamma_n = gamma.powi(n as i32);
    let mut dists = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        for act in 0..mdp.n_actions {
            let leaves = enumerate_nstep_leaves(mdp, policy, s, act, n, gamma)?;
            let mut out = vec![0.0; support.n_atoms];
            for leaf in leaves {
                let values = shift_scale_targets(support, leaf.reward_sum, gamma_n, true);
                let weighted: Vec<f64> = z
                    .entry(leaf.state, leaf.action)
                    .iter()
                    .map(|p| p * leaf.prob)
                    .collect();
                project_into(support, &values, &weighted, &mut out)?;
            }
            dists.push(out);
        }
    }
    Ok(ReturnDistTable { support: support.clone(), dists, n_actions: mdp.n_actions })
}

/// Exact finite-horizon return distribution per (state, action), as a list
/// of (return, probability) outcomes from full trajectory enumeration.
#[derive(Debug, Clone)]
pub struct ReturnSamples {
    pub outcomes: Vec<Vec<(f64, f64)>>,
    pub n_actions: usize,
}

impl ReturnSamples {
    pub fn entry(&self, state: usize, action: usize) -> &[(f64, f64)] {
        &self.outcomes[state * self.n_actions + action]
    }

    pub fn mean(&self, state: usize, action: usize) -> f64 {
        self.entry(state, action).iter().map(|(v, p)| v * p).sum()
    }
}

/// Enumerate every length-`horizon` trajectory and its probability.
pub fn brute_force_returns(
    mdp: &TabularMDP,
    policy: &TabularPolicy,
    horizon: u32,
    gamma: f64,
) -> Result<ReturnSamples> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    policy.validate(mdp)?;
    let mut outcomes = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        for act in 0..mdp.n_actions {
            let leaves = enumerate_nstep_leaves(mdp, policy, s, act, horizon, gamma)?;
            // returns repeat across leaves; aggregate identical values
            let mut agg: Vec<(f64, f64)> = Vec::new();
            for leaf in leaves {
                match agg.iter_mut().find(|(v, _)| *v == leaf.reward_sum) {
                    Some((_, p)) => *p += leaf.prob,
                    None => agg.push((leaf.reward_sum, leaf.prob)),
                }
            }
            agg.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            outcomes.push(agg);
        }
    }
    Ok(ReturnSamples { outcomes, n_actions: mdp.n_actions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::chain6;
    use crate::rng::DetRng;
    use crate::valuedist::make_support;

    fn forward_policy() -> TabularPolicy {
        TabularPolicy::Deterministic(vec![0; 6])
    }

    fn wide_support() -> Arc<Support> {
        // strictly contains [0, R_max / (1 - gamma)] = [0, 10] for chain6
        Arc::new(make_support(-1.0, 11.0, 121).unwrap())
    }

    fn random_mdp(rng: &mut DetRng, n_states: usize, n_actions: usize, gamma: f64) -> TabularMDP {
        let mut transition = vec![0.0; n_states * n_actions * n_states];
        let mut rewards = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            for a in 0..n_actions {
                let mut row: Vec<f64> = (0..n_states).map(|_| rng.uniform(0.0, 1.0)).collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
                // exact renormalization so the row sums to 1 within 1e-12
                let total: f64 = row.iter().sum();
                row[n_states - 1] += 1.0 - total;
                for (sp, p) in row.into_iter().enumerate() {
                    transition[(s * n_actions + a) * n_states + sp] = p;
                }
                rewards[s * n_actions + a] = rng.uniform(0.0, 1.0);
            }
        }
        TabularMDP::new(n_states, n_actions, transition, rewards, gamma).unwrap()
    }

    #[test]
    fn zero_rewards_give_zero_q() {
        let mut mdp = chain6();
        mdp.rewards.iter_mut().for_each(|r| *r = 0.0);
        let q = exact_q(&mdp, &forward_policy(), 0.9).unwrap();
        assert!(q.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn absorbing_state_geometric_series() {
        // one state, one action, reward 1, self-loop: Q = 1 / (1 - 0.9) = 10
        let mdp = TabularMDP::new(1, 1, vec![1.0], vec![1.0], 0.9).unwrap();
        let q = exact_q(&mdp, &TabularPolicy::Deterministic(vec![0]), 0.9).unwrap();
        assert!((q[0] - 10.0).abs() < 1e-10);
    }

    #[test]
    fn bellman_residual_vanishes_at_solution() {
        let mut rng = DetRng::new(14);
        for _ in 0..5 {
            let mdp = random_mdp(&mut rng, 6, 2, 0.9);
            let policy = TabularPolicy::Stochastic(vec![vec![0.3, 0.7]; 6]);
            let q = exact_q(&mdp, &policy, 0.9).unwrap();
            assert!(bellman_residual(&mdp, &policy, 0.9, &q) <= 1e-10);
        }
    }

    #[test]
    fn greedy_policy_iteration_reaches_a_fixed_point() {
        let mdp = chain6();
        let mut policy = TabularPolicy::Deterministic(vec![1; 6]);
        for _ in 0..20 {
            let q = exact_q(&mdp, &policy, mdp.gamma).unwrap();
            let improved = greedy_from_q(&mdp, &q);
            if improved == policy {
                break;
            }
            policy = improved;
        }
        let q = exact_q(&mdp, &policy, mdp.gamma).unwrap();
        assert_eq!(greedy_from_q(&mdp, &q), policy);
        // the optimal chain policy walks forward everywhere
        assert_eq!(policy, TabularPolicy::Deterministic(vec![0; 6]));
    }

    #[test]
    fn dist_eval_gamma_zero_is_projected_reward_point_mass() {
        let mut mdp = chain6();
        mdp.gamma = 0.0;
        let support = wide_support();
        let z = dist_eval(&mdp, &forward_policy(), &support, 100).unwrap();
        for s in 0..6 {
            let r = mdp.reward(s, 0);
            let mean = z.expectation(s, 0);
            assert!((mean - r).abs() < 1e-9, "state {s}: {mean} vs {r}");
            // all mass within one atom of the reward
            for (i, &p) in z.entry(s, 0).iter().enumerate() {
                if p > 1e-12 {
                    assert!((support.atoms[i] - r).abs() <= support.delta + 1e-12);
                }
            }
        }
    }

    #[test]
    fn fifty_fifty_bootstrap_splits_mass() {
        // start state transitions 50/50 into absorbing values 0 and 2;
        // with gamma = 0.5 the start distribution is half at 0, half at 1
        let n_states = 3;
        let n_actions = 1;
        let mut transition = vec![0.0; 9];
        transition[1] = 0.5; // start -> low absorber
        transition[2] = 0.5; // start -> high absorber
        transition[4] = 1.0; // low self-loop
        transition[8] = 1.0; // high self-loop
        let rewards = vec![0.0, 0.0, 1.0];
        let mdp = TabularMDP::new(n_states, n_actions, transition, rewards, 0.5).unwrap();
        let support = Arc::new(make_support(0.0, 2.0, 5).unwrap());
        let z = dist_eval(&mdp, &TabularPolicy::Deterministic(vec![0; 3]), &support, 200).unwrap();
        let start = z.entry(0, 0);
        assert!((start[0] - 0.5).abs() < 1e-8, "mass at 0: {}", start[0]);
        assert!((start[2] - 0.5).abs() < 1e-8, "mass at 1: {}", start[2]);
    }

    #[test]
    fn dist_eval_expectation_matches_exact_q() {
        let mdp = chain6();
        let policy = forward_policy();
        let support = wide_support();
        let z = dist_eval(&mdp, &policy, &support, 1000).unwrap();
        let q = exact_q(&mdp, &policy, mdp.gamma).unwrap();
        for s in 0..6 {
            for a in 0..2 {
                let diff = (z.expectation(s, a) - q[s * 2 + a]).abs();
                assert!(diff <= 2.0 * support.delta, "({s},{a}): diff {diff}");
            }
        }
    }

    #[test]
    fn contraction_rate_bounded_by_gamma() {
        let mdp = chain6();
        let policy = forward_policy();
        let support = wide_support();
        let fixed = dist_eval(&mdp, &policy, &support, 1000).unwrap();
        let mut z = ReturnDistTable::uniform_point(support, &mdp);
        let mut last_err = f64::INFINITY;
        for iter in 0..40 {
            z = one_step_operator(&mdp, &policy, &z).unwrap();
            let err = (0..6)
                .flat_map(|s| (0..2).map(move |a| (s, a)))
                .map(|(s, a)| (z.expectation(s, a) - fixed.expectation(s, a)).abs())
                .fold(0.0, f64::max);
            if iter > 0 && last_err > 1e-12 {
                assert!(
                    err <= mdp.gamma * last_err + 1e-9,
                    "iter {iter}: {err} vs gamma * {last_err}"
                );
            }
            last_err = err;
        }
    }

    #[test]
    fn nstep_with_n1_equals_one_step_operator() {
        let mdp = chain6();
        let policy = TabularPolicy::Stochastic(vec![vec![0.6, 0.4]; 6]);
        let support = wide_support();
        let z = dist_eval(&mdp, &policy, &support, 1000).unwrap();
        let a = one_step_operator(&mdp, &policy, &z).unwrap();
        let b = nstep_dist_operator(&mdp, &policy, &z, 1).unwrap();
        for (x, y) in a.dists.iter().zip(&b.dists) {
            for (p, q) in x.iter().zip(y) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nstep_two_matches_composed_one_steps_in_expectation() {
        let mdp = chain6();
        let policy = forward_policy();
        let support = wide_support();
        let z = dist_eval(&mdp, &policy, &support, 1000).unwrap();
        let composed = one_step_operator(&mdp, &policy, &one_step_operator(&mdp, &policy, &z).unwrap()).unwrap();
        let direct = nstep_dist_operator(&mdp, &policy, &z, 2).unwrap();
        for s in 0..6 {
            for a in 0..2 {
                let diff = (composed.expectation(s, a) - direct.expectation(s, a)).abs();
                assert!(diff <= support.delta, "({s},{a}): {diff}");
            }
        }
    }

    #[test]
    fn nstep_deterministic_chain_hand_computed() {
        // 3-state deterministic cycle, rewards 0.1 / 0.2 / 0.4, gamma 0.5:
        // two steps from (0, fwd) accumulate 0.1 + 0.5 * 0.2 = 0.2 and land
        // on state 2 with discount 0.25
        let transition = vec![
            0.0, 1.0, 0.0, // s0
            0.0, 0.0, 1.0, // s1
            1.0, 0.0, 0.0, // s2
        ];
        let rewards = vec![0.1, 0.2, 0.4];
        let mdp = TabularMDP::new(3, 1, transition, rewards, 0.5).unwrap();
        let policy = TabularPolicy::Deterministic(vec![0; 3]);
        let support = Arc::new(make_support(0.0, 1.0, 101).unwrap());
        // bootstrap table: point mass at 0.4 for every entry
        let mut z = ReturnDistTable::uniform_point(support.clone(), &mdp);
        for d in z.dists.iter_mut() {
            d.iter_mut().for_each(|p| *p = 0.0);
            d[40] = 1.0; // atom 0.4
        }
        let out = nstep_dist_operator(&mdp, &policy, &z, 2).unwrap();
        // expected point target: 0.2 + 0.25 * 0.4 = 0.3, exactly on atom 30
        let e = out.entry(0, 0);
        assert!((e[30] - 1.0).abs() < 1e-12, "mass at 0.3: {}", e[30]);
        assert!((out.expectation(0, 0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn brute_force_horizon_one_is_reward_point_mass() {
        let mdp = chain6();
        let samples = brute_force_returns(&mdp, &forward_policy(), 1, 0.9).unwrap();
        for s in 0..6 {
            let outcomes = samples.entry(s, 0);
            assert!(outcomes.iter().all(|(v, _)| *v == mdp.reward(s, 0)));
            let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn brute_force_deterministic_chain_single_outcome() {
        let transition = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let rewards = vec![0.1, 0.2, 0.4];
        let mdp = TabularMDP::new(3, 1, transition, rewards, 0.5).unwrap();
        let samples =
            brute_force_returns(&mdp, &TabularPolicy::Deterministic(vec![0; 3]), 4, 0.5).unwrap();
        let outcomes = samples.entry(0, 0);
        assert_eq!(outcomes.len(), 1);
        // 0.1 + 0.5*0.2 + 0.25*0.4 + 0.125*0.1
        assert!((outcomes[0].0 - 0.3125).abs() < 1e-15);
        assert_eq!(outcomes[0].1, 1.0);
    }

    #[test]
    fn brute_force_mean_matches_exact_q_within_tail_bound() {
        let mdp = chain6();
        let policy = forward_policy();
        let gamma = 0.9;
        let horizon = 10;
        let samples = brute_force_returns(&mdp, &policy, horizon, gamma).unwrap();
        let q = exact_q(&mdp, &policy, gamma).unwrap();
        let bound = gamma.powi(horizon as i32) * mdp.max_reward() / (1.0 - gamma);
        for s in 0..6 {
            for a in 0..2 {
                let diff = (samples.mean(s, a) - q[s * 2 + a]).abs();
                assert!(diff <= bound, "({s},{a}): {diff} > {bound}");
            }
        }
    }

    #[test]
    fn enumeration_cap_guards_blowup() {
        let mut rng = DetRng::new(3);
        let mdp = random_mdp(&mut rng, 8, 4, 0.9);
        let policy = TabularPolicy::Stochastic(vec![vec![0.25; 4]; 8]);
        // 8 states x 4 actions fully connected: 32^8 leaves, must refuse
        assert!(brute_force_returns(&mdp, &policy, 8, 0.9).is_err());
    }

    #[test]
    fn operators_preserve_normalization() {
        let mdp = chain6();
        let policy = forward_policy();
        let support = wide_support();
        let mut z = ReturnDistTable::uniform_point(support, &mdp);
        for _ in 0..20 {
            z = one_step_operator(&mdp, &policy, &z).unwrap();
            for d in &z.dists {
                let total: f64 = d.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
                assert!(d.iter().all(|p| *p >= -1e-15));
            }
        }
        let n3 = nstep_dist_operator(&mdp, &policy, &z, 3).unwrap();
        for d in &n3.dists {
            let total: f64 = d.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
