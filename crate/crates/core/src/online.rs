//! Optimistic least-squares value iteration on the downstream task.
//!
//! Each episode rebuilds the optimistic action-value tables backward from
//! the trajectories collected so far (the per-step Gram matrices grow by a
//! rank-one update per episode), executes the greedy policy once, and
//! records the realized quadratic forms for the elliptical-potential check.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::linalg::SymMatrix;
use crate::math;
use crate::mdp::{value_dp, FeatureTable, Policy, RewardTable, TabularLowRankMdp, Trajectory};
use crate::rng::SplitRng;
use crate::Result;

/// Parameters of the optimistic backup.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineConfig {
    pub lambda: f64,
    pub c_beta: f64,
    pub delta: f64,
    pub xi_down: f64,
    pub reward_dim: usize,
    pub num_episodes: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            lambda: 1.0,
            c_beta: 1.0,
            delta: 0.05,
            xi_down: 0.0,
            reward_dim: 1,
            num_episodes: 500,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0
            || self.c_beta <= 0.0
            || !(self.delta > 0.0 && self.delta < 1.0)
            || self.xi_down < 0.0
            || self.reward_dim == 0
            || self.num_episodes == 0
        {
            return Err(CoreError::InvalidValue {
                what: "online config out of range",
            });
        }
        Ok(())
    }

    /// Episode-n width `beta_n = c * (d sqrt(iota_n) + sqrt(n d) xi + sqrt(p ln n))`
    /// with `iota_n = ln(2 p d n H max(xi, 1) / delta)`.
    pub fn beta(&self, dim: usize, horizon: usize, episode: usize) -> (f64, f64) {
        let d = dim as f64;
        let p = self.reward_dim as f64;
        let n = episode as f64;
        let iota = math::ln(2.0 * p * d * n * horizon as f64 * self.xi_down.max(1.0) / self.delta);
        let beta = self.c_beta
            * (d * math::sqrt(iota)
                + math::sqrt(n * d) * self.xi_down
                + math::sqrt(p * math::ln(n)));
        (beta, iota)
    }
}

/// Full trace of one online run.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineRunRecord {
    pub trajectories: Vec<Trajectory>,
    /// Greedy policy executed in each episode.
    pub policies: Vec<Policy>,
    /// Optimistic value estimate `V^n_1(s_1)` per episode.
    pub optimistic_values: Vec<f64>,
    /// Realized return per episode.
    pub returns: Vec<f64>,
    /// `[step][episode]`: quadratic form of the realized state-action
    /// feature in the episode's inverse Gram matrix; the elliptical
    /// potential bounds each step's sum.
    pub bonus_trace: Vec<Vec<f64>>,
    pub seed: u64,
}

/// One optimistic backward step: `w = Lambda^{-1} sum phi * target` over
/// the step-`h` history, `Q(s, a) = clamp(r + phi^T w + beta ||phi||_{Lambda^{-1}}, 0, 1)`.
/// Returns the full `[S][K]` Q table and the weights.
pub fn optimistic_q_backup(
    phi: &FeatureTable,
    step: usize,
    pairs: &[(usize, usize)],
    targets: &[f64],
    reward: &RewardTable,
    beta: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if pairs.len() != targets.len() {
        return Err(CoreError::ShapeMismatch {
            what: "optimistic backup pairs vs targets",
        });
    }
    for &t in targets {
        if !(0.0..=1.0).contains(&t) {
            return Err(CoreError::InvalidValue {
                what: "optimistic backup targets must lie in [0, 1]",
            });
        }
    }
    let d = phi.dim;
    let mut gram = SymMatrix::scaled_identity(d, lambda);
    let mut moment = vec![0.0; d];
    for (&(s, a), &y) in pairs.iter().zip(targets) {
        let row = phi.row(step, s, a);
        gram.add_outer(row);
        for j in 0..d {
            moment[j] += row[j] * y;
        }
    }
    let chol = gram.cholesky()?;
    let w = chol.solve(&moment);
    let mut q = vec![0.0; phi.num_states * phi.num_actions];
    for s in 0..phi.num_states {
        for a in 0..phi.num_actions {
            let row = phi.row(step, s, a);
            let bonus = beta * math::sqrt(chol.quad_form_inv(row).max(0.0));
            if !bonus.is_finite() {
                return Err(CoreError::Numerical {
                    what: "optimistic bonus non-finite",
                    step,
                });
            }
            q[s * phi.num_actions + a] = math::clamp(
                reward.get(step, s, a) + math::dot(row, &w) + bonus,
                0.0,
                1.0,
            );
        }
    }
    Ok((q, w))
}

/// Run optimistic value iteration for `config.num_episodes` episodes on the
/// true downstream model. Deterministic given the seed.
pub fn run_lsvi_ucb(
    mdp: &TabularLowRankMdp,
    reward: &RewardTable,
    phi: &FeatureTable,
    config: &OnlineConfig,
    seed: u64,
) -> Result<OnlineRunRecord> {
    config.validate()?;
    if phi.horizon != mdp.horizon()
        || phi.num_states != mdp.num_states()
        || phi.num_actions != mdp.num_actions()
    {
        return Err(CoreError::ShapeMismatch {
            what: "feature table vs downstream mdp",
        });
    }
    let (h_n, s_n, k_n, d) = (mdp.horizon(), mdp.num_states(), mdp.num_actions(), phi.dim);
    let root = SplitRng::new(seed);

    // Per-step history and incrementally maintained Gram matrices.
    let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); h_n];
    let mut next_states: Vec<Vec<usize>> = vec![Vec::new(); h_n];
    let mut grams: Vec<SymMatrix> = (0..h_n)
        .map(|_| SymMatrix::scaled_identity(d, config.lambda))
        .collect();

    let mut record = OnlineRunRecord {
        trajectories: Vec::with_capacity(config.num_episodes),
        policies: Vec::with_capacity(config.num_episodes),
        optimistic_values: Vec::with_capacity(config.num_episodes),
        returns: Vec::with_capacity(config.num_episodes),
        bonus_trace: vec![Vec::with_capacity(config.num_episodes); h_n],
        seed,
    };

    for n in 1..=config.num_episodes {
        let (beta, _) = config.beta(d, h_n, n);
        // Backward pass: weights re-solved each episode as specified.
        let mut chols = Vec::with_capacity(h_n);
        let mut values = vec![vec![0.0; s_n]; h_n + 1];
        let mut actions = vec![0usize; h_n * s_n];
        for h in (0..h_n).rev() {
            let chol = grams[h].cholesky().map_err(|_| CoreError::Numerical {
                what: "online Gram factorization failed",
                step: h,
            })?;
            let mut moment = vec![0.0; d];
            for (&(s, a), &s_next) in pairs[h].iter().zip(&next_states[h]) {
                let row = phi.row(h, s, a);
                let target = values[h + 1][s_next];
                for j in 0..d {
                    moment[j] += row[j] * target;
                }
            }
            let w = chol.solve(&moment);
            for s in 0..s_n {
                let mut best = f64::NEG_INFINITY;
                let mut best_a = 0;
                for a in 0..k_n {
                    let row = phi.row(h, s, a);
                    let bonus = beta * math::sqrt(chol.quad_form_inv(row).max(0.0));
                    if !bonus.is_finite() {
                        return Err(CoreError::Numerical {
                            what: "online bonus non-finite",
                            step: h,
                        });
                    }
                    let q = math::clamp(reward.get(h, s, a) + math::dot(row, &w) + bonus, 0.0, 1.0);
                    if q > best {
                        best = q;
                        best_a = a;
                    }
                }
                values[h][s] = best;
                actions[h * s_n + s] = best_a;
            }
            chols.push(chol);
        }
        chols.reverse(); // indexed by step again

        let policy = Policy::deterministic(h_n, s_n, k_n, &actions);
        record
            .optimistic_values
            .push(values[0][mdp.initial_state()]);

        // Forward pass: execute the greedy policy once.
        let mut rng = root.split(n as u64);
        let mut s = mdp.initial_state();
        let mut steps = Vec::with_capacity(h_n);
        let mut ret = 0.0;
        for h in 0..h_n {
            let a = actions[h * s_n + s];
            let row = phi.row(h, s, a);
            record.bonus_trace[h].push(chols[h].quad_form_inv(row).max(0.0));
            let next = rng.sample_index(mdp.kernel_row(h, s, a));
            let r = reward.get(h, s, a);
            ret += r;
            steps.push(crate::mdp::TrajectoryStep {
                state: s,
                action: a,
                reward: r,
                next_state: next,
            });
            // The history grows only after the quadratic form is recorded.
            pairs[h].push((s, a));
            next_states[h].push(next);
            grams[h].add_outer(row);
            s = next;
        }
        record.returns.push(ret);
        record.policies.push(policy);
        record.trajectories.push(Trajectory {
            steps,
            seed: n as u64,
        });
    }
    Ok(record)
}

/// Exact value of the uniform mixture of the recorded episode policies.
pub fn mixture_value(
    record: &OnlineRunRecord,
    mdp: &TabularLowRankMdp,
    reward: &RewardTable,
) -> Result<f64> {
    if record.policies.is_empty() {
        return Err(CoreError::InvalidValue {
            what: "mixture over an empty record",
        });
    }
    let mut total = 0.0;
    for policy in &record.policies {
        total += value_dp(mdp, reward, policy)?;
    }
    Ok(total / record.policies.len() as f64)
}

/// Fraction of episodes whose optimistic value estimate, inflated by the
/// misspecification allowance, upper-bounds the optimal value. Reported as
/// a statistic; near-optimism is a high-probability claim, not an
/// invariant.
pub fn near_optimism_fraction(record: &OnlineRunRecord, v_star: f64, xi_down: f64) -> f64 {
    if record.optimistic_values.is_empty() {
        return 1.0;
    }
    let horizon = record.bonus_trace.len() as f64;
    let hits = record
        .optimistic_values
        .iter()
        .filter(|&&v| v + 2.0 * horizon * xi_down >= v_star - 1e-12)
        .count();
    hits as f64 / record.optimistic_values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen;

    fn fixture() -> (TabularLowRankMdp, RewardTable) {
        let mdp = envgen::random_mdp(5, 3, 4, 2, 60);
        let reward = envgen::random_reward(5, 3, 4, 3, 61);
        (mdp, reward)
    }

    #[test]
    fn first_episode_backup_has_zero_weights() {
        let (mdp, reward) = fixture();
        let phi = mdp.features();
        let beta = 0.3;
        let (q, w) = optimistic_q_backup(phi, 1, &[], &[], &reward, beta, 1.0).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
        for s in 0..5 {
            for a in 0..3 {
                let row = phi.row(1, s, a);
                let expect = math::clamp(reward.get(1, s, a) + beta * math::norm2(row), 0.0, 1.0);
                assert!((q[s * 3 + a] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backup_monotone_in_beta() {
        let (mdp, reward) = fixture();
        let phi = mdp.features();
        let pairs = [(0, 0), (1, 2), (3, 1), (2, 2)];
        let targets = [0.2, 0.8, 0.5, 0.1];
        let (q1, _) = optimistic_q_backup(phi, 2, &pairs, &targets, &reward, 0.1, 1.0).unwrap();
        let (q2, _) = optimistic_q_backup(phi, 2, &pairs, &targets, &reward, 0.5, 1.0).unwrap();
        for (a, b) in q1.iter().zip(&q2) {
            assert!(b >= a);
        }
    }

    #[test]
    fn run_is_seed_deterministic_and_bounded() {
        let (mdp, reward) = fixture();
        let config = OnlineConfig {
            num_episodes: 40,
            reward_dim: 3,
            ..OnlineConfig::default()
        };
        let a = run_lsvi_ucb(&mdp, &reward, mdp.features(), &config, 5).unwrap();
        let b = run_lsvi_ucb(&mdp, &reward, mdp.features(), &config, 5).unwrap();
        assert_eq!(a, b);
        for (vs, ret) in a.optimistic_values.iter().zip(&a.returns) {
            assert!((0.0..=1.0).contains(vs));
            assert!(*ret <= 1.0 + 1e-12);
        }
        assert_eq!(a.policies.len(), 40);
        assert_eq!(a.trajectories.len(), 40);
        for h in 0..4 {
            assert_eq!(a.bonus_trace[h].len(), 40);
        }
    }

    #[test]
    fn elliptical_potential_on_realized_trace() {
        let (mdp, reward) = fixture();
        let config = OnlineConfig {
            num_episodes: 120,
            reward_dim: 3,
            ..OnlineConfig::default()
        };
        let record = run_lsvi_ucb(&mdp, &reward, mdp.features(), &config, 11).unwrap();
        let d = mdp.features().dim as f64;
        let n = config.num_episodes as f64;
        let bound = 2.0 * d * math::ln(1.0 + n / (d * config.lambda));
        for h in 0..4 {
            let lhs: f64 = record.bonus_trace[h].iter().sum();
            assert!(lhs <= bound + 1e-9, "step {h}: {lhs} > {bound}");
        }
    }

    #[test]
    fn mixture_value_matches_per_policy_average() {
        let (mdp, reward) = fixture();
        let config = OnlineConfig {
            num_episodes: 12,
            reward_dim: 3,
            ..OnlineConfig::default()
        };
        let record = run_lsvi_ucb(&mdp, &reward, mdp.features(), &config, 2).unwrap();
        let v = mixture_value(&record, &mdp, &reward).unwrap();
        let mut manual = 0.0;
        for p in &record.policies {
            manual += value_dp(&mdp, &reward, p).unwrap();
        }
        manual /= record.policies.len() as f64;
        assert!((v - manual).abs() < 1e-12);
        // Single-episode record reduces to that policy's value.
        let single = OnlineRunRecord {
            trajectories: record.trajectories[..1].to_vec(),
            policies: record.policies[..1].to_vec(),
            optimistic_values: record.optimistic_values[..1].to_vec(),
            returns: record.returns[..1].to_vec(),
            bonus_trace: record.bonus_trace.iter().map(|t| t[..1].to_vec()).collect(),
            seed: record.seed,
        };
        let v1 = mixture_value(&single, &mdp, &reward).unwrap();
        let direct = value_dp(&mdp, &reward, &record.policies[0]).unwrap();
        assert!((v1 - direct).abs() < 1e-15);
    }
}
