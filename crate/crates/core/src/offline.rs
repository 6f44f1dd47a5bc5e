//! Pessimistic value iteration on the downstream task using a learned (or
//! oracle) feature map, plus offline dataset generation and the
//! feature-coverage diagnostic.
//!
//! The backup runs backward over steps: ridge-regress the next-step value
//! onto the features, subtract the uncertainty metric
//! `Gamma_h = xi_down + beta * ||phi||_{Lambda^{-1}}`, clamp into `[0, 1]`,
//! and act greedily. `xi_down` is an explicit input: either the certified
//! value from the family constants or a user override (0 for oracle-feature
//! baselines).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::linalg::SymMatrix;
use crate::math;
use crate::mdp::{occupancy, FeatureTable, Policy, RewardTable, TabularLowRankMdp};
use crate::rng::SplitRng;
use crate::Result;

/// One recorded transition of one offline trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OfflineRecord {
    pub trajectory: usize,
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Behavior-policy rollouts: exactly `num_trajectories * horizon` records.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub num_trajectories: usize,
    pub horizon: usize,
    pub records: Vec<OfflineRecord>,
    /// Content tag of the behavior policy that produced the data.
    pub behavior_tag: u64,
    pub seed: u64,
}

impl OfflineDataset {
    /// Records of step `h`, in trajectory order.
    pub fn step_records(&self, h: usize) -> impl Iterator<Item = &OfflineRecord> {
        self.records.iter().filter(move |r| r.step == h)
    }
}

/// Roll `num_trajectories` independent episodes of the behavior policy.
pub fn gen_offline_dataset(
    mdp: &TabularLowRankMdp,
    reward: &RewardTable,
    behavior: &Policy,
    num_trajectories: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if num_trajectories == 0 {
        return Err(CoreError::InvalidValue {
            what: "offline dataset needs at least one trajectory",
        });
    }
    let root = SplitRng::new(seed);
    let mut records = Vec::with_capacity(num_trajectories * mdp.horizon());
    for traj in 0..num_trajectories {
        let traj_seed = root.split(traj as u64).next_u64();
        let episode = crate::mdp::sample_trajectory(mdp, reward, behavior, traj_seed)?;
        for (h, step) in episode.steps.iter().enumerate() {
            records.push(OfflineRecord {
                trajectory: traj,
                step: h,
                state: step.state,
                action: step.action,
                reward: step.reward,
                next_state: step.next_state,
            });
        }
    }
    Ok(OfflineDataset {
        num_trajectories,
        horizon: mdp.horizon(),
        records,
        behavior_tag: behavior
            .data()
            .iter()
            .map(|x| x.to_bits())
            .fold(0u64, |a, b| a ^ b.rotate_left(17)),
        seed,
    })
}

/// Regularized least squares of targets onto step-`h` features:
/// `w = (lambda I + sum phi phi^T)^{-1} sum phi * target`.
pub fn ridge_weights(
    phi: &FeatureTable,
    step: usize,
    pairs: &[(usize, usize)],
    targets: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    if pairs.len() != targets.len() {
        return Err(CoreError::ShapeMismatch {
            what: "ridge pairs vs targets",
        });
    }
    if lambda <= 0.0 {
        return Err(CoreError::InvalidValue {
            what: "ridge regularizer must be positive",
        });
    }
    for &t in targets {
        if !(0.0..=1.0).contains(&t) {
            return Err(CoreError::InvalidValue {
                what: "ridge targets must lie in [0, 1]",
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
    if !gram.is_finite() || moment.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Numerical {
            what: "ridge accumulated non-finite entries",
            step,
        });
    }
    Ok(gram.cholesky()?.solve(&moment))
}

/// Parameters of the pessimistic backup.
#[derive(Clone, Debug, PartialEq)]
pub struct PessimismConfig {
    pub lambda: f64,
    pub c_beta: f64,
    pub delta: f64,
    /// Certified or user-supplied feature misspecification bound.
    pub xi_down: f64,
    /// Reward-class complexity entering the confidence width.
    pub reward_dim: usize,
}

impl Default for PessimismConfig {
    fn default() -> Self {
        PessimismConfig {
            lambda: 1.0,
            c_beta: 1.0,
            delta: 0.05,
            xi_down: 0.0,
            reward_dim: 1,
        }
    }
}

impl PessimismConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0
            || self.c_beta <= 0.0
            || !(self.delta > 0.0 && self.delta < 1.0)
            || self.xi_down < 0.0
            || self.reward_dim == 0
        {
            return Err(CoreError::InvalidValue {
                what: "pessimism config out of range",
            });
        }
        Ok(())
    }

    /// Confidence width `beta = c * (d sqrt(iota) + sqrt(d N) xi + sqrt(p ln N))`
    /// with `iota = ln(2 p d H N max(xi, 1) / delta)`.
    pub fn beta(&self, dim: usize, horizon: usize, n_off: usize) -> (f64, f64) {
        let d = dim as f64;
        let p = self.reward_dim as f64;
        let n = n_off as f64;
        let iota = math::ln(2.0 * p * d * horizon as f64 * n * self.xi_down.max(1.0) / self.delta);
        let beta = self.c_beta
            * (d * math::sqrt(iota)
                + math::sqrt(d * n) * self.xi_down
                + math::sqrt(p * math::ln(n)));
        (beta, iota)
    }
}

/// Per-step spread of the uncertainty metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Diagnostics reported next to the greedy policy. With unit multipliers
/// the width can dominate at desk scale, so the pessimistic value estimate
/// is always reported alongside the true gap.
#[derive(Clone, Debug, PartialEq)]
pub struct PeviDiagnostics {
    pub beta: f64,
    pub iota: f64,
    pub per_step_gamma: Vec<GammaStats>,
    /// Pessimistic value estimate at the initial state.
    pub initial_value: f64,
    /// Max over all cells of `Q_hat - clamp(r + phi^T w, 0, 1)`: the
    /// deterministic core of the pessimism guarantee, never above zero.
    pub max_q_above_unpenalized: f64,
}

/// Pessimistic value iteration over the offline dataset. The reward table
/// supplies `r_h(s, a)` for all cells, matching the recorded rewards.
pub fn pevi(
    dataset: &OfflineDataset,
    phi: &FeatureTable,
    reward: &RewardTable,
    config: &PessimismConfig,
) -> Result<(Policy, PeviDiagnostics)> {
    config.validate()?;
    if dataset.records.is_empty() {
        return Err(CoreError::InvalidValue {
            what: "pevi requires a nonempty dataset",
        });
    }
    if phi.horizon != dataset.horizon
        || reward.horizon != dataset.horizon
        || reward.num_states != phi.num_states
        || reward.num_actions != phi.num_actions
    {
        return Err(CoreError::ShapeMismatch {
            what: "pevi feature table vs dataset vs reward",
        });
    }
    let (h_n, s_n, k_n, d) = (phi.horizon, phi.num_states, phi.num_actions, phi.dim);
    let (beta, iota) = config.beta(d, h_n, dataset.num_trajectories);

    // Group records by step once.
    let mut by_step: Vec<Vec<&OfflineRecord>> = vec![Vec::new(); h_n];
    for r in &dataset.records {
        by_step[r.step].push(r);
    }

    let mut v_next = vec![0.0; s_n];
    let mut actions = vec![0usize; h_n * s_n];
    let mut max_q_above_unpenalized = f64::NEG_INFINITY;
    let mut per_step_gamma = vec![
        GammaStats {
            min: 0.0,
            mean: 0.0,
            max: 0.0
        };
        h_n
    ];
    for h in (0..h_n).rev() {
        let recs = &by_step[h];
        let mut gram = SymMatrix::scaled_identity(d, config.lambda);
        let mut moment = vec![0.0; d];
        for r in recs {
            let row = phi.row(h, r.state, r.action);
            gram.add_outer(row);
            let target = v_next[r.next_state];
            for j in 0..d {
                moment[j] += row[j] * target;
            }
        }
        if !gram.is_finite() {
            return Err(CoreError::Numerical {
                what: "pevi covariance non-finite",
                step: h,
            });
        }
        let chol = gram.cholesky()?;
        let w = chol.solve(&moment);

        let mut v = vec![0.0; s_n];
        let mut gmin = f64::INFINITY;
        let mut gmax = f64::NEG_INFINITY;
        let mut gsum = 0.0;
        for s in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..k_n {
                let row = phi.row(h, s, a);
                let gamma = config.xi_down + beta * math::sqrt(chol.quad_form_inv(row).max(0.0));
                if !gamma.is_finite() {
                    return Err(CoreError::Numerical {
                        what: "pevi uncertainty non-finite",
                        step: h,
                    });
                }
                gmin = gmin.min(gamma);
                gmax = gmax.max(gamma);
                gsum += gamma;
                let estimate = reward.get(h, s, a) + math::dot(row, &w);
                let q = math::clamp(estimate - gamma, 0.0, 1.0);
                max_q_above_unpenalized =
                    max_q_above_unpenalized.max(q - math::clamp(estimate, 0.0, 1.0));
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            v[s] = best;
            actions[h * s_n + s] = best_a;
        }
        per_step_gamma[h] = GammaStats {
            min: gmin,
            mean: gsum / (s_n * k_n) as f64,
            max: gmax,
        };
        v_next = v;
    }

    let policy = Policy::deterministic(h_n, s_n, k_n, &actions);
    let diagnostics = PeviDiagnostics {
        beta,
        iota,
        per_step_gamma,
        initial_value: v_next[0],
        max_q_above_unpenalized,
    };
    Ok((policy, diagnostics))
}

/// Minimum over steps of the smallest eigenvalue of the behavior policy's
/// expected feature covariance, from exact occupancy.
pub fn feature_coverage(
    behavior: &Policy,
    mdp: &TabularLowRankMdp,
    phi: &FeatureTable,
) -> Result<f64> {
    if phi.horizon != mdp.horizon()
        || phi.num_states != mdp.num_states()
        || phi.num_actions != mdp.num_actions()
    {
        return Err(CoreError::ShapeMismatch {
            what: "feature table vs mdp",
        });
    }
    let occ = occupancy(mdp, behavior)?;
    let mut min_eig = f64::INFINITY;
    for h in 0..mdp.horizon() {
        let mut sigma = SymMatrix::scaled_identity(phi.dim, 0.0);
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let w = occ.get(h, s, a);
                if w != 0.0 {
                    sigma.add_outer_scaled(phi.row(h, s, a), w);
                }
            }
        }
        let eig = sigma.min_eigenvalue();
        if eig < min_eig {
            min_eig = eig;
        }
    }
    // Covariances are PSD; clip the Jacobi rounding noise.
    Ok(min_eig.max(0.0))
}

/// One-hot feature table of dimension `S * K` (the oracle feature map for
/// which the downstream task is exactly linear).
pub fn one_hot_features(horizon: usize, num_states: usize, num_actions: usize) -> FeatureTable {
    let d = num_states * num_actions;
    let mut data = vec![0.0; horizon * num_states * num_actions * d];
    for h in 0..horizon {
        for s in 0..num_states {
            for a in 0..num_actions {
                let cell = s * num_actions + a;
                let base = ((h * num_states + s) * num_actions + a) * d;
                data[base + cell] = 1.0;
            }
        }
    }
    FeatureTable::from_raw(horizon, num_states, num_actions, d, data)
        .expect("one-hot rows are simplex vertices")
}
