//! Finite episodic low-rank MDP: dense tables, exact dynamic programming,
//! occupancy measures and seeded trajectory sampling.
//!
//! States and actions are dense integer indices; every table is a flat
//! row-major array (desk scale, |S| <= ~64). Kernel validity is guaranteed
//! by construction (simplex feature rows, column-stochastic measures) and
//! re-checked whenever a model is built from raw tables: row sums may drift
//! by at most 1e-6 (the disk tolerance), inner products may be negative by
//! at most 1e-12 (clamped to zero, row renormalized), anything worse is
//! rejected. Ties in every argmax break toward the lowest index.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::rng::SplitRng;
use crate::Result;

/// Row-sum drift tolerated when building a model from raw tables.
pub const LOAD_TOL: f64 = 1e-6;
/// Most negative inner product tolerated before rejection.
pub const NEG_TOL: f64 = -1e-12;

/// Per-step state-action feature map: `[H][S][K] -> R^d`, each row on the
/// probability simplex (hence `||phi||_2 <= 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl FeatureTable {
    pub fn from_raw(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 || dim == 0 {
            return Err(CoreError::InvalidValue {
                what: "feature table dimensions must be positive",
            });
        }
        if data.len() != horizon * num_states * num_actions * dim {
            return Err(CoreError::ShapeMismatch {
                what: "feature table data length",
            });
        }
        let t = FeatureTable {
            horizon,
            num_states,
            num_actions,
            dim,
            data,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let row = self.row(h, s, a);
                    let mut sum = 0.0;
                    for &x in row {
                        if !x.is_finite() || x < NEG_TOL {
                            return Err(CoreError::InvalidDistribution {
                                what: "feature row not on the simplex",
                                index: (h * self.num_states + s) * self.num_actions + a,
                                deviation: x,
                            });
                        }
                        sum += x;
                    }
                    if math::abs(sum - 1.0) > LOAD_TOL {
                        return Err(CoreError::InvalidDistribution {
                            what: "feature row sum",
                            index: (h * self.num_states + s) * self.num_actions + a,
                            deviation: sum - 1.0,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = ((h * self.num_states + s) * self.num_actions + a) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Restriction to a single step, kept as an H=1 table. Used when model
    /// selection picks a different candidate per step.
    pub fn step_slice(&self, h: usize) -> &[f64] {
        let stride = self.num_states * self.num_actions * self.dim;
        &self.data[h * stride..(h + 1) * stride]
    }
}

/// Per-step measure table: `[H][S'] -> R^d`, each latent coordinate a
/// distribution over next states (hence `||sum_s mu(s) g(s)||_2 <= sqrt(d)`
/// for any `g` into `[0,1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureTable {
    pub horizon: usize,
    pub num_states: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl MeasureTable {
    pub fn from_raw(horizon: usize, num_states: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if horizon == 0 || num_states == 0 || dim == 0 {
            return Err(CoreError::InvalidValue {
                what: "measure table dimensions must be positive",
            });
        }
        if data.len() != horizon * num_states * dim {
            return Err(CoreError::ShapeMismatch {
                what: "measure table data length",
            });
        }
        let t = MeasureTable {
            horizon,
            num_states,
            dim,
            data,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        for h in 0..self.horizon {
            for j in 0..self.dim {
                let mut sum = 0.0;
                for s in 0..self.num_states {
                    let x = self.row(h, s)[j];
                    if !x.is_finite() || x < NEG_TOL {
                        return Err(CoreError::InvalidDistribution {
                            what: "measure latent coordinate negative",
                            index: h * self.dim + j,
                            deviation: x,
                        });
                    }
                    sum += x;
                }
                if math::abs(sum - 1.0) > LOAD_TOL {
                    return Err(CoreError::InvalidDistribution {
                        what: "measure latent coordinate sum",
                        index: h * self.dim + j,
                        deviation: sum - 1.0,
                    });
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let i = (h * self.num_states + s) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn step_slice(&self, h: usize) -> &[f64] {
        let stride = self.num_states * self.dim;
        &self.data[h * stride..(h + 1) * stride]
    }
}

/// Finite episodic MDP whose step-h kernel is `<phi_h(s,a), mu_h(s')>`.
/// The full kernel is materialized (clamped, renormalized) at construction
/// so sampling and dynamic programming read validated rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularLowRankMdp {
    features: FeatureTable,
    measures: MeasureTable,
    initial_state: usize,
    kernel: Vec<f64>, // [H][S][K][S']
}

impl TabularLowRankMdp {
    pub fn new(
        features: FeatureTable,
        measures: MeasureTable,
        initial_state: usize,
    ) -> Result<Self> {
        if features.horizon != measures.horizon
            || features.num_states != measures.num_states
            || features.dim != measures.dim
        {
            return Err(CoreError::ShapeMismatch {
                what: "feature and measure tables",
            });
        }
        if initial_state >= features.num_states {
            return Err(CoreError::IndexOutOfRange {
                what: "initial state",
                index: initial_state,
                len: features.num_states,
            });
        }
        let (h_n, s_n, k_n) = (features.horizon, features.num_states, features.num_actions);
        let mut kernel = vec![0.0; h_n * s_n * k_n * s_n];
        for h in 0..h_n {
            for s in 0..s_n {
                for a in 0..k_n {
                    let phi = features.row(h, s, a);
                    let base = ((h * s_n + s) * k_n + a) * s_n;
                    let mut sum = 0.0;
                    let mut clamped = false;
                    for s2 in 0..s_n {
                        let mut p = math::dot(phi, measures.row(h, s2));
                        if p < 0.0 {
                            if p < NEG_TOL {
                                return Err(CoreError::InvalidDistribution {
                                    what: "kernel entry below clamp tolerance",
                                    index: base + s2,
                                    deviation: p,
                                });
                            }
                            p = 0.0;
                            clamped = true;
                        }
                        kernel[base + s2] = p;
                        sum += p;
                    }
                    if math::abs(sum - 1.0) > LOAD_TOL {
                        return Err(CoreError::InvalidDistribution {
                            what: "kernel row sum",
                            index: (h * s_n + s) * k_n + a,
                            deviation: sum - 1.0,
                        });
                    }
                    if clamped || math::abs(sum - 1.0) > 1e-12 {
                        for s2 in 0..s_n {
                            kernel[base + s2] /= sum;
                        }
                    }
                }
            }
        }
        Ok(TabularLowRankMdp {
            features,
            measures,
            initial_state,
            kernel,
        })
    }

    pub fn horizon(&self) -> usize {
        self.features.horizon
    }
    pub fn num_states(&self) -> usize {
        self.features.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.features.num_actions
    }
    pub fn dim(&self) -> usize {
        self.features.dim
    }
    pub fn initial_state(&self) -> usize {
        self.initial_state
    }
    pub fn features(&self) -> &FeatureTable {
        &self.features
    }
    pub fn measures(&self) -> &MeasureTable {
        &self.measures
    }

    /// Next-state distribution at `(h, s, a)`: the cached clamped kernel row.
    pub fn transition_dist(&self, h: usize, s: usize, a: usize) -> Result<&[f64]> {
        if h >= self.horizon() {
            return Err(CoreError::IndexOutOfRange {
                what: "step",
                index: h,
                len: self.horizon(),
            });
        }
        if s >= self.num_states() {
            return Err(CoreError::IndexOutOfRange {
                what: "state",
                index: s,
                len: self.num_states(),
            });
        }
        if a >= self.num_actions() {
            return Err(CoreError::IndexOutOfRange {
                what: "action",
                index: a,
                len: self.num_actions(),
            });
        }
        Ok(self.kernel_row(h, s, a))
    }

    #[inline]
    pub(crate) fn kernel_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let s_n = self.num_states();
        let base = ((h * s_n + s) * self.num_actions() + a) * s_n;
        &self.kernel[base..base + s_n]
    }

    pub(crate) fn content_tag(&self) -> u64 {
        math::content_tag(
            &[
                self.horizon(),
                self.num_states(),
                self.num_actions(),
                self.initial_state,
            ],
            &self.kernel,
        )
    }
}

/// Deterministic reward table with the generator provenance that produced
/// it. Normalization: per-trajectory return is at most 1, enforced through
/// the sufficient condition `sum_h max_{s,a} r_h <= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTable {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Dimension of the latent reward feature used by the generator.
    pub feature_dim: usize,
    /// Generator coefficients, retained for provenance only.
    pub theta: Vec<f64>,
    data: Vec<f64>, // [H][S][K]
}

impl RewardTable {
    pub fn from_raw(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        feature_dim: usize,
        theta: Vec<f64>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != horizon * num_states * num_actions {
            return Err(CoreError::ShapeMismatch {
                what: "reward table data length",
            });
        }
        let t = RewardTable {
            horizon,
            num_states,
            num_actions,
            feature_dim,
            theta,
            data,
        };
        let mut total = 0.0;
        for h in 0..horizon {
            let mut mx: f64 = 0.0;
            for s in 0..num_states {
                for a in 0..num_actions {
                    let r = t.get(h, s, a);
                    if !r.is_finite() || !(0.0..=1.0).contains(&r) {
                        return Err(CoreError::InvalidValue {
                            what: "reward entry outside [0, 1]",
                        });
                    }
                    mx = mx.max(r);
                }
            }
            total += mx;
        }
        if total > 1.0 + 1e-9 {
            return Err(CoreError::InvalidValue {
                what: "reward normalization: sum over steps of max reward exceeds 1",
            });
        }
        Ok(t)
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.data[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Stochastic policy: per `(h, s)` a probability vector over actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    probs: Vec<f64>, // [H][S][K]
}

impl Policy {
    /// Build from raw rows; rows may drift up to the disk tolerance and are
    /// renormalized so the stored rows sum to 1 exactly up to rounding.
    pub fn from_raw(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        mut probs: Vec<f64>,
    ) -> Result<Self> {
        if probs.len() != horizon * num_states * num_actions {
            return Err(CoreError::ShapeMismatch {
                what: "policy table data length",
            });
        }
        for hs in 0..horizon * num_states {
            let row = &mut probs[hs * num_actions..(hs + 1) * num_actions];
            let mut sum = 0.0;
            for &x in row.iter() {
                if !x.is_finite() || x < 0.0 {
                    return Err(CoreError::InvalidDistribution {
                        what: "policy row entry negative",
                        index: hs,
                        deviation: x,
                    });
                }
                sum += x;
            }
            if math::abs(sum - 1.0) > LOAD_TOL {
                return Err(CoreError::InvalidDistribution {
                    what: "policy row sum",
                    index: hs,
                    deviation: sum - 1.0,
                });
            }
            // Repair genuine drift only; rows already normalized up to
            // rounding pass through untouched so round-trips stay bit-exact.
            if math::abs(sum - 1.0) > 1e-12 {
                for x in row.iter_mut() {
                    *x /= sum;
                }
            }
        }
        Ok(Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    /// Uniform policy.
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Policy {
            horizon,
            num_states,
            num_actions,
            probs: vec![p; horizon * num_states * num_actions],
        }
    }

    /// Deterministic policy from an action table `[H][S]`.
    pub fn deterministic(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        actions: &[usize],
    ) -> Self {
        debug_assert_eq!(actions.len(), horizon * num_states);
        let mut probs = vec![0.0; horizon * num_states * num_actions];
        for (hs, &a) in actions.iter().enumerate() {
            probs[hs * num_actions + a] = 1.0;
        }
        Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        }
    }

    /// Random stochastic policy (rows drawn uniformly from the simplex).
    pub fn random(horizon: usize, num_states: usize, num_actions: usize, seed: u64) -> Self {
        let mut rng = SplitRng::new(seed);
        let mut probs = vec![0.0; horizon * num_states * num_actions];
        for hs in 0..horizon * num_states {
            let row = &mut probs[hs * num_actions..(hs + 1) * num_actions];
            crate::rng::sample_simplex(&mut rng, row);
        }
        Policy {
            horizon,
            num_states,
            num_actions,
            probs,
        }
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let i = (h * self.num_states + s) * self.num_actions;
        &self.probs[i..i + self.num_actions]
    }

    pub fn data(&self) -> &[f64] {
        &self.probs
    }

    pub(crate) fn content_tag(&self) -> u64 {
        math::content_tag(
            &[self.horizon, self.num_states, self.num_actions],
            &self.probs,
        )
    }
}

/// Exact per-step distribution over `(s, a)` induced by a policy under a
/// model; the workhorse behind every expectation this crate evaluates.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMeasure {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Content tags of the model and policy that produced this table.
    pub model_tag: u64,
    pub policy_tag: u64,
    occ: Vec<f64>, // [H][S][K]
}

impl OccupancyMeasure {
    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.occ[(h * self.num_states + s) * self.num_actions + a]
    }

    /// Marginal state visitation at `(h, s)`.
    pub fn state_mass(&self, h: usize, s: usize) -> f64 {
        let i = (h * self.num_states + s) * self.num_actions;
        self.occ[i..i + self.num_actions].iter().sum()
    }

    pub fn data(&self) -> &[f64] {
        &self.occ
    }
}

/// One sampled episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

fn check_policy_shape(mdp: &TabularLowRankMdp, policy: &Policy) -> Result<()> {
    if policy.horizon != mdp.horizon()
        || policy.num_states != mdp.num_states()
        || policy.num_actions != mdp.num_actions()
    {
        return Err(CoreError::ShapeMismatch {
            what: "policy vs mdp",
        });
    }
    Ok(())
}

fn check_reward_shape(mdp: &TabularLowRankMdp, reward: &RewardTable) -> Result<()> {
    if reward.horizon != mdp.horizon()
        || reward.num_states != mdp.num_states()
        || reward.num_actions != mdp.num_actions()
    {
        return Err(CoreError::ShapeMismatch {
            what: "reward vs mdp",
        });
    }
    Ok(())
}

/// Policy value `V^pi_1(s_1)` for an arbitrary raw reward table `[H][S][K]`
/// by exact backward induction. No normalization is assumed of `reward`;
/// exploration bonuses use this directly.
pub fn value_dp_table(mdp: &TabularLowRankMdp, reward: &[f64], policy: &Policy) -> Result<f64> {
    check_policy_shape(mdp, policy)?;
    let (h_n, s_n, k_n) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    if reward.len() != h_n * s_n * k_n {
        return Err(CoreError::ShapeMismatch {
            what: "reward table vs mdp",
        });
    }
    let mut v_next = vec![0.0; s_n];
    let mut v = vec![0.0; s_n];
    for h in (0..h_n).rev() {
        for s in 0..s_n {
            let pi = policy.row(h, s);
            let mut vs = 0.0;
            for a in 0..k_n {
                if pi[a] == 0.0 {
                    continue;
                }
                let cont = math::dot(mdp.kernel_row(h, s, a), &v_next);
                vs += pi[a] * (reward[(h * s_n + s) * k_n + a] + cont);
            }
            v[s] = vs;
        }
        core::mem::swap(&mut v, &mut v_next);
    }
    Ok(v_next[mdp.initial_state()])
}

/// `V^pi_{1}(s_1)` under a normalized reward; always lands in `[0, 1]`.
pub fn value_dp(mdp: &TabularLowRankMdp, reward: &RewardTable, policy: &Policy) -> Result<f64> {
    check_reward_shape(mdp, reward)?;
    value_dp_table(mdp, reward.data(), policy)
}

/// Optimal value and a deterministic optimal policy for an arbitrary raw
/// reward table, ties broken toward the lowest action index.
pub fn optimal_dp_table(mdp: &TabularLowRankMdp, reward: &[f64]) -> Result<(f64, Policy)> {
    let (h_n, s_n, k_n) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    if reward.len() != h_n * s_n * k_n {
        return Err(CoreError::ShapeMismatch {
            what: "reward table vs mdp",
        });
    }
    let mut v_next = vec![0.0; s_n];
    let mut v = vec![0.0; s_n];
    let mut actions = vec![0usize; h_n * s_n];
    for h in (0..h_n).rev() {
        for s in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..k_n {
                let q =
                    reward[(h * s_n + s) * k_n + a] + math::dot(mdp.kernel_row(h, s, a), &v_next);
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            v[s] = best;
            actions[h * s_n + s] = best_a;
        }
        core::mem::swap(&mut v, &mut v_next);
    }
    let policy = Policy::deterministic(h_n, s_n, k_n, &actions);
    Ok((v_next[mdp.initial_state()], policy))
}

/// Optimal value and deterministic optimal policy under a normalized reward.
pub fn optimal_dp(mdp: &TabularLowRankMdp, reward: &RewardTable) -> Result<(f64, Policy)> {
    check_reward_shape(mdp, reward)?;
    optimal_dp_table(mdp, reward.data())
}

/// Exact occupancy measure of `policy` under `mdp` by forward recursion.
pub fn occupancy(mdp: &TabularLowRankMdp, policy: &Policy) -> Result<OccupancyMeasure> {
    check_policy_shape(mdp, policy)?;
    let (h_n, s_n, k_n) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut occ = vec![0.0; h_n * s_n * k_n];
    let mut state_dist = vec![0.0; s_n];
    state_dist[mdp.initial_state()] = 1.0;
    for h in 0..h_n {
        let mut next_dist = vec![0.0; s_n];
        for s in 0..s_n {
            let mass = state_dist[s];
            if mass == 0.0 {
                continue;
            }
            let pi = policy.row(h, s);
            for a in 0..k_n {
                let w = mass * pi[a];
                if w == 0.0 {
                    continue;
                }
                occ[(h * s_n + s) * k_n + a] = w;
                let row = mdp.kernel_row(h, s, a);
                for s2 in 0..s_n {
                    next_dist[s2] += w * row[s2];
                }
            }
        }
        state_dist = next_dist;
    }
    Ok(OccupancyMeasure {
        horizon: h_n,
        num_states: s_n,
        num_actions: k_n,
        model_tag: mdp.content_tag(),
        policy_tag: policy.content_tag(),
        occ,
    })
}

/// Sample one episode; reproducible for equal seeds.
pub fn sample_trajectory(
    mdp: &TabularLowRankMdp,
    reward: &RewardTable,
    policy: &Policy,
    seed: u64,
) -> Result<Trajectory> {
    check_policy_shape(mdp, policy)?;
    check_reward_shape(mdp, reward)?;
    let mut rng = SplitRng::new(seed);
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut s = mdp.initial_state();
    for h in 0..mdp.horizon() {
        let a = rng.sample_index(policy.row(h, s));
        let next = rng.sample_index(mdp.kernel_row(h, s, a));
        steps.push(TrajectoryStep {
            state: s,
            action: a,
            reward: reward.get(h, s, a),
            next_state: next,
        });
        s = next;
    }
    Ok(Trajectory { steps, seed })
}

/// Total variation distance between two distributions of equal length.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::ShapeMismatch {
            what: "tv_distance inputs",
        });
    }
    for (what, v) in [
        ("tv_distance first argument", p),
        ("tv_distance second argument", q),
    ] {
        let sum: f64 = v.iter().sum();
        if math::abs(sum - 1.0) > 1e-6 {
            return Err(CoreError::InvalidDistribution {
                what,
                index: 0,
                deviation: sum - 1.0,
            });
        }
    }
    Ok(math::tv_raw(p, q))
}

/// Absolute defect of the two-model value-difference identity
///
/// `V^pi(P1, r1) - V^pi(P2, r2)
///    = sum_h E_{(s,a) ~ occ(P2, pi)}[ r1 - r2 + (P1 - P2) V^pi_{h+1}(P1, r1) ]`
///
/// with both sides evaluated exactly. Used purely as a numeric test oracle;
/// on valid inputs the defect is rounding noise.
pub fn simulation_residual(
    p1: &TabularLowRankMdp,
    p2: &TabularLowRankMdp,
    r1: &RewardTable,
    r2: &RewardTable,
    policy: &Policy,
) -> Result<f64> {
    if p1.horizon() != p2.horizon()
        || p1.num_states() != p2.num_states()
        || p1.num_actions() != p2.num_actions()
        || p1.initial_state() != p2.initial_state()
    {
        return Err(CoreError::ShapeMismatch {
            what: "simulation_residual models",
        });
    }
    let lhs = value_dp(p1, r1, policy)? - value_dp(p2, r2, policy)?;

    let (h_n, s_n, k_n) = (p1.horizon(), p1.num_states(), p1.num_actions());
    // Per-step tail values of (P1, r1) under the policy: v1[h][s] = V^pi_h.
    let mut v1 = vec![0.0; (h_n + 1) * s_n];
    for h in (0..h_n).rev() {
        for s in 0..s_n {
            let pi = policy.row(h, s);
            let mut vs = 0.0;
            for a in 0..k_n {
                if pi[a] == 0.0 {
                    continue;
                }
                let cont = math::dot(p1.kernel_row(h, s, a), &v1[(h + 1) * s_n..(h + 2) * s_n]);
                vs += pi[a] * (r1.get(h, s, a) + cont);
            }
            v1[h * s_n + s] = vs;
        }
    }
    let occ2 = occupancy(p2, policy)?;
    let mut rhs = 0.0;
    for h in 0..h_n {
        let v_next = &v1[(h + 1) * s_n..(h + 2) * s_n];
        for s in 0..s_n {
            for a in 0..k_n {
                let w = occ2.get(h, s, a);
                if w == 0.0 {
                    continue;
                }
                let dr = r1.get(h, s, a) - r2.get(h, s, a);
                let dp = math::dot(p1.kernel_row(h, s, a), v_next)
                    - math::dot(p2.kernel_row(h, s, a), v_next);
                rhs += w * (dr + dp);
            }
        }
    }
    Ok(math::abs(lhs - rhs))
}
