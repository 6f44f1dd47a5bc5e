//! Generators for task families sharing one feature map, finite candidate
//! model classes containing the truth, and the measured family constants
//! consumed by the downstream planners.
//!
//! Everything is drawn from the splittable generator: feature rows come from
//! the uniform simplex sampler and measure latent coordinates are random
//! distributions over states, so both normalization invariants
//! (`||phi||_2 <= 1`, `||sum_s mu(s) g(s)||_2 <= sqrt(d)`) hold by
//! construction without projection.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::mdp::{occupancy, FeatureTable, MeasureTable, Policy, RewardTable, TabularLowRankMdp};
use crate::rng::{sample_simplex, SplitRng};
use crate::Result;

/// Retry budget per generated table before giving up on a separation or
/// degeneracy constraint.
const RETRY_BUDGET: usize = 256;

/// Sizes and knobs for one generated family.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilySpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub dim: usize,
    pub num_tasks: usize,
    pub seed: u64,
    /// Target sup-(h,s,a) total variation between the downstream kernel and
    /// the convex combination of the upstream kernels.
    pub xi_target: f64,
    /// Dimension of the latent reward feature.
    pub reward_dim: usize,
    pub phi_class_size: usize,
    pub psi_class_size: usize,
    /// Minimum average TV between distinct class members.
    pub decoy_separation: f64,
}

impl FamilySpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0
            || self.num_actions == 0
            || self.horizon == 0
            || self.dim == 0
            || self.num_tasks == 0
            || self.reward_dim == 0
            || self.phi_class_size == 0
            || self.psi_class_size == 0
        {
            return Err(CoreError::InvalidValue {
                what: "family spec sizes must be positive",
            });
        }
        if !(0.0..1.0).contains(&self.xi_target) {
            return Err(CoreError::InvalidValue {
                what: "xi_target must lie in [0, 1)",
            });
        }
        if !(self.decoy_separation > 0.0 && self.decoy_separation <= 1.0) {
            return Err(CoreError::InvalidValue {
                what: "decoy_separation must lie in (0, 1]",
            });
        }
        if self.phi_class_size < 1 || self.psi_class_size < self.num_tasks {
            return Err(CoreError::InvalidValue {
                what: "class sizes must cover the truths",
            });
        }
        Ok(())
    }
}

/// Measured constants of a generated family.
///
/// `kappa_u_lb` is certified with the uniform policy only, so it is a lower
/// bound on the true reachability constant; that makes the derived
/// downstream misspecification an upper bound, which is the conservative
/// direction. `c_r` is computed over the finite class by
/// [`family_constants`]; freshly generated families carry the value measured
/// over their own task kernels until classes exist.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyConstants {
    /// `1 / |S|`: density of the uniform distribution over states.
    pub upsilon: f64,
    /// Certified lower bound on the reachability constant.
    pub kappa_u_lb: f64,
    /// Pointwise-to-average TV ratio over the model class.
    pub c_r: f64,
    /// Exhaustively measured downstream linear-combination misspecification.
    pub xi_measured: f64,
    /// Coefficient bound; convex combinations fix this to 1.
    pub c_l: f64,
}

/// T upstream tasks sharing one feature map, plus the downstream task whose
/// kernel is (approximately) a convex combination of the upstream kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskFamily {
    pub spec: FamilySpec,
    pub shared_phi: FeatureTable,
    pub mus: Vec<MeasureTable>,
    /// Upstream task rewards; revealed only after exploration.
    pub rewards: Vec<RewardTable>,
    pub downstream: TabularLowRankMdp,
    /// Reward of the downstream task (given to the downstream learner).
    pub downstream_reward: RewardTable,
    /// Convex coefficients of the downstream combination.
    pub coefficients: Vec<f64>,
    pub constants: FamilyConstants,
}

impl TaskFamily {
    pub fn num_tasks(&self) -> usize {
        self.spec.num_tasks
    }

    /// Materialize upstream task `t` as an MDP.
    pub fn task_mdp(&self, t: usize) -> Result<TabularLowRankMdp> {
        if t >= self.num_tasks() {
            return Err(CoreError::IndexOutOfRange {
                what: "task",
                index: t,
                len: self.num_tasks(),
            });
        }
        TabularLowRankMdp::new(self.shared_phi.clone(), self.mus[t].clone(), 0)
    }

    /// All upstream task MDPs, in task order.
    pub fn task_mdps(&self) -> Result<Vec<TabularLowRankMdp>> {
        (0..self.num_tasks()).map(|t| self.task_mdp(t)).collect()
    }
}

/// Finite candidate sets containing the true factors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelClass {
    pub phis: Vec<FeatureTable>,
    pub psis: Vec<MeasureTable>,
    pub truth_phi_index: usize,
    /// Position of each task's true measure table inside `psis`.
    pub truth_mu_indices: Vec<usize>,
}

pub fn random_feature_table(
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    dim: usize,
    rng: &mut SplitRng,
) -> FeatureTable {
    let mut data = vec![0.0; horizon * num_states * num_actions * dim];
    for row in data.chunks_mut(dim) {
        sample_simplex(rng, row);
    }
    FeatureTable::from_raw(horizon, num_states, num_actions, dim, data)
        .expect("simplex rows always validate")
}

pub fn random_measure_table(
    horizon: usize,
    num_states: usize,
    dim: usize,
    rng: &mut SplitRng,
) -> MeasureTable {
    // Latent coordinate j at step h is a distribution over next states, so
    // sample column-wise and scatter into the row-major layout.
    let mut data = vec![0.0; horizon * num_states * dim];
    let mut col = vec![0.0; num_states];
    for h in 0..horizon {
        for j in 0..dim {
            sample_simplex(rng, &mut col);
            for s in 0..num_states {
                data[(h * num_states + s) * dim + j] = col[s];
            }
        }
    }
    MeasureTable::from_raw(horizon, num_states, dim, data)
        .expect("column-stochastic tables always validate")
}

/// Random valid low-rank MDP; the quick way to get test instances.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    dim: usize,
    seed: u64,
) -> TabularLowRankMdp {
    let mut rng = SplitRng::new(seed);
    let phi = random_feature_table(horizon, num_states, num_actions, dim, &mut rng);
    let mu = random_measure_table(horizon, num_states, dim, &mut rng);
    TabularLowRankMdp::new(phi, mu, 0).expect("generated tables are valid")
}

/// Random reward `r_h(s,a) = max(0, <theta, phi_tilde(h,s,a)>)` with a
/// latent feature independent of the transition features, scaled so the
/// per-trajectory return budget `sum_h max r_h = 1` is met exactly.
pub fn random_reward(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    reward_dim: usize,
    seed: u64,
) -> RewardTable {
    let mut rng = SplitRng::new(seed);
    let cells = horizon * num_states * num_actions;
    for _attempt in 0..RETRY_BUDGET {
        let mut theta = vec![0.0; reward_dim];
        for x in theta.iter_mut() {
            *x = 2.0 * rng.next_f64() - 1.0;
        }
        let mut feat = vec![0.0; reward_dim];
        let mut raw = vec![0.0; cells];
        for r in raw.iter_mut() {
            for f in feat.iter_mut() {
                *f = rng.next_f64();
            }
            *r = math::dot(&theta, &feat).max(0.0);
        }
        let mut budget = 0.0;
        for h in 0..horizon {
            let step = &raw[h * num_states * num_actions..(h + 1) * num_states * num_actions];
            budget += step.iter().cloned().fold(0.0, f64::max);
        }
        if budget <= 0.0 {
            continue; // all-negative theta; redraw
        }
        let scale = 1.0 / budget;
        for r in raw.iter_mut() {
            *r *= scale;
        }
        for t in theta.iter_mut() {
            *t *= scale;
        }
        return RewardTable::from_raw(horizon, num_states, num_actions, reward_dim, theta, raw)
            .expect("scaled rewards always validate");
    }
    unreachable!("reward generation cannot exhaust its retry budget with nonzero probability mass")
}

fn mix_measures(tables: &[MeasureTable], coeffs: &[f64]) -> MeasureTable {
    let (h_n, s_n, d) = (tables[0].horizon, tables[0].num_states, tables[0].dim);
    let mut data = vec![0.0; h_n * s_n * d];
    for (table, &c) in tables.iter().zip(coeffs) {
        for (acc, &x) in data.iter_mut().zip(table.data()) {
            *acc += c * x;
        }
    }
    MeasureTable::from_raw(h_n, s_n, d, data).expect("convex combination of measures is valid")
}

fn blend_measures(a: &MeasureTable, b: &MeasureTable, weight_b: f64) -> MeasureTable {
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (1.0 - weight_b) * x + weight_b * y)
        .collect();
    MeasureTable::from_raw(a.horizon, a.num_states, a.dim, data)
        .expect("blend of measures is valid")
}

/// Sup over `(h, s, a)` of the TV between two kernels.
fn sup_tv(a: &TabularLowRankMdp, b: &TabularLowRankMdp) -> f64 {
    let mut worst = 0.0;
    for h in 0..a.horizon() {
        for s in 0..a.num_states() {
            for k in 0..a.num_actions() {
                let tv = math::tv_raw(a.kernel_row(h, s, k), b.kernel_row(h, s, k));
                if tv > worst {
                    worst = tv;
                }
            }
        }
    }
    worst
}

/// Generate a family: T upstream tasks factored through one shared feature
/// map, a downstream task mixing the upstream kernels with a controlled
/// perturbation, rewards under the trajectory-return budget, and measured
/// constants.
pub fn generate_family(spec: &FamilySpec) -> Result<TaskFamily> {
    spec.validate()?;
    let root = SplitRng::new(spec.seed);
    let (h_n, s_n, k_n, d) = (spec.horizon, spec.num_states, spec.num_actions, spec.dim);

    let mut phi_rng = root.split(0);
    let shared_phi = random_feature_table(h_n, s_n, k_n, d, &mut phi_rng);

    let mu_root = root.split(1);
    let mus: Vec<MeasureTable> = (0..spec.num_tasks)
        .map(|t| {
            let mut r = mu_root.split(t as u64);
            random_measure_table(h_n, s_n, d, &mut r)
        })
        .collect();

    let reward_root = root.split(2);
    let rewards: Vec<RewardTable> = (0..spec.num_tasks)
        .map(|t| {
            random_reward(
                s_n,
                k_n,
                h_n,
                spec.reward_dim,
                reward_root.split(t as u64).next_u64(),
            )
        })
        .collect();

    let mut coeff_rng = root.split(3);
    let mut coefficients = vec![0.0; spec.num_tasks];
    sample_simplex(&mut coeff_rng, &mut coefficients);

    let mu_mix = mix_measures(&mus, &coefficients);
    let mix_mdp = TabularLowRankMdp::new(shared_phi.clone(), mu_mix.clone(), 0)?;

    let mu_down = if spec.xi_target == 0.0 {
        mu_mix.clone()
    } else {
        let mut rand_rng = root.split(4);
        let mu_rand = random_measure_table(h_n, s_n, d, &mut rand_rng);
        let full = TabularLowRankMdp::new(shared_phi.clone(), mu_rand.clone(), 0)?;
        // TV to the mixture is linear in the blend weight, so one probe at
        // weight 1 pins the weight that lands exactly on the target.
        let span = sup_tv(&full, &mix_mdp);
        let weight = if span > 0.0 {
            (spec.xi_target / span).min(1.0)
        } else {
            0.0
        };
        blend_measures(&mu_mix, &mu_rand, weight)
    };
    let downstream = TabularLowRankMdp::new(shared_phi.clone(), mu_down, 0)?;
    let xi_measured = sup_tv(&downstream, &mix_mdp);
    if xi_measured > spec.xi_target + 1e-9 {
        return Err(CoreError::GenerationFailed {
            what: "downstream misspecification exceeded its target",
        });
    }

    let downstream_reward = random_reward(s_n, k_n, h_n, spec.reward_dim, root.split(5).next_u64());

    let mut family = TaskFamily {
        spec: spec.clone(),
        shared_phi,
        mus,
        rewards,
        downstream,
        downstream_reward,
        coefficients,
        constants: FamilyConstants {
            upsilon: 1.0 / s_n as f64,
            kappa_u_lb: 0.0,
            c_r: 1.0,
            xi_measured,
            c_l: 1.0,
        },
    };
    family.constants.kappa_u_lb = reachability_lower_bound(&family)?;
    // Pre-class ratio over the family's own task kernels; refreshed against
    // the full class by `family_constants`.
    family.constants.c_r = tv_ratio_over_kernels(&family.task_mdps()?);
    Ok(family)
}

/// Min over (task, step >= 2, state) of the uniform policy's state
/// occupancy. Step 1 is excluded: the initial state is fixed, so its
/// occupancy is a point mass and the minimum over all states would always
/// be zero for |S| > 1.
fn reachability_lower_bound(family: &TaskFamily) -> Result<f64> {
    let spec = &family.spec;
    if spec.horizon == 1 {
        return Ok(1.0); // vacuous: no step has a nondegenerate distribution
    }
    let uniform = Policy::uniform(spec.horizon, spec.num_states, spec.num_actions);
    let mut lb = f64::INFINITY;
    for t in 0..spec.num_tasks {
        let mdp = family.task_mdp(t)?;
        let occ = occupancy(&mdp, &uniform)?;
        for h in 1..spec.horizon {
            for s in 0..spec.num_states {
                let mass = occ.state_mass(h, s);
                if mass < lb {
                    lb = mass;
                }
            }
        }
    }
    if lb <= 0.0 {
        return Err(CoreError::ConstantsError {
            what: "a state is unreachable under the uniform policy; regenerate the family",
        });
    }
    Ok(lb)
}

/// Max over unordered kernel pairs and steps of (pointwise TV) / (mean TV
/// over uniform state-action pairs); at least 1 whenever any pair differs.
fn tv_ratio_over_kernels(kernels: &[TabularLowRankMdp]) -> f64 {
    let mut ratio: f64 = 1.0;
    if kernels.len() < 2 {
        return ratio;
    }
    let (h_n, s_n, k_n) = (
        kernels[0].horizon(),
        kernels[0].num_states(),
        kernels[0].num_actions(),
    );
    let cells = (s_n * k_n) as f64;
    for i in 0..kernels.len() {
        for j in (i + 1)..kernels.len() {
            for h in 0..h_n {
                let mut mean = 0.0;
                let mut worst = 0.0;
                for s in 0..s_n {
                    for a in 0..k_n {
                        let tv = math::tv_raw(
                            kernels[i].kernel_row(h, s, a),
                            kernels[j].kernel_row(h, s, a),
                        );
                        mean += tv;
                        if tv > worst {
                            worst = tv;
                        }
                    }
                }
                mean /= cells;
                if mean > 1e-15 {
                    let r = worst / mean;
                    if r > ratio {
                        ratio = r;
                    }
                }
            }
        }
    }
    ratio
}

fn avg_tv_features(a: &FeatureTable, b: &FeatureTable) -> f64 {
    let rows = a.horizon * a.num_states * a.num_actions;
    let mut acc = 0.0;
    for h in 0..a.horizon {
        for s in 0..a.num_states {
            for k in 0..a.num_actions {
                acc += math::tv_raw(a.row(h, s, k), b.row(h, s, k));
            }
        }
    }
    acc / rows as f64
}

fn avg_tv_measures(a: &MeasureTable, b: &MeasureTable) -> f64 {
    // Latent coordinate j at step h is a distribution over states; average
    // the TV of those distributions over (h, j).
    let mut acc = 0.0;
    for h in 0..a.horizon {
        for j in 0..a.dim {
            let mut tv = 0.0;
            for s in 0..a.num_states {
                tv += math::abs(a.row(h, s)[j] - b.row(h, s)[j]);
            }
            acc += 0.5 * tv;
        }
    }
    acc / (a.horizon * a.dim) as f64
}

fn fisher_yates(rng: &mut SplitRng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.uniform_index(i + 1);
        perm.swap(i, j);
    }
    perm
}

/// Build finite candidate classes: the shared feature map appears exactly
/// once in `Phi`, every task measure exactly once in `Psi`, decoys come from
/// the same constructive scheme, and all pairs of distinct members are at
/// least `decoy_separation` apart in average TV.
pub fn generate_model_classes(
    family: &TaskFamily,
    spec: &FamilySpec,
    seed: u64,
) -> Result<ModelClass> {
    spec.validate()?;
    let root = SplitRng::new(seed);
    let (h_n, s_n, k_n, d) = (spec.horizon, spec.num_states, spec.num_actions, spec.dim);

    // Truth separation cannot be fixed by retries; reject early.
    for t1 in 0..spec.num_tasks {
        for t2 in (t1 + 1)..spec.num_tasks {
            if avg_tv_measures(&family.mus[t1], &family.mus[t2]) < spec.decoy_separation {
                return Err(CoreError::GenerationFailed {
                    what: "task measures closer than decoy_separation; regenerate the family",
                });
            }
        }
    }

    let mut phi_rng = root.split(0);
    let mut phi_members: Vec<FeatureTable> = vec![family.shared_phi.clone()];
    while phi_members.len() < spec.phi_class_size {
        let mut accepted = false;
        for _ in 0..RETRY_BUDGET {
            let cand = random_feature_table(h_n, s_n, k_n, d, &mut phi_rng);
            if phi_members
                .iter()
                .all(|m| avg_tv_features(m, &cand) >= spec.decoy_separation)
            {
                phi_members.push(cand);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(CoreError::GenerationFailed {
                what: "feature decoy separation infeasible for requested class size",
            });
        }
    }

    let mut psi_rng = root.split(1);
    let mut psi_members: Vec<MeasureTable> = family.mus.clone();
    while psi_members.len() < spec.psi_class_size {
        let mut accepted = false;
        for _ in 0..RETRY_BUDGET {
            let cand = random_measure_table(h_n, s_n, d, &mut psi_rng);
            if psi_members
                .iter()
                .all(|m| avg_tv_measures(m, &cand) >= spec.decoy_separation)
            {
                psi_members.push(cand);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(CoreError::GenerationFailed {
                what: "measure decoy separation infeasible for requested class size",
            });
        }
    }

    // Hide the truths at shuffled positions.
    let mut shuffle_rng = root.split(2);
    let phi_perm = fisher_yates(&mut shuffle_rng, phi_members.len());
    let mut phis: Vec<Option<FeatureTable>> = vec![None; phi_members.len()];
    for (orig, member) in phi_members.into_iter().enumerate() {
        phis[phi_perm[orig]] = Some(member);
    }
    let psi_perm = fisher_yates(&mut shuffle_rng, psi_members.len());
    let mut psis: Vec<Option<MeasureTable>> = vec![None; psi_members.len()];
    for (orig, member) in psi_members.into_iter().enumerate() {
        psis[psi_perm[orig]] = Some(member);
    }

    Ok(ModelClass {
        phis: phis.into_iter().map(|m| m.unwrap()).collect(),
        psis: psis.into_iter().map(|m| m.unwrap()).collect(),
        truth_phi_index: phi_perm[0],
        truth_mu_indices: (0..spec.num_tasks).map(|t| psi_perm[t]).collect(),
    })
}

/// Measure the family constants against a generated class: the uniform
/// density, the certified reachability lower bound, the pointwise-to-mean
/// TV ratio over every kernel the class can express, and the exhaustive
/// downstream misspecification.
pub fn family_constants(family: &TaskFamily, classes: &ModelClass) -> Result<FamilyConstants> {
    let spec = &family.spec;
    if classes.truth_phi_index >= classes.phis.len()
        || classes.truth_mu_indices.len() != spec.num_tasks
    {
        return Err(CoreError::ShapeMismatch {
            what: "model class vs family",
        });
    }
    let kappa_u_lb = reachability_lower_bound(family)?;

    let mut kernels = Vec::with_capacity(classes.phis.len() * classes.psis.len());
    for phi in &classes.phis {
        for psi in &classes.psis {
            kernels.push(TabularLowRankMdp::new(phi.clone(), psi.clone(), 0)?);
        }
    }
    let c_r = tv_ratio_over_kernels(&kernels);

    let mix = mix_measures(&family.mus, &family.coefficients);
    let mix_mdp = TabularLowRankMdp::new(family.shared_phi.clone(), mix, 0)?;
    let xi_measured = sup_tv(&family.downstream, &mix_mdp);

    Ok(FamilyConstants {
        upsilon: 1.0 / spec.num_states as f64,
        kappa_u_lb,
        c_r,
        xi_measured,
        c_l: 1.0,
    })
}

/// Downstream misspecification bound
/// `xi_down = xi + C_L * C_R * T * upsilon * eps_u / kappa_u`.
pub fn compute_xi_down(constants: &FamilyConstants, num_tasks: usize, eps_u: f64) -> Result<f64> {
    if eps_u < 0.0 {
        return Err(CoreError::InvalidValue {
            what: "eps_u must be nonnegative",
        });
    }
    if constants.kappa_u_lb <= 0.0 {
        return Err(CoreError::ConstantsError {
            what: "kappa_u lower bound must be positive",
        });
    }
    Ok(constants.xi_measured
        + constants.c_l * constants.c_r * num_tasks as f64 * constants.upsilon * eps_u
            / constants.kappa_u_lb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> FamilySpec {
        FamilySpec {
            num_states: 6,
            num_actions: 3,
            horizon: 4,
            dim: 2,
            num_tasks: 4,
            seed: 2024,
            xi_target: 0.02,
            reward_dim: 3,
            phi_class_size: 6,
            psi_class_size: 12,
            decoy_separation: 0.05,
        }
    }

    #[test]
    fn rank_one_family_shares_one_distribution_per_step() {
        let mut spec = small_spec();
        spec.dim = 1;
        let family = generate_family(&spec).unwrap();
        for t in 0..spec.num_tasks {
            let mdp = family.task_mdp(t).unwrap();
            for h in 0..spec.horizon {
                let first = mdp.transition_dist(h, 0, 0).unwrap().to_vec();
                for s in 0..spec.num_states {
                    for a in 0..spec.num_actions {
                        assert_eq!(mdp.transition_dist(h, s, a).unwrap(), &first[..]);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_xi_target_means_exact_combination() {
        let mut spec = small_spec();
        spec.xi_target = 0.0;
        let family = generate_family(&spec).unwrap();
        assert_eq!(family.constants.xi_measured, 0.0);
    }

    #[test]
    fn measured_xi_below_target_via_exhaustive_tv() {
        let spec = small_spec();
        let family = generate_family(&spec).unwrap();
        assert!(family.constants.xi_measured <= spec.xi_target + 1e-9);
        // Exhaustive oracle: rebuild the mixture kernel and scan all cells.
        let mix = mix_measures(&family.mus, &family.coefficients);
        let mix_mdp = TabularLowRankMdp::new(family.shared_phi.clone(), mix, 0).unwrap();
        let mut worst = 0.0_f64;
        for h in 0..spec.horizon {
            for s in 0..spec.num_states {
                for a in 0..spec.num_actions {
                    let tv = crate::mdp::tv_distance(
                        family.downstream.transition_dist(h, s, a).unwrap(),
                        mix_mdp.transition_dist(h, s, a).unwrap(),
                    )
                    .unwrap();
                    worst = worst.max(tv);
                }
            }
        }
        assert!((worst - family.constants.xi_measured).abs() < 1e-12);
        assert!(worst <= spec.xi_target + 1e-9);
        // The blend construction should land close to the target, not miles
        // below it.
        assert!(worst > 0.5 * spec.xi_target);
    }

    #[test]
    fn upstream_tasks_share_phi_exactly() {
        let spec = small_spec();
        let family = generate_family(&spec).unwrap();
        for t in 0..spec.num_tasks {
            assert_eq!(family.task_mdp(t).unwrap().features(), &family.shared_phi);
        }
        assert_eq!(family.downstream.features(), &family.shared_phi);
    }

    #[test]
    fn coefficients_are_convex() {
        let family = generate_family(&small_spec()).unwrap();
        let sum: f64 = family.coefficients.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(family.coefficients.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn reward_budget_holds_for_all_generated_rewards() {
        let spec = small_spec();
        let family = generate_family(&spec).unwrap();
        for reward in family.rewards.iter().chain([&family.downstream_reward]) {
            let mut budget = 0.0;
            for h in 0..spec.horizon {
                let mut mx = 0.0_f64;
                for s in 0..spec.num_states {
                    for a in 0..spec.num_actions {
                        mx = mx.max(reward.get(h, s, a));
                    }
                }
                budget += mx;
            }
            assert!(budget <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn classes_contain_truths_at_recorded_indices() {
        let spec = small_spec();
        let family = generate_family(&spec).unwrap();
        let classes = generate_model_classes(&family, &spec, 7).unwrap();
        assert_eq!(classes.phis.len(), spec.phi_class_size);
        assert_eq!(classes.psis.len(), spec.psi_class_size);
        assert_eq!(&classes.phis[classes.truth_phi_index], &family.shared_phi);
        for t in 0..spec.num_tasks {
            assert_eq!(&classes.psis[classes.truth_mu_indices[t]], &family.mus[t]);
        }
        // Truth appears exactly once.
        let phi_hits = classes
            .phis
            .iter()
            .filter(|p| *p == &family.shared_phi)
            .count();
        assert_eq!(phi_hits, 1);
    }

    #[test]
    fn singleton_classes_are_exactly_the_truths() {
        let mut spec = small_spec();
        spec.phi_class_size = 1;
        spec.psi_class_size = spec.num_tasks;
        let family = generate_family(&spec).unwrap();
        let classes = generate_model_classes(&family, &spec, 3).unwrap();
        assert_eq!(classes.phis.len(), 1);
        assert_eq!(classes.psis.len(), spec.num_tasks);
        assert_eq!(&classes.phis[0], &family.shared_phi);
    }

    #[test]
    fn pairwise_separation_holds_by_enumeration() {
        let spec = small_spec();
        let family = generate_family(&spec).unwrap();
        let classes = generate_model_classes(&family, &spec, 11).unwrap();
        for i in 0..classes.phis.len() {
            for j in (i + 1)..classes.phis.len() {
                assert!(
                    avg_tv_features(&classes.phis[i], &classes.phis[j]) >= spec.decoy_separation
                );
            }
        }
        for i in 0..classes.psis.len() {
            for j in (i + 1)..classes.psis.len() {
                assert!(
                    avg_tv_measures(&classes.psis[i], &classes.psis[j]) >= spec.decoy_separation
                );
            }
        }
    }

    #[test]
    fn upsilon_is_inverse_state_count() {
        let mut spec = small_spec();
        spec.num_states = 8;
        let family = generate_family(&spec).unwrap();
        assert_eq!(family.constants.upsilon, 0.125);
    }

    #[test]
    fn rank_one_class_gives_unit_tv_ratio() {
        // d = 1 kernels ignore (s, a), so pointwise TV equals mean TV and
        // the ratio collapses to 1 for any pair of members.
        let mut spec = small_spec();
        spec.dim = 1;
        spec.num_tasks = 2;
        spec.phi_class_size = 1;
        spec.psi_class_size = 2;
        let family = generate_family(&spec).unwrap();
        let classes = generate_model_classes(&family, &spec, 5).unwrap();
        let constants = family_constants(&family, &classes).unwrap();
        assert!((constants.c_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_lower_bound_matches_occupancy_oracle() {
        let spec = small_spec();
        let family = generate_family(&spec).unwrap();
        let classes = generate_model_classes(&family, &spec, 9).unwrap();
        let constants = family_constants(&family, &classes).unwrap();
        // Oracle: recompute state occupancies with a direct forward pass.
        let uniform = Policy::uniform(spec.horizon, spec.num_states, spec.num_actions);
        let mut lb = f64::INFINITY;
        for t in 0..spec.num_tasks {
            let mdp = family.task_mdp(t).unwrap();
            let occ = occupancy(&mdp, &uniform).unwrap();
            for h in 1..spec.horizon {
                for s in 0..spec.num_states {
                    lb = lb.min(occ.state_mass(h, s));
                }
            }
        }
        assert!((constants.kappa_u_lb - lb).abs() < 1e-15);
        assert!(constants.kappa_u_lb > 0.0);
    }

    #[test]
    fn xi_down_formula() {
        let constants = FamilyConstants {
            upsilon: 1.0 / 6.0,
            kappa_u_lb: 0.05,
            c_r: 2.0,
            xi_measured: 0.01,
            c_l: 1.0,
        };
        let v = compute_xi_down(&constants, 4, 0.1).unwrap();
        assert!((v - 2.6766666666666667).abs() < 1e-12);
        assert_eq!(compute_xi_down(&constants, 4, 0.0).unwrap(), 0.01);
        // Linearity in eps_u on top of the xi offset.
        let v2 = compute_xi_down(&constants, 4, 0.2).unwrap();
        assert!((v2 - 0.01 - 2.0 * (v - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn xi_down_monotonicity() {
        let base = FamilyConstants {
            upsilon: 0.2,
            kappa_u_lb: 0.1,
            c_r: 1.5,
            xi_measured: 0.0,
            c_l: 1.0,
        };
        let v = compute_xi_down(&base, 4, 0.1).unwrap();
        let mut more_tasks = base.clone();
        more_tasks.c_r = 1.5;
        assert!(compute_xi_down(&more_tasks, 8, 0.1).unwrap() >= v);
        let mut bigger_cr = base.clone();
        bigger_cr.c_r = 3.0;
        assert!(compute_xi_down(&bigger_cr, 4, 0.1).unwrap() >= v);
        let mut bigger_kappa = base.clone();
        bigger_kappa.kappa_u_lb = 0.2;
        assert!(compute_xi_down(&bigger_kappa, 4, 0.1).unwrap() <= v);
    }

    #[test]
    fn xi_down_requires_positive_kappa() {
        let constants = FamilyConstants {
            upsilon: 0.2,
            kappa_u_lb: 0.0,
            c_r: 1.0,
            xi_measured: 0.0,
            c_l: 1.0,
        };
        assert!(compute_xi_down(&constants, 4, 0.1).is_err());
    }

    #[test]
    fn family_generation_is_deterministic_in_seed() {
        let spec = small_spec();
        let a = generate_family(&spec).unwrap();
        let b = generate_family(&spec).unwrap();
        assert_eq!(a, b);
    }
}
