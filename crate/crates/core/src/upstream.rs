//! Reward-free multitask exploration.
//!
//! Each iteration rolls the current exploration policies to collect one
//! step-indexed triple per (task, episode), reselects the shared feature
//! map and the per-task measures by joint maximum likelihood over the
//! finite classes, rebuilds empirical feature covariances and elliptical
//! exploration bonuses, plans the next policies by maximizing the joint
//! pseudo-cumulative value, and stops once that value plus the estimation
//! slack falls under the accuracy budget. Rewards play no role until the
//! post-hoc planning step.

use alloc::vec;
use alloc::vec::Vec;

use crate::envgen::{ModelClass, TaskFamily};
use crate::error::CoreError;
use crate::linalg::SymMatrix;
use crate::math;
use crate::mdp::{
    occupancy, optimal_dp, optimal_dp_table, FeatureTable, MeasureTable, Policy, RewardTable,
    TabularLowRankMdp,
};
use crate::rng::SplitRng;
use crate::Result;

/// Stream labels for the run's seed tree.
const COLLECT_STREAM: u64 = 0x11;

/// Unit-constant knobs for the schedule plus loop budgets. The schedule
/// formulas fix only the shape of each quantity; the multipliers default to
/// 1 and are recorded alongside any run that tunes them.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub delta: f64,
    pub eps_u: f64,
    pub c_lambda: f64,
    pub c_zeta: f64,
    pub c_alpha: f64,
    pub c_bound: f64,
    pub max_iterations: usize,
    pub planner_rounds: usize,
    pub planner_tol: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            delta: 0.05,
            eps_u: 0.15,
            c_lambda: 1.0,
            c_zeta: 1.0,
            c_alpha: 1.0,
            c_bound: 1.0,
            max_iterations: 2000,
            planner_rounds: 8,
            planner_tol: 1e-6,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CoreError::InvalidValue {
                what: "delta must lie in (0, 1)",
            });
        }
        if self.eps_u <= 0.0
            || self.c_lambda <= 0.0
            || self.c_zeta <= 0.0
            || self.c_alpha <= 0.0
            || self.c_bound <= 0.0
            || self.planner_tol <= 0.0
        {
            return Err(CoreError::InvalidValue {
                what: "hyper parameters must be positive",
            });
        }
        if self.max_iterations == 0 || self.planner_rounds == 0 {
            return Err(CoreError::InvalidValue {
                what: "iteration budgets must be positive",
            });
        }
        Ok(())
    }
}

/// Problem sizes entering the schedule formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleDims {
    pub dim: usize,
    pub num_actions: usize,
    pub num_tasks: usize,
    pub horizon: usize,
    pub phi_class_size: usize,
    pub psi_class_size: usize,
}

impl ScheduleDims {
    pub fn for_run(family: &TaskFamily, classes: &ModelClass) -> Self {
        ScheduleDims {
            dim: family.spec.dim,
            num_actions: family.spec.num_actions,
            num_tasks: family.spec.num_tasks,
            horizon: family.spec.horizon,
            phi_class_size: classes.phis.len(),
            psi_class_size: classes.psis.len(),
        }
    }
}

/// Iteration-n values of the regularizer, the likelihood slack, the bonus
/// scale and the bonus cap.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleValues {
    pub lambda: f64,
    pub zeta: f64,
    pub alpha_tilde: f64,
    pub bound: f64,
}

/// Evaluate the parameter schedule at iteration `n >= 1`. The class-size
/// power `|Psi|^T` only ever appears inside logarithms and is expanded as
/// `T * ln |Psi|` so large task counts cannot overflow.
pub fn schedule(n: usize, dims: &ScheduleDims, hyper: &HyperParams) -> ScheduleValues {
    debug_assert!(n >= 1);
    let nf = n as f64;
    let d = dims.dim as f64;
    let k = dims.num_actions as f64;
    let t = dims.num_tasks as f64;
    let h = dims.horizon as f64;
    let phi_n = dims.phi_class_size as f64;
    let psi_n = dims.psi_class_size as f64;

    let lambda = hyper.c_lambda * d * math::ln(phi_n * nf * t * h / hyper.delta);
    let log_term = math::ln(2.0 * phi_n * nf * h / hyper.delta) + t * math::ln(psi_n);
    let zeta = hyper.c_zeta * 2.0 * log_term / nf;
    let alpha_tilde = hyper.c_alpha * math::sqrt(2.0 * k * log_term + lambda * d * t);
    let bound = hyper.c_bound * 2.0 * math::sqrt(t + k / (d * d));
    ScheduleValues {
        lambda,
        zeta,
        alpha_tilde,
        bound,
    }
}

/// One recorded transition, tagged with the episode index that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub episode: usize,
}

/// Per-(task, step) transition records plus the covariance pairs harvested
/// one episode later.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationDatasets {
    pub num_tasks: usize,
    pub horizon: usize,
    /// `[task][step][iteration]`
    triples: Vec<Vec<Vec<Triple>>>,
    /// `[task][step in 0..H-1][iteration]`, filled by episode `step + 1`.
    cov_pairs: Vec<Vec<Vec<(usize, usize)>>>,
}

impl ExplorationDatasets {
    pub fn new(num_tasks: usize, horizon: usize) -> Self {
        ExplorationDatasets {
            num_tasks,
            horizon,
            triples: vec![vec![Vec::new(); horizon]; num_tasks],
            cov_pairs: vec![vec![Vec::new(); horizon.saturating_sub(1)]; num_tasks],
        }
    }

    pub fn triples(&self, task: usize, step: usize) -> &[Triple] {
        &self.triples[task][step]
    }

    pub fn cov_pairs(&self, task: usize, step: usize) -> &[(usize, usize)] {
        &self.cov_pairs[task][step]
    }

    /// Number of completed collection iterations.
    pub fn iterations(&self) -> usize {
        self.triples[0][0].len()
    }
}

/// Collect one iteration of data: for each task and each episode index
/// `e = 0..H`, roll the task's exploration policy up to step `e - 2`, take
/// two uniform actions, and record the step-e triple; the `(s, a)` visited
/// at step `e - 1` lands in the step-(e-1) covariance list. Exactly `H`
/// trajectories per task.
pub fn collect_iteration(
    tasks: &[TabularLowRankMdp],
    policies: &[Policy],
    iteration: usize,
    datasets: &mut ExplorationDatasets,
    seed: u64,
) -> Result<()> {
    if tasks.len() != datasets.num_tasks || policies.len() != tasks.len() {
        return Err(CoreError::ShapeMismatch {
            what: "tasks vs policies vs datasets",
        });
    }
    let root = SplitRng::new(seed);
    let horizon = datasets.horizon;
    for (t, mdp) in tasks.iter().enumerate() {
        let policy = &policies[t];
        for episode in 0..horizon {
            let mut rng = root.split_path(&[t as u64, episode as u64]);
            let mut s = mdp.initial_state();
            for step in 0..=episode {
                let uniform_steps = step + 1 >= episode; // step == e-1 or e
                let a = if uniform_steps {
                    rng.uniform_index(mdp.num_actions())
                } else {
                    rng.sample_index(policy.row(step, s))
                };
                let next = rng.sample_index(mdp.kernel_row(step, s, a));
                if step + 1 == episode {
                    datasets.cov_pairs[t][step].push((s, a));
                }
                if step == episode {
                    datasets.triples[t][step].push(Triple {
                        state: s,
                        action: a,
                        next_state: next,
                        episode: iteration,
                    });
                }
                s = next;
            }
        }
    }
    Ok(())
}

/// Incremental joint-likelihood scorer for one step: accumulates, for every
/// (feature candidate, task, measure candidate), the log-likelihood of the
/// recorded triples. A nonpositive kernel value eliminates the candidate
/// for that task (log-likelihood pinned at negative infinity); the true
/// model generated the data, so under realizability it always survives.
#[derive(Clone, Debug)]
pub struct MleScorer {
    step: usize,
    num_phi: usize,
    num_psi: usize,
    num_tasks: usize,
    ll: Vec<f64>, // [phi][task][psi]
}

impl MleScorer {
    pub fn new(step: usize, num_phi: usize, num_psi: usize, num_tasks: usize) -> Self {
        MleScorer {
            step,
            num_phi,
            num_psi,
            num_tasks,
            ll: vec![0.0; num_phi * num_tasks * num_psi],
        }
    }

    pub fn add_record(&mut self, classes: &ModelClass, task: usize, triple: &Triple) {
        let h = self.step;
        for i in 0..self.num_phi {
            let phi_row = classes.phis[i].row(h, triple.state, triple.action);
            let base = (i * self.num_tasks + task) * self.num_psi;
            for j in 0..self.num_psi {
                let p = math::dot(phi_row, classes.psis[j].row(h, triple.next_state));
                self.ll[base + j] += if p > 0.0 {
                    math::ln(p)
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
    }

    /// Joint argmax exploiting the factorization: for a fixed feature
    /// candidate the per-task inner maxima decouple. Ties break toward the
    /// lowest indices.
    pub fn argmax(&self) -> Result<(usize, Vec<f64>, Vec<usize>)> {
        let mut best_total = f64::NEG_INFINITY;
        let mut best_phi = 0;
        let mut best_mus = vec![0usize; self.num_tasks];
        for i in 0..self.num_phi {
            let mut total = 0.0;
            let mut mus = vec![0usize; self.num_tasks];
            for t in 0..self.num_tasks {
                let base = (i * self.num_tasks + t) * self.num_psi;
                let mut task_best = f64::NEG_INFINITY;
                let mut task_j = 0;
                for j in 0..self.num_psi {
                    let v = self.ll[base + j];
                    if v > task_best {
                        task_best = v;
                        task_j = j;
                    }
                }
                total += task_best;
                mus[t] = task_j;
            }
            if total > best_total {
                best_total = total;
                best_phi = i;
                best_mus = mus;
            }
        }
        if best_total == f64::NEG_INFINITY {
            // Identify one offending task for the diagnostic.
            for t in 0..self.num_tasks {
                let all_dead = (0..self.num_phi).all(|i| {
                    let base = (i * self.num_tasks + t) * self.num_psi;
                    (0..self.num_psi).all(|j| self.ll[base + j] == f64::NEG_INFINITY)
                });
                if all_dead {
                    return Err(CoreError::MleInconsistent {
                        task: t,
                        step: self.step,
                    });
                }
            }
            return Err(CoreError::MleInconsistent {
                task: 0,
                step: self.step,
            });
        }
        let per_task_ll = (0..self.num_tasks)
            .map(|t| self.ll[(best_phi * self.num_tasks + t) * self.num_psi + best_mus[t]])
            .collect();
        Ok((best_phi, per_task_ll, best_mus))
    }

    /// Total log-likelihood of an explicit selection on the recorded data.
    pub fn selection_ll(&self, phi: usize, mus: &[usize]) -> f64 {
        let mut total = 0.0;
        for t in 0..self.num_tasks {
            total += self.ll[(phi * self.num_tasks + t) * self.num_psi + mus[t]];
        }
        total
    }
}

/// Joint maximum-likelihood selection over the finite classes for one step:
/// the feature index and one measure index per task.
pub fn joint_mle(
    datasets: &ExplorationDatasets,
    classes: &ModelClass,
    step: usize,
) -> Result<(usize, Vec<usize>)> {
    if step >= datasets.horizon {
        return Err(CoreError::IndexOutOfRange {
            what: "step",
            index: step,
            len: datasets.horizon,
        });
    }
    for t in 0..datasets.num_tasks {
        if datasets.triples(t, step).is_empty() {
            return Err(CoreError::InvalidValue {
                what: "joint_mle requires at least one record per task",
            });
        }
    }
    let mut scorer = MleScorer::new(
        step,
        classes.phis.len(),
        classes.psis.len(),
        datasets.num_tasks,
    );
    for t in 0..datasets.num_tasks {
        for triple in datasets.triples(t, step) {
            scorer.add_record(classes, t, triple);
        }
    }
    let (phi, _, mus) = scorer.argmax()?;
    Ok((phi, mus))
}

/// Empirical feature covariance and the capped elliptical bonus table for
/// one (task, step): `U = lambda I + sum phi phi^T` over the recorded
/// pairs, `b(s,a) = min(alpha_tilde * ||phi(s,a)||_{U^{-1}}, B)`.
pub fn covariance_and_bonus(
    phi: &FeatureTable,
    step: usize,
    pairs: &[(usize, usize)],
    sched: &ScheduleValues,
) -> Result<(SymMatrix, Vec<f64>)> {
    let mut cov = SymMatrix::scaled_identity(phi.dim, sched.lambda);
    for &(s, a) in pairs {
        cov.add_outer(phi.row(step, s, a));
    }
    if !cov.is_finite() {
        return Err(CoreError::Numerical {
            what: "covariance accumulated non-finite entries",
            step,
        });
    }
    let chol = cov.cholesky()?;
    let mut bonus = vec![0.0; phi.num_states * phi.num_actions];
    for s in 0..phi.num_states {
        for a in 0..phi.num_actions {
            let q = chol.quad_form_inv(phi.row(step, s, a)).max(0.0);
            let b = sched.alpha_tilde * math::sqrt(q);
            if !b.is_finite() {
                return Err(CoreError::Numerical {
                    what: "bonus evaluated non-finite",
                    step,
                });
            }
            bonus[s * phi.num_actions + a] = b.min(sched.bound);
        }
    }
    Ok((cov, bonus))
}

/// Per-task expected bonus at each step under the estimated kernels:
/// `x[h][t] = E_{(s,a) ~ occ(P_hat_t, pi_t)}[ b_t,h(s,a) ]`.
fn expected_bonuses(
    models: &[TabularLowRankMdp],
    bonuses: &[Vec<Vec<f64>>],
    policies: &[Policy],
) -> Result<Vec<Vec<f64>>> {
    let horizon = models[0].horizon();
    let bonus_steps = horizon - 1;
    let num_tasks = models.len();
    let mut x = vec![vec![0.0; num_tasks]; bonus_steps];
    for t in 0..num_tasks {
        let occ = occupancy(&models[t], &policies[t])?;
        let k_n = models[t].num_actions();
        for h in 0..bonus_steps {
            let table = &bonuses[t][h];
            let mut acc = 0.0;
            for s in 0..models[t].num_states() {
                for a in 0..k_n {
                    let w = occ.get(h, s, a);
                    if w != 0.0 {
                        acc += w * table[s * k_n + a];
                    }
                }
            }
            x[h][t] = acc;
        }
    }
    Ok(x)
}

fn pcv_from_x(x: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for row in x {
        let mut sq = 0.0;
        for &v in row {
            sq += v * v;
        }
        total += math::sqrt(sq);
    }
    total
}

/// Joint exploration objective: `sum_{h<H-1} sqrt(sum_t x[h][t]^2)` with
/// the expectations evaluated exactly through occupancy measures under the
/// estimated kernels.
pub fn pcv(
    models: &[TabularLowRankMdp],
    bonuses: &[Vec<Vec<f64>>],
    policies: &[Policy],
) -> Result<f64> {
    if models.is_empty() || bonuses.len() != models.len() || policies.len() != models.len() {
        return Err(CoreError::ShapeMismatch { what: "pcv inputs" });
    }
    let bonus_steps = models[0].horizon() - 1;
    for b in bonuses {
        if b.len() != bonus_steps {
            return Err(CoreError::ShapeMismatch {
                what: "bonus tables must cover steps 1..H-1",
            });
        }
    }
    Ok(pcv_from_x(&expected_bonuses(models, bonuses, policies)?))
}

/// Result of one planning call: the chosen policies, their objective value,
/// and the accepted (running-best, hence nondecreasing) objective after
/// each round.
#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub policies: Vec<Policy>,
    pub pcv: f64,
    pub pcv_rounds: Vec<f64>,
}

/// Maximize the joint exploration objective by iterative linearization.
///
/// Initialization plans each task greedily against its own bonus. Each
/// round computes the expected-bonus vector `x`, forms the supporting
/// hyperplane weights `w[h][t] = x / sqrt(sum_t x^2 + 1e-12)`, and replans
/// each task against the weighted bonus; because the objective is convex in
/// `x` and each task's replanning maximizes the linearization exactly over
/// its occupancy polytope, keeping the best iterate yields a nondecreasing
/// accepted sequence. Stops early when a round improves by less than
/// `planner_tol`.
pub fn plan_exploration(
    models: &[TabularLowRankMdp],
    bonuses: &[Vec<Vec<f64>>],
    hyper: &HyperParams,
) -> Result<PlanOutcome> {
    let num_tasks = models.len();
    let horizon = models[0].horizon();
    let (s_n, k_n) = (models[0].num_states(), models[0].num_actions());
    let bonus_steps = horizon - 1;

    let plan_against = |weights: Option<&[Vec<f64>]>| -> Result<Vec<Policy>> {
        let mut out = Vec::with_capacity(num_tasks);
        for t in 0..num_tasks {
            let mut reward = vec![0.0; horizon * s_n * k_n];
            for h in 0..bonus_steps {
                let w = weights.map_or(1.0, |ws| ws[h][t]);
                let table = &bonuses[t][h];
                for cell in 0..s_n * k_n {
                    reward[h * s_n * k_n + cell] = w * table[cell];
                }
            }
            let (_, policy) = optimal_dp_table(&models[t], &reward)?;
            out.push(policy);
        }
        Ok(out)
    };

    let mut current = plan_against(None)?;
    let mut current_pcv = pcv(models, bonuses, &current)?;
    let mut best = current.clone();
    let mut best_pcv = current_pcv;
    let mut rounds = vec![best_pcv];

    for _round in 0..hyper.planner_rounds {
        let x = expected_bonuses(models, bonuses, &current)?;
        let mut weights = vec![vec![0.0; num_tasks]; bonus_steps];
        for h in 0..bonus_steps {
            let mut sq = 0.0;
            for t in 0..num_tasks {
                sq += x[h][t] * x[h][t];
            }
            let denom = math::sqrt(sq + 1e-12);
            for t in 0..num_tasks {
                weights[h][t] = x[h][t] / denom;
            }
        }
        let next = plan_against(Some(&weights))?;
        let next_pcv = pcv(models, bonuses, &next)?;
        let improvement = next_pcv - current_pcv;
        current = next;
        current_pcv = next_pcv;
        if next_pcv > best_pcv {
            best_pcv = next_pcv;
            best = current.clone();
        }
        rounds.push(best_pcv);
        if improvement < hyper.planner_tol {
            break;
        }
    }
    Ok(PlanOutcome {
        policies: best,
        pcv: best_pcv,
        pcv_rounds: rounds,
    })
}

/// Stopping rule: `2 * PCV + 2 * sqrt(K T zeta_n) <= T * eps_u`.
pub fn check_termination(
    pcv_value: f64,
    sched: &ScheduleValues,
    dims: &ScheduleDims,
    eps_u: f64,
) -> bool {
    let k = dims.num_actions as f64;
    let t = dims.num_tasks as f64;
    2.0 * pcv_value + 2.0 * math::sqrt(k * t * sched.zeta) <= t * eps_u
}

/// Output of a full exploration run: the selected factors per step, the
/// per-task kernels they induce, and the run trace.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedRepresentation {
    pub phi_hat: FeatureTable,
    pub mu_hats: Vec<MeasureTable>,
    /// Chosen feature-class index per step.
    pub phi_indices: Vec<usize>,
    /// Chosen measure-class index per (step, task).
    pub mu_indices: Vec<Vec<usize>>,
    /// Iteration at which the run stopped.
    pub n_u: usize,
    /// Whether the stopping rule fired (as opposed to exhausting the
    /// iteration budget or an observer cutting the run short).
    pub terminated: bool,
    pub pcv_history: Vec<f64>,
    pub schedules: Vec<ScheduleValues>,
    pub seed: u64,
}

impl LearnedRepresentation {
    /// Estimated kernel of upstream task `t`.
    pub fn task_kernel(&self, t: usize) -> Result<TabularLowRankMdp> {
        if t >= self.mu_hats.len() {
            return Err(CoreError::IndexOutOfRange {
                what: "task",
                index: t,
                len: self.mu_hats.len(),
            });
        }
        TabularLowRankMdp::new(self.phi_hat.clone(), self.mu_hats[t].clone(), 0)
    }

    pub fn num_tasks(&self) -> usize {
        self.mu_hats.len()
    }
}

/// A completed run: the representation plus the datasets that produced it
/// (kept for diagnostics such as the elliptical-potential check).
#[derive(Clone, Debug)]
pub struct RefuelRun {
    pub learned: LearnedRepresentation,
    pub datasets: ExplorationDatasets,
}

/// Per-iteration snapshot handed to the observer of
/// [`run_refuel_with`]. Returning `true` stops the run after the current
/// iteration (recorded as not terminated by the stopping rule).
pub struct RefuelIterate<'a> {
    pub iteration: usize,
    pub pcv: f64,
    pub schedule: &'a ScheduleValues,
    pub phi_indices: &'a [usize],
    pub task_kernels: &'a [TabularLowRankMdp],
    pub would_terminate: bool,
}

fn assemble_feature(tables: &[FeatureTable], indices: &[usize]) -> Result<FeatureTable> {
    let proto = &tables[indices[0]];
    let mut data = Vec::with_capacity(proto.data().len());
    for (h, &i) in indices.iter().enumerate() {
        data.extend_from_slice(tables[i].step_slice(h));
    }
    FeatureTable::from_raw(
        proto.horizon,
        proto.num_states,
        proto.num_actions,
        proto.dim,
        data,
    )
}

fn assemble_measure(tables: &[MeasureTable], indices: &[usize]) -> Result<MeasureTable> {
    let proto = &tables[indices[0]];
    let mut data = Vec::with_capacity(proto.data().len());
    for (h, &i) in indices.iter().enumerate() {
        data.extend_from_slice(tables[i].step_slice(h));
    }
    MeasureTable::from_raw(proto.horizon, proto.num_states, proto.dim, data)
}

/// Run the exploration loop to termination (or budget) with an observer.
pub fn run_refuel_with<F>(
    family: &TaskFamily,
    classes: &ModelClass,
    hyper: &HyperParams,
    seed: u64,
    mut observer: F,
) -> Result<RefuelRun>
where
    F: FnMut(&RefuelIterate<'_>) -> bool,
{
    hyper.validate()?;
    let spec = &family.spec;
    let dims = ScheduleDims::for_run(family, classes);
    let tasks = family.task_mdps()?;
    let horizon = spec.horizon;
    let num_tasks = spec.num_tasks;

    let root = SplitRng::new(seed);
    let mut datasets = ExplorationDatasets::new(num_tasks, horizon);
    let mut scorers: Vec<MleScorer> = (0..horizon)
        .map(|h| MleScorer::new(h, classes.phis.len(), classes.psis.len(), num_tasks))
        .collect();
    // Iteration-1 exploration policies are uniform.
    let mut policies = vec![Policy::uniform(horizon, spec.num_states, spec.num_actions); num_tasks];

    let mut pcv_history = Vec::new();
    let mut schedules = Vec::new();
    let mut phi_indices = vec![0usize; horizon];
    let mut mu_indices = vec![vec![0usize; num_tasks]; horizon];
    let mut terminated = false;
    let mut n_u = hyper.max_iterations;

    for n in 1..=hyper.max_iterations {
        let collect_seed = root.split_path(&[COLLECT_STREAM, n as u64]).next_u64();
        collect_iteration(&tasks, &policies, n, &mut datasets, collect_seed)?;
        for h in 0..horizon {
            for t in 0..num_tasks {
                let triple = datasets.triples(t, h)[n - 1];
                scorers[h].add_record(classes, t, &triple);
            }
        }
        for h in 0..horizon {
            let (phi_i, _, mu_is) = scorers[h].argmax()?;
            phi_indices[h] = phi_i;
            mu_indices[h] = mu_is;
        }
        let phi_hat = assemble_feature(&classes.phis, &phi_indices)?;
        let mut task_kernels = Vec::with_capacity(num_tasks);
        for t in 0..num_tasks {
            let picks: Vec<usize> = (0..horizon).map(|h| mu_indices[h][t]).collect();
            let mu_hat = assemble_measure(&classes.psis, &picks)?;
            task_kernels.push(TabularLowRankMdp::new(phi_hat.clone(), mu_hat, 0)?);
        }

        let sched = schedule(n, &dims, hyper);
        let mut bonuses = Vec::with_capacity(num_tasks);
        for t in 0..num_tasks {
            let mut per_step = Vec::with_capacity(horizon - 1);
            for h in 0..horizon - 1 {
                let (_, bonus) =
                    covariance_and_bonus(&phi_hat, h, datasets.cov_pairs(t, h), &sched)?;
                per_step.push(bonus);
            }
            bonuses.push(per_step);
        }

        let plan = plan_exploration(&task_kernels, &bonuses, hyper)?;
        pcv_history.push(plan.pcv);
        schedules.push(sched.clone());

        let done = check_termination(plan.pcv, &sched, &dims, hyper.eps_u);
        let stop_requested = observer(&RefuelIterate {
            iteration: n,
            pcv: plan.pcv,
            schedule: &sched,
            phi_indices: &phi_indices,
            task_kernels: &task_kernels,
            would_terminate: done,
        });
        if done || stop_requested || n == hyper.max_iterations {
            terminated = done;
            n_u = n;
            break;
        }
        policies = plan.policies;
    }

    let phi_hat = assemble_feature(&classes.phis, &phi_indices)?;
    let mut mu_hats = Vec::with_capacity(num_tasks);
    for t in 0..num_tasks {
        let picks: Vec<usize> = (0..horizon).map(|h| mu_indices[h][t]).collect();
        mu_hats.push(assemble_measure(&classes.psis, &picks)?);
    }
    Ok(RefuelRun {
        learned: LearnedRepresentation {
            phi_hat,
            mu_hats,
            phi_indices,
            mu_indices,
            n_u,
            terminated,
            pcv_history,
            schedules,
            seed,
        },
        datasets,
    })
}

/// Run the exploration loop to termination (or budget).
pub fn run_refuel(
    family: &TaskFamily,
    classes: &ModelClass,
    hyper: &HyperParams,
    seed: u64,
) -> Result<RefuelRun> {
    run_refuel_with(family, classes, hyper, seed, |_| false)
}

/// Post-hoc planning: exact backward induction of a revealed reward on an
/// estimated kernel.
pub fn plan_with_reward(p_hat: &TabularLowRankMdp, reward: &RewardTable) -> Result<Policy> {
    Ok(optimal_dp(p_hat, reward)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::{self, FamilySpec};
    use crate::eval;

    fn spec() -> FamilySpec {
        FamilySpec {
            num_states: 5,
            num_actions: 3,
            horizon: 4,
            dim: 2,
            num_tasks: 3,
            seed: 91,
            xi_target: 0.02,
            reward_dim: 3,
            phi_class_size: 4,
            psi_class_size: 6,
            decoy_separation: 0.05,
        }
    }

    fn fixture() -> (crate::envgen::TaskFamily, ModelClass) {
        let s = spec();
        let family = envgen::generate_family(&s).unwrap();
        let classes = envgen::generate_model_classes(&family, &s, 17).unwrap();
        (family, classes)
    }

    #[test]
    fn schedule_monotonicity() {
        let dims = ScheduleDims {
            dim: 2,
            num_actions: 3,
            num_tasks: 4,
            horizon: 4,
            phi_class_size: 6,
            psi_class_size: 12,
        };
        let hyper = HyperParams::default();
        let mut prev = schedule(1, &dims, &hyper);
        for n in 2..200 {
            let cur = schedule(n, &dims, &hyper);
            assert!(cur.zeta < prev.zeta, "zeta must decrease");
            assert!(
                cur.alpha_tilde >= prev.alpha_tilde,
                "alpha must not decrease"
            );
            assert_eq!(cur.bound, prev.bound, "bound is n-independent");
            prev = cur;
        }
        let z1 = schedule(7, &dims, &hyper).zeta;
        let z2 = schedule(14, &dims, &hyper).zeta;
        assert!(z2 < z1);
    }

    #[test]
    fn dataset_cardinality_identities() {
        let (family, _classes) = fixture();
        let tasks = family.task_mdps().unwrap();
        let policies = vec![Policy::uniform(4, 5, 3); family.num_tasks()];
        let mut datasets = ExplorationDatasets::new(family.num_tasks(), 4);
        for n in 1..=5 {
            collect_iteration(&tasks, &policies, n, &mut datasets, 1000 + n as u64).unwrap();
        }
        for t in 0..family.num_tasks() {
            for h in 0..4 {
                assert_eq!(datasets.triples(t, h).len(), 5);
            }
            for h in 0..3 {
                assert_eq!(datasets.cov_pairs(t, h).len(), 5);
            }
        }
    }

    #[test]
    fn step_zero_triples_start_at_initial_state() {
        let (family, _) = fixture();
        let tasks = family.task_mdps().unwrap();
        let policies = vec![Policy::uniform(4, 5, 3); family.num_tasks()];
        let mut datasets = ExplorationDatasets::new(family.num_tasks(), 4);
        for n in 1..=20 {
            collect_iteration(&tasks, &policies, n, &mut datasets, n as u64).unwrap();
        }
        for t in 0..family.num_tasks() {
            for triple in datasets.triples(t, 0) {
                assert_eq!(triple.state, tasks[t].initial_state());
            }
        }
    }

    #[test]
    fn recorded_actions_are_uniform() {
        // Frequencies of the recorded action at each step should be uniform
        // over K within 3 sigma of the binomial standard error.
        let (family, _) = fixture();
        let tasks = family.task_mdps().unwrap();
        let policies: Vec<Policy> = (0..family.num_tasks())
            .map(|t| Policy::random(4, 5, 3, 400 + t as u64))
            .collect();
        let mut datasets = ExplorationDatasets::new(family.num_tasks(), 4);
        let n_iter = 10_000;
        for n in 1..=n_iter {
            collect_iteration(&tasks, &policies, n, &mut datasets, 7_000 + n as u64).unwrap();
        }
        let k = 3.0;
        let p = 1.0 / k;
        let sigma = (p * (1.0 - p) / n_iter as f64).sqrt();
        for t in 0..family.num_tasks() {
            for h in 0..4 {
                let mut counts = [0usize; 3];
                for triple in datasets.triples(t, h) {
                    counts[triple.action] += 1;
                }
                for &c in &counts {
                    let freq = c as f64 / n_iter as f64;
                    assert!(
                        (freq - p).abs() <= 3.0 * sigma,
                        "action frequency {freq} at (t={t}, h={h}) deviates from uniform"
                    );
                }
            }
        }
    }

    #[test]
    fn joint_mle_singleton_classes() {
        let mut s = spec();
        s.num_tasks = 1;
        s.phi_class_size = 1;
        s.psi_class_size = 1;
        let family = envgen::generate_family(&s).unwrap();
        let classes = envgen::generate_model_classes(&family, &s, 3).unwrap();
        let tasks = family.task_mdps().unwrap();
        let policies = vec![Policy::uniform(4, 5, 3)];
        let mut datasets = ExplorationDatasets::new(1, 4);
        collect_iteration(&tasks, &policies, 1, &mut datasets, 5).unwrap();
        for h in 0..4 {
            let (phi_i, mu_is) = joint_mle(&datasets, &classes, h).unwrap();
            assert_eq!(phi_i, 0);
            assert_eq!(mu_is, vec![0]);
        }
    }

    #[test]
    fn joint_mle_dominates_truth_likelihood() {
        let (family, classes) = fixture();
        let tasks = family.task_mdps().unwrap();
        let policies = vec![Policy::uniform(4, 5, 3); family.num_tasks()];
        let mut datasets = ExplorationDatasets::new(family.num_tasks(), 4);
        for n in 1..=60 {
            collect_iteration(&tasks, &policies, n, &mut datasets, 600 + n as u64).unwrap();
        }
        for h in 0..4 {
            let mut scorer = MleScorer::new(
                h,
                classes.phis.len(),
                classes.psis.len(),
                family.num_tasks(),
            );
            for t in 0..family.num_tasks() {
                for triple in datasets.triples(t, h) {
                    scorer.add_record(&classes, t, triple);
                }
            }
            let (phi_i, _, mu_is) = scorer.argmax().unwrap();
            let selected = scorer.selection_ll(phi_i, &mu_is);
            let truth = scorer.selection_ll(classes.truth_phi_index, &classes.truth_mu_indices);
            assert!(selected >= truth - 1e-9, "MLE must dominate the truth");
        }
    }

    #[test]
    fn covariance_without_pairs_is_scaled_identity() {
        let (family, _) = fixture();
        let sched = ScheduleValues {
            lambda: 2.5,
            zeta: 1.0,
            alpha_tilde: 1.5,
            bound: 4.0,
        };
        let (cov, bonus) = covariance_and_bonus(&family.shared_phi, 0, &[], &sched).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 2.5 } else { 0.0 };
                assert!((cov.get(i, j) - expect).abs() < 1e-15);
            }
        }
        // Bonus reduces to alpha * ||phi||_2 / sqrt(lambda), capped at B.
        for s in 0..family.spec.num_states {
            for a in 0..family.spec.num_actions {
                let phi = family.shared_phi.row(0, s, a);
                let expect = (sched.alpha_tilde * math::norm2(phi) / math::sqrt(sched.lambda))
                    .min(sched.bound);
                let got = bonus[s * family.spec.num_actions + a];
                assert!((got - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_spectrum_and_quadform_bounds() {
        // Eigenvalues of U stay at or above lambda, and the inverse
        // quadratic form never exceeds ||phi||^2 / lambda.
        let (family, _) = fixture();
        let sched = ScheduleValues {
            lambda: 1.7,
            zeta: 1.0,
            alpha_tilde: 1.0,
            bound: f64::INFINITY,
        };
        let pairs = [(0, 0), (1, 1), (2, 2), (4, 0), (3, 1)];
        let (cov, bonus) = covariance_and_bonus(&family.shared_phi, 2, &pairs, &sched).unwrap();
        assert!(cov.min_eigenvalue() >= sched.lambda - 1e-12);
        for s in 0..family.spec.num_states {
            for a in 0..family.spec.num_actions {
                let phi = family.shared_phi.row(2, s, a);
                let q = bonus[s * family.spec.num_actions + a];
                let cap = math::norm2(phi) / math::sqrt(sched.lambda);
                assert!(q * q <= cap * cap + 1e-12);
            }
        }
    }

    #[test]
    fn bonus_is_capped() {
        let (family, _) = fixture();
        let sched = ScheduleValues {
            lambda: 1e-6,
            zeta: 1.0,
            alpha_tilde: 1e6,
            bound: 3.0,
        };
        let (_, bonus) = covariance_and_bonus(&family.shared_phi, 1, &[(0, 0)], &sched).unwrap();
        assert!(bonus.iter().all(|&b| b <= 3.0 + 1e-12));
    }

    #[test]
    fn pcv_single_task_is_plain_sum() {
        let (family, _) = fixture();
        let model = family.task_mdp(0).unwrap();
        let policy = Policy::random(4, 5, 3, 9);
        let bonuses = vec![vec![vec![0.25; 15]; 3]];
        let v = pcv(&[model.clone()], &bonuses, core::slice::from_ref(&policy)).unwrap();
        // Constant bonus 0.25 at three steps: occupancy mass is 1 per step.
        assert!((v - 0.75).abs() < 1e-12);
    }

    #[test]
    fn pcv_constant_bonus_closed_form() {
        let (family, _) = fixture();
        let models = family.task_mdps().unwrap();
        let t = family.num_tasks();
        let b = 0.4;
        let bonuses = vec![vec![vec![b; 15]; 3]; t];
        let policies: Vec<Policy> = (0..t).map(|i| Policy::random(4, 5, 3, i as u64)).collect();
        let v = pcv(&models, &bonuses, &policies).unwrap();
        let expect = 3.0 * (t as f64).sqrt() * b;
        assert!((v - expect).abs() < 1e-9);
    }

    #[test]
    fn planner_rounds_are_nondecreasing_and_beat_greedy_init() {
        let (family, classes) = fixture();
        let run = run_refuel_with(&family, &classes, &HyperParams::default(), 5, |it| {
            it.iteration >= 3
        })
        .unwrap();
        // Rebuild the planning inputs at the recorded state and re-plan.
        let learned = &run.learned;
        let models: Vec<TabularLowRankMdp> = (0..family.num_tasks())
            .map(|t| learned.task_kernel(t).unwrap())
            .collect();
        let sched = learned.schedules.last().unwrap();
        let mut bonuses = Vec::new();
        for t in 0..family.num_tasks() {
            let mut per_step = Vec::new();
            for h in 0..3 {
                let (_, bonus) =
                    covariance_and_bonus(&learned.phi_hat, h, run.datasets.cov_pairs(t, h), sched)
                        .unwrap();
                per_step.push(bonus);
            }
            bonuses.push(per_step);
        }
        let outcome = plan_exploration(&models, &bonuses, &HyperParams::default()).unwrap();
        for w in outcome.pcv_rounds.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "accepted PCV must not decrease");
        }
        assert!(outcome.pcv >= outcome.pcv_rounds[0] - 1e-12);
    }

    #[test]
    fn termination_rule_boundaries() {
        let dims = ScheduleDims {
            dim: 2,
            num_actions: 3,
            num_tasks: 4,
            horizon: 4,
            phi_class_size: 6,
            psi_class_size: 12,
        };
        let sched = ScheduleValues {
            lambda: 1.0,
            zeta: 1e-6,
            alpha_tilde: 1.0,
            bound: 1.0,
        };
        let eps = 0.15;
        // PCV = 0 with tiny zeta terminates.
        assert!(check_termination(0.0, &sched, &dims, eps));
        // PCV at the full budget cannot terminate: LHS >= 2 T eps > T eps.
        assert!(!check_termination(4.0 * eps, &sched, &dims, eps));
        // Hand evaluation of the boundary.
        let lhs = 2.0 * 0.1 + 2.0 * (3.0f64 * 4.0 * sched.zeta).sqrt();
        assert_eq!(lhs <= 4.0 * eps, check_termination(0.1, &sched, &dims, eps));
    }

    #[test]
    fn singleton_classes_recover_truth_immediately() {
        let mut s = spec();
        s.num_tasks = 1;
        s.phi_class_size = 1;
        s.psi_class_size = 1;
        let family = envgen::generate_family(&s).unwrap();
        let classes = envgen::generate_model_classes(&family, &s, 3).unwrap();
        let hyper = HyperParams {
            max_iterations: 1,
            ..HyperParams::default()
        };
        let run = run_refuel(&family, &classes, &hyper, 1).unwrap();
        // Only candidate is the truth: estimated kernels match exactly.
        for t in 0..s.num_tasks {
            let est = run.learned.task_kernel(t).unwrap();
            let truth = family.task_mdp(t).unwrap();
            for h in 0..s.horizon {
                for st in 0..s.num_states {
                    for a in 0..s.num_actions {
                        let tv = crate::mdp::tv_distance(
                            est.transition_dist(h, st, a).unwrap(),
                            truth.transition_dist(h, st, a).unwrap(),
                        )
                        .unwrap();
                        assert_eq!(tv, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let (family, classes) = fixture();
        let hyper = HyperParams {
            max_iterations: 6,
            ..HyperParams::default()
        };
        let a = run_refuel(&family, &classes, &hyper, 77).unwrap();
        let b = run_refuel(&family, &classes, &hyper, 77).unwrap();
        assert_eq!(a.learned, b.learned);
        assert_eq!(a.datasets, b.datasets);
    }

    #[test]
    fn elliptical_potential_holds_on_recorded_run() {
        let (family, classes) = fixture();
        let hyper = HyperParams {
            max_iterations: 12,
            ..HyperParams::default()
        };
        let run = run_refuel(&family, &classes, &hyper, 3).unwrap();
        for outcome in eval::upstream_elliptical(&run) {
            assert!(outcome.ok, "lhs {} > bound {}", outcome.lhs, outcome.bound);
        }
    }

    #[test]
    fn plan_with_reward_on_truth_is_optimal() {
        let (family, _) = fixture();
        let truth = family.task_mdp(0).unwrap();
        let reward = &family.rewards[0];
        let policy = plan_with_reward(&truth, reward).unwrap();
        let v = crate::mdp::value_dp(&truth, reward, &policy).unwrap();
        let (v_star, _) = crate::mdp::optimal_dp(&truth, reward).unwrap();
        assert!((v - v_star).abs() < 1e-12);
    }
}
