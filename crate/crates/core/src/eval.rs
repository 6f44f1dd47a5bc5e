//! Metrics and numeric oracles: exact model-error evaluation, suboptimality
//! gaps, brute-force verification of the joint likelihood selection, and
//! the elliptical-potential check.

use alloc::vec;
use alloc::vec::Vec;

use crate::envgen::{ModelClass, TaskFamily};
use crate::error::CoreError;
use crate::linalg::SymMatrix;
use crate::math;
use crate::mdp::{occupancy, optimal_dp, value_dp, Policy, RewardTable, TabularLowRankMdp};
use crate::upstream::{ExplorationDatasets, LearnedRepresentation, MleScorer, RefuelRun};
use crate::Result;

/// Worst case over the provided policy sets of the task-averaged expected
/// TV error at step `h`: for each set `{pi_t}`,
/// `(1/T) sum_t E_{(s,a) ~ occ(P*_t, pi_t)}[ TV(P_hat_t, P*_t)(h, s, a) ]`,
/// evaluated exactly, occupancy taken under the true kernels.
pub fn avg_tv_error(
    family: &TaskFamily,
    learned: &LearnedRepresentation,
    policy_sets: &[Vec<Policy>],
    step: usize,
) -> Result<f64> {
    let num_tasks = family.num_tasks();
    if learned.num_tasks() != num_tasks {
        return Err(CoreError::ShapeMismatch {
            what: "learned representation vs family task count",
        });
    }
    if step >= family.spec.horizon {
        return Err(CoreError::IndexOutOfRange {
            what: "step",
            index: step,
            len: family.spec.horizon,
        });
    }
    let truths = family.task_mdps()?;
    let estimates: Vec<TabularLowRankMdp> = (0..num_tasks)
        .map(|t| learned.task_kernel(t))
        .collect::<Result<_>>()?;
    let mut worst = 0.0_f64;
    for set in policy_sets {
        if set.len() != num_tasks {
            return Err(CoreError::ShapeMismatch {
                what: "policy set vs task count",
            });
        }
        let mut avg = 0.0;
        for t in 0..num_tasks {
            let occ = occupancy(&truths[t], &set[t])?;
            let mut err = 0.0;
            for s in 0..family.spec.num_states {
                for a in 0..family.spec.num_actions {
                    let w = occ.get(step, s, a);
                    if w != 0.0 {
                        err += w * math::tv_raw(
                            estimates[t].kernel_row(step, s, a),
                            truths[t].kernel_row(step, s, a),
                        );
                    }
                }
            }
            avg += err;
        }
        avg /= num_tasks as f64;
        if avg > worst {
            worst = avg;
        }
    }
    Ok(worst)
}

/// Max over steps of [`avg_tv_error`]; the strongest form of the
/// every-step guarantee.
pub fn avg_tv_error_all_steps(
    family: &TaskFamily,
    learned: &LearnedRepresentation,
    policy_sets: &[Vec<Policy>],
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for h in 0..family.spec.horizon {
        worst = worst.max(avg_tv_error(family, learned, policy_sets, h)?);
    }
    Ok(worst)
}

/// A fixed panel of seeded random per-task policy sets.
pub fn random_policy_panel(
    num_sets: usize,
    num_tasks: usize,
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    seed: u64,
) -> Vec<Vec<Policy>> {
    let root = crate::rng::SplitRng::new(seed);
    (0..num_sets)
        .map(|i| {
            (0..num_tasks)
                .map(|t| {
                    Policy::random(
                        horizon,
                        num_states,
                        num_actions,
                        root.split_path(&[i as u64, t as u64]).next_u64(),
                    )
                })
                .collect()
        })
        .collect()
}

/// `V* - V^pi` on the true model; nonnegative up to rounding.
pub fn suboptimality_gap(
    mdp: &TabularLowRankMdp,
    reward: &RewardTable,
    policy: &Policy,
) -> Result<f64> {
    let (v_star, _) = optimal_dp(mdp, reward)?;
    Ok(v_star - value_dp(mdp, reward, policy)?)
}

/// Verify that the factorized joint likelihood selection attains the global
/// maximum found by full enumeration over `|Phi| * |Psi|^T` combinations.
/// Refuses instances beyond a million combinations.
pub fn brute_force_mle_check(
    datasets: &ExplorationDatasets,
    classes: &ModelClass,
    step: usize,
) -> Result<bool> {
    let num_phi = classes.phis.len();
    let num_psi = classes.psis.len();
    let num_tasks = datasets.num_tasks;
    let mut combos = num_phi as f64;
    for _ in 0..num_tasks {
        combos *= num_psi as f64;
        if combos > 1e6 {
            return Err(CoreError::InvalidValue {
                what: "brute-force enumeration refused beyond 1e6 combinations",
            });
        }
    }

    let mut scorer = MleScorer::new(step, num_phi, num_psi, num_tasks);
    for t in 0..num_tasks {
        for triple in datasets.triples(t, step) {
            scorer.add_record(classes, t, triple);
        }
    }
    let (phi_sel, _, mus_sel) = scorer.argmax()?;
    let selected = scorer.selection_ll(phi_sel, &mus_sel);

    // Odometer over all measure assignments for each feature candidate.
    let mut best = f64::NEG_INFINITY;
    let mut assignment = vec![0usize; num_tasks];
    for phi_i in 0..num_phi {
        assignment.iter_mut().for_each(|x| *x = 0);
        loop {
            let ll = scorer.selection_ll(phi_i, &assignment);
            if ll > best {
                best = ll;
            }
            let mut pos = 0;
            loop {
                if pos == num_tasks {
                    break;
                }
                assignment[pos] += 1;
                if assignment[pos] < num_psi {
                    break;
                }
                assignment[pos] = 0;
                pos += 1;
            }
            if pos == num_tasks {
                break;
            }
        }
    }
    let tol = 1e-9 * best.abs().max(1.0);
    Ok(selected >= best - tol)
}

/// Outcome of one elliptical-potential evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipticalOutcome {
    pub lhs: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Evaluate `sum_n tr(X_n M_{n-1}^{-1})` for `X_n = v_n v_n^T` against the
/// bound `2 d ln(1 + N / (d lambda))`. Requires `||v||_2 <= 1` per vector.
pub fn elliptical_check(trace: &[Vec<f64>], lambda: f64, dim: usize) -> Result<EllipticalOutcome> {
    if lambda <= 0.0 {
        return Err(CoreError::InvalidValue {
            what: "elliptical check needs a positive regularizer",
        });
    }
    let mut m = SymMatrix::scaled_identity(dim, lambda);
    let mut lhs = 0.0;
    for v in trace {
        if v.len() != dim {
            return Err(CoreError::ShapeMismatch {
                what: "elliptical trace vector dimension",
            });
        }
        if math::norm2(v) > 1.0 + 1e-9 {
            return Err(CoreError::InvalidValue {
                what: "elliptical trace vector exceeds unit norm",
            });
        }
        lhs += m.cholesky()?.quad_form_inv(v).max(0.0);
        m.add_outer(v);
    }
    let n = trace.len() as f64;
    let bound = 2.0 * dim as f64 * math::ln(1.0 + n / (dim as f64 * lambda));
    Ok(EllipticalOutcome {
        lhs,
        bound,
        ok: lhs <= bound + 1e-9,
    })
}

/// Evaluate the elliptical potential on every (task, step) covariance
/// stream of a recorded exploration run, with the final feature map and
/// the iteration-1 regularizer.
pub fn upstream_elliptical(run: &RefuelRun) -> Vec<EllipticalOutcome> {
    let learned = &run.learned;
    let lambda1 = learned.schedules.first().map_or(1.0, |s| s.lambda);
    let dim = learned.phi_hat.dim;
    let horizon = learned.phi_hat.horizon;
    let mut outcomes = Vec::new();
    for t in 0..learned.num_tasks() {
        for h in 0..horizon.saturating_sub(1) {
            let trace: Vec<Vec<f64>> = run
                .datasets
                .cov_pairs(t, h)
                .iter()
                .map(|&(s, a)| learned.phi_hat.row(h, s, a).to_vec())
                .collect();
            // Simplex rows have unit-or-less norm, so the check never errs.
            outcomes.push(
                elliptical_check(&trace, lambda1, dim)
                    .expect("feature rows satisfy the norm precondition"),
            );
        }
    }
    outcomes
}
