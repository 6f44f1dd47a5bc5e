//! Subcommand implementations: each reads its inputs from the output
//! directory, computes, and writes canonical artifacts back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use refuel_core::envgen::{self, TaskFamily};
use refuel_core::eval;
use refuel_core::mdp::{optimal_dp, value_dp, FeatureTable, Policy};
use refuel_core::offline::{self, PessimismConfig};
use refuel_core::online::{self, OnlineConfig};
use refuel_core::upstream::{self, RefuelRun};

use crate::config::{FeatureChoice, PipelineConfig};
use crate::io::{self, CsvCell};
use crate::ioerr::IoError;
use crate::report::{emit_report, Curve, RunReport};
use crate::schema::{FamilyDoc, LearnedDoc, ModelClassDoc, OfflineRecordDoc, PolicyDoc};

pub const FAMILY_FILE: &str = "family.json";
pub const CLASS_FILE: &str = "model_class.json";
pub const LEARNED_FILE: &str = "learned.json";

fn config_snapshot(cfg: &PipelineConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// `gen`: generate the family and the model classes, measure the constants
/// against the full class, and persist both artifacts.
pub fn cmd_gen(cfg: &PipelineConfig, out: &Path) -> Result<(), IoError> {
    let spec = cfg.family.clone().into_core();
    let mut family = envgen::generate_family(&spec)?;
    let classes = envgen::generate_model_classes(&family, &spec, cfg.class_seed)?;
    family.constants = envgen::family_constants(&family, &classes)?;
    io::save_canonical(&out.join(FAMILY_FILE), &FamilyDoc::from_core(&family))?;
    io::save_canonical(&out.join(CLASS_FILE), &ModelClassDoc::from_core(&classes))?;
    Ok(())
}

pub fn load_family(out: &Path) -> Result<TaskFamily, IoError> {
    let doc: FamilyDoc = io::load_document(&out.join(FAMILY_FILE), "family")?;
    doc.into_core()
}

/// `upstream`: run the exploration loop, persist the representation, the
/// per-iteration trace and a metrics report. A run that exhausts its
/// iteration budget still writes everything, then reports the exhaustion.
pub fn cmd_upstream(cfg: &PipelineConfig, out: &Path) -> Result<(), IoError> {
    let family = load_family(out)?;
    let classes =
        io::load_document::<ModelClassDoc>(&out.join(CLASS_FILE), "model_class")?.into_core()?;
    let hyper = cfg.hyper.to_core();
    let seed = cfg.primary_seed();
    let run = upstream::run_refuel(&family, &classes, &hyper, seed)?;
    write_upstream_artifacts(cfg, out, &run)?;
    if !run.learned.terminated {
        return Err(IoError::BudgetExhausted(format!(
            "exploration did not satisfy the stopping rule within {} iterations",
            hyper.max_iterations
        )));
    }
    Ok(())
}

fn write_upstream_artifacts(
    cfg: &PipelineConfig,
    out: &Path,
    run: &RefuelRun,
) -> Result<(), IoError> {
    let learned = &run.learned;
    io::save_canonical(&out.join(LEARNED_FILE), &LearnedDoc::from_core(learned))?;

    let mut rows = Vec::with_capacity(learned.pcv_history.len());
    for (i, (pcv, sched)) in learned
        .pcv_history
        .iter()
        .zip(&learned.schedules)
        .enumerate()
    {
        let n = i + 1;
        let terminated_here = learned.terminated && n == learned.n_u;
        rows.push(vec![
            CsvCell::from(n),
            CsvCell::from(*pcv),
            CsvCell::from(sched.zeta),
            CsvCell::from(sched.lambda),
            CsvCell::from(sched.alpha_tilde),
            CsvCell::from(terminated_here),
        ]);
    }
    io::write_csv(
        &out.join("upstream_trace.csv"),
        &[
            "n",
            "pcv",
            "zeta_n",
            "lambda_n",
            "alpha_tilde_n",
            "terminated",
        ],
        &rows,
    )?;

    let outcomes = eval::upstream_elliptical(run);
    let all_ok = outcomes.iter().all(|o| o.ok);
    let worst_slack = outcomes
        .iter()
        .map(|o| o.bound - o.lhs)
        .fold(f64::INFINITY, f64::min);

    let mut report = RunReport::new(config_snapshot(cfg), vec![learned.seed]);
    report.insert_metric("n_u", learned.n_u as f64);
    report.insert_metric("terminated", learned.terminated as u8 as f64);
    report.insert_metric(
        "final_pcv",
        *learned.pcv_history.last().expect("at least one iteration"),
    );
    report.insert_metric("elliptical_all_ok", all_ok as u8 as f64);
    report.insert_metric("elliptical_worst_slack", worst_slack);
    report.curves.push(Curve {
        name: "pcv".into(),
        columns: vec!["n".into(), "pcv".into()],
        rows: learned
            .pcv_history
            .iter()
            .enumerate()
            .map(|(i, p)| vec![(i + 1) as f64, *p])
            .collect(),
    });
    emit_report(&report, out, "upstream_report")?;
    Ok(())
}

/// Resolve the feature table a downstream planner uses.
fn features_for(
    choice: FeatureChoice,
    family: &TaskFamily,
    out: &Path,
) -> Result<(FeatureTable, &'static str), IoError> {
    match choice {
        FeatureChoice::Learned => {
            let learned =
                io::load_document::<LearnedDoc>(&out.join(LEARNED_FILE), "learned")?.into_core()?;
            Ok((learned.phi_hat, "learned"))
        }
        FeatureChoice::Oracle => Ok((family.shared_phi.clone(), "oracle")),
        FeatureChoice::OneHot => Ok((
            offline::one_hot_features(
                family.spec.horizon,
                family.spec.num_states,
                family.spec.num_actions,
            ),
            "one_hot",
        )),
    }
}

/// Resolve the misspecification allowance: explicit override or the
/// certified bound derived from the measured family constants.
fn xi_down_for(
    override_value: Option<f64>,
    family: &TaskFamily,
    eps_u: f64,
) -> Result<f64, IoError> {
    match override_value {
        Some(x) => Ok(x),
        None => Ok(envgen::compute_xi_down(
            &family.constants,
            family.num_tasks(),
            eps_u,
        )?),
    }
}

fn behavior_policy(family: &TaskFamily, behavior_seed: Option<u64>) -> Policy {
    let spec = &family.spec;
    match behavior_seed {
        None => Policy::uniform(spec.horizon, spec.num_states, spec.num_actions),
        Some(seed) => Policy::random(spec.horizon, spec.num_states, spec.num_actions, seed),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineReportDoc {
    pub version: u64,
    pub kind: String,
    pub n_off: usize,
    pub features: String,
    pub xi_down_used: f64,
    pub beta: f64,
    pub iota: f64,
    /// Per step: min, mean, max of the uncertainty metric.
    pub per_step_gamma: Vec<Vec<f64>>,
    /// Pessimistic value estimate at the initial state.
    pub initial_value: f64,
    /// Exact evaluation against the generator (available because the
    /// harness owns the true model).
    pub v_star: f64,
    pub v_policy: f64,
    pub gap: f64,
    pub feature_coverage: f64,
    pub seed: u64,
}

/// `offline`: roll a behavior-policy dataset, run the pessimistic backup,
/// and report the exact suboptimality gap next to the diagnostics.
pub fn cmd_offline(cfg: &PipelineConfig, out: &Path) -> Result<(), IoError> {
    let family = load_family(out)?;
    let section = &cfg.offline;
    let mdp = &family.downstream;
    let reward = &family.downstream_reward;
    let behavior = behavior_policy(&family, section.behavior_seed);
    let (phi, feature_name) = features_for(section.features, &family, out)?;
    let xi_down = xi_down_for(section.xi_down, &family, cfg.hyper.eps_u)?;
    let seed = cfg.primary_seed();

    let dataset = offline::gen_offline_dataset(mdp, reward, &behavior, section.n_off, seed)?;
    let records: Vec<OfflineRecordDoc> = dataset
        .records
        .iter()
        .map(OfflineRecordDoc::from_core)
        .collect();
    io::save_ndjson(&out.join("offline_dataset.ndjson"), &records)?;

    let pess = PessimismConfig {
        lambda: section.lambda,
        c_beta: section.c_beta,
        delta: section.delta,
        xi_down,
        reward_dim: reward.feature_dim,
    };
    let (policy, diag) = offline::pevi(&dataset, &phi, reward, &pess)?;
    let (v_star, _) = optimal_dp(mdp, reward)?;
    let v_policy = value_dp(mdp, reward, &policy)?;
    let coverage = offline::feature_coverage(&behavior, mdp, &phi)?;

    io::save_canonical(
        &out.join("offline_policy.json"),
        &PolicyDoc::from_core(&policy),
    )?;
    io::save_canonical(
        &out.join("offline_report.json"),
        &OfflineReportDoc {
            version: crate::schema::SCHEMA_VERSION,
            kind: "offline_report".into(),
            n_off: section.n_off,
            features: feature_name.into(),
            xi_down_used: xi_down,
            beta: diag.beta,
            iota: diag.iota,
            per_step_gamma: diag
                .per_step_gamma
                .iter()
                .map(|g| vec![g.min, g.mean, g.max])
                .collect(),
            initial_value: diag.initial_value,
            v_star,
            v_policy,
            gap: v_star - v_policy,
            feature_coverage: coverage,
            seed,
        },
    )?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineReportDoc {
    pub version: u64,
    pub kind: String,
    pub num_episodes: usize,
    pub features: String,
    pub xi_down_used: f64,
    /// Greedy action per `[episode][step][state]`, flattened row-major.
    pub greedy_actions: Vec<usize>,
    pub optimistic_values: Vec<f64>,
    pub returns: Vec<f64>,
    /// Realized quadratic forms `[step][episode]`.
    pub bonus_trace: Vec<Vec<f64>>,
    pub seed: u64,
}

/// `online`: run optimistic value iteration on the downstream task, check
/// the elliptical potential on the realized data, and report the exact
/// mixture value against the optimum.
pub fn cmd_online(cfg: &PipelineConfig, out: &Path) -> Result<(), IoError> {
    let family = load_family(out)?;
    let section = &cfg.online;
    let mdp = &family.downstream;
    let reward = &family.downstream_reward;
    let (phi, feature_name) = features_for(section.features, &family, out)?;
    let xi_down = xi_down_for(section.xi_down, &family, cfg.hyper.eps_u)?;
    let seed = cfg.primary_seed();

    let config = OnlineConfig {
        lambda: section.lambda,
        c_beta: section.c_beta,
        delta: section.delta,
        xi_down,
        reward_dim: reward.feature_dim,
        num_episodes: section.n_on,
    };
    let record = online::run_lsvi_ucb(mdp, reward, &phi, &config, seed)?;
    let (v_star, _) = optimal_dp(mdp, reward)?;
    let mixture = online::mixture_value(&record, mdp, reward)?;

    // Exact per-episode policy values drive the regret curve.
    let (h_n, s_n) = (mdp.horizon(), mdp.num_states());
    let mut greedy_actions = Vec::with_capacity(record.policies.len() * h_n * s_n);
    let mut rows = Vec::with_capacity(record.policies.len());
    let mut cumulative_regret = 0.0;
    for (i, policy) in record.policies.iter().enumerate() {
        for h in 0..h_n {
            for s in 0..s_n {
                let row = policy.row(h, s);
                let action = row
                    .iter()
                    .position(|&p| p == 1.0)
                    .expect("greedy policies are deterministic");
                greedy_actions.push(action);
            }
        }
        let exact = value_dp(mdp, reward, policy)?;
        cumulative_regret += v_star - exact;
        rows.push(vec![
            CsvCell::from(i + 1),
            CsvCell::from(record.returns[i]),
            CsvCell::from(record.optimistic_values[i]),
            CsvCell::from(cumulative_regret),
        ]);
    }
    io::write_csv(
        &out.join("online_trace.csv"),
        &["n", "return", "V1", "regret_to_date"],
        &rows,
    )?;

    // Elliptical potential on the realized feature trace, one check per step.
    let mut elliptical_ok = true;
    let mut worst_slack = f64::INFINITY;
    for h in 0..h_n {
        let trace: Vec<Vec<f64>> = record
            .trajectories
            .iter()
            .map(|t| phi.row(h, t.steps[h].state, t.steps[h].action).to_vec())
            .collect();
        let outcome = eval::elliptical_check(&trace, section.lambda, phi.dim)?;
        elliptical_ok &= outcome.ok;
        worst_slack = worst_slack.min(outcome.bound - outcome.lhs);
    }

    io::save_canonical(
        &out.join("online_report.json"),
        &OnlineReportDoc {
            version: crate::schema::SCHEMA_VERSION,
            kind: "online_report".into(),
            num_episodes: section.n_on,
            features: feature_name.into(),
            xi_down_used: xi_down,
            greedy_actions,
            optimistic_values: record.optimistic_values.clone(),
            returns: record.returns.clone(),
            bonus_trace: record.bonus_trace.clone(),
            seed,
        },
    )?;

    let mut report = RunReport::new(config_snapshot(cfg), vec![seed]);
    report.insert_metric("v_star", v_star);
    report.insert_metric("mixture_value", mixture);
    report.insert_metric("avg_regret", v_star - mixture);
    report.insert_metric("elliptical_all_ok", elliptical_ok as u8 as f64);
    report.insert_metric("elliptical_worst_slack", worst_slack);
    report.insert_metric(
        "near_optimism_fraction",
        online::near_optimism_fraction(&record, v_star, xi_down),
    );
    report.insert_metric("xi_down_used", xi_down);
    emit_report(&report, out, "online_metrics")?;
    Ok(())
}

/// `eval`: metrics of the saved representation against the saved family:
/// the worst panel-averaged TV error over steps, the mean post-hoc
/// planning gap over random rewards, and the certified downstream
/// misspecification.
pub fn cmd_eval(cfg: &PipelineConfig, out: &Path) -> Result<(), IoError> {
    let family = load_family(out)?;
    let learned =
        io::load_document::<LearnedDoc>(&out.join(LEARNED_FILE), "learned")?.into_core()?;
    let spec = &family.spec;
    let section = &cfg.eval;

    // Panel: seeded random policy sets plus the greedy policies of every
    // evaluation reward on the estimated kernels.
    let mut panel = eval::random_policy_panel(
        section.panel_sets,
        spec.num_tasks,
        spec.horizon,
        spec.num_states,
        spec.num_actions,
        section.panel_seed,
    );
    let estimates: Vec<_> = (0..spec.num_tasks)
        .map(|t| learned.task_kernel(t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut gap_rows = Vec::new();
    let mut gap_sum = 0.0;
    for i in 0..section.eval_rewards {
        let reward = envgen::random_reward(
            spec.num_states,
            spec.num_actions,
            spec.horizon,
            spec.reward_dim,
            section.reward_seed + i as u64,
        );
        let mut greedy_set = Vec::with_capacity(spec.num_tasks);
        let mut gap_tasks = 0.0;
        for t in 0..spec.num_tasks {
            let policy = upstream::plan_with_reward(&estimates[t], &reward)?;
            let truth = family.task_mdp(t)?;
            gap_tasks += eval::suboptimality_gap(&truth, &reward, &policy)?;
            greedy_set.push(policy);
        }
        gap_tasks /= spec.num_tasks as f64;
        gap_sum += gap_tasks;
        gap_rows.push(vec![i as f64, gap_tasks]);
        panel.push(greedy_set);
    }
    let mean_gap = gap_sum / section.eval_rewards as f64;

    let mut tv_rows = Vec::with_capacity(spec.horizon);
    let mut tv_max = 0.0_f64;
    for h in 0..spec.horizon {
        let tv = eval::avg_tv_error(&family, &learned, &panel, h)?;
        tv_max = tv_max.max(tv);
        tv_rows.push(vec![h as f64, tv]);
    }

    let xi_certified = envgen::compute_xi_down(&family.constants, spec.num_tasks, cfg.hyper.eps_u)?;

    let mut report = RunReport::new(config_snapshot(cfg), cfg.seeds.clone());
    report.insert_metric("avg_tv_panel_max", tv_max);
    report.insert_metric("mean_plan_gap", mean_gap);
    report.insert_metric("n_u", learned.n_u as f64);
    report.insert_metric("terminated", learned.terminated as u8 as f64);
    report.insert_metric("xi_down_certified", xi_certified);
    report.insert_metric("xi_measured", family.constants.xi_measured);
    report.insert_metric("kappa_u_lb", family.constants.kappa_u_lb);
    report.insert_metric("c_r", family.constants.c_r);
    report.insert_metric("upsilon", family.constants.upsilon);
    report.curves.push(Curve {
        name: "tv_by_step".into(),
        columns: vec!["h".into(), "avg_tv".into()],
        rows: tv_rows,
    });
    report.curves.push(Curve {
        name: "plan_gaps".into(),
        columns: vec!["reward".into(), "mean_gap".into()],
        rows: gap_rows,
    });
    emit_report(&report, out, "report")?;
    Ok(())
}
