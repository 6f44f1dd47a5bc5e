//! The multitask-benefit grid: matched families at different task counts,
//! each run until the panel-averaged model error reaches the target, with
//! per-task trajectory counts and their medians reported.

use rayon::prelude::*;

use refuel_core::envgen::{self, FamilySpec};
use refuel_core::eval;
use refuel_core::upstream::{self, LearnedRepresentation};

use crate::config::PipelineConfig;
use crate::ioerr::IoError;
use crate::report::{median, Curve, RunReport};

#[derive(Clone, Debug)]
struct Cell {
    num_tasks: usize,
    seed: u64,
    reached: bool,
    iterations: usize,
    trajectories_per_task: usize,
}

fn run_cell(cfg: &PipelineConfig, num_tasks: usize, seed: u64) -> Result<Cell, IoError> {
    let compare = &cfg.compare;
    let base = &cfg.family;
    let spec = FamilySpec {
        num_states: base.num_states,
        num_actions: base.num_actions,
        horizon: base.horizon,
        dim: base.dim,
        num_tasks,
        seed,
        xi_target: base.xi_target,
        reward_dim: base.reward_dim,
        phi_class_size: compare.phi_class_size,
        psi_class_size: num_tasks + compare.psi_extra,
        decoy_separation: base.decoy_separation,
    };
    let family = envgen::generate_family(&spec)?;
    let classes = envgen::generate_model_classes(&family, &spec, cfg.class_seed + seed)?;
    let mut hyper = cfg.hyper.to_core();
    hyper.max_iterations = compare.max_iterations;

    let panel = eval::random_policy_panel(
        cfg.eval.panel_sets,
        num_tasks,
        spec.horizon,
        spec.num_states,
        spec.num_actions,
        cfg.eval.panel_seed,
    );
    let mut hit: Option<usize> = None;
    upstream::run_refuel_with(&family, &classes, &hyper, seed, |it| {
        let snapshot = LearnedRepresentation {
            phi_hat: it.task_kernels[0].features().clone(),
            mu_hats: it
                .task_kernels
                .iter()
                .map(|m| m.measures().clone())
                .collect(),
            phi_indices: it.phi_indices.to_vec(),
            mu_indices: Vec::new(),
            n_u: it.iteration,
            terminated: false,
            pcv_history: Vec::new(),
            schedules: Vec::new(),
            seed,
        };
        let tv = eval::avg_tv_error_all_steps(&family, &snapshot, &panel)
            .expect("panel evaluation cannot fail on matched shapes");
        if tv <= compare.tv_target {
            hit = Some(it.iteration);
            true
        } else {
            false
        }
    })?;
    let (reached, iterations) = match hit {
        Some(n) => (true, n),
        None => (false, compare.max_iterations),
    };
    Ok(Cell {
        num_tasks,
        seed,
        reached,
        iterations,
        // One trajectory per episode, H episodes per task per iteration.
        trajectories_per_task: iterations * spec.horizon,
    })
}

/// Fan the grid out over a bounded worker pool; cells are independent and
/// the results are reduced in grid order, so the report is identical for
/// every worker count.
pub fn multitask_benefit(cfg: &PipelineConfig, jobs: usize) -> Result<RunReport, IoError> {
    let compare = &cfg.compare;
    let grid: Vec<(usize, u64)> = compare
        .task_counts
        .iter()
        .flat_map(|&t| compare.seeds.iter().map(move |&s| (t, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| IoError::Schema(format!("worker pool: {e}")))?;
    let cells: Vec<Result<Cell, IoError>> =
        pool.install(|| grid.par_iter().map(|&(t, s)| run_cell(cfg, t, s)).collect());
    let cells = cells.into_iter().collect::<Result<Vec<Cell>, _>>()?;

    let mut report = RunReport::new(
        serde_json::to_value(cfg).expect("config serializes"),
        compare.seeds.clone(),
    );
    report.curves.push(Curve {
        name: "cells".into(),
        columns: vec![
            "num_tasks".into(),
            "seed".into(),
            "reached".into(),
            "iterations".into(),
            "trajectories_per_task".into(),
        ],
        rows: cells
            .iter()
            .map(|c| {
                vec![
                    c.num_tasks as f64,
                    c.seed as f64,
                    c.reached as u8 as f64,
                    c.iterations as f64,
                    c.trajectories_per_task as f64,
                ]
            })
            .collect(),
    });

    for &t in &compare.task_counts {
        let counts: Vec<f64> = cells
            .iter()
            .filter(|c| c.num_tasks == t)
            .map(|c| c.trajectories_per_task as f64)
            .collect();
        report.insert_metric(&format!("median_trajectories_t{t}"), median(&counts));
        let unreached = cells
            .iter()
            .filter(|c| c.num_tasks == t && !c.reached)
            .count();
        report.insert_metric(&format!("unreached_t{t}"), unreached as f64);
    }
    // The benefit ratio needs the single-task baseline in the grid.
    if let (Some(baseline), Some(&t_max)) = (
        report.metrics.get("median_trajectories_t1").copied(),
        compare.task_counts.iter().max(),
    ) {
        let multi = report.metrics[&format!("median_trajectories_t{t_max}")];
        report.insert_metric("multitask_ratio", multi / baseline);
    }
    Ok(report)
}
