//! Pipeline configuration: one JSON file drives every subcommand. Unknown
//! keys are rejected; optional sections fall back to the documented
//! defaults, and the fully resolved configuration is written beside the
//! outputs of every run so no effective constant stays hidden.
//!
//! Seed precedence: `--seed` flag > `REFUEL_SEED` environment variable >
//! the `seeds` list in the file.

use serde::{Deserialize, Serialize};

use refuel_core::upstream::HyperParams;

use crate::ioerr::IoError;
use crate::schema::FamilySpecDoc;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_version")]
    pub version: u64,
    #[serde(default = "default_family")]
    pub family: FamilySpecDoc,
    /// Seed of the model-class generator (decoys and truth placement).
    #[serde(default = "default_class_seed")]
    pub class_seed: u64,
    #[serde(default)]
    pub hyper: HyperSection,
    #[serde(default)]
    pub offline: OfflineSection,
    #[serde(default)]
    pub online: OnlineSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub compare: CompareSection,
    /// Run seeds; single-run subcommands use the first entry.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_version() -> u64 {
    crate::schema::SCHEMA_VERSION
}

fn default_class_seed() -> u64 {
    1_000
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_family() -> FamilySpecDoc {
    FamilySpecDoc {
        num_states: 6,
        num_actions: 3,
        horizon: 4,
        dim: 2,
        num_tasks: 4,
        seed: 1,
        xi_target: 0.02,
        reward_dim: 3,
        phi_class_size: 6,
        psi_class_size: 12,
        decoy_separation: 0.05,
    }
}

/// Schedule multipliers and loop budgets. The defaults are the tuned
/// desk-scale values; unit multipliers are available but terminate far
/// beyond any desk-scale iteration budget.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSection {
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

impl Default for HyperSection {
    fn default() -> Self {
        HyperSection {
            delta: 0.05,
            eps_u: 0.15,
            c_lambda: 1.0,
            c_zeta: 0.02,
            c_alpha: 0.03,
            c_bound: 1.0,
            max_iterations: 2000,
            planner_rounds: 8,
            planner_tol: 1e-6,
        }
    }
}

impl HyperSection {
    pub fn to_core(&self) -> HyperParams {
        HyperParams {
            delta: self.delta,
            eps_u: self.eps_u,
            c_lambda: self.c_lambda,
            c_zeta: self.c_zeta,
            c_alpha: self.c_alpha,
            c_bound: self.c_bound,
            max_iterations: self.max_iterations,
            planner_rounds: self.planner_rounds,
            planner_tol: self.planner_tol,
        }
    }
}

/// Which feature map a downstream planner consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChoice {
    /// The representation learned upstream (requires `learned.json`).
    Learned,
    /// The generating feature map (oracle baseline).
    Oracle,
    /// One-hot indicator features of dimension `S * K`.
    OneHot,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineSection {
    pub n_off: usize,
    pub lambda: f64,
    pub c_beta: f64,
    pub delta: f64,
    /// `null` means: use the certified bound from the family constants.
    pub xi_down: Option<f64>,
    pub features: FeatureChoice,
    /// `null` means the uniform behavior policy; otherwise a random
    /// stochastic policy drawn from this seed.
    pub behavior_seed: Option<u64>,
}

impl Default for OfflineSection {
    fn default() -> Self {
        OfflineSection {
            n_off: 16384,
            lambda: 1.0,
            c_beta: 0.02,
            delta: 0.05,
            xi_down: Some(0.0),
            features: FeatureChoice::OneHot,
            behavior_seed: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineSection {
    pub n_on: usize,
    pub lambda: f64,
    pub c_beta: f64,
    pub delta: f64,
    pub xi_down: Option<f64>,
    pub features: FeatureChoice,
}

impl Default for OnlineSection {
    fn default() -> Self {
        OnlineSection {
            n_on: 2000,
            lambda: 1.0,
            c_beta: 0.1,
            delta: 0.05,
            xi_down: Some(0.0),
            features: FeatureChoice::Learned,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Number of random per-task policy sets in the evaluation panel.
    pub panel_sets: usize,
    pub panel_seed: u64,
    /// Number of random rewards for the post-hoc planning gap.
    pub eval_rewards: usize,
    pub reward_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            panel_sets: 20,
            panel_seed: 77,
            eval_rewards: 10,
            reward_seed: 9_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Task counts of the grid; must include 1 for the baseline ratio.
    pub task_counts: Vec<usize>,
    /// Family seeds; one cell per (task count, seed).
    pub seeds: Vec<u64>,
    /// Average-TV accuracy the runs must reach.
    pub tv_target: f64,
    /// Feature class size of the matched families.
    pub phi_class_size: usize,
    /// Measure class size is the task count plus this many decoys.
    pub psi_extra: usize,
    pub max_iterations: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            task_counts: vec![1, 8],
            seeds: vec![1, 2, 3, 4, 5],
            tv_target: 0.20,
            phi_class_size: 12,
            psi_extra: 8,
            max_iterations: 2000,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: default_version(),
            family: default_family(),
            class_seed: default_class_seed(),
            hyper: HyperSection::default(),
            offline: OfflineSection::default(),
            online: OnlineSection::default(),
            eval: EvalSection::default(),
            compare: CompareSection::default(),
            seeds: default_seeds(),
        }
    }
}

impl PipelineConfig {
    /// Apply seed precedence and sanity-check the result.
    pub fn resolve(
        mut self,
        flag_seed: Option<u64>,
        env_seed: Option<u64>,
    ) -> Result<Self, IoError> {
        if let Some(seed) = flag_seed.or(env_seed) {
            self.seeds = vec![seed];
        }
        if self.version != crate::schema::SCHEMA_VERSION {
            return Err(IoError::Version {
                found: self.version,
                expected: crate::schema::SCHEMA_VERSION,
            });
        }
        if self.seeds.is_empty() {
            return Err(IoError::Schema("seed list must not be empty".into()));
        }
        if self.compare.task_counts.is_empty() || self.compare.seeds.is_empty() {
            return Err(IoError::Schema("compare grid must not be empty".into()));
        }
        Ok(self)
    }

    /// First seed of the list; single-run subcommands use it.
    pub fn primary_seed(&self) -> u64 {
        self.seeds[0]
    }
}
