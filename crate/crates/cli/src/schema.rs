//! Versioned JSON documents for every artifact, with conversions to and
//! from the core types. All tables are flat row-major arrays:
//!
//! * feature tables: `[h][s][a][j]`
//! * measure tables: `[h][s'][j]`
//! * reward / policy / occupancy tables: `[h][s][a]`
//!
//! Loading validates the payload against the core invariants (tolerance
//! 1e-6) and rejects unknown keys and foreign schema versions.

use serde::{Deserialize, Serialize};

use refuel_core::envgen::{FamilyConstants, FamilySpec, ModelClass, TaskFamily};
use refuel_core::mdp::{FeatureTable, MeasureTable, Policy, RewardTable, TabularLowRankMdp};
use refuel_core::offline::{OfflineDataset, OfflineRecord};
use refuel_core::upstream::{LearnedRepresentation, ScheduleValues};

use crate::ioerr::IoError;

pub const SCHEMA_VERSION: u64 = 1;

fn check_header(version: u64, kind: &str, expected_kind: &str) -> Result<(), IoError> {
    if version != SCHEMA_VERSION {
        return Err(IoError::Version {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    if kind != expected_kind {
        return Err(IoError::Schema(format!(
            "expected kind {expected_kind:?}, found {kind:?}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDoc {
    pub version: u64,
    pub kind: String,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub dim: usize,
    pub initial_state: usize,
    pub phi: Vec<f64>,
    pub mu: Vec<f64>,
}

impl MdpDoc {
    pub fn from_core(mdp: &TabularLowRankMdp) -> Self {
        MdpDoc {
            version: SCHEMA_VERSION,
            kind: "mdp".into(),
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            horizon: mdp.horizon(),
            dim: mdp.dim(),
            initial_state: mdp.initial_state(),
            phi: mdp.features().data().to_vec(),
            mu: mdp.measures().data().to_vec(),
        }
    }

    pub fn into_core(self) -> Result<TabularLowRankMdp, IoError> {
        check_header(self.version, &self.kind, "mdp")?;
        let phi = FeatureTable::from_raw(
            self.horizon,
            self.num_states,
            self.num_actions,
            self.dim,
            self.phi,
        )?;
        let mu = MeasureTable::from_raw(self.horizon, self.num_states, self.dim, self.mu)?;
        Ok(TabularLowRankMdp::new(phi, mu, self.initial_state)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardDoc {
    pub version: u64,
    pub kind: String,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub feature_dim: usize,
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
}

impl RewardDoc {
    pub fn from_core(reward: &RewardTable) -> Self {
        RewardDoc {
            version: SCHEMA_VERSION,
            kind: "reward".into(),
            horizon: reward.horizon,
            num_states: reward.num_states,
            num_actions: reward.num_actions,
            feature_dim: reward.feature_dim,
            theta: reward.theta.clone(),
            r: reward.data().to_vec(),
        }
    }

    pub fn into_core(self) -> Result<RewardTable, IoError> {
        check_header(self.version, &self.kind, "reward")?;
        Ok(RewardTable::from_raw(
            self.horizon,
            self.num_states,
            self.num_actions,
            self.feature_dim,
            self.theta,
            self.r,
        )?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDoc {
    pub version: u64,
    pub kind: String,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub pi: Vec<f64>,
}

impl PolicyDoc {
    pub fn from_core(policy: &Policy) -> Self {
        PolicyDoc {
            version: SCHEMA_VERSION,
            kind: "policy".into(),
            horizon: policy.horizon,
            num_states: policy.num_states,
            num_actions: policy.num_actions,
            pi: policy.data().to_vec(),
        }
    }

    pub fn into_core(self) -> Result<Policy, IoError> {
        check_header(self.version, &self.kind, "policy")?;
        Ok(Policy::from_raw(
            self.horizon,
            self.num_states,
            self.num_actions,
            self.pi,
        )?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpecDoc {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub dim: usize,
    pub num_tasks: usize,
    pub seed: u64,
    pub xi_target: f64,
    pub reward_dim: usize,
    pub phi_class_size: usize,
    pub psi_class_size: usize,
    pub decoy_separation: f64,
}

impl FamilySpecDoc {
    pub fn from_core(spec: &FamilySpec) -> Self {
        FamilySpecDoc {
            num_states: spec.num_states,
            num_actions: spec.num_actions,
            horizon: spec.horizon,
            dim: spec.dim,
            num_tasks: spec.num_tasks,
            seed: spec.seed,
            xi_target: spec.xi_target,
            reward_dim: spec.reward_dim,
            phi_class_size: spec.phi_class_size,
            psi_class_size: spec.psi_class_size,
            decoy_separation: spec.decoy_separation,
        }
    }

    pub fn into_core(self) -> FamilySpec {
        FamilySpec {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            dim: self.dim,
            num_tasks: self.num_tasks,
            seed: self.seed,
            xi_target: self.xi_target,
            reward_dim: self.reward_dim,
            phi_class_size: self.phi_class_size,
            psi_class_size: self.psi_class_size,
            decoy_separation: self.decoy_separation,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsDoc {
    pub upsilon: f64,
    pub kappa_u_lb: f64,
    pub c_r: f64,
    pub xi_measured: f64,
    pub c_l: f64,
}

impl ConstantsDoc {
    pub fn from_core(c: &FamilyConstants) -> Self {
        ConstantsDoc {
            upsilon: c.upsilon,
            kappa_u_lb: c.kappa_u_lb,
            c_r: c.c_r,
            xi_measured: c.xi_measured,
            c_l: c.c_l,
        }
    }

    pub fn into_core(self) -> FamilyConstants {
        FamilyConstants {
            upsilon: self.upsilon,
            kappa_u_lb: self.kappa_u_lb,
            c_r: self.c_r,
            xi_measured: self.xi_measured,
            c_l: self.c_l,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDoc {
    pub version: u64,
    pub kind: String,
    pub spec: FamilySpecDoc,
    pub shared_phi: Vec<f64>,
    pub mus: Vec<Vec<f64>>,
    pub rewards: Vec<RewardDoc>,
    pub downstream: MdpDoc,
    pub downstream_reward: RewardDoc,
    pub coefficients: Vec<f64>,
    pub constants: ConstantsDoc,
}

impl FamilyDoc {
    pub fn from_core(family: &TaskFamily) -> Self {
        FamilyDoc {
            version: SCHEMA_VERSION,
            kind: "family".into(),
            spec: FamilySpecDoc::from_core(&family.spec),
            shared_phi: family.shared_phi.data().to_vec(),
            mus: family.mus.iter().map(|m| m.data().to_vec()).collect(),
            rewards: family.rewards.iter().map(RewardDoc::from_core).collect(),
            downstream: MdpDoc::from_core(&family.downstream),
            downstream_reward: RewardDoc::from_core(&family.downstream_reward),
            coefficients: family.coefficients.clone(),
            constants: ConstantsDoc::from_core(&family.constants),
        }
    }

    pub fn into_core(self) -> Result<TaskFamily, IoError> {
        check_header(self.version, &self.kind, "family")?;
        let spec = self.spec.into_core();
        let shared_phi = FeatureTable::from_raw(
            spec.horizon,
            spec.num_states,
            spec.num_actions,
            spec.dim,
            self.shared_phi,
        )?;
        if self.mus.len() != spec.num_tasks || self.rewards.len() != spec.num_tasks {
            return Err(IoError::Schema(
                "family task lists disagree with the spec task count".into(),
            ));
        }
        let mus = self
            .mus
            .into_iter()
            .map(|m| MeasureTable::from_raw(spec.horizon, spec.num_states, spec.dim, m))
            .collect::<Result<Vec<_>, _>>()?;
        let rewards = self
            .rewards
            .into_iter()
            .map(|r| r.into_core())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TaskFamily {
            spec,
            shared_phi,
            mus,
            rewards,
            downstream: self.downstream.into_core()?,
            downstream_reward: self.downstream_reward.into_core()?,
            coefficients: self.coefficients,
            constants: self.constants.into_core(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelClassDoc {
    pub version: u64,
    pub kind: String,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub dim: usize,
    pub phis: Vec<Vec<f64>>,
    pub psis: Vec<Vec<f64>>,
    pub truth_phi_index: usize,
    pub truth_mu_indices: Vec<usize>,
}

impl ModelClassDoc {
    pub fn from_core(classes: &ModelClass) -> Self {
        let proto = &classes.phis[0];
        ModelClassDoc {
            version: SCHEMA_VERSION,
            kind: "model_class".into(),
            horizon: proto.horizon,
            num_states: proto.num_states,
            num_actions: proto.num_actions,
            dim: proto.dim,
            phis: classes.phis.iter().map(|p| p.data().to_vec()).collect(),
            psis: classes.psis.iter().map(|p| p.data().to_vec()).collect(),
            truth_phi_index: classes.truth_phi_index,
            truth_mu_indices: classes.truth_mu_indices.clone(),
        }
    }

    pub fn into_core(self) -> Result<ModelClass, IoError> {
        check_header(self.version, &self.kind, "model_class")?;
        let phis = self
            .phis
            .into_iter()
            .map(|p| {
                FeatureTable::from_raw(self.horizon, self.num_states, self.num_actions, self.dim, p)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let psis = self
            .psis
            .into_iter()
            .map(|p| MeasureTable::from_raw(self.horizon, self.num_states, self.dim, p))
            .collect::<Result<Vec<_>, _>>()?;
        if phis.is_empty() || self.truth_phi_index >= phis.len() {
            return Err(IoError::Schema("truth_phi_index out of range".into()));
        }
        if self.truth_mu_indices.iter().any(|&i| i >= psis.len()) {
            return Err(IoError::Schema("truth_mu_indices out of range".into()));
        }
        Ok(ModelClass {
            phis,
            psis,
            truth_phi_index: self.truth_phi_index,
            truth_mu_indices: self.truth_mu_indices,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDoc {
    pub lambda: f64,
    pub zeta: f64,
    pub alpha_tilde: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedDoc {
    pub version: u64,
    pub kind: String,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub dim: usize,
    pub num_tasks: usize,
    pub phi_hat: Vec<f64>,
    pub mu_hats: Vec<Vec<f64>>,
    pub phi_indices: Vec<usize>,
    pub mu_indices: Vec<Vec<usize>>,
    pub n_u: usize,
    pub terminated: bool,
    pub pcv_history: Vec<f64>,
    pub schedules: Vec<ScheduleDoc>,
    pub seed: u64,
}

impl LearnedDoc {
    pub fn from_core(learned: &LearnedRepresentation) -> Self {
        LearnedDoc {
            version: SCHEMA_VERSION,
            kind: "learned".into(),
            horizon: learned.phi_hat.horizon,
            num_states: learned.phi_hat.num_states,
            num_actions: learned.phi_hat.num_actions,
            dim: learned.phi_hat.dim,
            num_tasks: learned.mu_hats.len(),
            phi_hat: learned.phi_hat.data().to_vec(),
            mu_hats: learned.mu_hats.iter().map(|m| m.data().to_vec()).collect(),
            phi_indices: learned.phi_indices.clone(),
            mu_indices: learned.mu_indices.clone(),
            n_u: learned.n_u,
            terminated: learned.terminated,
            pcv_history: learned.pcv_history.clone(),
            schedules: learned
                .schedules
                .iter()
                .map(|s| ScheduleDoc {
                    lambda: s.lambda,
                    zeta: s.zeta,
                    alpha_tilde: s.alpha_tilde,
                    bound: s.bound,
                })
                .collect(),
            seed: learned.seed,
        }
    }

    pub fn into_core(self) -> Result<LearnedRepresentation, IoError> {
        check_header(self.version, &self.kind, "learned")?;
        let phi_hat = FeatureTable::from_raw(
            self.horizon,
            self.num_states,
            self.num_actions,
            self.dim,
            self.phi_hat,
        )?;
        if self.mu_hats.len() != self.num_tasks {
            return Err(IoError::Schema("mu_hats length vs num_tasks".into()));
        }
        let mu_hats = self
            .mu_hats
            .into_iter()
            .map(|m| MeasureTable::from_raw(self.horizon, self.num_states, self.dim, m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LearnedRepresentation {
            phi_hat,
            mu_hats,
            phi_indices: self.phi_indices,
            mu_indices: self.mu_indices,
            n_u: self.n_u,
            terminated: self.terminated,
            pcv_history: self.pcv_history,
            schedules: self
                .schedules
                .into_iter()
                .map(|s| ScheduleValues {
                    lambda: s.lambda,
                    zeta: s.zeta,
                    alpha_tilde: s.alpha_tilde,
                    bound: s.bound,
                })
                .collect(),
            seed: self.seed,
        })
    }
}

/// One NDJSON line of an offline dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineRecordDoc {
    pub traj: usize,
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

impl OfflineRecordDoc {
    pub fn from_core(r: &OfflineRecord) -> Self {
        OfflineRecordDoc {
            traj: r.trajectory,
            h: r.step,
            s: r.state,
            a: r.action,
            r: r.reward,
            s_next: r.next_state,
        }
    }
}

/// Rebuild a dataset from its NDJSON records (provenance fields are not
/// part of the wire format and are re-derived by the caller).
pub fn dataset_from_records(
    records: Vec<OfflineRecordDoc>,
    horizon: usize,
    seed: u64,
) -> Result<OfflineDataset, IoError> {
    if records.is_empty() || records.len() % horizon != 0 {
        return Err(IoError::Schema(
            "offline dataset must hold H records per trajectory".into(),
        ));
    }
    let num_trajectories = records.len() / horizon;
    let core_records: Vec<OfflineRecord> = records
        .into_iter()
        .map(|r| OfflineRecord {
            trajectory: r.traj,
            step: r.h,
            state: r.s,
            action: r.a,
            reward: r.r,
            next_state: r.s_next,
        })
        .collect();
    Ok(OfflineDataset {
        num_trajectories,
        horizon,
        records: core_records,
        behavior_tag: 0,
        seed,
    })
}
