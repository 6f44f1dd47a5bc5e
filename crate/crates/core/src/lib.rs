//! Finite episodic low-rank MDP workbench.
//!
//! The crate is organized around a dense tabular MDP whose per-step kernel
//! factors as an inner product of a state-action feature map and a per-state
//! measure table. On top of that sit:
//!
//! * exact dynamic programming, occupancy measures and trajectory sampling
//!   ([`mdp`]),
//! * generators for task families that share one feature map, plus finite
//!   candidate model classes and their measured constants ([`envgen`]),
//! * the reward-free multitask exploration loop: joint maximum-likelihood
//!   model selection, elliptical exploration bonuses, pseudo-cumulative-value
//!   planning and the stopping rule ([`upstream`]),
//! * downstream consumers of the learned feature map: pessimistic offline
//!   value iteration ([`offline`]) and optimistic online least-squares value
//!   iteration ([`online`]),
//! * numeric checks used as test and evaluation oracles ([`eval`]).
//!
//! The crate is `no_std` + `alloc`; all transcendental math goes through
//! `libm` so results are bit-identical across platforms. Everything is pure:
//! every sampling operation takes an explicit 64-bit seed and randomness
//! comes from the splittable counter-based generator in [`rng`].

#![no_std]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod envgen;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod math;
pub mod mdp;
pub mod offline;
pub mod online;
pub mod rng;
pub mod upstream;

pub use error::CoreError;
pub use mdp::{
    FeatureTable, MeasureTable, OccupancyMeasure, Policy, RewardTable, TabularLowRankMdp,
    Trajectory,
};
pub use rng::SplitRng;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, CoreError>;
