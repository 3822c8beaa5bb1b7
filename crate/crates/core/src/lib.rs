//! Bayesian social learning, revealed-preference reconstruction and incentive
//! control for networks of classifier agents.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brp;
pub mod control;
pub mod error;
pub mod format;
pub mod lp;
pub mod model;
pub mod order;
pub mod random;
pub mod sensor;
pub mod social;
pub mod stats;
pub mod topology;

pub use error::{Error, Result};
pub use model::{validate_belief, Belief, CostSpec, IncentiveCostParams, ObservationModel, UtilitySpec};
pub use social::{AgentModel, EpisodeTrace, Region, TieBreak};
