//! Collaborative control-barrier safety for networks of coupled
//! control-affine agents.
//!
//! The crate evaluates second-order barrier conditions over a directed
//! network, runs a round-based negotiation in which nodes ask incoming
//! neighbors to cover safety deficits, measures how far neighbors deviate
//! from what was asked, and bounds how much deviation a node can absorb.
//! A networked SIS epidemic serves as the reference plant.
//!
//! All numerics are generic over [`Real`]; the aliases at the crate root fix
//! the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod action_set;
pub mod barrier;
pub mod error;
pub mod export;
pub mod linalg;
pub mod negotiation;
pub mod network;
pub mod optimizer;
pub mod resilience;
pub mod scalar;
pub mod sim;
pub mod sis;

pub use action_set::{AllowedActionSet, HalfSpace};
pub use barrier::{
    capability, capability_at_gain, finite_difference_audit, lie_bundle, psi1, psi2, psi2_grouped, AuditReport,
    BarrierFunction, ClassKParams, ControlRate, LieBundle, NetworkDynamics,
};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use negotiation::{run_collaboration, CommitmentLedger, NegotiationConfig, NegotiationOutcome};
pub use network::{ControlBox, NetworkGraph, NetworkState, NodeDims, NodeId};
pub use optimizer::{
    find_nu_star, maximize_capability, maximize_linear, maximize_quadratic, Location, MaximizerResult, NuStar, NuStarOptions,
    QuadraticObjective,
};
pub use resilience::{check_resilience, compliance, epsilon_tolerance, minimal_assistance, ResilienceReport};
pub use scalar::Real;
pub use sim::{run, DerivativePolicy, Event, Scenario, Trajectory};
pub use sis::{reference_scenario, SisBarrier, SisModel, SisParams, SisScenario};

pub type Matrix64 = Matrix<f64>;
pub type NetworkState64 = NetworkState<f64>;
pub type ControlBox64 = ControlBox<f64>;
pub type ClassKParams64 = ClassKParams<f64>;
pub type LieBundle64 = LieBundle<f64>;
pub type AllowedActionSet64 = AllowedActionSet<f64>;
pub type QuadraticObjective64 = QuadraticObjective<f64>;
pub type MaximizerResult64 = MaximizerResult<f64>;
pub type NegotiationOutcome64 = NegotiationOutcome<f64>;
pub type ResilienceReport64 = ResilienceReport<f64>;
pub type SisParams64 = SisParams<f64>;
pub type SisModel64 = SisModel<f64>;
pub type Scenario64 = Scenario<f64>;
pub type Trajectory64 = Trajectory<f64>;
