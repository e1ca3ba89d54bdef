#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Gradient flows `∂_t u + ∂φ(u) ∋ f` for convex integral functionals on
//! Musielak-Orlicz spaces, discretized on tensor grids.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`.

mod banded;
pub mod convex;
pub mod error;
pub mod flow;
pub mod grid;
pub mod instances;
pub mod io;
pub mod modular;
pub mod mollify;
pub mod phi;
pub mod report;
pub mod scalar;

pub use convex::{
    envelope, resolvent, verify_resolvent_identities, yosida, Problem, ProblemBuilder, ProblemKind,
    ResolventResult, YoungCertificate,
};
pub use error::{Error, Result};
pub use flow::{
    continuous_dependence_check, energy_report, lambda_convergence_study, solve,
    solve_implicit_euler, solve_yosida_flow, subdiff_residual, Forcing, Scheme, Trajectory,
};
pub use grid::{Grid, GridFunction};
pub use instances::{make_instance, InstanceConfig};
pub use modular::{conjugate_modular, luxemburg_norm, modular, pairing, ModularValue};
pub use mollify::{chain_rule_check, jensen_check, mollify, MollifierKernel};
pub use phi::{check_delta2, check_nabla2, prox_sum, LocalPhi, PhiFamily, PhiSpec};
pub use report::{Check, DiagnosticsReport};
pub use scalar::Real;

pub type Grid64 = Grid<f64>;
pub type GridFunction64 = GridFunction<f64>;
pub type PhiSpec64 = PhiSpec<f64>;
pub type Problem64 = Problem<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type InstanceConfig64 = InstanceConfig<f64>;
