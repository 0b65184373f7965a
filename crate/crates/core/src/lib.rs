//! Mirror descent training of wide two-layer networks and the variational problems
//! describing their implicit bias.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod compare;
pub mod density;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod linalg;
pub mod mirror;
pub mod net;
pub mod potentials;
pub mod repcost;
pub mod scalar;
pub mod variational;

pub use density::BiasDensity;
pub use error::{Error, Result};
pub use kernel::{analytic_kernel, drift_report, kernel_matrix, AnalyticKernel, KernelReport};
pub use mirror::{md_step, train, Recording, Scope, Status, StepMode, TrainConfig, Trajectory};
pub use net::{init_params, Activation, Dataset, InitSpec, NetParams};
pub use potentials::{HessianDiag, Potential, PotentialKind, PotentialMode};
pub use scalar::Scalar;

pub type NetParamsF64 = NetParams<f64>;
pub type NetParamsF32 = NetParams<f32>;
pub type PotentialF64 = Potential<f64>;
pub type PotentialF32 = Potential<f32>;
pub type DatasetF64 = Dataset<f64>;
