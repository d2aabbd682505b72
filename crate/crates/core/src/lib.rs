//! Koopman and transfer-operator surrogate models with model predictive control.
//!
//! - [`numerics`]: SVD, least squares, QP and power-iteration kernels.
//! - [`dynamics`]: plants, RK4 integration, forcing and training-data sampling.
//! - [`dictionary`]: observable dictionaries and delay embeddings.
//! - [`sysid`]: DMDc, eDMDc, delay DMDc, Koopman eigenfunctions, parametrized families.
//! - [`transfer`]: Ulam transition matrices and density propagation.
//! - [`mpc`]: condensed MPC and closed-loop simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dictionary;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod mpc;
pub mod numerics;
pub mod sysid;
pub mod transfer;

mod matrix_serde;

pub use dictionary::{DelaySpec, Dictionary, Observable};
pub use dynamics::{ControlSystem, ForcingFamily, ForcingSignal, Rect, SampleSet, Trajectory};
pub use error::{Error, Result};
pub use experiment::{parse_config, run_benchmark, BenchmarkReport, ExperimentConfig};
pub use mpc::{ClosedLoopResult, MpcConfig};
pub use numerics::{Mat, QpProblem, Vector};
pub use sysid::{History, LinearControlModel, ModelKind};
pub use transfer::{BoxPartition, ControlledChain, DensityVector, TransitionMatrix};
