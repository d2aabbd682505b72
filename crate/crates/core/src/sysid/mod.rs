//! Linear-operator surrogate models fitted from snapshot data.

mod delay;
mod eigen;
mod linear;
mod model;
mod parametrized;

pub use delay::{fit_delay_augmented, fit_delay_miso, DelayFitOptions};
pub use eigen::{
    central_differences, identify_eigenfunctions, Eigenfunction, EigenfunctionModel, SparseOptions,
};
pub use linear::{fit_dmdc, fit_edmdc};
pub use model::{predict_rollout, History, Lifting, LinearControlModel, ModelKind, Rollout};
pub use parametrized::{fit_parametrized, ParametrizedFamily};
