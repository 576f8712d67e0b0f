//! Physics-informed neural network solver for plane-wave acoustics in a
//! uniform duct, with and without convective mean flow.
//!
//! The pressure is represented by a trial solution that satisfies the end
//! pressures exactly, `psi_t = phi_L psi0 + phi_0 psi_L + phi_0 phi_L N(x)`,
//! where `N` is a `tanh` multilayer perceptron. Its parameters minimize the
//! mean squared residual of the Helmholtz (or convected Helmholtz) equation
//! over random collocation points with L-BFGS. With mean flow the particle
//! velocity is a second network trained on the momentum equation with the
//! pressure held fixed.
//!
//! Closed-form solutions in [`oracle`] provide ground truth for every
//! trained field.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod network;
pub mod optimizer;
pub mod oracle;
pub mod physics;
pub mod train;

pub use analysis::{ErrorReport, FieldSample, ImpedanceErrors, VelocitySource};
pub use autodiff::{DiffOutput, LossKind, PinnLoss};
pub use error::{Error, Result};
pub use network::{Architecture, MlpParams};
pub use optimizer::{LbfgsOptions, OptimResult, Progress, Termination};
pub use physics::{ComplexJet, DuctProblem, FieldKind, Jet, TrialField};
pub use train::{TrainedField, TrainingConfig};

pub use num_complex::Complex64;
