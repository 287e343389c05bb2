//! Learning the smoothness parameter of an LDDMM registration metric by
//! maximizing kernel discriminant performance.
//!
//! Images live on a periodic 2D grid. Pairwise registrations under the
//! operator `L = (α(−Δ) + βE)²` give a metric matrix `K_L`, the kernel
//! `exp(−γ K_L)` feeds a two-class kernel Fisher discriminant, and an EM loop
//! alternates re-registration with hinge-loss descent on `α`.

pub mod diffop;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod klda;
pub mod metric_learning;
pub mod parallel;
pub mod registration;
pub mod synth;

pub use diffop::{build_operator, OperatorParams, QuadraticMoments, SpectralOperator};
pub use error::{Error, Result};
pub use grid::{DeformationMap, GridSpec, ScalarImage, TimeVelocity, VectorField};
pub use kernel::{KernelMatrix, MetricMatrix};
pub use klda::{KldaModel, LabeledSample, Ridge};
pub use metric_learning::{train, EmConfig, EmRecord, EmTrace, TrainOutcome};
pub use parallel::Jobs;
pub use registration::{register, RegistrationConfig, RegistrationResult};
