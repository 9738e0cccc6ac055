//! Joint rigid registration of multiple 3D point clouds whose points carry
//! known, per-point, anisotropic Gaussian localization noise.
//!
//! The library fits a shared isotropic Gaussian mixture (plus a uniform
//! outlier class) to all clouds while estimating one rigid transform per
//! cloud. Two engines share the same loop:
//!
//! - [`RegistrationMode::ProposedSage`]: the noise covariance of every point
//!   enters the mixture densities, the unknown clean points are treated as
//!   latent variables, and the rigid step runs on posterior samples of them
//!   (a partially stochastic, space-alternating generalized EM).
//! - [`RegistrationMode::BaselineJrmpc`]: the classic generative mixture
//!   baseline that ignores the measurement noise.
//!
//! Also included: a closed-form weighted Procrustes solver, synthetic data
//! generators (C9-symmetric triplets/centriole models, noisy multiview
//! acquisition), and symmetry-aware rotation error metrics.

pub mod em;
pub mod error;
pub mod gaussian;
pub mod metrics;
pub mod procrustes;
pub mod seed;
pub mod simulation;
pub mod types;

#[cfg(any(test, feature = "testkit"))]
pub mod oracles;

pub use error::{Error, Result};
pub use types::{
    CovMat3, GmmModel, ObservedCloud, RegistrationConfig, RegistrationMode, RigidTransform,
};
