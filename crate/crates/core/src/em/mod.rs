//! Registration engine.
//!
//! One iteration runs two expectation steps (the conditional distributions
//! are refreshed between the rigid update and the mixture update):
//!
//! 1. E-step at the current parameters; in the noise-aware mode, draw one
//!    posterior sample of each latent clean point.
//! 2. Rigid update: per-cloud weighted Procrustes of the samples (baseline:
//!    the observed points) onto the component means.
//! 3. Second E-step at the new transforms.
//! 4. Mixture update from the refreshed posteriors, with the isotropic
//!    `trace/3` reduction and a variance floor.
//! 5. Log-likelihood at the new parameters.
//!
//! Both modes share this schedule; they differ only in whether the per-point
//! noise covariance enters the densities and whether the clean points are
//! sampled. With all noise covariances zero the two modes produce identical
//! parameter sequences.

mod estep;
mod init;
mod mstep;

pub use estep::{
    e_step, log_likelihood, sample_clean_points, CloudPosteriors, ComponentPosterior, EStepState,
    RESPONSIBILITY_TRUNCATION,
};
pub use init::gmm_init;
pub use mstep::{m_gmm, m_rigid};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::types::{
    GmmModel, ObservedCloud, RegistrationConfig, RegistrationMode, RigidTransform,
};
use crate::types::validate_rotation;

const STREAM_SAMPLE: u64 = 0x21;

/// Moving-average window for the stochastic-mode stopping rule.
const STOP_WINDOW: usize = 5;

/// Per-iteration log-likelihood values of one run.
#[derive(Debug, Clone)]
pub struct LikelihoodTrace {
    pub values: Vec<f64>,
    pub mode: RegistrationMode,
}

impl LikelihoodTrace {
    pub fn is_non_decreasing(&self, slack: f64) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0] - slack)
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// Final state of a registration run. Non-convergence within `max_iters` is
/// flagged, not an error.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub transforms: Vec<RigidTransform>,
    pub gmm: GmmModel,
    pub trace: LikelihoodTrace,
    pub iterations: usize,
    pub converged: bool,
}

impl RegistrationResult {
    pub fn final_log_likelihood(&self) -> f64 {
        self.trace.last().unwrap_or(f64::NEG_INFINITY)
    }
}

/// One full engine iteration; returns the new transforms, the new mixture and
/// the log-likelihood evaluated at them. `iteration` indexes the sampling
/// stream so stochastic runs are reproducible.
pub fn registration_iteration(
    clouds: &[ObservedCloud],
    transforms: &[RigidTransform],
    gmm: &GmmModel,
    config: &RegistrationConfig,
    variance_floor: f64,
    iteration: usize,
) -> Result<(Vec<RigidTransform>, GmmModel, f64)> {
    let mut state = e_step(clouds, transforms, gmm, config)?;
    if config.mode == RegistrationMode::ProposedSage {
        let seed = derive_seed(config.rng_seed, &[STREAM_SAMPLE, iteration as u64]);
        sample_clean_points(&mut state, clouds, transforms, gmm, config, seed)?;
    }
    let new_transforms = m_rigid(clouds, &state, gmm, transforms)?;
    for t in &new_transforms {
        validate_rotation(t.rotation())?;
    }
    let refreshed = e_step(clouds, &new_transforms, gmm, config)?;
    let new_gmm = m_gmm(&refreshed, gmm, variance_floor, config.fix_weights)?;
    let ll = log_likelihood(clouds, &new_transforms, &new_gmm, config.mode)?;
    Ok((new_transforms, new_gmm, ll))
}

/// Resolves the configured variance floor, defaulting to
/// `(1e-4 * bounding-box diagonal)^2` of the initially transformed points.
pub fn resolve_variance_floor(
    clouds: &[ObservedCloud],
    transforms: &[RigidTransform],
    config: &RegistrationConfig,
) -> f64 {
    config.variance_floor.unwrap_or_else(|| {
        let bounds = init::Bounds::of_transformed(clouds, transforms);
        RegistrationConfig::default_variance_floor(bounds.diagonal())
    })
}

/// Runs the full loop from a coarse initialization: mixture init, iterations
/// until the log-likelihood stabilizes or `max_iters` is hit.
///
/// Stopping: baseline mode compares consecutive log-likelihoods; the
/// stochastic mode compares a 5-iteration moving average (a single-sample
/// stochastic EM never settles pointwise), both against `rel_loglik_tol`.
pub fn run_registration(
    clouds: &[ObservedCloud],
    init_transforms: &[RigidTransform],
    config: &RegistrationConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    if clouds.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 clouds, got {}",
            clouds.len()
        )));
    }
    if clouds.len() != init_transforms.len() {
        return Err(Error::LengthMismatch {
            what: "clouds vs init transforms",
            left: clouds.len(),
            right: init_transforms.len(),
        });
    }

    let variance_floor = resolve_variance_floor(clouds, init_transforms, config);
    let mut gmm = gmm_init(clouds, init_transforms, config, variance_floor)?;
    let mut transforms = init_transforms.to_vec();
    let mut values = Vec::with_capacity(config.max_iters);
    let mut converged = false;

    for iteration in 0..config.max_iters {
        let (new_transforms, new_gmm, ll) =
            registration_iteration(clouds, &transforms, &gmm, config, variance_floor, iteration)?;
        transforms = new_transforms;
        gmm = new_gmm;
        values.push(ll);

        let rel_change = match config.mode {
            RegistrationMode::BaselineJrmpc => {
                let n = values.len();
                (n >= 2).then(|| {
                    let prev = values[n - 2];
                    (values[n - 1] - prev).abs() / values[n - 1].abs().max(f64::MIN_POSITIVE)
                })
            }
            RegistrationMode::ProposedSage => {
                let n = values.len();
                (n > STOP_WINDOW).then(|| {
                    let ma_now: f64 =
                        values[n - STOP_WINDOW..].iter().sum::<f64>() / STOP_WINDOW as f64;
                    let ma_prev: f64 = values[n - STOP_WINDOW - 1..n - 1].iter().sum::<f64>()
                        / STOP_WINDOW as f64;
                    (ma_now - ma_prev).abs() / ma_now.abs().max(f64::MIN_POSITIVE)
                })
            }
        };
        if let Some(rel) = rel_change {
            if rel < config.rel_loglik_tol {
                converged = true;
                break;
            }
        }
    }

    let iterations = values.len();
    Ok(RegistrationResult {
        transforms,
        gmm,
        trace: LikelihoodTrace {
            values,
            mode: config.mode,
        },
        iterations,
        converged,
    })
}
