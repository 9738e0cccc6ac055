//! Expectation step: responsibilities, posterior gains and denoised means,
//! and posterior sampling of the latent clean points.

use nalgebra::{Cholesky, Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{logpdf_with_chol, sample_gaussian_psd};
use crate::seed::{derive_seed, rng_from};
use crate::types::{GmmModel, ObservedCloud, RegistrationConfig, RegistrationMode, RigidTransform};

/// Responsibilities below this are truncated to exact zero when the dense
/// (point, component) table would exceed the configured budget.
pub const RESPONSIBILITY_TRUNCATION: f64 = 1e-12;

/// Posterior quantities of one (point, component) pair.
///
/// In baseline mode the latent clean point degenerates to the observation
/// itself, which is represented exactly: `gain = I`, `denoised` is the
/// transformed observed point and `sample` stays empty.
#[derive(Debug, Clone)]
pub struct ComponentPosterior {
    pub component: usize,
    pub alpha: f64,
    /// `W = sigma_k^2 (sigma_k^2 I + R Sigma R^T)^{-1}`.
    pub gain: Matrix3<f64>,
    /// `y_hat = W (phi(y) - mu_k) + mu_k`, in the common frame.
    pub denoised: Vector3<f64>,
    /// Averaged posterior sample, mapped back to the cloud frame.
    pub sample: Option<Vector3<f64>>,
}

/// Per-cloud posteriors, indexed like the cloud's points.
#[derive(Debug, Clone)]
pub struct CloudPosteriors {
    pub entries: Vec<Vec<ComponentPosterior>>,
    pub outlier_alpha: Vec<f64>,
    /// Cached `phi_j(y_ji)` for the transforms this state was computed with.
    pub transformed: Vec<Vector3<f64>>,
}

/// Output of the E-step; `log_likelihood` is the mixture log-likelihood at
/// the parameters the step was evaluated with.
#[derive(Debug, Clone)]
pub struct EStepState {
    pub mode: RegistrationMode,
    pub per_cloud: Vec<CloudPosteriors>,
    pub log_likelihood: f64,
}

struct PointPosterior {
    entries: Vec<ComponentPosterior>,
    outlier_alpha: f64,
    transformed: Vector3<f64>,
    log_normalizer: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Density bookkeeping for one observed point against every component.
fn eval_point(
    point: &Vector3<f64>,
    rotated_noise: &Matrix3<f64>,
    noise_is_zero: bool,
    transform: &RigidTransform,
    gmm: &GmmModel,
    with_posterior: bool,
    truncate: bool,
) -> Result<PointPosterior> {
    let k = gmm.n_components();
    let transformed = transform.apply(point);
    let log_outlier = if gmm.outlier_weight() > 0.0 {
        gmm.outlier_weight().ln() - gmm.hull_volume.ln()
    } else {
        f64::NEG_INFINITY
    };

    let mut log_gamma = Vec::with_capacity(k);
    let mut chols: Vec<Cholesky<f64, nalgebra::U3>> = Vec::with_capacity(k);
    for c in 0..k {
        let sigma2 = gmm.variances[c];
        let total = Matrix3::identity() * sigma2 + rotated_noise;
        let chol = Cholesky::new(total).ok_or(Error::SingularCovariance)?;
        let lg = if gmm.weights[c] > 0.0 {
            gmm.weights[c].ln() + logpdf_with_chol(&(transformed - gmm.means[c]), &chol)
        } else {
            f64::NEG_INFINITY
        };
        log_gamma.push(lg);
        chols.push(chol);
    }

    let log_normalizer = log_sum_exp(
        log_gamma
            .iter()
            .copied()
            .chain(std::iter::once(log_outlier)),
    );
    if log_normalizer == f64::NEG_INFINITY {
        return Err(Error::SingularCovariance);
    }

    let mut outlier_alpha = if log_outlier == f64::NEG_INFINITY {
        0.0
    } else {
        (log_outlier - log_normalizer).exp()
    };

    let mut entries = Vec::with_capacity(k);
    let mut retained_mass = outlier_alpha;
    for c in 0..k {
        let alpha = if log_gamma[c] == f64::NEG_INFINITY {
            0.0
        } else {
            (log_gamma[c] - log_normalizer).exp()
        };
        if truncate && alpha < RESPONSIBILITY_TRUNCATION {
            continue;
        }
        retained_mass += alpha;
        let (gain, denoised) = if with_posterior {
            if noise_is_zero {
                (Matrix3::identity(), transformed)
            } else {
                let gain = chols[c].inverse() * gmm.variances[c];
                (gain, gain * (transformed - gmm.means[c]) + gmm.means[c])
            }
        } else {
            // baseline: the clean point is the observation itself
            (Matrix3::identity(), transformed)
        };
        entries.push(ComponentPosterior {
            component: c,
            alpha,
            gain,
            denoised,
            sample: None,
        });
    }

    // keep each row summing to one after truncation
    if truncate && retained_mass > 0.0 && retained_mass < 1.0 {
        let inv = 1.0 / retained_mass;
        outlier_alpha *= inv;
        for e in entries.iter_mut() {
            e.alpha *= inv;
        }
    }

    Ok(PointPosterior {
        entries,
        outlier_alpha,
        transformed,
        log_normalizer,
    })
}

/// Computes responsibilities (including the uniform outlier class in the
/// normalizer) and, in the noise-aware mode, the per-pair gain matrices and
/// denoised means.
pub fn e_step(
    clouds: &[ObservedCloud],
    transforms: &[RigidTransform],
    gmm: &GmmModel,
    config: &RegistrationConfig,
) -> Result<EStepState> {
    if clouds.len() != transforms.len() {
        return Err(Error::LengthMismatch {
            what: "clouds vs transforms",
            left: clouds.len(),
            right: transforms.len(),
        });
    }
    let total_points: usize = clouds.iter().map(|c| c.len()).sum();
    let truncate = total_points.saturating_mul(gmm.n_components() + 1) > config.dense_budget;
    let with_posterior = config.mode == RegistrationMode::ProposedSage;

    let mut per_cloud = Vec::with_capacity(clouds.len());
    let mut log_likelihood = 0.0;
    for (cloud, transform) in clouds.iter().zip(transforms) {
        let points: Result<Vec<PointPosterior>> = cloud
            .points()
            .par_iter()
            .zip(cloud.noise_covs().par_iter())
            .map(|(p, noise)| {
                let (rotated, is_zero) = if with_posterior {
                    if noise.is_zero() {
                        (Matrix3::zeros(), true)
                    } else {
                        (
                            crate::gaussian::rotate_covariance(noise, transform).matrix(),
                            false,
                        )
                    }
                } else {
                    // baseline ignores the recorded measurement noise
                    (Matrix3::zeros(), true)
                };
                eval_point(p, &rotated, is_zero, transform, gmm, with_posterior, truncate)
            })
            .collect();
        let points = points?;

        let mut entries = Vec::with_capacity(points.len());
        let mut outlier_alpha = Vec::with_capacity(points.len());
        let mut transformed = Vec::with_capacity(points.len());
        for p in points {
            log_likelihood += p.log_normalizer;
            entries.push(p.entries);
            outlier_alpha.push(p.outlier_alpha);
            transformed.push(p.transformed);
        }
        per_cloud.push(CloudPosteriors {
            entries,
            outlier_alpha,
            transformed,
        });
    }

    Ok(EStepState {
        mode: config.mode,
        per_cloud,
        log_likelihood,
    })
}

/// Draws the latent clean points: for every retained (point, component) pair,
/// samples from `N(y_hat, (I - W) sigma_k^2)` (averaging
/// `samples_per_point` draws) and maps the result back to the cloud frame
/// with the transform the E-step used. A degenerate posterior (zero noise,
/// `W = I`) yields the observed point exactly.
///
/// Randomness is split per (cloud, point, component) from `sampling_seed`, so
/// any parallel schedule draws the same values.
pub fn sample_clean_points(
    state: &mut EStepState,
    clouds: &[ObservedCloud],
    transforms: &[RigidTransform],
    gmm: &GmmModel,
    config: &RegistrationConfig,
    sampling_seed: u64,
) -> Result<()> {
    if state.mode != RegistrationMode::ProposedSage {
        return Err(Error::InvalidConfig(
            "posterior sampling applies to the noise-aware mode only".into(),
        ));
    }
    let n_samples = config.samples_per_point.max(1);
    let identity = Matrix3::identity();
    for (j, ((cloud_state, cloud), transform)) in state
        .per_cloud
        .iter_mut()
        .zip(clouds)
        .zip(transforms)
        .enumerate()
    {
        let points = cloud.points();
        cloud_state
            .entries
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, entries)| {
                for entry in entries.iter_mut() {
                    // exact observation: beta collapses to a Dirac at y_ji
                    if entry.gain == identity {
                        entry.sample = Some(points[i]);
                        continue;
                    }
                    let pos_cov =
                        (Matrix3::identity() - entry.gain) * gmm.variances[entry.component];
                    let mut rng = rng_from(derive_seed(
                        sampling_seed,
                        &[j as u64, i as u64, entry.component as u64],
                    ));
                    let mut mean_sample = Vector3::zeros();
                    for _ in 0..n_samples {
                        mean_sample += sample_gaussian_psd(&entry.denoised, &pos_cov, &mut rng);
                    }
                    mean_sample /= n_samples as f64;
                    entry.sample = Some(transform.apply_inverse(&mean_sample));
                }
            });
    }
    Ok(())
}

/// Mixture log-likelihood of the observed points:
/// `sum_ji log( sum_k p_k N(phi(y_ji); mu_k, S_jik) + p_{K+1} / h )`, where
/// `S_jik` includes the rotated per-point noise in the noise-aware mode and
/// is `sigma_k^2 I` in the baseline.
pub fn log_likelihood(
    clouds: &[ObservedCloud],
    transforms: &[RigidTransform],
    gmm: &GmmModel,
    mode: RegistrationMode,
) -> Result<f64> {
    if clouds.len() != transforms.len() {
        return Err(Error::LengthMismatch {
            what: "clouds vs transforms",
            left: clouds.len(),
            right: transforms.len(),
        });
    }
    let log_outlier = if gmm.outlier_weight() > 0.0 {
        gmm.outlier_weight().ln() - gmm.hull_volume.ln()
    } else {
        f64::NEG_INFINITY
    };
    let mut total = 0.0;
    for (cloud, transform) in clouds.iter().zip(transforms) {
        let per_point: Result<Vec<f64>> = cloud
            .points()
            .par_iter()
            .zip(cloud.noise_covs().par_iter())
            .map(|(p, noise)| {
                let rotated = match mode {
                    RegistrationMode::ProposedSage => {
                        crate::gaussian::rotate_covariance(noise, transform).matrix()
                    }
                    RegistrationMode::BaselineJrmpc => Matrix3::zeros(),
                };
                let transformed = transform.apply(p);
                let mut terms = Vec::with_capacity(gmm.n_components() + 1);
                for c in 0..gmm.n_components() {
                    if gmm.weights[c] == 0.0 {
                        terms.push(f64::NEG_INFINITY);
                        continue;
                    }
                    let total_cov = Matrix3::identity() * gmm.variances[c] + rotated;
                    let chol = Cholesky::new(total_cov).ok_or(Error::SingularCovariance)?;
                    terms.push(
                        gmm.weights[c].ln()
                            + logpdf_with_chol(&(transformed - gmm.means[c]), &chol),
                    );
                }
                terms.push(log_outlier);
                Ok(log_sum_exp(terms.iter().copied()))
            })
            .collect();
        total += per_point?.iter().sum::<f64>();
    }
    Ok(total)
}
