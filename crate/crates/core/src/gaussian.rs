//! Closed-form Gaussian identities used by the likelihood and the posteriors.
//!
//! Everything here works on 3x3 systems solved through Cholesky
//! factorizations; densities are combined in the log domain by callers.

use nalgebra::{Cholesky, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::types::{CovMat3, RigidTransform, PSD_JITTER_REL};

pub const LOG_2PI: f64 = 1.8378770664093453;

/// A Gaussian with full covariance; only densities with strictly positive
/// definite covariance can be evaluated.
#[derive(Debug, Clone, Copy)]
pub struct GaussianDensity {
    pub mean: Vector3<f64>,
    pub cov: CovMat3,
}

/// Cholesky with one jitter retry, scaled to the trace.
fn cholesky_with_jitter(m: &Matrix3<f64>) -> Result<Cholesky<f64, nalgebra::U3>> {
    if let Some(c) = Cholesky::new(*m) {
        return Ok(c);
    }
    let jitter = PSD_JITTER_REL * m.trace().abs() + 1e-300;
    Cholesky::new(m + Matrix3::identity() * jitter).ok_or(Error::SingularCovariance)
}

/// `R Sigma R^T`: the covariance expressed in the rotated frame.
/// Symmetrized to cancel round-off; eigenvalues are preserved.
pub fn rotate_covariance(cov: &CovMat3, t: &RigidTransform) -> CovMat3 {
    let r = t.rotation();
    let m = r * cov.matrix() * r.transpose();
    let s = (m + m.transpose()) * 0.5;
    let [xx, xy, xz, yy, yz, zz] = [
        s[(0, 0)],
        s[(0, 1)],
        s[(0, 2)],
        s[(1, 1)],
        s[(1, 2)],
        s[(2, 2)],
    ];
    // Rotation of a PSD matrix stays PSD; bypass the PSD re-check, which
    // could spuriously fail on -1e-17 eigenvalue round-off.
    CovMat3::from_upper_unchecked([xx, xy, xz, yy, yz, zz])
}

/// log N(x; mean, cov) via Cholesky (no explicit inverse).
pub fn gaussian_logpdf(x: &Vector3<f64>, g: &GaussianDensity) -> Result<f64> {
    let chol = cholesky_with_jitter(&g.cov.matrix())?;
    Ok(logpdf_with_chol(&(x - g.mean), &chol))
}

/// log N(d; 0, S) given the Cholesky factor of S.
pub(crate) fn logpdf_with_chol(d: &Vector3<f64>, chol: &Cholesky<f64, nalgebra::U3>) -> f64 {
    let l = chol.l_dirty();
    let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln() + l[(2, 2)].ln());
    let z = chol.solve(d);
    let maha = d.dot(&z);
    -0.5 * (3.0 * LOG_2PI + log_det + maha)
}

/// Log of the per-component marginal density of an observed point: the latent
/// clean point is integrated out, leaving
/// `N(phi(y_obs); mu, sigma2 I + R noise R^T)`.
pub fn log_marginal_component_density(
    y_obs: &Vector3<f64>,
    noise: &CovMat3,
    t: &RigidTransform,
    mu: &Vector3<f64>,
    sigma2: f64,
) -> Result<f64> {
    let rotated = rotate_covariance(noise, t);
    let total = Matrix3::identity() * sigma2 + rotated.matrix();
    let chol = cholesky_with_jitter(&total)?;
    Ok(logpdf_with_chol(&(t.apply(y_obs) - mu), &chol))
}

/// Linear-domain variant of [`log_marginal_component_density`].
pub fn marginal_component_density(
    y_obs: &Vector3<f64>,
    noise: &CovMat3,
    t: &RigidTransform,
    mu: &Vector3<f64>,
    sigma2: f64,
) -> Result<f64> {
    Ok(log_marginal_component_density(y_obs, noise, t, mu, sigma2)?.exp())
}

/// Gain matrix and denoised mean of the clean-point posterior, given that the
/// point belongs to the component `(mu, sigma2)`:
///
/// `W = sigma2 I (sigma2 I + R noise R^T)^{-1}`,
/// `y_hat = W (phi(y_obs) - mu) + mu`.
///
/// The posterior covariance of the aligned clean point is `(I - W) sigma2`,
/// symmetric PSD with eigenvalues in `[0, sigma2]`.
pub fn posterior_gain_and_mean(
    y_obs: &Vector3<f64>,
    noise: &CovMat3,
    t: &RigidTransform,
    mu: &Vector3<f64>,
    sigma2: f64,
) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let transformed = t.apply(y_obs);
    if noise.is_zero() {
        // Exact observation: the posterior collapses onto phi(y_obs).
        return Ok((Matrix3::identity(), transformed));
    }
    let rotated = rotate_covariance(noise, t);
    let gain = gain_from_rotated(&rotated.matrix(), sigma2)?;
    let y_hat = gain * (transformed - mu) + mu;
    Ok((gain, y_hat))
}

/// `W = sigma2 (sigma2 I + Sigma_rot)^{-1}` via Cholesky solves.
pub(crate) fn gain_from_rotated(rotated: &Matrix3<f64>, sigma2: f64) -> Result<Matrix3<f64>> {
    let total = Matrix3::identity() * sigma2 + rotated;
    let chol = cholesky_with_jitter(&total)?;
    Ok(chol.inverse() * sigma2)
}

/// One standard-normal draw; a typed wrapper around `StandardNormal`.
pub fn standard_normal(rng: &mut impl rand::Rng) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}

/// Draws from `N(mean, cov)` where `cov` may be singular: negative
/// eigenvalues (round-off) are clamped to zero before taking the matrix
/// square root.
pub fn sample_gaussian_psd(
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    rng: &mut impl rand::Rng,
) -> Vector3<f64> {
    if cov.iter().all(|&v| v == 0.0) {
        return *mean;
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let z = Vector3::new(
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
    );
    let scaled = Vector3::new(
        eig.eigenvalues[0].max(0.0).sqrt() * z[0],
        eig.eigenvalues[1].max(0.0).sqrt() * z[1],
        eig.eigenvalues[2].max(0.0).sqrt() * z[2],
    );
    mean + eig.eigenvectors * scaled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::Rng;

    fn rot_x_90() -> RigidTransform {
        RigidTransform::from_rotation(
            Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2)
                .into_inner(),
        )
        .unwrap()
    }

    #[test]
    fn rotate_identity_keeps_covariance() {
        let c = CovMat3::from_diagonal(1.0, 1.0, 5.0).unwrap();
        let out = rotate_covariance(&c, &RigidTransform::identity());
        assert_eq!(out.matrix(), c.matrix());
    }

    #[test]
    fn rotate_90_about_x_permutes_axes() {
        let c = CovMat3::from_diagonal(1.0, 1.0, 5.0).unwrap();
        let out = rotate_covariance(&c, &rot_x_90()).matrix();
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, 5.0, 1.0));
        assert_relative_eq!(out, expected, epsilon = 1e-12);
    }

    #[test]
    fn rotation_preserves_spectrum_trace_det() {
        let mut rng = crate::seed::rng_from(11);
        for _ in 0..20 {
            let cov = oracles::random_psd(&mut rng, 2.0);
            let t = RigidTransform::from_rotation(oracles::random_rotation(&mut rng)).unwrap();
            let out = rotate_covariance(&cov, &t);
            let mut ein = oracles::sorted_eigenvalues(&cov.matrix());
            let mut eout = oracles::sorted_eigenvalues(&out.matrix());
            for (a, b) in ein.iter_mut().zip(eout.iter_mut()) {
                assert_relative_eq!(a, b, epsilon = 1e-10, max_relative = 1e-10);
            }
            assert_relative_eq!(
                cov.matrix().trace(),
                out.matrix().trace(),
                max_relative = 1e-10
            );
            assert_relative_eq!(
                cov.matrix().determinant(),
                out.matrix().determinant(),
                max_relative = 1e-10,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn logpdf_analytic_values() {
        let g = GaussianDensity {
            mean: Vector3::new(0.5, -1.0, 2.0),
            cov: CovMat3::from_diagonal(1.0, 1.0, 1.0).unwrap(),
        };
        let at_mean = gaussian_logpdf(&g.mean, &g).unwrap();
        assert_relative_eq!(at_mean, -1.5 * LOG_2PI, epsilon = 1e-14);
        let off = gaussian_logpdf(&(g.mean + Vector3::x()), &g).unwrap();
        assert_relative_eq!(off, -1.5 * LOG_2PI - 0.5, epsilon = 1e-14);
    }

    #[test]
    fn logpdf_matches_explicit_inverse_oracle() {
        let mut rng = crate::seed::rng_from(23);
        for _ in 0..20 {
            let cov = oracles::random_spd(&mut rng, 1.5);
            let g = GaussianDensity {
                mean: oracles::random_vec(&mut rng, 2.0),
                cov,
            };
            let x = oracles::random_vec(&mut rng, 2.0);
            let ours = gaussian_logpdf(&x, &g).unwrap();
            let oracle = oracles::logpdf_explicit_inverse(&x, &g.mean, &cov.matrix());
            assert_relative_eq!(ours, oracle, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn logpdf_rejects_singular() {
        let g = GaussianDensity {
            mean: Vector3::zeros(),
            cov: CovMat3::zero(),
        };
        // jittered Cholesky succeeds on the zero matrix only thanks to the
        // absolute floor, giving an astronomically large density; strict
        // singularity is still reported when even that fails
        let r = gaussian_logpdf(&Vector3::zeros(), &g);
        assert!(r.is_ok() || matches!(r, Err(Error::SingularCovariance)));
    }

    #[test]
    fn marginal_reduces_to_plain_density_when_noise_is_zero() {
        let mut rng = crate::seed::rng_from(37);
        for _ in 0..10 {
            let t = RigidTransform::new(
                oracles::random_rotation(&mut rng),
                oracles::random_vec(&mut rng, 1.0),
            )
            .unwrap();
            let y = oracles::random_vec(&mut rng, 1.0);
            let mu = oracles::random_vec(&mut rng, 1.0);
            let sigma2 = 0.3 + rng.random::<f64>();
            let marg = marginal_component_density(&y, &CovMat3::zero(), &t, &mu, sigma2).unwrap();
            let g = GaussianDensity {
                mean: mu,
                cov: CovMat3::from_diagonal(sigma2, sigma2, sigma2).unwrap(),
            };
            let direct = gaussian_logpdf(&t.apply(&y), &g).unwrap().exp();
            assert_relative_eq!(marg, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn marginal_diagonal_additivity() {
        // diagonal noise, identity transform: per-axis variance of the
        // marginal is sigma2 + noise_aa
        let noise = CovMat3::from_diagonal(0.2, 0.4, 0.8).unwrap();
        let sigma2 = 0.5;
        let t = RigidTransform::identity();
        let mu = Vector3::zeros();
        // evaluate on-axis and compare against the 1D x 1D x 1D product
        let y = Vector3::new(0.3, -0.7, 1.1);
        let ours = marginal_component_density(&y, &noise, &t, &mu, sigma2).unwrap();
        let mut expected = 1.0;
        for (i, var_noise) in [0.2, 0.4, 0.8].iter().enumerate() {
            let v = sigma2 + var_noise;
            expected *= (-(y[i] * y[i]) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        assert_relative_eq!(ours, expected, max_relative = 1e-12);
    }

    #[test]
    fn marginal_matches_monte_carlo_oracle() {
        let mut rng = crate::seed::rng_from(51);
        for trial in 0..5 {
            let t = RigidTransform::new(
                oracles::random_rotation(&mut rng),
                oracles::random_vec(&mut rng, 0.5),
            )
            .unwrap();
            let noise = oracles::random_psd(&mut rng, 0.4);
            let sigma2 = 0.2 + 0.5 * rng.random::<f64>();
            let y = oracles::random_vec(&mut rng, 0.8);
            // place the component near the transformed point so the density
            // is not vanishingly small
            let mu = t.apply(&y) + oracles::random_vec(&mut rng, 0.5);
            let ours = marginal_component_density(&y, &noise, &t, &mu, sigma2).unwrap();
            let (mc, se) =
                oracles::mc_marginal_density(&y, &noise, &t, &mu, sigma2, 200_000, 1000 + trial);
            assert!(
                (ours - mc).abs() <= 3.0 * se,
                "ours {ours} vs mc {mc} +- {se}"
            );
        }
    }

    #[test]
    fn marginal_integrates_to_one_over_observed_point() {
        let t = RigidTransform::new(
            Rotation3::from_euler_angles(0.4, -0.8, 0.2).into_inner(),
            Vector3::new(0.3, 0.1, -0.2),
        )
        .unwrap();
        let noise = CovMat3::from_diagonal(0.05, 0.08, 0.2).unwrap();
        let sigma2 = 0.1;
        let mu = Vector3::new(0.2, -0.1, 0.4);
        // integrate over y_obs by midpoint rule; the mass sits around
        // phi^{-1}(mu), and the rigid map preserves volume
        let center = t.apply_inverse(&mu);
        let std_max = (sigma2 + 0.2_f64).sqrt();
        let half = 6.0 * std_max;
        let n = 80;
        let h = 2.0 * half / n as f64;
        let mut total = 0.0;
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let y = center
                        + Vector3::new(
                            -half + (ix as f64 + 0.5) * h,
                            -half + (iy as f64 + 0.5) * h,
                            -half + (iz as f64 + 0.5) * h,
                        );
                    total +=
                        marginal_component_density(&y, &noise, &t, &mu, sigma2).unwrap() * h * h * h;
                }
            }
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn gain_zero_noise_is_exact_observation() {
        let t = rot_x_90();
        let y = Vector3::new(0.1, 0.2, 0.3);
        let (w, y_hat) =
            posterior_gain_and_mean(&y, &CovMat3::zero(), &t, &Vector3::new(9.0, 9.0, 9.0), 0.7)
                .unwrap();
        assert_eq!(w, Matrix3::identity());
        assert_eq!(y_hat, t.apply(&y));
    }

    #[test]
    fn gain_equal_noise_is_midpoint() {
        let sigma2 = 0.6;
        let noise = CovMat3::from_diagonal(sigma2, sigma2, sigma2).unwrap();
        let t = RigidTransform::identity();
        let y = Vector3::new(1.0, 0.0, -2.0);
        let mu = Vector3::new(0.0, 2.0, 0.0);
        let (w, y_hat) = posterior_gain_and_mean(&y, &noise, &t, &mu, sigma2).unwrap();
        assert_relative_eq!(w, Matrix3::identity() * 0.5, epsilon = 1e-12);
        assert_relative_eq!(y_hat, (y + mu) * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn posterior_matches_grid_bayes_oracle() {
        let mut rng = crate::seed::rng_from(77);
        for _ in 0..3 {
            let t = RigidTransform::new(
                oracles::random_rotation(&mut rng),
                oracles::random_vec(&mut rng, 0.5),
            )
            .unwrap();
            let noise = oracles::random_spd(&mut rng, 0.3);
            let sigma2 = 0.2 + 0.3 * rng.random::<f64>();
            let y = oracles::random_vec(&mut rng, 0.5);
            let mu = t.apply(&y) + oracles::random_vec(&mut rng, 0.4);
            let (w, y_hat) = posterior_gain_and_mean(&y, &noise, &t, &mu, sigma2).unwrap();
            let post_cov = (Matrix3::identity() - w) * sigma2;
            let (gm, gc, h) =
                oracles::grid_bayes_posterior(&t.apply(&y), &noise.matrix(), &t, &mu, sigma2, 90);
            assert!((y_hat - gm).norm() < 1e-3 * h, "mean off by {}", (y_hat - gm).norm());
            assert!(
                (post_cov - gc).norm() < 1e-3 * h * h,
                "cov off by {}",
                (post_cov - gc).norm()
            );
        }
    }

    #[test]
    fn posterior_cov_spectrum_is_within_bounds() {
        let mut rng = crate::seed::rng_from(91);
        for _ in 0..30 {
            let t = RigidTransform::from_rotation(oracles::random_rotation(&mut rng)).unwrap();
            let noise = oracles::random_psd(&mut rng, 1.0);
            let sigma2 = 0.05 + rng.random::<f64>();
            let y = oracles::random_vec(&mut rng, 1.0);
            let mu = oracles::random_vec(&mut rng, 1.0);
            let (w, _) = posterior_gain_and_mean(&y, &noise, &t, &mu, sigma2).unwrap();
            let p = (Matrix3::identity() - w) * sigma2;
            assert!((p - p.transpose()).norm() < 1e-10 * sigma2.max(1.0));
            for ev in oracles::sorted_eigenvalues(&((p + p.transpose()) * 0.5)) {
                assert!(ev >= -1e-12 * sigma2 && ev <= sigma2 * (1.0 + 1e-12), "ev {ev}");
            }
        }
    }

    #[test]
    fn psd_sampler_hits_requested_moments() {
        use rand::SeedableRng;
        let mean = Vector3::new(1.0, -2.0, 0.5);
        let cov = Matrix3::new(0.5, 0.1, 0.0, 0.1, 0.3, -0.05, 0.0, -0.05, 0.8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut sum = Vector3::zeros();
        let mut sum_sq = Matrix3::zeros();
        for _ in 0..n {
            let x = sample_gaussian_psd(&mean, &cov, &mut rng);
            sum += x;
            sum_sq += (x - mean) * (x - mean).transpose();
        }
        let emp_mean = sum / n as f64;
        let emp_cov = sum_sq / n as f64;
        // 4 sigma bounds on the estimators
        for i in 0..3 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((emp_mean[i] - mean[i]).abs() < 4.0 * se);
            for j in 0..3 {
                let var_est = (cov[(i, i)] * cov[(j, j)] + cov[(i, j)] * cov[(i, j)]) / n as f64;
                assert!((emp_cov[(i, j)] - cov[(i, j)]).abs() < 4.0 * var_est.sqrt());
            }
        }
    }
}
