//! Independent numerical oracles for the test suites.
//!
//! Nothing in this module is used by the library itself: the routines here
//! deliberately take the "slow but obviously right" route (explicit inverses,
//! Monte-Carlo integration, brute-force quadrature, derivative-free search)
//! so they can cross-check the closed-form implementations.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::gaussian::{standard_normal, LOG_2PI};
use crate::types::{CovMat3, RigidTransform};

/// Uniform random rotation via a normalized 4-Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
    );
    nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        scale * (2.0 * rng.random::<f64>() - 1.0),
        scale * (2.0 * rng.random::<f64>() - 1.0),
        scale * (2.0 * rng.random::<f64>() - 1.0),
    )
}

/// Random PSD matrix `A A^T` with entries of `A` in `[-scale, scale]`.
pub fn random_psd(rng: &mut impl Rng, scale: f64) -> CovMat3 {
    let a = Matrix3::from_fn(|_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
    CovMat3::from_matrix(&(a * a.transpose())).expect("A A^T is PSD")
}

/// Random strictly positive definite matrix (`A A^T + eps I`).
pub fn random_spd(rng: &mut impl Rng, scale: f64) -> CovMat3 {
    let a = Matrix3::from_fn(|_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
    let m = a * a.transpose() + Matrix3::identity() * (0.05 * scale * scale);
    CovMat3::from_matrix(&m).expect("SPD by construction")
}

pub fn sorted_eigenvalues(m: &Matrix3<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}

/// log N(x; mu, cov) through an explicit matrix inverse and determinant.
pub fn logpdf_explicit_inverse(x: &Vector3<f64>, mu: &Vector3<f64>, cov: &Matrix3<f64>) -> f64 {
    let inv = cov.try_inverse().expect("oracle covariance invertible");
    let d = x - mu;
    let maha = (d.transpose() * inv * d)[(0, 0)];
    -0.5 * (3.0 * LOG_2PI + cov.determinant().ln() + maha)
}

/// Monte-Carlo estimate (value, standard error) of the marginal density
/// `int N(y_obs; y, noise) N(phi(y); mu, sigma2 I) dy`,
/// sampling `y ~ N(y_obs, noise)` and averaging the mixture-component factor.
pub fn mc_marginal_density(
    y_obs: &Vector3<f64>,
    noise: &CovMat3,
    t: &RigidTransform,
    mu: &Vector3<f64>,
    sigma2: f64,
    n_samples: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = crate::seed::rng_from(seed);
    // eigen square root of the noise covariance for sampling
    let eig = noise.matrix().symmetric_eigen();
    let norm_const = (2.0 * std::f64::consts::PI * sigma2).powf(-1.5);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let z = Vector3::new(
            standard_normal(&mut rng),
            standard_normal(&mut rng),
            standard_normal(&mut rng),
        );
        let scaled = Vector3::new(
            eig.eigenvalues[0].max(0.0).sqrt() * z[0],
            eig.eigenvalues[1].max(0.0).sqrt() * z[1],
            eig.eigenvalues[2].max(0.0).sqrt() * z[2],
        );
        let y = y_obs + eig.eigenvectors * scaled;
        let d = t.apply(&y) - mu;
        let val = norm_const * (-0.5 * d.norm_squared() / sigma2).exp();
        sum += val;
        sum_sq += val * val;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Grid-quadrature Bayes posterior of the aligned clean point `u = phi(y)`:
/// weight `N(phi(y_obs); u, Sigma_rot) * N(u; mu, sigma2 I)` normalized over
/// a box. Returns (mean, covariance, grid spacing).
pub fn grid_bayes_posterior(
    transformed_obs: &Vector3<f64>,
    noise: &Matrix3<f64>,
    t: &RigidTransform,
    mu: &Vector3<f64>,
    sigma2: f64,
    n_per_axis: usize,
) -> (Vector3<f64>, Matrix3<f64>, f64) {
    let r = t.rotation();
    let rotated = r * noise * r.transpose();
    let noise_inv = rotated.try_inverse().expect("oracle noise invertible");
    // box covering both factors
    let spread = sorted_eigenvalues(&rotated)[2].sqrt().max(sigma2.sqrt());
    let center = (transformed_obs + mu) * 0.5;
    let half = 0.5 * (transformed_obs - mu).norm() + 7.0 * spread;
    let h = 2.0 * half / n_per_axis as f64;

    let mut mass = 0.0;
    let mut first = Vector3::zeros();
    let mut second = Matrix3::zeros();
    for ix in 0..n_per_axis {
        for iy in 0..n_per_axis {
            for iz in 0..n_per_axis {
                let u = center
                    + Vector3::new(
                        -half + (ix as f64 + 0.5) * h,
                        -half + (iy as f64 + 0.5) * h,
                        -half + (iz as f64 + 0.5) * h,
                    );
                let d1 = transformed_obs - u;
                let d2 = u - mu;
                let log_w = -0.5 * (d1.transpose() * noise_inv * d1)[(0, 0)]
                    - 0.5 * d2.norm_squared() / sigma2;
                let w = log_w.exp();
                mass += w;
                first += w * u;
                second += w * u * u.transpose();
            }
        }
    }
    let mean = first / mass;
    let cov = second / mass - mean * mean.transpose();
    (mean, cov, h)
}

/// Weighted rigid alignment objective `sum_i w_i || R s_i + t - m_i ||^2`.
pub fn alignment_objective(
    pairs: &[(Vector3<f64>, Vector3<f64>, f64)],
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> f64 {
    pairs
        .iter()
        .map(|(s, m, w)| w * (rotation * s + translation - m).norm_squared())
        .sum()
}

/// Objective with the translation set to its closed-form optimum for the
/// given rotation.
pub fn alignment_objective_opt_t(
    pairs: &[(Vector3<f64>, Vector3<f64>, f64)],
    rotation: &Matrix3<f64>,
) -> f64 {
    let wsum: f64 = pairs.iter().map(|p| p.2).sum();
    let s_bar = pairs.iter().map(|(s, _, w)| s * *w).sum::<Vector3<f64>>() / wsum;
    let m_bar = pairs.iter().map(|(_, m, w)| m * *w).sum::<Vector3<f64>>() / wsum;
    let t = m_bar - rotation * s_bar;
    alignment_objective(pairs, rotation, &t)
}

fn axis_angle_to_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    let angle = v.norm();
    if angle < 1e-300 {
        return Matrix3::identity();
    }
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*v), angle).into_inner()
}

/// Derivative-free Nelder-Mead over the axis-angle parameterization of the
/// rotation (the translation is eliminated in closed form). Returns the best
/// objective value found across the given starting points.
pub fn nelder_mead_alignment(
    pairs: &[(Vector3<f64>, Vector3<f64>, f64)],
    starts: &[Vector3<f64>],
    iters: usize,
) -> f64 {
    let f = |v: &Vector3<f64>| alignment_objective_opt_t(pairs, &axis_angle_to_matrix(v));
    let mut best = f64::INFINITY;
    for start in starts {
        best = best.min(nelder_mead_3d(&f, start, iters));
    }
    best
}

/// Minimal Nelder-Mead on R^3; enough to polish an alignment objective.
pub fn nelder_mead_3d(f: &dyn Fn(&Vector3<f64>) -> f64, start: &Vector3<f64>, iters: usize) -> f64 {
    let step = 0.25;
    let mut simplex: Vec<(Vector3<f64>, f64)> = Vec::with_capacity(4);
    simplex.push((*start, f(start)));
    for d in 0..3 {
        let mut p = *start;
        p[d] += step;
        simplex.push((p, f(&p)));
    }
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let centroid = (simplex[0].0 + simplex[1].0 + simplex[2].0) / 3.0;
        let worst = simplex[3];
        let reflected = centroid + (centroid - worst.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = centroid + 2.0 * (centroid - worst.0);
            let fe = f(&expanded);
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let contracted = centroid + 0.5 * (worst.0 - centroid);
            let fc = f(&contracted);
            if fc < worst.1 {
                simplex[3] = (contracted, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    v.0 = best + 0.5 * (v.0 - best);
                    v.1 = f(&v.0);
                }
            }
        }
    }
    simplex
        .iter()
        .map(|v| v.1)
        .fold(f64::INFINITY, f64::min)
}
