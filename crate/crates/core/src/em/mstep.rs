//! Maximization steps: the rigid update (weighted Procrustes over posterior
//! samples or observed points) and the mixture update (responsibility-
//! weighted moments of the denoised posteriors).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::procrustes::ProcrustesAccumulator;
use crate::types::{GmmModel, ObservedCloud, RigidTransform};

use super::estep::EStepState;

/// Per-cloud weighted Procrustes alignment of the clean-point estimates to
/// the component means, with weights `alpha_jik / sigma_k^2`.
///
/// In the noise-aware mode the sources are the posterior samples; in the
/// baseline they are the observed points. A cloud whose cross-covariance is
/// rank-deficient (e.g. a single point) keeps its previous rotation and only
/// updates the translation; a cloud with zero total weight keeps its previous
/// transform.
pub fn m_rigid(
    clouds: &[ObservedCloud],
    state: &EStepState,
    gmm: &GmmModel,
    previous: &[RigidTransform],
) -> Result<Vec<RigidTransform>> {
    if clouds.len() != state.per_cloud.len() || clouds.len() != previous.len() {
        return Err(Error::LengthMismatch {
            what: "clouds vs state vs previous transforms",
            left: clouds.len(),
            right: state.per_cloud.len(),
        });
    }
    let mut out = Vec::with_capacity(clouds.len());
    for ((cloud, cloud_state), prev) in clouds.iter().zip(&state.per_cloud).zip(previous) {
        let mut acc = ProcrustesAccumulator::default();
        for (i, entries) in cloud_state.entries.iter().enumerate() {
            let observed = &cloud.points()[i];
            for e in entries {
                let source = e.sample.as_ref().unwrap_or(observed);
                let weight = e.alpha / gmm.variances[e.component];
                acc.push(source, &gmm.means[e.component], weight);
            }
        }
        if !(acc.weight_sum() > 0.0) {
            out.push(*prev);
            continue;
        }
        match acc.solve() {
            Ok(t) => out.push(t),
            Err(Error::DegenerateConfiguration { .. }) => {
                out.push(acc.solve_translation_only(prev.rotation())?)
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Mixture update from the (refreshed) posteriors:
///
/// - `mu_k = sum alpha y_hat / sum alpha`
/// - `Sigma_k = sum alpha (y_hat y_hat^T + (I - W) sigma_k^2) / sum alpha
///    - mu_k mu_k^T`, reduced to a scalar via `trace / 3` and floored.
/// - weights stay fixed by default; otherwise the K component weights are
///   refitted from the responsibility masses with the outlier mass held
///   fixed.
///
/// Components that received no responsibility mass keep their parameters.
pub fn m_gmm(
    state: &EStepState,
    gmm: &GmmModel,
    variance_floor: f64,
    fix_weights: bool,
) -> Result<GmmModel> {
    let k = gmm.n_components();
    let mut mass = vec![0.0; k];
    let mut first = vec![Vector3::zeros(); k];
    let mut second = vec![Matrix3::zeros(); k];

    for cloud_state in &state.per_cloud {
        for entries in &cloud_state.entries {
            for e in entries {
                let c = e.component;
                mass[c] += e.alpha;
                first[c] += e.alpha * e.denoised;
                let residual_cov = (Matrix3::identity() - e.gain) * gmm.variances[c];
                second[c] +=
                    e.alpha * (e.denoised * e.denoised.transpose() + residual_cov);
            }
        }
    }

    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        if mass[c] > 0.0 {
            let mu = first[c] / mass[c];
            let full = second[c] / mass[c] - mu * mu.transpose();
            means.push(mu);
            variances.push((full.trace() / 3.0).max(variance_floor));
        } else {
            means.push(gmm.means[c]);
            variances.push(gmm.variances[c].max(variance_floor));
        }
    }

    let weights = if fix_weights {
        gmm.weights.clone()
    } else {
        let total: f64 = mass.iter().sum();
        let outlier = gmm.outlier_weight();
        let mut w: Vec<f64> = if total > 0.0 {
            mass.iter().map(|m| (1.0 - outlier) * m / total).collect()
        } else {
            gmm.weights[..k].to_vec()
        };
        w.push(outlier);
        w
    };

    GmmModel::new(means, variances, weights, gmm.hull_volume)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::estep::e_step;
    use crate::types::{CovMat3, RegistrationConfig, RegistrationMode};
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    fn cfg(mode: RegistrationMode) -> RegistrationConfig {
        RegistrationConfig::new(2, 0, mode)
    }

    #[test]
    fn rigid_step_is_identity_at_zero_residual() {
        // points already sitting on the component means
        let means = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let cloud = ObservedCloud::new(
            "c",
            means.clone(),
            vec![CovMat3::zero(); 4],
        )
        .unwrap();
        let gmm = GmmModel::new(
            means,
            vec![0.01; 4],
            vec![0.25, 0.25, 0.25, 0.25, 0.0],
            1.0,
        )
        .unwrap();
        let t0 = RigidTransform::identity();
        let config = cfg(RegistrationMode::BaselineJrmpc);
        let state = e_step(&[cloud.clone()], &[t0], &gmm, &config).unwrap();
        let new = m_rigid(&[cloud], &state, &gmm, &[t0]).unwrap();
        assert_relative_eq!(*new[0].rotation(), Matrix3::identity(), epsilon = 1e-8);
        assert!(new[0].translation().norm() < 1e-8);
    }

    #[test]
    fn rigid_step_recovers_exact_transform() {
        // targets are a rotated+translated copy of the sources, responsibilities
        // one-hot by construction (tiny variances, distinct clusters)
        let mut rng = crate::seed::rng_from(3);
        let sources: Vec<Vector3<f64>> = (0..12)
            .map(|_| crate::oracles::random_vec(&mut rng, 1.0))
            .collect();
        let rot = Rotation3::from_euler_angles(0.4, -0.3, 0.9).into_inner();
        let tr = Vector3::new(0.5, -1.0, 2.0);
        let means: Vec<Vector3<f64>> = sources.iter().map(|s| rot * s + tr).collect();
        let k = means.len();
        let cloud =
            ObservedCloud::new("c", sources, vec![CovMat3::zero(); k]).unwrap();
        let mut weights = vec![1.0 / (k as f64); k];
        weights.push(0.0);
        let gmm = GmmModel::new(means, vec![1e-4; k], weights, 1.0).unwrap();
        let t0 = RigidTransform::identity();
        let config = cfg(RegistrationMode::BaselineJrmpc);
        // one-hot responsibilities need the points near their own component;
        // with identity init they are not, so build the state by hand
        let mut state = e_step(&[cloud.clone()], &[t0], &gmm, &config).unwrap();
        for (i, entries) in state.per_cloud[0].entries[..].iter_mut().enumerate() {
            for e in entries.iter_mut() {
                e.alpha = if e.component == i { 1.0 } else { 0.0 };
            }
        }
        let new = m_rigid(&[cloud], &state, &gmm, &[t0]).unwrap();
        assert!(
            crate::metrics::rotation_angle_between(new[0].rotation(), &rot) < 1e-8,
            "rotation error too large"
        );
        assert_relative_eq!(*new[0].translation(), tr, epsilon = 1e-8);
    }

    #[test]
    fn single_point_cloud_keeps_previous_rotation() {
        let cloud = ObservedCloud::new(
            "c",
            vec![Vector3::new(1.0, 2.0, 3.0)],
            vec![CovMat3::zero()],
        )
        .unwrap();
        let gmm = GmmModel::new(
            vec![Vector3::new(0.0, 0.0, 1.0)],
            vec![0.1],
            vec![1.0, 0.0],
            1.0,
        )
        .unwrap();
        let prev = RigidTransform::from_rotation(
            Rotation3::from_euler_angles(0.3, 0.1, -0.2).into_inner(),
        )
        .unwrap();
        let config = cfg(RegistrationMode::BaselineJrmpc);
        let state = e_step(&[cloud.clone()], &[prev], &gmm, &config).unwrap();
        let new = m_rigid(&[cloud], &state, &gmm, &[prev]).unwrap();
        assert_eq!(new[0].rotation(), prev.rotation());
        // translation moves the single point onto the mean
        let moved = new[0].apply(&Vector3::new(1.0, 2.0, 3.0));
        assert_relative_eq!(moved, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-10);
    }

    #[test]
    fn gmm_step_noise_free_equals_baseline_update() {
        // with zero noise covariances, the proposed-mode update must coincide
        // with the baseline update on transformed points
        let mut rng = crate::seed::rng_from(5);
        let points: Vec<Vector3<f64>> = (0..30)
            .map(|_| crate::oracles::random_vec(&mut rng, 1.5))
            .collect();
        let cloud =
            ObservedCloud::new("c", points, vec![CovMat3::zero(); 30]).unwrap();
        let gmm = GmmModel::new(
            vec![Vector3::new(0.5, 0.0, 0.0), Vector3::new(-0.5, 0.0, 0.0)],
            vec![0.5, 0.7],
            vec![0.45, 0.45, 0.1],
            10.0,
        )
        .unwrap();
        let t = RigidTransform::from_rotation(crate::oracles::random_rotation(&mut rng)).unwrap();

        let sp = e_step(
            &[cloud.clone()],
            &[t],
            &gmm,
            &cfg(RegistrationMode::ProposedSage),
        )
        .unwrap();
        let sb = e_step(
            &[cloud],
            &[t],
            &gmm,
            &cfg(RegistrationMode::BaselineJrmpc),
        )
        .unwrap();
        let floor = 1e-10;
        let gp = m_gmm(&sp, &gmm, floor, true).unwrap();
        let gb = m_gmm(&sb, &gmm, floor, true).unwrap();
        for c in 0..2 {
            assert_relative_eq!(gp.means[c], gb.means[c], epsilon = 1e-10);
            assert_relative_eq!(gp.variances[c], gb.variances[c], epsilon = 1e-10);
        }
    }

    #[test]
    fn gmm_step_degenerate_cluster_hits_floor() {
        let p = Vector3::new(0.2, -0.1, 0.4);
        let cloud = ObservedCloud::new(
            "c",
            vec![p; 6],
            vec![CovMat3::zero(); 6],
        )
        .unwrap();
        let gmm = GmmModel::new(vec![Vector3::zeros()], vec![0.5], vec![1.0, 0.0], 1.0).unwrap();
        let config = cfg(RegistrationMode::ProposedSage);
        let t = RigidTransform::identity();
        let state = e_step(&[cloud], &[t], &gmm, &config).unwrap();
        let floor = 1e-6;
        let new = m_gmm(&state, &gmm, floor, true).unwrap();
        assert_relative_eq!(new.means[0], p, epsilon = 1e-12);
        assert_eq!(new.variances[0], floor);
    }

    #[test]
    fn gmm_step_increases_quadrature_auxiliary_objective() {
        // random small instance: the updated (mu, sigma2) must not decrease
        // the sampled auxiliary objective, evaluated by grid quadrature over
        // the latent clean points
        let mut rng = crate::seed::rng_from(7);
        let m_clouds = 2;
        let n = 5;
        let mut clouds = Vec::new();
        let mut transforms = Vec::new();
        for _ in 0..m_clouds {
            let pts: Vec<Vector3<f64>> =
                (0..n).map(|_| crate::oracles::random_vec(&mut rng, 1.0)).collect();
            let covs: Vec<CovMat3> =
                (0..n).map(|_| crate::oracles::random_spd(&mut rng, 0.25)).collect();
            clouds.push(ObservedCloud::new("c", pts, covs).unwrap());
            transforms
                .push(RigidTransform::from_rotation(crate::oracles::random_rotation(&mut rng)).unwrap());
        }
        let gmm = GmmModel::new(
            vec![Vector3::new(0.4, 0.0, 0.0), Vector3::new(-0.4, 0.2, 0.0)],
            vec![0.3, 0.5],
            vec![0.45, 0.45, 0.1],
            8.0,
        )
        .unwrap();
        let config = cfg(RegistrationMode::ProposedSage);
        let state = e_step(&clouds, &transforms, &gmm, &config).unwrap();
        let updated = m_gmm(&state, &gmm, 1e-12, true).unwrap();

        // Q(theta) restricted to the GMM terms, approximated on a grid:
        // sum alpha * int beta(u) (||u - mu_k||^2 / s_k + 3 ln s_k) du
        let q_of = |cand: &GmmModel| -> f64 {
            let mut q = 0.0;
            for cloud_state in &state.per_cloud {
                for entries in &cloud_state.entries {
                    for e in entries {
                        let pos_cov =
                            (Matrix3::identity() - e.gain) * gmm.variances[e.component];
                        let s = cand.variances[e.component];
                        let mu = cand.means[e.component];
                        // quadrature over the aligned clean point
                        let spread = crate::oracles::sorted_eigenvalues(&pos_cov)[2]
                            .max(1e-12)
                            .sqrt();
                        let half = 6.0 * spread;
                        let n_grid = 24;
                        let h = 2.0 * half / n_grid as f64;
                        let inv = pos_cov
                            .try_inverse()
                            .unwrap_or_else(|| Matrix3::identity() * 1e12);
                        let mut mass = 0.0;
                        let mut integral = 0.0;
                        for ix in 0..n_grid {
                            for iy in 0..n_grid {
                                for iz in 0..n_grid {
                                    let u = e.denoised
                                        + Vector3::new(
                                            -half + (ix as f64 + 0.5) * h,
                                            -half + (iy as f64 + 0.5) * h,
                                            -half + (iz as f64 + 0.5) * h,
                                        );
                                    let d = u - e.denoised;
                                    let w = (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp();
                                    mass += w;
                                    integral += w * ((u - mu).norm_squared() / s + 3.0 * s.ln());
                                }
                            }
                        }
                        q += -0.5 * e.alpha * integral / mass;
                    }
                }
            }
            q
        };
        let q_old = q_of(&gmm);
        let q_new = q_of(&updated);
        assert!(
            q_new >= q_old - 1e-8 * q_old.abs(),
            "auxiliary objective decreased: {q_old} -> {q_new}"
        );
    }

    #[test]
    fn weight_update_preserves_outlier_mass() {
        let mut rng = crate::seed::rng_from(9);
        let points: Vec<Vector3<f64>> =
            (0..25).map(|_| crate::oracles::random_vec(&mut rng, 1.0)).collect();
        let cloud =
            ObservedCloud::new("c", points, vec![CovMat3::zero(); 25]).unwrap();
        let gmm = GmmModel::new(
            vec![Vector3::new(0.3, 0.0, 0.0), Vector3::zeros()],
            vec![0.4, 0.4],
            vec![0.5, 0.4, 0.1],
            9.0,
        )
        .unwrap();
        let config = cfg(RegistrationMode::BaselineJrmpc);
        let state = e_step(&[cloud], &[RigidTransform::identity()], &gmm, &config).unwrap();
        let updated = m_gmm(&state, &gmm, 1e-12, false).unwrap();
        assert_relative_eq!(updated.outlier_weight(), 0.1, epsilon = 1e-15);
        assert_relative_eq!(updated.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!((updated.weights[0] - gmm.weights[0]).abs() > 1e-6, "weights should move");
    }
}
