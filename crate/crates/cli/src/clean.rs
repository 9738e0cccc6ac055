//! Post-registration cleaning: responsibilities are recomputed at the final
//! parameters; a point is dropped when its most responsible class is the
//! outlier class, or when that class is a component whose variance exceeds
//! 2.5x the median component variance (strictly — a component exactly at the
//! threshold is kept). Retained points are emitted in the common frame.

use nalgebra::Vector3;

use anireg_core::em::e_step;
use anireg_core::gaussian::rotate_covariance;
use anireg_core::{
    CovMat3, GmmModel, ObservedCloud, RegistrationConfig, RegistrationMode, RigidTransform,
};

use crate::error::Result;

/// One cleaned cloud: transformed retained points with their rotated
/// covariances and the original indices they came from.
#[derive(Debug, Clone)]
pub struct CleanedCloud {
    pub id: String,
    pub kept_indices: Vec<usize>,
    pub points: Vec<Vector3<f64>>,
    pub noise_covs: Vec<CovMat3>,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn clean_registered_clouds(
    clouds: &[ObservedCloud],
    transforms: &[RigidTransform],
    gmm: &GmmModel,
    mode: RegistrationMode,
) -> Result<Vec<CleanedCloud>> {
    let mut config = RegistrationConfig::new(gmm.n_components(), 0, mode);
    config.outlier_fraction = 0.0; // unused here; the gmm carries the mass
    let state = e_step(clouds, transforms, gmm, &config)?;

    let median_variance = median(gmm.variances.clone());
    let threshold = 2.5 * median_variance;

    let mut out = Vec::with_capacity(clouds.len());
    for ((cloud, transform), cloud_state) in clouds.iter().zip(transforms).zip(&state.per_cloud) {
        let mut kept_indices = Vec::new();
        let mut points = Vec::new();
        let mut noise_covs = Vec::new();
        for (i, entries) in cloud_state.entries.iter().enumerate() {
            let best_component = entries
                .iter()
                .max_by(|a, b| a.alpha.partial_cmp(&b.alpha).unwrap())
                .map(|e| (e.component, e.alpha));
            let outlier_alpha = cloud_state.outlier_alpha[i];
            let keep = match best_component {
                Some((component, alpha)) if alpha >= outlier_alpha => {
                    // strict comparison: a component at exactly 2.5x the
                    // median is kept
                    !(gmm.variances[component] > threshold)
                }
                _ => false,
            };
            if keep {
                kept_indices.push(i);
                points.push(cloud_state.transformed[i]);
                noise_covs.push(rotate_covariance(&cloud.noise_covs()[i], transform));
            }
        }
        out.push(CleanedCloud {
            id: cloud.id.clone(),
            kept_indices,
            points,
            noise_covs,
        });
    }
    Ok(out)
}
