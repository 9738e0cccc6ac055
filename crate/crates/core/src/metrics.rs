//! Registration accuracy metrics.
//!
//! The estimated transforms are compared to the generating ones only through
//! relative rotations (the common pose is an arbitrary gauge, and translations
//! are easy once rotations are right). For objects with an n-fold cyclic
//! symmetry there are n equally correct relative rotations per pair; the
//! metric takes the minimum over all of them.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::types::RigidTransform;

/// Pairwise rotation errors in degrees; symmetric with zero diagonal, and
/// entries in [0, 90] by construction.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub pairwise_deg: Vec<Vec<f64>>,
    pub mean_deg: f64,
    pub std_deg: f64,
}

/// Geodesic angle between two rotations:
/// `arccos(clamp((tr(a b^T) - 1) / 2, -1, 1))`, in radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = ((a * b.transpose()).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

/// Pairwise errors about the z symmetry axis; see
/// [`pairwise_error_about_axis`].
pub fn pairwise_error(
    estimated: &[RigidTransform],
    truth: &[RigidTransform],
    symmetry_order: usize,
) -> Result<ErrorReport> {
    pairwise_error_about_axis(estimated, truth, symmetry_order, &Vector3::z_axis())
}

/// For each pair (i, j) compares the estimated relative rotation
/// `Rhat_i^T Rhat_j` against the n symmetry-equivalent ground-truth relative
/// rotations `Rtil_i Rz(2 pi k / n)^T Rtil_j^T`, keeping the per-pair minimum
/// of `min(theta, pi - theta)` and reporting degrees.
pub fn pairwise_error_about_axis(
    estimated: &[RigidTransform],
    truth: &[RigidTransform],
    symmetry_order: usize,
    axis: &nalgebra::Unit<Vector3<f64>>,
) -> Result<ErrorReport> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "estimated vs ground-truth transforms",
            left: estimated.len(),
            right: truth.len(),
        });
    }
    if symmetry_order == 0 {
        return Err(Error::InvalidConfig("symmetry order must be >= 1".into()));
    }
    let m = estimated.len();
    let sym_rotations: Vec<Matrix3<f64>> = (0..symmetry_order)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / symmetry_order as f64;
            Rotation3::from_axis_angle(axis, angle).into_inner()
        })
        .collect();

    let mut pairwise = vec![vec![0.0; m]; m];
    let mut values = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            let est_rel = estimated[i].rotation().transpose() * estimated[j].rotation();
            let mut best = f64::INFINITY;
            for rz in &sym_rotations {
                let truth_rel = truth[i].rotation() * rz.transpose() * truth[j].rotation().transpose();
                let theta = rotation_angle_between(&est_rel, &truth_rel);
                best = best.min(theta.min(std::f64::consts::PI - theta));
            }
            let deg = best.to_degrees();
            pairwise[i][j] = deg;
            pairwise[j][i] = deg;
            values.push(deg);
        }
    }
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    let std = if values.is_empty() {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64).sqrt()
    };
    Ok(ErrorReport {
        pairwise_deg: pairwise,
        mean_deg: mean,
        std_deg: std,
    })
}
