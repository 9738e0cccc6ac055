//! Closed-form weighted Procrustes solver for the rigid update.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::types::RigidTransform;

/// One weighted source→target pair of the alignment objective.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub source: Vector3<f64>,
    pub target: Vector3<f64>,
    pub weight: f64,
}

impl Correspondence {
    pub fn new(source: Vector3<f64>, target: Vector3<f64>, weight: f64) -> Self {
        Correspondence {
            source,
            target,
            weight,
        }
    }
}

/// Running sums for the weighted cross-covariance; lets callers accumulate
/// correspondences without materializing them.
#[derive(Debug, Clone, Copy)]
pub struct ProcrustesAccumulator {
    weight_sum: f64,
    source_sum: Vector3<f64>,
    target_sum: Vector3<f64>,
    cross_sum: Matrix3<f64>,
}

impl Default for ProcrustesAccumulator {
    fn default() -> Self {
        ProcrustesAccumulator {
            weight_sum: 0.0,
            source_sum: Vector3::zeros(),
            target_sum: Vector3::zeros(),
            cross_sum: Matrix3::zeros(),
        }
    }
}

impl ProcrustesAccumulator {
    pub fn push(&mut self, source: &Vector3<f64>, target: &Vector3<f64>, weight: f64) {
        self.weight_sum += weight;
        self.source_sum += weight * source;
        self.target_sum += weight * target;
        self.cross_sum += weight * source * target.transpose();
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    /// Solves `argmin sum w ||R s + t - m||^2`.
    ///
    /// Centers both sides by their weighted means, takes the SVD of the 3x3
    /// weighted cross-covariance `H = U D V^T` and returns
    /// `R = V diag(1, 1, det(V U^T)) U^T` (reflection guard), `t = m̄ - R s̄`.
    pub fn solve(&self) -> Result<RigidTransform> {
        if !(self.weight_sum > 0.0) {
            return Err(Error::DegenerateConfiguration {
                reason: "total correspondence weight is zero".into(),
            });
        }
        let s_bar = self.source_sum / self.weight_sum;
        let m_bar = self.target_sum / self.weight_sum;
        // H = sum w (s - s̄)(m - m̄)^T, expanded from the raw sums
        let h = self.cross_sum - self.weight_sum * s_bar * m_bar.transpose();

        let svd = h.svd(true, true);
        let sv = svd.singular_values;
        // rank < 2: rotation about the remaining axis is unidentifiable
        if sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateConfiguration {
                reason: format!("cross-covariance rank < 2 (singular values {sv:?})"),
            });
        }
        let u = svd.u.ok_or(Error::DegenerateConfiguration {
            reason: "SVD failed".into(),
        })?;
        let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration {
            reason: "SVD failed".into(),
        })?;
        let v = v_t.transpose();
        let d = (v * u.transpose()).determinant();
        let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum())) * u.transpose();
        let translation = m_bar - rotation * s_bar;
        RigidTransform::new(rotation, translation)
    }

    /// Fallback when the rotation is unidentifiable: keep `rotation` and
    /// update only the translation from the weighted means.
    pub fn solve_translation_only(&self, rotation: &Matrix3<f64>) -> Result<RigidTransform> {
        if !(self.weight_sum > 0.0) {
            return Err(Error::DegenerateConfiguration {
                reason: "total correspondence weight is zero".into(),
            });
        }
        let s_bar = self.source_sum / self.weight_sum;
        let m_bar = self.target_sum / self.weight_sum;
        RigidTransform::new(*rotation, m_bar - rotation * s_bar)
    }
}

/// Closed-form minimizer of `sum_i w_i || R s_i + t - m_i ||^2` over SO(3) x R^3.
pub fn weighted_procrustes(pairs: &[Correspondence]) -> Result<RigidTransform> {
    let mut acc = ProcrustesAccumulator::default();
    for c in pairs {
        if !(c.weight >= 0.0) || !c.weight.is_finite() {
            return Err(Error::InvalidConfig("correspondence weight must be finite and >= 0".into()));
        }
        acc.push(&c.source, &c.target, c.weight);
    }
    acc.solve()
}
