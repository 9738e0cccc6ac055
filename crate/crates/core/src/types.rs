//! Shared domain types with validated invariants.
//!
//! Points are plain `nalgebra::Vector3<f64>`; validation happens at the
//! container boundaries ([`ObservedCloud`], [`RigidTransform`], [`GmmModel`])
//! so the numeric kernels can stay allocation- and check-free.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Frobenius tolerance for the SO(3) checks (orthogonality and determinant).
pub const ROTATION_TOL: f64 = 1e-9;

/// Relative diagonal jitter used when testing positive semi-definiteness
/// with a Cholesky factorization.
pub const PSD_JITTER_REL: f64 = 1e-12;

/// Symmetric 3x3 covariance, stored as the upper triangle so symmetry holds
/// by construction. Entries are variances/covariances (squared length units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovMat3 {
    /// `[xx, xy, xz, yy, yz, zz]`
    upper: [f64; 6],
}

impl CovMat3 {
    /// Builds from the six unique entries `[xx, xy, xz, yy, yz, zz]`,
    /// checking finiteness and positive semi-definiteness.
    pub fn from_upper(upper: [f64; 6]) -> Result<Self> {
        if upper.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPsd);
        }
        let c = CovMat3 { upper };
        if !c.is_psd() {
            return Err(Error::NotPsd);
        }
        Ok(c)
    }

    /// Diagonal covariance from per-axis variances.
    pub fn from_diagonal(xx: f64, yy: f64, zz: f64) -> Result<Self> {
        Self::from_upper([xx, 0.0, 0.0, yy, 0.0, zz])
    }

    /// The zero matrix (an exact, noise-free observation).
    pub fn zero() -> Self {
        CovMat3 { upper: [0.0; 6] }
    }

    /// Skips the PSD check; for internal use where positive
    /// semi-definiteness is guaranteed analytically (e.g. rotations of a
    /// PSD matrix, which can pick up -1e-17 eigenvalue round-off).
    pub(crate) fn from_upper_unchecked(upper: [f64; 6]) -> Self {
        CovMat3 { upper }
    }

    /// Symmetrizes an arbitrary matrix (`(A + A^T)/2`) and validates it.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let s = (m + m.transpose()) * 0.5;
        Self::from_upper([
            s[(0, 0)],
            s[(0, 1)],
            s[(0, 2)],
            s[(1, 1)],
            s[(1, 2)],
            s[(2, 2)],
        ])
    }

    pub fn upper(&self) -> [f64; 6] {
        self.upper
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let [xx, xy, xz, yy, yz, zz] = self.upper;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    pub fn trace(&self) -> f64 {
        self.upper[0] + self.upper[3] + self.upper[5]
    }

    pub fn is_zero(&self) -> bool {
        self.upper.iter().all(|&v| v == 0.0)
    }

    /// PSD test via Cholesky with a diagonal jitter of up to
    /// [`PSD_JITTER_REL`] times the trace.
    pub fn is_psd(&self) -> bool {
        let m = self.matrix();
        if nalgebra::Cholesky::new(m).is_some() {
            return true;
        }
        // Semi-definite matrices (e.g. the zero matrix) fail a strict
        // factorization; retry with jitter scaled to the trace magnitude.
        let jitter = PSD_JITTER_REL * self.trace().abs() + 1e-300;
        nalgebra::Cholesky::new(m + Matrix3::identity() * jitter).is_some()
    }
}

/// One observed point set with its per-point measurement-noise covariances.
#[derive(Debug, Clone)]
pub struct ObservedCloud {
    pub id: String,
    points: Vec<Vector3<f64>>,
    noise_covs: Vec<CovMat3>,
}

impl ObservedCloud {
    pub fn new(
        id: impl Into<String>,
        points: Vec<Vector3<f64>>,
        noise_covs: Vec<CovMat3>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientPoints { needed: 1, got: 0 });
        }
        if points.len() != noise_covs.len() {
            return Err(Error::LengthMismatch {
                what: "points vs noise covariances",
                left: points.len(),
                right: noise_covs.len(),
            });
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidConfig("non-finite point coordinate".into()));
        }
        Ok(ObservedCloud {
            id: id.into(),
            points,
            noise_covs,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn noise_covs(&self) -> &[CovMat3] {
        &self.noise_covs
    }
}

/// Rigid transform `x -> R x + t` with `R` in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Validates `rotation` against the SO(3) invariants before wrapping it.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let rotation = validate_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite translation".into()));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Pure rotation about the origin.
    pub fn from_rotation(rotation: Matrix3<f64>) -> Result<Self> {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a point of the common frame back to this cloud's frame.
    pub fn apply_inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Checks that `m` is orthonormal with determinant +1 within
/// [`ROTATION_TOL`] (Frobenius), returning it unchanged on success.
pub fn validate_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotARotation {
            reason: "non-finite entries".into(),
        });
    }
    let ortho = (m.transpose() * m - Matrix3::identity()).norm();
    if ortho > ROTATION_TOL {
        return Err(Error::NotARotation {
            reason: format!("||R^T R - I|| = {ortho:.3e}"),
        });
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::NotARotation {
            reason: format!("det = {det:.12}"),
        });
    }
    Ok(*m)
}

/// Projects an arbitrary matrix onto the nearest rotation (polar
/// decomposition via SVD, with the reflection guard on the smallest
/// singular direction).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or(Error::DegenerateConfiguration {
        reason: "SVD failed".into(),
    })?;
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration {
        reason: "SVD failed".into(),
    })?;
    let d = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    validate_rotation(&(u * fix * v_t))
}

/// Shared Gaussian mixture: `K` isotropic components plus a uniform outlier
/// class over a volume `hull_volume`.
///
/// `weights` has `K + 1` entries; the last is the outlier mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub means: Vec<Vector3<f64>>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    pub hull_volume: f64,
}

impl GmmModel {
    pub fn new(
        means: Vec<Vector3<f64>>,
        variances: Vec<f64>,
        weights: Vec<f64>,
        hull_volume: f64,
    ) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::InvalidConfig("GMM needs at least one component".into()));
        }
        if variances.len() != k {
            return Err(Error::LengthMismatch {
                what: "means vs variances",
                left: k,
                right: variances.len(),
            });
        }
        if weights.len() != k + 1 {
            return Err(Error::LengthMismatch {
                what: "weights vs components+outlier",
                left: weights.len(),
                right: k + 1,
            });
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("variances must be positive".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("weights must be nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "weights must sum to 1 (got {sum:.15})"
            )));
        }
        if !(hull_volume > 0.0) || !hull_volume.is_finite() {
            return Err(Error::InvalidConfig("hull volume must be positive".into()));
        }
        Ok(GmmModel {
            means,
            variances,
            weights,
            hull_volume,
        })
    }

    /// Number of Gaussian components (excludes the outlier class).
    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    /// Weight of the uniform outlier class.
    pub fn outlier_weight(&self) -> f64 {
        self.weights[self.means.len()]
    }
}

/// Which expectation-maximization variant the engine runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistrationMode {
    /// Noise-aware, partially stochastic engine: per-point noise covariances
    /// enter the component densities, clean points are latent and sampled.
    ProposedSage,
    /// Deterministic baseline: component covariance is `sigma_k^2 I` only and
    /// the observed points are used directly.
    BaselineJrmpc,
}

impl RegistrationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegistrationMode::ProposedSage => "proposed_sage",
            RegistrationMode::BaselineJrmpc => "baseline_jrmpc",
        }
    }
}

impl std::fmt::Display for RegistrationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Default cap on dense `K x N` responsibility storage; above it, negligible
/// responsibilities are truncated to keep memory bounded.
pub const DEFAULT_DENSE_BUDGET: usize = 4_000_000;

/// Engine configuration. `variance_floor = None` resolves to
/// `(1e-4 * bounding-box diagonal)^2` of the initially transformed points.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub n_components: usize,
    /// Outlier prior ratio `gamma = p_{K+1} / (K p_1)` used at initialization.
    pub outlier_fraction: f64,
    pub max_iters: usize,
    pub rel_loglik_tol: f64,
    pub rng_seed: u64,
    pub mode: RegistrationMode,
    /// Posterior samples per (point, component); values above 1 are averaged
    /// before the rigid update (ignored in baseline mode).
    pub samples_per_point: usize,
    pub variance_floor: Option<f64>,
    /// Keep mixture weights fixed at their initial values (default).
    pub fix_weights: bool,
    /// Maximum number of (point, component) pairs stored densely; beyond it,
    /// responsibilities below 1e-12 are dropped and renormalized.
    pub dense_budget: usize,
}

impl RegistrationConfig {
    pub fn new(n_components: usize, rng_seed: u64, mode: RegistrationMode) -> Self {
        RegistrationConfig {
            n_components,
            outlier_fraction: 0.1,
            max_iters: 100,
            rel_loglik_tol: 1e-6,
            rng_seed,
            mode,
            samples_per_point: 1,
            variance_floor: None,
            fix_weights: true,
            dense_budget: DEFAULT_DENSE_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::InvalidConfig("n_components must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidConfig(
                "outlier_fraction must be in [0, 1)".into(),
            ));
        }
        if self.samples_per_point == 0 {
            return Err(Error::InvalidConfig("samples_per_point must be >= 1".into()));
        }
        if let Some(f) = self.variance_floor {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::InvalidConfig("variance_floor must be positive".into()));
            }
        }
        if !(self.rel_loglik_tol >= 0.0) {
            return Err(Error::InvalidConfig("rel_loglik_tol must be >= 0".into()));
        }
        Ok(())
    }

    /// Default variance floor rule for a dataset with the given bounding-box
    /// diagonal.
    pub fn default_variance_floor(bbox_diagonal: f64) -> f64 {
        let d = 1e-4 * bbox_diagonal;
        (d * d).max(f64::MIN_POSITIVE)
    }
}
