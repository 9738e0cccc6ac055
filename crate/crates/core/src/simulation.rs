//! Synthetic ground-truth models and the noisy multiview acquisition process.
//!
//! Two built-in models mimic centriole-like biological particles with a
//! ninefold cyclic symmetry (C9) about z; arbitrary point sets (e.g. a mesh
//! sample) can be wrapped through [`model_from_points`].

use nalgebra::{Rotation3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::standard_normal;
use crate::seed::{derive_seed, rng_from};
use crate::types::{CovMat3, ObservedCloud, RigidTransform};

const STREAM_VIEW: u64 = 0x51;
const STREAM_PERTURB: u64 = 0x52;
const STREAM_SUBSAMPLE: u64 = 0x53;

/// A clean reference point set with a known cyclic symmetry order about z
/// (1 = no symmetry).
#[derive(Debug, Clone)]
pub struct GroundTruthModel {
    pub name: String,
    pub points: Vec<Vector3<f64>>,
    pub symmetry_order: usize,
}

/// Acquisition protocol: per-view random pose, uniform outliers, and
/// space-varying anisotropic Gaussian noise
/// `Sigma_ji = diag(s_ji, s_ji, r * s_ji)` with the per-point level
/// `s_ji ~ N(sigma, sigma_spatial_std^2)` clamped to `[sigma / 10, inf)`.
///
/// By default the diagonal entries are variances; set `sigma_as_std` to read
/// the drawn level as a standard deviation instead (the covariance then uses
/// `diag(s^2, s^2, (r s)^2)`).
#[derive(Debug, Clone)]
pub struct AcquisitionSpec {
    /// Base noise level (a variance by default, see `sigma_as_std`).
    pub sigma: f64,
    /// Anisotropy ratio applied to the z entry (>= 1 mimics the axial
    /// uncertainty of a microscope).
    pub r: f64,
    /// Std of the Gaussian the per-point levels are drawn from.
    pub sigma_spatial_std: f64,
    pub outlier_fraction: f64,
    pub n_views: usize,
    pub rng_seed: u64,
    /// Interpret drawn levels as standard deviations instead of variances.
    pub sigma_as_std: bool,
}

impl AcquisitionSpec {
    /// Spec with the default spatial variation (0.2 * sigma) and 10% outliers.
    pub fn new(sigma: f64, r: f64, n_views: usize, rng_seed: u64) -> Self {
        AcquisitionSpec {
            sigma,
            r,
            sigma_spatial_std: 0.2 * sigma,
            outlier_fraction: 0.10,
            n_views,
            rng_seed,
            sigma_as_std: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidConfig("sigma must be >= 0".into()));
        }
        if !(self.r >= 1.0) {
            return Err(Error::InvalidConfig("anisotropy r must be >= 1".into()));
        }
        if !(self.sigma_spatial_std >= 0.0) {
            return Err(Error::InvalidConfig("sigma_spatial_std must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidConfig("outlier_fraction must be in [0, 1)".into()));
        }
        if self.n_views == 0 {
            return Err(Error::InvalidConfig("need at least one view".into()));
        }
        Ok(())
    }
}

/// Triplet-template geometry for [`generate_triplets`]: per C9 sector, one
/// 3-point triplet at the bottom and a tapered copy at the top (6 points per
/// sector, 54 total). Staggered radius and angle keep the symmetry exactly
/// C9 and nothing finer.
#[derive(Debug, Clone, Copy)]
pub struct TripletsGeometry {
    pub radius: f64,
    pub radial_step: f64,
    pub angle_step_deg: f64,
    pub z_half: f64,
    /// Radius ratio of the top triplet relative to the bottom one.
    pub top_scale: f64,
}

impl Default for TripletsGeometry {
    fn default() -> Self {
        TripletsGeometry {
            radius: 2.5,
            radial_step: 0.15,
            angle_step_deg: 8.0,
            z_half: 1.25,
            top_scale: 0.85,
        }
    }
}

/// 54 source points organized as triplets with exact C9 symmetry about z.
pub fn generate_triplets() -> GroundTruthModel {
    generate_triplets_with(TripletsGeometry::default())
}

pub fn generate_triplets_with(geo: TripletsGeometry) -> GroundTruthModel {
    let mut points = Vec::with_capacity(54);
    for rep in 0..9 {
        let base = 2.0 * std::f64::consts::PI * rep as f64 / 9.0;
        for level in 0..2 {
            let (scale, z) = if level == 0 {
                (1.0, -geo.z_half)
            } else {
                (geo.top_scale, geo.z_half)
            };
            for member in 0..3 {
                let angle = base + (member as f64) * geo.angle_step_deg.to_radians();
                let radius = (geo.radius + member as f64 * geo.radial_step) * scale;
                points.push(Vector3::new(radius * angle.cos(), radius * angle.sin(), z));
            }
        }
    }
    GroundTruthModel {
        name: "triplets".into(),
        points,
        symmetry_order: 9,
    }
}

/// Tapered-barrel geometry for [`generate_centriole`]: 9 triplets of
/// overlapping tubes around z, with a smaller radius at the top.
#[derive(Debug, Clone, Copy)]
pub struct CentrioleGeometry {
    pub bottom_radius: f64,
    pub top_radius: f64,
    pub length: f64,
    pub tube_radius: f64,
    pub tube_angle_step_deg: f64,
}

impl Default for CentrioleGeometry {
    fn default() -> Self {
        CentrioleGeometry {
            bottom_radius: 1.0,
            top_radius: 0.7,
            length: 2.0,
            tube_radius: 0.04,
            tube_angle_step_deg: 8.0,
        }
    }
}

/// Samples `n_points` uniformly along the 27 tube segments (9 triplets x 3
/// tubes) of a C9 tapered barrel. Default count is 2000.
pub fn generate_centriole(n_points: usize, seed: u64) -> Result<GroundTruthModel> {
    generate_centriole_with(n_points, seed, CentrioleGeometry::default())
}

pub fn generate_centriole_with(
    n_points: usize,
    seed: u64,
    geo: CentrioleGeometry,
) -> Result<GroundTruthModel> {
    if n_points < 54 {
        return Err(Error::InsufficientPoints {
            needed: 54,
            got: n_points,
        });
    }
    let mut rng = rng_from(derive_seed(seed, &[STREAM_SUBSAMPLE]));
    let mut points = Vec::with_capacity(n_points);
    let half = geo.length / 2.0;
    for _ in 0..n_points {
        let tube = rng.random_range(0..27u32);
        let (triplet, member) = (tube / 3, tube % 3);
        let angle = 2.0 * std::f64::consts::PI * triplet as f64 / 9.0
            + member as f64 * geo.tube_angle_step_deg.to_radians();
        let z = rng.random_range(-half..half);
        // linear taper bottom -> top
        let s = (z + half) / geo.length;
        let radius = geo.bottom_radius + s * (geo.top_radius - geo.bottom_radius);
        let center = Vector3::new(radius * angle.cos(), radius * angle.sin(), z);
        // jitter on the tube surface, in the (radial, axial) section plane
        let phi = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        let radial = Vector3::new(angle.cos(), angle.sin(), 0.0);
        let axial = Vector3::z();
        let offset = geo.tube_radius * (phi.cos() * radial + phi.sin() * axial);
        points.push(center + offset);
    }
    Ok(GroundTruthModel {
        name: "centriole".into(),
        points,
        symmetry_order: 9,
    })
}

/// Wraps an externally loaded point set, uniformly subsampling to `n_points`
/// (distinct indices) when the source is larger. Symmetry order 1.
pub fn model_from_points(
    name: impl Into<String>,
    points: Vec<Vector3<f64>>,
    n_points: usize,
    seed: u64,
) -> Result<GroundTruthModel> {
    if points.len() < n_points {
        return Err(Error::InsufficientPoints {
            needed: n_points,
            got: points.len(),
        });
    }
    let selected = if points.len() == n_points {
        points
    } else {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut rng = rng_from(derive_seed(seed, &[STREAM_SUBSAMPLE]));
        for i in 0..n_points {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(n_points);
        idx.into_iter().map(|i| points[i]).collect()
    };
    Ok(GroundTruthModel {
        name: name.into(),
        points: selected,
        symmetry_order: 1,
    })
}

/// Uniform random rotation via a normalized 4-Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
    let q = nalgebra::Quaternion::new(
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
    );
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

fn bounding_box(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

/// Generates `n_views` observed clouds from the model.
///
/// Per view: draw a uniform random rotation (translations are zero — only
/// rotations are evaluated downstream), rotate the model, replace
/// `round(N * outlier_fraction)` points by uniform draws inside the rotated
/// model's bounding box, then perturb every point with its own anisotropic
/// Gaussian noise and record that exact covariance in the cloud.
///
/// Returns the clouds and the generating transforms (model frame -> view
/// frame).
pub fn simulate_views(
    model: &GroundTruthModel,
    spec: &AcquisitionSpec,
) -> Result<(Vec<ObservedCloud>, Vec<RigidTransform>)> {
    spec.validate()?;
    let n = model.points.len();
    if n == 0 {
        return Err(Error::InsufficientPoints { needed: 1, got: 0 });
    }
    let n_outliers = (n as f64 * spec.outlier_fraction).round() as usize;

    let mut clouds = Vec::with_capacity(spec.n_views);
    let mut truths = Vec::with_capacity(spec.n_views);
    for view in 0..spec.n_views {
        let mut rng = rng_from(derive_seed(spec.rng_seed, &[STREAM_VIEW, view as u64]));
        let rotation = random_rotation(&mut rng);
        let truth = RigidTransform::from_rotation(rotation.into_inner())?;

        let mut points: Vec<Vector3<f64>> = model.points.iter().map(|p| rotation * p).collect();

        // replace a subset with uniform draws inside the rotated bounding box
        let (lo, hi) = bounding_box(&points);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..n_outliers {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        for &i in idx.iter().take(n_outliers) {
            points[i] = Vector3::new(
                rng.random_range(lo[0]..=hi[0]),
                rng.random_range(lo[1]..=hi[1]),
                rng.random_range(lo[2]..=hi[2]),
            );
        }

        let mut noise_covs = Vec::with_capacity(n);
        for p in points.iter_mut() {
            let level_draw = spec.sigma + spec.sigma_spatial_std * standard_normal(&mut rng);
            let level = level_draw.max(spec.sigma / 10.0);
            let (lat_var, ax_var) = if spec.sigma_as_std {
                (level * level, (spec.r * level) * (spec.r * level))
            } else {
                (level, spec.r * level)
            };
            let cov = CovMat3::from_diagonal(lat_var, lat_var, ax_var)?;
            let noise = Vector3::new(
                lat_var.sqrt() * standard_normal(&mut rng),
                lat_var.sqrt() * standard_normal(&mut rng),
                ax_var.sqrt() * standard_normal(&mut rng),
            );
            *p += noise;
            noise_covs.push(cov);
        }

        clouds.push(ObservedCloud::new(
            format!("view_{view:02}"),
            points,
            noise_covs,
        )?);
        truths.push(truth);
    }
    Ok((clouds, truths))
}

/// Indices that [`simulate_views`] replaces by outliers for a given view;
/// exposed so evaluations can label points without re-implementing the
/// shuffling.
pub fn outlier_indices(model_len: usize, spec: &AcquisitionSpec, view: usize) -> Vec<usize> {
    let n_outliers = (model_len as f64 * spec.outlier_fraction).round() as usize;
    let mut rng = rng_from(derive_seed(spec.rng_seed, &[STREAM_VIEW, view as u64]));
    // skip the pose quaternion draws (4 standard normals)
    for _ in 0..4 {
        standard_normal(&mut rng);
    }
    let mut idx: Vec<usize> = (0..model_len).collect();
    for i in 0..n_outliers {
        let j = rng.random_range(i..model_len);
        idx.swap(i, j);
    }
    idx.truncate(n_outliers);
    idx
}

/// Coarse initializations: the exact aligning transforms (the inverses of the
/// generating ones) with each Euler angle perturbed by `N(0, std_degrees^2)`.
/// `std_degrees = 0` returns the exact alignment.
pub fn perturb_rotations(
    true_transforms: &[RigidTransform],
    std_degrees: f64,
    seed: u64,
) -> Result<Vec<RigidTransform>> {
    if std_degrees < 0.0 {
        return Err(Error::InvalidConfig("std_degrees must be >= 0".into()));
    }
    let std = std_degrees.to_radians();
    let mut out = Vec::with_capacity(true_transforms.len());
    for (view, t) in true_transforms.iter().enumerate() {
        let mut rng = rng_from(derive_seed(seed, &[STREAM_PERTURB, view as u64]));
        let aligned = t.inverse();
        let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(*aligned.rotation()).euler_angles();
        let d = [
            standard_normal(&mut rng),
            standard_normal(&mut rng),
            standard_normal(&mut rng),
        ];
        let rot = Rotation3::from_euler_angles(roll + std * d[0], pitch + std * d[1], yaw + std * d[2]);
        out.push(RigidTransform::new(rot.into_inner(), *aligned.translation())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn triplets_has_54_points_with_exact_c9() {
        let model = generate_triplets();
        assert_eq!(model.points.len(), 54);
        assert_eq!(model.symmetry_order, 9);

        // rotation by 2 pi / 9 maps the set onto itself (bijective matching)
        let rot = Rotation3::from_axis_angle(
            &Vector3::z_axis(),
            2.0 * std::f64::consts::PI / 9.0,
        );
        let mut used = vec![false; 54];
        for p in &model.points {
            let q = rot * p;
            let mut found = false;
            for (i, orig) in model.points.iter().enumerate() {
                if !used[i] && (q - orig).norm() < 1e-9 {
                    used[i] = true;
                    found = true;
                    break;
                }
            }
            assert!(found, "rotated point has no match");
        }

        // centroid on the z-axis
        let centroid: Vector3<f64> = model.points.iter().sum::<Vector3<f64>>() / 54.0;
        assert!(centroid[0].abs() < 1e-12 && centroid[1].abs() < 1e-12);
    }

    #[test]
    fn triplets_is_not_c27() {
        let model = generate_triplets();
        let rot = Rotation3::from_axis_angle(
            &Vector3::z_axis(),
            2.0 * std::f64::consts::PI / 27.0,
        );
        let q = rot * model.points[0];
        let nearest = model
            .points
            .iter()
            .map(|p| (q - p).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest > 1e-3);
    }

    #[test]
    fn centriole_default_count_and_bounds() {
        let geo = CentrioleGeometry::default();
        let model = generate_centriole(2000, 7).unwrap();
        assert_eq!(model.points.len(), 2000);
        let r_max = geo.bottom_radius + geo.tube_radius + 1e-12;
        let z_max = geo.length / 2.0 + geo.tube_radius + 1e-12;
        for p in &model.points {
            let radial = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(radial <= r_max, "radial {radial}");
            assert!(p[2].abs() <= z_max, "z {}", p[2]);
        }
        assert!(generate_centriole(10, 7).is_err());
    }

    #[test]
    fn centriole_angular_density_is_uniform_over_nine_sectors() {
        let model = generate_centriole(18_000, 11).unwrap();
        // the sampling density is C9-symmetric, so ANY partition into 9
        // equal angular sectors must be uniform in expectation
        let sector = 2.0 * std::f64::consts::PI / 9.0;
        let mut counts = [0usize; 9];
        for p in &model.points {
            let angle = p[1].atan2(p[0]) + std::f64::consts::PI; // [0, 2pi)
            let s = ((angle / sector).floor() as usize).min(8);
            counts[s] += 1;
        }
        let n = 18_000f64;
        let expect = n / 9.0;
        // 4 sigma multinomial bound per sector
        let bound = 4.0 * (n * (1.0 / 9.0) * (8.0 / 9.0)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < bound,
                "sector {i}: {c} vs {expect} +- {bound}"
            );
        }
    }

    #[test]
    fn subsampling_rules() {
        let pts: Vec<Vector3<f64>> = (0..100)
            .map(|i| Vector3::new(i as f64, 0.5 * i as f64, -(i as f64)))
            .collect();
        // identity subsample
        let m = model_from_points("m", pts.clone(), 100, 1).unwrap();
        assert_eq!(m.points, pts);
        assert_eq!(m.symmetry_order, 1);
        // strict subsample: distinct source points, bbox containment
        let m = model_from_points("m", pts.clone(), 40, 1).unwrap();
        assert_eq!(m.points.len(), 40);
        let mut seen = std::collections::HashSet::new();
        for p in &m.points {
            assert!(pts.contains(p));
            assert!(seen.insert(format!("{:?}", p)), "duplicate subsample");
        }
        assert!(model_from_points("m", pts, 200, 1).is_err());
    }

    #[test]
    fn zero_noise_zero_outliers_gives_exact_rotated_copies() {
        let model = generate_triplets();
        let spec = AcquisitionSpec {
            sigma: 0.0,
            sigma_spatial_std: 0.0,
            outlier_fraction: 0.0,
            n_views: 3,
            rng_seed: 21,
            ..AcquisitionSpec::new(0.0, 1.0, 3, 21)
        };
        let (clouds, truths) = simulate_views(&model, &spec).unwrap();
        for (cloud, truth) in clouds.iter().zip(&truths) {
            for (obs, clean) in cloud.points().iter().zip(&model.points) {
                assert_eq!(*obs, truth.apply(clean));
            }
            for cov in cloud.noise_covs() {
                assert!(cov.is_zero());
            }
        }
    }

    #[test]
    fn isotropic_spec_yields_equal_isotropic_covariances() {
        let model = generate_triplets();
        let spec = AcquisitionSpec {
            sigma: 0.02,
            sigma_spatial_std: 0.0,
            outlier_fraction: 0.0,
            ..AcquisitionSpec::new(0.02, 1.0, 2, 5)
        };
        let (clouds, _) = simulate_views(&model, &spec).unwrap();
        for cloud in &clouds {
            for cov in cloud.noise_covs() {
                let m = cov.matrix();
                assert_relative_eq!(m[(0, 0)], 0.02, epsilon = 1e-15);
                assert_relative_eq!(m[(1, 1)], 0.02, epsilon = 1e-15);
                assert_relative_eq!(m[(2, 2)], 0.02, epsilon = 1e-15);
                assert_eq!(m[(0, 1)], 0.0);
            }
        }
    }

    #[test]
    fn outlier_count_is_exact() {
        let model = generate_centriole(2000, 3).unwrap();
        let spec = AcquisitionSpec::new(0.01, 5.0, 1, 9);
        assert_eq!(outlier_indices(model.points.len(), &spec, 0).len(), 200);

        // with zero noise, replaced points are exactly the flagged indices
        let spec0 = AcquisitionSpec {
            sigma: 0.0,
            sigma_spatial_std: 0.0,
            ..AcquisitionSpec::new(0.0, 1.0, 1, 9)
        };
        let (clouds, truths) = simulate_views(&model, &spec0).unwrap();
        let flagged: std::collections::HashSet<usize> =
            outlier_indices(model.points.len(), &spec0, 0).into_iter().collect();
        assert_eq!(flagged.len(), 200);
        let mut mismatches = 0;
        for (i, (obs, clean)) in clouds[0]
            .points()
            .iter()
            .zip(&model.points)
            .enumerate()
        {
            let moved = (*obs - truths[0].apply(clean)).norm() > 1e-12;
            if moved != flagged.contains(&i) {
                mismatches += 1;
            }
        }
        // an outlier draw can land on the clean position only with
        // probability zero
        assert_eq!(mismatches, 0);
    }

    #[test]
    fn noise_moments_match_recorded_covariance() {
        // replicate one view many times with different seeds; the first
        // non-outlier point's displacement should follow its recorded
        // covariance
        let model = generate_triplets();
        let base = AcquisitionSpec {
            sigma_spatial_std: 0.0, // keep the covariance identical across seeds
            outlier_fraction: 0.0,
            ..AcquisitionSpec::new(0.05, 4.0, 1, 0)
        };
        let n = 30_000;
        let mut sum = Vector3::zeros();
        let mut sum_sq = Vector3::zeros();
        for seed in 0..n {
            let spec = AcquisitionSpec {
                rng_seed: seed as u64,
                ..base.clone()
            };
            let (clouds, truths) = simulate_views(&model, &spec).unwrap();
            let d = clouds[0].points()[0] - truths[0].apply(&model.points[0]);
            sum += d;
            sum_sq += d.component_mul(&d);
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = sum_sq / nf - mean.component_mul(&mean);
        let expected = [0.05, 0.05, 0.20];
        for d in 0..3 {
            let se_mean = (expected[d] / nf).sqrt();
            assert!(mean[d].abs() < 4.0 * se_mean, "mean[{d}] = {}", mean[d]);
            let se_var = expected[d] * (2.0 / nf).sqrt();
            assert!(
                (var[d] - expected[d]).abs() < 4.0 * se_var,
                "var[{d}] = {} vs {}",
                var[d],
                expected[d]
            );
        }
    }

    #[test]
    fn perturbation_zero_std_gives_zero_metric() {
        let model = generate_triplets();
        let spec = AcquisitionSpec::new(0.01, 1.0, 4, 13);
        let (_, truths) = simulate_views(&model, &spec).unwrap();
        let init = perturb_rotations(&truths, 0.0, 99).unwrap();
        let rep = crate::metrics::pairwise_error(&init, &truths, 9).unwrap();
        assert!(rep.mean_deg < 1e-5, "mean {}", rep.mean_deg);
    }

    #[test]
    fn perturbation_scale_is_sane_and_reproducible() {
        let model = generate_triplets();
        let spec = AcquisitionSpec::new(0.01, 1.0, 6, 17);
        let (_, truths) = simulate_views(&model, &spec).unwrap();
        let a = perturb_rotations(&truths, 30.0, 7).unwrap();
        let b = perturb_rotations(&truths, 30.0, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.rotation(), y.rotation());
        }
        // initialization error should be of the order of the perturbation:
        // clearly nonzero, clearly below a half turn
        let rep = crate::metrics::pairwise_error(&a, &truths, 1).unwrap();
        assert!(
            rep.mean_deg > 5.0 && rep.mean_deg < 85.0,
            "mean init error {}",
            rep.mean_deg
        );
    }
}
