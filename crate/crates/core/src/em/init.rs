//! Mixture initialization from coarsely aligned points.

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};
use crate::types::{GmmModel, ObservedCloud, RegistrationConfig, RigidTransform};

pub(super) const STREAM_INIT: u64 = 0x11;

/// Axis-aligned bounding box statistics of the transformed points.
pub(crate) struct Bounds {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl Bounds {
    pub fn of_transformed(clouds: &[ObservedCloud], transforms: &[RigidTransform]) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (cloud, t) in clouds.iter().zip(transforms) {
            for p in cloud.points() {
                let q = t.apply(p);
                for d in 0..3 {
                    lo[d] = lo[d].min(q[d]);
                    hi[d] = hi[d].max(q[d]);
                }
            }
        }
        Bounds { lo, hi }
    }

    pub fn diagonal(&self) -> f64 {
        (self.hi - self.lo).norm()
    }

    pub fn volume(&self) -> f64 {
        let side = self.hi - self.lo;
        (side[0] * side[1] * side[2]).max(f64::MIN_POSITIVE)
    }
}

/// Initial mixture: means are `K` distinct transformed points chosen
/// uniformly without replacement; all variances start at
/// `(bounding-box diagonal / 2)^2`; component weights are equal with
/// `p_{K+1} / (K p_1) = outlier_fraction`; the outlier volume is the
/// bounding box of the transformed points.
pub fn gmm_init(
    clouds: &[ObservedCloud],
    transforms: &[RigidTransform],
    config: &RegistrationConfig,
    variance_floor: f64,
) -> Result<GmmModel> {
    let k = config.n_components;
    let all: Vec<Vector3<f64>> = clouds
        .iter()
        .zip(transforms)
        .flat_map(|(cloud, t)| cloud.points().iter().map(move |p| t.apply(p)))
        .collect();
    if all.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            got: all.len(),
        });
    }

    let mut rng = rng_from(derive_seed(config.rng_seed, &[STREAM_INIT]));
    let mut idx: Vec<usize> = (0..all.len()).collect();
    for i in 0..k {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    let means: Vec<Vector3<f64>> = idx[..k].iter().map(|&i| all[i]).collect();

    let bounds = Bounds::of_transformed(clouds, transforms);
    let sigma2 = (bounds.diagonal() / 2.0).powi(2).max(variance_floor);

    let gamma = config.outlier_fraction;
    let p_component = 1.0 / (k as f64 * (1.0 + gamma));
    let p_outlier = gamma / (1.0 + gamma);
    let mut weights = vec![p_component; k];
    weights.push(p_outlier);
    // common rescale keeps the outlier ratio intact and a zero outlier
    // weight exactly zero
    let sum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= sum;
    }

    GmmModel::new(means, vec![sigma2; k], weights, bounds.volume())
}
