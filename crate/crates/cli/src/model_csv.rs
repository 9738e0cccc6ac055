//! Tabular export of fitted models and transforms.
//!
//! - mixture: `mu_x,mu_y,mu_z,sigma2,weight`, one row per component; the
//!   outlier mass is `1 - sum(weight)` and the hull volume travels in the run
//!   manifest.
//! - transforms: 12 values per row, row-major rotation then translation.
//! - trace: `iteration,log_likelihood`.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use anireg_core::em::LikelihoodTrace;
use anireg_core::{GmmModel, RigidTransform};

use crate::error::{PipelineError, Result};

const GMM_HEADER: &str = "mu_x,mu_y,mu_z,sigma2,weight";
const TRANSFORM_HEADER: &str = "r11,r12,r13,r21,r22,r23,r31,r32,r33,tx,ty,tz";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> PipelineError {
    PipelineError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn numeric_rows(path: &Path, text: &str, header: &str, n_fields: usize) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file (header required)"))?;
    if first.trim() != header {
        return Err(parse_err(path, 1, format!("expected header '{header}'")));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_fields {
            return Err(parse_err(
                path,
                idx + 1,
                format!("expected {n_fields} fields, got {}", fields.len()),
            ));
        }
        let mut row = Vec::with_capacity(n_fields);
        for f in fields {
            row.push(
                f.parse()
                    .map_err(|_| parse_err(path, idx + 1, format!("bad number '{f}'")))?,
            );
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn export_gmm(gmm: &GmmModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(GMM_HEADER);
    out.push('\n');
    for k in 0..gmm.n_components() {
        let m = gmm.means[k];
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m[0], m[1], m[2], gmm.variances[k], gmm.weights[k]
        ));
    }
    std::fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}

/// Rebuilds the mixture; the outlier weight is recovered as the missing mass
/// and the hull volume must be supplied (it lives in the manifest, not the
/// CSV).
pub fn parse_gmm(path: impl AsRef<Path>, hull_volume: f64) -> Result<GmmModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let rows = numeric_rows(path, &text, GMM_HEADER, 5)?;
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no components"));
    }
    let mut means = Vec::with_capacity(rows.len());
    let mut variances = Vec::with_capacity(rows.len());
    let mut weights = Vec::with_capacity(rows.len() + 1);
    for r in &rows {
        means.push(Vector3::new(r[0], r[1], r[2]));
        variances.push(r[3]);
        weights.push(r[4]);
    }
    let sum: f64 = weights.iter().sum();
    weights.push((1.0 - sum).max(0.0));
    Ok(GmmModel::new(means, variances, weights, hull_volume)?)
}

pub fn export_transforms(transforms: &[RigidTransform], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(TRANSFORM_HEADER);
    out.push('\n');
    for t in transforms {
        let r = t.rotation();
        let tr = t.translation();
        let vals: Vec<String> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| format!("{}", r[(i, j)]))
            .chain((0..3).map(|d| format!("{}", tr[d])))
            .collect();
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}

pub fn parse_transforms(path: impl AsRef<Path>) -> Result<Vec<RigidTransform>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let rows = numeric_rows(path, &text, TRANSFORM_HEADER, 12)?;
    let mut out = Vec::with_capacity(rows.len());
    for r in &rows {
        let rot = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        let tr = Vector3::new(r[9], r[10], r[11]);
        out.push(RigidTransform::new(rot, tr)?);
    }
    Ok(out)
}

pub fn export_trace(trace: &LikelihoodTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iteration,log_likelihood\n");
    for (i, v) in trace.values.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}
