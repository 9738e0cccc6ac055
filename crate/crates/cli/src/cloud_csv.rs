//! Point-cloud CSV: `x,y,z,sxx,syy,szz[,sxy,sxz,syz]` with a mandatory
//! header. Missing off-diagonal columns default to zero. Floats are written
//! in shortest round-trip form, so write→read is lossless.

use std::path::Path;

use nalgebra::Vector3;

use anireg_core::{CovMat3, ObservedCloud};

use crate::error::{PipelineError, Result};

const HEADER_6: [&str; 6] = ["x", "y", "z", "sxx", "syy", "szz"];
const HEADER_9: [&str; 9] = ["x", "y", "z", "sxx", "syy", "szz", "sxy", "sxz", "syz"];

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> PipelineError {
    PipelineError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn parse_cloud_csv(path: impl AsRef<Path>) -> Result<ObservedCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file (header required)"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let n_cols = if cols == HEADER_6 {
        6
    } else if cols == HEADER_9 {
        9
    } else {
        return Err(parse_err(
            path,
            1,
            format!("expected header '{}' or '{}'", HEADER_6.join(","), HEADER_9.join(",")),
        ));
    };

    let mut points = Vec::new();
    let mut covs = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_cols {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {n_cols} fields, got {}", fields.len()),
            ));
        }
        let mut v = [0.0f64; 9];
        for (i, f) in fields.iter().enumerate() {
            v[i] = f
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad number '{f}'")))?;
        }
        let row = points.len();
        let [x, y, z, sxx, syy, szz, sxy, sxz, syz] = v;
        let cov = CovMat3::from_upper([sxx, sxy, sxz, syy, syz, szz]).map_err(|_| {
            PipelineError::NotPsd {
                path: path.to_path_buf(),
                row,
            }
        })?;
        points.push(Vector3::new(x, y, z));
        covs.push(cov);
    }

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cloud".into());
    Ok(ObservedCloud::new(id, points, covs)?)
}

pub fn write_cloud_csv(path: impl AsRef<Path>, cloud: &ObservedCloud) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&HEADER_9.join(","));
    out.push('\n');
    for (p, cov) in cloud.points().iter().zip(cloud.noise_covs()) {
        let [sxx, sxy, sxz, syy, syz, szz] = cov.upper();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p[0], p[1], p[2], sxx, syy, szz, sxy, sxz, syz
        ));
    }
    std::fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}
