//! Noise-parameter sweeps: simulate, register with restarts in both modes,
//! score with the symmetry-aware metric, and emit a long-form results CSV.
//!
//! Cells run in parallel (bounded by the rayon pool, overridable through the
//! `ANIREG_WORKERS` environment variable) with per-cell seeds derived from
//! the master seed, so the emitted CSV is byte-identical across runs; wall
//! clock per cell goes into the manifest, which is the only
//! non-reproducible artifact.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use anireg_core::em::{run_registration, RegistrationResult};
use anireg_core::metrics::pairwise_error;
use anireg_core::seed::derive_seed;
use anireg_core::simulation::{
    generate_centriole, generate_triplets, model_from_points, perturb_rotations, simulate_views,
    AcquisitionSpec, GroundTruthModel,
};
use anireg_core::{ObservedCloud, RegistrationConfig, RegistrationMode, RigidTransform};

use crate::error::{PipelineError, Result};
use crate::manifest::{CellTiming, RunManifest, Timing};

const STREAM_CELL_SIM: u64 = 0x61;
const STREAM_CELL_INIT: u64 = 0x62;
const STREAM_CELL_RUN: u64 = 0x63;

/// Which ground-truth model a simulation-driven command uses.
#[derive(Debug, Clone, Serialize)]
pub enum ModelChoice {
    Triplets,
    Centriole,
    /// PLY or cloud CSV file; positions only, symmetry order 1.
    Mesh(PathBuf),
}

impl ModelChoice {
    pub fn parse(s: &str) -> ModelChoice {
        match s {
            "triplets" => ModelChoice::Triplets,
            "centriole" => ModelChoice::Centriole,
            other => ModelChoice::Mesh(PathBuf::from(other)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelChoice::Triplets => "triplets".into(),
            ModelChoice::Centriole => "centriole".into(),
            ModelChoice::Mesh(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "mesh".into()),
        }
    }

    /// Default component count: the model size for the small built-in,
    /// paper-scale values otherwise.
    pub fn default_components(&self) -> usize {
        match self {
            ModelChoice::Triplets => 54,
            ModelChoice::Centriole => 1500,
            ModelChoice::Mesh(_) => 2500,
        }
    }

    pub fn build(&self, n_points: usize, seed: u64) -> Result<GroundTruthModel> {
        match self {
            ModelChoice::Triplets => Ok(generate_triplets()),
            ModelChoice::Centriole => Ok(generate_centriole(n_points, seed)?),
            ModelChoice::Mesh(path) => {
                let points = if path.extension().map(|e| e == "ply").unwrap_or(false) {
                    crate::ply::parse_ply(path)?
                } else {
                    crate::cloud_csv::parse_cloud_csv(path)?.points().to_vec()
                };
                let n = n_points.min(points.len());
                Ok(model_from_points(self.label(), points, n, seed)?)
            }
        }
    }
}

/// One sweep: the cross product of noise levels and anisotropy ratios,
/// replicated, run in both modes with best-of-restarts selection.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub model: ModelChoice,
    pub sigmas: Vec<f64>,
    pub rs: Vec<f64>,
    pub replicates: usize,
    pub n_views: usize,
    pub restarts: usize,
    pub n_points: usize,
    pub outlier_fraction: f64,
    /// Spatial noise-level std as a fraction of sigma.
    pub spatial_std_factor: f64,
    pub init_std_degrees: f64,
    pub sigma_as_std: bool,
    pub components: Option<usize>,
}

impl SweepSpec {
    pub fn new(model: ModelChoice, sigmas: Vec<f64>, rs: Vec<f64>, replicates: usize) -> Self {
        SweepSpec {
            model,
            sigmas,
            rs,
            replicates,
            n_views: 5,
            restarts: 5,
            n_points: 2000,
            outlier_fraction: 0.10,
            spatial_std_factor: 0.2,
            init_std_degrees: 30.0,
            sigma_as_std: false,
            components: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(PipelineError::Validation("sigma list is empty".into()));
        }
        if self.rs.is_empty() {
            return Err(PipelineError::Validation("r list is empty".into()));
        }
        if self.replicates == 0 {
            return Err(PipelineError::Validation("replicates must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(PipelineError::Validation("restarts must be >= 1".into()));
        }
        if self.n_views < 2 {
            return Err(PipelineError::Validation("need at least 2 views".into()));
        }
        Ok(())
    }
}

/// One result row of the sweep CSV. Failed cells carry NaN metrics; the
/// error text goes to the manifest.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub model: String,
    pub sigma: f64,
    pub r: f64,
    pub replicate: usize,
    pub mode: RegistrationMode,
    pub mean_err_deg: f64,
    pub std_err_deg: f64,
    pub loglik: f64,
    pub iters: usize,
}

pub const SWEEP_HEADER: &str = "model,sigma,r,replicate,mode,mean_err_deg,std_err_deg,loglik,iters";

pub fn format_rows(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.model,
            row.sigma,
            row.r,
            row.replicate,
            row.mode,
            row.mean_err_deg,
            row.std_err_deg,
            row.loglik,
            row.iters
        ));
    }
    out
}

/// Registration settings shared by every cell (per-cell seeds are derived).
#[derive(Debug, Clone)]
pub struct RegistrationTemplate {
    pub max_iters: usize,
    pub rel_loglik_tol: f64,
    pub samples_per_point: usize,
    pub variance_floor: Option<f64>,
    pub fix_weights: bool,
    pub dense_budget: usize,
}

impl Default for RegistrationTemplate {
    fn default() -> Self {
        let base = RegistrationConfig::new(1, 0, RegistrationMode::ProposedSage);
        RegistrationTemplate {
            max_iters: base.max_iters,
            rel_loglik_tol: base.rel_loglik_tol,
            samples_per_point: base.samples_per_point,
            variance_floor: base.variance_floor,
            fix_weights: base.fix_weights,
            dense_budget: base.dense_budget,
        }
    }
}

impl RegistrationTemplate {
    fn config(&self, components: usize, outlier_fraction: f64, seed: u64, mode: RegistrationMode) -> RegistrationConfig {
        let mut c = RegistrationConfig::new(components, seed, mode);
        c.outlier_fraction = outlier_fraction;
        c.max_iters = self.max_iters;
        c.rel_loglik_tol = self.rel_loglik_tol;
        c.samples_per_point = self.samples_per_point;
        c.variance_floor = self.variance_floor;
        c.fix_weights = self.fix_weights;
        c.dense_budget = self.dense_budget;
        c
    }
}

/// Best-of-restarts registration, selected by final log-likelihood.
pub fn register_with_restarts(
    clouds: &[ObservedCloud],
    init: &[RigidTransform],
    template: &RegistrationTemplate,
    components: usize,
    outlier_fraction: f64,
    mode: RegistrationMode,
    restarts: usize,
    seed: u64,
) -> anireg_core::Result<RegistrationResult> {
    let mut best: Option<RegistrationResult> = None;
    for restart in 0..restarts {
        let config = template.config(
            components,
            outlier_fraction,
            derive_seed(seed, &[restart as u64]),
            mode,
        );
        let result = run_registration(clouds, init, &config)?;
        if best
            .as_ref()
            .map(|b| result.final_log_likelihood() > b.final_log_likelihood())
            .unwrap_or(true)
        {
            best = Some(result);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

struct CellOutcome {
    rows: Vec<SweepRow>,
    timings: Vec<CellTiming>,
    failures: Vec<String>,
}

fn run_cell(
    spec: &SweepSpec,
    template: &RegistrationTemplate,
    model: &GroundTruthModel,
    components: usize,
    seed: u64,
    si: usize,
    ri: usize,
    replicate: usize,
) -> CellOutcome {
    let sigma = spec.sigmas[si];
    let r = spec.rs[ri];
    let cell_seed = derive_seed(seed, &[si as u64, ri as u64, replicate as u64]);
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut failures = Vec::new();

    let acq = AcquisitionSpec {
        sigma,
        r,
        sigma_spatial_std: spec.spatial_std_factor * sigma,
        outlier_fraction: spec.outlier_fraction,
        n_views: spec.n_views,
        rng_seed: derive_seed(cell_seed, &[STREAM_CELL_SIM]),
        sigma_as_std: spec.sigma_as_std,
    };

    let simulated = simulate_views(model, &acq).and_then(|(clouds, truths)| {
        let init = perturb_rotations(
            &truths,
            spec.init_std_degrees,
            derive_seed(cell_seed, &[STREAM_CELL_INIT]),
        )?;
        Ok((clouds, truths, init))
    });
    let (clouds, truths, init) = match simulated {
        Ok(v) => v,
        Err(e) => {
            for mode in [RegistrationMode::ProposedSage, RegistrationMode::BaselineJrmpc] {
                rows.push(failed_row(spec, sigma, r, replicate, mode));
                failures.push(format!(
                    "{} sigma={sigma} r={r} rep={replicate} {mode}: simulation failed: {e}",
                    spec.model.label()
                ));
            }
            return CellOutcome { rows, timings, failures };
        }
    };

    for mode in [RegistrationMode::ProposedSage, RegistrationMode::BaselineJrmpc] {
        let started = std::time::Instant::now();
        let outcome = register_with_restarts(
            &clouds,
            &init,
            template,
            components,
            spec.outlier_fraction,
            mode,
            spec.restarts,
            derive_seed(cell_seed, &[STREAM_CELL_RUN, mode as u64]),
        )
        .and_then(|best| {
            let report = pairwise_error(&best.transforms, &truths, model.symmetry_order)?;
            Ok((best, report))
        });
        let seconds = started.elapsed().as_secs_f64();
        match outcome {
            Ok((best, report)) => {
                rows.push(SweepRow {
                    model: spec.model.label(),
                    sigma,
                    r,
                    replicate,
                    mode,
                    mean_err_deg: report.mean_deg,
                    std_err_deg: report.std_deg,
                    loglik: best.final_log_likelihood(),
                    iters: best.iterations,
                });
            }
            Err(e) => {
                rows.push(failed_row(spec, sigma, r, replicate, mode));
                failures.push(format!(
                    "{} sigma={sigma} r={r} rep={replicate} {mode}: {e}",
                    spec.model.label()
                ));
            }
        }
        timings.push(CellTiming {
            sigma,
            r,
            replicate,
            mode: mode.as_str().into(),
            seconds,
        });
    }
    CellOutcome { rows, timings, failures }
}

fn failed_row(spec: &SweepSpec, sigma: f64, r: f64, replicate: usize, mode: RegistrationMode) -> SweepRow {
    SweepRow {
        model: spec.model.label(),
        sigma,
        r,
        replicate,
        mode,
        mean_err_deg: f64::NAN,
        std_err_deg: f64::NAN,
        loglik: f64::NAN,
        iters: 0,
    }
}

/// Runs the sweep and writes `results.csv` plus `manifest.json` under
/// `out_dir`. Returns the rows for programmatic use.
pub fn run_sweep(
    spec: &SweepSpec,
    template: &RegistrationTemplate,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;

    let started = std::time::Instant::now();
    let model = spec.model.build(spec.n_points, derive_seed(seed, &[0x70]))?;
    let components = spec.components.unwrap_or_else(|| spec.model.default_components());
    if components > model.points.len() * spec.n_views {
        return Err(PipelineError::Validation(format!(
            "{components} components exceed the {} simulated points",
            model.points.len() * spec.n_views
        )));
    }

    let cells: Vec<(usize, usize, usize)> = (0..spec.sigmas.len())
        .flat_map(|si| {
            (0..spec.rs.len())
                .flat_map(move |ri| (0..spec.replicates).map(move |rep| (si, ri, rep)))
        })
        .collect();

    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(si, ri, rep)| run_cell(spec, template, &model, components, seed, si, ri, rep))
        .collect();

    let mut rows = Vec::new();
    let mut timing = Timing::default();
    let mut failures = Vec::new();
    for outcome in outcomes {
        rows.extend(outcome.rows);
        timing.cells.extend(outcome.timings);
        failures.extend(outcome.failures);
    }
    timing.total_seconds = started.elapsed().as_secs_f64();

    let results_path = out_dir.join("results.csv");
    std::fs::write(&results_path, format_rows(&rows))
        .map_err(|e| PipelineError::io(&results_path, e))?;

    let config = serde_json::json!({
        "model": spec.model.label(),
        "sigmas": spec.sigmas,
        "rs": spec.rs,
        "replicates": spec.replicates,
        "n_views": spec.n_views,
        "restarts": spec.restarts,
        "n_points": spec.n_points,
        "outlier_fraction": spec.outlier_fraction,
        "spatial_std_factor": spec.spatial_std_factor,
        "init_std_degrees": spec.init_std_degrees,
        "sigma_as_std": spec.sigma_as_std,
        "components": components,
        "max_iters": template.max_iters,
        "rel_loglik_tol": template.rel_loglik_tol,
        "samples_per_point": template.samples_per_point,
        "variance_floor": template.variance_floor,
        "fix_weights": template.fix_weights,
        "dense_budget": template.dense_budget,
    });
    let mut manifest = RunManifest::new("sweep", seed, config);
    if let ModelChoice::Mesh(path) = &spec.model {
        manifest.add_input(path)?;
    }
    manifest.add_output(&results_path);
    manifest.timing = timing;
    manifest.extra = serde_json::json!({ "failures": failures });
    manifest.write(out_dir.join("manifest.json"))?;

    Ok(rows)
}
