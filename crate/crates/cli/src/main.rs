//! `anireg`: joint registration of multiple 3D point clouds with known
//! per-point anisotropic localization noise.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use anireg_cli::clean::clean_registered_clouds;
use anireg_cli::cloud_csv::{parse_cloud_csv, write_cloud_csv};
use anireg_cli::error::{PipelineError, Result};
use anireg_cli::manifest::RunManifest;
use anireg_cli::model_csv::{
    export_gmm, export_trace, export_transforms, parse_gmm, parse_transforms,
};
use anireg_cli::ply::write_ply;
use anireg_cli::sweep::{run_sweep, ModelChoice, RegistrationTemplate, SweepSpec};
use anireg_core::em::{run_registration, resolve_variance_floor};
use anireg_core::metrics::pairwise_error;
use anireg_core::simulation::{simulate_views, AcquisitionSpec};
use anireg_core::types::DEFAULT_DENSE_BUDGET;
use anireg_core::{ObservedCloud, RegistrationConfig, RegistrationMode, RigidTransform};

#[derive(Parser)]
#[command(
    name = "anireg",
    about = "Multiview point-cloud registration under anisotropic localization noise",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RegistrationFlags {
    /// Number of mixture components K.
    #[arg(long)]
    components: Option<usize>,
    /// Outlier prior ratio gamma = p_{K+1} / (K p_1).
    #[arg(long, default_value_t = 0.1)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    rel_loglik_tol: f64,
    /// Engine: noise-aware stochastic EM or the classic baseline.
    #[arg(long, default_value = "proposed-sage", value_parser = parse_mode)]
    mode: RegistrationMode,
    /// Posterior samples per (point, component); >1 averages them.
    #[arg(long, default_value_t = 1)]
    samples_per_point: usize,
    /// Smallest allowed component variance; default (1e-4 * bbox diagonal)^2.
    #[arg(long)]
    variance_floor: Option<f64>,
    /// Keep mixture weights at their initial values.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    fix_weights: bool,
    /// Dense (point x component) budget before responsibilities below 1e-12
    /// are truncated.
    #[arg(long, default_value_t = DEFAULT_DENSE_BUDGET)]
    dense_budget: usize,
}

fn parse_mode(s: &str) -> std::result::Result<RegistrationMode, String> {
    match s {
        "proposed-sage" | "proposed_sage" => Ok(RegistrationMode::ProposedSage),
        "baseline-jrmpc" | "baseline_jrmpc" => Ok(RegistrationMode::BaselineJrmpc),
        other => Err(format!(
            "unknown mode '{other}' (expected proposed-sage or baseline-jrmpc)"
        )),
    }
}

#[derive(Args, Clone)]
struct AcquisitionFlags {
    /// Base noise level (a variance unless --sigma-as-std).
    #[arg(long)]
    sigma: f64,
    /// Anisotropy ratio on the axial (z) entry.
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Std of the per-point noise-level draw; default 0.2 * sigma.
    #[arg(long)]
    sigma_spatial_std: Option<f64>,
    #[arg(long, default_value_t = 0.10)]
    outlier_fraction: f64,
    /// Number of simulated views M.
    #[arg(long, default_value_t = 5)]
    views: usize,
    /// Interpret noise levels as standard deviations instead of variances.
    #[arg(long, default_value_t = false)]
    sigma_as_std: bool,
}

impl AcquisitionFlags {
    fn spec(&self, seed: u64) -> AcquisitionSpec {
        AcquisitionSpec {
            sigma: self.sigma,
            r: self.r,
            sigma_spatial_std: self.sigma_spatial_std.unwrap_or(0.2 * self.sigma),
            outlier_fraction: self.outlier_fraction,
            n_views: self.views,
            rng_seed: seed,
            sigma_as_std: self.sigma_as_std,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy multiview acquisitions of a ground-truth model.
    Simulate {
        /// triplets | centriole | path to a PLY/CSV point file.
        #[arg(long)]
        model: String,
        /// Points for generated/subsampled models.
        #[arg(long, default_value_t = 2000)]
        n_points: usize,
        #[command(flatten)]
        acquisition: AcquisitionFlags,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Jointly register cloud CSVs; writes transforms, mixture and trace.
    Register {
        /// Input cloud CSVs (at least two).
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Optional coarse initial transforms (default: identity).
        #[arg(long)]
        init_transforms: Option<PathBuf>,
        #[command(flatten)]
        registration: RegistrationFlags,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Symmetry-aware pairwise rotation errors of estimated vs true transforms.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 1)]
        symmetry_order: usize,
        /// Optional CSV output (long form: i,j,error_deg).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop outlier-class points and points owned by inflated components.
    Clean {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        transforms: PathBuf,
        #[arg(long)]
        gmm: PathBuf,
        /// Outlier-class volume; default: bounding box of the transformed
        /// inputs (the trained value is recorded in the register manifest).
        #[arg(long)]
        hull_volume: Option<f64>,
        #[arg(long, default_value = "proposed-sage", value_parser = parse_mode)]
        mode: RegistrationMode,
        /// Additionally write cleaned clouds as PLY.
        #[arg(long, default_value_t = false)]
        ply: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full simulate-register-evaluate grid over noise parameters.
    Sweep {
        #[arg(long)]
        model: String,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
        /// Comma-separated anisotropy ratios.
        #[arg(long = "rs", value_delimiter = ',', required = true)]
        rs: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        #[arg(long, default_value_t = 5)]
        views: usize,
        /// Mixture re-initializations per run; the best likelihood wins.
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long, default_value_t = 2000)]
        n_points: usize,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long, default_value_t = 0.10)]
        outlier_fraction: f64,
        /// Per-point noise-level std as a fraction of sigma.
        #[arg(long, default_value_t = 0.2)]
        spatial_std_factor: f64,
        #[arg(long, default_value_t = 30.0)]
        init_std_deg: f64,
        #[arg(long, default_value_t = false)]
        sigma_as_std: bool,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        rel_loglik_tol: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert artifacts for rendering (mixture means or clouds to PLY).
    Export {
        /// Mixture CSV whose component means become PLY vertices.
        #[arg(long, conflicts_with = "cloud")]
        gmm: Option<PathBuf>,
        /// Cloud CSV whose points become PLY vertices.
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    anireg_cli::init_workers();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn ensure_dir(path: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| PipelineError::io(path, e))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            model,
            n_points,
            acquisition,
            seed,
            out,
        } => {
            ensure_dir(&out)?;
            let started = std::time::Instant::now();
            let choice = ModelChoice::parse(&model);
            let ground_truth = choice.build(n_points, anireg_core::seed::derive_seed(seed, &[0x70]))?;
            let spec = acquisition.spec(seed);
            let (clouds, truths) = simulate_views(&ground_truth, &spec)?;

            let mut manifest = RunManifest::new(
                "simulate",
                seed,
                serde_json::json!({
                    "model": choice.label(),
                    "n_points": ground_truth.points.len(),
                    "symmetry_order": ground_truth.symmetry_order,
                    "sigma": spec.sigma,
                    "r": spec.r,
                    "sigma_spatial_std": spec.sigma_spatial_std,
                    "outlier_fraction": spec.outlier_fraction,
                    "n_views": spec.n_views,
                    "sigma_as_std": spec.sigma_as_std,
                }),
            );
            if let ModelChoice::Mesh(path) = &choice {
                manifest.add_input(path)?;
            }
            for cloud in &clouds {
                let path = out.join(format!("{}.csv", cloud.id));
                write_cloud_csv(&path, cloud)?;
                manifest.add_output(&path);
            }
            let truth_path = out.join("true_transforms.csv");
            export_transforms(&truths, &truth_path)?;
            manifest.add_output(&truth_path);
            let model_path = out.join("model.csv");
            write_cloud_csv(
                &model_path,
                &ObservedCloud::new(
                    "model",
                    ground_truth.points.clone(),
                    vec![anireg_core::CovMat3::zero(); ground_truth.points.len()],
                )?,
            )?;
            manifest.add_output(&model_path);
            manifest.timing.total_seconds = started.elapsed().as_secs_f64();
            manifest.write(out.join("manifest.json"))?;
            println!(
                "simulated {} views of {} ({} points) into {}",
                clouds.len(),
                choice.label(),
                ground_truth.points.len(),
                out.display()
            );
            Ok(())
        }

        Command::Register {
            inputs,
            init_transforms,
            registration,
            seed,
            out,
        } => {
            ensure_dir(&out)?;
            let started = std::time::Instant::now();
            let mut clouds = Vec::with_capacity(inputs.len());
            for path in &inputs {
                clouds.push(parse_cloud_csv(path)?);
            }
            let init = match &init_transforms {
                Some(path) => parse_transforms(path)?,
                None => vec![RigidTransform::identity(); clouds.len()],
            };
            let components = registration
                .components
                .ok_or_else(|| PipelineError::Validation("--components is required".into()))?;
            let mut config = RegistrationConfig::new(components, seed, registration.mode);
            config.outlier_fraction = registration.outlier_fraction;
            config.max_iters = registration.max_iters;
            config.rel_loglik_tol = registration.rel_loglik_tol;
            config.samples_per_point = registration.samples_per_point;
            config.variance_floor = registration.variance_floor;
            config.fix_weights = registration.fix_weights;
            config.dense_budget = registration.dense_budget;
            config.validate()?;

            let resolved_floor = resolve_variance_floor(&clouds, &init, &config);
            let result = run_registration(&clouds, &init, &config)?;

            let mut manifest = RunManifest::new(
                "register",
                seed,
                serde_json::json!({
                    "components": components,
                    "outlier_fraction": config.outlier_fraction,
                    "max_iters": config.max_iters,
                    "rel_loglik_tol": config.rel_loglik_tol,
                    "mode": config.mode.as_str(),
                    "samples_per_point": config.samples_per_point,
                    "variance_floor": resolved_floor,
                    "fix_weights": config.fix_weights,
                    "dense_budget": config.dense_budget,
                }),
            );
            for path in &inputs {
                manifest.add_input(path)?;
            }
            if let Some(path) = &init_transforms {
                manifest.add_input(path)?;
            }

            let transforms_path = out.join("transforms.csv");
            export_transforms(&result.transforms, &transforms_path)?;
            let gmm_path = out.join("gmm.csv");
            export_gmm(&result.gmm, &gmm_path)?;
            let trace_path = out.join("trace.csv");
            export_trace(&result.trace, &trace_path)?;
            for p in [&transforms_path, &gmm_path, &trace_path] {
                manifest.add_output(p);
            }
            manifest.extra = serde_json::json!({
                "iterations": result.iterations,
                "converged": result.converged,
                "final_log_likelihood": result.final_log_likelihood(),
                "hull_volume": result.gmm.hull_volume,
                "outlier_weight": result.gmm.outlier_weight(),
            });
            manifest.timing.total_seconds = started.elapsed().as_secs_f64();
            manifest.write(out.join("manifest.json"))?;
            println!(
                "{} iterations ({}), log-likelihood {:.6}",
                result.iterations,
                if result.converged { "converged" } else { "iteration cap" },
                result.final_log_likelihood()
            );
            Ok(())
        }

        Command::Evaluate {
            est,
            truth,
            symmetry_order,
            out,
        } => {
            let est_t = parse_transforms(&est)?;
            let truth_t = parse_transforms(&truth)?;
            let report = pairwise_error(&est_t, &truth_t, symmetry_order)?;
            println!(
                "mean pairwise rotation error: {:.6} deg (std {:.6}, {} views, symmetry order {})",
                report.mean_deg,
                report.std_deg,
                est_t.len(),
                symmetry_order
            );
            if let Some(path) = out {
                let mut text = String::from("i,j,error_deg\n");
                for i in 0..est_t.len() {
                    for j in (i + 1)..est_t.len() {
                        text.push_str(&format!("{i},{j},{}\n", report.pairwise_deg[i][j]));
                    }
                }
                std::fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
            }
            Ok(())
        }

        Command::Clean {
            inputs,
            transforms,
            gmm,
            hull_volume,
            mode,
            ply,
            out,
        } => {
            ensure_dir(&out)?;
            let started = std::time::Instant::now();
            let mut clouds = Vec::with_capacity(inputs.len());
            for path in &inputs {
                clouds.push(parse_cloud_csv(path)?);
            }
            let transform_list = parse_transforms(&transforms)?;
            if transform_list.len() != clouds.len() {
                return Err(PipelineError::Validation(format!(
                    "{} transforms for {} clouds",
                    transform_list.len(),
                    clouds.len()
                )));
            }
            let volume = hull_volume.unwrap_or_else(|| {
                // fall back to the bounding box of the transformed inputs
                let mut lo = nalgebra::Vector3::repeat(f64::INFINITY);
                let mut hi = nalgebra::Vector3::repeat(f64::NEG_INFINITY);
                for (cloud, t) in clouds.iter().zip(&transform_list) {
                    for p in cloud.points() {
                        let q = t.apply(p);
                        for d in 0..3 {
                            lo[d] = lo[d].min(q[d]);
                            hi[d] = hi[d].max(q[d]);
                        }
                    }
                }
                let side = hi - lo;
                (side[0] * side[1] * side[2]).max(f64::MIN_POSITIVE)
            });
            let mixture = parse_gmm(&gmm, volume)?;
            let cleaned = clean_registered_clouds(&clouds, &transform_list, &mixture, mode)?;

            let mut manifest = RunManifest::new(
                "clean",
                0,
                serde_json::json!({
                    "mode": mode.as_str(),
                    "hull_volume": volume,
                    "ply": ply,
                }),
            );
            for path in inputs.iter().chain([&transforms, &gmm]) {
                manifest.add_input(path)?;
            }
            for c in &cleaned {
                let cloud = ObservedCloud::new(
                    c.id.clone(),
                    c.points.clone(),
                    c.noise_covs.clone(),
                )?;
                let path = out.join(format!("cleaned_{}.csv", c.id));
                write_cloud_csv(&path, &cloud)?;
                manifest.add_output(&path);
                if ply {
                    let ply_path = out.join(format!("cleaned_{}.ply", c.id));
                    write_ply(&ply_path, &c.points)?;
                    manifest.add_output(&ply_path);
                }
                println!("{}: kept {} points", c.id, c.points.len());
            }
            manifest.timing.total_seconds = started.elapsed().as_secs_f64();
            manifest.write(out.join("manifest.json"))?;
            Ok(())
        }

        Command::Sweep {
            model,
            sigmas,
            rs,
            replicates,
            views,
            restarts,
            n_points,
            components,
            outlier_fraction,
            spatial_std_factor,
            init_std_deg,
            sigma_as_std,
            max_iters,
            rel_loglik_tol,
            seed,
            out,
        } => {
            let mut spec = SweepSpec::new(ModelChoice::parse(&model), sigmas, rs, replicates);
            spec.n_views = views;
            spec.restarts = restarts;
            spec.n_points = n_points;
            spec.components = components;
            spec.outlier_fraction = outlier_fraction;
            spec.spatial_std_factor = spatial_std_factor;
            spec.init_std_degrees = init_std_deg;
            spec.sigma_as_std = sigma_as_std;
            let mut template = RegistrationTemplate::default();
            template.max_iters = max_iters;
            template.rel_loglik_tol = rel_loglik_tol;
            let rows = run_sweep(&spec, &template, seed, &out)?;
            let failed = rows.iter().filter(|r| !r.mean_err_deg.is_finite()).count();
            println!(
                "sweep complete: {} rows ({} failed) in {}",
                rows.len(),
                failed,
                out.display()
            );
            Ok(())
        }

        Command::Export { gmm, cloud, out } => {
            match (gmm, cloud) {
                (Some(gmm_path), None) => {
                    let mixture = parse_gmm(&gmm_path, 1.0)?;
                    write_ply(&out, &mixture.means)?;
                    println!("wrote {} component means to {}", mixture.means.len(), out.display());
                }
                (None, Some(cloud_path)) => {
                    let cloud = parse_cloud_csv(&cloud_path)?;
                    write_ply(&out, cloud.points())?;
                    println!("wrote {} points to {}", cloud.len(), out.display());
                }
                _ => {
                    return Err(PipelineError::Validation(
                        "export needs exactly one of --gmm or --cloud".into(),
                    ))
                }
            }
            Ok(())
        }
    }
}
