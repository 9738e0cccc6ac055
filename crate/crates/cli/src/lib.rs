//! User-facing pipeline: file formats, the cleaning postprocess, experiment
//! orchestration, and run manifests. The `anireg` binary is a thin layer
//! over this library.

pub mod clean;
pub mod cloud_csv;
pub mod error;
pub mod manifest;
pub mod model_csv;
pub mod ply;
pub mod sweep;

pub use error::{PipelineError, Result};

/// Environment variable that bounds the worker pool used for sweeps and the
/// per-point parallelism inside the engine.
pub const WORKERS_ENV: &str = "ANIREG_WORKERS";

/// Applies `ANIREG_WORKERS` to the global rayon pool; call once at startup.
pub fn init_workers() {
    if let Ok(value) = std::env::var(WORKERS_ENV) {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                // ignore the error if a pool already exists (e.g. in tests)
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
