//! TOML experiment configuration.
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use pwa_mpc::mpc::{MpcConfig, Norm};
use pwa_mpc::policy::FitOptions;
use pwa_mpc::pwa::PwaSystem;
use pwa_mpc::trainer::TrainOptions;
use serde::Deserialize;

use crate::Failure;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: PathBuf,
    pub output_dir: PathBuf,
    pub mpc: MpcSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    /// Identity when omitted.
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub p: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_norms")]
    pub norms: [Norm; 3],
    pub tightening_radius: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// Initial samples per region; one entry per region.
    pub seed_counts: Vec<usize>,
    pub seed: u64,
    pub iteration_cap: usize,
    pub accuracy_threshold: f64,
    pub scorer_cap: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            seed_counts: Vec::new(),
            seed: 1,
            iteration_cap: 200,
            accuracy_threshold: fit.accuracy_threshold,
            scorer_cap: fit.scorer_cap,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Spacing of the open-loop grid.
    pub grid_step: f64,
    pub closed_loop_runs: usize,
    pub stop_tol: f64,
    pub step_cap: usize,
    /// Horizons for `sweep-horizons`.
    pub horizons: Vec<usize>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            grid_step: 0.1,
            closed_loop_runs: 1000,
            stop_tol: pwa_mpc::control::DEFAULT_STOP_TOL,
            step_cap: pwa_mpc::control::DEFAULT_STEP_CAP,
            horizons: Vec::new(),
        }
    }
}

fn default_norms() -> [Norm; 3] {
    [Norm::One; 3]
}

fn matrix(rows: &Option<Vec<Vec<f64>>>, dim: usize, name: &str) -> Result<DMatrix<f64>, Failure> {
    let Some(rows) = rows else {
        return Ok(DMatrix::identity(dim, dim));
    };
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(Failure::Usage(format!(
            "{name} is not a rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.system = base.join(&cfg.system);
        cfg.output_dir = base.join(&cfg.output_dir);
        if cfg.mpc.horizon == 0 {
            return Err(Failure::Usage("horizon must be at least 1".into()));
        }
        if !(cfg.mpc.tightening_radius >= 0.0) {
            return Err(Failure::Usage(
                "tightening_radius must be nonnegative".into(),
            ));
        }
        if !cfg.system.is_file() {
            return Err(Failure::Usage(format!(
                "system file {} does not exist",
                cfg.system.display()
            )));
        }
        Ok(cfg)
    }

    pub fn load_system(&self) -> Result<PwaSystem, Failure> {
        Ok(PwaSystem::load(&self.system)?)
    }

    pub fn mpc_config(&self, sys: &PwaSystem) -> Result<MpcConfig, Failure> {
        let cfg = MpcConfig::new(
            self.mpc.horizon,
            matrix(&self.mpc.q, sys.n(), "q")?,
            matrix(&self.mpc.r, sys.m(), "r")?,
            matrix(&self.mpc.p, sys.n(), "p")?,
            self.mpc.norms,
            self.mpc.tightening_radius,
        )
        .map_err(|e| Failure::Usage(e.to_string()))?;
        cfg.check(sys.n(), sys.m())
            .map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Per-region initial sample counts; defaults to 45 per region.
    pub fn seed_counts(&self, sys: &PwaSystem) -> Result<Vec<usize>, Failure> {
        let counts = &self.training.seed_counts;
        if counts.is_empty() {
            return Ok(vec![45; sys.num_regions()]);
        }
        if counts.len() != sys.num_regions() {
            return Err(Failure::Usage(format!(
                "seed_counts has {} entries but the system has {} regions",
                counts.len(),
                sys.num_regions()
            )));
        }
        Ok(counts.clone())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            iteration_cap: self.training.iteration_cap,
            fit: FitOptions {
                accuracy_threshold: self.training.accuracy_threshold,
                scorer_cap: self.training.scorer_cap,
                ..FitOptions::default()
            },
            checkpoint_dir: None,
        }
    }
}
