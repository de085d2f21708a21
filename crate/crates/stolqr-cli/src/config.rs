//! Run configuration: one JSON file drives every subcommand.
//!
//! Matrices are row-major nested arrays.  Unknown keys are rejected so that
//! a typo cannot silently fall back to a default.  Symmetric slots (`Sigma`,
//! `Q`, `R`, `Sigma_d`, `x0_cov`) are symmetrized as `(S + S')/2` after
//! shape validation.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use stolqr::datagen::{BaseInput, ExplorationConfig, ExplorationKind, NoiseKind};
use stolqr::matcore::SymMatrix;
use stolqr::sdpcore::{DEFAULT_MAX_ITER, DEFAULT_TOL_FEAS, DEFAULT_TOL_GAP};
use stolqr::sysmodel::StochasticSystem;
use stolqr::{Error, Result};

/// Top-level configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Plant, cost, and noise description.
    pub system: SystemSpec,
    /// Data-collection shape; required by `model-free` and the experiments.
    #[serde(default)]
    pub data: Option<DataSpec>,
    /// SDP solver tolerances.
    #[serde(default)]
    pub solver: SolverSpec,
    /// Experiment grid; required by `exp-residuals` / `exp-trajectories`.
    #[serde(default)]
    pub experiment: Option<ExperimentSpec>,
}

/// System block: dynamics, noise covariances, cost weights, initial law.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    /// Multiplicative-noise channels `(A_l, B_l)`.
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    /// Common variance of the channel noises.
    pub sigma: f64,
    /// Additive-noise covariance.
    #[serde(rename = "Sigma")]
    pub sigma_w: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub alpha: f64,
    pub x0_mean: Vec<f64>,
    pub x0_cov: Vec<Vec<f64>>,
}

/// One multiplicative-noise channel.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

/// Data block: rollout shape, exploration covariance, master seed.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(rename = "N")]
    pub n_rollouts: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "Sigma_d")]
    pub sigma_d: Vec<Vec<f64>>,
    pub seed: u64,
    #[serde(default)]
    pub exploration: ExplorationSpec,
}

/// Exploration dither shape (`{"kind": "gaussian"}` when omitted).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum ExplorationSpec {
    #[default]
    Gaussian,
    Sinusoid {
        freqs: Vec<f64>,
        amps: Vec<f64>,
    },
}

/// Solver block with library defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: u32,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            tol_feas: DEFAULT_TOL_FEAS,
            tol_gap: DEFAULT_TOL_GAP,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

fn default_horizon() -> usize {
    40
}

/// Experiment block for the CSV-producing subcommands.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// `(N, K)` grid points, e.g. `[[10, 9], [20, 9]]`.
    pub grid: Vec<(usize, usize)>,
    /// Repetitions per grid point.
    pub reps: usize,
    /// Default output directory (overridden by `--out`).
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Closed-loop steps appended by `exp-trajectories`.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Testing override: skip the model-free solve in `exp-trajectories`
    /// and continue the rollouts under this gain instead.
    #[serde(default)]
    pub force_gain: Option<Vec<Vec<f64>>>,
}

/// Reads and deserializes a config file; all failures are configuration
/// errors (exit code 2), with serde's line/column diagnostics passed along.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn parse_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::InvalidConfig(format!("{what}: matrix is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig(format!(
            "{what}: ragged rows (expected {ncols} entries per row)"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn parse_symmetric(rows: &[Vec<f64>], what: &str) -> Result<SymMatrix> {
    let m = parse_matrix(rows, what)?;
    if !m.is_square() {
        return Err(Error::InvalidConfig(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(SymMatrix::new(m))
}

impl SystemSpec {
    /// Builds the validated system (dimension and definiteness checks run
    /// in [`StochasticSystem::new`]).
    pub fn build(&self) -> Result<StochasticSystem> {
        let a = parse_matrix(&self.a, "system.A")?;
        let b = parse_matrix(&self.b, "system.B")?;
        let channels = self
            .channels
            .iter()
            .enumerate()
            .map(|(l, ch)| {
                Ok((
                    parse_matrix(&ch.a, &format!("system.channels[{l}].A"))?,
                    parse_matrix(&ch.b, &format!("system.channels[{l}].B"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        StochasticSystem::new(
            a,
            b,
            channels,
            self.sigma,
            parse_symmetric(&self.sigma_w, "system.Sigma")?,
            parse_symmetric(&self.q, "system.Q")?,
            parse_symmetric(&self.r, "system.R")?,
            self.alpha,
            DVector::from_column_slice(&self.x0_mean),
            parse_symmetric(&self.x0_cov, "system.x0_cov")?,
        )
    }
}

impl DataSpec {
    /// Exploration setup with the effective seed (CLI `--seed` wins).
    pub fn exploration(&self, seed_override: Option<u64>) -> Result<ExplorationConfig> {
        let kind = match &self.exploration {
            ExplorationSpec::Gaussian => ExplorationKind::Gaussian,
            ExplorationSpec::Sinusoid { freqs, amps } => ExplorationKind::Sinusoid {
                freqs: freqs.clone(),
                amps: amps.clone(),
            },
        };
        Ok(ExplorationConfig {
            sigma_d: parse_symmetric(&self.sigma_d, "data.Sigma_d")?,
            base_input: BaseInput::Zero,
            kind,
            noise: NoiseKind::Gaussian,
            seed: seed_override.unwrap_or(self.seed),
        })
    }
}

impl RunConfig {
    /// The data block, or a configuration error naming the missing section.
    pub fn data(&self) -> Result<&DataSpec> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing `data` section".into()))
    }

    /// The experiment block, or a configuration error naming the section.
    pub fn experiment(&self) -> Result<&ExperimentSpec> {
        self.experiment
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing `experiment` section".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"{
            "system": {
                "A": [[0.5]], "B": [[1.0]], "sigma": 1.0,
                "Sigma": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
                "alpha": 0.9, "x0_mean": [0.0], "x0_cov": [[1.0]]
            }
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert!(cfg.data.is_none());
        assert_eq!(cfg.solver.tol_feas, DEFAULT_TOL_FEAS);
        assert_eq!(cfg.solver.max_iter, DEFAULT_MAX_ITER);
        let sys = cfg.system.build().unwrap();
        assert_eq!((sys.n(), sys.m()), (1, 1));
        assert!(cfg.data().is_err() && cfg.experiment().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{
            "system": {
                "A": [[0.5]], "B": [[1.0]], "sigma": 1.0,
                "Sigma": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
                "alpha": 0.9, "x0_mean": [0.0], "x0_cov": [[1.0]],
                "extra": 3
            }
        }"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn ragged_matrices_are_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        let err = parse_matrix(&rows, "t").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn seed_override_wins() {
        let data = DataSpec {
            n_rollouts: 2,
            k: 5,
            sigma_d: vec![vec![1.0]],
            seed: 7,
            exploration: ExplorationSpec::Gaussian,
        };
        assert_eq!(data.exploration(None).unwrap().seed, 7);
        assert_eq!(data.exploration(Some(99)).unwrap().seed, 99);
    }
}
