//! Reproducible rollout simulation and dataset collection.
//!
//! The model-free route consumes `N` rollouts of length `K`.  Rollout `i`
//! contributes a regressor matrix `Z_i` (`(n+m) x K`, columns
//! `z_k = (x_k, u_k)` for `k = 0..K-1`) and a successor matrix `Y_i`
//! (`n x K`, columns `x_1..x_K`).  Inputs are a configurable base policy
//! plus exploration noise; each `Z_i` must pass a full-row-rank check, and
//! failed rollouts are re-drawn a bounded number of times.
//!
//! Determinism contract: a dataset is a pure function of
//! `(system, N, K, config)`.  One master seed feeds a counter-based RNG;
//! rollout `i` reads stream `i` (retry `a` of rollout `i` reads stream
//! `a * N + i`), so parallel and serial collection produce bit-identical
//! data.
//!
//! Datasets round-trip through a CSV bundle (one `z_i.csv`/`y_i.csv` pair
//! per rollout plus `meta.json`) with 17 significant digits, enough to
//! restore every `f64` exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::matcore::SymMatrix;
use crate::sysmodel::StochasticSystem;

/// Relative tolerance of the excitation rank check.
pub const RANK_REL_TOL: f64 = 1e-8;
/// Re-draw budget per rollout before giving up.
pub const MAX_RETRIES: u64 = 10;

/// One simulated path: states `x_0..x_K` and inputs `u_0..u_{K-1}`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `K + 1` states.
    pub states: Vec<DVector<f64>>,
    /// `K` inputs.
    pub inputs: Vec<DVector<f64>>,
}

/// Dataset shape and provenance, serialized alongside the samples.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    /// State dimension.
    pub n: usize,
    /// Input dimension.
    pub m: usize,
    /// Rollout length.
    #[serde(rename = "K")]
    pub k: usize,
    /// Number of rollouts.
    #[serde(rename = "N")]
    pub num_rollouts: usize,
    /// Master seed.
    pub seed: u64,
    /// Exploration covariance, row-major.
    #[serde(rename = "Sigma_d")]
    pub sigma_d: Vec<Vec<f64>>,
}

/// The collected rollout data consumed by the model-free SDP.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `N` pairs `(Z_i, Y_i)`.
    pub samples: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// Master seed the dataset was drawn from.
    pub seed: u64,
    /// Shape and exploration metadata.
    pub meta: DatasetMeta,
}

/// Base input applied before exploration noise.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseInput {
    /// `u_k = 0` (pure exploration; no stabilizing controller is assumed).
    Zero,
    /// A constant feedforward input.
    Constant(DVector<f64>),
}

impl BaseInput {
    fn eval(&self, m: usize) -> DVector<f64> {
        match self {
            BaseInput::Zero => DVector::zeros(m),
            BaseInput::Constant(u) => u.clone(),
        }
    }
}

/// Shape of the exploration dither `d_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum ExplorationKind {
    /// `d_k ~ N(0, Sigma_d)`, i.i.d. across `k`.
    Gaussian,
    /// A sum-of-sinusoids dither: component `j` is
    /// `amps[j] * sin(freqs[j] * k + phase_j)` with per-rollout random
    /// phases (drawn once per rollout, uniform on `[0, 2*pi)`), scaled by
    /// the Cholesky factor of `Sigma_d`.
    Sinusoid {
        /// Per-component angular frequencies.
        freqs: Vec<f64>,
        /// Per-component amplitudes.
        amps: Vec<f64>,
    },
}

/// Distribution family of the process noises `v_k^l` and `w_k`.
///
/// Gaussian matches the reference setting; the uniform option (matched mean
/// and covariance) exists for property tests of moment-only claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Standard choice: all noises Gaussian.
    Gaussian,
    /// Zero-mean uniform with the same second moments.
    Uniform,
}

/// Everything [`collect_dataset`] needs besides the system and shape.
#[derive(Debug, Clone)]
pub struct ExplorationConfig {
    /// Exploration covariance, positive definite.
    pub sigma_d: SymMatrix,
    /// Base policy (default zero).
    pub base_input: BaseInput,
    /// Dither shape (default Gaussian).
    pub kind: ExplorationKind,
    /// Process-noise family (default Gaussian).
    pub noise: NoiseKind,
    /// Master seed.
    pub seed: u64,
}

impl ExplorationConfig {
    /// Gaussian exploration with covariance `Sigma_d` and zero base input.
    pub fn gaussian(sigma_d: SymMatrix, seed: u64) -> Self {
        Self {
            sigma_d,
            base_input: BaseInput::Zero,
            kind: ExplorationKind::Gaussian,
            noise: NoiseKind::Gaussian,
            seed,
        }
    }
}

/// Draws a standard-normal vector.
fn std_normal_vec(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Draws a zero-mean, unit-covariance vector of the requested family.
fn unit_noise_vec(rng: &mut ChaCha8Rng, len: usize, kind: NoiseKind) -> DVector<f64> {
    match kind {
        NoiseKind::Gaussian => std_normal_vec(rng, len),
        // Uniform on [-sqrt(3), sqrt(3)] has unit variance.
        NoiseKind::Uniform => {
            let half = 3.0f64.sqrt();
            DVector::from_fn(len, |_, _| rng.random_range(-half..half))
        }
    }
}

/// Draws a zero-mean, unit-variance scalar of the requested family.
fn unit_noise_scalar(rng: &mut ChaCha8Rng, kind: NoiseKind) -> f64 {
    match kind {
        NoiseKind::Gaussian => StandardNormal.sample(rng),
        NoiseKind::Uniform => {
            let half = 3.0f64.sqrt();
            rng.random_range(-half..half)
        }
    }
}

fn chol_factor(s: &SymMatrix, what: &'static str) -> Result<DMatrix<f64>> {
    s.matrix()
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::SingularBlock {
            what,
            min_eig: s.min_eig(),
        })
}

/// Core stepping loop shared by the public simulators.
///
/// Per-step draw order (part of the determinism contract): exploration
/// dither `d_k` (when `explore` is set), then `v_k^1..v_k^M`, then `w_k`.
/// The initial state is drawn first: `x_0 = mu_0 + chol(Sigma_0) * xi`.
#[allow(clippy::too_many_arguments)]
fn simulate_impl(
    sys: &StochasticSystem,
    policy: &dyn Fn(usize, &DVector<f64>) -> DVector<f64>,
    k_steps: usize,
    rng: &mut ChaCha8Rng,
    explore: Option<(&DMatrix<f64>, &ExplorationKind)>,
    noise: NoiseKind,
) -> Result<Trajectory> {
    let chol_x0 = chol_factor(&sys.x0_cov, "x0_cov")?;
    let x0 = &sys.x0_mean + &chol_x0 * std_normal_vec(rng, sys.n());
    step_loop(sys, x0, policy, k_steps, rng, explore, noise)
}

#[allow(clippy::too_many_arguments)]
fn step_loop(
    sys: &StochasticSystem,
    x0: DVector<f64>,
    policy: &dyn Fn(usize, &DVector<f64>) -> DVector<f64>,
    k_steps: usize,
    rng: &mut ChaCha8Rng,
    explore: Option<(&DMatrix<f64>, &ExplorationKind)>,
    noise: NoiseKind,
) -> Result<Trajectory> {
    let n = sys.n();
    let m = sys.m();
    let chol_w = chol_factor(&sys.sigma_w, "Sigma")?;
    let sqrt_sigma = sys.sigma.sqrt();

    let mut x = x0;
    // Sinusoid phases are per-rollout randomness, drawn right after x0.
    let phases: Vec<f64> = match explore {
        Some((_, ExplorationKind::Sinusoid { freqs, .. })) => (0..freqs.len())
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect(),
        _ => Vec::new(),
    };

    let mut states = Vec::with_capacity(k_steps + 1);
    let mut inputs = Vec::with_capacity(k_steps);
    states.push(x.clone());
    for k in 0..k_steps {
        let mut u = policy(k, &x);
        if u.len() != m {
            return Err(Error::DimensionMismatch {
                what: "policy output",
                expected: format!("{m}"),
                got: format!("{}", u.len()),
            });
        }
        if let Some((chol_d, kind)) = explore {
            let d = match kind {
                ExplorationKind::Gaussian => chol_d * std_normal_vec(rng, m),
                ExplorationKind::Sinusoid { freqs, amps } => {
                    let raw = DVector::from_fn(m, |j, _| {
                        let fj = freqs.get(j).copied().unwrap_or(1.0);
                        let aj = amps.get(j).copied().unwrap_or(1.0);
                        aj * (fj * k as f64 + phases.get(j).copied().unwrap_or(0.0)).sin()
                    });
                    chol_d * raw
                }
            };
            u += d;
        }

        let mut next = &sys.a * &x + &sys.b * &u;
        for (al, bl) in &sys.channels {
            let v = sqrt_sigma * unit_noise_scalar(rng, noise);
            next += (al * &x + bl * &u) * v;
        }
        next += &chol_w * unit_noise_vec(rng, n, noise);

        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalError(format!(
                "trajectory diverged to non-finite values at step {k}"
            )));
        }
        inputs.push(u);
        states.push(next.clone());
        x = next;
    }
    Ok(Trajectory { states, inputs })
}

/// Simulates one rollout of `k_steps` under `policy(k, x_k) -> u_k`.
///
/// Draws `x_0 ~ N(mu_0, Sigma_0)`, then per step the channel noises
/// `v_k^l ~ N(0, sigma)` followed by `w_k ~ N(0, Sigma)` (this order is part
/// of the reproducibility contract).  Non-finite states surface as
/// [`Error::NumericalError`].
pub fn simulate_rollout(
    sys: &StochasticSystem,
    policy: impl Fn(usize, &DVector<f64>) -> DVector<f64>,
    k_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    simulate_impl(sys, &policy, k_steps, rng, None, NoiseKind::Gaussian)
}

/// Continues a trajectory from `x_start` for `k_steps` under `policy`, with
/// the same per-step noise model and draw order as [`simulate_rollout`] but
/// no fresh initial-state draw.  Used to extend collected rollouts under an
/// estimated feedback gain.
pub fn simulate_from(
    sys: &StochasticSystem,
    x_start: &DVector<f64>,
    policy: impl Fn(usize, &DVector<f64>) -> DVector<f64>,
    k_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    if x_start.len() != sys.n() {
        return Err(Error::DimensionMismatch {
            what: "continuation state",
            expected: format!("{}", sys.n()),
            got: format!("{}", x_start.len()),
        });
    }
    step_loop(
        sys,
        x_start.clone(),
        &policy,
        k_steps,
        rng,
        None,
        NoiseKind::Gaussian,
    )
}

/// Full-row-rank test: `ok` iff `sigma_min(Z) > rel_tol * sigma_max(Z)`.
/// Returns the smallest singular value alongside.
pub fn check_rank(z: &DMatrix<f64>, rel_tol: f64) -> (bool, f64) {
    let svd = z.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = if z.nrows() <= z.ncols() {
        svd.singular_values.min()
    } else {
        // Fewer columns than rows: row rank cannot be full.
        0.0
    };
    (smin > rel_tol * smax && smax > 0.0, smin)
}

/// RNG for attempt `attempt` of rollout `i`: master-seeded, stream
/// `attempt * N + i`.
fn rollout_rng(seed: u64, n_rollouts: usize, index: usize, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt * n_rollouts as u64 + index as u64);
    rng
}

/// RNG for the closed-loop continuation of rollout `i`: master-seeded,
/// stream `2^32 + i`, disjoint from every collection stream (those stay
/// below `(MAX_RETRIES + 1) * N`).
pub fn continuation_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 32) + index as u64);
    rng
}

/// Collects `N` independent rollouts of length `K` with exploration input
/// `u_k = base(k, x_k) + d_k` and assembles the `(Z_i, Y_i)` pairs.
///
/// Rollouts run in parallel (see [`crate::exec`]); the stream-per-rollout
/// rule makes the result identical to serial collection.  A rollout whose
/// `Z_i` fails [`check_rank`] is re-drawn up to [`MAX_RETRIES`] times
/// before [`Error::RankDeficientData`] is reported.  Requires `K >= n + m`.
pub fn collect_dataset(
    sys: &StochasticSystem,
    n_rollouts: usize,
    k_steps: usize,
    cfg: &ExplorationConfig,
) -> Result<Dataset> {
    collect_with(sys, n_rollouts, k_steps, cfg, true)
}

/// Sequential reference implementation of [`collect_dataset`]; used by
/// tests and benchmarks to pin down the parallel path.
pub fn collect_dataset_serial(
    sys: &StochasticSystem,
    n_rollouts: usize,
    k_steps: usize,
    cfg: &ExplorationConfig,
) -> Result<Dataset> {
    collect_with(sys, n_rollouts, k_steps, cfg, false)
}

type RolloutOutcome = Result<(DMatrix<f64>, DMatrix<f64>)>;

fn collect_with(
    sys: &StochasticSystem,
    n_rollouts: usize,
    k_steps: usize,
    cfg: &ExplorationConfig,
    parallel: bool,
) -> Result<Dataset> {
    let n = sys.n();
    let m = sys.m();
    if k_steps < n + m {
        return Err(Error::InvalidConfig(format!(
            "rollout length K = {k_steps} must be at least n + m = {}",
            n + m
        )));
    }
    if n_rollouts == 0 {
        return Err(Error::InvalidConfig("need at least one rollout".into()));
    }
    if cfg.sigma_d.dim() != m {
        return Err(Error::InvalidConfig(format!(
            "Sigma_d must be {m}x{m}, got {0}x{0}",
            cfg.sigma_d.dim()
        )));
    }
    let chol_d = chol_factor(&cfg.sigma_d, "Sigma_d")?;

    let one_rollout = |i: usize| -> RolloutOutcome {
        let mut last_sigma_min = 0.0;
        for attempt in 0..=MAX_RETRIES {
            let mut rng = rollout_rng(cfg.seed, n_rollouts, i, attempt);
            let traj = simulate_impl(
                sys,
                &|_, _| cfg.base_input.eval(m),
                k_steps,
                &mut rng,
                Some((&chol_d, &cfg.kind)),
                cfg.noise,
            )?;
            let mut z = DMatrix::zeros(n + m, k_steps);
            let mut y = DMatrix::zeros(n, k_steps);
            for k in 0..k_steps {
                z.view_mut((0, k), (n, 1)).copy_from(&traj.states[k]);
                z.view_mut((n, k), (m, 1)).copy_from(&traj.inputs[k]);
                y.set_column(k, &traj.states[k + 1]);
            }
            // Column consistency: the state part of z_{k+1} is x_{k+1},
            // which is column k of Y.
            debug_assert!((0..k_steps.saturating_sub(1)).all(|k| {
                (0..n).all(|r| z[(r, k + 1)] == y[(r, k)])
            }));
            let (ok, sigma_min) = check_rank(&z, RANK_REL_TOL);
            if ok {
                return Ok((z, y));
            }
            last_sigma_min = sigma_min;
        }
        Err(Error::RankDeficientData {
            index: i,
            sigma_min: last_sigma_min,
        })
    };

    let outcomes = if parallel {
        exec::map_range(n_rollouts, &one_rollout)
    } else {
        exec::map_range_serial(n_rollouts, &one_rollout)
    };
    let samples: Vec<(DMatrix<f64>, DMatrix<f64>)> =
        outcomes.into_iter().collect::<Result<_>>()?;

    let sd = cfg.sigma_d.matrix();
    Ok(Dataset {
        samples,
        seed: cfg.seed,
        meta: DatasetMeta {
            n,
            m,
            k: k_steps,
            num_rollouts: n_rollouts,
            seed: cfg.seed,
            sigma_d: (0..m)
                .map(|i| (0..m).map(|j| sd[(i, j)]).collect())
                .collect(),
        },
    })
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            Error::InvalidConfig(format!(
                "{}: line {}: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidConfig(format!(
                    "{}: ragged rows",
                    path.display()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{}: empty matrix file",
            path.display()
        )));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Writes the dataset as a CSV bundle into `dir`: `z_i.csv` and `y_i.csv`
/// per rollout plus `meta.json`.  Numbers carry 17 significant digits, so
/// the round-trip through [`import_csv`] is exact.
pub fn export_csv(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, (z, y)) in ds.samples.iter().enumerate() {
        write_matrix_csv(&dir.join(format!("z_{i}.csv")), z)?;
        write_matrix_csv(&dir.join(format!("y_{i}.csv")), y)?;
    }
    let meta = serde_json::to_string_pretty(&ds.meta)
        .map_err(|e| Error::InvalidConfig(format!("meta serialization failed: {e}")))?;
    std::fs::write(dir.join("meta.json"), meta)?;
    Ok(())
}

/// Reads a dataset bundle written by [`export_csv`], validating shapes
/// against `meta.json`.
pub fn import_csv(dir: &Path) -> Result<Dataset> {
    let meta_text = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::InvalidConfig(format!("meta.json: {e}")))?;
    let mut samples = Vec::with_capacity(meta.num_rollouts);
    for i in 0..meta.num_rollouts {
        let z = read_matrix_csv(&dir.join(format!("z_{i}.csv")))?;
        let y = read_matrix_csv(&dir.join(format!("y_{i}.csv")))?;
        if z.nrows() != meta.n + meta.m || z.ncols() != meta.k {
            return Err(Error::InvalidConfig(format!(
                "z_{i}.csv has shape {}x{}, expected {}x{}",
                z.nrows(),
                z.ncols(),
                meta.n + meta.m,
                meta.k
            )));
        }
        if y.nrows() != meta.n || y.ncols() != meta.k {
            return Err(Error::InvalidConfig(format!(
                "y_{i}.csv has shape {}x{}, expected {}x{}",
                y.nrows(),
                y.ncols(),
                meta.n,
                meta.k
            )));
        }
        samples.push((z, y));
    }
    Ok(Dataset {
        samples,
        seed: meta.seed,
        meta,
    })
}
