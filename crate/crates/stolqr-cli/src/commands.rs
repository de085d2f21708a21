//! Subcommand implementations.  Every command returns its report as a
//! string (printed by `main`); CSV artifacts go to the output directory.
//! All output is byte-deterministic under a fixed config and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use stolqr::datagen::{collect_dataset, continuation_rng, simulate_from};
use stolqr::lqrsdp::{build_model_based, build_model_free, extract_policy, ModelFreeInputs};
use stolqr::riccati::{residual, solve_dgare_default};
use stolqr::robustness::{certify_admissible, scaling_experiment, stability_margin};
use stolqr::sdpcore::{evaluate_lmi, solve_sdp_with, SdpProblem, SdpSolution};
use stolqr::sysmodel::{optimal_cost, Gain};
use stolqr::{Error, Result};

use crate::config::{RunConfig, SolverSpec};

/// State means beyond this magnitude are reported as divergence even while
/// still finite.
const DIVERGENCE_LIMIT: f64 = 1e9;

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn solve(problem: &SdpProblem, solver: &SolverSpec) -> Result<SdpSolution> {
    solve_sdp_with(problem, solver.tol_feas, solver.tol_gap, solver.max_iter)
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

/// Solves the Riccati fixed point and reports `P*`, `H*`, `L*`, the
/// residual, and the optimal cost.
pub fn cmd_riccati(cfg: &RunConfig) -> Result<String> {
    let sys = cfg.system.build()?;
    let ric = solve_dgare_default(&sys)?;
    let mut out = String::new();
    let _ = writeln!(out, "P = {}", fmt_matrix(ric.p.matrix()));
    let _ = writeln!(out, "H = {}", fmt_matrix(ric.h.matrix()));
    let _ = writeln!(out, "L = {}", fmt_matrix(&ric.l.l));
    let _ = writeln!(out, "residual = {}", fmt_f64(ric.residual));
    let _ = writeln!(out, "iterations = {}", ric.iterations);
    let _ = writeln!(out, "J = {}", fmt_f64(optimal_cost(&sys, &ric.p)));
    Ok(out)
}

/// Solves the model-based program and cross-checks against the Riccati
/// oracle.
pub fn cmd_model_based(cfg: &RunConfig) -> Result<String> {
    let sys = cfg.system.build()?;
    let problem = build_model_based(&sys)?;
    let sol = solve(&problem, &cfg.solver)?;
    let (gain, m_hat, f_hat) = extract_policy(&sol, &problem.var_layout, sys.n(), sys.m())?;
    let ric = solve_dgare_default(&sys)?;
    let lmi2_min_eig = evaluate_lmi(&problem.lmis[1], &sol.x)?.min_eig();
    let mut out = String::new();
    let _ = writeln!(out, "L = {}", fmt_matrix(&gain.l));
    let _ = writeln!(out, "M = {}", fmt_matrix(m_hat.matrix()));
    let _ = writeln!(out, "F = {}", fmt_matrix(f_hat.matrix()));
    let _ = writeln!(out, "residual = {}", fmt_f64(residual(&sys, &m_hat)?));
    let _ = writeln!(out, "lmi2_min_eig = {}", fmt_f64(lmi2_min_eig));
    let _ = writeln!(out, "J = {}", fmt_f64(optimal_cost(&sys, &m_hat)));
    let _ = writeln!(out, "oracle_gap_L = {}", fmt_f64((&gain.l - &ric.l.l).norm()));
    let _ = writeln!(
        out,
        "oracle_gap_M = {}",
        fmt_f64((m_hat.matrix() - ric.p.matrix()).norm())
    );
    Ok(out)
}

/// Runs the data-driven pipeline once: collect, build, solve, extract.
pub fn cmd_model_free(cfg: &RunConfig, seed: Option<u64>) -> Result<String> {
    let sys = cfg.system.build()?;
    let data = cfg.data()?;
    let explo = data.exploration(seed)?;
    let ds = collect_dataset(&sys, data.n_rollouts, data.k, &explo)?;
    let problem = build_model_free(&ModelFreeInputs {
        dataset: ds,
        w: sys.w(),
        alpha: sys.alpha,
    })?;
    let sol = solve(&problem, &cfg.solver)?;
    let (gain, p_hat, _) = extract_policy(&sol, &problem.var_layout, sys.n(), sys.m())?;
    let mut out = String::new();
    let _ = writeln!(out, "L = {}", fmt_matrix(&gain.l));
    let _ = writeln!(out, "P = {}", fmt_matrix(p_hat.matrix()));
    let _ = writeln!(out, "J = {}", fmt_f64(optimal_cost(&sys, &p_hat)));
    let _ = writeln!(out, "residual = {}", fmt_f64(residual(&sys, &p_hat)?));
    let _ = writeln!(out, "admissible = {}", certify_admissible(&sys, &gain));
    let _ = writeln!(out, "margin = {}", fmt_f64(stability_margin(&sys, &gain)?));
    Ok(out)
}

/// Residual-versus-sample-size sweep; writes `residuals.csv` with the data
/// rows `N,rep,residual,err_L,admissible` followed by one per-grid-point
/// summary row whose `rep` column reads `mean` (admissible column becomes
/// the admissible fraction).
pub fn cmd_exp_residuals(cfg: &RunConfig, seed: Option<u64>, out_dir: &Path) -> Result<String> {
    let sys = cfg.system.build()?;
    let data = cfg.data()?;
    let exp = cfg.experiment()?;
    // The sweep explores with standard-normal dither by contract; reject
    // configs that ask for anything else rather than silently ignoring them.
    let explo = data.exploration(seed)?;
    let m = sys.m();
    if explo.sigma_d.matrix() != &DMatrix::identity(m, m)
        || !matches!(explo.kind, stolqr::datagen::ExplorationKind::Gaussian)
    {
        return Err(Error::InvalidConfig(
            "exp-residuals uses standard-normal exploration; set data.Sigma_d to the identity \
             and data.exploration to gaussian"
                .into(),
        ));
    }
    ensure_out_dir(out_dir)?;
    let csv_path = out_dir.join("residuals.csv");

    let mut csv = String::from("N,rep,residual,err_L,admissible\n");
    let mut report = String::new();
    if exp.reps == 0 || exp.grid.is_empty() {
        std::fs::write(&csv_path, csv)?;
        let _ = writeln!(report, "records = 0");
        let _ = writeln!(report, "csv = {}", csv_path.display());
        return Ok(report);
    }

    let (records, slope) = scaling_experiment(&sys, &exp.grid, exp.reps, explo.seed)?;
    for r in &records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.n_rollouts,
            r.rep,
            fmt_f64(r.residual),
            fmt_f64(r.err_l),
            r.admissible
        );
    }
    for &(n_rollouts, k) in &exp.grid {
        let group: Vec<_> = records
            .iter()
            .filter(|r| r.n_rollouts == n_rollouts && r.k == k)
            .collect();
        let count = group.len() as f64;
        let mean_res = group.iter().map(|r| r.residual).sum::<f64>() / count;
        let mean_err = group.iter().map(|r| r.err_l).sum::<f64>() / count;
        let frac_adm = group.iter().filter(|r| r.admissible).count() as f64 / count;
        let _ = writeln!(
            csv,
            "{n_rollouts},mean,{},{},{}",
            fmt_f64(mean_res),
            fmt_f64(mean_err),
            fmt_f64(frac_adm)
        );
    }
    std::fs::write(&csv_path, csv)?;

    let _ = writeln!(report, "records = {}", records.len());
    let _ = writeln!(
        report,
        "failures = {}",
        exp.grid.len() * exp.reps - records.len()
    );
    let _ = writeln!(report, "slope = {}", fmt_f64(slope));
    let _ = writeln!(report, "csv = {}", csv_path.display());
    Ok(report)
}

/// Averaged-trajectory experiment; writes `trajectories.csv` with rows
/// `k,x1_mean,...,phase`.  Steps `0..K-1` average the collection rollouts;
/// from step `K` each rollout continues individually under the estimated
/// (or forced) gain and is averaged afterward.  A rollout that leaves the
/// finite range, or state means beyond `1e9`, raise the divergence flag;
/// rows past the last fully-finite step are omitted.
pub fn cmd_exp_trajectories(cfg: &RunConfig, seed: Option<u64>, out_dir: &Path) -> Result<String> {
    let sys = cfg.system.build()?;
    let data = cfg.data()?;
    let (horizon, force_gain) = match &cfg.experiment {
        Some(e) => (e.horizon, e.force_gain.clone()),
        None => (40, None),
    };
    let explo = data.exploration(seed)?;
    let ds = collect_dataset(&sys, data.n_rollouts, data.k, &explo)?;
    let n = sys.n();
    let k_len = data.k;
    let n_roll = ds.samples.len();

    // Collection-phase states: x_0..x_{K-1} sit in the top rows of Z_i,
    // x_K is the last column of Y_i.
    let mut means: Vec<DVector<f64>> = vec![DVector::zeros(n); k_len + 1];
    let mut switch_states: Vec<DVector<f64>> = Vec::with_capacity(n_roll);
    for (z, y) in &ds.samples {
        for k in 0..k_len {
            means[k] += z.view((0, k), (n, 1)).into_owned();
        }
        let x_k = y.column(k_len - 1).into_owned();
        means[k_len] += &x_k;
        switch_states.push(x_k);
    }
    for mk in &mut means {
        *mk /= n_roll as f64;
    }

    let gain = match force_gain {
        Some(rows) => {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let nrows = rows.len();
            let ncols = rows.first().map_or(0, Vec::len);
            if nrows == 0 || rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::InvalidConfig(
                    "experiment.force_gain: ragged or empty matrix".into(),
                ));
            }
            Gain::new(DMatrix::from_row_slice(nrows, ncols, &flat))?
        }
        None => {
            let problem = build_model_free(&ModelFreeInputs {
                dataset: ds,
                w: sys.w(),
                alpha: sys.alpha,
            })?;
            let sol = solve(&problem, &cfg.solver)?;
            extract_policy(&sol, &problem.var_layout, sys.n(), sys.m())?.0
        }
    };

    // Continue each rollout under u = L x on its own continuation stream.
    let mut divergence = false;
    let mut continuations = Vec::with_capacity(n_roll);
    for (i, x_k) in switch_states.iter().enumerate() {
        let mut rng = continuation_rng(explo.seed, i);
        match simulate_from(&sys, x_k, |_, x| &gain.l * x, horizon, &mut rng) {
            Ok(t) => continuations.push(t),
            Err(_) => {
                divergence = true;
                break;
            }
        }
    }
    if continuations.len() == n_roll {
        for step in 1..=horizon {
            let mut mk = DVector::zeros(n);
            for t in &continuations {
                mk += &t.states[step];
            }
            means.push(mk / n_roll as f64);
        }
    }
    if means
        .iter()
        .any(|mk| mk.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT))
    {
        divergence = true;
    }

    ensure_out_dir(out_dir)?;
    let csv_path = out_dir.join("trajectories.csv");
    let cols: Vec<String> = (1..=n).map(|j| format!("x{j}_mean")).collect();
    let mut csv = format!("k,{},phase\n", cols.join(","));
    for (k, mk) in means.iter().enumerate() {
        let phase = if k < k_len { "collect" } else { "closed_loop" };
        let cells: Vec<String> = mk.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(csv, "{k},{},{phase}", cells.join(","));
    }
    std::fs::write(&csv_path, csv)?;

    let mut report = String::new();
    let _ = writeln!(report, "L = {}", fmt_matrix(&gain.l));
    let _ = writeln!(report, "admissible = {}", certify_admissible(&sys, &gain));
    let _ = writeln!(report, "divergence = {divergence}");
    let _ = writeln!(report, "rows = {}", means.len());
    let _ = writeln!(report, "csv = {}", csv_path.display());
    Ok(report)
}

/// Output directory: `--out`, else the config's `experiment.output_dir`,
/// else the working directory.
pub fn resolve_out_dir(cfg: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.experiment.as_ref().and_then(|e| e.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}
