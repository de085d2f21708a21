//! Empirical robustness checks: stability margins, admissibility of
//! estimated gains, and the error-scaling experiment over dataset sizes.
//!
//! The scaling experiment runs the full data-driven pipeline (collect,
//! build, solve, extract) over a grid of `(N, K)` dataset shapes with
//! repeated seeds, compares each estimate against the Riccati oracle, and
//! fits the log-log slope of the median gain error against the sample
//! count `N*K`.  Individual runs may fail — a rank-deficient draw or a
//! degenerate `F22` block — and are recorded as missing rather than
//! aborting the sweep; a grid point loses meaning only when more than half
//! of its repetitions fail.

use std::path::Path;

use nalgebra::DMatrix;

use crate::datagen::{collect_dataset, ExplorationConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::lqrsdp::{build_model_free, extract_policy, ModelFreeInputs};
use crate::matcore::SymMatrix;
use crate::riccati::{residual, solve_dgare_default};
use crate::sdpcore::solve_sdp_default;
use crate::sysmodel::{closed_loop_generator, is_admissible, Gain, StochasticSystem};

/// One pipeline run inside [`scaling_experiment`]: dataset shape, errors
/// against the oracle, and closed-loop health of the estimated gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRecord {
    /// Number of rollouts.
    pub n_rollouts: usize,
    /// Rollout length.
    pub k: usize,
    /// Repetition index within the grid point.
    pub rep: usize,
    /// `||L_hat - L*||_F`.
    pub err_l: f64,
    /// `||P_hat - P*||_F`.
    pub err_p: f64,
    /// Riccati residual `||e(P_hat)||_F`.
    pub residual: f64,
    /// `sigma_min(I - alpha C_{L_hat})`.
    pub margin: f64,
    /// Mean-square stability of the estimated closed loop.
    pub admissible: bool,
}

/// Smallest singular value of `I - alpha C_L`, the operator whose
/// invertibility underwrites the closed-loop Lyapunov equation.  Larger
/// margins mean the second-moment recursion is better conditioned.
pub fn stability_margin(sys: &StochasticSystem, gain: &Gain) -> Result<f64> {
    let c = closed_loop_generator(sys, gain)?;
    let dim = c.nrows();
    let m = DMatrix::identity(dim, dim) - c * sys.alpha;
    Ok(m.svd(false, false).singular_values.min())
}

/// Whether the closed loop under `gain` is mean-square stable.
pub fn certify_admissible(sys: &StochasticSystem, gain: &Gain) -> bool {
    is_admissible(sys, gain)
}

/// Least-squares slope of `ln y` against `ln x`.
///
/// Returns `NaN` when fewer than two distinct abscissae are available or
/// any value is non-positive (no line to fit in log space).
pub(crate) fn fit_loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = logs.len() as f64;
    if logs.len() < 2 {
        return f64::NAN;
    }
    let mean_x = logs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = logs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    if sxx <= f64::EPSILON * n {
        return f64::NAN;
    }
    let sxy: f64 = logs
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    sxy / sxx
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite error values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs the full model-free pipeline over a grid of dataset shapes.
///
/// For grid point `g` and repetition `rep`, the run index is
/// `g * reps + rep` and its master seed is `seed + index` — the sweep is a
/// pure function of `(sys, grid, reps, seed)` and parallel/serial execution
/// agree bit-for-bit.  Exploration is Gaussian with identity covariance.
///
/// Per-run failures (rank-deficient data after retries, solver breakdown,
/// singular `F22` at extraction) drop that record.  If more than half the
/// repetitions of any grid point fail, the whole experiment is reported as
/// [`Error::ExperimentFailed`].  Returns the surviving records in run
/// order plus the fitted log-log slope of median `err_L` vs `N*K` (`NaN`
/// when the grid spans fewer than two distinct sample counts).
pub fn scaling_experiment(
    sys: &StochasticSystem,
    grid: &[(usize, usize)],
    reps: usize,
    seed: u64,
) -> Result<(Vec<ScalingRecord>, f64)> {
    if grid.is_empty() || reps == 0 {
        return Err(Error::InvalidConfig(
            "scaling experiment needs a non-empty grid and reps >= 1".into(),
        ));
    }
    let oracle = solve_dgare_default(sys)?;
    let l_star = &oracle.l.l;
    let p_star = oracle.p.matrix();
    let m = sys.m();
    let w = sys.w();
    let alpha = sys.alpha;

    let one_run = |idx: usize| -> Result<Option<ScalingRecord>> {
        let (g, rep) = (idx / reps, idx % reps);
        let (n_rollouts, k) = grid[g];
        let cfg = ExplorationConfig::gaussian(SymMatrix::identity(m), seed + idx as u64);
        let attempt = (|| -> Result<ScalingRecord> {
            let ds = collect_dataset(sys, n_rollouts, k, &cfg)?;
            let problem = build_model_free(&ModelFreeInputs {
                dataset: ds,
                w: w.clone(),
                alpha,
            })?;
            let sol = solve_sdp_default(&problem)?;
            let (gain, p_hat, _) = extract_policy(&sol, &problem.var_layout, sys.n(), m)?;
            Ok(ScalingRecord {
                n_rollouts,
                k,
                rep,
                err_l: (&gain.l - l_star).norm(),
                err_p: (p_hat.matrix() - p_star).norm(),
                residual: residual(sys, &p_hat)?,
                margin: stability_margin(sys, &gain)?,
                admissible: certify_admissible(sys, &gain),
            })
        })();
        match attempt {
            Ok(rec) => Ok(Some(rec)),
            // Config-shaped problems are caller bugs and abort the sweep.
            Err(e @ (Error::InvalidConfig(_) | Error::DimensionMismatch { .. })) => Err(e),
            // Anything else is a legitimate per-run casualty.
            Err(_) => Ok(None),
        }
    };

    let outcomes: Vec<Result<Option<ScalingRecord>>> =
        exec::map_range(grid.len() * reps, one_run);
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = vec![0usize; grid.len()];
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            Some(rec) => records.push(rec),
            None => failures[idx / reps] += 1,
        }
    }
    for (g, &fails) in failures.iter().enumerate() {
        if 2 * fails > reps {
            let (n_rollouts, k) = grid[g];
            return Err(Error::ExperimentFailed(format!(
                "grid point (N = {n_rollouts}, K = {k}) lost {fails}/{reps} runs"
            )));
        }
    }

    let medians: Vec<(f64, f64)> = grid
        .iter()
        .map(|&(n_rollouts, k)| {
            let mut errs: Vec<f64> = records
                .iter()
                .filter(|r| r.n_rollouts == n_rollouts && r.k == k)
                .map(|r| r.err_l)
                .collect();
            ((n_rollouts * k) as f64, median(&mut errs))
        })
        .collect();
    let slope = fit_loglog_slope(&medians);
    Ok((records, slope))
}

/// Writes records as CSV with the header
/// `N,K,rep,err_L,err_P,residual,margin,admissible`.
pub fn write_scaling_csv(records: &[ScalingRecord], path: &Path) -> Result<()> {
    let mut out = String::from("N,K,rep,err_L,err_P,residual,margin,admissible\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            r.n_rollouts, r.k, r.rep, r.err_l, r.err_p, r.residual, r.margin, r.admissible
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn pwm_inverter() -> StochasticSystem {
        StochasticSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.6929, 8.6545, -0.0241, 0.8603]),
            DMatrix::from_row_slice(2, 1, &[0.1290, 0.0267]),
            vec![(
                DMatrix::from_row_slice(2, 2, &[0.01, 0.02, -0.001, 0.05]),
                DMatrix::from_row_slice(2, 1, &[-0.02, 0.005]),
            )],
            1.0,
            SymMatrix::identity(2),
            SymMatrix::identity(2),
            SymMatrix::new(DMatrix::from_element(1, 1, 1e-5)),
            0.5,
            dvector![1.0, 2.0],
            SymMatrix::new(DMatrix::identity(2, 2) * 5.0),
        )
        .unwrap()
    }

    fn plain_system(alpha: f64) -> StochasticSystem {
        StochasticSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.8, 0.3, -0.1, 0.6]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            vec![],
            1.0,
            SymMatrix::identity(2),
            SymMatrix::identity(2),
            SymMatrix::identity(1),
            alpha,
            dvector![1.0, -1.0],
            SymMatrix::identity(2),
        )
        .unwrap()
    }

    #[test]
    fn margin_of_zero_generator_is_one() {
        // A = 0, B = 0, L = 0 gives C_L = 0, so I - alpha C_L = I.
        let sys = StochasticSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            vec![],
            1.0,
            SymMatrix::identity(2),
            SymMatrix::identity(2),
            SymMatrix::identity(1),
            0.5,
            dvector![0.0, 0.0],
            SymMatrix::identity(2),
        )
        .unwrap();
        let gain = Gain::new(DMatrix::zeros(1, 2)).unwrap();
        assert_abs_diff_eq!(stability_margin(&sys, &gain).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn margin_approaches_one_as_discount_vanishes() {
        let mut sys = plain_system(0.5);
        sys.alpha = 1e-12;
        let gain = Gain::new(DMatrix::zeros(1, 2)).unwrap();
        assert_abs_diff_eq!(stability_margin(&sys, &gain).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn inverter_margin_matches_frozen_value() {
        // sigma_min(I - alpha C_{L*}) on the inverter benchmark, checked
        // against an independently computed reference.
        let sys = pwm_inverter();
        let oracle = solve_dgare_default(&sys).unwrap();
        let margin = stability_margin(&sys, &oracle.l).unwrap();
        assert_abs_diff_eq!(margin, 0.439157936386, epsilon = 1e-9);
        assert!(certify_admissible(&sys, &oracle.l));
    }

    #[test]
    fn admissibility_flips_for_expansive_perturbation() {
        let sys = plain_system(0.9);
        let oracle = solve_dgare_default(&sys).unwrap();
        assert!(certify_admissible(&sys, &oracle.l));
        // Push the gain far enough to make A + BL expansive.
        let bad = Gain::new(&oracle.l.l + DMatrix::from_row_slice(1, 2, &[50.0, 0.0])).unwrap();
        assert!(!certify_admissible(&sys, &bad));
    }

    #[test]
    fn loglog_slope_recovers_known_exponent() {
        // y = 7 x^-0.5 exactly.
        let pts: Vec<(f64, f64)> = [10.0f64, 20.0, 40.0, 80.0]
            .iter()
            .map(|&x| (x, 7.0 * x.powf(-0.5)))
            .collect();
        assert_abs_diff_eq!(fit_loglog_slope(&pts), -0.5, epsilon = 1e-12);
        // Degenerate inputs have no slope.
        assert!(fit_loglog_slope(&[(10.0, 1.0)]).is_nan());
        assert!(fit_loglog_slope(&[(10.0, 1.0), (10.0, 2.0)]).is_nan());
        assert!(fit_loglog_slope(&[(10.0, 0.0), (20.0, 1.0)]).is_nan());
    }

    #[test]
    fn zero_noise_pipeline_identifies_the_gain() {
        // With vanishing process noise and a square regressor the pipeline
        // reduces to exact identification.
        let mut sys = plain_system(0.7);
        sys.sigma = 1e-16;
        sys.sigma_w = SymMatrix::new(DMatrix::identity(2, 2) * 1e-16);
        let (records, _) = scaling_experiment(&sys, &[(1, 3)], 4, 11).unwrap();
        assert_eq!(records.len(), 4);
        for r in &records {
            assert!(r.err_l <= 1e-4, "err_L = {:.3e}", r.err_l);
            assert!(r.margin > 0.0);
            assert!(r.admissible);
            assert_eq!((r.n_rollouts, r.k), (1, 3));
        }
    }

    #[test]
    fn experiment_is_deterministic() {
        let mut sys = plain_system(0.7);
        sys.sigma = 1e-16;
        sys.sigma_w = SymMatrix::new(DMatrix::identity(2, 2) * 1e-16);
        let (a, sa) = scaling_experiment(&sys, &[(1, 3)], 3, 5).unwrap();
        let (b, sb) = scaling_experiment(&sys, &[(1, 3)], 3, 5).unwrap();
        assert_eq!(a, b);
        assert!(sa.is_nan() && sb.is_nan(), "single grid point has no slope");
    }

    #[test]
    fn majority_failures_abort_the_experiment() {
        // On the inverter benchmark with many noisy rollouts the sampled
        // program usually collapses F22 toward zero, so extraction fails
        // for most repetitions.  The seed is fixed at one such outcome;
        // the sweep is deterministic, so this is not a flaky assertion.
        let sys = pwm_inverter();
        let err = scaling_experiment(&sys, &[(20, 9)], 4, 0).unwrap_err();
        assert!(matches!(err, Error::ExperimentFailed(_)), "got {err:?}");
    }

    #[test]
    fn csv_writer_emits_contracted_header() {
        let rec = ScalingRecord {
            n_rollouts: 10,
            k: 9,
            rep: 2,
            err_l: 0.5,
            err_p: 1.5,
            residual: 0.25,
            margin: 0.4,
            admissible: true,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scaling.csv");
        write_scaling_csv(&[rec], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "N,K,rep,err_L,err_P,residual,margin,admissible"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("10,9,2,5.0000000000000000e-1,"));
        assert!(row.ends_with(",true"));
        assert_eq!(lines.next(), None);
    }
}
