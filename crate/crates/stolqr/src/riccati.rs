//! Generalized discounted algebraic Riccati equation (the model-based
//! ground truth).
//!
//! The optimal value matrix `P*` is the fixed point of
//!
//! ```text
//! R(P) = Q + a A'PA + a s sum_l A_l'PA_l
//!        - a^2 (A'PB + s sum_l A_l'PB_l)
//!          (R + a B'PB + a s sum_l B_l'PB_l)^{-1}
//!          (B'PA + s sum_l B_l'PA_l)
//! ```
//!
//! (`a` the discount, `s` the multiplicative variance).  From `P*` the
//! Q-function parameter `H*` and the optimal gain `L* = -H22^{-1} H12'` are
//! assembled in closed form; the residual map `e(P) = P - R(P)` certifies
//! any candidate value matrix, including ones recovered by the SDP routes.

use crate::error::{Error, Result};
use crate::matcore::{schur_p, SymMatrix};
use crate::sysmodel::{Gain, StochasticSystem};

/// Default relative fixed-point tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration budget.
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Output of [`solve_dgare`]: value matrix, Q-function parameter, optimal
/// gain, and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct RiccatiResult {
    /// Fixed point `P*` of the Riccati operator.
    pub p: SymMatrix,
    /// Q-function parameter `H*` (dimension `n + m`).
    pub h: SymMatrix,
    /// Optimal gain `L* = -H22^{-1} H12'`.
    pub l: Gain,
    /// Iterations consumed.
    pub iterations: usize,
    /// Final `||P - R(P)||_F`.
    pub residual: f64,
}

/// Assembles the Q-function parameter
///
/// ```text
/// H(P) = [ Q + a A'PA + a s sum A_l'PA_l      a A'PB + a s sum A_l'PB_l ]
///        [            (sym)                   R + a B'PB + a s sum B_l'PB_l ]
/// ```
pub fn h_from_p(sys: &StochasticSystem, p: &SymMatrix) -> SymMatrix {
    let (n, m) = (sys.n(), sys.m());
    let a = sys.alpha;
    let pm = p.matrix();

    let mut h11 = sys.q.matrix() + sys.a.transpose() * pm * &sys.a * a;
    let mut h12 = sys.a.transpose() * pm * &sys.b * a;
    let mut h22 = sys.r.matrix() + sys.b.transpose() * pm * &sys.b * a;
    for (al, bl) in &sys.channels {
        let scale = a * sys.sigma;
        h11 += al.transpose() * pm * al * scale;
        h12 += al.transpose() * pm * bl * scale;
        h22 += bl.transpose() * pm * bl * scale;
    }

    let mut h = nalgebra::DMatrix::zeros(n + m, n + m);
    h.view_mut((0, 0), (n, n)).copy_from(&h11);
    h.view_mut((0, n), (n, m)).copy_from(&h12);
    h.view_mut((n, 0), (m, n)).copy_from(&h12.transpose());
    h.view_mut((n, n), (m, m)).copy_from(&h22);
    SymMatrix::new(h)
}

/// One application of the Riccati operator `R(P)`, i.e. the Schur complement
/// of the trailing block of `H(P)`.
///
/// Fails with [`Error::SingularBlock`] when the inner matrix
/// `R + a B'PB + a s sum B_l'PB_l` is not positive definite at tolerance.
pub fn riccati_operator(sys: &StochasticSystem, p: &SymMatrix) -> Result<SymMatrix> {
    schur_p(&h_from_p(sys, p), sys.n(), sys.m())
}

/// Extracts the gain `L = -H22^{-1} H12'` from a Q-function parameter,
/// using a Cholesky solve of the trailing block.
///
/// Fails with [`Error::SingularBlock`] when `H22` is not positive definite
/// at tolerance `1e-10 * (1 + ||H22||_2)`.
pub fn gain_from_h(h: &SymMatrix, n: usize, m: usize) -> Result<Gain> {
    if h.dim() != n + m {
        return Err(Error::DimensionMismatch {
            what: "gain_from_h",
            expected: format!("{0}x{0}", n + m),
            got: format!("{0}x{0}", h.dim()),
        });
    }
    let h12 = h.matrix().view((0, n), (n, m)).into_owned();
    let h22 = h.principal_block(n, m);
    let min_eig = h22.min_eig();
    if min_eig <= 1e-10 * (1.0 + h22.spectral_norm()) {
        return Err(Error::SingularBlock {
            what: "H22",
            min_eig,
        });
    }
    let chol = h22
        .matrix()
        .clone()
        .cholesky()
        .ok_or(Error::SingularBlock {
            what: "H22",
            min_eig,
        })?;
    Gain::new(-chol.solve(&h12.transpose()))
}

/// Riccati residual `||P - R(P)||_F`.
pub fn residual(sys: &StochasticSystem, p: &SymMatrix) -> Result<f64> {
    Ok(p.sub(&riccati_operator(sys, p)?).norm())
}

/// Solves the DGARE by fixed-point iteration `P_{k+1} = R(P_k)` from
/// `P_0 = Q`, stopping at `||P_{k+1} - P_k||_F <= tol * (1 + ||P_k||_F)`.
///
/// Returns the value matrix together with `H`, the optimal gain, the
/// iteration count, and the final residual.  Fails with
/// [`Error::NoConvergence`] when the budget is exhausted (last residual
/// attached) and propagates [`Error::SingularBlock`] from the inner solve.
pub fn solve_dgare(sys: &StochasticSystem, tol: f64, max_iter: usize) -> Result<RiccatiResult> {
    let mut p = sys.q.clone();
    let mut last_step = f64::INFINITY;
    for it in 1..=max_iter {
        let next = riccati_operator(sys, &p)?;
        last_step = next.sub(&p).norm();
        let done = last_step <= tol * (1.0 + p.norm());
        p = next;
        if done {
            let h = h_from_p(sys, &p);
            let l = gain_from_h(&h, sys.n(), sys.m())?;
            let res = residual(sys, &p)?;
            return Ok(RiccatiResult {
                p,
                h,
                l,
                iterations: it,
                residual: res,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: last_step,
    })
}

/// [`solve_dgare`] with the default tolerance and iteration budget.
pub fn solve_dgare_default(sys: &StochasticSystem) -> Result<RiccatiResult> {
    solve_dgare(sys, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::{closed_loop_generator, is_admissible};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn scalar_system(a: f64, b: f64, q: f64, r: f64, alpha: f64) -> StochasticSystem {
        StochasticSystem::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            DMatrix::from_row_slice(1, 1, &[b]),
            vec![],
            1.0,
            SymMatrix::identity(1),
            SymMatrix::new(DMatrix::from_row_slice(1, 1, &[q])),
            SymMatrix::new(DMatrix::from_row_slice(1, 1, &[r])),
            alpha,
            DVector::zeros(1),
            SymMatrix::identity(1),
        )
        .unwrap()
    }

    #[test]
    fn operator_reduces_to_q_for_zero_dynamics() {
        let sys = StochasticSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            vec![],
            1.0,
            SymMatrix::identity(2),
            SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0])),
            SymMatrix::identity(1),
            0.5,
            DVector::zeros(2),
            SymMatrix::identity(2),
        )
        .unwrap();
        let p = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 5.0]));
        let r = riccati_operator(&sys, &p).unwrap();
        assert_abs_diff_eq!((r.matrix() - sys.q.matrix()).norm(), 0.0, epsilon = 1e-14);
        // P = 0 also maps to Q.
        let r0 = riccati_operator(&sys, &SymMatrix::zeros(2)).unwrap();
        assert_abs_diff_eq!((r0.matrix() - sys.q.matrix()).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn h_from_p_trivial_blocks() {
        let sys = scalar_system(1.0, 0.0, 2.0, 3.0, 0.5);
        // P = 0 -> H = Q (+) R.
        let h0 = h_from_p(&sys, &SymMatrix::zeros(1));
        assert_abs_diff_eq!(h0.get(0, 0), 2.0);
        assert_abs_diff_eq!(h0.get(1, 1), 3.0);
        assert_abs_diff_eq!(h0.get(0, 1), 0.0);
        // A = I, B = 0, alpha = 0.5: H11 = Q + 0.5 P, H22 = R.
        let p = SymMatrix::new(DMatrix::from_row_slice(1, 1, &[4.0]));
        let h = h_from_p(&sys, &p);
        assert_abs_diff_eq!(h.get(0, 0), 2.0 + 0.5 * 4.0);
        assert_abs_diff_eq!(h.get(1, 1), 3.0);
    }

    #[test]
    fn gain_from_h_hand_cases() {
        // H12 = 0 -> L = 0.
        let h = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        let g = gain_from_h(&h, 1, 1).unwrap();
        assert_abs_diff_eq!(g.l[(0, 0)], 0.0);
        // H = [[2, 1], [1, 1]] -> L = -1.
        let h = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]));
        let g = gain_from_h(&h, 1, 1).unwrap();
        assert_abs_diff_eq!(g.l[(0, 0)], -1.0, epsilon = 1e-14);
        // Singular H22 rejected.
        let h = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0]));
        assert!(matches!(
            gain_from_h(&h, 1, 1),
            Err(Error::SingularBlock { what: "H22", .. })
        ));
    }

    #[test]
    fn dgare_converges_instantly_for_zero_dynamics() {
        let sys = scalar_system(0.0, 0.0, 2.0, 1.0, 0.5);
        let res = solve_dgare_default(&sys).unwrap();
        assert_abs_diff_eq!(res.p.get(0, 0), 2.0, epsilon = 1e-12);
        assert!(res.iterations <= 2);
        assert!(res.residual <= 1e-12);
    }

    #[test]
    fn dgare_scalar_matches_bisection_oracle() {
        // a = 0.5, b = 1, q = r = 1, alpha = 0.9: the positive root of
        // p = 1 + 0.225 p - 0.2025 p^2 / (1 + 0.9 p), found independently
        // by bisection to 15 digits.
        let sys = scalar_system(0.5, 1.0, 1.0, 1.0, 0.9);
        let res = solve_dgare(&sys, 1e-14, 200_000).unwrap();
        assert_abs_diff_eq!(res.p.get(0, 0), 1.125_822_048_322_58, epsilon = 1e-11);
        // Gain consistency: L = -a h12 / h22 with the same fixed point.
        let p = res.p.get(0, 0);
        let l_expected = -(0.9 * 0.5 * p) / (1.0 + 0.9 * p);
        assert_abs_diff_eq!(res.l.l[(0, 0)], l_expected, epsilon = 1e-12);
    }

    #[test]
    fn dgare_reports_no_convergence_when_starved() {
        let sys = scalar_system(0.5, 1.0, 1.0, 1.0, 0.9);
        match solve_dgare(&sys, 1e-14, 3) {
            Err(Error::NoConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual.is_finite() && residual > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn fixed_point_properties_on_random_systems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut tested = 0;
        while tested < 10 {
            let n = rng.random_range(1..=3);
            let m = rng.random_range(1..=2);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.6..0.6));
            let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let nch = rng.random_range(0..=2);
            let channels = (0..nch)
                .map(|_| {
                    (
                        DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.15..0.15)),
                        DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.15..0.15)),
                    )
                })
                .collect();
            let sys = StochasticSystem::new(
                a,
                b,
                channels,
                rng.random_range(0.2..1.0),
                SymMatrix::identity(n),
                SymMatrix::identity(n),
                SymMatrix::identity(m),
                rng.random_range(0.3..0.9),
                DVector::zeros(n),
                SymMatrix::identity(n),
            )
            .unwrap();
            let res = match solve_dgare_default(&sys) {
                Ok(r) => r,
                Err(_) => continue,
            };
            // e(P) small at the fixed point.
            assert!(res.residual <= 10.0 * DEFAULT_TOL * (1.0 + res.p.norm()));
            // P is PSD (up to round-off).
            assert!(res.p.min_eig() >= -1e-10);
            // The extracted gain is admissible.
            assert!(is_admissible(&sys, &res.l), "optimal gain must stabilize");
            // Eq.-(5) gain equals the closed-form expression
            // -a (R + aB'PB + a s B_l'PB_l)^{-1} (B'PA + s B_l'PA_l).
            let pm = res.p.matrix();
            let mut inner = sys.r.matrix() + sys.b.transpose() * pm * &sys.b * sys.alpha;
            let mut cross = sys.b.transpose() * pm * &sys.a;
            for (al, bl) in &sys.channels {
                inner += bl.transpose() * pm * bl * (sys.alpha * sys.sigma);
                cross += bl.transpose() * pm * al * sys.sigma;
            }
            let l_closed = -(inner.clone().cholesky().unwrap().solve(&cross)) * sys.alpha;
            assert!(
                (&res.l.l - &l_closed).norm() <= 1e-10 * (1.0 + l_closed.norm()),
                "gain formula mismatch"
            );
            // rho(C_L) strictly inside the disk.
            let c = closed_loop_generator(&sys, &res.l).unwrap();
            assert!(crate::matcore::spectral_radius(&c).unwrap() < 1.0);
            tested += 1;
        }
    }

    #[test]
    fn iteration_steps_shrink_after_burn_in() {
        let sys = scalar_system(0.5, 1.0, 1.0, 1.0, 0.9);
        // Track consecutive step norms of the fixed-point iteration.
        let mut p = sys.q.clone();
        let mut steps = Vec::new();
        for _ in 0..40 {
            let next = riccati_operator(&sys, &p).unwrap();
            steps.push(next.sub(&p).norm());
            p = next;
        }
        for w in steps.windows(2).skip(3) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-9),
                "step norms must be non-increasing after burn-in: {steps:?}"
            );
        }
    }
}
