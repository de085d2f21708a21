//! System and gain types, closed-loop operators, mean-square stability, and
//! exact discounted cost.
//!
//! The plant is
//!
//! ```text
//! x_{k+1} = A x_k + B u_k + sum_{l=1}^{M} (A_l x_k + B_l u_k) v_k^l + w_k
//! ```
//!
//! with i.i.d. scalar noises `v_k^l` (mean zero, variance `sigma`, shared
//! across channels) and additive noise `w_k ~ (0, Sigma)`.  The discounted
//! cost of a state feedback `u = L x` is
//!
//! ```text
//! J(L) = sum_k alpha^k E[ x_k^T Q x_k + u_k^T R u_k ].
//! ```
//!
//! Mean-square stability of a gain is decided through the spectral radius of
//! the Kronecker generator `C_L`; the exact cost is recovered from the primal
//! second-moment equation for `S` (so the SDP outputs can be certified
//! without Monte Carlo).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matcore::{self, kron, spectral_radius, unvec_mat, vec_mat, SymMatrix};

/// Strictness margin on the open stability condition `rho < 1`.
pub const TOL_STAB: f64 = 1e-9;

/// Discrete-time stochastic system with multiplicative channels and additive
/// noise, plus the quadratic cost data and the initial-state distribution.
#[derive(Debug, Clone)]
pub struct StochasticSystem {
    /// Drift `A`, `n x n`.
    pub a: DMatrix<f64>,
    /// Input map `B`, `n x m`.
    pub b: DMatrix<f64>,
    /// Multiplicative channels `(A_l, B_l)`, possibly empty.
    pub channels: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// Variance of each scalar multiplicative noise (shared across channels).
    pub sigma: f64,
    /// Additive-noise covariance `Sigma`, positive definite.
    pub sigma_w: SymMatrix,
    /// State weight `Q`, positive semidefinite.
    pub q: SymMatrix,
    /// Input weight `R`, positive definite.
    pub r: SymMatrix,
    /// Discount factor in `(0, 1)`.
    pub alpha: f64,
    /// Initial-state mean.
    pub x0_mean: DVector<f64>,
    /// Initial-state covariance, positive definite.
    pub x0_cov: SymMatrix,
}

impl StochasticSystem {
    /// Validates and wraps the system data.
    ///
    /// Checks every invariant the synthesis routines rely on: consistent
    /// dimensions, `Sigma > 0`, `Sigma_0 > 0`, `Q >= 0`, `R > 0`,
    /// `0 < alpha < 1`, `sigma > 0`.  Violations yield
    /// [`Error::InvalidConfig`] with a description of the offending field.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        channels: Vec<(DMatrix<f64>, DMatrix<f64>)>,
        sigma: f64,
        sigma_w: SymMatrix,
        q: SymMatrix,
        r: SymMatrix,
        alpha: f64,
        x0_mean: DVector<f64>,
        x0_cov: SymMatrix,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let n = a.nrows();
        let m = b.ncols();
        if !a.is_square() || n == 0 {
            return bad(format!("A must be square and non-empty, got {}x{}", n, a.ncols()));
        }
        if b.nrows() != n || m == 0 {
            return bad(format!("B must be {n}x(m>=1), got {}x{}", b.nrows(), m));
        }
        for (l, (al, bl)) in channels.iter().enumerate() {
            if al.nrows() != n || al.ncols() != n || bl.nrows() != n || bl.ncols() != m {
                return bad(format!(
                    "channel {l}: expected A_l {n}x{n} and B_l {n}x{m}, got {}x{} and {}x{}",
                    al.nrows(),
                    al.ncols(),
                    bl.nrows(),
                    bl.ncols()
                ));
            }
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {sigma}"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {alpha}"));
        }
        if sigma_w.dim() != n {
            return bad(format!("Sigma must be {n}x{n}, got {0}x{0}", sigma_w.dim()));
        }
        if q.dim() != n {
            return bad(format!("Q must be {n}x{n}, got {0}x{0}", q.dim()));
        }
        if r.dim() != m {
            return bad(format!("R must be {m}x{m}, got {0}x{0}", r.dim()));
        }
        if x0_mean.len() != n {
            return bad(format!("x0_mean must have length {n}, got {}", x0_mean.len()));
        }
        if x0_cov.dim() != n {
            return bad(format!("x0_cov must be {n}x{n}, got {0}x{0}", x0_cov.dim()));
        }
        if sigma_w.min_eig() <= 0.0 {
            return bad(format!(
                "Sigma must be positive definite (min eigenvalue {:.3e})",
                sigma_w.min_eig()
            ));
        }
        if x0_cov.min_eig() <= 0.0 {
            return bad(format!(
                "x0_cov must be positive definite (min eigenvalue {:.3e})",
                x0_cov.min_eig()
            ));
        }
        if q.min_eig() < -1e-12 {
            return bad(format!(
                "Q must be positive semidefinite (min eigenvalue {:.3e})",
                q.min_eig()
            ));
        }
        if r.min_eig() <= 0.0 {
            return bad(format!(
                "R must be positive definite (min eigenvalue {:.3e})",
                r.min_eig()
            ));
        }
        let finite = a.iter().all(|v| v.is_finite())
            && b.iter().all(|v| v.is_finite())
            && channels
                .iter()
                .all(|(al, bl)| al.iter().all(|v| v.is_finite()) && bl.iter().all(|v| v.is_finite()))
            && x0_mean.iter().all(|v| v.is_finite());
        if !finite {
            return bad("system matrices must have finite entries".into());
        }
        Ok(Self {
            a,
            b,
            channels,
            sigma,
            sigma_w,
            q,
            r,
            alpha,
            x0_mean,
            x0_cov,
        })
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `m`.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Stacked dimension `n + m` of `z = (x, u)`.
    pub fn z_dim(&self) -> usize {
        self.n() + self.m()
    }

    /// Number of multiplicative channels `M`.
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Stage-cost weight `W = Q (+) R` on `z = (x, u)`.
    pub fn w(&self) -> SymMatrix {
        let w = matcore::direct_sum(&[self.q.matrix(), self.r.matrix()])
            .expect("two blocks are never empty");
        SymMatrix::from_exact(w)
    }

    /// Initial second moment `X_0 = Sigma_0 + mu_0 mu_0^T`.
    pub fn x0_second_moment(&self) -> SymMatrix {
        SymMatrix::new(self.x0_cov.matrix() + &self.x0_mean * self.x0_mean.transpose())
    }
}

/// A static state feedback `u = L x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain {
    /// Feedback matrix, `m x n`.
    pub l: DMatrix<f64>,
}

impl Gain {
    /// Wraps a feedback matrix, rejecting non-finite entries.
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        if !l.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(
                "gain matrix must have finite entries".into(),
            ));
        }
        Ok(Self { l })
    }

    /// The stacked selector `Lbar = [I; L]`, mapping `x` to `z = (x, Lx)`.
    pub fn lbar(&self) -> DMatrix<f64> {
        let n = self.l.ncols();
        let m = self.l.nrows();
        let mut out = DMatrix::zeros(n + m, n);
        out.view_mut((0, 0), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        out.view_mut((n, 0), (m, n)).copy_from(&self.l);
        out
    }
}

fn check_gain_dims(sys: &StochasticSystem, gain: &Gain) -> Result<()> {
    if gain.l.nrows() != sys.m() || gain.l.ncols() != sys.n() {
        return Err(Error::DimensionMismatch {
            what: "gain",
            expected: format!("{}x{}", sys.m(), sys.n()),
            got: format!("{}x{}", gain.l.nrows(), gain.l.ncols()),
        });
    }
    Ok(())
}

/// Closed-loop maps `A + B L` and `A_l + B_l L` for every channel.
pub fn closed_loop_maps(sys: &StochasticSystem, gain: &Gain) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    check_gain_dims(sys, gain)?;
    let acl = &sys.a + &sys.b * &gain.l;
    let chans = sys
        .channels
        .iter()
        .map(|(al, bl)| al + bl * &gain.l)
        .collect();
    Ok((acl, chans))
}

/// Augmented closed-loop operators on `z = (x, u)`:
///
/// ```text
/// Abar_L   = [[A,   B  ], [L A,   L B  ]]
/// Abar^l_L = [[A_l, B_l], [L A_l, L B_l]]
/// ```
pub fn augmented_ops(sys: &StochasticSystem, gain: &Gain) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    check_gain_dims(sys, gain)?;
    let build = |top_a: &DMatrix<f64>, top_b: &DMatrix<f64>| {
        let (n, m) = (sys.n(), sys.m());
        let mut out = DMatrix::zeros(n + m, n + m);
        out.view_mut((0, 0), (n, n)).copy_from(top_a);
        out.view_mut((0, n), (n, m)).copy_from(top_b);
        out.view_mut((n, 0), (m, n)).copy_from(&(&gain.l * top_a));
        out.view_mut((n, n), (m, m)).copy_from(&(&gain.l * top_b));
        out
    };
    let abar = build(&sys.a, &sys.b);
    let chans = sys
        .channels
        .iter()
        .map(|(al, bl)| build(al, bl))
        .collect();
    Ok((abar, chans))
}

/// Kronecker generator of the closed-loop second-moment dynamics,
///
/// ```text
/// C_L = (A + BL) (x) (A + BL) + sigma * sum_l (A_l + B_l L) (x) (A_l + B_l L),
/// ```
///
/// an `n^2 x n^2` matrix.  Mean-square stability is `rho(C_L) < 1`.
pub fn closed_loop_generator(sys: &StochasticSystem, gain: &Gain) -> Result<DMatrix<f64>> {
    let (acl, chans) = closed_loop_maps(sys, gain)?;
    let mut c = kron(&acl, &acl);
    for ch in &chans {
        c += kron(ch, ch) * sys.sigma;
    }
    Ok(c)
}

/// Augmented generator `Cbar_L` built from the `Abar_L` blocks (acts on
/// `(n+m)^2`-vectorized second moments of `z`).
pub fn augmented_generator(sys: &StochasticSystem, gain: &Gain) -> Result<DMatrix<f64>> {
    let (abar, chans) = augmented_ops(sys, gain)?;
    let mut c = kron(&abar, &abar);
    for ch in &chans {
        c += kron(ch, ch) * sys.sigma;
    }
    Ok(c)
}

/// Mean-square admissibility: `rho(C_L) < 1 - TOL_STAB`.
///
/// Dimension mismatches and eigensolver failures conservatively report
/// `false` (an uncheckable gain is not certified).
pub fn is_admissible(sys: &StochasticSystem, gain: &Gain) -> bool {
    closed_loop_generator(sys, gain)
        .and_then(|c| spectral_radius(&c))
        .map(|rho| rho < 1.0 - TOL_STAB)
        .unwrap_or(false)
}

/// Solves the closed-loop Lyapunov equation
///
/// ```text
/// G = [alpha] * ( (A+BL)^T G (A+BL) + sigma sum_l (A_l+B_lL)^T G (A_l+B_lL) ) + Y
/// ```
///
/// (the bracketed discount applies when `discounted` is set) through the
/// vectorized linear system `(I - [alpha] C_L^T) vec(G) = vec(Y)`.
///
/// Preconditions: `rho([alpha] C_L) < 1` (otherwise [`Error::NotStable`])
/// and `Y > 0` (otherwise [`Error::InvalidConfig`]).  The solve is dense LU;
/// a condition estimate above `1e12` is reported as
/// [`Error::NumericalError`].  The result is symmetrized and verified
/// positive definite.
pub fn lyapunov_solve(
    sys: &StochasticSystem,
    gain: &Gain,
    y: &SymMatrix,
    discounted: bool,
) -> Result<SymMatrix> {
    let n = sys.n();
    if y.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "lyapunov_solve",
            expected: format!("{n}x{n}"),
            got: format!("{0}x{0}", y.dim()),
        });
    }
    if y.min_eig() <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lyapunov_solve requires Y > 0 (min eigenvalue {:.3e})",
            y.min_eig()
        )));
    }
    let factor = if discounted { sys.alpha } else { 1.0 };
    let c = closed_loop_generator(sys, gain)?;
    let rho = factor * spectral_radius(&c)?;
    if rho >= 1.0 - TOL_STAB {
        return Err(Error::NotStable { rho });
    }
    let sys_mat = DMatrix::identity(n * n, n * n) - c.transpose() * factor;
    let g_vec = solve_vectorized(&sys_mat, &vec_mat(y.matrix()), "lyapunov")?;
    let g = SymMatrix::new(unvec_mat(&g_vec, n, n)?);
    if g.min_eig() <= 0.0 {
        return Err(Error::NumericalError(format!(
            "Lyapunov solution lost positive definiteness (min eigenvalue {:.3e})",
            g.min_eig()
        )));
    }
    Ok(g)
}

/// Dense LU solve with an SVD-based condition estimate (`> 1e12` rejected).
fn solve_vectorized(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::NumericalError(format!(
            "{what}: vectorized system is ill-conditioned (cond {:.3e})",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::NumericalError(format!("{what}: LU solve failed")))
}

/// Discounted second moment of `z = (x, Lx)` along the closed loop: the
/// unique `S` with
///
/// ```text
/// S = alpha * ( Abar_L S Abar_L^T + sigma sum_l Abar^l_L S (Abar^l_L)^T )
///     + Lbar X_0 Lbar^T + alpha/(1-alpha) * Lbar Sigma Lbar^T.
/// ```
///
/// Solved as `(I - alpha Cbar_L) vec(S) = vec(RHS)`.  A singular system
/// matrix reports [`Error::NotStable`]; an indefinite solution reports
/// [`Error::Infeasible`]; the fixed-point residual is verified to
/// `1e-9 * (1 + ||S||_F)`.
pub fn primal_s(sys: &StochasticSystem, gain: &Gain) -> Result<SymMatrix> {
    check_gain_dims(sys, gain)?;
    let z = sys.z_dim();
    let cbar = augmented_generator(sys, gain)?;
    let sys_mat = DMatrix::identity(z * z, z * z) - &cbar * sys.alpha;

    // Singularity of I - alpha*Cbar is exactly failure of the discounted
    // stability condition rho(alpha*Cbar) < 1 on the solvability boundary.
    let svd = sys_mat.clone().svd(false, false);
    if svd.singular_values.min() <= 1e-12 * svd.singular_values.max().max(1.0) {
        let rho = sys.alpha * spectral_radius(&cbar)?;
        return Err(Error::NotStable { rho });
    }

    let lbar = gain.lbar();
    let x0 = sys.x0_second_moment();
    let rhs_mat = &lbar * x0.matrix() * lbar.transpose()
        + &lbar * sys.sigma_w.matrix() * lbar.transpose() * (sys.alpha / (1.0 - sys.alpha));
    let s_vec = solve_vectorized(&sys_mat, &vec_mat(&rhs_mat), "primal_s")?;
    let s = SymMatrix::new(unvec_mat(&s_vec, z, z)?);

    let tol = 1e-9 * (1.0 + s.norm());
    if s.min_eig() <= -tol {
        return Err(Error::Infeasible(format!(
            "second-moment matrix is indefinite (min eigenvalue {:.3e})",
            s.min_eig()
        )));
    }
    // Plug back into the fixed-point equation.
    let (abar, chans) = augmented_ops(sys, gain)?;
    let mut recon = &abar * s.matrix() * abar.transpose();
    for ch in &chans {
        recon += ch * s.matrix() * ch.transpose() * sys.sigma;
    }
    let residual = (s.matrix() - (recon * sys.alpha + rhs_mat)).norm();
    if residual > tol {
        return Err(Error::NumericalError(format!(
            "primal_s fixed-point residual {residual:.3e} exceeds tolerance {tol:.3e}"
        )));
    }
    Ok(s)
}

/// Exact discounted cost of a gain: `J(L) = trace(W S)` with `S` from
/// [`primal_s`].
pub fn cost_of_gain(sys: &StochasticSystem, gain: &Gain) -> Result<f64> {
    let s = primal_s(sys, gain)?;
    Ok((sys.w().matrix() * s.matrix()).trace())
}

/// Closed-form optimal cost for a value matrix `P`:
///
/// ```text
/// J = trace(P X_0) + alpha/(1-alpha) * trace(P Sigma).
/// ```
pub fn optimal_cost(sys: &StochasticSystem, p: &SymMatrix) -> f64 {
    let x0 = sys.x0_second_moment();
    (p.matrix() * x0.matrix()).trace()
        + sys.alpha / (1.0 - sys.alpha) * (p.matrix() * sys.sigma_w.matrix()).trace()
}
