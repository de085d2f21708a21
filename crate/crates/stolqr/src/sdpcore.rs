//! Semidefinite-program representation and a deterministic solver.
//!
//! A problem is: maximize `c' x` subject to a list of affine linear matrix
//! inequalities `G_0 + sum_j x_j G_j >= 0`.  Decision variables are grouped
//! into named symmetric blocks (each block occupying the `svec` span of its
//! matrix); the layout lets callers rebuild matrices from the flat optimizer.
//!
//! Solving delegates to the Clarabel interior-point solver behind this
//! contract.  Results are post-verified: the feasibility residual is
//! recomputed from scratch with [`evaluate_lmi`], and a nominally optimal
//! answer that misses the requested tolerances is demoted to
//! [`SdpStatus::Inaccurate`].  Clarabel is deterministic, so identical
//! problems give identical solutions.
//!
//! A plain-text SDPA sparse writer ([`write_sdpa`]) is included for
//! debugging problem assemblies against external solvers.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matcore::{smat, svec_len, SymMatrix};

/// Default feasibility tolerance.
pub const DEFAULT_TOL_FEAS: f64 = 1e-8;
/// Default relative-gap tolerance.
pub const DEFAULT_TOL_GAP: f64 = 1e-8;
/// Default interior-point iteration cap.
pub const DEFAULT_MAX_ITER: u32 = 500;

/// A named span of the decision vector holding one symmetric matrix block
/// of side `dim` (occupying `dim (dim + 1) / 2` scalars from `offset`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarBlock {
    /// Block name, e.g. `"F"` or `"M"`.
    pub name: String,
    /// First scalar index in the decision vector.
    pub offset: usize,
    /// Matrix side length.
    pub dim: usize,
}

impl VarBlock {
    /// Number of scalar variables in this block.
    pub fn span_len(&self) -> usize {
        svec_len(self.dim)
    }
}

/// One affine LMI `G_0 + sum_j x_j G_j >= 0`.
#[derive(Debug, Clone)]
pub struct LmiConstraint {
    /// Matrix side length of the inequality.
    pub dim: usize,
    /// Constant block `G_0`.
    pub const_block: SymMatrix,
    /// Sparse coefficients, sorted by variable index, at most one per
    /// variable.
    coeffs: Vec<(usize, SymMatrix)>,
}

impl LmiConstraint {
    /// Builds a constraint, sorting coefficients by variable index.
    ///
    /// Rejects mismatched coefficient dimensions and duplicate indices.
    pub fn new(
        const_block: SymMatrix,
        mut coeffs: Vec<(usize, SymMatrix)>,
    ) -> Result<Self> {
        let dim = const_block.dim();
        coeffs.sort_by_key(|(j, _)| *j);
        for w in coeffs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidConfig(format!(
                    "duplicate LMI coefficient for variable {}",
                    w[0].0
                )));
            }
        }
        for (j, g) in &coeffs {
            if g.dim() != dim {
                return Err(Error::DimensionMismatch {
                    what: "LmiConstraint",
                    expected: format!("{dim}x{dim}"),
                    got: format!("{0}x{0} (variable {j})", g.dim()),
                });
            }
        }
        Ok(Self {
            dim,
            const_block,
            coeffs,
        })
    }

    /// Sparse coefficient list, sorted by variable index.
    pub fn coeffs(&self) -> &[(usize, SymMatrix)] {
        &self.coeffs
    }
}

/// A linear SDP in inequality form: maximize `c' x` over the LMIs.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    /// Total scalar decision variables.
    pub num_vars: usize,
    /// Objective vector `c` (maximization).
    pub objective: DVector<f64>,
    /// Constraint list.
    pub lmis: Vec<LmiConstraint>,
    /// Named blocks partitioning the decision vector.
    pub var_layout: Vec<VarBlock>,
}

impl SdpProblem {
    /// Checks the structural invariants: objective length, coefficient
    /// index ranges, and that the layout spans are disjoint and cover
    /// `[0, num_vars)`.
    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::DimensionMismatch {
                what: "SdpProblem objective",
                expected: format!("{}", self.num_vars),
                got: format!("{}", self.objective.len()),
            });
        }
        for (k, lmi) in self.lmis.iter().enumerate() {
            if let Some((j, _)) = lmi.coeffs.iter().find(|(j, _)| *j >= self.num_vars) {
                return Err(Error::InvalidConfig(format!(
                    "LMI {k} references variable {j} beyond num_vars {}",
                    self.num_vars
                )));
            }
        }
        let mut spans: Vec<(usize, usize)> = self
            .var_layout
            .iter()
            .map(|b| (b.offset, b.offset + b.span_len()))
            .collect();
        spans.sort_unstable();
        let mut cursor = 0;
        for (lo, hi) in spans {
            if lo != cursor {
                return Err(Error::InvalidConfig(format!(
                    "variable layout has a gap or overlap at index {cursor}"
                )));
            }
            cursor = hi;
        }
        if cursor != self.num_vars {
            return Err(Error::InvalidConfig(format!(
                "variable layout covers {cursor} of {} variables",
                self.num_vars
            )));
        }
        Ok(())
    }
}

/// Solver verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    /// KKT conditions met at the requested tolerances (re-verified here).
    Optimal,
    /// A usable iterate that misses the requested tolerances.
    Inaccurate,
    /// Primal infeasibility certificate found.
    Infeasible,
    /// Dual infeasibility certificate found (objective unbounded above).
    Unbounded,
}

/// Solver output.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Optimizer (meaningful for `Optimal`/`Inaccurate`).
    pub x: DVector<f64>,
    /// Achieved objective `c' x`.
    pub objective: f64,
    /// `max` over LMIs of `max(0, -min_eig)`, recomputed independently.
    pub feas_residual: f64,
    /// Relative primal-dual objective gap reported by the solver.
    pub gap: f64,
    /// Verdict.
    pub status: SdpStatus,
}

/// Evaluates `G_0 + sum_j x_j G_j`.
///
/// Fails when a coefficient index is out of range for `x`.
pub fn evaluate_lmi(c: &LmiConstraint, x: &DVector<f64>) -> Result<SymMatrix> {
    let mut acc = c.const_block.matrix().clone();
    for (j, g) in &c.coeffs {
        if *j >= x.len() {
            return Err(Error::InvalidConfig(format!(
                "LMI coefficient index {j} out of range for {} variables",
                x.len()
            )));
        }
        acc += g.matrix() * x[*j];
    }
    Ok(SymMatrix::from_exact(acc))
}

/// Feasibility residual of a candidate point: worst eigenvalue violation
/// across all LMIs.
pub fn feasibility_residual(p: &SdpProblem, x: &DVector<f64>) -> Result<f64> {
    let mut worst = 0.0f64;
    for lmi in &p.lmis {
        worst = worst.max(-evaluate_lmi(lmi, x)?.min_eig());
    }
    Ok(worst.max(0.0))
}

/// Rebuilds the named matrix block from a solution vector.
pub fn extract_block(sol: &SdpSolution, layout: &[VarBlock], name: &str) -> Result<SymMatrix> {
    let block = layout
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown variable block `{name}`")))?;
    let span = sol
        .x
        .rows(block.offset, block.span_len())
        .into_owned();
    smat(&span, block.dim)
}

/// Maximizes the problem with Clarabel at the given tolerances.
///
/// Statuses map as: solved → [`SdpStatus::Optimal`] (demoted to
/// `Inaccurate` if independent re-verification misses the tolerances),
/// almost-solved or iteration-limited → `Inaccurate`, infeasibility
/// certificates → `Infeasible`/`Unbounded`.  A stalled line search is
/// surfaced as [`Error::NoProgress`] and solver-internal numerical failures
/// as [`Error::NumericalError`].
pub fn solve_sdp(p: &SdpProblem, tol_feas: f64, tol_gap: f64) -> Result<SdpSolution> {
    solve_sdp_with(p, tol_feas, tol_gap, DEFAULT_MAX_ITER)
}

/// [`solve_sdp`] with an explicit interior-point iteration cap.
pub fn solve_sdp_with(
    p: &SdpProblem,
    tol_feas: f64,
    tol_gap: f64,
    max_iter: u32,
) -> Result<SdpSolution> {
    p.validate()?;
    backend::solve(p, tol_feas, tol_gap, max_iter)
}

/// [`solve_sdp`] at the default tolerances.
pub fn solve_sdp_default(p: &SdpProblem) -> Result<SdpSolution> {
    solve_sdp(p, DEFAULT_TOL_FEAS, DEFAULT_TOL_GAP)
}

/// Serializes the problem in sparse SDPA format (for external debugging).
///
/// SDPA states problems as `min c_sdpa' x` with `X = sum_j x_j F_j - F_0 >= 0`;
/// this maximization problem maps onto it with `c_sdpa = -c`, `F_j = G_j`,
/// and `F_0 = -G_0`.  Entries are written 1-based, upper triangle only.
pub fn write_sdpa(p: &SdpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "* stolqr SDP dump (maximize c'x mapped to SDPA min form)");
    let _ = writeln!(out, "{}", p.num_vars);
    let _ = writeln!(out, "{}", p.lmis.len());
    let sizes: Vec<String> = p.lmis.iter().map(|l| l.dim.to_string()).collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let obj: Vec<String> = p
        .objective
        .iter()
        .map(|&c| format!("{:.16e}", -c))
        .collect();
    let _ = writeln!(out, "{}", obj.join(" "));
    let mut emit = |mat_no: usize, blk: usize, s: &SymMatrix, negate: bool| {
        for i in 0..s.dim() {
            for j in i..s.dim() {
                let v = if negate { -s.get(i, j) } else { s.get(i, j) };
                if v != 0.0 {
                    let _ = writeln!(out, "{mat_no} {blk} {} {} {:.16e}", i + 1, j + 1, v);
                }
            }
        }
    };
    for (k, lmi) in p.lmis.iter().enumerate() {
        emit(0, k + 1, &lmi.const_block, true);
    }
    for (k, lmi) in p.lmis.iter().enumerate() {
        for (j, g) in &lmi.coeffs {
            emit(j + 1, k + 1, g, false);
        }
    }
    out
}

/// Clarabel bridge: cone assembly, svec reordering, status mapping.
mod backend {
    use super::*;
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    };

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    /// Clarabel's PSD triangle cone stacks the upper triangle
    /// column-by-column (this crate's `svec` is row-major); off-diagonal
    /// scaling by `sqrt(2)` is shared.
    fn svec_clarabel(s: &SymMatrix) -> Vec<f64> {
        let n = s.dim();
        let mut out = Vec::with_capacity(svec_len(n));
        for j in 0..n {
            for i in 0..j {
                out.push(SQRT2 * s.get(i, j));
            }
            out.push(s.get(j, j));
        }
        out
    }

    pub(super) fn solve(
        p: &SdpProblem,
        tol_feas: f64,
        tol_gap: f64,
        max_iter: u32,
    ) -> Result<SdpSolution> {
        // Conic form: minimize q'x subject to A x + s = b, s in PSD cones,
        // with q = -c, b = stacked svec(G_0), column j of A = -svec(G_j).
        let rows_total: usize = p.lmis.iter().map(|l| svec_len(l.dim)).sum();
        let row_offsets: Vec<usize> = p
            .lmis
            .iter()
            .scan(0usize, |acc, l| {
                let off = *acc;
                *acc += svec_len(l.dim);
                Some(off)
            })
            .collect();

        let mut b = Vec::with_capacity(rows_total);
        for lmi in &p.lmis {
            b.extend(svec_clarabel(&lmi.const_block));
        }

        let mut colptr = Vec::with_capacity(p.num_vars + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for j in 0..p.num_vars {
            for (k, lmi) in p.lmis.iter().enumerate() {
                if let Ok(pos) = lmi.coeffs.binary_search_by_key(&j, |(idx, _)| *idx) {
                    let col = svec_clarabel(&lmi.coeffs[pos].1);
                    for (r, v) in col.into_iter().enumerate() {
                        if v != 0.0 {
                            rowval.push(row_offsets[k] + r);
                            nzval.push(-v);
                        }
                    }
                }
            }
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(rows_total, p.num_vars, colptr, rowval, nzval);
        let pmat = CscMatrix::zeros((p.num_vars, p.num_vars));
        let q: Vec<f64> = p.objective.iter().map(|&c| -c).collect();
        let cones: Vec<SupportedConeT<f64>> = p
            .lmis
            .iter()
            .map(|l| SupportedConeT::PSDTriangleConeT(l.dim))
            .collect();

        let settings = DefaultSettings {
            verbose: false,
            max_iter,
            tol_gap_abs: tol_gap,
            tol_gap_rel: tol_gap,
            tol_feas,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::NumericalError(format!("solver setup failed: {e:?}")))?;
        solver.solve();
        let solution = &solver.solution;

        let status = match solution.status {
            SolverStatus::Solved => SdpStatus::Optimal,
            SolverStatus::AlmostSolved
            | SolverStatus::MaxIterations
            | SolverStatus::MaxTime => SdpStatus::Inaccurate,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SdpStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SdpStatus::Unbounded
            }
            SolverStatus::InsufficientProgress => return Err(Error::NoProgress),
            other => {
                return Err(Error::NumericalError(format!(
                    "solver terminated with status {other:?}"
                )))
            }
        };

        let x = DVector::from_column_slice(&solution.x);
        let objective = p.objective.dot(&x);
        let (feas_residual, gap) = match status {
            SdpStatus::Optimal | SdpStatus::Inaccurate => {
                let feas = feasibility_residual(p, &x)?;
                let gap = (solution.obj_val - solution.obj_val_dual).abs()
                    / (1.0 + solution.obj_val.abs());
                (feas, gap)
            }
            // Certificate statuses: x is a ray, not a feasible point.
            _ => (f64::INFINITY, f64::INFINITY),
        };
        let status = if status == SdpStatus::Optimal && (feas_residual > tol_feas || gap > tol_gap)
        {
            SdpStatus::Inaccurate
        } else {
            status
        };
        Ok(SdpSolution {
            x,
            objective,
            feas_residual,
            gap,
            status,
        })
    }
}
