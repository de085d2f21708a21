//! Non-iterative policy synthesis as a single semidefinite program.
//!
//! Both builders share the same decision variables: a symmetric
//! `F` of size `n+m` (the value-function block matrix) and a symmetric
//! `M` of size `n` (a lower bound on the Schur complement of `F`).  The
//! objective maximizes `Tr(M)`, and the first LMI
//! `[[F11 - M, F12], [F21, F22]] >= 0` pins `M` to the Schur complement
//! at the optimum.  The two routes differ only in how the second LMI —
//! the Bellman-type inequality — is expressed:
//!
//! * [`build_model_based`] uses the system matrices `(A, B, A_l, B_l)`
//!   directly, stacking one block per noise channel with the direct-sum
//!   construction.
//! * [`build_model_free`] replaces the system matrices by rollout data
//!   `(Z_i, Y_i)`: each sample contributes a congruence of the same
//!   inequality, and the sample blocks are summed (top-left) or stacked
//!   (off-diagonal and bottom-right).  No noise statistics enter.
//!
//! [`extract_policy`] turns a solved program into the feedback gain
//! `L = -F22^-1 F12^T` together with the value estimate `M`.

use nalgebra::{DMatrix, DVector};

use crate::datagen::{check_rank, Dataset, RANK_REL_TOL};
use crate::error::{Error, Result};
use crate::exec;
use crate::matcore::{smat, svec_len, SymMatrix};
use crate::sdpcore::{extract_block, LmiConstraint, SdpProblem, SdpSolution, SdpStatus, VarBlock};
use crate::sysmodel::{Gain, StochasticSystem};

/// Near-singularity threshold for the extracted `F22` block, relative to
/// its spectral norm.  Below it the gain solve is meaningless and
/// [`Error::SingularBlock`] is raised instead of regularizing silently.
pub const F22_TOL: f64 = 1e-8;

/// Data, weights, and discount for the model-free program.
///
/// Deliberately not a [`StochasticSystem`]: the model-free route must not
/// see `A`, `B`, the channel matrices, or any noise statistics.
#[derive(Debug, Clone)]
pub struct ModelFreeInputs {
    /// Collected rollouts; every `Z_i` must pass the excitation rank check.
    pub dataset: Dataset,
    /// Stage-cost weight `W = Q (+) R`, size `n + m`.
    pub w: SymMatrix,
    /// Discount factor in `(0, 1)`.
    pub alpha: f64,
}

/// The `t`-th unit basis matrix of the svec coordinates on `d x d`
/// symmetric matrices: `X = sum_t svec(X)_t * basis(d, t)`.
fn svec_basis(d: usize, t: usize) -> SymMatrix {
    let mut e = DVector::zeros(svec_len(d));
    e[t] = 1.0;
    smat(&e, d).expect("unit coordinate vector always has the exact svec length")
}

/// Shared frame of both programs: layout, objective, and LMI-1.
///
/// Variables are `F` (svec of size `n+m`, offset 0) then `M` (svec of size
/// `n`).  The objective maximizes `Tr(M)`; LMI-1 is
/// `[[F11 - M, F12], [F21, F22]] >= 0`.
fn common_frame(n: usize, m: usize) -> (usize, Vec<VarBlock>, DVector<f64>, Result<LmiConstraint>) {
    let z = n + m;
    let nf = svec_len(z);
    let nm = svec_len(n);
    let num_vars = nf + nm;
    let layout = vec![
        VarBlock {
            name: "F".into(),
            offset: 0,
            dim: z,
        },
        VarBlock {
            name: "M".into(),
            offset: nf,
            dim: n,
        },
    ];

    let mut objective = DVector::zeros(num_vars);
    for s in 0..nm {
        objective[nf + s] = svec_basis(n, s).trace();
    }

    let mut coeffs = Vec::with_capacity(nf + nm);
    for t in 0..nf {
        coeffs.push((t, svec_basis(z, t)));
    }
    for s in 0..nm {
        let es = svec_basis(n, s);
        let mut g = DMatrix::zeros(z, z);
        g.view_mut((0, 0), (n, n)).copy_from(&(es.matrix() * -1.0));
        coeffs.push((nf + s, SymMatrix::new(g)));
    }
    let lmi1 = LmiConstraint::new(SymMatrix::zeros(z), coeffs);
    (num_vars, layout, objective, lmi1)
}

/// Splits a basis matrix on `(x, u)` space into its `(1,1)`, `(1,2)`, and
/// `(2,2)` blocks.
fn split_basis(et: &SymMatrix, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let e = et.matrix();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
        e.view((n, n), (m, m)).into_owned(),
    )
}

/// Assembles the model-based program.
///
/// LMI-2 has size `(n+m) + (M+1)m` where `M` is the channel count.  The
/// noise variance is absorbed into the stacked dynamics rows,
/// `D_0 = [A B]`, `D_l = sqrt(sigma) [A_l B_l]`, so the constraint reads
///
/// ```text
/// [ alpha * sum_l D_l' F11 D_l - F + W   sqrt(alpha) D_l' F12 ...  ]
/// [ ...                                  diag(F22, ..., F22)       ]  >= 0
/// ```
///
/// Schur-complementing the repeated `F22` copies out recovers
/// `W - F + alpha (A'P(F)A + sigma A_l'P(F)A_l + ...)`-type terms with the
/// Schur complement `P(F)` intact for every `sigma` — which is why the
/// variance sits inside the congruence and not on the `F` blocks.
///
/// Every scalar variable's coefficient matrix is obtained by pushing its
/// unit basis matrix through these affine maps; `M` does not enter LMI-2.
pub fn build_model_based(sys: &StochasticSystem) -> Result<SdpProblem> {
    let n = sys.n();
    let m = sys.m();
    let z = n + m;
    let nf = svec_len(z);
    let (num_vars, layout, objective, lmi1) = common_frame(n, m);
    let lmi1 = lmi1?;

    // One stacked block per channel, the nominal pair first.
    let sqrt_sigma = sys.sigma.sqrt();
    let mut maps: Vec<DMatrix<f64>> = Vec::with_capacity(sys.num_channels() + 1);
    let mut d0 = DMatrix::zeros(n, z);
    d0.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    d0.view_mut((0, n), (n, m)).copy_from(&sys.b);
    maps.push(d0);
    for (al, bl) in &sys.channels {
        let mut dl = DMatrix::zeros(n, z);
        dl.view_mut((0, 0), (n, n)).copy_from(&(al * sqrt_sigma));
        dl.view_mut((0, n), (n, m)).copy_from(&(bl * sqrt_sigma));
        maps.push(dl);
    }

    let dim2 = z + maps.len() * m;
    let mut g0 = DMatrix::zeros(dim2, dim2);
    g0.view_mut((0, 0), (z, z)).copy_from(sys.w().matrix());

    let alpha = sys.alpha;
    let sqrt_alpha = alpha.sqrt();
    let coeffs2 = exec::map_range(nf, |t| {
        let et = svec_basis(z, t);
        let (e11, e12, e22) = split_basis(&et, n, m);
        let mut g = DMatrix::zeros(dim2, dim2);
        let mut tl = et.matrix() * -1.0;
        for d in &maps {
            tl += (d.transpose() * &e11 * d) * alpha;
        }
        g.view_mut((0, 0), (z, z)).copy_from(&tl);
        for (l, d) in maps.iter().enumerate() {
            let od = (d.transpose() * &e12) * sqrt_alpha;
            g.view_mut((0, z + l * m), (z, m)).copy_from(&od);
            g.view_mut((z + l * m, 0), (m, z)).copy_from(&od.transpose());
            g.view_mut((z + l * m, z + l * m), (m, m)).copy_from(&e22);
        }
        (t, SymMatrix::new(g))
    });
    let lmi2 = LmiConstraint::new(SymMatrix::new(g0), coeffs2)?;

    let problem = SdpProblem {
        num_vars,
        objective,
        lmis: vec![lmi1, lmi2],
        var_layout: layout,
    };
    problem.validate()?;
    Ok(problem)
}

/// Assembles the model-free program from rollout data alone.
///
/// LMI-2 has size `K + Nm`: the top-left `K x K` block is the per-sample
/// sum `sum_i [alpha Y_i' F11 Y_i - Z_i' (F - W) Z_i]`, the off-diagonal
/// stacks `sqrt(alpha) Y_i' F12`, and the bottom-right is
/// `diag(F22, ..., F22)` (`N` copies).  The `1/N` averaging factor is
/// dropped: a positive scale does not change feasibility.  Summing the
/// per-sample top-left blocks directly avoids materializing the `NK`-sized
/// direct-sum operators while producing the identical matrix.
pub fn build_model_free(inputs: &ModelFreeInputs) -> Result<SdpProblem> {
    let meta = &inputs.dataset.meta;
    let (n, m, k, nro) = (meta.n, meta.m, meta.k, meta.num_rollouts);
    let z = n + m;
    if inputs.w.dim() != z {
        return Err(Error::DimensionMismatch {
            what: "model-free weight W",
            expected: format!("{z}x{z}"),
            got: format!("{0}x{0}", inputs.w.dim()),
        });
    }
    if !(inputs.alpha > 0.0 && inputs.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {}",
            inputs.alpha
        )));
    }
    if k < z {
        return Err(Error::InvalidConfig(format!(
            "rollout length K = {k} must be at least n + m = {z}"
        )));
    }
    if nro == 0 || inputs.dataset.samples.len() != nro {
        return Err(Error::InvalidConfig(format!(
            "dataset holds {} samples but meta says N = {nro}",
            inputs.dataset.samples.len()
        )));
    }
    for (i, (zi, yi)) in inputs.dataset.samples.iter().enumerate() {
        if zi.nrows() != z || zi.ncols() != k || yi.nrows() != n || yi.ncols() != k {
            return Err(Error::DimensionMismatch {
                what: "dataset sample",
                expected: format!("Z {z}x{k}, Y {n}x{k}"),
                got: format!("Z {}x{}, Y {}x{} (sample {i})", zi.nrows(), zi.ncols(), yi.nrows(), yi.ncols()),
            });
        }
        let (ok, sigma_min) = check_rank(zi, RANK_REL_TOL);
        if !ok {
            return Err(Error::RankDeficientData {
                index: i,
                sigma_min,
            });
        }
    }

    let nf = svec_len(z);
    let (num_vars, layout, objective, lmi1) = common_frame(n, m);
    let lmi1 = lmi1?;

    let dim2 = k + nro * m;
    let mut g0 = DMatrix::zeros(dim2, dim2);
    let w = inputs.w.matrix();
    let mut tl0 = DMatrix::zeros(k, k);
    for (zi, _) in &inputs.dataset.samples {
        tl0 += zi.transpose() * w * zi;
    }
    g0.view_mut((0, 0), (k, k)).copy_from(&tl0);

    let alpha = inputs.alpha;
    let sqrt_alpha = alpha.sqrt();
    let samples = &inputs.dataset.samples;
    let coeffs2 = exec::map_range(nf, |t| {
        let et = svec_basis(z, t);
        let (e11, e12, e22) = split_basis(&et, n, m);
        let mut g = DMatrix::zeros(dim2, dim2);
        let mut tl = DMatrix::zeros(k, k);
        for (zi, yi) in samples {
            tl += (yi.transpose() * &e11 * yi) * alpha;
            tl -= zi.transpose() * et.matrix() * zi;
        }
        g.view_mut((0, 0), (k, k)).copy_from(&tl);
        for (i, (_, yi)) in samples.iter().enumerate() {
            let od = (yi.transpose() * &e12) * sqrt_alpha;
            g.view_mut((0, k + i * m), (k, m)).copy_from(&od);
            g.view_mut((k + i * m, 0), (m, k)).copy_from(&od.transpose());
            g.view_mut((k + i * m, k + i * m), (m, m)).copy_from(&e22);
        }
        (t, SymMatrix::new(g))
    });
    let lmi2 = LmiConstraint::new(SymMatrix::new(g0), coeffs2)?;

    let problem = SdpProblem {
        num_vars,
        objective,
        lmis: vec![lmi1, lmi2],
        var_layout: layout,
    };
    problem.validate()?;
    Ok(problem)
}

/// Recovers the feedback gain and value estimates from a solved program.
///
/// Returns `(L, P_hat, F_hat)` where `L = -F22^-1 F12'` via a symmetric
/// positive definite solve, `P_hat` is the `M` block, and `F_hat` the full
/// `F` block.  Requires a usable solver status ([`SdpStatus::Optimal`] or
/// [`SdpStatus::Inaccurate`]) and `F22 > 0` within [`F22_TOL`].
pub fn extract_policy(
    sol: &SdpSolution,
    layout: &[VarBlock],
    n: usize,
    m: usize,
) -> Result<(Gain, SymMatrix, SymMatrix)> {
    match sol.status {
        SdpStatus::Optimal | SdpStatus::Inaccurate => {}
        other => {
            return Err(Error::Infeasible(format!(
                "solver status {other:?} does not certify a solution"
            )))
        }
    }
    let f_hat = extract_block(sol, layout, "F")?;
    let p_hat = extract_block(sol, layout, "M")?;
    if f_hat.dim() != n + m || p_hat.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "extract_policy blocks",
            expected: format!("F {0}x{0}, M {n}x{n}", n + m),
            got: format!("F {0}x{0}, M {1}x{1}", f_hat.dim(), p_hat.dim()),
        });
    }
    let f22 = f_hat.principal_block(n, m);
    let min_eig = f22.min_eig();
    if min_eig <= F22_TOL * (1.0 + f22.spectral_norm()) {
        return Err(Error::SingularBlock {
            what: "F22",
            min_eig,
        });
    }
    let f12 = f_hat.matrix().view((0, n), (n, m)).into_owned();
    let chol = f22
        .matrix()
        .clone()
        .cholesky()
        .ok_or(Error::SingularBlock {
            what: "F22",
            min_eig,
        })?;
    let l = -chol.solve(&f12.transpose());
    Ok((Gain::new(l)?, p_hat, f_hat))
}
