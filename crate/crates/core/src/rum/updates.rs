//! The ADMM subproblem solutions, one function per block.
//!
//! Every function reads the current [`SolverState`] and returns the new
//! value of one block; the driver in [`super::run`] applies them in order.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{PriorKind, SolverState};
use crate::cg::{cg_solve, CgOptions, ScaledHelmholtz};
use crate::cube::{divergence_adjoint_into, forward_difference_into, ImageGeometry};
use crate::denoise::Denoiser;
use crate::{Error, Result};

/// Soft threshold `sign(v)·max(|v| − κ, 0)`.
#[inline]
pub fn shrink(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

pub fn shrink_slice(v: &[f64], kappa: f64) -> Vec<f64> {
    v.iter().map(|&x| shrink(x, kappa)).collect()
}

pub(crate) fn row_vec(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.row(j).iter().copied().collect()
}

/// Stacked `[∇ₓz; ∇ᵧz]` as one `2N` vector.
pub(crate) fn stacked_gradient(z: &[f64], geom: ImageGeometry) -> Vec<f64> {
    let n = z.len();
    let mut out = vec![0.0; 2 * n];
    let (dx, dy) = out.split_at_mut(n);
    forward_difference_into(z, geom, dx, dy);
    out
}

pub(crate) fn stacked_divergence(g: &[f64], geom: ImageGeometry) -> Vec<f64> {
    let n = geom.len();
    let mut out = vec![0.0; n];
    divergence_adjoint_into(&g[..n], &g[n..], geom, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct XUpdate {
    pub x: DMatrix<f64>,
    /// Total inner CG iterations over all rows.
    pub cg_iters: usize,
    pub cg_converged: bool,
}

/// Right-hand side shared by both priors without the prior term:
/// `(M − C)·diag(s) + (W − E)`.
fn base_rhs(state: &SolverState) -> DMatrix<f64> {
    let mut rhs = &state.m - &state.c;
    for (k, mut col) in rhs.column_iter_mut().enumerate() {
        col *= state.s[k];
    }
    rhs += &state.w;
    rhs -= &state.e;
    rhs
}

/// TV branch: each row solves `x_j(diag(s)² − Δ + I) = [(M−C)diag(s)]_j + ∇ᵀ(u_j − d_j) + [W−E]_j`
/// by warm-started conjugate gradients.
pub fn update_x_tv(state: &SolverState, cg: CgOptions) -> Result<XUpdate> {
    let geom = state.geometry;
    let base = base_rhs(state);
    let s2: Vec<f64> = state.s.iter().map(|v| v * v).collect();
    let op = ScaledHelmholtz::new(geom, &s2)?;
    let l = state.x.nrows();
    let rows: Vec<_> = (0..l)
        .into_par_iter()
        .map(|j| {
            let diff: Vec<f64> = state.u[j].iter().zip(&state.d[j]).map(|(u, d)| u - d).collect();
            let div = stacked_divergence(&diff, geom);
            let rhs: Vec<f64> = base.row(j).iter().zip(&div).map(|(b, v)| b + v).collect();
            let x0 = row_vec(&state.x, j);
            cg_solve(|z, o| op.apply(z, o), &rhs, Some(&x0), cg)
        })
        .collect::<Result<_>>()?;
    let mut x = DMatrix::zeros(l, geom.len());
    let mut cg_iters = 0;
    let mut cg_converged = true;
    for (j, out) in rows.into_iter().enumerate() {
        cg_iters += out.iterations;
        cg_converged &= out.converged;
        for (k, v) in out.x.into_iter().enumerate() {
            x[(j, k)] = v;
        }
    }
    Ok(XUpdate { x, cg_iters, cg_converged })
}

/// PnP branch closed form: column `k` of `(M−C)diag(s) + (U − D) + (W − E)`
/// divided by `s_k² + 2`.
pub fn update_x_pnp(state: &SolverState) -> DMatrix<f64> {
    let mut x = base_rhs(state);
    for j in 0..x.nrows() {
        for k in 0..x.ncols() {
            x[(j, k)] += state.u[j][k] - state.d[j][k];
        }
    }
    for (k, mut col) in x.column_iter_mut().enumerate() {
        col /= state.s[k] * state.s[k] + 2.0;
    }
    x
}

/// Divides each column by its sum; columns with `|sum| < 1e-12` become
/// uniform `1/L`. Returns the indices of those fallback columns.
pub fn normalize_columns(x: &mut DMatrix<f64>) -> Vec<usize> {
    let l = x.nrows() as f64;
    let mut flagged = Vec::new();
    for (k, mut col) in x.column_iter_mut().enumerate() {
        let sum = col.sum();
        if sum.abs() < 1e-12 {
            col.fill(1.0 / l);
            flagged.push(k);
        } else {
            col /= sum;
        }
    }
    flagged
}

/// Per-pixel closed form `s_k = (x_kᵀ(m_k − c_k) + t_k − g_k) / (x_kᵀx_k + 1)`.
pub fn update_s(state: &SolverState) -> DVector<f64> {
    DVector::from_fn(state.s.len(), |k, _| {
        let xk = state.x.column(k);
        let num = xk.dot(&(state.m.column(k) - state.c.column(k))) + state.t[k] - state.g[k];
        num / (xk.dot(&xk) + 1.0)
    })
}

/// `(AᵀA + ρI)` factored once per run.
#[derive(Debug, Clone)]
pub struct MSolver {
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    aty: DMatrix<f64>,
    rho: f64,
}

impl MSolver {
    pub fn new(a: &DMatrix<f64>, y: &DMatrix<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::Invalid(format!("rho must be positive, got {rho}")));
        }
        let l = a.ncols();
        let gram = a.transpose() * a + DMatrix::identity(l, l) * rho;
        let factor = gram
            .cholesky()
            .ok_or_else(|| Error::NonFinite("AᵀA + ρI is not positive definite".into()))?;
        Ok(Self { factor, aty: a.transpose() * y, rho })
    }

    /// `M = (AᵀA + ρI)⁻¹(AᵀY + ρ·X·diag(s) + ρC)`.
    pub fn solve(&self, x: &DMatrix<f64>, s: &DVector<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut rhs = x.clone();
        for (k, mut col) in rhs.column_iter_mut().enumerate() {
            col *= s[k];
        }
        rhs += c;
        rhs *= self.rho;
        rhs += &self.aty;
        self.factor.solve(&rhs)
    }
}

pub fn update_m(state: &SolverState, solver: &MSolver) -> DMatrix<f64> {
    solver.solve(&state.x, &state.s, &state.c)
}

/// `u_j = shrink(∇x_j + d_j, λ/ρ)` on the stacked gradient.
pub fn update_u_tv(state: &SolverState, lambda: f64, rho: f64) -> Vec<Vec<f64>> {
    let kappa = lambda / rho;
    (0..state.x.nrows())
        .into_par_iter()
        .map(|j| {
            let grad = stacked_gradient(&row_vec(&state.x, j), state.geometry);
            grad.iter().zip(&state.d[j]).map(|(g, d)| shrink(g + d, kappa)).collect()
        })
        .collect()
}

/// `u_j = denoise(x_j + d_j, σ = √(λ/ρ))`.
pub fn update_u_pnp(state: &SolverState, denoiser: &dyn Denoiser, lambda: f64, rho: f64) -> Result<Vec<Vec<f64>>> {
    let sigma = (lambda / rho).sqrt();
    (0..state.x.nrows())
        .into_par_iter()
        .map(|j| {
            let noisy: Vec<f64> = state.x.row(j).iter().zip(&state.d[j]).map(|(x, d)| x + d).collect();
            let out = denoiser
                .denoise(&noisy, state.geometry, sigma)
                .map_err(|e| Error::DenoiserFailed { row: j, message: e.to_string() })?;
            if out.len() != noisy.len() {
                return Err(Error::DenoiserFailed {
                    row: j,
                    message: format!("returned {} pixels, expected {}", out.len(), noisy.len()),
                });
            }
            Ok(out)
        })
        .collect()
}

/// `W = max(X + E, 0)`, `t = max(s + g, 0)`.
pub fn project_splits(state: &SolverState) -> (DMatrix<f64>, DVector<f64>) {
    let w = (&state.x + &state.e).map(|v| v.max(0.0));
    let t = (&state.s + &state.g).map(|v| v.max(0.0));
    (w, t)
}

/// Scaled dual ascent on the four constraint families.
pub fn update_duals(state: &mut SolverState) {
    let geom = state.geometry;
    let l = state.x.nrows();
    for k in 0..state.s.len() {
        for j in 0..l {
            state.c[(j, k)] += state.x[(j, k)] * state.s[k] - state.m[(j, k)];
        }
    }
    for j in 0..l {
        let xj = row_vec(&state.x, j);
        let lifted = match state.prior {
            PriorKind::Tv => stacked_gradient(&xj, geom),
            PriorKind::PnP => xj,
        };
        for ((d, a), u) in state.d[j].iter_mut().zip(&lifted).zip(&state.u[j]) {
            *d += a - u;
        }
    }
    state.e += &state.x - &state.w;
    state.g += &state.s - &state.t;
}
