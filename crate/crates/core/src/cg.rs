//! Conjugate gradients for symmetric positive-definite pixel-space systems.

use crate::cube::{dot, forward_difference_into, divergence_adjoint_into, ImageGeometry};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `‖Ax − b‖ ≤ tol·‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final relative residual `‖Ax − b‖ / ‖b‖` (absolute when `b = 0`).
    pub relative_residual: f64,
}

/// Solves `apply(x) = rhs` by conjugate gradients, starting from `initial`
/// (zero when `None`). Non-convergence is reported through
/// [`CgOutcome::converged`]; the best iterate is returned either way.
pub fn cg_solve<F>(apply: F, rhs: &[f64], initial: Option<&[f64]>, opts: CgOptions) -> Result<CgOutcome>
where
    F: Fn(&[f64], &mut [f64]),
{
    if !(opts.tol > 0.0) {
        return Err(Error::Invalid(format!("cg tolerance must be positive, got {}", opts.tol)));
    }
    let n = rhs.len();
    let mut x = match initial {
        Some(x0) if x0.len() != n => {
            return Err(Error::Dimension(format!("cg initial guess has {} entries, rhs {n}", x0.len())))
        }
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let b_norm = dot(rhs, rhs).sqrt();
    if !b_norm.is_finite() {
        return Err(Error::NonFinite("cg right-hand side".into()));
    }
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut rr = dot(&r, &r);
    if !rr.is_finite() {
        return Err(Error::NonFinite("cg initial residual".into()));
    }
    let target = opts.tol * scale;
    if rr.sqrt() <= target {
        return Ok(CgOutcome { x, iterations: 0, converged: true, relative_residual: rr.sqrt() / scale });
    }

    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut best = (rr, x.clone());
    for it in 1..=opts.max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::NonFinite(format!("cg curvature at iteration {it}")));
        }
        if pap <= 0.0 {
            // Positive-definiteness lost numerically; keep what we have.
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::NonFinite(format!("cg residual at iteration {it}")));
        }
        if rr_next < best.0 {
            best = (rr_next, x.clone());
        }
        if rr_next.sqrt() <= target {
            return Ok(CgOutcome {
                x,
                iterations: it,
                converged: true,
                relative_residual: rr_next.sqrt() / scale,
            });
        }
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    Ok(CgOutcome {
        relative_residual: best.0.sqrt() / scale,
        x: best.1,
        iterations: opts.max_iter,
        converged: false,
    })
}

/// Matrix-free `z ↦ diag(s²)z − Δz + z` on an image grid, the operator of
/// the TV-branch X-subproblem.
#[derive(Debug, Clone)]
pub struct ScaledHelmholtz<'a> {
    geom: ImageGeometry,
    s_squared: &'a [f64],
}

impl<'a> ScaledHelmholtz<'a> {
    pub fn new(geom: ImageGeometry, s_squared: &'a [f64]) -> Result<Self> {
        geom.check_field(s_squared.len(), "s² field")?;
        Ok(Self { geom, s_squared })
    }

    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        let n = z.len();
        let mut dx = vec![0.0; n];
        let mut dy = vec![0.0; n];
        forward_difference_into(z, self.geom, &mut dx, &mut dy);
        // out = ∇ᵀ∇z = −Δz
        divergence_adjoint_into(&dx, &dy, self.geom, out);
        for i in 0..n {
            out[i] += (self.s_squared[i] + 1.0) * z[i];
        }
    }
}
