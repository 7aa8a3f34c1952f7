//! First-order optimality residuals of the split problem.

use nalgebra::DMatrix;

use super::updates::{row_vec, stacked_divergence, stacked_gradient};
use super::{PriorKind, SolverState};

/// Residual names in reporting order.
pub const KKT_NAMES: [&str; 8] = [
    "m_split", "u_split", "w_split", "t_split", "x_stationarity", "s_stationarity", "m_stationarity", "u_subgradient",
];

/// Frobenius norms of the eight residual blocks, together with the norms
/// of the blocks each split compares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub values: [f64; 8],
    pub scales: [f64; 8],
}

impl KktResiduals {
    /// `values[i] / scales[i]`, with scales below `1e-12` treated as 1.
    pub fn relative(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for i in 0..8 {
            let s = self.scales[i];
            out[i] = self.values[i] / if s > 1e-12 { s } else { 1.0 };
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn fro(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Evaluates the residuals at `state` for data `y ≈ a·m`.
///
/// 1. `M − X·diag(s)`
/// 2. `u_j − ∇x_j` (TV) or `u_j − x_j` (PnP)
/// 3. `W − X`
/// 4. `t − s`
/// 5. `C·diag(s) + ∇ᵀD + E` (TV) or `C·diag(s) + D + E` (PnP)
/// 6. `x_kᵀc_k + g_k` per pixel
/// 7. `Aᵀ(Y − AM) + ρC`
/// 8. distance of `ρd_j/λ` from `∂‖u_j‖₁` (TV only, zero for PnP)
pub fn kkt_residuals(state: &SolverState, a: &DMatrix<f64>, y: &DMatrix<f64>, rho: f64, lambda: f64) -> KktResiduals {
    let geom = state.geometry;
    let l = state.x.nrows();
    let n = state.s.len();
    let mut xs = state.x.clone();
    for (k, mut col) in xs.column_iter_mut().enumerate() {
        col *= state.s[k];
    }
    let mut values = [0.0; 8];
    let mut scales = [1.0; 8];

    values[0] = fro(&(&state.m - &xs));
    scales[0] = fro(&state.m).max(fro(&xs));

    let mut split2 = 0.0;
    let (mut un, mut ln) = (0.0, 0.0);
    let mut stat5 = &state.e + DMatrix::from_fn(l, n, |j, k| state.c[(j, k)] * state.s[k]);
    let mut sub8 = 0.0;
    for j in 0..l {
        let xj = row_vec(&state.x, j);
        let (lifted, back) = match state.prior {
            PriorKind::Tv => (stacked_gradient(&xj, geom), stacked_divergence(&state.d[j], geom)),
            PriorKind::PnP => (xj, state.d[j].clone()),
        };
        for (u, v) in state.u[j].iter().zip(&lifted) {
            split2 += (u - v) * (u - v);
        }
        un += norm(&state.u[j]).powi(2);
        ln += norm(&lifted).powi(2);
        for k in 0..n {
            stat5[(j, k)] += back[k];
        }
        if state.prior == PriorKind::Tv && lambda > 0.0 {
            for (u, d) in state.u[j].iter().zip(&state.d[j]) {
                let z = rho * d / lambda;
                let dist = if *u > 0.0 {
                    z - 1.0
                } else if *u < 0.0 {
                    z + 1.0
                } else {
                    (z.abs() - 1.0).max(0.0)
                };
                sub8 += dist * dist;
            }
        }
    }
    values[1] = split2.sqrt();
    scales[1] = un.sqrt().max(ln.sqrt());

    values[2] = fro(&(&state.w - &state.x));
    scales[2] = fro(&state.w).max(fro(&state.x));

    values[3] = (&state.t - &state.s).norm();
    scales[3] = state.t.norm().max(state.s.norm());

    values[4] = fro(&stat5);
    scales[4] = fro(&state.e).max(fro(&state.c));

    let mut s6 = 0.0;
    for k in 0..n {
        let r = state.x.column(k).dot(&state.c.column(k)) + state.g[k];
        s6 += r * r;
    }
    values[5] = s6.sqrt();
    scales[5] = state.g.norm();

    let stat7 = a.transpose() * (y - a * &state.m) + &state.c * rho;
    values[6] = fro(&stat7);
    scales[6] = fro(&(a.transpose() * y));

    values[7] = sub8.sqrt();
    scales[7] = 1.0;

    KktResiduals { values, scales }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::ImageGeometry;
    use nalgebra::DVector;

    // One pixel, one state, y = −a: the best nonnegative scale is 0, so the
    // stationary point has s = t = 0, M = 0, W = X = 1 and active multipliers
    // c = ‖a‖²/ρ, g = −c.
    pub(crate) fn stationary_point(a: &DMatrix<f64>, rho: f64, prior: PriorKind) -> (SolverState, DMatrix<f64>) {
        let geom = ImageGeometry::new(1, 1).unwrap();
        let y = -a.clone();
        let c = a.norm_squared() / rho;
        let ulen = if prior == PriorKind::Tv { 2 } else { 1 };
        let one = DMatrix::from_element(1, 1, 1.0);
        let u = if prior == PriorKind::Tv { vec![vec![0.0; 2]] } else { vec![vec![1.0]] };
        let st = SolverState {
            geometry: geom,
            prior,
            x: one.clone(),
            s: DVector::zeros(1),
            m: DMatrix::zeros(1, 1),
            u,
            w: one,
            t: DVector::zeros(1),
            c: DMatrix::from_element(1, 1, c),
            d: vec![vec![0.0; ulen]],
            e: DMatrix::zeros(1, 1),
            g: DVector::from_element(1, -c),
        };
        (st, y)
    }

    #[test]
    fn constructed_stationary_point_has_zero_residuals() {
        let a = DMatrix::from_column_slice(3, 1, &[0.5, 1.0, 2.0]);
        for prior in [PriorKind::Tv, PriorKind::PnP] {
            let (st, y) = stationary_point(&a, 0.7, prior);
            let r = kkt_residuals(&st, &a, &y, 0.7, 0.01);
            for v in r.values {
                assert!(v < 1e-10, "{v}");
            }
        }
    }

    #[test]
    fn zero_duals_reduce_m_residual_to_data_gradient() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.5, 0.8, 0.3, 0.9]);
        let geom = ImageGeometry::new(1, 2).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.3, 0.9, 0.7, 0.1]);
        let m = DMatrix::from_row_slice(2, 2, &[0.2, 0.5, 0.6, 0.4]);
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 0.7, 0.2, 0.4]);
        let st = SolverState {
            geometry: geom,
            prior: PriorKind::Tv,
            u: (0..2).map(|j| stacked_gradient(&row_vec(&x, j), geom)).collect(),
            d: vec![vec![0.0; 4]; 2],
            w: x.clone(),
            x,
            s: DVector::from_vec(vec![1.1, 0.9]),
            m: m.clone(),
            t: DVector::from_vec(vec![1.1, 0.9]),
            c: DMatrix::zeros(2, 2),
            e: DMatrix::zeros(2, 2),
            g: DVector::zeros(2),
        };
        let r = kkt_residuals(&st, &a, &y, 1.0, 0.01);
        // loop oracle for ‖Aᵀ(Y − AM)‖
        let mut sq = 0.0;
        for j in 0..2 {
            for k in 0..2 {
                let mut v = 0.0;
                for b in 0..3 {
                    let mut am = 0.0;
                    for q in 0..2 {
                        am += a[(b, q)] * m[(q, k)];
                    }
                    v += a[(b, j)] * (y[(b, k)] - am);
                }
                sq += v * v;
            }
        }
        assert!((r.values[6] - sq.sqrt()).abs() < 1e-12);
        assert!(r.values[1] < 1e-15 && r.values[2] == 0.0 && r.values[3] == 0.0);
    }
}
