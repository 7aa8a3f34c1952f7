//! Conventional chemical-state mapping: edge-50 half-height analysis and
//! linear combination fitting by fully constrained least squares.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cube::{Dictionary, EnergyGrid, PhaseMap, SpectralCube};
use crate::{Error, Result};

/// Closed energy interval in eV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyWindow {
    pub lo: f64,
    pub hi: f64,
}

impl EnergyWindow {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn contains(&self, e: f64) -> bool {
        e >= self.lo && e <= self.hi
    }
}

/// Pre- and post-edge fitting windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeWindows {
    pub pre_edge: EnergyWindow,
    pub post_edge: EnergyWindow,
}

impl EdgeWindows {
    /// Windows suited to the synthetic Ni K-edge grid (8180–8562 eV, edge near 8345 eV).
    pub fn ni_k_edge() -> Self {
        Self {
            pre_edge: EnergyWindow::new(8180.0, 8320.0),
            post_edge: EnergyWindow::new(8420.0, 8562.0),
        }
    }

    pub fn validate(&self, grid: &EnergyGrid) -> Result<()> {
        let (pre, post) = (self.pre_edge, self.post_edge);
        if !(pre.lo <= pre.hi && post.lo <= post.hi) || pre.hi >= post.lo {
            return Err(Error::Invalid(format!(
                "pre-edge window [{}, {}] must lie entirely below post-edge window [{}, {}]",
                pre.lo, pre.hi, post.lo, post.hi
            )));
        }
        for (name, w) in [("pre-edge", pre), ("post-edge", post)] {
            let count = grid.energies().iter().filter(|&&e| w.contains(e)).count();
            if count < 2 {
                return Err(Error::Invalid(format!(
                    "{name} window [{}, {}] contains {count} grid energies, need at least 2",
                    w.lo, w.hi
                )));
            }
        }
        Ok(())
    }
}

/// Half-height energies of the reference states.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge50References {
    pub e50: Vec<f64>,
}

impl Edge50References {
    /// Normalizes every dictionary column with `win` and takes its half-height energy.
    pub fn from_dictionary(dict: &Dictionary, win: &EdgeWindows) -> Result<Self> {
        win.validate(&dict.grid)?;
        let idx = WindowIndex::new(&dict.grid, win);
        let mut e50 = Vec::with_capacity(dict.states());
        for col in dict.spectra.column_iter() {
            let raw: Vec<f64> = col.iter().copied().collect();
            let (norm, _) = idx.normalize(&raw);
            e50.push(edge50_energy(&norm, &dict.grid)?.energy);
        }
        Ok(Self { e50 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCube {
    pub cube: SpectralCube,
    /// Pixels whose edge step collapsed; their spectra are the constant 0.5.
    pub degenerate: Vec<bool>,
}

struct WindowIndex<'a> {
    energies: &'a [f64],
    pre: Vec<usize>,
    post: Vec<usize>,
    span: std::ops::RangeInclusive<usize>,
}

impl<'a> WindowIndex<'a> {
    fn new(grid: &'a EnergyGrid, win: &EdgeWindows) -> Self {
        let e = grid.energies();
        let pick = |w: EnergyWindow| (0..e.len()).filter(|&i| w.contains(e[i])).collect::<Vec<_>>();
        let pre = pick(win.pre_edge);
        let post = pick(win.post_edge);
        let span = pre[0]..=post[post.len() - 1];
        Self { energies: e, pre, post, span }
    }

    /// Returns the normalized spectrum and whether the pixel was degenerate.
    fn normalize(&self, raw: &[f64]) -> (Vec<f64>, bool) {
        let (pa, pb) = fit_line(self.energies, raw, &self.pre);
        let (qa, qb) = fit_line(self.energies, raw, &self.post);
        let mag = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let eps = 1e-12 * mag.max(1e-300);
        let degenerate = self.span.clone().any(|i| {
            let e = self.energies[i];
            (qa + qb * e) - (pa + pb * e) <= eps
        });
        if degenerate {
            return (vec![0.5; raw.len()], true);
        }
        let out = raw
            .iter()
            .zip(self.energies)
            .map(|(&r, &e)| {
                let pre = pa + pb * e;
                (r - pre) / ((qa + qb * e) - pre)
            })
            .collect();
        (out, false)
    }
}

/// Least-squares line `a + b·e` through the samples at `idx`. Energies are
/// centred before fitting to keep the normal equations well conditioned.
fn fit_line(energies: &[f64], values: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let e_mean = idx.iter().map(|&i| energies[i]).sum::<f64>() / n;
    let v_mean = idx.iter().map(|&i| values[i]).sum::<f64>() / n;
    let mut see = 0.0;
    let mut sev = 0.0;
    for &i in idx {
        let de = energies[i] - e_mean;
        see += de * de;
        sev += de * (values[i] - v_mean);
    }
    let slope = if see > 0.0 { sev / see } else { 0.0 };
    (v_mean - slope * e_mean, slope)
}

/// Pre/post-edge normalization `(raw − pre_line) / (post_line − pre_line)` per pixel.
pub fn normalize_spectra(cube: &SpectralCube, win: &EdgeWindows) -> Result<NormalizedCube> {
    win.validate(&cube.grid)?;
    let idx = WindowIndex::new(&cube.grid, win);
    let t = cube.bands();
    let results: Vec<(Vec<f64>, bool)> = (0..cube.pixels())
        .into_par_iter()
        .map(|k| {
            let raw: Vec<f64> = cube.values.column(k).iter().copied().collect();
            idx.normalize(&raw)
        })
        .collect();
    let mut values = DMatrix::zeros(t, cube.pixels());
    let mut degenerate = Vec::with_capacity(cube.pixels());
    for (k, (spec, flag)) in results.into_iter().enumerate() {
        values.column_mut(k).copy_from_slice(&spec);
        degenerate.push(flag);
    }
    Ok(NormalizedCube {
        cube: SpectralCube { geometry: cube.geometry, grid: cube.grid.clone(), values },
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge50 {
    pub energy: f64,
    /// `false` when the spectrum never crosses 0.5 upward; `energy` is then the grid midpoint.
    pub crossed: bool,
}

/// Energy of the first upward crossing of 0.5, linearly interpolated.
pub fn edge50_energy(spectrum: &[f64], grid: &EnergyGrid) -> Result<Edge50> {
    if spectrum.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "spectrum has {} samples, grid {}",
            spectrum.len(),
            grid.len()
        )));
    }
    if spectrum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("edge-50 spectrum".into()));
    }
    let e = grid.energies();
    for i in 0..spectrum.len() - 1 {
        let (a, b) = (spectrum[i], spectrum[i + 1]);
        if a < 0.5 && b >= 0.5 {
            let frac = (0.5 - a) / (b - a);
            return Ok(Edge50 { energy: e[i] + frac * (e[i + 1] - e[i]), crossed: true });
        }
    }
    Ok(Edge50 { energy: 0.5 * (grid.first() + grid.last()), crossed: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge50Map {
    pub map: PhaseMap,
    pub e50: Vec<f64>,
    /// Degenerate normalization or missing crossing.
    pub flagged: Vec<bool>,
}

/// Two-state fraction map from per-pixel half-height energies.
pub fn edge50_map(cube: &SpectralCube, win: &EdgeWindows, refs: &Edge50References) -> Result<Edge50Map> {
    if refs.e50.len() != 2 {
        return Err(Error::Invalid(format!(
            "edge-50 mapping is defined for exactly 2 reference states, got {}",
            refs.e50.len()
        )));
    }
    let (e1, e2) = (refs.e50[0], refs.e50[1]);
    if !(e1.is_finite() && e2.is_finite()) {
        return Err(Error::NonFinite("edge-50 reference energies".into()));
    }
    if e1 == e2 {
        return Err(Error::Invalid(format!("reference edge-50 energies coincide at {e1} eV")));
    }
    let norm = normalize_spectra(cube, win)?;
    let n = cube.pixels();
    let mut ab = DMatrix::zeros(2, n);
    let mut e50 = Vec::with_capacity(n);
    let mut flagged = norm.degenerate.clone();
    for k in 0..n {
        let spec: Vec<f64> = norm.cube.values.column(k).iter().copied().collect();
        let edge = edge50_energy(&spec, &cube.grid)?;
        flagged[k] |= !edge.crossed;
        let f2 = ((edge.energy - e1) / (e2 - e1)).clamp(0.0, 1.0);
        ab[(0, k)] = 1.0 - f2;
        ab[(1, k)] = f2;
        e50.push(edge.energy);
    }
    Ok(Edge50Map { map: PhaseMap::new(cube.geometry, ab)?, e50, flagged })
}

/// Euclidean projection onto `{x : x ≥ 0, Σx = 1}` (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FclsOptions {
    pub max_iter: usize,
    /// Stop once one step lowers the objective by less than this.
    pub min_decrease: f64,
}

impl Default for FclsOptions {
    fn default() -> Self {
        Self { max_iter: 5000, min_decrease: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FclsResult {
    pub weights: Vec<f64>,
    /// `½‖y − Ax‖²` at `weights`.
    pub objective: f64,
    pub iterations: usize,
    /// `false` when the iteration cap was hit before the decrease test.
    pub converged: bool,
}

/// Reusable FCLS solver: the Gram matrix and step size depend only on `A`.
#[derive(Debug, Clone)]
pub struct FclsSolver {
    a: DMatrix<f64>,
    gram: DMatrix<f64>,
    step: f64,
    opts: FclsOptions,
}

impl FclsSolver {
    pub fn new(a: &DMatrix<f64>, opts: FclsOptions) -> Result<Self> {
        if a.ncols() == 0 {
            return Err(Error::Invalid("empty dictionary".into()));
        }
        let gram = a.transpose() * a;
        let lip = gram.clone().symmetric_eigen().eigenvalues.max();
        if !(lip > 0.0) || !lip.is_finite() {
            return Err(Error::Invalid("dictionary Gram matrix is zero or non-finite".into()));
        }
        Ok(Self { a: a.clone(), gram, step: 1.0 / lip, opts })
    }

    fn quad(&self, x: &DVector<f64>, aty: &DVector<f64>, yy: f64) -> f64 {
        // ½‖y − Ax‖² = ½xᵀGx − xᵀAᵀy + ½yᵀy
        0.5 * x.dot(&(&self.gram * x)) - x.dot(aty) + 0.5 * yy
    }

    pub fn solve(&self, y: &[f64]) -> Result<FclsResult> {
        if y.len() != self.a.nrows() {
            return Err(Error::Dimension(format!(
                "spectrum has {} samples, dictionary {}",
                y.len(),
                self.a.nrows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fcls spectrum".into()));
        }
        let yv = DVector::from_column_slice(y);
        let aty = self.a.transpose() * &yv;
        let yy = yv.dot(&yv);
        let l = self.a.ncols();

        // Start from the best vertex.
        let mut x = DVector::zeros(l);
        let mut best_j = 0;
        let mut best_f = f64::INFINITY;
        for j in 0..l {
            let f = 0.5 * self.gram[(j, j)] - aty[j] + 0.5 * yy;
            if f < best_f {
                best_f = f;
                best_j = j;
            }
        }
        x[best_j] = 1.0;
        let mut f = best_f;

        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.opts.max_iter {
            iterations += 1;
            let grad = &self.gram * &x - &aty;
            let trial: Vec<f64> = x.iter().zip(grad.iter()).map(|(xi, gi)| xi - self.step * gi).collect();
            let next = DVector::from_vec(project_simplex(&trial));
            let f_next = self.quad(&next, &aty, yy);
            let decrease = f - f_next;
            x = next;
            f = f_next;
            if decrease < self.opts.min_decrease {
                converged = true;
                break;
            }
        }

        // Projected gradient identifies the support long before it pins the
        // value; finish with the exact equality-constrained solve on it.
        if let Some(polished) = self.polish(&x, &aty) {
            let fp = self.quad(&polished, &aty, yy);
            if fp <= f {
                x = polished;
                f = fp;
            }
        }
        Ok(FclsResult { weights: x.iter().copied().collect(), objective: f.max(0.0), iterations, converged })
    }

    /// Solves `min ½xᵀGx − xᵀb` on the support of `x` subject to `Σx = 1` and
    /// accepts the result only when it is feasible and satisfies the KKT sign
    /// conditions off the support.
    fn polish(&self, x: &DVector<f64>, aty: &DVector<f64>) -> Option<DVector<f64>> {
        let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0).collect();
        let p = support.len();
        if p == 0 {
            return None;
        }
        let mut kkt = DMatrix::zeros(p + 1, p + 1);
        let mut rhs = DVector::zeros(p + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = self.gram[(i, j)];
            }
            kkt[(a, p)] = 1.0;
            kkt[(p, a)] = 1.0;
            rhs[a] = aty[i];
        }
        rhs[p] = 1.0;
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut out = DVector::zeros(x.len());
        for (a, &i) in support.iter().enumerate() {
            if sol[a] < 0.0 {
                return None;
            }
            out[i] = sol[a];
        }
        // Multiplier of Σx = 1 is −sol[p]; off-support gradients must not go below it.
        let grad = &self.gram * &out - aty;
        let nu = -sol[p];
        let tol = 1e-10 * (1.0 + grad.amax());
        for i in 0..x.len() {
            if x[i] <= 0.0 && grad[i] + tol < -nu {
                return None;
            }
        }
        let sum = out.sum();
        out /= sum;
        Some(out)
    }
}

/// `argmin ½‖y − Ax‖²` over the probability simplex.
pub fn fcls_solve(dict: &Dictionary, y: &[f64]) -> Result<FclsResult> {
    FclsSolver::new(&dict.spectra, FclsOptions::default())?.solve(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcfOutput {
    pub map: PhaseMap,
    /// Pixels where FCLS hit its iteration cap.
    pub unconverged: Vec<bool>,
}

/// Per-pixel FCLS over the whole cube.
pub fn lcf_unmix(dict: &Dictionary, cube: &SpectralCube) -> Result<LcfOutput> {
    if dict.bands() != cube.bands() {
        return Err(Error::Dimension(format!(
            "dictionary has {} energies, cube {}",
            dict.bands(),
            cube.bands()
        )));
    }
    let solver = FclsSolver::new(&dict.spectra, FclsOptions::default())?;
    let results: Vec<FclsResult> = (0..cube.pixels())
        .into_par_iter()
        .map(|k| solver.solve(cube.values.column(k).as_slice()))
        .collect::<Result<_>>()?;
    let mut ab = DMatrix::zeros(dict.states(), cube.pixels());
    let mut unconverged = Vec::with_capacity(cube.pixels());
    for (k, r) in results.into_iter().enumerate() {
        ab.column_mut(k).copy_from_slice(&r.weights);
        unconverged.push(!r.converged);
    }
    Ok(LcfOutput { map: PhaseMap::new(cube.geometry, ab)?, unconverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::ImageGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(e: f64, e0: f64, w: f64) -> f64 {
        0.5 * (1.0 + ((e - e0) / w).tanh())
    }

    fn step_grid() -> EnergyGrid {
        EnergyGrid::linspace(0.0, 100.0, 101).unwrap()
    }

    fn windows() -> EdgeWindows {
        EdgeWindows { pre_edge: EnergyWindow::new(0.0, 20.0), post_edge: EnergyWindow::new(80.0, 100.0) }
    }

    fn cube_of(grid: &EnergyGrid, spectra: &[Vec<f64>]) -> SpectralCube {
        let geom = ImageGeometry::new(1, spectra.len()).unwrap();
        let mut v = DMatrix::zeros(grid.len(), spectra.len());
        for (k, s) in spectra.iter().enumerate() {
            v.column_mut(k).copy_from_slice(s);
        }
        SpectralCube::new(geom, grid.clone(), v).unwrap()
    }

    #[test]
    fn normalization_is_identity_on_normalized_step() {
        let grid = step_grid();
        let spec: Vec<f64> = grid.energies().iter().map(|&e| if e < 50.0 { 0.0 } else { 1.0 }).collect();
        let out = normalize_spectra(&cube_of(&grid, &[spec.clone()]), &windows()).unwrap();
        assert!(!out.degenerate[0]);
        for (a, b) in out.cube.values.column(0).iter().zip(&spec) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_undoes_affine_transform() {
        let grid = step_grid();
        let norm: Vec<f64> = grid.energies().iter().map(|&e| sigmoid(e, 50.0, 4.0)).collect();
        let raw: Vec<f64> = norm.iter().map(|v| 3.7 * v - 1.2).collect();
        let out = normalize_spectra(&cube_of(&grid, &[raw]), &windows()).unwrap();
        // Scalar oracle: same window fits on the untransformed spectrum.
        let idx = WindowIndex::new(&grid, &windows());
        let (oracle, _) = idx.normalize(&norm);
        for (a, b) in out.cube.values.column(0).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_spectrum_is_flagged_with_half_fallback() {
        let grid = step_grid();
        let out = normalize_spectra(&cube_of(&grid, &[vec![2.0; 101]]), &windows()).unwrap();
        assert!(out.degenerate[0]);
        assert!(out.cube.values.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn windows_are_validated() {
        let grid = step_grid();
        let bad = EdgeWindows { pre_edge: EnergyWindow::new(0.0, 60.0), post_edge: EnergyWindow::new(50.0, 100.0) };
        assert!(bad.validate(&grid).is_err());
        let thin = EdgeWindows { pre_edge: EnergyWindow::new(0.0, 0.5), post_edge: EnergyWindow::new(80.0, 100.0) };
        assert!(thin.validate(&grid).is_err());
    }

    #[test]
    fn edge50_linear_interpolation() {
        let grid = EnergyGrid::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let e = edge50_energy(&[0.0, 0.25, 0.75, 1.0], &grid).unwrap();
        assert!(e.crossed);
        assert!((e.energy - 1.5).abs() < 1e-15);
    }

    #[test]
    fn edge50_symmetric_sigmoid_hits_centre() {
        let grid = EnergyGrid::linspace(-10.0, 10.0, 41).unwrap();
        let spec: Vec<f64> = grid.energies().iter().map(|&e| sigmoid(e, 0.0, 2.0)).collect();
        let e = edge50_energy(&spec, &grid).unwrap();
        assert!(e.energy.abs() <= 0.25);
    }

    #[test]
    fn edge50_mixture_matches_dense_resampling() {
        let grid = EnergyGrid::linspace(8300.0, 8400.0, 31).unwrap();
        let spec: Vec<f64> = grid
            .energies()
            .iter()
            .map(|&e| 0.5 * sigmoid(e, 8345.0, 3.0) + 0.5 * sigmoid(e, 8350.0, 3.0))
            .collect();
        let ours = edge50_energy(&spec, &grid).unwrap().energy;

        // Oracle: resample the sampled spectrum at 10⁴ points, then interpolate
        // between the two dense samples bracketing 0.5.
        let e = grid.energies();
        let dense = 10_000;
        let interp = |x: f64| {
            let i = ((x - e[0]) / (e[1] - e[0])).floor().clamp(0.0, (e.len() - 2) as f64) as usize;
            let f = (x - e[i]) / (e[i + 1] - e[i]);
            spec[i] + f * (spec[i + 1] - spec[i])
        };
        let xs: Vec<f64> = (0..dense)
            .map(|q| e[0] + (e[e.len() - 1] - e[0]) * q as f64 / (dense - 1) as f64)
            .collect();
        let q = (1..dense).find(|&q| interp(xs[q]) >= 0.5).unwrap();
        let (v0, v1) = (interp(xs[q - 1]), interp(xs[q]));
        let oracle = xs[q - 1] + (0.5 - v0) / (v1 - v0) * (xs[q] - xs[q - 1]);
        assert!((ours - oracle).abs() < 1e-3, "ours {ours} oracle {oracle}");
    }

    #[test]
    fn edge50_without_crossing_returns_midpoint() {
        let grid = EnergyGrid::new(vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let e = edge50_energy(&[0.1, 0.2, 0.3, 0.4], &grid).unwrap();
        assert!(!e.crossed);
        assert_eq!(e.energy, 2.0);
        assert!(edge50_energy(&[0.1, f64::NAN, 0.3, 0.4], &grid).is_err());
    }

    #[test]
    fn edge50_is_shift_equivariant() {
        let spec = [0.0, 0.1, 0.3, 0.6, 0.9, 1.0];
        let g0 = EnergyGrid::new(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let g1 = EnergyGrid::new(g0.energies().iter().map(|e| e + 7.25).collect()).unwrap();
        let a = edge50_energy(&spec, &g0).unwrap().energy;
        let b = edge50_energy(&spec, &g1).unwrap().energy;
        assert!((b - a - 7.25).abs() < 1e-12);
    }

    fn two_state_dict(grid: &EnergyGrid) -> Dictionary {
        let mut a = DMatrix::zeros(grid.len(), 2);
        for (t, &e) in grid.energies().iter().enumerate() {
            a[(t, 0)] = sigmoid(e, 45.0, 4.0);
            a[(t, 1)] = sigmoid(e, 55.0, 4.0);
        }
        Dictionary::unlabeled(grid.clone(), a).unwrap()
    }

    #[test]
    fn edge50_map_reference_and_midpoint() {
        let grid = step_grid();
        let dict = two_state_dict(&grid);
        let refs = Edge50References::from_dictionary(&dict, &windows()).unwrap();
        let ref1: Vec<f64> = dict.spectra.column(0).iter().copied().collect();
        let mid_e = 0.5 * (refs.e50[0] + refs.e50[1]);
        let mid: Vec<f64> = grid.energies().iter().map(|&e| sigmoid(e, mid_e, 4.0)).collect();
        let out = edge50_map(&cube_of(&grid, &[ref1, mid]), &windows(), &refs).unwrap();
        let x = &out.map.abundances;
        assert!((x[(0, 0)] - 1.0).abs() < 1e-9 && x[(1, 0)].abs() < 1e-9);
        assert!((x[(0, 1)] - 0.5).abs() < 1e-2 && (x[(1, 1)] - 0.5).abs() < 1e-2);
        for col in x.column_iter() {
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edge50_map_requires_two_distinct_states() {
        let grid = step_grid();
        let cube = cube_of(&grid, &[vec![0.0; 101]]);
        let three = Edge50References { e50: vec![1.0, 2.0, 3.0] };
        assert!(edge50_map(&cube, &windows(), &three).is_err());
        let same = Edge50References { e50: vec![2.0, 2.0] };
        assert!(edge50_map(&cube, &windows(), &same).is_err());
    }

    #[test]
    fn simplex_projection_basics() {
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        let p = project_simplex(&[2.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        let p = project_simplex(&[-1.0, -1.0, -1.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fcls_pure_pixel_and_even_mixture() {
        let grid = step_grid();
        let dict = two_state_dict(&grid);
        let a1: Vec<f64> = dict.spectra.column(0).iter().copied().collect();
        let r = fcls_solve(&dict, &a1).unwrap();
        assert!((r.weights[0] - 1.0).abs() < 1e-9 && r.weights[1].abs() < 1e-9);
        let mix: Vec<f64> = (0..grid.len()).map(|t| 0.5 * (dict.spectra[(t, 0)] + dict.spectra[(t, 1)])).collect();
        let r = fcls_solve(&dict, &mix).unwrap();
        assert!((r.weights[0] - 0.5).abs() < 1e-9 && (r.weights[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fcls_matches_grid_search_on_noisy_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let grid = EnergyGrid::linspace(0.0, 100.0, 6).unwrap();
        for _ in 0..20 {
            let a = DMatrix::from_fn(6, 2, |_, _| rng.random_range(0.0..1.0));
            let dict = Dictionary::unlabeled(grid.clone(), a.clone()).unwrap();
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            let r = fcls_solve(&dict, &y).unwrap();
            let mut best = (f64::INFINITY, 0.0);
            for q in 0..=10_000 {
                let x1 = q as f64 * 1e-4;
                let obj: f64 = (0..6).map(|t| (y[t] - a[(t, 0)] * x1 - a[(t, 1)] * (1.0 - x1)).powi(2)).sum();
                if obj < best.0 {
                    best = (obj, x1);
                }
            }
            assert!((r.weights[0] - best.1).abs() < 1e-3);
        }
    }

    #[test]
    fn fcls_beats_every_vertex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = EnergyGrid::linspace(0.0, 1.0, 8).unwrap();
        let a = DMatrix::from_fn(8, 4, |_, _| rng.random_range(0.0..1.0));
        let dict = Dictionary::unlabeled(grid, a.clone()).unwrap();
        for _ in 0..20 {
            let y: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.5)).collect();
            let r = fcls_solve(&dict, &y).unwrap();
            assert!(r.weights.iter().all(|&w| w >= -1e-12));
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for j in 0..4 {
                let vertex: f64 = (0..8).map(|t| (y[t] - a[(t, j)]).powi(2)).sum::<f64>() * 0.5;
                assert!(r.objective <= vertex + 1e-12);
            }
        }
    }

    #[test]
    fn lcf_recovers_exact_mixtures() {
        let grid = step_grid();
        let dict = two_state_dict(&grid);
        let geom = ImageGeometry::new(2, 3).unwrap();
        let fr = [0.0, 0.2, 0.45, 0.5, 0.9, 1.0];
        let mut x = DMatrix::zeros(2, 6);
        for k in 0..6 {
            x[(0, k)] = fr[k];
            x[(1, k)] = 1.0 - fr[k];
        }
        let y = &dict.spectra * &x;
        let cube = SpectralCube::new(geom, grid, y).unwrap();
        let out = lcf_unmix(&dict, &cube).unwrap();
        for (a, b) in out.map.abundances.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let single = fcls_solve(&dict, cube.values.column(2).as_slice()).unwrap();
        let col: Vec<f64> = out.map.abundances.column(2).iter().copied().collect();
        assert_eq!(single.weights, col);
    }

    #[test]
    fn lcf_is_biased_under_pixel_scaling() {
        let grid = step_grid();
        let dict = two_state_dict(&grid);
        let geom = ImageGeometry::new(1, 1).unwrap();
        let xk = DVector::from_vec(vec![0.5, 0.5]);
        let y = (&dict.spectra * &xk) * 1.3;
        let cube = SpectralCube::new(geom, grid, DMatrix::from_column_slice(101, 1, y.as_slice())).unwrap();
        let out = lcf_unmix(&dict, &cube).unwrap();
        let xh = out.map.abundances.column(0).into_owned();
        let resid = (&y - &dict.spectra * &xh).norm();
        assert!(resid > 1e-3);
    }
}
