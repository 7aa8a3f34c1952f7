//! Core tensors and periodic image-grid operators.
//!
//! Pixels are linearized row-major: pixel `(i, j)` of an `rows × cols`
//! image lives at index `i * cols + j`. Every field, cube column and phase
//! map column in the crate follows this convention.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Strictly increasing photon energies in eV.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    energies: Vec<f64>,
}

impl EnergyGrid {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.len() < 2 {
            return Err(Error::Invalid(format!(
                "energy grid needs at least 2 points, got {}",
                energies.len()
            )));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("energy grid".into()));
        }
        if energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("energy grid must be strictly increasing".into()));
        }
        Ok(Self { energies })
    }

    /// `count` evenly spaced energies from `lo` to `hi` inclusive.
    pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Self::new(vec![lo]);
        }
        let step = (hi - lo) / (count - 1) as f64;
        Self::new((0..count).map(|i| lo + step * i as f64).collect())
    }

    /// Placeholder grid `0, 1, ..., count-1` for cubes stored without energies.
    pub fn index(count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| i as f64).collect())
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.energies[0]
    }

    pub fn last(&self) -> f64 {
        self.energies[self.energies.len() - 1]
    }
}

/// Image size; `len() = rows * cols` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageGeometry {
    rows: usize,
    cols: usize,
}

impl ImageGeometry {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid(format!("image geometry {rows}x{cols} is empty")));
        }
        Ok(Self { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub(crate) fn check_field(&self, len: usize, what: &str) -> Result<()> {
        if len != self.len() {
            return Err(Error::Dimension(format!(
                "{what} has {len} entries, geometry {}x{} needs {}",
                self.rows,
                self.cols,
                self.len()
            )));
        }
        Ok(())
    }
}

/// Observation `Y`: `T × N` matrix, one column per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    pub geometry: ImageGeometry,
    pub grid: EnergyGrid,
    pub values: DMatrix<f64>,
}

impl SpectralCube {
    pub fn new(geometry: ImageGeometry, grid: EnergyGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid.len() || values.ncols() != geometry.len() {
            return Err(Error::Dimension(format!(
                "cube values are {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                grid.len(),
                geometry.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cube values".into()));
        }
        Ok(Self { geometry, grid, values })
    }

    pub fn bands(&self) -> usize {
        self.values.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.values.ncols()
    }

    /// Image of one energy band, row-major.
    pub fn band(&self, b: usize) -> Vec<f64> {
        self.values.row(b).iter().copied().collect()
    }
}

/// Reference spectra `A`: `T × L`, one column per chemical state.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub grid: EnergyGrid,
    pub spectra: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl Dictionary {
    pub fn new(grid: EnergyGrid, spectra: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if spectra.ncols() == 0 {
            return Err(Error::Invalid("dictionary needs at least one spectrum".into()));
        }
        if spectra.nrows() != grid.len() {
            return Err(Error::Dimension(format!(
                "dictionary has {} energies, grid has {}",
                spectra.nrows(),
                grid.len()
            )));
        }
        if labels.len() != spectra.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} spectra",
                labels.len(),
                spectra.ncols()
            )));
        }
        if spectra.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary spectra".into()));
        }
        for (j, col) in spectra.column_iter().enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                return Err(Error::Invalid(format!("dictionary column {j} is identically zero")));
            }
        }
        Ok(Self { grid, spectra, labels })
    }

    /// Dictionary with labels `state_1 .. state_L`.
    pub fn unlabeled(grid: EnergyGrid, spectra: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=spectra.ncols()).map(|j| format!("state_{j}")).collect();
        Self::new(grid, spectra, labels)
    }

    pub fn states(&self) -> usize {
        self.spectra.ncols()
    }

    pub fn bands(&self) -> usize {
        self.spectra.nrows()
    }
}

/// Abundances `X`: `L × N`, columns on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub geometry: ImageGeometry,
    pub abundances: DMatrix<f64>,
}

impl PhaseMap {
    pub fn new(geometry: ImageGeometry, abundances: DMatrix<f64>) -> Result<Self> {
        geometry.check_field(abundances.ncols(), "phase map")?;
        if abundances.nrows() == 0 {
            return Err(Error::Invalid("phase map needs at least one state".into()));
        }
        Ok(Self { geometry, abundances })
    }

    pub fn states(&self) -> usize {
        self.abundances.nrows()
    }

    /// Row `j` as a row-major image.
    pub fn state_image(&self, j: usize) -> Vec<f64> {
        self.abundances.row(j).iter().copied().collect()
    }

    /// Largest deviation of a column sum from 1 and the smallest entry.
    pub fn simplex_violation(&self) -> (f64, f64) {
        let mut worst_sum: f64 = 0.0;
        for col in self.abundances.column_iter() {
            worst_sum = worst_sum.max((col.sum() - 1.0).abs());
        }
        (worst_sum, self.abundances.min())
    }
}

/// Per-pixel nonnegative scale `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingField {
    pub geometry: ImageGeometry,
    pub values: DVector<f64>,
}

impl ScalingField {
    pub fn new(geometry: ImageGeometry, values: DVector<f64>) -> Result<Self> {
        geometry.check_field(values.len(), "scaling field")?;
        Ok(Self { geometry, values })
    }

    pub fn ones(geometry: ImageGeometry) -> Self {
        Self { geometry, values: DVector::from_element(geometry.len(), 1.0) }
    }
}

/// Stacked periodic forward differences `[∇ₓz; ∇ᵧz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl GradientPair {
    pub fn zeros(len: usize) -> Self {
        Self { dx: vec![0.0; len], dy: vec![0.0; len] }
    }

    /// Standard inner product over the stacked `2N` vector.
    pub fn dot(&self, other: &GradientPair) -> f64 {
        dot(&self.dx, &other.dx) + dot(&self.dy, &other.dy)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Periodic forward differences: `dx[i,j] = z[i,j+1] - z[i,j]`,
/// `dy[i,j] = z[i+1,j] - z[i,j]`, indices wrapping.
pub fn forward_difference(z: &[f64], geom: ImageGeometry) -> Result<GradientPair> {
    geom.check_field(z.len(), "field")?;
    let mut g = GradientPair::zeros(z.len());
    forward_difference_into(z, geom, &mut g.dx, &mut g.dy);
    Ok(g)
}

pub(crate) fn forward_difference_into(z: &[f64], geom: ImageGeometry, dx: &mut [f64], dy: &mut [f64]) {
    let (rows, cols) = (geom.rows, geom.cols);
    for i in 0..rows {
        let down = if i + 1 == rows { 0 } else { i + 1 };
        for j in 0..cols {
            let right = if j + 1 == cols { 0 } else { j + 1 };
            let k = i * cols + j;
            dx[k] = z[i * cols + right] - z[k];
            dy[k] = z[down * cols + j] - z[k];
        }
    }
}

/// Exact adjoint `∇ᵀg` of [`forward_difference`].
pub fn divergence_adjoint(g: &GradientPair, geom: ImageGeometry) -> Result<Vec<f64>> {
    geom.check_field(g.dx.len(), "gradient dx")?;
    geom.check_field(g.dy.len(), "gradient dy")?;
    let mut out = vec![0.0; geom.len()];
    divergence_adjoint_into(&g.dx, &g.dy, geom, &mut out);
    Ok(out)
}

pub(crate) fn divergence_adjoint_into(dx: &[f64], dy: &[f64], geom: ImageGeometry, out: &mut [f64]) {
    let (rows, cols) = (geom.rows, geom.cols);
    for i in 0..rows {
        let up = if i == 0 { rows - 1 } else { i - 1 };
        for j in 0..cols {
            let left = if j == 0 { cols - 1 } else { j - 1 };
            let k = i * cols + j;
            out[k] = (dx[i * cols + left] - dx[k]) + (dy[up * cols + j] - dy[k]);
        }
    }
}

/// `Δz = -∇ᵀ∇z`, the 5-point periodic Laplacian.
pub fn laplacian_apply(z: &[f64], geom: ImageGeometry) -> Result<Vec<f64>> {
    let g = forward_difference(z, geom)?;
    let mut out = divergence_adjoint(&g, geom)?;
    out.iter_mut().for_each(|v| *v = -*v);
    Ok(out)
}

/// `Y = A·X·diag(s)`.
pub fn mix_forward(dict: &Dictionary, x: &PhaseMap, s: &ScalingField) -> Result<SpectralCube> {
    if x.states() != dict.states() {
        return Err(Error::Dimension(format!(
            "phase map has {} states, dictionary has {}",
            x.states(),
            dict.states()
        )));
    }
    if s.geometry != x.geometry {
        return Err(Error::Dimension("scaling field and phase map geometries differ".into()));
    }
    let mut y = &dict.spectra * &x.abundances;
    for (k, mut col) in y.column_iter_mut().enumerate() {
        col *= s.values[k];
    }
    SpectralCube::new(x.geometry, dict.grid.clone(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense `2N × N` matrix of the stacked periodic forward difference,
    /// built straight from the index definition.
    fn dense_gradient(geom: ImageGeometry) -> DMatrix<f64> {
        let n = geom.len();
        let (m, k) = (geom.rows(), geom.cols());
        let mut g = DMatrix::zeros(2 * n, n);
        for i in 0..m {
            for j in 0..k {
                let p = i * k + j;
                g[(p, i * k + (j + 1) % k)] += 1.0;
                g[(p, p)] -= 1.0;
                g[(n + p, ((i + 1) % m) * k + j)] += 1.0;
                g[(n + p, p)] -= 1.0;
            }
        }
        g
    }

    fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let geom = ImageGeometry::new(4, 3).unwrap();
        let g = forward_difference(&[5.0; 12], geom).unwrap();
        assert!(g.dx.iter().chain(&g.dy).all(|&v| v == 0.0));
    }

    #[test]
    fn one_row_wraps_horizontally() {
        let geom = ImageGeometry::new(1, 3).unwrap();
        let g = forward_difference(&[1.0, 2.0, 4.0], geom).unwrap();
        assert_eq!(g.dx, vec![1.0, 2.0, -3.0]);
        assert_eq!(g.dy, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn impulse_matches_loop_oracle() {
        let geom = ImageGeometry::new(3, 3).unwrap();
        let mut z = vec![0.0; 9];
        z[4] = 1.0;
        let g = forward_difference(&z, geom).unwrap();
        let at = |i: usize, j: usize| z[(i % 3) * 3 + (j % 3)];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.dx[i * 3 + j], at(i, j + 1) - at(i, j));
                assert_eq!(g.dy[i * 3 + j], at(i + 1, j) - at(i, j));
            }
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let geom = ImageGeometry::new(2, 2).unwrap();
        assert!(matches!(forward_difference(&[0.0; 3], geom), Err(Error::Dimension(_))));
        let g = GradientPair::zeros(3);
        assert!(divergence_adjoint(&g, geom).is_err());
        assert!(laplacian_apply(&[0.0; 5], geom).is_err());
    }

    #[test]
    fn adjoint_of_zero_and_of_constant_gradient() {
        let geom = ImageGeometry::new(3, 4).unwrap();
        let zero = divergence_adjoint(&GradientPair::zeros(12), geom).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let g = forward_difference(&[2.5; 12], geom).unwrap();
        assert!(divergence_adjoint(&g, geom).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_matches_dense_transpose() {
        let geom = ImageGeometry::new(4, 4).unwrap();
        let dense = dense_gradient(geom);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let z = random_field(&mut rng, 16);
            let gx = random_field(&mut rng, 16);
            let gy = random_field(&mut rng, 16);
            let g = GradientPair { dx: gx.clone(), dy: gy.clone() };
            let lhs = forward_difference(&z, geom).unwrap().dot(&g);
            let rhs = dot(&z, &divergence_adjoint(&g, geom).unwrap());
            assert!((lhs - rhs).abs() < 1e-10);

            let stacked = DVector::from_iterator(32, gx.into_iter().chain(gy));
            let oracle = dense.transpose() * stacked;
            let ours = divergence_adjoint(&g, geom).unwrap();
            for (a, b) in ours.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_impulse_is_five_point_stencil() {
        let geom = ImageGeometry::new(3, 3).unwrap();
        let mut z = vec![0.0; 9];
        z[4] = 1.0;
        let lap = laplacian_apply(&z, geom).unwrap();
        let dense = dense_gradient(geom);
        let oracle = -(dense.transpose() * &dense) * DVector::from_vec(z);
        for (a, b) in lap.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(lap[4], -4.0);
        for k in [1, 3, 5, 7] {
            assert_eq!(lap[k], 1.0);
        }
    }

    #[test]
    fn negative_laplacian_is_psd() {
        let geom = ImageGeometry::new(5, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let z = random_field(&mut rng, 30);
            let lap = laplacian_apply(&z, geom).unwrap();
            assert!(-dot(&z, &lap) >= -1e-12);
        }
        assert!(laplacian_apply(&[3.0; 30], geom).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_is_composition_bit_for_bit() {
        let geom = ImageGeometry::new(4, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_field(&mut rng, 20);
        let composed: Vec<f64> = divergence_adjoint(&forward_difference(&z, geom).unwrap(), geom)
            .unwrap()
            .into_iter()
            .map(|v| -v)
            .collect();
        assert_eq!(laplacian_apply(&z, geom).unwrap(), composed);
    }

    fn small_dict(spectra: DMatrix<f64>) -> Dictionary {
        let grid = EnergyGrid::linspace(0.0, 1.0, spectra.nrows()).unwrap();
        Dictionary::unlabeled(grid, spectra).unwrap()
    }

    #[test]
    fn mix_forward_unit_scale_is_plain_product() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 0.5, 0.0, 2.0]);
        let dict = small_dict(a.clone());
        let geom = ImageGeometry::new(1, 2).unwrap();
        let x = PhaseMap::new(geom, DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.7, 0.0])).unwrap();
        let y = mix_forward(&dict, &x, &ScalingField::ones(geom)).unwrap();
        assert_eq!(y.values, &a * &x.abundances);
    }

    #[test]
    fn mix_forward_pure_pixel_scales_first_column() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 0.5, 0.0, 2.0]);
        let dict = small_dict(a.clone());
        let geom = ImageGeometry::new(1, 3).unwrap();
        let mut xm = DMatrix::zeros(2, 3);
        xm.row_mut(0).fill(1.0);
        let x = PhaseMap::new(geom, xm).unwrap();
        let s = ScalingField::new(geom, DVector::from_vec(vec![0.5, 2.0, 3.0])).unwrap();
        let y = mix_forward(&dict, &x, &s).unwrap();
        for k in 0..3 {
            for t in 0..3 {
                assert_eq!(y.values[(t, k)], s.values[k] * a[(t, 0)]);
            }
        }
    }

    #[test]
    fn mix_forward_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(4, 2, |_, _| rng.random_range(0.1..1.0));
        let dict = small_dict(a.clone());
        let geom = ImageGeometry::new(1, 3).unwrap();
        let xm = DMatrix::from_fn(2, 3, |_, _| rng.random_range(0.0..1.0));
        let sv: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
        let x = PhaseMap::new(geom, xm.clone()).unwrap();
        let s = ScalingField::new(geom, DVector::from_vec(sv.clone())).unwrap();
        let y = mix_forward(&dict, &x, &s).unwrap();
        for t in 0..4 {
            for k in 0..3 {
                let mut acc = 0.0;
                for l in 0..2 {
                    acc += a[(t, l)] * xm[(l, k)];
                }
                assert!((y.values[(t, k)] - acc * sv[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mix_forward_rejects_state_mismatch() {
        let dict = small_dict(DMatrix::from_element(3, 2, 1.0));
        let geom = ImageGeometry::new(1, 1).unwrap();
        let x = PhaseMap::new(geom, DMatrix::from_element(3, 1, 1.0 / 3.0)).unwrap();
        assert!(mix_forward(&dict, &x, &ScalingField::ones(geom)).is_err());
    }

    #[test]
    fn grid_and_dictionary_validation() {
        assert!(EnergyGrid::new(vec![1.0]).is_err());
        assert!(EnergyGrid::new(vec![1.0, 1.0]).is_err());
        assert!(ImageGeometry::new(0, 3).is_err());
        let grid = EnergyGrid::linspace(0.0, 1.0, 3).unwrap();
        let mut a = DMatrix::from_element(3, 2, 1.0);
        a.column_mut(1).fill(0.0);
        assert!(Dictionary::unlabeled(grid, a).is_err());
    }
}
