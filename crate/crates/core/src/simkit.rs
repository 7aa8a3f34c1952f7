//! Synthetic TXM-XANES scenes: parametric edge spectra, procedural or
//! label-driven phase maps, smooth scaling fields and Gaussian noise.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cube::{mix_forward, Dictionary, EnergyGrid, ImageGeometry, PhaseMap, ScalingField, SpectralCube};
use crate::denoise::convolve_periodic;
use crate::{Error, Result};

pub use crate::metrics::{psnr, rmse, ssim, PsnrPeak};

/// Absorption edge `0.5·(1 + tanh((E−E₀)/w))` plus a Gaussian white line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumModel {
    pub edge_energy: f64,
    pub edge_width: f64,
    pub whiteline_amp: f64,
    pub whiteline_center: f64,
    pub whiteline_width: f64,
}

impl SpectrumModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.edge_width > 0.0) || !(self.whiteline_width > 0.0) {
            return Err(Error::Invalid("spectrum widths must be positive".into()));
        }
        if !(self.whiteline_amp >= 0.0) {
            return Err(Error::Invalid("white-line amplitude must be nonnegative".into()));
        }
        Ok(())
    }

    /// Ni K-edge-like states: edges 5 eV apart starting at 8345 eV, with
    /// white lines growing in height and shifting with the edge.
    pub fn ni_states(count: usize) -> Vec<SpectrumModel> {
        (0..count)
            .map(|j| {
                let e0 = 8345.0 + 5.0 * j as f64;
                SpectrumModel {
                    edge_energy: e0,
                    edge_width: 4.0,
                    whiteline_amp: 0.35 + 0.1 * j as f64,
                    whiteline_center: e0 + 8.0,
                    whiteline_width: 6.0,
                }
            })
            .collect()
    }
}

/// 117 energies from 8180 eV to 8562 eV.
pub fn ni_grid() -> EnergyGrid {
    EnergyGrid::linspace(8180.0, 8562.0, 117).expect("static grid is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpectrum {
    pub values: Vec<f64>,
    /// Edge energy lies outside the grid.
    pub edge_outside: bool,
}

pub fn synth_spectrum(model: &SpectrumModel, grid: &EnergyGrid) -> Result<SynthSpectrum> {
    model.validate()?;
    let values = grid
        .energies()
        .iter()
        .map(|&e| {
            let edge = 0.5 * (1.0 + ((e - model.edge_energy) / model.edge_width).tanh());
            let d = e - model.whiteline_center;
            edge + model.whiteline_amp * (-d * d / (2.0 * model.whiteline_width * model.whiteline_width)).exp()
        })
        .collect();
    let edge_outside = model.edge_energy < grid.first() || model.edge_energy > grid.last();
    Ok(SynthSpectrum { values, edge_outside })
}

/// Procedural phase-map layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Random discs of states 2..L on a state-1 background, boundaries softened by a blur.
    Particles,
    /// Piecewise-linear left-to-right transition through the states.
    Ramp,
}

impl std::str::FromStr for Pattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "particles" => Ok(Pattern::Particles),
            "ramp" => Ok(Pattern::Ramp),
            other => Err(Error::Invalid(format!("unknown pattern `{other}` (particles|ramp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource {
    /// One state index per pixel (row-major); produces pure regions.
    Labels(Vec<usize>),
    Pattern(Pattern),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub geometry: ImageGeometry,
    pub grid: EnergyGrid,
    pub states: Vec<SpectrumModel>,
    pub label_source: LabelSource,
    pub scaling_range: (f64, f64),
    pub sigma: f64,
    /// Noise unit as a fraction of the clean cube's maximum.
    pub noise_unit_frac: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Square particle scene on the Ni grid with `states` chemical states.
    pub fn standard(size: usize, states: usize, sigma: f64, seed: u64) -> Self {
        Self {
            geometry: ImageGeometry::new(size, size).expect("nonzero size"),
            grid: ni_grid(),
            states: SpectrumModel::ni_states(states),
            label_source: LabelSource::Pattern(Pattern::Particles),
            scaling_range: (0.8, 1.2),
            sigma,
            noise_unit_frac: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Invalid("scene needs at least one state".into()));
        }
        let (lo, hi) = self.scaling_range;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(Error::Invalid(format!("scaling range [{lo}, {hi}] must satisfy 0 ≤ lo ≤ hi")));
        }
        if !(self.sigma >= 0.0) || !(self.noise_unit_frac >= 0.0) {
            return Err(Error::Invalid("noise level must be nonnegative".into()));
        }
        for s in &self.states {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cube: SpectralCube,
    pub x_gt: PhaseMap,
    pub s_gt: ScalingField,
    pub dict: Dictionary,
    /// Per-entry noise standard deviation actually applied.
    pub noise_std: f64,
}

impl Scene {
    /// Pixels whose ground-truth column is not a simplex vertex.
    pub fn mixed_pixels(&self) -> Vec<usize> {
        self.x_gt
            .abundances
            .column_iter()
            .enumerate()
            .filter(|(_, c)| c.max() < 1.0 - 1e-9)
            .map(|(k, _)| k)
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn one_hot(labels: &[usize], states: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(states, labels.len());
    for (k, &l) in labels.iter().enumerate() {
        x[(l, k)] = 1.0;
    }
    x
}

fn particle_labels(geom: ImageGeometry, states: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (rows, cols) = (geom.rows() as f64, geom.cols() as f64);
    let short = rows.min(cols);
    let mut labels = vec![0usize; geom.len()];
    if states == 1 {
        return labels;
    }
    let discs = 4 + 2 * (states - 1);
    for d in 0..discs {
        let ci = rng.random_range(0.0..rows);
        let cj = rng.random_range(0.0..cols);
        let r = rng.random_range(0.1..0.22) * short;
        let state = 1 + d % (states - 1);
        for i in 0..geom.rows() {
            for j in 0..geom.cols() {
                // periodic distance, matching the operators' topology
                let di = ((i as f64 - ci).abs()).min(rows - (i as f64 - ci).abs());
                let dj = ((j as f64 - cj).abs()).min(cols - (j as f64 - cj).abs());
                if di * di + dj * dj <= r * r {
                    labels[geom.index(i, j)] = state;
                }
            }
        }
    }
    labels
}

fn ramp_abundances(geom: ImageGeometry, states: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(states, geom.len());
    for i in 0..geom.rows() {
        for j in 0..geom.cols() {
            let k = geom.index(i, j);
            if states == 1 || geom.cols() == 1 {
                x[(0, k)] = 1.0;
                continue;
            }
            let pos = j as f64 / (geom.cols() - 1) as f64 * (states - 1) as f64;
            let lo = (pos.floor() as usize).min(states - 2);
            let f = pos - lo as f64;
            x[(lo, k)] = 1.0 - f;
            x[(lo + 1, k)] = f;
        }
    }
    x
}

/// Builds `Y = A·X·diag(s) + noise` with every random draw taken from
/// independent seeded streams (layout, scaling, noise).
pub fn build_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let geom = spec.geometry;
    let l = spec.states.len();

    let mut spectra = DMatrix::zeros(spec.grid.len(), l);
    for (j, model) in spec.states.iter().enumerate() {
        spectra.column_mut(j).copy_from_slice(&synth_spectrum(model, &spec.grid)?.values);
    }
    let dict = Dictionary::unlabeled(spec.grid.clone(), spectra)?;

    let x = match &spec.label_source {
        LabelSource::Labels(labels) => {
            geom.check_field(labels.len(), "label image")?;
            let distinct = labels.iter().copied().max().map_or(0, |m| m + 1);
            if distinct != l || labels.iter().any(|&v| v >= l) {
                return Err(Error::Invalid(format!("label image has {distinct} states, scene has {l}")));
            }
            one_hot(labels, l)
        }
        LabelSource::Pattern(Pattern::Particles) => {
            let labels = particle_labels(geom, l, &mut stream(spec.seed, 1));
            let hard = one_hot(&labels, l);
            let taps = crate::denoise::gaussian_kernel(1.0);
            let mut soft = DMatrix::zeros(l, geom.len());
            for j in 0..l {
                let row: Vec<f64> = hard.row(j).iter().copied().collect();
                let blurred = convolve_periodic(&row, geom, &taps);
                for (k, v) in blurred.into_iter().enumerate() {
                    soft[(j, k)] = v;
                }
            }
            for mut col in soft.column_iter_mut() {
                col.iter_mut().for_each(|v| *v = v.max(0.0));
                let sum = col.sum();
                col /= sum;
            }
            soft
        }
        LabelSource::Pattern(Pattern::Ramp) => ramp_abundances(geom, l),
    };
    let x_gt = PhaseMap::new(geom, x)?;

    let (lo, hi) = spec.scaling_range;
    let s_vals = if hi > lo {
        let mut rng = stream(spec.seed, 2);
        let raw: Vec<f64> = (0..geom.len()).map(|_| rng.random_range(lo..=hi)).collect();
        let taps = smoothing_taps();
        convolve_periodic(&raw, geom, &taps).into_iter().map(|v| v.clamp(lo, hi)).collect()
    } else {
        vec![lo; geom.len()]
    };
    let s_gt = ScalingField::new(geom, DVector::from_vec(s_vals))?;

    let mut cube = mix_forward(&dict, &x_gt, &s_gt)?;
    let noise_std = spec.sigma * spec.noise_unit_frac * cube.values.max();
    if noise_std > 0.0 {
        let mut rng = stream(spec.seed, 3);
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
        // band-major order, the same order the cube file stores
        for t in 0..cube.bands() {
            for k in 0..cube.pixels() {
                cube.values[(t, k)] += normal.sample(&mut rng);
            }
        }
    }
    Ok(Scene { cube, x_gt, s_gt, dict, noise_std })
}

/// Radius-2 Gaussian taps (unit standard deviation) for the scaling field.
fn smoothing_taps() -> Vec<f64> {
    let mut taps: Vec<f64> = (-2i32..=2).map(|d| (-0.5 * (d * d) as f64).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}
