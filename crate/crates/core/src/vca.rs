//! Vertex component analysis: picks the pixels that span the data simplex
//! and returns their spectra as a dictionary.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cube::{Dictionary, SpectralCube};
use crate::denoise::Denoiser;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcaConfig {
    pub count: usize,
    pub seed: u64,
    /// Forces the projection branch with this SNR in dB instead of estimating it.
    pub snr_override: Option<f64>,
}

impl VcaConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        Self { count, seed, snr_override: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcaOutput {
    pub dictionary: Dictionary,
    /// Pixel index of each selected endmember, in selection order.
    pub indices: Vec<usize>,
    /// SNR in dB that chose the projection branch.
    pub snr_db: f64,
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn leading(vectors: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    vectors.columns(0, d).into_owned()
}

fn rank_of(values: &[f64]) -> usize {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    values.iter().filter(|&&v| v > 1e-12 * top && v > 0.0).count()
}

pub fn vca_extract(cube: &SpectralCube, cfg: VcaConfig) -> Result<VcaOutput> {
    let r = &cube.values;
    let (t, n) = r.shape();
    let p = cfg.count;
    if p == 0 || p > t.min(n) {
        return Err(Error::Invalid(format!("endmember count must be in 1..={}, got {p}", t.min(n))));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("vca input cube".into()));
    }
    let nf = n as f64;

    let corr = r * r.transpose() / nf;
    let (corr_vals, corr_vecs) = sorted_eigen(corr);
    let rank = rank_of(&corr_vals);
    if rank < p {
        return Err(Error::RankDeficient { requested: p, achievable: rank });
    }

    let mean = r.column_mean();
    let mut centered = r.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let (_, cov_vecs) = sorted_eigen(&centered * centered.transpose() / nf);

    let snr_db = match cfg.snr_override {
        Some(v) => v,
        None => {
            let x_p = leading(&cov_vecs, p).transpose() * &centered;
            let p_y = r.norm_squared() / nf;
            let p_x = x_p.norm_squared() / nf + mean.norm_squared();
            let noise = p_y - p_x;
            let signal = p_x - p as f64 / t as f64 * p_y;
            if noise <= 1e-12 * p_y {
                f64::INFINITY
            } else if signal <= 0.0 {
                f64::NEG_INFINITY
            } else {
                10.0 * (signal / noise).log10()
            }
        }
    };
    let threshold = 15.0 + 10.0 * (p as f64).log10();

    let indices = if p == 1 {
        let u = corr_vecs.column(0);
        vec![argmax_abs((0..n).map(|k| u.dot(&r.column(k))))]
    } else {
        let y = if snr_db < threshold {
            let d = p - 1;
            let x = leading(&cov_vecs, d).transpose() * &centered;
            let c = x.column_iter().map(|col| col.norm()).fold(0.0, f64::max);
            let mut y = DMatrix::from_element(p, n, c);
            y.rows_mut(0, d).copy_from(&x);
            y
        } else {
            let x = leading(&corr_vecs, p).transpose() * r;
            let u = x.column_mean();
            let mut y = x;
            for mut col in y.column_iter_mut() {
                let denom = col.dot(&u);
                col /= denom;
            }
            y
        };
        select(&y, p, cfg.seed)?
    };

    let mut spectra = DMatrix::zeros(t, p);
    for (j, &k) in indices.iter().enumerate() {
        spectra.set_column(j, &r.column(k));
    }
    let dictionary = Dictionary::unlabeled(cube.grid.clone(), spectra)?;
    Ok(VcaOutput { dictionary, indices, snr_db })
}

fn argmax_abs(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v.abs() > best.1 {
            best = (k, v.abs());
        }
    }
    best.0
}

fn select(y: &DMatrix<f64>, p: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(p, p);
    a[(p - 1, 0)] = 1.0;
    let mut indices = Vec::with_capacity(p);
    for i in 0..p {
        let w = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let pinv = a.clone().pseudo_inverse(1e-12).map_err(|e| Error::NonFinite(e.to_string()))?;
        let mut f = &w - &a * (pinv * &w);
        let norm = f.norm();
        if !(norm > 1e-12 * w.norm()) {
            return Err(Error::RankDeficient { requested: p, achievable: i });
        }
        f /= norm;
        let k = argmax_abs(y.column_iter().map(|col| f.dot(&col)));
        if !y.column(k).iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("vca projected data".into()));
        }
        if indices.contains(&k) {
            return Err(Error::RankDeficient { requested: p, achievable: i });
        }
        a.set_column(i, &y.column(k));
        indices.push(k);
    }
    Ok(indices)
}

/// Angle between two spectra in `[0, π]`.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} energies", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Invalid("spectral angle of a zero vector".into()));
    }
    // 2·atan2(‖â − b̂‖, ‖â + b̂‖) stays accurate near 0 and π
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (x / na, y / nb);
        diff += (p - q) * (p - q);
        sum += (p + q) * (p + q);
    }
    Ok(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// Greedy matching of extracted to reference spectra by smallest angle.
/// Returns `(extracted, reference, angle)` triples in matching order.
pub fn match_endmembers(extracted: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<Vec<(usize, usize, f64)>> {
    let (p, q) = (extracted.ncols(), reference.ncols());
    let mut table = Vec::with_capacity(p * q);
    for i in 0..p {
        for j in 0..q {
            let ang = spectral_angle(extracted.column(i).as_slice(), reference.column(j).as_slice())?;
            table.push((ang, i, j));
        }
    }
    table.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut used_a = vec![false; p];
    let mut used_b = vec![false; q];
    let mut out = Vec::new();
    for (ang, i, j) in table {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j, ang));
        }
    }
    Ok(out)
}

/// Noise level of an image from the median absolute horizontal difference.
pub fn estimate_noise_sigma(image: &[f64], cols: usize) -> f64 {
    let mut diffs: Vec<f64> = image
        .chunks(cols)
        .flat_map(|row| row.windows(2).map(|w| (w[1] - w[0]).abs()))
        .collect();
    if diffs.is_empty() {
        return 0.0;
    }
    diffs.sort_by(f64::total_cmp);
    diffs[diffs.len() / 2] / (0.6745 * std::f64::consts::SQRT_2)
}

/// Denoises each band image independently at its estimated noise level.
pub fn predenoise(cube: &SpectralCube, denoiser: &dyn Denoiser) -> Result<SpectralCube> {
    let geom = cube.geometry;
    let bands: Vec<Vec<f64>> = (0..cube.bands())
        .into_par_iter()
        .map(|b| {
            let img = cube.band(b);
            let sigma = estimate_noise_sigma(&img, geom.cols());
            denoiser.denoise(&img, geom, sigma)
        })
        .collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(cube.bands(), cube.pixels());
    for (b, img) in bands.iter().enumerate() {
        if img.len() != cube.pixels() {
            return Err(Error::DenoiserFailed { row: b, message: "wrong output size".into() });
        }
        for (k, v) in img.iter().enumerate() {
            values[(b, k)] = *v;
        }
    }
    SpectralCube::new(geom, cube.grid.clone(), values)
}
