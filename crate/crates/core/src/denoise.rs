//! Image denoisers used as the proximal step of the plug-and-play prior.
//!
//! A denoiser maps a row-major `rows × cols` image and a Gaussian noise
//! level `sigma` to a cleaned image of the same size. All bundled filters
//! use periodic boundaries, the same topology as the gradient operator.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::cube::ImageGeometry;
use crate::{Error, Result};

pub trait Denoiser: Send + Sync {
    fn denoise(&self, image: &[f64], geom: ImageGeometry, sigma: f64) -> Result<Vec<f64>>;
}

impl<F> Denoiser for F
where
    F: Fn(&[f64], ImageGeometry, f64) -> Result<Vec<f64>> + Send + Sync,
{
    fn denoise(&self, image: &[f64], geom: ImageGeometry, sigma: f64) -> Result<Vec<f64>> {
        self(image, geom, sigma)
    }
}

/// Denoiser name plus numeric parameters (`key=value` on the command line).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenoiserSpec {
    pub id: String,
    pub params: BTreeMap<String, f64>,
}

impl DenoiserSpec {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// Parses `key=value`.
    pub fn set_param(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("denoiser parameter `{pair}` is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("denoiser parameter `{pair}` has a non-numeric value")))?;
        self.params.insert(k.trim().to_string(), v);
        Ok(())
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn radius(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.param(key, default as f64);
        if !(v >= 0.0) || v.fract() != 0.0 {
            return Err(Error::Invalid(format!("denoiser `{}`: {key} must be a nonnegative integer", self.id)));
        }
        Ok(v as usize)
    }
}

impl fmt::Display for DenoiserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id)?;
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Denoiser for Identity {
    fn denoise(&self, image: &[f64], geom: ImageGeometry, _sigma: f64) -> Result<Vec<f64>> {
        geom.check_field(image.len(), "image")?;
        Ok(image.to_vec())
    }
}

/// Separable Gaussian blur with standard deviation `factor · sigma`.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian {
    pub factor: f64,
}

impl Default for Gaussian {
    fn default() -> Self {
        Self { factor: 1.0 }
    }
}

/// Normalized 1-D Gaussian taps of radius `ceil(3·std)`; a single unit tap for `std = 0`.
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (3.0 * std).ceil() as usize;
    if radius == 0 || !(std > 0.0) {
        return vec![1.0];
    }
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (std * std)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Periodic separable convolution with a symmetric odd-length kernel.
pub fn convolve_periodic(image: &[f64], geom: ImageGeometry, taps: &[f64]) -> Vec<f64> {
    let (rows, cols) = (geom.rows(), geom.cols());
    let r = taps.len() / 2;
    if r == 0 {
        return image.iter().map(|v| v * taps[0]).collect();
    }
    let mut tmp = vec![0.0; image.len()];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (q, &w) in taps.iter().enumerate() {
                let jj = (j + cols * (r / cols + 1) + q - r) % cols;
                acc += w * image[i * cols + jj];
            }
            tmp[i * cols + j] = acc;
        }
    }
    let mut out = vec![0.0; image.len()];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (q, &w) in taps.iter().enumerate() {
                let ii = (i + rows * (r / rows + 1) + q - r) % rows;
                acc += w * tmp[ii * cols + j];
            }
            out[i * cols + j] = acc;
        }
    }
    out
}

impl Denoiser for Gaussian {
    fn denoise(&self, image: &[f64], geom: ImageGeometry, sigma: f64) -> Result<Vec<f64>> {
        geom.check_field(image.len(), "image")?;
        check_sigma(sigma)?;
        let taps = gaussian_kernel(self.factor * sigma);
        if taps.len() == 1 {
            return Ok(image.to_vec());
        }
        Ok(convolve_periodic(image, geom, &taps))
    }
}

/// Square-window median of radius `radius`.
#[derive(Debug, Clone, Copy)]
pub struct Median {
    pub radius: usize,
}

impl Default for Median {
    fn default() -> Self {
        Self { radius: 1 }
    }
}

impl Denoiser for Median {
    fn denoise(&self, image: &[f64], geom: ImageGeometry, sigma: f64) -> Result<Vec<f64>> {
        geom.check_field(image.len(), "image")?;
        check_sigma(sigma)?;
        let (rows, cols) = (geom.rows(), geom.cols());
        let r = self.radius;
        let side = 2 * r + 1;
        let mut window = Vec::with_capacity(side * side);
        let mut out = vec![0.0; image.len()];
        for i in 0..rows {
            for j in 0..cols {
                window.clear();
                for di in 0..side {
                    let ii = (i + rows * (r / rows + 1) + di - r) % rows;
                    for dj in 0..side {
                        let jj = (j + cols * (r / cols + 1) + dj - r) % cols;
                        window.push(image[ii * cols + jj]);
                    }
                }
                let mid = window.len() / 2;
                window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
                out[i * cols + j] = window[mid];
            }
        }
        Ok(out)
    }
}

/// Non-local means with weights `exp(−max(d² − 2σ², 0)/h²)`, `h = strength·σ`,
/// where `d²` is the mean squared difference of `(2·patch_radius+1)²` patches.
#[derive(Debug, Clone, Copy)]
pub struct NonLocalMeans {
    pub patch_radius: usize,
    pub search_radius: usize,
    pub strength: f64,
}

impl Default for NonLocalMeans {
    fn default() -> Self {
        Self { patch_radius: 1, search_radius: 5, strength: 0.4 }
    }
}

impl NonLocalMeans {
    /// Per-pixel weights over the search window, in offset order
    /// `(−R..=R) × (−R..=R)`; each list sums to one.
    pub fn weights(&self, image: &[f64], geom: ImageGeometry, sigma: f64) -> Vec<Vec<f64>> {
        let n = image.len();
        let offsets = self.offsets();
        let mut raw = vec![Vec::with_capacity(offsets.len()); n];
        let h2 = (self.strength * sigma).powi(2);
        for &(oi, oj) in &offsets {
            let d2 = self.patch_distances(image, geom, oi, oj);
            for k in 0..n {
                raw[k].push((-(d2[k] - 2.0 * sigma * sigma).max(0.0) / h2).exp());
            }
        }
        for w in &mut raw {
            let sum: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= sum);
        }
        raw
    }

    fn offsets(&self) -> Vec<(isize, isize)> {
        let s = self.search_radius as isize;
        let mut out = Vec::new();
        for oi in -s..=s {
            for oj in -s..=s {
                out.push((oi, oj));
            }
        }
        out
    }

    /// Mean squared patch difference between every pixel and its `(oi, oj)` neighbour.
    fn patch_distances(&self, image: &[f64], geom: ImageGeometry, oi: isize, oj: isize) -> Vec<f64> {
        let (rows, cols) = (geom.rows() as isize, geom.cols() as isize);
        let wrap = |v: isize, m: isize| v.rem_euclid(m) as usize;
        let mut diff = vec![0.0; image.len()];
        for i in 0..rows {
            for j in 0..cols {
                let a = image[(i * cols + j) as usize];
                let b = image[wrap(i + oi, rows) * cols as usize + wrap(j + oj, cols)];
                diff[(i * cols + j) as usize] = (a - b) * (a - b);
            }
        }
        let side = 2 * self.patch_radius + 1;
        let box_taps = vec![1.0 / side as f64; side];
        convolve_periodic(&diff, geom, &box_taps)
    }
}

impl Denoiser for NonLocalMeans {
    fn denoise(&self, image: &[f64], geom: ImageGeometry, sigma: f64) -> Result<Vec<f64>> {
        geom.check_field(image.len(), "image")?;
        check_sigma(sigma)?;
        if sigma == 0.0 || self.strength == 0.0 {
            return Ok(image.to_vec());
        }
        let (rows, cols) = (geom.rows() as isize, geom.cols() as isize);
        let n = image.len();
        let h2 = (self.strength * sigma).powi(2);
        let two_s2 = 2.0 * sigma * sigma;
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for (oi, oj) in self.offsets() {
            let d2 = self.patch_distances(image, geom, oi, oj);
            for i in 0..rows {
                for j in 0..cols {
                    let k = (i * cols + j) as usize;
                    let w = (-(d2[k] - two_s2).max(0.0) / h2).exp();
                    let q = (i + oi).rem_euclid(rows) as usize * cols as usize + (j + oj).rem_euclid(cols) as usize;
                    num[k] += w * image[q];
                    den[k] += w;
                }
            }
        }
        Ok(num.iter().zip(&den).map(|(a, b)| a / b).collect())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Invalid(format!("denoiser sigma must be finite and nonnegative, got {sigma}")));
    }
    Ok(())
}

/// Builds one of the bundled denoisers from its spec.
pub fn bundled(spec: &DenoiserSpec) -> Result<Arc<dyn Denoiser>> {
    Ok(match spec.id.as_str() {
        "identity" => Arc::new(Identity),
        "gaussian" => {
            let factor = spec.param("factor", 1.0);
            if !(factor >= 0.0) {
                return Err(Error::Invalid("gaussian factor must be nonnegative".into()));
            }
            Arc::new(Gaussian { factor })
        }
        "median" => Arc::new(Median { radius: spec.radius("radius", 1)? }),
        "nlm" => {
            let d = NonLocalMeans::default();
            let nlm = NonLocalMeans {
                patch_radius: spec.radius("patch", d.patch_radius)?,
                search_radius: spec.radius("search", d.search_radius)?,
                strength: spec.param("strength", d.strength),
            };
            if nlm.patch_radius > nlm.search_radius {
                return Err(Error::Invalid("nlm patch radius exceeds search radius".into()));
            }
            if !(nlm.strength >= 0.0) {
                return Err(Error::Invalid("nlm strength must be nonnegative".into()));
            }
            Arc::new(nlm)
        }
        other => return Err(Error::UnknownDenoiser(other.to_string())),
    })
}

pub const BUNDLED_IDS: [&str; 4] = ["identity", "gaussian", "median", "nlm"];

/// Name → implementation table. Bundled ids are always resolvable;
/// additional implementations can be registered under new ids.
#[derive(Clone, Default)]
pub struct DenoiserRegistry {
    custom: HashMap<String, Arc<dyn Denoiser>>,
}

impl fmt::Debug for DenoiserRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.custom.keys().collect();
        ids.sort();
        f.debug_struct("DenoiserRegistry").field("custom", &ids).finish()
    }
}

impl DenoiserRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: impl Into<String>, imp: Arc<dyn Denoiser>) -> Result<()> {
        let id = id.into();
        if BUNDLED_IDS.contains(&id.as_str()) || self.custom.contains_key(&id) {
            return Err(Error::DuplicateDenoiser(id));
        }
        self.custom.insert(id, imp);
        Ok(())
    }

    pub fn resolve(&self, spec: &DenoiserSpec) -> Result<Arc<dyn Denoiser>> {
        match self.custom.get(&spec.id) {
            Some(d) => Ok(Arc::clone(d)),
            None => bundled(spec),
        }
    }
}
