//! Phase-map quality metrics: RMSE, PSNR and global SSIM.

use crate::cube::PhaseMap;
use crate::{Error, Result};

/// Peak value convention for PSNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsnrPeak {
    /// Largest entry of the estimate.
    #[default]
    Estimate,
    /// Fixed peak of 1.0.
    Unit,
}

fn check_shapes(est: &PhaseMap, gt: &PhaseMap) -> Result<()> {
    if est.abundances.shape() != gt.abundances.shape() || est.geometry != gt.geometry {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, ground truth {:?}",
            est.abundances.shape(),
            gt.abundances.shape()
        )));
    }
    Ok(())
}

/// Root mean squared entrywise difference.
pub fn rmse_values(est: &[f64], gt: &[f64]) -> Result<f64> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::Dimension(format!("{} vs {} values", est.len(), gt.len())));
    }
    let sse: f64 = est.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / est.len() as f64).sqrt())
}

pub fn rmse(est: &PhaseMap, gt: &PhaseMap) -> Result<f64> {
    check_shapes(est, gt)?;
    rmse_values(est.abundances.as_slice(), gt.abundances.as_slice())
}

/// `20·log₁₀(MAX/RMSE)`; `+∞` when the maps agree exactly.
pub fn psnr(est: &PhaseMap, gt: &PhaseMap, peak: PsnrPeak) -> Result<f64> {
    let e = rmse(est, gt)?;
    let max = match peak {
        PsnrPeak::Estimate => est.abundances.max(),
        PsnrPeak::Unit => 1.0,
    };
    Ok(psnr_from(max, e))
}

pub fn psnr_from(max: f64, rmse: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (max / rmse).log10()
    }
}

/// Single-window SSIM over whole images with `c₁ = (0.01·D)²`, `c₂ = (0.03·D)²`.
pub fn ssim_image(est: &[f64], gt: &[f64], dynamic_range: f64) -> Result<f64> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::Dimension(format!("{} vs {} pixels", est.len(), gt.len())));
    }
    let n = est.len() as f64;
    let mu_a = est.iter().sum::<f64>() / n;
    let mu_b = gt.iter().sum::<f64>() / n;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for (a, b) in est.iter().zip(gt) {
        let (da, db) = (a - mu_a, b - mu_b);
        var_a += da * da;
        var_b += db * db;
        cov += da * db;
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    Ok(((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)))
}

/// Mean of per-state global SSIM.
pub fn ssim(est: &PhaseMap, gt: &PhaseMap, dynamic_range: f64) -> Result<f64> {
    check_shapes(est, gt)?;
    let l = est.states();
    let mut acc = 0.0;
    for j in 0..l {
        acc += ssim_image(&est.state_image(j), &gt.state_image(j), dynamic_range)?;
    }
    Ok(acc / l as f64)
}
