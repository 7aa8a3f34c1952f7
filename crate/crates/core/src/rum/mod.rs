//! Robust unmixing by multi-block ADMM.
//!
//! Solves
//!
//! ```text
//! min ½‖Y − A·X·diag(s)‖²_F + λ·R(X)   s.t.  X ≥ 0, 1ᵀX = 1, s ≥ 0
//! ```
//!
//! with `R` either the anisotropic total variation of each state image or an
//! implicit prior supplied by a [`Denoiser`](crate::denoise::Denoiser). The
//! splits are `M = X·diag(s)`, `u_j = ∇x_j` (TV) or `u_j = x_j` (PnP),
//! `W = X` and `t = s`, all with the same penalty `ρ` and scaled duals
//! `C`, `D`, `E`, `g`.
//!
//! One outer iteration updates, in order: X, normalization of X, s, M, U,
//! W and t, then the duals.

mod kkt;
pub mod updates;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::baselines::lcf_unmix;
use crate::cg::CgOptions;
use crate::cube::{ImageGeometry, PhaseMap, ScalingField, SpectralCube};
use crate::denoise::{Denoiser, DenoiserRegistry, DenoiserSpec};
use crate::metrics::rmse;
use crate::{Dictionary, Error, Result};

pub use kkt::{kkt_residuals, KktResiduals, KKT_NAMES};
pub use updates::{
    normalize_columns, project_splits, shrink, update_duals, update_m, update_s, update_u_pnp, update_u_tv,
    update_x_pnp, update_x_tv, MSolver, XUpdate,
};
use updates::{row_vec, stacked_gradient};

#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Tv,
    PnP(DenoiserSpec),
}

impl Prior {
    pub fn kind(&self) -> PriorKind {
        match self {
            Prior::Tv => PriorKind::Tv,
            Prior::PnP(_) => PriorKind::PnP,
        }
    }
}

/// Shape of the prior split, which fixes the length of each `u_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Tv,
    PnP,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub rho: f64,
    pub max_iter: usize,
    /// Stop once the dual successive-difference energy falls below this.
    pub re_tol: Option<f64>,
    pub cg: CgOptions,
    pub prior: Prior,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { lambda: 0.01, rho: 1.0, max_iter: 100, re_tol: None, cg: CgOptions::default(), prior: Prior::Tv }
    }
}

impl SolverConfig {
    pub fn tv(lambda: f64, rho: f64) -> Self {
        Self { lambda, rho, ..Self::default() }
    }

    pub fn pnp(spec: DenoiserSpec, lambda: f64, rho: f64) -> Self {
        Self { lambda, rho, prior: Prior::PnP(spec), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if self.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be at least 1".into()));
        }
        if let Some(tol) = self.re_tol {
            if !(tol >= 0.0) {
                return Err(Error::Invalid(format!("re_tol must be nonnegative, got {tol}")));
            }
        }
        if !(self.cg.tol > 0.0) || self.cg.max_iter == 0 {
            return Err(Error::Invalid("cg tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Every block of the split problem. `u[j]` and `d[j]` hold the stacked
/// `[∇ₓ; ∇ᵧ]` pair (length `2N`) for TV and a plain image (length `N`) for PnP.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub geometry: ImageGeometry,
    pub prior: PriorKind,
    pub x: DMatrix<f64>,
    pub s: DVector<f64>,
    pub m: DMatrix<f64>,
    pub u: Vec<Vec<f64>>,
    pub w: DMatrix<f64>,
    pub t: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: Vec<Vec<f64>>,
    pub e: DMatrix<f64>,
    pub g: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Duals {
    pub c: DMatrix<f64>,
    pub d: Vec<Vec<f64>>,
    pub e: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl SolverState {
    /// State with duals at zero and every split satisfied by `x`, `s`.
    pub fn consistent(geometry: ImageGeometry, prior: PriorKind, x: DMatrix<f64>, s: DVector<f64>) -> Result<Self> {
        let n = geometry.len();
        if x.ncols() != n || s.len() != n {
            return Err(Error::Dimension(format!(
                "state has {} columns and {} scales for {n} pixels",
                x.ncols(),
                s.len()
            )));
        }
        let l = x.nrows();
        let u: Vec<Vec<f64>> = (0..l)
            .map(|j| match prior {
                PriorKind::Tv => stacked_gradient(&row_vec(&x, j), geometry),
                PriorKind::PnP => row_vec(&x, j),
            })
            .collect();
        let d = u.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut m = x.clone();
        for (k, mut col) in m.column_iter_mut().enumerate() {
            col *= s[k];
        }
        Ok(Self {
            geometry,
            prior,
            w: x.clone(),
            t: s.clone(),
            c: DMatrix::zeros(l, n),
            e: DMatrix::zeros(l, n),
            g: DVector::zeros(n),
            x,
            s,
            m,
            u,
            d,
        })
    }

    pub fn duals(&self) -> Duals {
        Duals { c: self.c.clone(), d: self.d.clone(), e: self.e.clone(), g: self.g.clone() }
    }

    pub fn is_finite(&self) -> bool {
        let mats = [&self.x, &self.m, &self.w, &self.c, &self.e];
        mats.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.s.iter().chain(self.t.iter()).chain(self.g.iter()).all(|v| v.is_finite())
            && self.u.iter().chain(&self.d).flatten().all(|v| v.is_finite())
    }

    /// Feasible outputs: X clamped at 0 and renormalized, s clamped at 0.
    pub fn outputs(&self) -> Result<(PhaseMap, ScalingField)> {
        let mut x = self.x.map(|v| v.max(0.0));
        normalize_columns(&mut x);
        let s = self.s.map(|v| v.max(0.0));
        Ok((PhaseMap::new(self.geometry, x)?, ScalingField::new(self.geometry, s)?))
    }
}

/// `‖ΔC‖² + ‖ΔD‖² + ‖ΔE‖² + ‖Δg‖²` between two dual snapshots.
pub fn relative_error(prev: &Duals, cur: &Duals) -> Result<f64> {
    if prev.c.shape() != cur.c.shape()
        || prev.e.shape() != cur.e.shape()
        || prev.g.len() != cur.g.len()
        || prev.d.len() != cur.d.len()
        || prev.d.iter().zip(&cur.d).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::Dimension("dual snapshots differ in shape".into()));
    }
    let sq = |a: f64, b: f64| (a - b) * (a - b);
    let mut re = 0.0;
    re += prev.c.iter().zip(cur.c.iter()).map(|(a, b)| sq(*a, *b)).sum::<f64>();
    re += prev.d.iter().zip(&cur.d).flat_map(|(a, b)| a.iter().zip(b)).map(|(a, b)| sq(*a, *b)).sum::<f64>();
    re += prev.e.iter().zip(cur.e.iter()).map(|(a, b)| sq(*a, *b)).sum::<f64>();
    re += prev.g.iter().zip(cur.g.iter()).map(|(a, b)| sq(*a, *b)).sum::<f64>();
    Ok(re)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    /// 1-based outer iteration.
    pub iter: usize,
    pub re: f64,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub rmse_vs_gt: Option<f64>,
    pub cg_iters: usize,
    pub cg_converged: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub map: PhaseMap,
    pub scaling: ScalingField,
    pub diagnostics: Vec<DiagnosticsRecord>,
    /// Raw iterate at exit, before the output clamp.
    pub state: SolverState,
    /// Pixels whose X column fell back to uniform during the last iteration.
    pub degenerate_columns: Vec<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("non-finite state at iteration {iter}")]
    NonFinite { iter: usize, last_good: Box<RunOutput> },
}

impl From<RunError> for Error {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Setup(inner) => inner,
            RunError::NonFinite { iter, .. } => Error::NonFinite(format!("solver state at iteration {iter}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub cg_iters: usize,
    pub cg_converged: bool,
    /// Columns that fell back to uniform in the normalization.
    pub degenerate_columns: Vec<usize>,
}

/// A configured solver bound to one cube and dictionary.
pub struct Solver {
    cfg: SolverConfig,
    a: DMatrix<f64>,
    y: DMatrix<f64>,
    geometry: ImageGeometry,
    m_solver: MSolver,
    denoiser: Option<Arc<dyn Denoiser>>,
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver").field("cfg", &self.cfg).field("geometry", &self.geometry).finish()
    }
}

impl Solver {
    pub fn new(cube: &SpectralCube, dict: &Dictionary, cfg: SolverConfig) -> Result<Self> {
        Self::with_registry(cube, dict, cfg, &DenoiserRegistry::new())
    }

    /// Resolves the denoiser through `registry`; unknown ids fail here,
    /// before any iteration.
    pub fn with_registry(cube: &SpectralCube, dict: &Dictionary, cfg: SolverConfig, registry: &DenoiserRegistry) -> Result<Self> {
        cfg.validate()?;
        if dict.bands() != cube.bands() {
            return Err(Error::Dimension(format!(
                "dictionary has {} energies, cube {}",
                dict.bands(),
                cube.bands()
            )));
        }
        let denoiser = match &cfg.prior {
            Prior::Tv => None,
            Prior::PnP(spec) => Some(registry.resolve(spec)?),
        };
        let m_solver = MSolver::new(&dict.spectra, &cube.values, cfg.rho)?;
        Ok(Self {
            a: dict.spectra.clone(),
            y: cube.values.clone(),
            geometry: cube.geometry,
            m_solver,
            denoiser,
            cfg,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Warm start from the LCF map with `s = 1` and every split satisfied.
    pub fn init_state(&self) -> Result<SolverState> {
        let dict = Dictionary::unlabeled(crate::EnergyGrid::index(self.a.nrows())?, self.a.clone())?;
        let cube = SpectralCube::new(self.geometry, dict.grid.clone(), self.y.clone())?;
        let lcf = lcf_unmix(&dict, &cube)?;
        SolverState::consistent(self.geometry, self.cfg.prior.kind(), lcf.map.abundances, DVector::from_element(self.geometry.len(), 1.0))
    }

    fn check_state(&self, st: &SolverState) -> Result<()> {
        let (l, n) = (self.a.ncols(), self.geometry.len());
        let ulen = match st.prior {
            PriorKind::Tv => 2 * n,
            PriorKind::PnP => n,
        };
        let ok = st.prior == self.cfg.prior.kind()
            && st.geometry == self.geometry
            && [&st.x, &st.m, &st.w, &st.c, &st.e].iter().all(|m| m.shape() == (l, n))
            && [&st.s, &st.t, &st.g].iter().all(|v| v.len() == n)
            && st.u.len() == l
            && st.d.len() == l
            && st.u.iter().chain(&st.d).all(|v| v.len() == ulen);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("solver state does not match the problem".into()))
        }
    }

    /// One outer iteration in place.
    pub fn step(&self, st: &mut SolverState) -> Result<StepStats> {
        let (x, cg_iters, cg_converged) = match st.prior {
            PriorKind::Tv => {
                let out = update_x_tv(st, self.cfg.cg)?;
                (out.x, out.cg_iters, out.cg_converged)
            }
            PriorKind::PnP => (update_x_pnp(st), 0, true),
        };
        st.x = x;
        let degenerate = normalize_columns(&mut st.x);
        st.s = update_s(st);
        st.m = update_m(st, &self.m_solver);
        st.u = match (st.prior, &self.denoiser) {
            (PriorKind::Tv, _) => update_u_tv(st, self.cfg.lambda, self.cfg.rho),
            (PriorKind::PnP, Some(den)) => update_u_pnp(st, den.as_ref(), self.cfg.lambda, self.cfg.rho)?,
            (PriorKind::PnP, None) => return Err(Error::Invalid("plug-and-play state without a denoiser".into())),
        };
        let (w, t) = project_splits(st);
        st.w = w;
        st.t = t;
        update_duals(st);
        Ok(StepStats { cg_iters, cg_converged, degenerate_columns: degenerate })
    }

    /// `½‖Y − A·X·diag(s)‖²_F`, plus `λ·Σ_j‖∇x_j‖₁` for TV.
    pub fn objective(&self, st: &SolverState) -> f64 {
        let mut xs = st.x.clone();
        for (k, mut col) in xs.column_iter_mut().enumerate() {
            col *= st.s[k];
        }
        let data = 0.5 * (&self.y - &self.a * xs).norm_squared();
        match st.prior {
            PriorKind::Tv => {
                let tv: f64 = (0..st.x.nrows())
                    .map(|j| stacked_gradient(&row_vec(&st.x, j), self.geometry).iter().map(|v| v.abs()).sum::<f64>())
                    .sum();
                data + self.cfg.lambda * tv
            }
            PriorKind::PnP => data,
        }
    }

    pub fn kkt(&self, st: &SolverState) -> KktResiduals {
        kkt_residuals(st, &self.a, &self.y, self.cfg.rho, self.cfg.lambda)
    }

    pub fn run(&self, gt: Option<&PhaseMap>) -> Result<RunOutput, RunError> {
        let state = self.init_state()?;
        self.run_from(state, gt)
    }

    /// Iterates from `state` until `max_iter` or `RE < re_tol`.
    pub fn run_from(&self, mut state: SolverState, gt: Option<&PhaseMap>) -> Result<RunOutput, RunError> {
        self.check_state(&state)?;
        if let Some(gt) = gt {
            if gt.abundances.shape() != state.x.shape() || gt.geometry != self.geometry {
                return Err(Error::Dimension("ground-truth map does not match the problem".into()).into());
            }
        }
        let mut diagnostics = Vec::with_capacity(self.cfg.max_iter);
        let mut degenerate = Vec::new();
        for iter in 1..=self.cfg.max_iter {
            let prev = state.clone();
            let stats = self.step(&mut state)?;
            let re = relative_error(&prev.duals(), &state.duals())?;
            let objective = self.objective(&state);
            let kkt = self.kkt(&state);
            if !state.is_finite() || !re.is_finite() || !objective.is_finite() || !kkt.is_finite() {
                let last_good = finish(prev, diagnostics, degenerate)?;
                return Err(RunError::NonFinite { iter, last_good: Box::new(last_good) });
            }
            let rmse_vs_gt = match gt {
                Some(gt) => Some(rmse(&state.outputs()?.0, gt)?),
                None => None,
            };
            diagnostics.push(DiagnosticsRecord {
                iter,
                re,
                objective,
                kkt,
                rmse_vs_gt,
                cg_iters: stats.cg_iters,
                cg_converged: stats.cg_converged,
            });
            degenerate = stats.degenerate_columns;
            if self.cfg.re_tol.is_some_and(|tol| re < tol) {
                break;
            }
        }
        Ok(finish(state, diagnostics, degenerate)?)
    }
}

fn finish(state: SolverState, diagnostics: Vec<DiagnosticsRecord>, degenerate_columns: Vec<usize>) -> Result<RunOutput> {
    let (map, scaling) = state.outputs()?;
    Ok(RunOutput { map, scaling, diagnostics, state, degenerate_columns })
}

/// Warm-start state for `cube` and `dict` under `cfg`.
pub fn init_state(cube: &SpectralCube, dict: &Dictionary, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate()?;
    if dict.bands() != cube.bands() {
        return Err(Error::Dimension(format!(
            "dictionary has {} energies, cube {}",
            dict.bands(),
            cube.bands()
        )));
    }
    let lcf = lcf_unmix(dict, cube)?;
    SolverState::consistent(cube.geometry, cfg.prior.kind(), lcf.map.abundances, DVector::from_element(cube.pixels(), 1.0))
}

/// Runs the solver with the bundled denoisers.
pub fn run(cube: &SpectralCube, dict: &Dictionary, cfg: SolverConfig, gt: Option<&PhaseMap>) -> Result<RunOutput, RunError> {
    Solver::new(cube, dict, cfg)?.run(gt)
}

/// Runs the solver resolving the denoiser through `registry`.
pub fn run_with_registry(
    cube: &SpectralCube,
    dict: &Dictionary,
    cfg: SolverConfig,
    registry: &DenoiserRegistry,
    gt: Option<&PhaseMap>,
) -> Result<RunOutput, RunError> {
    Solver::with_registry(cube, dict, cfg, registry)?.run(gt)
}
