use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use xanes_unmix::baselines::{edge50_map, lcf_unmix, Edge50References, EdgeWindows, EnergyWindow};
use xanes_unmix::cg::CgOptions;
use xanes_unmix::denoise::{bundled, DenoiserSpec};
use xanes_unmix::io::{self, CubeData};
use xanes_unmix::metrics::{psnr, rmse, ssim, PsnrPeak};
use xanes_unmix::rum::{self, Prior, SolverConfig};
use xanes_unmix::simkit::{build_scene, ni_grid, LabelSource, Pattern, SceneSpec, SpectrumModel};
use xanes_unmix::vca::{predenoise, vca_extract, VcaConfig};
use xanes_unmix::{Error, ImageGeometry, PhaseMap, Result};

#[derive(Parser)]
#[command(name = "xunmix", version, about = "Chemical-state unmixing of TXM-XANES cubes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cube, its ground truth and dictionary.
    Simulate(SimulateArgs),
    /// Estimate a phase map from a cube and a dictionary.
    Unmix(UnmixArgs),
    /// Extract reference spectra with vertex component analysis.
    Endmembers(EndmemberArgs),
    /// Compare an estimated phase map with ground truth.
    Metrics(MetricsArgs),
    /// RMSE over a grid of regularization and penalty values.
    Sweep(SweepArgs),
    /// Write one state of a phase map as a PGM image.
    Render(RenderArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 64)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    cols: usize,
    #[arg(long, default_value_t = 2)]
    states: usize,
    #[arg(long, default_value_t = 3.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// particles | ramp
    #[arg(long, default_value = "particles")]
    pattern: String,
    /// Label image (binary PGM); distinct gray levels become states in ascending order.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    scale_lo: f64,
    #[arg(long, default_value_t = 1.2)]
    scale_hi: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_unit_frac: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Edge50,
    Lcf,
    Tv,
    Pnp,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    re_tol: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    cg_tol: f64,
    #[arg(long, default_value_t = 50)]
    cg_max_iter: usize,
    #[arg(long, default_value = "nlm")]
    denoiser: String,
    /// Denoiser parameter as key=value; repeatable.
    #[arg(long = "denoiser-param")]
    denoiser_param: Vec<String>,
}

impl SolverArgs {
    fn config(&self, pnp: bool) -> Result<SolverConfig> {
        let prior = if pnp {
            let mut spec = DenoiserSpec::new(self.denoiser.clone());
            for p in &self.denoiser_param {
                spec.set_param(p)?;
            }
            Prior::PnP(spec)
        } else {
            Prior::Tv
        };
        let cfg = SolverConfig {
            lambda: self.lambda,
            rho: self.rho,
            max_iter: self.max_iter,
            re_tol: self.re_tol,
            cg: CgOptions { tol: self.cg_tol, max_iter: self.cg_max_iter },
            prior,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct UnmixArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    out: PathBuf,
    /// Scaling field output (tv and pnp only).
    #[arg(long)]
    scaling_out: Option<PathBuf>,
    /// Per-iteration diagnostics CSV (tv and pnp only).
    #[arg(long)]
    diag: Option<PathBuf>,
    /// Ground-truth phase map for the rmse column of the diagnostics.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Pre-edge window as lo:hi in eV.
    #[arg(long, default_value = "8180:8320")]
    pre_edge: String,
    /// Post-edge window as lo:hi in eV.
    #[arg(long, default_value = "8420:8562")]
    post_edge: String,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct EndmemberArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bundled denoiser applied to each band before extraction.
    #[arg(long)]
    predenoise: Option<String>,
    /// Force the projection branch with this SNR (dB).
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Use a PSNR peak of 1 instead of the estimate's maximum.
    #[arg(long)]
    max_one: bool,
    #[arg(long, default_value_t = 1.0)]
    dynamic_range: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
    rhos: Vec<f64>,
    /// tv | pnp
    #[arg(long, value_enum, default_value = "tv")]
    method: Method,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    state: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_window(s: &str) -> Result<EnergyWindow> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| Error::Invalid(format!("window `{s}` must be lo:hi")))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| Error::Invalid(format!("window bound `{v}` is not a number")));
    Ok(EnergyWindow::new(num(lo)?, num(hi)?))
}

fn label_indices(path: &Path, geom: ImageGeometry) -> Result<Vec<usize>> {
    let (g, px) = io::read_pgm(path)?;
    if g != geom {
        return Err(Error::Dimension(format!(
            "label image is {}×{}, scene is {}×{}",
            g.rows(),
            g.cols(),
            geom.rows(),
            geom.cols()
        )));
    }
    let mut levels = px.clone();
    levels.sort_unstable();
    levels.dedup();
    Ok(px.iter().map(|v| levels.binary_search(v).expect("level present")).collect())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let geometry = ImageGeometry::new(a.rows, a.cols)?;
    let label_source = match &a.labels {
        Some(p) => LabelSource::Labels(label_indices(p, geometry)?),
        None => LabelSource::Pattern(a.pattern.parse::<Pattern>()?),
    };
    let spec = SceneSpec {
        geometry,
        grid: ni_grid(),
        states: SpectrumModel::ni_states(a.states),
        label_source,
        scaling_range: (a.scale_lo, a.scale_hi),
        sigma: a.sigma,
        noise_unit_frac: a.noise_unit_frac,
        seed: a.seed,
    };
    let scene = build_scene(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    io::write_cube(a.out_dir.join("cube.xcube"), &CubeData::from_cube(&scene.cube))?;
    io::write_cube(a.out_dir.join("x_gt.xcube"), &CubeData::from_phase_map(&scene.x_gt))?;
    io::write_cube(a.out_dir.join("s_gt.xcube"), &CubeData::from_scaling(&scene.s_gt))?;
    io::write_dictionary_csv(a.out_dir.join("dict.csv"), &scene.dict)?;
    Ok(())
}

fn unmix(a: UnmixArgs) -> Result<()> {
    let cube = io::read_cube(&a.input)?.to_cube()?;
    let dict = io::read_dictionary_csv(&a.dict)?;
    if dict.bands() != cube.bands() {
        return Err(Error::Dimension(format!(
            "dictionary has {} energies, cube {}",
            dict.bands(),
            cube.bands()
        )));
    }
    let map = match a.method {
        Method::Edge50 => {
            if dict.states() != 2 {
                return Err(Error::Invalid(format!(
                    "edge50 method needs a 2-state dictionary, got {} states",
                    dict.states()
                )));
            }
            let win = EdgeWindows { pre_edge: parse_window(&a.pre_edge)?, post_edge: parse_window(&a.post_edge)? };
            let refs = Edge50References::from_dictionary(&dict, &win)?;
            edge50_map(&cube, &win, &refs)?.map
        }
        Method::Lcf => lcf_unmix(&dict, &cube)?.map,
        Method::Tv | Method::Pnp => {
            let cfg = a.solver.config(a.method == Method::Pnp)?;
            let gt = a.gt.as_ref().map(|p| io::read_cube(p)?.to_phase_map()).transpose()?;
            let out = rum::run(&cube, &dict, cfg, gt.as_ref())?;
            if let Some(p) = &a.diag {
                io::write_diagnostics_csv(p, &out.diagnostics)?;
            }
            if let Some(p) = &a.scaling_out {
                io::write_cube(p, &CubeData::from_scaling(&out.scaling))?;
            }
            out.map
        }
    };
    io::write_cube(&a.out, &CubeData::from_phase_map(&map))
}

fn endmembers(a: EndmemberArgs) -> Result<()> {
    let mut cube = io::read_cube(&a.input)?.to_cube()?;
    if let Some(id) = &a.predenoise {
        cube = predenoise(&cube, bundled(&DenoiserSpec::new(id.clone()))?.as_ref())?;
    }
    let out = vca_extract(&cube, VcaConfig { count: a.count, seed: a.seed, snr_override: a.snr })?;
    io::write_dictionary_csv(&a.out, &out.dictionary)
}

fn read_map(path: &Path) -> Result<PhaseMap> {
    io::read_cube(path)?.to_phase_map()
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let est = read_map(&a.est)?;
    let gt = read_map(&a.gt)?;
    let peak = if a.max_one { PsnrPeak::Unit } else { PsnrPeak::Estimate };
    println!("rmse,psnr,ssim");
    println!("{},{},{}", rmse(&est, &gt)?, psnr(&est, &gt, peak)?, ssim(&est, &gt, a.dynamic_range)?);
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cube = io::read_cube(&a.input)?.to_cube()?;
    let dict = io::read_dictionary_csv(&a.dict)?;
    let gt = read_map(&a.gt)?;
    let pnp = match a.method {
        Method::Tv => false,
        Method::Pnp => true,
        _ => return Err(Error::Invalid("sweep supports the tv and pnp methods".into())),
    };
    let mut text = String::from("lambda,rho,rmse\n");
    for &lambda in &a.lambdas {
        for &rho in &a.rhos {
            let mut args = a.solver.clone();
            args.lambda = lambda;
            args.rho = rho;
            let out = rum::run(&cube, &dict, args.config(pnp)?, None)?;
            text.push_str(&format!("{lambda},{rho},{}\n", rmse(&out.map, &gt)?));
        }
    }
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    io::render_pgm(&read_map(&a.input)?, a.state, &a.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Unmix(a) => unmix(a),
        Command::Endmembers(a) => endmembers(a),
        Command::Metrics(a) => metrics(a),
        Command::Sweep(a) => sweep(a),
        Command::Render(a) => render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
