//! `psr`: solve, reconstruct, evaluate and gradient-check from the shell.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 compute
//! failure. Results go to stdout, diagnostics to stderr.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use config::{parse_precision, parse_preset, ConfigError, RunConfig};
use psr_core::gradcheck;
use psr_core::io::{self, GridData, GridDtype};
use psr_core::isosurface::sample_surface;
use psr_core::metrics::{chamfer_l1_metric, fscore, normal_consistency};
use psr_core::optimizer::{normalize_input, NormalizationTransform};
use psr_core::{
    dpsr_forward, marching_cubes, run_reconstruction, GridSpec, OrientedPointCloud, Precision, PsrError,
    SolverParams, TriangleMesh, Vec3,
};

#[derive(Parser, Debug)]
#[command(name = "psr", version, about = "Spectral Poisson surface reconstruction")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Indicator grid and mesh from an oriented point cloud, in one solve.
    Solve(SolveArgs),
    /// Optimize a surface to fit an unoriented point cloud.
    Reconstruct(ReconstructArgs),
    /// Compare two meshes or point clouds; prints one JSON object.
    Eval(EvalArgs),
    /// Finite-difference checks of all gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Frame {
    Normalized,
    Input,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Oriented point cloud (.xyz or .ply with normals).
    input: PathBuf,
    #[arg(long, default_value_t = 128)]
    res: usize,
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    #[arg(long, default_value = "f64", value_parser = parse_precision)]
    precision: Precision,
    /// Write the zero level set (.obj or .ply).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Write the indicator grid as a raw dump.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f64")]
    grid_dtype: DtypeArg,
    /// Fit the input into the unit cube first; the mesh is mapped back.
    #[arg(long)]
    normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Unoriented point cloud (.xyz or .ply).
    input: Option<PathBuf>,
    /// Output mesh (.obj or .ply).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// key = value settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated stage resolutions, e.g. 32,64,128.
    #[arg(long, value_delimiter = ',')]
    resolutions: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    iterations: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// Learning rate of the first stage.
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate factor per stage.
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Size of the optimized point cloud.
    #[arg(long)]
    points: Option<usize>,
    /// Surface samples per loss evaluation.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<config::Preset>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    /// Iterations between resamples; 0 disables.
    #[arg(long)]
    resample_every: Option<usize>,
    /// Ground-truth geometry for metric logging.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "normalized")]
    metrics_frame: Frame,
    /// Also write the optimized oriented cloud (.xyz or .ply).
    #[arg(long)]
    cloud: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Prediction (.obj, .ply or .xyz).
    prediction: PathBuf,
    /// Reference (.obj, .ply or .xyz).
    reference: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Points drawn from each mesh input.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "normalized")]
    metrics_frame: Frame,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "8,16")]
    resolutions: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Compute(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn input_error(path: &Path, e: PsrError) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn compute_error(e: PsrError) -> Failure {
    Failure::Compute(e.to_string())
}

fn output_error(path: &Path, e: PsrError) -> Failure {
    Failure::Compute(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn solve(a: SolveArgs) -> Result<(), Failure> {
    if a.mesh.is_none() && a.grid.is_none() {
        return Err(Failure::Config("nothing to write: pass --mesh and/or --grid".into()));
    }
    let spec = GridSpec::new(a.res).map_err(|e| Failure::Config(e.to_string()))?;
    let params = SolverParams {
        sigma: a.sigma,
        precision: a.precision,
        ..SolverParams::default()
    };
    params.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let data = io::read_point_cloud(&a.input).map_err(|e| input_error(&a.input, e))?;
    let normals = data
        .normals
        .ok_or_else(|| Failure::Config(format!("{}: solve needs per-point normals", a.input.display())))?;
    let (points, transform) = if a.normalize {
        normalize_input(&data.points).map_err(|e| input_error(&a.input, e))?
    } else {
        (data.points, NormalizationTransform::identity())
    };
    let cloud = OrientedPointCloud::new(points, normals).map_err(|e| match e {
        PsrError::OutOfDomain { .. } => Failure::Config(format!("{e}; use --normalize for inputs outside the unit cube")),
        e => input_error(&a.input, e),
    })?;
    info!("solving {} points at resolution {}", cloud.len(), a.res);
    let (chi, _) = dpsr_forward(&cloud, spec, &params).map_err(compute_error)?;
    if let Some(path) = &a.grid {
        let dtype = match a.grid_dtype {
            DtypeArg::F32 => GridDtype::F32,
            DtypeArg::F64 => GridDtype::F64,
        };
        io::write_grid(path, &GridData::Scalar(chi.clone()), dtype).map_err(|e| output_error(path, e))?;
    }
    let mut summary = json!({ "resolution": a.res, "points": cloud.len() });
    if let Some(path) = &a.mesh {
        let mesh = marching_cubes(&chi, 0.0).map_err(compute_error)?;
        if mesh.is_empty() {
            warn!("the zero level set is empty; writing an empty mesh");
        }
        let mesh = mesh.map_vertices(|v| transform.invert(v));
        io::write_mesh(path, &mesh).map_err(|e| output_error(path, e))?;
        summary["vertices"] = json!(mesh.vertices().len());
        summary["triangles"] = json!(mesh.triangles().len());
    }
    println!("{summary}");
    Ok(())
}

/// Points with optional unit normals; meshes are sampled.
struct Sampled {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

fn load_samples(path: &Path, count: usize, seed: u64) -> Result<Sampled, Failure> {
    let g = io::read_geometry(path).map_err(|e| input_error(path, e))?;
    if g.triangles.is_empty() {
        if g.points.is_empty() {
            return Err(Failure::Config(format!("{}: no points", path.display())));
        }
        let normals = g.normals.and_then(|ns| {
            ns.iter()
                .map(|n| {
                    let len = n.norm();
                    (len > 0.0 && len.is_finite()).then(|| n / len)
                })
                .collect::<Option<Vec<_>>>()
        });
        return Ok(Sampled {
            points: g.points,
            normals,
        });
    }
    let mesh = TriangleMesh::new(g.points, g.triangles).map_err(|e| input_error(path, e))?;
    let s = sample_surface(&mesh, count, seed).map_err(|e| input_error(path, e))?;
    Ok(Sampled {
        points: s.points,
        normals: Some(s.normals),
    })
}

fn metrics_json(pred: &Sampled, reference: &Sampled, tau: f64) -> Result<serde_json::Value, Failure> {
    let cd = chamfer_l1_metric(&pred.points, &reference.points).map_err(compute_error)?;
    let fs = fscore(&pred.points, &reference.points, tau).map_err(compute_error)?;
    let nc = match (&pred.normals, &reference.normals) {
        (Some(pn), Some(rn)) => Some(
            normal_consistency(&pred.points, pn, &reference.points, rn).map_err(compute_error)?,
        ),
        _ => None,
    };
    Ok(json!({
        "chamfer_l1": cd,
        "fscore": fs,
        "normal_consistency": nc,
        "tau": tau,
    }))
}

fn apply(t: &NormalizationTransform, s: Sampled) -> Sampled {
    Sampled {
        points: s.points.iter().map(|p| t.apply(p)).collect(),
        normals: s.normals,
    }
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    if !(a.tau > 0.0 && a.tau.is_finite()) {
        return Err(Failure::Config(format!("tau must be positive, got {}", a.tau)));
    }
    if a.samples == 0 {
        return Err(Failure::Config("samples must be positive".into()));
    }
    let mut pred = load_samples(&a.prediction, a.samples, a.seed)?;
    let mut reference = load_samples(&a.reference, a.samples, a.seed)?;
    if a.metrics_frame == Frame::Normalized {
        let (_, t) = normalize_input(&reference.points).map_err(|e| input_error(&a.reference, e))?;
        pred = apply(&t, pred);
        reference = apply(&t, reference);
    }
    println!("{}", metrics_json(&pred, &reference, a.tau)?);
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<(), Failure> {
    let file = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let flags = RunConfig {
        input: a.input.clone(),
        output: a.output.clone(),
        resolutions: a.resolutions.clone(),
        iterations: a.iterations.clone(),
        sigmas: a.sigmas.clone(),
        lr: a.lr,
        lr_decay: a.lr_decay,
        points: a.points,
        samples: a.samples,
        seed: a.seed,
        preset: a.preset,
        precision: a.precision,
        ground_truth: a.ground_truth.clone(),
        resample_every: a.resample_every,
    };
    let cfg = file.merged(flags).resolve()?;
    let target = io::read_point_cloud(&cfg.input).map_err(|e| input_error(&cfg.input, e))?;
    let truth = match &cfg.ground_truth {
        Some(path) => Some(load_samples(path, 100_000, cfg.schedule.seed)?),
        None => None,
    };
    let recon = run_reconstruction(
        &target.points,
        &cfg.schedule,
        &cfg.params,
        truth.as_ref().map(|t| t.points.as_slice()),
    )
    .map_err(compute_error)?;
    io::write_mesh(&cfg.output, &recon.mesh).map_err(|e| output_error(&cfg.output, e))?;
    if let Some(path) = &a.cloud {
        let (positions, normals) = recon.cloud.clone().into_parts();
        let positions: Vec<Vec3> = positions.iter().map(|p| recon.transform.invert(p)).collect();
        io::write_point_cloud(path, &positions, Some(&normals)).map_err(|e| output_error(path, e))?;
    }

    let report = recon.mesh.edge_report();
    let stages: Vec<_> = recon
        .log
        .stages
        .iter()
        .map(|s| {
            json!({
                "resolution": s.resolution,
                "resamples": s.resamples,
                "skipped_steps": s.skipped_steps,
                "euler_characteristic": s.euler_characteristic,
                "chamfer_l1": s.chamfer_l1,
                "fscore": s.fscore,
            })
        })
        .collect();
    let mut summary = json!({
        "vertices": recon.mesh.vertices().len(),
        "triangles": recon.mesh.triangles().len(),
        "watertight": report.is_watertight(),
        "euler_characteristic": recon.mesh.euler_characteristic(),
        "stages": stages,
    });
    if let Some(truth) = truth {
        if recon.mesh.is_empty() {
            warn!("final mesh is empty; skipping metrics");
        } else {
            let s = sample_surface(&recon.mesh, 100_000, cfg.schedule.seed).map_err(compute_error)?;
            let pred = Sampled {
                points: s.points,
                normals: Some(s.normals),
            };
            let (pred, truth) = match a.metrics_frame {
                Frame::Normalized => (apply(&recon.transform, pred), apply(&recon.transform, truth)),
                Frame::Input => (pred, truth),
            };
            summary["metrics"] = metrics_json(&pred, &truth, 0.01)?;
        }
    }
    println!("{summary}");
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    for &r in &a.resolutions {
        GridSpec::new(r).map_err(|e| Failure::Config(e.to_string()))?;
    }
    let results = gradcheck::run_all(&a.resolutions, a.seed).map_err(compute_error)?;
    let mut worst = 0.0f64;
    for s in &results {
        worst = worst.max(s.max_rel_error);
        println!(
            "{:<18} r={:<3} entries={:<5} max_rel_error={:.3e} {}",
            s.suite,
            s.resolution,
            s.entries,
            s.max_rel_error,
            if s.passed() { "ok" } else { "FAIL" }
        );
    }
    println!("max_rel_error={worst:.3e} tolerance={:.0e}", gradcheck::TOLERANCE);
    if results.iter().all(|s| s.passed()) {
        Ok(())
    } else {
        Err(Failure::Compute("gradient check exceeded tolerance".into()))
    }
}
