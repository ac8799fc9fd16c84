use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sgfm_core::bench::{bench_scaling, BenchOp};
use sgfm_core::config::{self, BenchFile, ProjectFile, SampleFile, ScoreSource, SimulateFile, SimulateSection, TrainFile, TransformFile};
use sgfm_core::diffusion::{hybrid_sample, AnalyticGaussianScore, SamplerConfig, SamplingContext, ScoreModel};
use sgfm_core::flow::{energy_diagnostics, simulate, vorticity_transport_residual};
use sgfm_core::io::{read_checkpoint, read_field, read_trajectory, write_checkpoint, write_field, write_trajectory};
use sgfm_core::spectral::SpectralWorkspace;
use sgfm_core::training::{history_csv, point_mass_field, train_toy};
use sgfm_core::wavelet::{forward_pyramid, inverse_pyramid, split_scales, WaveletFamily};
use sgfm_core::{l2_norm, Result, SgfmError};

#[derive(Parser)]
#[command(name = "sgfm", version, about = "Spectral generative flow model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every stochastic component.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Versioned JSON job description.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "sgfm-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Forward or inverse wavelet transform of a field file.
    Transform {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        inverse: bool,
        /// Report the relative deviation of the result from this file.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        family: Option<WaveletFamily>,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Divergence-free projection of a vector field file.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Integrate the stochastic flow and write a trajectory directory.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Draw a field with the hybrid diffusion/physics sampler.
    Sample {
        #[command(flatten)]
        common: Common,
    },
    /// Train the local score network.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the scaling benchmarks.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Energy and vorticity diagnostics of a trajectory directory.
    Diag {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
}

fn require_config(c: &Common) -> Result<&Path> {
    c.config
        .as_deref()
        .ok_or_else(|| SgfmError::Config("this subcommand needs --config".into()))
}

fn print_json(v: serde_json::Value) {
    println!("{}", serde_json::to_string(&v).expect("json values always serialise"));
}

fn relative_deviation(a: &sgfm_core::Field, b: &sgfm_core::Field) -> Result<f64> {
    a.check_same_shape(b)?;
    let scale = b.grid_norm();
    Ok(a.sub(b).grid_norm() / if scale > 0.0 { scale } else { 1.0 })
}

fn transform(
    common: &Common,
    input: &Path,
    inverse: bool,
    reference: Option<&Path>,
    family: Option<WaveletFamily>,
    levels: Option<usize>,
) -> Result<()> {
    let f = read_field(input)?;
    let section = match &common.config {
        Some(p) => Some(config::load::<TransformFile>(p)?.transform),
        None => None,
    };
    let family = family.or(section.as_ref().map(|s| s.family)).unwrap_or_default();
    let levels = levels
        .or(section.as_ref().map(|s| s.levels))
        .unwrap_or_else(|| f.grid().levels_max());
    let out = if inverse {
        inverse_pyramid(&f, family, levels)?
    } else {
        forward_pyramid(&f, family, levels)?
    };
    fs::create_dir_all(&common.out)?;
    let path = common.out.join(if inverse { "reconstructed.sgff" } else { "coefficients.sgff" });
    write_field(&path, &out)?;
    let mut report = json!({
        "output": path,
        "family": family.name(),
        "levels": levels,
        "norm_in": f.grid_norm(),
        "norm_out": out.grid_norm(),
    });
    if let Some(r) = reference {
        report["relative_error"] = json!(relative_deviation(&out, &read_field(r)?)?);
    }
    print_json(report);
    Ok(())
}

fn project(common: &Common, input: &Path) -> Result<()> {
    if let Some(p) = &common.config {
        config::load::<ProjectFile>(p)?;
    }
    let f = read_field(input)?;
    let ws = SpectralWorkspace::new(*f.grid());
    let out = ws.helmholtz_project(&f)?;
    fs::create_dir_all(&common.out)?;
    let path = common.out.join("projected.sgff");
    write_field(&path, &out)?;
    print_json(json!({
        "output": path,
        "max_divergence": ws.divergence(&out)?.max_abs(),
        "relative_change": relative_deviation(&out, &f)?,
    }));
    Ok(())
}

fn run_simulate(common: &Common) -> Result<()> {
    let cfg = config::load::<SimulateFile>(require_config(common)?)?.simulate;
    let p = cfg.params()?;
    let u0 = cfg.initial_field(common.seed)?;
    let traj = simulate(&u0, &p, cfg.steps, common.seed)?;
    write_trajectory(&common.out, &traj, json!({ "simulate": cfg, "seed": common.seed }))?;
    print_json(json!({
        "output": common.out,
        "snapshots": traj.len(),
        "final_time": traj.times().last(),
        "norm_ratio": l2_norm(traj.last()) / l2_norm(traj.first()).max(f64::MIN_POSITIVE),
    }));
    Ok(())
}

fn diag(common: &Common, input: &Path) -> Result<()> {
    let (traj, meta) = read_trajectory(input)?;
    let section: SimulateSection = match &common.config {
        Some(p) => config::load::<SimulateFile>(p)?.simulate,
        None => serde_json::from_value(meta.source.get("simulate").cloned().unwrap_or_default()).map_err(|_| {
            SgfmError::Config("trajectory has no recorded parameters; pass --config".into())
        })?,
    };
    let p = section.params()?;
    let report = energy_diagnostics(&traj, &p)?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("energy.csv"), report.to_csv())?;
    let grid = *traj.first().grid();
    let ws = SpectralWorkspace::new(grid);
    let max_div = traj
        .snapshots()
        .iter()
        .map(|s| ws.divergence(s).map(|d| d.max_abs()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let mut summary = json!({
        "initial_energy": report.kinetic_energy[0],
        "final_energy": report.kinetic_energy.last(),
        "final_energy_ratio": report.kinetic_energy.last().unwrap() / report.kinetic_energy[0].max(f64::MIN_POSITIVE),
        "final_time": report.times.last(),
        "max_divergence": max_div,
        "bound_violations": report.violations(1e-12).len(),
    });
    if grid.ndim() == 2 && traj.len() > 1 {
        let vort = vorticity_transport_residual(&traj, &p)?;
        let mut csv = String::from("step,residual\n");
        for (k, r) in vort.iter().enumerate() {
            csv.push_str(&format!("{k},{r:e}\n"));
        }
        fs::write(common.out.join("vorticity.csv"), csv)?;
        summary["max_vorticity_residual"] = json!(vort.iter().cloned().fold(0.0, f64::max));
    }
    fs::write(common.out.join("diag.json"), serde_json::to_string_pretty(&summary)?)?;
    print_json(summary);
    Ok(())
}

fn sample(common: &Common) -> Result<()> {
    let cfg = config::load::<SampleFile>(require_config(common)?)?.sample;
    let grid = sgfm_core::Grid::new(cfg.ndim, cfg.n).map_err(|e| SgfmError::Config(e.to_string()))?;
    let sampler = SamplerConfig {
        steps: cfg.steps,
        correction_strength: cfg.correction_strength,
        corrections_per_step: cfg.corrections_per_step,
        j_split: cfg.j_split,
        seed: common.seed,
        mode: cfg.mode,
        family: cfg.family,
        levels: cfg.levels,
    };
    sampler.validate()?;
    let condition = match &cfg.condition {
        Some(p) => read_field(p)?,
        None => point_mass_field(grid, cfg.family, cfg.levels, cfg.j_split)?,
    };
    let mut ctx = SamplingContext::from_field(&condition, cfg.family, cfg.levels, cfg.j_split)?;
    ctx.lambda = cfg.lambda.clone();
    if let Some(p) = &cfg.previous {
        ctx.u_prev = Some(read_field(p)?);
    }
    let channels = condition.channels();
    let model: Box<dyn ScoreModel> = match &cfg.score {
        ScoreSource::Checkpoint { path } => Box::new(read_checkpoint(path)?),
        ScoreSource::PointMass => {
            let template = sgfm_core::wavelet::WaveletCoefficients::zeros(grid, channels, cfg.family, cfg.levels)?;
            let fine = split_scales(&template, cfg.j_split)?.fine_len();
            Box::new(AnalyticGaussianScore::origin(cfg.schedule, fine))
        }
    };
    let p = sgfm_core::flow::SpdeParams::new(cfg.viscosity, 0.0, cfg.dt).map_err(|e| SgfmError::Config(e.to_string()))?;
    let u = hybrid_sample(model.as_ref(), &sampler, &p, &cfg.schedule, grid, channels, &ctx)?;
    fs::create_dir_all(&common.out)?;
    let path = common.out.join("sample.sgff");
    write_field(&path, &u)?;
    let ws = SpectralWorkspace::new(grid);
    print_json(json!({
        "output": path,
        "norm": l2_norm(&u),
        "condition_norm": l2_norm(&condition),
        "max_divergence": ws.divergence(&u)?.max_abs(),
    }));
    Ok(())
}

fn train(common: &Common) -> Result<()> {
    let mut cfg = config::load::<TrainFile>(require_config(common)?)?.train;
    cfg.seed = common.seed;
    cfg.validate()?;
    let out = train_toy(&cfg)?;
    fs::create_dir_all(&common.out)?;
    write_checkpoint(common.out.join("checkpoint.sgfc"), &out.model)?;
    fs::write(common.out.join("history.csv"), history_csv(&out.history))?;
    print_json(json!({
        "checkpoint": common.out.join("checkpoint.sgfc"),
        "epochs": out.history.len(),
        "final": out.history.last(),
    }));
    Ok(())
}

fn bench(common: &Common) -> Result<()> {
    let section = match &common.config {
        Some(p) => config::load::<BenchFile>(p)?.bench,
        None => config::BenchSection {
            ops: BenchOp::ALL.to_vec(),
            sides: None,
            reps: sgfm_core::bench::MIN_REPS,
            warmup: sgfm_core::bench::MIN_WARMUP,
        },
    };
    fs::create_dir_all(&common.out)?;
    let mut csv = String::new();
    let mut reports = Vec::new();
    for op in &section.ops {
        let sides = section.sides.clone().unwrap_or_else(|| op.default_sides());
        let r = bench_scaling(*op, &sides, section.reps, section.warmup, common.seed)?;
        let body = r.to_csv();
        if csv.is_empty() {
            csv.push_str(&body);
        } else {
            csv.extend(body.lines().skip(1).map(|l| format!("{l}\n")));
        }
        eprintln!("{:<15} slope {:.3}", op.name(), r.slope);
        reports.push(r);
    }
    fs::write(common.out.join("bench.csv"), csv)?;
    fs::write(common.out.join("bench.json"), serde_json::to_string_pretty(&reports)?)?;
    print_json(json!({
        "slopes": reports.iter().map(|r| (r.op.name(), r.slope)).collect::<std::collections::BTreeMap<_, _>>(),
    }));
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SGFM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| SgfmError::Config(format!("SGFM_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(SgfmError::Config("SGFM_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| SgfmError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Transform {
            common,
            input,
            inverse,
            reference,
            family,
            levels,
        } => transform(common, input, *inverse, reference.as_deref(), *family, *levels),
        Command::Project { common, input } => project(common, input),
        Command::Simulate { common } => run_simulate(common),
        Command::Sample { common } => sample(common),
        Command::Train { common } => train(common),
        Command::Bench { common } => bench(common),
        Command::Diag { common, input } => diag(common, input),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
