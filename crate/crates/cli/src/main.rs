//! `rot`: colour transfer, point-set registration, cost inspection and loss
//! curves from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 input or parse
//! error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rot_core::density::{read_correspondence_csv, read_point_csv};
use rot_core::kernel::emit_loss_curves;
use rot_core::pipeline::{
    eval_cost, read_colour_correspondences, register, transfer, FittedMap, ImageBuffer, Mode, RunManifest,
    RunSettings,
};
use rot_core::{Error, LossKind};

#[derive(Parser)]
#[command(name = "rot", version, about = "Robust transport estimation of smooth colour and shape maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recolour an image with the colours of a palette image.
    Transfer(TransferArgs),
    /// Register a source point file onto a target point file.
    Register(RegisterArgs),
    /// Print the cost breakdown of a transform (identity by default).
    EvalCost(EvalArgs),
    /// Tabulate robust loss functions over a residual grid.
    Losses(LossArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Legacy,
    Combined,
}

#[derive(Args)]
struct Shared {
    /// Target KDE bandwidth (final annealing floor).
    #[arg(long)]
    h: Option<f64>,
    /// Transformed-source KDE bandwidth; defaults to --h.
    #[arg(long)]
    h_tilde: Option<f64>,
    /// Robust cost bandwidth.
    #[arg(long)]
    hc: Option<f64>,
    /// Supervised share of the combined transport term, in [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Correspondence weight in legacy mode.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Range penalty weight.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Smoothness penalty weight.
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    max_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of annealing stages.
    #[arg(long)]
    stages: Option<usize>,
    /// Bandwidth decay per stage.
    #[arg(long)]
    anneal: Option<f64>,
    /// Key-value settings file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the per-iterate trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    /// Image to recolour (PNG).
    #[arg(long)]
    image: PathBuf,
    /// Image providing the colour palette (PNG).
    #[arg(long)]
    palette: PathBuf,
    /// Six-column CSV: palette RGB, then image RGB.
    #[arg(long)]
    correspondences: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    source: PathBuf,
    /// CSV with target coordinates, then source coordinates.
    #[arg(long)]
    correspondences: Option<PathBuf>,
    /// Transform record output.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    correspondences: Option<PathBuf>,
    /// Transform record from `register`.
    #[arg(long)]
    transform: Option<PathBuf>,
    /// Also write the breakdown here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct LossArgs {
    /// Loss names such as least_squares, absolute, welsch_1, geman_mcclure_0.5.
    #[arg(long = "loss", default_values_t = ["least_squares".to_string(), "welsch_1".to_string(), "geman_mcclure_1".to_string()])]
    losses: Vec<String>,
    #[arg(long, default_value_t = 5.0)]
    eps_max: f64,
    #[arg(long, default_value_t = 101)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Numerical { .. } | Error::Singular(_) => 4,
            _ => 3,
        };
        Fail(code, e.to_string())
    }
}

fn usage(e: Error) -> Fail {
    Fail(2, e.to_string())
}

fn resolve(s: &Shared) -> Result<RunSettings, Fail> {
    let mut r = match &s.config {
        Some(p) => RunSettings::load(p).map_err(|e| match e {
            Error::Io { .. } => Fail::from(e),
            other => usage(other),
        })?,
        None => RunSettings::default(),
    };
    macro_rules! set {
        ($($f:ident => $t:ident),*) => {$( if let Some(v) = s.$f { r.$t = v; } )*};
    }
    set!(h => h, hc => hc, lambda => lambda, lambda1 => lambda1, lambda2 => lambda2, lambda3 => lambda3,
         max_samples => max_samples, seed => seed, stages => max_outer, anneal => anneal_factor);
    if s.h_tilde.is_some() {
        r.h_tilde = s.h_tilde;
    }
    if let Some(m) = s.mode {
        r.mode = match m {
            ModeArg::Legacy => Mode::Legacy,
            ModeArg::Combined => Mode::Combined,
        };
    }
    r.cost_config().map_err(usage)?;
    r.solver_config().validate().map_err(usage)?;
    Ok(r)
}

fn write(path: &Path, text: &str) -> Result<(), Fail> {
    fs::write(path, text).map_err(|source| {
        Fail::from(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn finish(manifest: &mut RunManifest, out: &Path, trace: Option<(&Path, String)>) -> Result<(), Fail> {
    manifest.add_output(out);
    if let Some((p, csv)) = trace {
        write(p, &csv)?;
        manifest.add_output(p);
    }
    manifest.write_beside(out)?;
    Ok(())
}

fn run_transfer(a: &TransferArgs) -> Result<(), Fail> {
    let settings = resolve(&a.shared)?;
    let image = ImageBuffer::load(&a.image)?;
    let palette = ImageBuffer::load(&a.palette)?;
    let pairs = a.correspondences.as_deref().map(read_colour_correspondences).transpose()?;
    let outcome = transfer(&image, &palette, pairs.as_ref(), &settings)?;
    outcome.image.save_png(&a.out)?;
    let mut m = RunManifest::new("transfer", &settings);
    m.add_input(&a.image)?;
    m.add_input(&a.palette)?;
    if let Some(p) = &a.correspondences {
        m.add_input(p)?;
    }
    let trace = a.shared.trace.as_deref().map(|p| (p, outcome.report.trace_csv()));
    finish(&mut m, &a.out, trace)?;
    println!("l2_before = {:.16e}", outcome.l2_before);
    println!("l2_after = {:.16e}", outcome.l2_after);
    Ok(())
}

fn run_register(a: &RegisterArgs) -> Result<(), Fail> {
    let settings = resolve(&a.shared)?;
    let target = read_point_csv(&a.target)?;
    let source = read_point_csv(&a.source)?;
    let pairs = a.correspondences.as_deref().map(read_correspondence_csv).transpose()?;
    let outcome = register(&target, &source, pairs.as_ref(), &settings)?;
    write(&a.out, &outcome.map.to_record())?;
    let mut m = RunManifest::new("register", &settings);
    m.add_input(&a.target)?;
    m.add_input(&a.source)?;
    if let Some(p) = &a.correspondences {
        m.add_input(p)?;
    }
    let trace = a.shared.trace.as_deref().map(|p| (p, outcome.report.trace_csv()));
    finish(&mut m, &a.out, trace)?;
    println!("converged = {}", outcome.report.converged);
    println!("total = {:.16e}", outcome.report.final_breakdown.total);
    if let Some(r) = outcome.rmse {
        println!("rmse = {r:.16e}");
    }
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<(), Fail> {
    let settings = resolve(&a.shared)?;
    let target = read_point_csv(&a.target)?;
    let source = read_point_csv(&a.source)?;
    let pairs = a.correspondences.as_deref().map(read_correspondence_csv).transpose()?;
    let map = a.transform.as_deref().map(FittedMap::load).transpose()?;
    let b = eval_cost(&target, &source, pairs.as_ref(), map.as_ref(), &settings)?;
    let text = b.to_record();
    print!("{text}");
    if let Some(out) = &a.out {
        write(out, &text)?;
        let mut m = RunManifest::new("eval-cost", &settings);
        m.add_input(&a.target)?;
        m.add_input(&a.source)?;
        for p in [&a.correspondences, &a.transform].into_iter().flatten() {
            m.add_input(p)?;
        }
        finish(&mut m, out, None)?;
    }
    Ok(())
}

fn run_losses(a: &LossArgs) -> Result<(), Fail> {
    let kinds = a
        .losses
        .iter()
        .map(|s| s.parse::<LossKind>())
        .collect::<Result<Vec<_>, _>>()?;
    if a.points < 2 || !(a.eps_max > 0.0) {
        return Err(Fail(2, "need --points >= 2 and a positive --eps-max".into()));
    }
    let grid: Vec<f64> = (0..a.points)
        .map(|i| a.eps_max * i as f64 / (a.points - 1) as f64)
        .collect();
    let csv = emit_loss_curves(&kinds, &grid)?.to_csv();
    match &a.out {
        Some(p) => write(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Transfer(a) => run_transfer(a),
        Command::Register(a) => run_register(a),
        Command::EvalCost(a) => run_eval(a),
        Command::Losses(a) => run_losses(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
