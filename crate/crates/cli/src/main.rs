use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fundus_reg::crop::RoiPair;
use fundus_reg::fitting::Transform;
use fundus_reg::pipeline::{
    degree_sweep, overlay_with_transform, register_pair, run_dataset, sweep_csv, FitStrategy, ManifestEntry,
    PipelineConfig, Side,
};
use fundus_reg::raster::load_image;
use fundus_reg::synth::{export_problem, files, make_problem, SynthConfig, TransformKind};
use fundus_reg::vessel::VesselMap;

/// Cross-field-of-view retinal vessel-map registration.
#[derive(Parser)]
#[command(name = "fundus-reg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register one source/target pair and write the fitted transform.
    Register(RegisterArgs),
    /// Run the pipeline over a manifest and report metrics.
    Evaluate(EvaluateArgs),
    /// Generate synthetic problems with a manifest.
    Synth(SynthArgs),
    /// Render a red/green overlay for a given transform.
    Overlay(OverlayArgs),
    /// Compare polynomial degrees over a manifest.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    RansacOnly,
    PolyOnly,
    RanPoly,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Source,
    Target,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Homography,
    Quadratic,
}

/// Pipeline configuration: a JSON file, then individual overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    crop: Option<bool>,
    #[arg(long)]
    opening: Option<bool>,
    #[arg(long, value_enum)]
    opening_side: Option<SideArg>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Polynomial degree.
    #[arg(long)]
    degree: Option<usize>,
    /// Lowe ratio for descriptor matching.
    #[arg(long)]
    match_ratio: Option<f64>,
    #[arg(long)]
    cross_check: Option<bool>,
    /// RANSAC inlier threshold in pixels.
    #[arg(long)]
    ransac_threshold: Option<f64>,
    #[arg(long)]
    ransac_iterations: Option<usize>,
    /// RANSAC seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    binarize_threshold: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            // validated only after the flag overrides are applied
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.crop {
            cfg.crop_enabled = v;
        }
        if let Some(v) = self.opening {
            cfg.opening_enabled = v;
        }
        if let Some(v) = self.opening_side {
            cfg.opening_side = match v {
                SideArg::Source => Side::Source,
                SideArg::Target => Side::Target,
            };
        }
        if let Some(v) = self.strategy {
            cfg.fit_strategy = match v {
                StrategyArg::RansacOnly => FitStrategy::RansacOnly,
                StrategyArg::PolyOnly => FitStrategy::PolyOnly,
                StrategyArg::RanPoly => FitStrategy::RanPoly,
            };
        }
        if let Some(v) = self.degree {
            cfg.poly_degree = v;
        }
        if let Some(v) = self.match_ratio {
            cfg.match_ratio = v;
        }
        if let Some(v) = self.cross_check {
            cfg.cross_check = v;
        }
        if let Some(v) = self.ransac_threshold {
            cfg.ransac.reproj_threshold = v;
        }
        if let Some(v) = self.ransac_iterations {
            cfg.ransac.max_iterations = v;
        }
        if let Some(v) = self.seed {
            cfg.ransac.seed = v;
        }
        if let Some(v) = self.binarize_threshold {
            cfg.binarize_threshold = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RegisterArgs {
    /// Source vessel map (PNG or PGM).
    #[arg(long)]
    source: PathBuf,
    /// Target vessel map.
    #[arg(long)]
    target: PathBuf,
    /// Macula/optic-disc boxes in the target; required when cropping.
    #[arg(long)]
    rois: Option<PathBuf>,
    /// Where to write the transform JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional output for the matched correspondences.
    #[arg(long)]
    matches_out: Option<PathBuf>,
    /// Optional overlay PNG.
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// One-line CSV of the dataset report (with header).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for per-pair overlay PNGs.
    #[arg(long)]
    overlay_dir: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; one subdirectory per problem plus manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Number of problems; seeds run from --seed upward.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    size: usize,
    /// Side of the wide-field target; enables ROI boxes.
    #[arg(long)]
    target_size: Option<usize>,
    #[arg(long, value_enum, default_value = "quadratic")]
    kind: KindArg,
    #[arg(long, default_value_t = 8.0)]
    coefficient_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 50)]
    n_points: usize,
}

#[derive(Args)]
struct OverlayArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Source-to-target transform JSON.
    #[arg(long)]
    transform: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated polynomial degrees.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    degrees: Vec<usize>,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => print_stdout(text),
    }
}

/// Prints a line, treating a closed pipe (e.g. `| head`) as success.
fn print_stdout(text: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn register(args: &RegisterArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let source = load_image(&args.source).with_context(|| format!("loading {}", args.source.display()))?;
    let target = load_image(&args.target).with_context(|| format!("loading {}", args.target.display()))?;
    let rois = args.rois.as_ref().map(RoiPair::load).transpose().context("loading ROI boxes")?;
    if cfg.crop_enabled && rois.is_none() {
        bail!("cropping is enabled but no --rois file was given (use --crop false to skip it)");
    }
    let reg = register_pair(&VesselMap::unknown(source.clone()), &VesselMap::unknown(target.clone()), rois.as_ref(), &cfg)?;
    if let Some(p) = &args.matches_out {
        reg.matches.save(p)?;
    }
    let summary = json!({
        "status": if reg.transform.is_some() { "registered" } else { "failed" },
        "failure": reg.failure,
        "diagnostics": reg.diagnostics,
        "crop": reg.crop,
    });
    if let Some(t) = &reg.transform {
        t.save(&args.out)?;
        if let Some(p) = &args.overlay {
            overlay_with_transform(&source, &target, t)?.save_png(p)?;
        }
    }
    print_stdout(&serde_json::to_string_pretty(&summary)?)
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let run = run_dataset(&args.manifest, &cfg, args.overlay_dir.as_deref())
        .with_context(|| format!("evaluating manifest {}", args.manifest.display()))?;
    write_or_print(args.out.as_deref(), &run.to_json_string()?)?;
    if let Some(p) = &args.csv {
        let csv = format!("{}\n{}\n", fundus_reg::evaluation::DatasetReport::CSV_HEADER, run.report.csv_row());
        fs::write(p, csv)?;
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let mut manifest = Vec::new();
    for seed in args.seed..args.seed + args.count {
        let cfg = SynthConfig {
            seed,
            image_size: args.size,
            transform_kind: match args.kind {
                KindArg::Homography => TransformKind::Homography,
                KindArg::Quadratic => TransformKind::Quadratic,
            },
            coefficient_scale: args.coefficient_scale,
            noise_sigma: args.noise_sigma,
            outlier_fraction: args.outlier_fraction,
            n_points: args.n_points,
            target_size: args.target_size,
            ..SynthConfig::default()
        };
        let problem = make_problem(&cfg)?;
        let id = format!("seed{seed:04}");
        export_problem(&problem, args.out.join(&id))?;
        let rel = |f: &str| PathBuf::from(&id).join(f);
        manifest.push(ManifestEntry {
            id: id.clone(),
            source: rel(files::SOURCE),
            target: rel(files::TARGET),
            rois: problem.rois.as_ref().map(|_| rel(files::ROIS)),
            gt: Some(rel(files::GT_POINTS)),
            gt_transform: Some(rel(files::GT_TRANSFORM)),
            matches: None,
        });
    }
    let path = args.out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    print_stdout(&path.display().to_string())
}

fn overlay(args: &OverlayArgs) -> Result<()> {
    let source = load_image(&args.source).with_context(|| format!("loading {}", args.source.display()))?;
    let target = load_image(&args.target).with_context(|| format!("loading {}", args.target.display()))?;
    let t = Transform::load(&args.transform).with_context(|| format!("loading {}", args.transform.display()))?;
    overlay_with_transform(&source, &target, &t)?.save_png(&args.out)?;
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let rows = degree_sweep(&args.manifest, &cfg, &args.degrees)
        .with_context(|| format!("sweeping manifest {}", args.manifest.display()))?;
    write_or_print(args.out.as_deref(), sweep_csv(&rows).trim_end())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Register(a) => register(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Overlay(a) => overlay(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
