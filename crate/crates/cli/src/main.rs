use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flarespot::batch::{self, BatchSummary};
use flarespot::config::{ConfigFile, InpaintSettings, RunConfig};
use flarespot::synthgen::SceneConfig;
use flarespot::FlareError;

/// Detect lens flare spots, build their masks and remove them by inpainting.
#[derive(Parser)]
#[command(name = "flarespot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect, mask and inpaint flare spots.
    Remove(BatchArgs),
    /// Detect flare spots and write reports only.
    Detect(BatchArgs),
    /// Detect flare spots and write their masks.
    Mask(BatchArgs),
    /// Inpaint an image inside a given mask.
    Inpaint(InpaintArgs),
    /// Generate a synthetic corpus with ground-truth masks.
    Synth(SynthArgs),
    /// Score detections and masks against a manifest of ground truths.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ParamArgs {
    /// Configuration file with `name = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iota: Option<f64>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Seed of the randomized patch search.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of files processed concurrently.
    #[arg(long)]
    jobs: Option<usize>,
}

impl ParamArgs {
    fn build(&self, inputs: Vec<PathBuf>, output: &Path) -> Result<RunConfig, FlareError> {
        let mut cfg = RunConfig::new(inputs, output);
        if let Some(path) = &self.config {
            cfg.apply(&ConfigFile::load(path)?);
        }
        let overrides = ConfigFile {
            iota: self.iota,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            delta: self.delta,
            beta: self.beta,
            epsilon: self.epsilon,
            alpha: self.alpha,
            seed: self.seed,
            jobs: self.jobs,
            ..Default::default()
        };
        cfg.apply(&overrides);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct BatchArgs {
    /// Input images (PNG or JPEG).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
    /// Also write the mask outline drawn over the input.
    #[arg(long)]
    overlay: bool,
    /// Also write the light-source mask and the DoG planes.
    #[arg(long)]
    debug: bool,
    /// Skip the per-image JSON reports.
    #[arg(long)]
    no_report: bool,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    image: PathBuf,
    /// Mask of pixels to fill; non-black pixels are filled.
    #[arg(long)]
    mask: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = InpaintSettings::default().patch_side)]
    patch_side: usize,
    #[arg(long, default_value_t = InpaintSettings::default().iterations)]
    iterations: usize,
    /// Pyramid depth; derived from the hole size when omitted.
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 480)]
    height: usize,
    #[arg(long, default_value_t = 2)]
    max_sources: usize,
    /// Plant light sources only.
    #[arg(long)]
    no_flares: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// CSV file with `image,mask` columns.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

fn is_usage_error(e: &FlareError) -> bool {
    matches!(
        e,
        FlareError::Config(_) | FlareError::InvalidParameter { .. } | FlareError::Manifest(_)
    )
}

fn batch_exit(summary: &BatchSummary) -> ExitCode {
    for f in &summary.files {
        match (&f.report, &f.error) {
            (Some(r), _) => println!(
                "{}: {} light source(s), {} flare(s)",
                f.input.display(),
                r.light_sources.len(),
                r.detection_count()
            ),
            (None, Some(e)) => println!("{}: failed: {e}", f.input.display()),
            (None, None) => {}
        }
    }
    if summary.failures() > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode, FlareError> {
    match cli.command {
        Command::Remove(a) => run_batch(a, batch::Stage::Remove),
        Command::Detect(a) => run_batch(a, batch::Stage::Detect),
        Command::Mask(a) => run_batch(a, batch::Stage::Mask),
        Command::Inpaint(a) => {
            let settings = InpaintSettings {
                patch_side: a.patch_side,
                iterations: a.iterations,
                levels: a.levels,
            };
            batch::run_inpaint(&a.image, &a.mask, &a.output, &settings, a.seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth(a) => {
            let scene = SceneConfig {
                width: a.width,
                height: a.height,
                max_sources: a.max_sources,
                flares: !a.no_flares,
                ..Default::default()
            };
            let manifest = batch::run_synth(&a.output, a.count, a.seed, &scene)?;
            println!("{}", manifest.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(a) => {
            let cfg = a.params.build(Vec::new(), &a.output)?;
            let report = batch::run_eval(&cfg, &a.manifest)?;
            let g = &report.aggregate;
            println!(
                "images {} precision {:.4} recall {:.4} f-measure {:.4} avg-fp {:.4} avg-dice {}",
                g.images,
                g.precision,
                g.recall,
                g.f_measure,
                g.avg_false_positives,
                g.avg_dice.map_or("n/a".to_string(), |d| format!("{d:.4}"))
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_batch(a: BatchArgs, stage: batch::Stage) -> Result<ExitCode, FlareError> {
    let mut cfg = a.params.build(a.inputs, &a.output)?;
    cfg.emit.overlay = a.overlay;
    cfg.emit.debug = a.debug;
    cfg.emit.report = !a.no_report;
    let summary = batch::run_stage(&cfg, stage)?;
    Ok(batch_exit(&summary))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
