//! The `dforge` command line: one subcommand per stage plus `pipeline`,
//! which chains pooling, clustering, refinement, localization, evaluation
//! and prioritization over a whole dataset.

mod commands;
mod error;
pub mod io;
pub mod pipeline;

use std::ffi::OsString;
use std::net::IpAddr;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use dforge_core::datamodel::RegionGrid;

pub use error::{CliError, CliResult, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};

/// Overrides every default seed when set.
pub const SEED_ENV: &str = "DFORGE_SEED";

#[derive(Debug, Parser)]
#[command(name = "dforge", version, about = "Distractor discovery and score-map refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted distractors.
    Synth(SynthArgs),
    /// Collect the normalized pattern pool of one class.
    Pool(PoolArgs),
    /// Spectrally cluster a pattern pool.
    Cluster(ClusterArgs),
    /// Write per-cluster heatmaps of one image.
    Heatmap(HeatmapArgs),
    /// Suppress distractor regions in a class's score maps.
    Apply(ApplyArgs),
    /// Predict one box per image from score maps.
    Bbox(BboxArgs),
    /// Evaluate predicted boxes against ground truth.
    Eval(EvalArgs),
    /// Rank classes by λ₂ and write the effort/improvement curve.
    Prioritize(PrioritizeArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Run every stage over a dataset.
    Pipeline(PipelineArgs),
    /// Annotate clusters from a synthetic dataset's truth file.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long = "classes")]
    pub num_classes: usize,
    #[arg(long = "distractor-frac")]
    pub distractor_fraction: f64,
    #[arg(long)]
    pub images_per_class: usize,
    /// Region grid as ROWSxCOLS.
    #[arg(long, value_parser = parse_grid)]
    pub grid: (usize, usize),
    /// Pixels per grid cell.
    #[arg(long, default_value_t = dforge_core::synth::DEFAULT_CELL_PX)]
    pub cell_px: i64,
    #[arg(long)]
    pub feat_dim: usize,
    #[arg(long = "noise")]
    pub noise_sigma: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "class")]
    pub class_id: String,
    #[arg(long, default_value_t = 0.2)]
    pub theta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterOpts {
    #[arg(long, default_value_t = 0.7)]
    pub rho: f64,
    #[arg(long, default_value_t = 2)]
    pub min_k: usize,
    #[arg(long, default_value_t = 4)]
    pub max_k: usize,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Class of the pool; taken from a `pool_<class>.bin` file name if omitted.
    #[arg(long = "class")]
    pub class_id: Option<String>,
    #[command(flatten)]
    pub opts: ClusterOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "class")]
    pub class_id: String,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "image")]
    pub image_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "class")]
    pub class_id: String,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub annotation: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub theta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BboxArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of `<image>.smap` files; the manifest's maps if omitted.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long = "class")]
    pub class_id: String,
    #[arg(long, default_value_t = 0.2)]
    pub theta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub boxes: PathBuf,
    /// Class of a flat `{image: box}` file, or a filter for a nested one.
    #[arg(long = "class")]
    pub class_id: Option<String>,
    #[arg(long, default_value_t = dforge_core::localize::DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrioritizeArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub improvements: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// UI bundle served under /static.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Seed of the visualization sample.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub theta: f64,
    #[arg(long, default_value_t = dforge_core::localize::DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    #[command(flatten)]
    pub cluster: ClusterOpts,
    /// Classes processed in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    /// Only this class; every model in the directory if omitted.
    #[arg(long = "class")]
    pub class_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad grid dimension {v:?}: {e}"))
    };
    Ok((parse(r)?, parse(c)?))
}

pub(crate) fn synth_grid(args: &SynthArgs) -> CliResult<RegionGrid> {
    Ok(RegionGrid::new(args.grid.0, args.grid.1, args.cell_px, args.cell_px)?)
}

/// An explicit flag wins, then `DFORGE_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
}

/// Help of the subcommand named in `argv`, or of the whole program.
fn help_for(argv: &[OsString]) -> String {
    let mut cmd = Cli::command();
    let name = argv.get(1).and_then(|a| a.to_str()).unwrap_or("");
    match cmd.find_subcommand_mut(name) {
        Some(sub) => sub.render_help().to_string(),
        None => cmd.render_help().to_string(),
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    eprint!("{e}");
                    EXIT_USAGE
                }
                _ => {
                    eprintln!("{}", e.render().to_string().trim_end());
                    eprintln!();
                    eprint!("{}", help_for(&argv));
                    EXIT_USAGE
                }
            };
        }
    };
    init_logging();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => commands::synth(&a),
        Command::Pool(a) => commands::pool(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Heatmap(a) => commands::heatmap(&a),
        Command::Apply(a) => commands::apply(&a),
        Command::Bbox(a) => commands::bbox(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Prioritize(a) => commands::prioritize(&a),
        Command::Serve(a) => commands::serve(&a),
        Command::Pipeline(a) => pipeline::run_pipeline(&a).map(|_| ()),
        Command::Oracle(a) => commands::oracle(&a),
    }
}
