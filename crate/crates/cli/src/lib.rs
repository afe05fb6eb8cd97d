//! Command-line driver: synthetic scenes, splits, training, evaluation,
//! classification maps, ablations and gradient checks.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pyformer::data::Layout;

use crate::config::{AblationSpec, Axis, RunConfig};
use crate::error::{CliError, CliResult, EXIT_VALIDATION};

/// Environment variable holding the log filter (`error`, `warn`, `info`, `debug`).
pub const LOG_ENV: &str = "PYFORMER_LOG";

#[derive(Debug, Parser)]
#[command(name = "pyformer", version, about = "Pyramid transformer for hyperspectral pixel classification")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for generation, splitting, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Report failures as a JSON object on stderr.
    #[arg(long, global = true)]
    pub error_json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled cube.
    Synth(SynthArgs),
    /// Draw a disjoint train/validation/test split of patch centers.
    Split(PipelineArgs),
    /// Train a model and report metrics on every part of the split.
    Train(PipelineArgs),
    /// Evaluate a checkpoint.
    Eval(PipelineArgs),
    /// Render a classification map as a PPM image.
    Map(PipelineArgs),
    /// Train and evaluate once per value of one hyperparameter.
    Ablate(AblateArgs),
    /// Finite-difference check of the training loss gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_parser = parse_layout)]
    pub layout: Option<Layout>,
    /// Fraction of pixels that keep their label.
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct PipelineArgs {
    /// Cube header (JSON).
    #[arg(long)]
    pub cube: Option<PathBuf>,
    /// Split JSON to use instead of drawing one.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Train, validation and test fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Drop evaluation centers whose window overlaps a training window.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict_spatial: Option<bool>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub b_star: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub ff_hidden: Option<usize>,
    #[arg(long)]
    pub conv1_channels: Option<usize>,
    /// L2 coefficient on the classifier weights.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub layernorm: Option<bool>,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub axis: Option<Axis>,
    /// Axis values, comma separated; train ratios in percent.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Largest accepted relative error.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Central-difference step.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Coordinates probed per parameter tensor.
    #[arg(long)]
    pub samples: Option<usize>,
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    match s {
        "voronoi" => Ok(Layout::Voronoi),
        "stripes" => Ok(Layout::Stripes),
        _ => Err(format!("unknown layout {s:?} (voronoi or stripes)")),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl SynthArgs {
    fn apply(&self, c: &mut RunConfig) {
        let s = &mut c.synth;
        set(&mut s.classes, self.classes);
        set(&mut s.height, self.height);
        set(&mut s.width, self.width);
        set(&mut s.bands, self.bands);
        set(&mut s.noise, self.noise);
        set(&mut s.layout, self.layout);
        set(&mut s.labeled_fraction, self.labeled_fraction);
    }
}

impl PipelineArgs {
    fn apply(&self, c: &mut RunConfig) -> CliResult<()> {
        if self.cube.is_some() {
            c.cube = self.cube.clone();
        }
        if self.split.is_some() {
            c.split_file = self.split.clone();
        }
        if self.checkpoint.is_some() {
            c.checkpoint = self.checkpoint.clone();
        }
        if let Some(r) = &self.ratios {
            c.split.ratios = r
                .as_slice()
                .try_into()
                .map_err(|_| CliError::Validation(format!("--ratios needs three values, got {}", r.len())))?;
        }
        set(&mut c.split.strict_spatial, self.strict_spatial);
        let (m, a) = (&mut c.model, &self.model);
        set(&mut m.patch_size, a.patch_size);
        set(&mut m.b_star, a.b_star);
        set(&mut m.num_levels, a.levels);
        set(&mut m.num_layers, a.layers);
        set(&mut m.num_heads, a.heads);
        set(&mut m.d_model, a.d_model);
        set(&mut m.ff_hidden, a.ff_hidden);
        set(&mut m.conv1_channels, a.conv1_channels);
        set(&mut m.lambda, a.lambda);
        set(&mut m.use_layernorm, a.layernorm);
        let (t, a) = (&mut c.train, &self.train);
        set(&mut t.epochs, a.epochs);
        set(&mut t.batch_size, a.batch_size);
        set(&mut t.learning_rate, a.lr);
        set(&mut t.decay, a.decay);
        Ok(())
    }
}

impl Cli {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        match &self.command {
            Command::Synth(a) => a.apply(&mut c),
            Command::Split(a) | Command::Train(a) | Command::Eval(a) | Command::Map(a) => a.apply(&mut c)?,
            Command::Ablate(a) => {
                a.pipeline.apply(&mut c)?;
                let prev = c.ablation.take();
                let axis = a.axis.or(prev.as_ref().map(|s| s.axis)).ok_or_else(|| {
                    CliError::Validation("ablate needs --axis (train_ratio, patch_size, heads or layers)".into())
                })?;
                let values = match (&a.values, prev) {
                    (Some(v), _) => v.clone(),
                    (None, Some(p)) if p.axis == axis => p.values,
                    _ => axis.default_values(),
                };
                c.ablation = Some(AblationSpec { axis, values });
            }
            Command::Gradcheck(a) => {
                let g = &mut c.gradcheck;
                set(&mut g.tolerance, a.tolerance);
                set(&mut g.eps, a.eps);
                set(&mut g.samples, a.samples);
            }
        }
        c.sync_seeds();
        Ok(c)
    }
}

fn fail(err: &CliError, as_json: bool) -> i32 {
    if as_json {
        eprintln!("{}", err.to_json());
    } else {
        eprintln!("error: {err}");
    }
    err.exit_code()
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let as_json = args.iter().any(|a| a == "--error-json");
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            if as_json {
                return fail(&CliError::Validation(e.to_string().trim().to_string()), true);
            }
            let _ = e.print();
            return EXIT_VALIDATION;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .try_init();
    match cli.resolve().and_then(|cfg| commands::dispatch(&cli, cfg)) {
        Ok(()) => 0,
        Err(e) => fail(&e, cli.error_json),
    }
}
