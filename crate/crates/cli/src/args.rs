//! Argument definitions and config-file overlay.
//!
//! Every value a subcommand accepts can also come from a flat `key = value`
//! config file (`--config run.cfg`); keys are the snake_case argument names.
//! Explicit command-line flags always win over config values.

use std::path::PathBuf;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{ArgMatches, Parser, Subcommand};

use detkit::config::{parse_config_bytes, ConfigMap};
use detkit::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "detkit",
    version,
    about = "Small-object detection building blocks: generation, evaluation, checks and demos"
)]
pub struct Cli {
    /// Flat key-value config file merged under explicit flags (flags win).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic scene dataset (PPM images + JSONL annotations).
    Gen(GenArgs),
    /// Evaluate predictions against ground truth (COCO-style protocol).
    Eval(EvalArgs),
    /// Verify train-path vs fused-path equivalence over randomized trials.
    FuseCheck(FuseCheckArgs),
    /// Report MAC counts and wall-clock for fused vs four-branch evaluation.
    Bench(BenchArgs),
    /// Gradient-descent box regression demo with CSV trajectory output.
    Regress(RegressArgs),
    /// Sample the difficulty modulation curve γ(β) as CSV.
    GammaCurve(GammaCurveArgs),
    /// Dump attention-block tap points as per-channel-mean PGM images.
    Featmap(FeatmapArgs),
    /// End-to-end smoke: generate → block stack → feature maps → evaluate.
    Pipeline(PipelineArgs),
}

#[derive(clap::Args, serde::Serialize)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 640)]
    pub image_size: usize,
    #[arg(long, default_value_t = 9)]
    pub classes: u32,
    /// Poisson mean of objects per image.
    #[arg(long, default_value_t = 7.34)]
    pub mean_objects: f64,
}

#[derive(clap::Args, serde::Serialize)]
pub struct EvalArgs {
    /// Ground-truth JSONL file.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Predictions JSONL file.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Comma-separated IoU thresholds (default 0.5:0.05:0.95 grid).
    #[arg(long)]
    pub iou_thr: Option<String>,
    #[arg(long, default_value_t = 300)]
    pub max_det: usize,
    #[arg(long, default_value_t = 0.5)]
    pub score_cut: f64,
    /// Report format: json or table.
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Optional directory for the report and run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, serde::Serialize)]
pub struct FuseCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    /// Maximum channel count per trial.
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Maximum spatial extent per trial.
    #[arg(long, default_value_t = 32)]
    pub spatial: usize,
    /// Deviation threshold.
    #[arg(long, default_value_t = 1e-9)]
    pub threshold: f64,
    /// Negative control: perturb the fused bias so the check must fail.
    #[arg(long, default_value_t = false)]
    pub inject_corruption: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, serde::Serialize)]
pub struct BenchArgs {
    /// Workload shapes as BxCxHxW:OUT, comma separated.
    #[arg(long, default_value = "1x8x16x16:8,1x16x32x32:16,2x8x24x24:12")]
    pub shapes: String,
    /// Wall-clock repetitions per shape (median reported).
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, serde::Serialize)]
pub struct RegressArgs {
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = detkit::loss::DEFAULT_DEMO_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.9)]
    pub alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    pub delta: f64,
    /// Focaler lower bound.
    #[arg(long, default_value_t = 0.0)]
    pub d: f64,
    /// Focaler upper bound.
    #[arg(long, default_value_t = 0.95)]
    pub u: f64,
    /// Shape-term exponent.
    #[arg(long, default_value_t = 4.0)]
    pub theta: f64,
    /// Minimum initial IoU of generated pairs.
    #[arg(long, default_value_t = 0.1)]
    pub min_iou: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, serde::Serialize)]
pub struct GammaCurveArgs {
    #[arg(long, default_value_t = 1.9)]
    pub alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta_max: f64,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, serde::Serialize)]
pub struct FeatmapArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 40)]
    pub size: usize,
    /// Strip-kernel extent of the attention block.
    #[arg(long, default_value_t = 31)]
    pub k: usize,
    /// Output directory for the PGM dumps.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, serde::Serialize)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub images: usize,
    /// Oracle-detector center jitter in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Oracle-detector score noise amplitude.
    #[arg(long, default_value_t = 0.0)]
    pub score_noise: f64,
    #[arg(long, default_value_t = 640)]
    pub image_size: usize,
    /// Resolution fed to the block stack.
    #[arg(long, default_value_t = 64)]
    pub stack_input: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Config-file values overlaid onto parsed arguments: a field is replaced
/// when the config defines its key and the flag was not given explicitly.
pub struct ConfigOverlay {
    cfg: ConfigMap,
    sub: Option<ArgMatches>,
}

impl ConfigOverlay {
    pub fn load(path: Option<&std::path::Path>, matches: &ArgMatches) -> Result<Self> {
        let cfg = match path {
            Some(p) => parse_config_bytes(&std::fs::read(p)?)?,
            None => ConfigMap::new(),
        };
        let sub = matches.subcommand().map(|(_, m)| m.clone());
        Ok(Self { cfg, sub })
    }

    #[cfg(test)]
    pub fn from_map(cfg: ConfigMap, sub: Option<ArgMatches>) -> Self {
        Self { cfg, sub }
    }

    fn given_on_command_line(&self, key: &str) -> bool {
        self.sub
            .as_ref()
            .and_then(|m| m.value_source(key))
            .map(|s| s == ValueSource::CommandLine)
            .unwrap_or(false)
    }

    /// Overlay a plain field.
    pub fn apply<T: FromStr>(&self, key: &str, field: &mut T) -> Result<()> {
        if let Some(raw) = self.cfg.get(key) {
            if !self.given_on_command_line(key) {
                *field = raw
                    .parse()
                    .map_err(|_| Error::Malformed(format!("config key '{key}': bad value '{raw}'")))?;
            }
        }
        Ok(())
    }

    /// Overlay an optional field.
    pub fn apply_opt<T: FromStr>(&self, key: &str, field: &mut Option<T>) -> Result<()> {
        if let Some(raw) = self.cfg.get(key) {
            if !self.given_on_command_line(key) {
                *field = Some(raw.parse().map_err(|_| {
                    Error::Malformed(format!("config key '{key}': bad value '{raw}'"))
                })?);
            }
        }
        Ok(())
    }
}

/// Parse "BxCxHxW:OUT" into a conv workload shape.
pub fn parse_shape(text: &str) -> Result<detkit::eeconv::ConvShape> {
    let err = || Error::Malformed(format!("bad shape '{text}', expected BxCxHxW:OUT"));
    let (dims, out_c) = text.split_once(':').ok_or_else(err)?;
    let parts: Vec<usize> = dims
        .split('x')
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| err())?;
    if parts.len() != 4 {
        return Err(err());
    }
    let out_channels: usize = out_c.parse().map_err(|_| err())?;
    detkit::eeconv::ConvShape::new(parts[0], parts[1], out_channels, parts[2], parts[3])
}
