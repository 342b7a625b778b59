//! Command-line flags, the optional TOML config file, and their merge.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use smokegate::geometry::{DeltaRule, DeltaValue};
use smokegate::pipeline::{PipelineConfig, Strategy, Thresholds};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "smokegate",
    version,
    about = "Classify smoking behaviour from face/hand proposals and gate the cigarette detector"
)]
pub struct Cli {
    #[command(flatten)]
    pub opts: Options,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Classify images and print one result record per image.
    Classify {
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Run the full pipeline on one image and write an annotated PNG.
    Detect {
        image: PathBuf,
        /// Where to write the annotated image. Defaults to
        /// `<out>/<image id>.annotated.png`.
        #[arg(long)]
        annotated: Option<PathBuf>,
    },
    /// Evaluate verdicts against a labelled manifest.
    Evaluate {
        /// CSV manifest (`path,label`) or a folder with `smoking/` and
        /// `notsmoking/` sub-folders.
        manifest: PathBuf,
        /// Evaluate the whole manifest instead of its test split.
        #[arg(long)]
        no_split: bool,
        /// Train fraction used to carve out the test split.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Write a stratified train/test split of a manifest.
    Split {
        manifest: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
    },
}

/// Settings shared by every subcommand. Each one may also come from the
/// config file; flags win.
#[derive(Args, Debug, Default)]
pub struct Options {
    /// TOML file with `key = value` settings named after the long flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `fixture:<file>` or `model:<dir>`.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Face horizontal delta: pixels, or a `%` of the box width.
    #[arg(long, global = true)]
    pub face_dh: Option<String>,
    /// Face vertical shift: pixels, or a `%` of the box height.
    #[arg(long, global = true)]
    pub face_dv: Option<String>,
    /// Hand horizontal delta: pixels, or a `%` of the longer box side.
    #[arg(long, global = true)]
    pub hand_dh: Option<String>,
    /// Hand vertical delta: pixels, or a `%` of the longer box side.
    #[arg(long, global = true)]
    pub hand_dv: Option<String>,
    #[arg(long, global = true)]
    pub face_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub hand_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub cigarette_threshold: Option<f64>,
    /// `roi` (classify face/hand proposals) or `raw` (classify the whole image).
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// Skip the per-proposal detector pass when the full-image pass finds nothing.
    #[arg(long, global = true)]
    pub no_fallback: bool,
    /// Worker threads for batch runs. Ignored for exclusive backends.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// A number or a string such as `"25%"`.
#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
enum DeltaSetting {
    Number(f64),
    Text(String),
}

impl DeltaSetting {
    fn into_string(self) -> String {
        match self {
            DeltaSetting::Number(v) => v.to_string(),
            DeltaSetting::Text(s) => s,
        }
    }
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    backend: Option<String>,
    face_dh: Option<DeltaSetting>,
    face_dv: Option<DeltaSetting>,
    hand_dh: Option<DeltaSetting>,
    hand_dv: Option<DeltaSetting>,
    face_threshold: Option<f64>,
    hand_threshold: Option<f64>,
    cigarette_threshold: Option<f64>,
    strategy: Option<String>,
    no_fallback: Option<bool>,
    jobs: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    ratio: Option<f64>,
    no_split: Option<bool>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        // Accept both `face-dh` and `face_dh` spellings.
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        table = table
            .into_iter()
            .map(|(k, v)| (k.replace('_', "-"), v))
            .collect();
        let mut cfg: FileConfig = table
            .try_into()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;

        // Relative paths in the file are relative to the file itself.
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        if let Some(b) = cfg.backend.take() {
            cfg.backend = Some(match b.split_once(':') {
                Some((kind, p)) if Path::new(p).is_relative() => {
                    format!("{kind}:{}", base.join(p).display())
                }
                _ => b,
            });
        }
        cfg.out = cfg.out.map(|o| base.join(o));
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSource {
    Fixture(PathBuf),
    Model(PathBuf),
}

impl FromStr for BackendSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("fixture", p)) if !p.is_empty() => Ok(BackendSource::Fixture(p.into())),
            Some(("model", p)) if !p.is_empty() => Ok(BackendSource::Model(p.into())),
            _ => Err(CliError::Config(format!(
                "backend must be fixture:<file> or model:<dir>, got '{s}'"
            ))),
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct CliConfig {
    /// Required by every command that runs the pipeline.
    pub backend: Option<BackendSource>,
    pub pipeline: PipelineConfig,
    pub out: PathBuf,
    pub jobs: usize,
    pub seed: u64,
    pub ratio: f64,
    pub no_split: bool,
}

pub const DEFAULT_RATIO: f64 = 0.8;

fn delta(
    flag: Option<String>,
    file: Option<DeltaSetting>,
    default: DeltaValue,
    name: &str,
) -> Result<DeltaValue, CliError> {
    match flag.or_else(|| file.map(DeltaSetting::into_string)) {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|e| CliError::Config(format!("--{name}: {e}"))),
    }
}

impl CliConfig {
    /// Merges flags over the config file over defaults. `ratio` and
    /// `no_split` are subcommand flags and passed in separately.
    pub fn resolve(opts: Options, ratio: Option<f64>, no_split: bool) -> Result<Self, CliError> {
        let file = match &opts.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };

        let backend = opts
            .backend
            .or(file.backend)
            .map(|b| b.parse())
            .transpose()?;

        let face = DeltaRule::face_default();
        let hand = DeltaRule::hand_default();
        let face_deltas = DeltaRule {
            horizontal: delta(opts.face_dh, file.face_dh, face.horizontal, "face-dh")?,
            vertical: delta(opts.face_dv, file.face_dv, face.vertical, "face-dv")?,
        };
        let hand_deltas = DeltaRule {
            horizontal: delta(opts.hand_dh, file.hand_dh, hand.horizontal, "hand-dh")?,
            vertical: delta(opts.hand_dv, file.hand_dv, hand.vertical, "hand-dv")?,
        };

        let defaults = Thresholds::default();
        let thresholds = Thresholds {
            face: opts
                .face_threshold
                .or(file.face_threshold)
                .unwrap_or(defaults.face),
            hand: opts
                .hand_threshold
                .or(file.hand_threshold)
                .unwrap_or(defaults.hand),
            cigarette: opts
                .cigarette_threshold
                .or(file.cigarette_threshold)
                .unwrap_or(defaults.cigarette),
        };

        let strategy = match opts.strategy.or(file.strategy) {
            Some(s) => s.parse::<Strategy>().map_err(|e| CliError::Config(e.0))?,
            None => Strategy::default(),
        };

        let pipeline = PipelineConfig {
            face_deltas,
            hand_deltas,
            thresholds,
            strategy,
            detection_fallback: !(opts.no_fallback || file.no_fallback.unwrap_or(false)),
        };
        pipeline
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let jobs = opts
            .jobs
            .or(file.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        let ratio = ratio.or(file.ratio).unwrap_or(DEFAULT_RATIO);
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(CliError::Config(format!(
                "--ratio must lie strictly between 0 and 1, got {ratio}"
            )));
        }

        Ok(Self {
            backend,
            pipeline,
            out: opts.out.or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            jobs,
            seed: opts.seed.or(file.seed).unwrap_or(0),
            ratio,
            no_split: no_split || file.no_split.unwrap_or(false),
        })
    }
}
