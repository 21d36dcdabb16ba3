//! Run configuration: command-line flags override the optional config file,
//! which overrides built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use eeloc::fingerprint::SynthParams;
use eeloc::tensornn::HyperParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Native,
    Ujindoorloc,
    Synth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Three 2×2 conv stages with a dense exit and a conv+dense exit.
    Reference,
    /// Conv stem plus depthwise/pointwise pairs, one exit.
    Dscp,
    /// Conv + max-pool stages and a hidden dense layer, one exit.
    Uji,
}

/// Flags shared by every command. All optional so the config file can
/// supply them.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// Dataset file (for `--format synth`, an optional JSON file of generator parameters).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<DataFormat>,
    /// Model manifest path.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lr: Option<f32>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML file with defaults for any of these flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub format: Option<DataFormat>,
    pub model: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lr: Option<f32>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub out: Option<PathBuf>,
    pub arch: Option<Arch>,
    pub split: Option<[f64; 3]>,
    pub method: Option<String>,
    pub policy: Option<String>,
    /// Per-method threshold grids for calibration, keyed by method name.
    pub grid: Option<std::collections::BTreeMap<String, Vec<f64>>>,
    pub synth: Option<SynthParams>,
}

/// Resolved settings of one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    pub format: DataFormat,
    pub model: Option<PathBuf>,
    pub seed: u64,
    pub hyper: HyperParams,
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub file: FileConfig,
}

pub const DEFAULT_SEED: u64 = 42;

impl RunConfig {
    pub fn resolve(command: &str, args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => read_config(p)?,
            None => FileConfig::default(),
        };
        let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        let defaults = HyperParams::default();
        let hyper = HyperParams {
            learning_rate: args.lr.or(file.lr).unwrap_or(defaults.learning_rate),
            epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            batch_size: args.batch.or(file.batch).unwrap_or(defaults.batch_size),
            seed,
        };
        Ok(Self {
            command: command.into(),
            data: args.data.clone().or(file.data.clone()),
            format: args.format.or(file.format).unwrap_or(DataFormat::Native),
            model: args.model.clone().or(file.model.clone()),
            seed,
            hyper,
            out: args.out.clone().or(file.out.clone()),
            file,
        })
    }

    pub fn model_path(&self) -> Result<&Path> {
        match &self.model {
            Some(p) => Ok(p),
            None => bail!(eeloc::Error::InvalidArgument("--model is required".into())),
        }
    }

    pub fn out_path(&self) -> Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => bail!(eeloc::Error::InvalidArgument("--out is required".into())),
        }
    }
}

fn read_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text)
        .map_err(|e| eeloc::Error::InvalidArgument(format!("config {}: {e}", path.display())))
        .map_err(Into::into)
}
