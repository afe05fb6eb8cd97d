//! Resolved run configuration: defaults, overlaid by an optional JSON file,
//! overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use pyformer::data::SynthSpec;
use pyformer::model::PyFormerConfig;
use pyformer::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    /// Train, validation and test fractions per class.
    pub ratios: [f64; 3],
    pub strict_spatial: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { ratios: [0.05, 0.05, 0.90], strict_spatial: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    #[value(name = "train_ratio")]
    TrainRatio,
    #[value(name = "patch_size")]
    PatchSize,
    Heads,
    Layers,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::TrainRatio => "train_ratio",
            Axis::PatchSize => "patch_size",
            Axis::Heads => "heads",
            Axis::Layers => "layers",
        }
    }

    /// Value grid used when none is given.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::TrainRatio => vec![5.0, 10.0, 15.0, 20.0, 25.0],
            _ => vec![2.0, 4.0, 6.0, 8.0, 10.0],
        }
    }
}

/// One axis of the ablation grid. Train ratios are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSettings {
    pub tolerance: f64,
    pub eps: f64,
    /// Coordinates probed per parameter tensor.
    pub samples: usize,
    pub batch: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings { tolerance: 1e-3, eps: 1e-4, samples: 16, batch: 1 }
    }
}

/// Everything a command needs. `seed` drives scene generation, splitting,
/// initialization and shuffling; the nested seeds are copies of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub cube: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub synth: SynthSpec,
    pub split: SplitSettings,
    pub model: PyFormerConfig,
    pub train: TrainConfig,
    pub ablation: Option<AblationSpec>,
    pub gradcheck: GradcheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            seed: 0,
            cube: None,
            split_file: None,
            checkpoint: None,
            synth: SynthSpec::default(),
            split: SplitSettings::default(),
            model: PyFormerConfig::default(),
            train: TrainConfig::default(),
            ablation: None,
            gradcheck: GradcheckSettings::default(),
        };
        c.seed = c.synth.seed;
        c.sync_seeds();
        c
    }
}

/// Recursively overlays `patch` onto `base`, rejecting keys `base` lacks.
fn overlay(base: &mut Value, patch: Value, path: &str) -> CliResult<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v, &here)?,
                    None => return Err(CliError::Validation(format!("unknown config key `{here}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

impl RunConfig {
    pub fn sync_seeds(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
    }

    /// Defaults overlaid with the file at `path`; keys may be partial.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let mut base = serde_json::to_value(RunConfig::default()).expect("config serializes");
        overlay(&mut base, patch, "")?;
        serde_json::from_value(base).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join(CONFIG_FILE), self)
    }

    pub fn require_cube(&self) -> CliResult<&Path> {
        self.cube.as_deref().ok_or_else(|| CliError::Validation("no input cube (use --cube)".into()))
    }

    pub fn require_checkpoint(&self) -> CliResult<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Validation("no checkpoint (use --checkpoint)".into()))
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
