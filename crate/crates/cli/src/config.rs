//! Run configuration: one JSON file plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use erank_core::attention::ModelSpec;
use erank_core::experiments::{BoundSettings, SweepConfig, TaskConfig, TrainConfig, ZScalingConfig};
use erank_core::rademacher::McConfig;

use crate::error::CliError;

/// Where the sensitivity matrices for a Rademacher estimate come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SensitivitySource {
    /// `m` copies of the `n × n` identity.
    Identity { n: usize, m: usize },
    /// `m` independent Gaussian matrices with entries `N(0, scale²)`.
    Gaussian { n: usize, m: usize, scale: f64 },
    /// A seeded random model (the run's `model` block) on `m` training
    /// examples drawn from the run's `task` block.
    RandomModel { m: usize },
    /// A saved checkpoint evaluated on matrix CSV inputs.
    Checkpoint { checkpoint: PathBuf, inputs: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RademacherSettings {
    pub source: SensitivitySource,
    #[serde(rename = "R")]
    pub rank_cap: f64,
    pub layer: usize,
    pub head: usize,
    pub mc: McConfig,
}

impl Default for RademacherSettings {
    fn default() -> Self {
        RademacherSettings {
            source: SensitivitySource::Identity { n: 4, m: 16 },
            rank_cap: 2.0,
            layer: 0,
            head: 0,
            mc: McConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub bound: BoundSettings,
    /// Independent sweep replicates.
    pub replicates: usize,
    /// When set, replaces the task, training, Monte-Carlo and Z-scaling seeds.
    pub seed: Option<u64>,
    pub rademacher: RademacherSettings,
    pub z_scaling: ZScalingConfig,
    /// Sweep output directory, relative to the working directory.
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            bound: BoundSettings::default(),
            replicates: 1,
            seed: None,
            rademacher: RademacherSettings::default(),
            z_scaling: ZScalingConfig::default(),
            output: None,
        }
    }
}

impl RunConfig {
    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            task: self.task.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            bound: self.bound.clone(),
            replicates: self.replicates,
        }
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.task.seed = s;
            self.train.seed = s;
            self.rademacher.mc.seed = s;
            self.z_scaling.seed = s;
        }
    }
}

/// A fully resolved configuration and where relative paths are anchored.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

impl Resolved {
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `path` (dot separated) inside `root`. Every segment must already exist.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let mut node = root;
    for seg in key.split('.') {
        node = match node {
            Value::Object(map) => map
                .get_mut(seg)
                .ok_or_else(|| CliError::Config(format!("unknown config key `{key}`")))?,
            _ => return Err(CliError::Config(format!("`{key}` does not name a config field"))),
        };
    }
    *node = parse_value(raw);
    Ok(())
}

fn from_value(v: Value, origin: &str) -> Result<RunConfig, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// Reads the config file (or defaults), applies overrides and the global seed,
/// and hashes the canonical JSON of the result.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Resolved, CliError> {
    let (base, base_dir, origin) = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (from_value(v, &p.display().to_string())?, dir, p.display().to_string())
        }
        None => (RunConfig::default(), PathBuf::from("."), "defaults".to_string()),
    };
    let mut tree = serde_json::to_value(&base).expect("config serializes");
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let mut config = from_value(tree, &origin)?;
    config.apply_seed();
    let hash = config_hash(&config);
    Ok(Resolved {
        config,
        base_dir,
        hash,
    })
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
