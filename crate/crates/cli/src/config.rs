//! Run configuration: one JSON document, with command-line flags layered on
//! top. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use latnas::arch::Skeleton;
use latnas::controller::{SearchConfig, UpdateRule};
use latnas::cost::{DeviceProfile, LatencyModel};
use latnas::eval::{AccuracySource, Evaluator, ExternalEvaluator, SurrogateConfig};
use latnas::reward::RewardConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RUN_CONFIG_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 15;

fn default_version() -> u32 {
    RUN_CONFIG_VERSION
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_timeout_s() -> f64 {
    latnas::eval::DEFAULT_EXTERNAL_TIMEOUT.as_secs_f64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorConfig {
    Surrogate(SurrogateConfig),
    External {
        cmd: String,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
    },
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig::Surrogate(SurrogateConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub run_config_version: u32,
    pub skeleton_path: PathBuf,
    pub device_profile_path: PathBuf,
    pub reward: RewardConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    pub output_dir: PathBuf,
    /// How many best-reward records summary.json lists.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

/// Command-line values that replace config fields when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub budget: Option<usize>,
    pub batch: Option<usize>,
    pub update_rule: Option<UpdateRule>,
    pub evaluator_cmd: Option<String>,
    pub evaluator_timeout_s: Option<f64>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

impl RunConfig {
    /// Parses a config and resolves its relative paths against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("run config: {e}")))?;
        if cfg.run_config_version != RUN_CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported run_config_version {}",
                cfg.run_config_version
            )));
        }
        for p in [&mut cfg.skeleton_path, &mut cfg.device_profile_path, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&read(path)?, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.search.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(p) = o.parallelism {
            self.search.parallelism = p;
        }
        if let Some(b) = o.budget {
            self.search.total_samples = b;
        }
        if let Some(b) = o.batch {
            self.search.batch_size = b;
        }
        if let Some(rule) = o.update_rule {
            self.search.update_rule = rule;
        }
        if let Some(cmd) = &o.evaluator_cmd {
            let timeout_s = match &self.evaluator {
                EvaluatorConfig::External { timeout_s, .. } => *timeout_s,
                EvaluatorConfig::Surrogate(_) => default_timeout_s(),
            };
            self.evaluator = EvaluatorConfig::External {
                cmd: cmd.clone(),
                timeout_s,
            };
        }
        if let (Some(t), EvaluatorConfig::External { timeout_s, .. }) = (o.evaluator_timeout_s, &mut self.evaluator) {
            *timeout_s = t;
        }
    }

    /// Checks everything that can be checked before a run starts.
    pub fn check(&self) -> Result<(), CliError> {
        self.search.check().map_err(|e| CliError::Config(e.to_string()))?;
        self.reward.check().map_err(|e| CliError::Config(e.to_string()))?;
        match &self.evaluator {
            EvaluatorConfig::Surrogate(s) => s.check().map_err(CliError::Config)?,
            EvaluatorConfig::External { cmd, timeout_s } => {
                if cmd.trim().is_empty() {
                    return Err(CliError::Config("external evaluator command is empty".into()));
                }
                if !(timeout_s.is_finite() && *timeout_s > 0.0) {
                    return Err(CliError::Config(format!("evaluator timeout {timeout_s} must be positive")));
                }
            }
        }
        for p in [&self.skeleton_path, &self.device_profile_path] {
            if !p.is_file() {
                return Err(CliError::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.top_k == 0 {
            return Err(CliError::Config("top_k must be positive".into()));
        }
        Ok(())
    }

    pub fn skeleton(&self) -> Result<Skeleton, CliError> {
        load_skeleton(&self.skeleton_path)
    }

    pub fn profile(&self) -> Result<DeviceProfile, CliError> {
        load_profile(&self.device_profile_path)
    }

    pub fn evaluator(&self) -> Result<Evaluator, CliError> {
        let latency = LatencyModel::new(&self.profile()?);
        let accuracy = match &self.evaluator {
            EvaluatorConfig::Surrogate(s) => AccuracySource::Surrogate(*s),
            EvaluatorConfig::External { cmd, timeout_s } => AccuracySource::External(
                ExternalEvaluator::new(cmd.clone()).with_timeout(Duration::from_secs_f64(*timeout_s)),
            ),
        };
        Ok(Evaluator::new(accuracy, latency))
    }
}

pub fn load_skeleton(path: &Path) -> Result<Skeleton, CliError> {
    Skeleton::from_json(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_profile(path: &Path) -> Result<DeviceProfile, CliError> {
    DeviceProfile::from_json(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
