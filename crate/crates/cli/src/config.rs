//! `cotforge.config` (TOML) discovery and loading.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cotforge_core::lexical::NGramModel;
use cotforge_core::lexical::MentionMatcher;
use cotforge_core::orchestrator::UpdateCadence;
use cotforge_core::provider::ProviderConfig;
use cotforge_core::review::DEFAULT_LEASE_SECONDS;
use cotforge_core::scoring::{Scorer, ScoringConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "COTFORGE_CONFIG";
pub const DEFAULT_CONFIG_FILE: &str = "cotforge.config";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub data_dir: PathBuf,
    pub seed: u64,
    pub parallelism: usize,
    pub log_level: String,
    /// JSON scoring configuration; built-in defaults when absent.
    pub scoring_config: Option<PathBuf>,
    /// Saved n-gram model; the bundled bootstrap model when absent.
    pub language_model: Option<PathBuf>,
    pub providers: ProviderConfig,
    pub run: RunSettings,
    pub serve: ServeSettings,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("cotforge-data"),
            seed: 0,
            parallelism: 1,
            log_level: "info".into(),
            scoring_config: None,
            language_model: None,
            providers: ProviderConfig::default(),
            run: RunSettings::default(),
            serve: ServeSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub batch_size: Option<usize>,
    pub cadence: UpdateCadence,
    pub lease_seconds: i64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self { batch_size: None, cadence: UpdateCadence::default(), lease_seconds: DEFAULT_LEASE_SECONDS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSettings {
    pub listen: String,
    pub snapshot_every: u64,
    /// Built review console served under `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self { listen: "127.0.0.1:8080".into(), snapshot_every: 100, static_dir: None }
    }
}

/// Config file to use: explicit flag, then `$COTFORGE_CONFIG`, then
/// `./cotforge.config` when it exists.
pub fn discover(flag: Option<&Path>, env: Option<&str>, cwd: &Path) -> Option<PathBuf> {
    if let Some(p) = flag {
        return Some(p.to_path_buf());
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return Some(PathBuf::from(e));
    }
    let local = cwd.join(DEFAULT_CONFIG_FILE);
    local.is_file().then_some(local)
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn pool_log(&self) -> PathBuf {
        self.data_dir.join("pool.jsonl")
    }

    pub fn review_dir(&self) -> PathBuf {
        self.data_dir.join("review")
    }

    pub fn scorer(&self, threshold: Option<f64>) -> Result<Scorer> {
        let mut config = match &self.scoring_config {
            Some(p) => ScoringConfig::load(p).with_context(|| format!("loading scoring config {}", p.display()))?,
            None => ScoringConfig::default(),
        };
        if let Some(t) = threshold {
            config.threshold = t;
        }
        let lm = match &self.language_model {
            Some(p) => NGramModel::load(p).with_context(|| format!("loading language model {}", p.display()))?,
            None => NGramModel::seed::<&str>(&[]),
        };
        Ok(Scorer::new(config, MentionMatcher::default(), lm)?)
    }
}
