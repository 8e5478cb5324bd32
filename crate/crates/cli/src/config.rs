//! Run configuration: a TOML file, then command-line flags on top.

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use streetsafe_core::judges::JudgeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub anchor_size: usize,
    /// Opponents drawn per anchor image.
    pub opponents: usize,
    pub k: usize,
    pub train_fraction: f64,
    pub paths: Paths,
    pub judge: JudgeConfig,
    pub embed: EmbedConfig,
    pub service: ServiceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            anchor_size: 1000,
            opponents: 40,
            k: 10,
            train_fraction: 0.8,
            paths: Paths::default(),
            judge: JudgeConfig::default(),
            embed: EmbedConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

/// Artifact locations. Relative paths are taken under `dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub latent: PathBuf,
    pub anchor: PathBuf,
    pub plan: PathBuf,
    pub judgments: PathBuf,
    pub rationales: PathBuf,
    pub votes: PathBuf,
    pub anchor_scores: PathBuf,
    pub embeddings: PathBuf,
    pub city_scores: PathBuf,
    pub report: PathBuf,
    pub report_text: PathBuf,
    pub ablation: PathBuf,
    pub map: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dir: PathBuf::from("."),
            manifest: "manifest.jsonl".into(),
            latent: "latent.csv".into(),
            anchor: "anchor.txt".into(),
            plan: "plan.json".into(),
            judgments: "judgments.jsonl".into(),
            rationales: "rationales.jsonl".into(),
            votes: "votes.jsonl".into(),
            anchor_scores: "anchor_scores.csv".into(),
            embeddings: "embeddings.bin".into(),
            city_scores: "city_scores.csv".into(),
            report: "report.csv".into(),
            report_text: "report.txt".into(),
            ablation: "ablation.csv".into(),
            map: "map.geojson".into(),
        }
    }
}

impl Paths {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.dir.join(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub endpoint: Option<String>,
    pub batch_size: usize,
    pub concurrency: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { endpoint: None, batch_size: 32, concurrency: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub bind: String,
    pub static_dir: Option<PathBuf>,
    pub criteria: Option<PathBuf>,
    /// Give every annotator a plan of their own instead of a shuffled copy
    /// of the shared one.
    pub independent_plans: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { port: 8080, bind: "127.0.0.1".into(), static_dir: None, criteria: None, independent_plans: false }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.paths.resolve(p)
    }
}
