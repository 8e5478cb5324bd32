//! Verdict sources for "which image looks safer?" and the plan runner that
//! feeds their answers into the judgment log.

use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Choice, ImageKey};
use crate::tournament::PairingPlan;

#[cfg(feature = "http")]
pub mod mllm;
pub mod prompt;
pub mod runner;
pub mod synthetic;

pub use prompt::{parse_choice, ParsedChoice, PromptTemplate};
pub use runner::{run_plan, RunOptions, RunSummary};
pub use synthetic::{synthetic_verdict, SyntheticJudge};

/// What a judge answered for one pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub choice: Choice,
    pub rationale: Option<String>,
    /// Set when every reply was unparseable and the verdict fell back to C.
    pub parse_failed: bool,
}

impl Verdict {
    pub fn plain(choice: Choice) -> Self {
        Verdict {
            choice,
            rationale: None,
            parse_failed: false,
        }
    }
}

pub trait Judge: Sync {
    fn judge_id(&self) -> &str;

    /// Model name recorded in the rationale sidecar.
    fn model(&self) -> Option<&str> {
        None
    }

    /// Checks up front that every pair in the plan can be judged.
    fn prepare(&self, _plan: &PairingPlan) -> Result<()> {
        Ok(())
    }

    fn verdict(&self, left: &ImageKey, right: &ImageKey) -> Result<Verdict>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    #[default]
    Synthetic,
    Mllm,
    HumanBridge,
}

pub const DEFAULT_TEMPERATURE: f64 = 0.05;
pub const DEFAULT_API_KEY_ENV: &str = "STREETSAFE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub kind: JudgeKind,
    pub temperature: f64,
    pub noise: f64,
    pub uncomparable_rate: f64,
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_retries: u32,
    pub concurrency_limit: usize,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            kind: JudgeKind::Synthetic,
            temperature: DEFAULT_TEMPERATURE,
            noise: 0.0,
            uncomparable_rate: 0.0,
            endpoint: None,
            model: "gpt-4o".to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_retries: 2,
            concurrency_limit: 4,
            backoff_base_ms: 1000,
            timeout_secs: 120,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {p}")))
            }
        };
        if !(self.temperature >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        prob("noise", self.noise)?;
        prob("uncomparable_rate", self.uncomparable_rate)?;
        if self.concurrency_limit == 0 {
            return Err(Error::InvalidArgument("concurrency_limit must be >= 1".into()));
        }
        Ok(())
    }

    pub fn backoff_base(&self) -> Duration {
        Duration::from_millis(self.backoff_base_ms)
    }
}

/// Source of judgment timestamps.
pub trait Clock {
    fn now(&mut self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&mut self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock: `start`, `start + step`, ... Used by synthetic runs
/// so replayed logs are byte-identical.
pub struct SequenceClock {
    next: DateTime<Utc>,
    step: chrono::Duration,
}

impl SequenceClock {
    pub fn new(start: DateTime<Utc>, step: chrono::Duration) -> Self {
        SequenceClock { next: start, step }
    }
}

impl Clock for SequenceClock {
    fn now(&mut self) -> DateTime<Utc> {
        let t = self.next;
        self.next += self.step;
        t
    }
}
