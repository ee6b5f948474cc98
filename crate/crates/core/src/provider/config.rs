use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::HttpProvider;
use super::mock::{MockCotGenerator, MockPromptGenerator, OverlapJudge};
use super::transcript::{Recorded, Replay, TranscriptEntry, TranscriptLog};
use super::{CotGenerator, Judge, PromptGenerator, ProviderError, RetryPolicy};

pub const PROMPT_GENERATOR: &str = "prompt_generator";
pub const COT_GENERATOR: &str = "cot_generator";
pub const JUDGE: &str = "judge";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    /// Description sentences added to the prompt per update.
    pub growth: usize,
    /// When false the prompt generator ignores updates.
    pub improving: bool,
    /// Chance of an invented object in an unguided rationale.
    pub hallucination_rate: f64,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self { growth: 2, improving: true, hallucination_rate: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub endpoint: String,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProviderKind {
    Mock(MockSettings),
    Http(HttpSettings),
}

impl Default for ProviderKind {
    fn default() -> Self {
        Self::Mock(MockSettings::default())
    }
}

impl HttpSettings {
    pub fn client(&self) -> Result<HttpProvider, ProviderError> {
        let timeout = Duration::from_millis(self.timeout_ms);
        match &self.api_key_env {
            Some(var) => HttpProvider::with_key_from_env(self.endpoint.clone(), var, timeout),
            None => Ok(HttpProvider::new(self.endpoint.clone(), None, timeout)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub prompt_generator: ProviderKind,
    pub cot_generator: ProviderKind,
    pub judge: ProviderKind,
    pub retry: RetryPolicy,
}

/// How provider traffic is captured.
#[derive(Debug, Clone, Default)]
pub enum TranscriptMode {
    #[default]
    Off,
    Record(Arc<TranscriptLog>),
    /// Serve every call from these entries; configured kinds are ignored.
    Replay(Vec<TranscriptEntry>),
}

/// Instantiated providers for one run.
pub struct ProviderSet {
    pub prompt: Box<dyn PromptGenerator>,
    pub cot: Box<dyn CotGenerator>,
    pub judge: Box<dyn Judge>,
    pub retry: RetryPolicy,
}

impl std::fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderSet").field("retry", &self.retry).finish_non_exhaustive()
    }
}

impl ProviderSet {
    pub fn new(
        prompt: impl PromptGenerator + 'static,
        cot: impl CotGenerator + 'static,
        judge: impl Judge + 'static,
        retry: RetryPolicy,
    ) -> Self {
        Self { prompt: Box::new(prompt), cot: Box::new(cot), judge: Box::new(judge), retry }
    }

    /// Default mocks with immediate retries.
    pub fn mock(seed: u64) -> Self {
        Self::new(MockPromptGenerator::default(), MockCotGenerator::new(seed), OverlapJudge, RetryPolicy::immediate(3))
    }
}

fn prompt_box<P: PromptGenerator + 'static>(p: P, mode: &TranscriptMode) -> Box<dyn PromptGenerator> {
    match mode {
        TranscriptMode::Record(log) => Box::new(Recorded::new(p, PROMPT_GENERATOR, Arc::clone(log))),
        _ => Box::new(p),
    }
}

fn cot_box<P: CotGenerator + 'static>(p: P, mode: &TranscriptMode) -> Box<dyn CotGenerator> {
    match mode {
        TranscriptMode::Record(log) => Box::new(Recorded::new(p, COT_GENERATOR, Arc::clone(log))),
        _ => Box::new(p),
    }
}

fn judge_box<P: Judge + 'static>(p: P, mode: &TranscriptMode) -> Box<dyn Judge> {
    match mode {
        TranscriptMode::Record(log) => Box::new(Recorded::new(p, JUDGE, Arc::clone(log))),
        _ => Box::new(p),
    }
}

impl ProviderConfig {
    /// Builds the providers; mocks derive their randomness from `seed`.
    pub fn build(&self, seed: u64, mode: &TranscriptMode) -> Result<ProviderSet, ProviderError> {
        let retry = self.retry;
        if let TranscriptMode::Replay(entries) = mode {
            return Ok(ProviderSet {
                prompt: Box::new(Replay::new(PROMPT_GENERATOR, entries.iter().cloned())),
                cot: Box::new(Replay::new(COT_GENERATOR, entries.iter().cloned())),
                judge: Box::new(Replay::new(JUDGE, entries.iter().cloned())),
                retry,
            });
        }

        let prompt = match &self.prompt_generator {
            ProviderKind::Http(h) => prompt_box(h.client()?, mode),
            ProviderKind::Mock(m) if m.improving => prompt_box(MockPromptGenerator::improving(m.growth), mode),
            ProviderKind::Mock(_) => prompt_box(MockPromptGenerator::fixed(), mode),
        };
        let cot = match &self.cot_generator {
            ProviderKind::Http(h) => cot_box(h.client()?, mode),
            ProviderKind::Mock(m) => {
                cot_box(MockCotGenerator::new(seed).with_hallucination_rate(m.hallucination_rate), mode)
            }
        };
        let judge = match &self.judge {
            ProviderKind::Http(h) => judge_box(h.client()?, mode),
            ProviderKind::Mock(_) => judge_box(OverlapJudge, mode),
        };
        Ok(ProviderSet { prompt, cot, judge, retry })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_kinds() {
        let cfg: ProviderConfig = serde_json::from_str(
            r#"{"cot_generator": {"kind": "http", "endpoint": "http://x"},
                "prompt_generator": {"kind": "mock", "growth": 4},
                "retry": {"max_retries": 5, "base_delay_ms": 10}}"#,
        )
        .unwrap();
        assert_eq!(
            cfg.cot_generator,
            ProviderKind::Http(HttpSettings { endpoint: "http://x".into(), api_key_env: None, timeout_ms: 30_000 })
        );
        assert_eq!(cfg.prompt_generator, ProviderKind::Mock(MockSettings { growth: 4, ..Default::default() }));
        assert_eq!(cfg.judge, ProviderKind::default());
        assert_eq!(cfg.retry.max_retries, 5);
    }

    #[test]
    fn record_and_replay_round_trip() {
        let log = TranscriptLog::in_memory();
        let cfg = ProviderConfig::default();
        let live = cfg.build(9, &TranscriptMode::Record(Arc::clone(&log))).unwrap();
        let p = live.prompt.summarize("A dog runs.", "q", "a").unwrap();
        let t = live.cot.generate(&p).unwrap();
        let replay = cfg.build(0, &TranscriptMode::Replay(log.entries())).unwrap();
        assert_eq!(replay.prompt.summarize("A dog runs.", "q", "a").unwrap(), p);
        assert_eq!(replay.cot.generate(&p).unwrap(), t);
    }

    #[test]
    fn missing_http_credentials_surface() {
        let cfg = ProviderConfig {
            judge: ProviderKind::Http(HttpSettings {
                endpoint: "http://x".into(),
                api_key_env: Some("COTFORGE_TEST_UNSET_JUDGE_KEY".into()),
                timeout_ms: 10,
            }),
            ..Default::default()
        };
        assert!(matches!(cfg.build(0, &TranscriptMode::Off), Err(ProviderError::Credentials(_))));
    }
}
