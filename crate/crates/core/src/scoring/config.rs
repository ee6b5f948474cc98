use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexical::PhraseSet;
use crate::model::CotVariant;

/// (ppl, bac, tem, spa, rel, sum)
pub const DEFAULT_VIDEO_WEIGHTS: [f64; 6] = [0.1, 0.1, 0.3, 0.3, 0.1, 0.1];
/// (ppl, tem, spa, con, sum)
pub const DEFAULT_TOPIC_WEIGHTS: [f64; 5] = [0.1, 0.2, 0.2, 0.4, 0.1];
pub const DEFAULT_THRESHOLD: f64 = 0.9;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PerplexityMode {
    /// `1 / PPL`
    #[default]
    Reciprocal,
    /// `min(1, reference / PPL)`
    Calibrated { reference: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub video_weights: [f64; 6],
    pub topic_weights: [f64; 5],
    pub threshold: f64,
    pub background_lexicon: PhraseSet,
    pub relation_lexicon: PhraseSet,
    pub summary_lexicon: PhraseSet,
    pub clamp_negative: bool,
    pub perplexity_mode: PerplexityMode,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            video_weights: DEFAULT_VIDEO_WEIGHTS,
            topic_weights: DEFAULT_TOPIC_WEIGHTS,
            threshold: DEFAULT_THRESHOLD,
            background_lexicon: PhraseSet::new([
                "background",
                "video scene",
                "scene",
                "setting",
                "environment",
                "surroundings",
                "backdrop",
                "takes place",
                "indoors",
                "outdoors",
                "location",
            ]),
            relation_lexicon: PhraseSet::new([
                "while",
                "meanwhile",
                "behind",
                "beside",
                "next to",
                "in front of",
                "above",
                "below",
                "beneath",
                "under",
                "between",
                "near",
                "nearby",
                "towards",
                "toward",
                "across",
                "around",
                "after",
                "before",
                "then",
                "during",
                "as a result",
                "relative to",
                "compared to",
                "together with",
                "at the same time",
                "interacts with",
            ]),
            summary_lexicon: PhraseSet::new([
                "therefore",
                "thus",
                "hence",
                "in summary",
                "in conclusion",
                "to sum up",
                "to summarize",
                "so the answer",
                "overall",
                "consequently",
            ]),
            clamp_negative: true,
            perplexity_mode: PerplexityMode::Reciprocal,
        }
    }
}

fn check_weights(name: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(format!("{name} must be finite and non-negative")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::invalid(format!("{name} sum to {total}, expected 1")));
    }
    Ok(())
}

/// Scales a weight vector to sum to 1.
pub fn normalize_weights(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights("video_weights", &self.video_weights)?;
        check_weights("topic_weights", &self.topic_weights)?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if let PerplexityMode::Calibrated { reference } = self.perplexity_mode {
            if !(reference.is_finite() && reference >= 1.0) {
                return Err(Error::invalid("calibrated perplexity reference must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn weights(&self, variant: CotVariant) -> &[f64] {
        match variant {
            CotVariant::VideoCot => &self.video_weights,
            CotVariant::TopicCot => &self.topic_weights,
        }
    }

    /// Replaces both weight vectors with `c`-scaled, renormalized copies.
    pub fn rescaled(&self, c: f64) -> Self {
        let scale = |w: &[f64]| normalize_weights(&w.iter().map(|x| x * c).collect::<Vec<_>>());
        let mut out = self.clone();
        out.video_weights.copy_from_slice(&scale(&self.video_weights));
        out.topic_weights.copy_from_slice(&scale(&self.topic_weights));
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
