//! Multi-dimension rationale quality scoring and threshold routing.
//!
//! A video rationale is scored on six dimensions (perplexity, background,
//! temporal, spatial, relations, summary), a topic rationale on five
//! (perplexity, temporal, spatial, concept, summary). The aggregate is the dot
//! product with the variant's weight vector; candidates below the threshold go
//! to expert refinement.

mod config;

pub use config::{PerplexityMode, ScoringConfig, DEFAULT_THRESHOLD, DEFAULT_TOPIC_WEIGHTS, DEFAULT_VIDEO_WEIGHTS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexical::lexicon::{find_folded, phrase_keys, PhraseSet};
use crate::lexical::stem::fold;
use crate::lexical::tokenize::{sentences, tokenize, EOS};
use crate::lexical::{MentionMatcher, NGramModel};
use crate::model::{
    CotCandidate, CotVariant, Diagnostic, GroundingAnnotation, MentionReport, QualityScore, Term,
    TopicItem, VideoSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Accept,
    ExpertQueue,
}

/// A coverage dimension before and after clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageScore {
    pub clamped: f64,
    pub raw: f64,
    pub diagnostic: Option<Diagnostic>,
}

pub fn score_perplexity_dim(text: &str, model: &NGramModel, mode: PerplexityMode) -> Result<f64> {
    let ppl = model.perplexity(text)?;
    Ok(match mode {
        PerplexityMode::Reciprocal => 1.0 / ppl,
        PerplexityMode::Calibrated { reference } => (reference / ppl).min(1.0),
    })
}

fn indicator(hit: bool) -> u8 {
    u8::from(hit)
}

pub fn score_background(text: &str, lexicon: &PhraseSet) -> u8 {
    indicator(lexicon.matches(&tokenize(text)))
}

pub fn score_relations(text: &str, lexicon: &PhraseSet) -> u8 {
    indicator(lexicon.matches(&tokenize(text)))
}

/// Tokens of the last two sentences, each sentence closed by a marker.
pub fn summary_span(tokens: &[String]) -> Vec<String> {
    let sents = sentences(tokens);
    let start = sents.len().saturating_sub(2);
    sents[start..]
        .iter()
        .flat_map(|s| s.iter().cloned().chain(std::iter::once(EOS.to_string())))
        .collect()
}

fn summary_from_tokens(tokens: &[String], lexicon: &PhraseSet) -> u8 {
    indicator(lexicon.matches(&summary_span(tokens)))
}

/// 1 iff a summary marker occurs within the final two sentences.
pub fn score_summary(text: &str, lexicon: &PhraseSet) -> u8 {
    summary_from_tokens(&tokenize(text), lexicon)
}

fn coverage(pos: usize, neg: usize, ground_truth: usize, clamp: bool, empty: Diagnostic) -> CoverageScore {
    if ground_truth == 0 {
        return CoverageScore { clamped: 0.0, raw: 0.0, diagnostic: Some(empty) };
    }
    let raw = (pos as f64 - neg as f64) / ground_truth as f64;
    let clamped = if clamp { raw.clamp(0.0, 1.0) } else { raw };
    CoverageScore { clamped, raw, diagnostic: None }
}

/// `(|pos_objects| - |neg_objects|) / |grounding.objects|`.
pub fn score_spatial(report: &MentionReport, grounding: &GroundingAnnotation, clamp: bool) -> CoverageScore {
    coverage(
        report.pos_objects.len(),
        report.neg_objects.len(),
        grounding.objects.len(),
        clamp,
        Diagnostic::EmptyGroundingObjects,
    )
}

/// `(|pos_actions| - |neg_actions|) / |grounding.actions|`.
pub fn score_temporal(report: &MentionReport, grounding: &GroundingAnnotation, clamp: bool) -> CoverageScore {
    coverage(
        report.pos_actions.len(),
        report.neg_actions.len(),
        grounding.actions.len(),
        clamp,
        Diagnostic::EmptyGroundingActions,
    )
}

fn concept_from_tokens(tokens: &[String], topic: &TopicItem) -> u8 {
    let keys: Vec<String> = tokens.iter().map(|t| if t == EOS { t.clone() } else { fold(t) }).collect();
    let hit = std::iter::once(topic.name.as_str())
        .chain(topic.concept_terms.iter().map(String::as_str))
        .any(|term| !find_folded(&keys, &phrase_keys(term)).is_empty());
    indicator(hit)
}

/// 1 iff the topic name or one of its concept terms is mentioned.
pub fn score_concept(text: &str, topic: Option<&TopicItem>) -> Result<u8> {
    let topic = topic.ok_or_else(|| Error::invalid("concept dimension requires a topic"))?;
    Ok(concept_from_tokens(&tokenize(text), topic))
}

/// Weighted sum of the variant's dimensions, in weight order.
pub fn aggregate(dimensions: &[f64], variant: CotVariant, config: &ScoringConfig) -> Result<f64> {
    let weights = config.weights(variant);
    if dimensions.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{variant} expects {} dimensions, got {}",
            weights.len(),
            dimensions.len()
        )));
    }
    let total: f64 = dimensions.iter().zip(weights).map(|(d, w)| d * w).sum();
    Ok(if config.clamp_negative { total.clamp(0.0, 1.0) } else { total })
}

/// Strictly below the threshold goes to experts; the threshold itself is accepted.
pub fn route(aggregate_score: f64, config: &ScoringConfig) -> Result<Route> {
    if !(0.0..=1.0).contains(&aggregate_score) {
        return Err(Error::invalid(format!("score {aggregate_score} outside [0, 1]")));
    }
    Ok(if aggregate_score < config.threshold { Route::ExpertQueue } else { Route::Accept })
}

/// Scores rationales against their samples with a fixed configuration and model.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: ScoringConfig,
    matcher: MentionMatcher,
    lm: NGramModel,
}

impl Scorer {
    pub fn new(config: ScoringConfig, matcher: MentionMatcher, lm: NGramModel) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, matcher, lm })
    }

    /// Default configuration, shipped lexicons and the bootstrap language model.
    pub fn with_defaults() -> Self {
        Self::new(ScoringConfig::default(), MentionMatcher::default(), NGramModel::seed::<&str>(&[]))
            .expect("default scoring configuration is valid")
    }

    pub fn config(&self) -> &ScoringConfig {
        &self.config
    }

    pub fn lm(&self) -> &NGramModel {
        &self.lm
    }

    pub fn matcher(&self) -> &MentionMatcher {
        &self.matcher
    }

    pub fn route(&self, score: f64) -> Result<Route> {
        route(score, &self.config)
    }

    /// Scores `text` as a rationale of the given variant for `sample`.
    pub fn score_text(&self, text: &str, variant: CotVariant, sample: &VideoSample) -> Result<QualityScore> {
        if variant == CotVariant::TopicCot && sample.topic.is_none() {
            return Err(Error::invalid(format!(
                "topic_cot rationale for sample {} which has no topic",
                sample.video_id
            )));
        }
        let tokens = tokenize(text);
        let ppl = score_perplexity_dim(text, &self.lm, self.config.perplexity_mode)?;
        let report = self.matcher.match_tokens(&tokens, &sample.grounding);
        let clamp = self.config.clamp_negative;
        let spa = score_spatial(&report, &sample.grounding, clamp);
        let tem = score_temporal(&report, &sample.grounding, clamp);
        let sum = summary_from_tokens(&tokens, &self.config.summary_lexicon);
        let diagnostics: Vec<Diagnostic> =
            [&spa.diagnostic, &tem.diagnostic].into_iter().flatten().cloned().collect();

        let (bac, rel, con, dims) = match variant {
            CotVariant::VideoCot => {
                let bac = indicator(self.config.background_lexicon.matches(&tokens));
                let rel = indicator(self.config.relation_lexicon.matches(&tokens));
                let dims = vec![ppl, f64::from(bac), tem.clamped, spa.clamped, f64::from(rel), f64::from(sum)];
                (Some(bac), Some(rel), None, dims)
            }
            CotVariant::TopicCot => {
                let topic = sample.topic.as_ref().expect("checked above");
                let con = concept_from_tokens(&tokens, topic);
                let dims = vec![ppl, tem.clamped, spa.clamped, f64::from(con), f64::from(sum)];
                (None, None, Some(con), dims)
            }
        };
        let aggregate = aggregate(&dims, variant, &self.config)?;
        Ok(QualityScore {
            ppl,
            bac,
            tem: tem.clamped,
            spa: spa.clamped,
            rel,
            sum,
            con,
            aggregate,
            raw_spa: spa.raw,
            raw_tem: tem.raw,
            mention_report: report,
            diagnostics,
        })
    }

    pub fn score_candidate(&self, candidate: &CotCandidate, sample: &VideoSample) -> Result<QualityScore> {
        self.score_text(&candidate.text, candidate.variant, sample)
    }
}

/// Grounded terms a report did not mention.
pub fn missing_terms<'a>(report: &MentionReport, terms: &'a [Term], objects: bool) -> Vec<&'a str> {
    let found = if objects { &report.pos_objects } else { &report.pos_actions };
    terms.iter().map(|t| t.term.as_str()).filter(|t| !found.iter().any(|f| f == t)).collect()
}
