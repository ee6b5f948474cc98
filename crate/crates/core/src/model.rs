//! Domain types shared by every stage of the pipeline.
//!
//! All types serialize to one JSON object per line with field names matching
//! the struct fields. Maps are `BTreeMap` so exports are byte-reproducible.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    En,
    Zh,
}

/// A term together with the surface forms that count as a mention of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub term: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

impl Term {
    pub fn new(term: impl Into<String>) -> Self {
        Self { term: term.into(), synonyms: Vec::new() }
    }

    pub fn with_synonyms<I, S>(term: impl Into<String>, synonyms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { term: term.into(), synonyms: synonyms.into_iter().map(Into::into).collect() }
    }

    /// Canonical form followed by every synonym.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.term.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

/// An evaluation keyword and its accepted synonyms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub keyword: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

impl Keyword {
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.keyword.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QaKind {
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "OE")]
    Oe,
    #[serde(rename = "topic_relevance")]
    TopicRelevance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub qa_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<AnswerOption>>,
    pub answer: String,
    #[serde(default)]
    pub keywords: Vec<Keyword>,
    pub kind: QaKind,
}

impl QaPair {
    /// The rationale variant produced for this kind of question.
    pub fn variant(&self) -> CotVariant {
        match self.kind {
            QaKind::TopicRelevance => CotVariant::TopicCot,
            QaKind::Mc | QaKind::Oe => CotVariant::VideoCot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicItem {
    pub name: String,
    pub concept_terms: Vec<String>,
}

/// Ground-truth objects and actions present in a video.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingAnnotation {
    #[serde(default)]
    pub objects: Vec<Term>,
    #[serde(default)]
    pub actions: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSample {
    pub video_id: String,
    pub source: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<TopicItem>,
    #[serde(default)]
    pub grounding: GroundingAnnotation,
    pub qa_pairs: Vec<QaPair>,
    #[serde(default)]
    pub language: Language,
}

impl VideoSample {
    pub fn qa(&self, qa_id: &str) -> Option<&QaPair> {
        self.qa_pairs.iter().find(|qa| qa.qa_id == qa_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotVariant {
    VideoCot,
    TopicCot,
}

impl fmt::Display for CotVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CotVariant::VideoCot => "video_cot",
            CotVariant::TopicCot => "topic_cot",
        })
    }
}

/// Lifecycle of a candidate rationale.
///
/// Legal moves: `generated -> scored -> accepted` and
/// `scored -> queued_for_expert -> refined -> accepted`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotStatus {
    Generated,
    Scored,
    QueuedForExpert,
    Refined,
    Accepted,
}

impl CotStatus {
    pub const ALL: [CotStatus; 5] = [
        CotStatus::Generated,
        CotStatus::Scored,
        CotStatus::QueuedForExpert,
        CotStatus::Refined,
        CotStatus::Accepted,
    ];

    pub fn can_transition_to(self, next: CotStatus) -> bool {
        use CotStatus::*;
        matches!(
            (self, next),
            (Generated, Scored)
                | (Scored, Accepted)
                | (Scored, QueuedForExpert)
                | (QueuedForExpert, Refined)
                | (Refined, Accepted)
        )
    }

    pub fn is_scored(self) -> bool {
        self != CotStatus::Generated
    }
}

impl fmt::Display for CotStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CotStatus::Generated => "generated",
            CotStatus::Scored => "scored",
            CotStatus::QueuedForExpert => "queued_for_expert",
            CotStatus::Refined => "refined",
            CotStatus::Accepted => "accepted",
        })
    }
}

/// Which grounded terms a rationale mentions, and which mentions are unsupported.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionReport {
    pub pos_objects: Vec<String>,
    pub neg_objects: Vec<String>,
    pub pos_actions: Vec<String>,
    pub neg_actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    /// The grounding has no objects, so the spatial dimension was forced to 0.
    EmptyGroundingObjects,
    /// The grounding has no actions, so the temporal dimension was forced to 0.
    EmptyGroundingActions,
}

/// Per-dimension scores of one rationale and their weighted aggregate.
///
/// `bac`/`rel` are present only for video rationales, `con` only for topic
/// rationales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub ppl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bac: Option<u8>,
    pub tem: f64,
    pub spa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel: Option<u8>,
    pub sum: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub con: Option<u8>,
    pub aggregate: f64,
    pub raw_spa: f64,
    pub raw_tem: f64,
    pub mention_report: MentionReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
}

impl QualityScore {
    pub fn variant(&self) -> CotVariant {
        if self.con.is_some() {
            CotVariant::TopicCot
        } else {
            CotVariant::VideoCot
        }
    }

    /// Dimension values in weight order for the score's variant.
    pub fn dimensions(&self) -> Vec<f64> {
        match self.variant() {
            CotVariant::VideoCot => vec![
                self.ppl,
                f64::from(self.bac.unwrap_or(0)),
                self.tem,
                self.spa,
                f64::from(self.rel.unwrap_or(0)),
                f64::from(self.sum),
            ],
            CotVariant::TopicCot => vec![
                self.ppl,
                self.tem,
                self.spa,
                f64::from(self.con.unwrap_or(0)),
                f64::from(self.sum),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotCandidate {
    pub candidate_id: String,
    pub video_id: String,
    pub qa_id: String,
    pub text: String,
    pub variant: CotVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<QualityScore>,
    pub status: CotStatus,
    pub round: u32,
    pub prompt_used: String,
}

impl CotCandidate {
    /// Moves the candidate along the status graph, rejecting illegal moves.
    pub fn transition(&mut self, next: CotStatus) -> Result<()> {
        if !self.status.can_transition_to(next) {
            return Err(Error::IllegalTransition {
                candidate_id: self.candidate_id.clone(),
                from: self.status,
                to: next,
            });
        }
        if next.is_scored() && self.score.is_none() {
            return Err(Error::Invalid(format!(
                "candidate {} cannot reach {next} without a score",
                self.candidate_id
            )));
        }
        self.status = next;
        Ok(())
    }

    pub fn mark_scored(&mut self, score: QualityScore) -> Result<()> {
        self.score = Some(score);
        if let Err(e) = self.transition(CotStatus::Scored) {
            self.score = None;
            return Err(e);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementEvent {
    pub event_id: u64,
    pub candidate_id: String,
    pub expert_id: String,
    pub original_text: String,
    pub refined_text: String,
    pub timestamp: DateTime<Utc>,
    pub rescored: QualityScore,
    /// Practice-session edits are accepted but never enter the training pool.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub practice: bool,
}

/// One broken invariant found by [`validate_sample`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn normalize_term(t: &str) -> String {
    t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn check_terms(field: &str, terms: &[Term], out: &mut Vec<Violation>) {
    let mut seen = BTreeSet::new();
    for (i, t) in terms.iter().enumerate() {
        let f = format!("{field}[{i}]");
        let norm = normalize_term(&t.term);
        if norm.is_empty() {
            out.push(Violation::new(&f, "canonical term empty"));
            continue;
        }
        if t.term != t.term.to_lowercase() {
            out.push(Violation::new(&f, "canonical term not lowercase"));
        }
        if !seen.insert(norm.clone()) {
            out.push(Violation::new(&f, "duplicate canonical term"));
        }
        if t.synonyms.iter().any(|s| normalize_term(s) == norm) {
            out.push(Violation::new(&f, "synonyms contain the canonical term"));
        }
    }
}

/// Lists every invariant the sample breaks; an empty list means it is well formed.
pub fn validate_sample(sample: &VideoSample) -> Vec<Violation> {
    let mut out = Vec::new();
    if sample.video_id.trim().is_empty() {
        out.push(Violation::new("video_id", "video_id empty"));
    }
    if sample.description.trim().is_empty() {
        out.push(Violation::new("description", "description empty"));
    }
    if let Some(topic) = &sample.topic {
        if topic.name.trim().is_empty() {
            out.push(Violation::new("topic.name", "topic name empty"));
        }
        if topic.concept_terms.is_empty() {
            out.push(Violation::new("topic.concept_terms", "concept_terms empty"));
        }
    }
    check_terms("grounding.objects", &sample.grounding.objects, &mut out);
    check_terms("grounding.actions", &sample.grounding.actions, &mut out);

    let mut ids = BTreeSet::new();
    for (i, qa) in sample.qa_pairs.iter().enumerate() {
        let f = |name: &str| format!("qa_pairs[{i}].{name}");
        if qa.qa_id.trim().is_empty() {
            out.push(Violation::new(f("qa_id"), "qa_id empty"));
        }
        if !ids.insert(qa.qa_id.as_str()) {
            out.push(Violation::new(f("qa_id"), "duplicate qa_id"));
        }
        match qa.kind {
            QaKind::Mc => match qa.options.as_deref() {
                None | Some([]) => out.push(Violation::new(f("options"), "options empty for MC")),
                Some(opts) => {
                    if !opts.iter().any(|o| o.label == qa.answer) {
                        out.push(Violation::new(f("answer"), "answer not in option labels"));
                    }
                }
            },
            QaKind::TopicRelevance => {
                if qa.answer != "yes" && qa.answer != "no" {
                    out.push(Violation::new(f("answer"), "topic_relevance answer not yes/no"));
                }
                if qa.keywords.is_empty() {
                    out.push(Violation::new(f("keywords"), "keywords empty for non-MC"));
                }
            }
            QaKind::Oe => {
                if qa.keywords.is_empty() {
                    out.push(Violation::new(f("keywords"), "keywords empty for non-MC"));
                }
            }
        }
        if qa.kind == QaKind::TopicRelevance && sample.topic.is_none() {
            out.push(Violation::new(f("kind"), "topic_relevance question without a topic"));
        }
    }
    out
}
