//! Deterministic offline providers.
//!
//! [`MockPromptGenerator`] improves only by learning from refinement
//! exemplars: each update widens how much of the description it passes on and
//! adopts instruction cues (scene, relations, summary) seen in expert text.
//! [`MockCotGenerator`] turns a prompt into a rationale and, without guidance,
//! occasionally invents an object.

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fnv1a, CotGenerator, Judge, PromptGenerator, ProviderError, TrainingPair, UpdateAck};
use crate::lexical::tokenize;
use crate::scoring::ScoringConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    Scene,
    Relations,
    Summary,
}

impl Cue {
    fn line(self) -> &'static str {
        match self {
            Cue::Scene => "Describe: the video scene",
            Cue::Relations => "Relate: how the objects interact",
            Cue::Summary => "Conclude: summarize and state the answer",
        }
    }
}

/// Splits raw text after sentence terminators, keeping original casing.
pub fn raw_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            let s = cur.trim();
            if !s.is_empty() && s.chars().any(char::is_alphanumeric) {
                out.push(s.to_string());
            }
            cur.clear();
        }
    }
    let s = cur.trim();
    if s.chars().any(char::is_alphanumeric) {
        out.push(format!("{s}."));
    }
    out
}

#[derive(Debug, Clone)]
pub struct MockPromptGenerator {
    coverage: usize,
    growth: usize,
    learns_cues: bool,
    cues: BTreeSet<Cue>,
    updates: Arc<Mutex<Vec<Vec<TrainingPair>>>>,
}

impl MockPromptGenerator {
    /// Starts by forwarding one description sentence; every update adds
    /// `growth` more and adopts cues present in the exemplars.
    pub fn improving(growth: usize) -> Self {
        Self {
            coverage: 1,
            growth,
            learns_cues: true,
            cues: BTreeSet::new(),
            updates: Arc::default(),
        }
    }

    /// Never changes its prompts regardless of updates.
    pub fn fixed() -> Self {
        Self { learns_cues: false, ..Self::improving(0) }
    }

    /// Shared log of every update batch received.
    pub fn update_log(&self) -> Arc<Mutex<Vec<Vec<TrainingPair>>>> {
        Arc::clone(&self.updates)
    }

    pub fn coverage(&self) -> usize {
        self.coverage
    }

    pub fn cues(&self) -> &BTreeSet<Cue> {
        &self.cues
    }
}

impl Default for MockPromptGenerator {
    fn default() -> Self {
        Self::improving(2)
    }
}

impl PromptGenerator for MockPromptGenerator {
    fn summarize(&self, description: &str, question: &str, answer: &str) -> Result<String, ProviderError> {
        let context: Vec<String> = raw_sentences(description).into_iter().take(self.coverage).collect();
        let mut prompt = format!("Question: {question}\nAnswer: {answer}\nContext: {}", context.join(" "));
        for cue in &self.cues {
            prompt.push('\n');
            prompt.push_str(cue.line());
        }
        Ok(prompt)
    }

    fn update(&mut self, pairs: &[TrainingPair]) -> Result<UpdateAck, ProviderError> {
        self.updates.lock().expect("update log poisoned").push(pairs.to_vec());
        if pairs.is_empty() {
            return Ok(UpdateAck { accepted: 0 });
        }
        self.coverage += self.growth;
        if self.learns_cues {
            let lex = ScoringConfig::default();
            for p in pairs {
                let tokens = tokenize(&p.refined_cot);
                if lex.background_lexicon.matches(&tokens) {
                    self.cues.insert(Cue::Scene);
                }
                if lex.relation_lexicon.matches(&tokens) {
                    self.cues.insert(Cue::Relations);
                }
                if lex.summary_lexicon.matches(&tokens) {
                    self.cues.insert(Cue::Summary);
                }
            }
        }
        Ok(UpdateAck { accepted: pairs.len() })
    }
}

const INVENTED_OBJECTS: [&str; 5] = ["bicycle", "umbrella", "guitar", "kite", "ladder"];

/// Rule-based rationale writer seeded per request.
#[derive(Debug, Clone)]
pub struct MockCotGenerator {
    seed: u64,
    hallucination_rate: f64,
}

impl MockCotGenerator {
    pub fn new(seed: u64) -> Self {
        Self { seed, hallucination_rate: 0.5 }
    }

    pub fn with_hallucination_rate(mut self, rate: f64) -> Self {
        self.hallucination_rate = rate.clamp(0.0, 1.0);
        self
    }
}

fn field<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(name)).map(str::trim)
}

impl CotGenerator for MockCotGenerator {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(prompt.as_bytes()));
        let has = |cue: Cue| prompt.lines().any(|l| l == cue.line());
        let answer = field(prompt, "Answer:").unwrap_or("unknown");
        let context = field(prompt, "Context:").unwrap_or("");

        let mut parts: Vec<String> = Vec::new();
        if has(Cue::Scene) {
            parts.push("The background of the video scene is visible.".into());
        }
        if !context.is_empty() {
            parts.push(context.to_string());
        }
        if has(Cue::Relations) {
            parts.push("While this happens, everything stays in view.".into());
        }
        let guided = has(Cue::Scene) || has(Cue::Relations);
        if !guided && rng.random_bool(self.hallucination_rate) {
            let obj = INVENTED_OBJECTS[rng.random_range(0..INVENTED_OBJECTS.len())];
            parts.push(format!("A {obj} appears in the corner."));
        }
        if has(Cue::Summary) {
            parts.push(format!("Therefore, the answer is {answer}."));
        } else {
            parts.push(format!("The answer is {answer}."));
        }
        Ok(parts.join(" "))
    }
}

/// Replays a fixed sequence of results, then repeats the last one.
#[derive(Debug)]
pub struct ScriptedCotGenerator {
    script: Mutex<VecDeque<Result<String, ProviderError>>>,
    last: Mutex<Option<Result<String, ProviderError>>>,
    calls: Mutex<usize>,
}

impl ScriptedCotGenerator {
    pub fn new(script: impl IntoIterator<Item = Result<String, ProviderError>>) -> Self {
        Self { script: Mutex::new(script.into_iter().collect()), last: Mutex::new(None), calls: Mutex::new(0) }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl CotGenerator for ScriptedCotGenerator {
    fn generate(&self, _prompt: &str) -> Result<String, ProviderError> {
        *self.calls.lock().unwrap() += 1;
        let next = self.script.lock().unwrap().pop_front();
        let mut last = self.last.lock().unwrap();
        if let Some(r) = next {
            *last = Some(r);
        }
        last.clone().unwrap_or_else(|| Err(ProviderError::ReplayMiss("empty script".into())))
    }
}

/// Judge backed by a closure.
pub struct FnJudge<F>(pub F);

impl<F> Judge for FnJudge<F>
where
    F: Fn(&str, &str, &str) -> Result<bool, ProviderError> + Send + Sync,
{
    fn judge(&self, q: &str, g: &str, o: &str) -> Result<bool, ProviderError> {
        (self.0)(q, g, o)
    }
}

/// Offline judge: correct iff every word of the gold answer appears in the output.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapJudge;

impl Judge for OverlapJudge {
    fn judge(&self, _q: &str, gold: &str, output: &str) -> Result<bool, ProviderError> {
        let out: BTreeSet<String> = crate::lexical::tokenize::words(&tokenize(output)).map(String::from).collect();
        let gold_tokens = tokenize(gold);
        let mut gold_words = crate::lexical::tokenize::words(&gold_tokens).peekable();
        if gold_words.peek().is_none() {
            return Ok(false);
        }
        Ok(gold_words.all(|w| out.contains(w)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESC: &str = "The girl runs slowly. The dog jumps high. The boy waves.";

    #[test]
    fn raw_sentence_split() {
        assert_eq!(raw_sentences("A b. C d! e"), ["A b.", "C d!", "e."]);
        assert!(raw_sentences("  ").is_empty());
    }

    #[test]
    fn prompt_widens_after_update() {
        let mut g = MockPromptGenerator::improving(2);
        let p0 = g.summarize(DESC, "Why?", "B").unwrap();
        assert!(p0.contains("Context: The girl runs slowly.\n") || p0.ends_with("Context: The girl runs slowly."));
        let pair = TrainingPair {
            video_id: "v".into(),
            qa_id: "q".into(),
            description: DESC.into(),
            question: "Why?".into(),
            answer: "B".into(),
            refined_cot: "The video scene is a park. Therefore, the answer is B.".into(),
        };
        g.update(&[pair]).unwrap();
        let p1 = g.summarize(DESC, "Why?", "B").unwrap();
        assert!(p1.contains("The boy waves."));
        assert!(p1.contains(Cue::Scene.line()));
        assert!(p1.contains(Cue::Summary.line()));
        assert!(!p1.contains(Cue::Relations.line()));
        assert_eq!(g.update_log().lock().unwrap().len(), 1);
    }

    #[test]
    fn fixed_generator_ignores_updates() {
        let mut g = MockPromptGenerator::fixed();
        let before = g.summarize(DESC, "q", "a").unwrap();
        g.update(&[]).unwrap();
        assert_eq!(before, g.summarize(DESC, "q", "a").unwrap());
    }

    #[test]
    fn cot_generator_is_deterministic() {
        let g = MockCotGenerator::new(7);
        let p = "Question: q\nAnswer: C\nContext: The girl runs.";
        assert_eq!(g.generate(p).unwrap(), g.generate(p).unwrap());
        let guided = format!("{p}\n{}\n{}", Cue::Scene.line(), Cue::Summary.line());
        let text = g.generate(&guided).unwrap();
        assert!(text.starts_with("The background of the video scene is visible."));
        assert!(text.ends_with("Therefore, the answer is C."));
    }

    #[test]
    fn scripted_sequence() {
        let g = ScriptedCotGenerator::new([Err(ProviderError::Timeout), Ok("x".to_string())]);
        assert_eq!(g.generate(""), Err(ProviderError::Timeout));
        assert_eq!(g.generate("").unwrap(), "x");
        assert_eq!(g.generate("").unwrap(), "x");
        assert_eq!(g.calls(), 3);
    }

    #[test]
    fn overlap_judge() {
        assert!(OverlapJudge.judge("q", "fitness event", "It is a fitness event.").unwrap());
        assert!(!OverlapJudge.judge("q", "fitness event", "It is a party.").unwrap());
    }
}
