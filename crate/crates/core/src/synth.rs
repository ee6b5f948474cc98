//! Seeded synthetic corpus and a scripted expert for offline simulation.
//!
//! Descriptions are at most five sentences built only from grounded or
//! allowlisted words, so a rationale quoting the whole description with
//! scene, relation and summary phrases scores at or above the threshold.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::{Clock, SteppingClock};
use crate::error::Result;
use crate::model::{
    AnswerOption, CotCandidate, GroundingAnnotation, Keyword, Language, QaKind, QaPair, RefinementEvent, Term,
    TopicItem, VideoSample,
};
use crate::orchestrator::RefinementSource;
use crate::scoring::Scorer;

const SUBJECTS: &[&str] = &["man", "woman", "girl", "boy", "child", "player", "dancer", "chef", "worker", "teenager"];
const PLACES: &[&str] = &["park", "kitchen", "street", "field", "court", "beach", "gym", "room"];
const OBJECTS: &[&str] = &[
    "ball", "bag", "box", "cup", "bottle", "towel", "rope", "hat", "book", "toy", "plate", "bowl", "chair", "shoe",
    "glove", "helmet", "bench", "flag", "mask", "balloon",
];
/// (base, third person singular)
const VERBS: &[(&str, &str)] = &[
    ("kick", "kicks"),
    ("throw", "throws"),
    ("hold", "holds"),
    ("carry", "carries"),
    ("push", "pushes"),
    ("pull", "pulls"),
    ("lift", "lifts"),
    ("catch", "catches"),
    ("grab", "grabs"),
    ("swing", "swings"),
    ("drop", "drops"),
    ("wash", "washes"),
    ("clean", "cleans"),
    ("shake", "shakes"),
    ("toss", "tosses"),
    ("pick", "picks"),
];
const TOPICS: &[(&str, &[&str])] = &[
    ("fitness", &["exercise", "workout"]),
    ("leisure", &["hobby", "leisure"]),
    ("sports", &["sport", "competition"]),
    ("daily life", &["routine", "chore"]),
];
const LABELS: [&str; 4] = ["A", "B", "C", "D"];

/// Builds `n` valid samples deterministically from `seed`.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<VideoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| synthetic_sample(&format!("syn{i:05}"), &mut rng)).collect()
}

fn synthetic_sample(video_id: &str, rng: &mut ChaCha8Rng) -> VideoSample {
    let subject = *SUBJECTS.choose(rng).expect("non-empty");
    let place = *PLACES.choose(rng).expect("non-empty");
    let n_actions = rng.random_range(1..=3);
    let verbs: Vec<(&str, &str)> = VERBS.choose_multiple(rng, n_actions).copied().collect();
    let objects: Vec<&str> = OBJECTS.choose_multiple(rng, n_actions).copied().collect();
    let topic = rng.random_bool(0.25).then(|| *TOPICS.choose(rng).expect("non-empty"));

    let mut sentences = vec![format!("The {subject} is in the {place}.")];
    for ((_, third), obj) in verbs.iter().zip(&objects) {
        sentences.push(format!("The {subject} {third} the {obj}."));
    }
    if let Some((_, concepts)) = topic {
        sentences.push(format!("The clip shows a {} activity.", concepts[0]));
    }
    sentences.shuffle(rng);

    let mut grounded_objects = vec![Term::new(subject), Term::new(place)];
    grounded_objects.extend(objects.iter().map(|o| Term::new(*o)));

    let (verb, third) = verbs[0];
    let obj = objects[0];
    let mut distractors: Vec<&str> =
        VERBS.iter().map(|(_, t)| *t).filter(|t| !verbs.iter().any(|(_, v)| v == t)).collect();
    distractors.shuffle(rng);
    let correct = rng.random_range(0..LABELS.len());
    let mut d = distractors.into_iter();
    let options: Vec<AnswerOption> = LABELS
        .iter()
        .enumerate()
        .map(|(i, l)| AnswerOption {
            label: (*l).to_string(),
            text: format!("{} it", if i == correct { third } else { d.next().expect("enough verbs") }),
        })
        .collect();

    let mut qa_pairs = vec![QaPair {
        qa_id: "q1".into(),
        question: format!("What does the {subject} do with the {obj}?"),
        options: Some(options),
        answer: LABELS[correct].to_string(),
        keywords: Vec::new(),
        kind: QaKind::Mc,
    }];
    if rng.random_bool(0.5) {
        qa_pairs.push(QaPair {
            qa_id: "q2".into(),
            question: format!("Why is the {subject} in the {place}?"),
            options: None,
            answer: format!("to {verb} the {obj}"),
            keywords: vec![Keyword { keyword: verb.into(), synonyms: Vec::new() }, Keyword {
                keyword: obj.into(),
                synonyms: Vec::new(),
            }],
            kind: QaKind::Oe,
        });
    }
    if let Some((name, _)) = topic {
        qa_pairs.push(QaPair {
            qa_id: "q3".into(),
            question: format!("Is the video relevant to the topic {name}?"),
            options: None,
            answer: "yes".into(),
            keywords: vec![Keyword { keyword: "yes".into(), synonyms: Vec::new() }],
            kind: QaKind::TopicRelevance,
        });
    }

    VideoSample {
        video_id: video_id.to_string(),
        source: "synthetic".into(),
        description: sentences.join(" "),
        topic: topic.map(|(name, concepts)| TopicItem {
            name: name.into(),
            concept_terms: concepts.iter().map(|c| (*c).to_string()).collect(),
        }),
        grounding: GroundingAnnotation {
            objects: grounded_objects,
            actions: verbs.iter().map(|(b, _)| Term::new(*b)).collect(),
        },
        qa_pairs,
        language: Language::En,
    }
}

/// The rationale an ideal expert writes: scene, every described fact,
/// a relation cue and a concluding answer.
pub fn expert_rationale(sample: &VideoSample, answer: &str) -> String {
    format!(
        "The background of the video scene is visible. {} Meanwhile, everything stays in view. Therefore, the answer is {answer}.",
        sample.description.trim()
    )
}

/// Refines every queued candidate with [`expert_rationale`], rotating
/// through a fixed roster of expert ids.
pub struct ScriptedExpert<C: Clock = SteppingClock> {
    scorer: Scorer,
    clock: C,
    experts: Vec<String>,
    next_event: u64,
    /// Maximum refinements per collection; unlimited when `None`.
    pub per_round_limit: Option<usize>,
}

impl ScriptedExpert<SteppingClock> {
    pub fn new(scorer: Scorer, experts: usize) -> Self {
        Self::with_clock(scorer, experts, SteppingClock::default())
    }
}

impl<C: Clock> ScriptedExpert<C> {
    pub fn with_clock(scorer: Scorer, experts: usize, clock: C) -> Self {
        Self {
            scorer,
            clock,
            experts: (1..=experts.max(1)).map(|i| format!("expert-{i}")).collect(),
            next_event: 1,
            per_round_limit: None,
        }
    }

    pub fn refine(&mut self, candidate: &CotCandidate, sample: &VideoSample) -> Result<RefinementEvent> {
        let qa = sample
            .qa(&candidate.qa_id)
            .ok_or_else(|| crate::Error::NotFound(format!("qa pair {}/{}", sample.video_id, candidate.qa_id)))?;
        let text = expert_rationale(sample, &qa.answer);
        let rescored = self.scorer.score_text(&text, candidate.variant, sample)?;
        let id = self.next_event;
        self.next_event += 1;
        Ok(RefinementEvent {
            event_id: id,
            candidate_id: candidate.candidate_id.clone(),
            expert_id: self.experts[(id as usize - 1) % self.experts.len()].clone(),
            original_text: candidate.text.clone(),
            refined_text: text,
            timestamp: self.clock.now(),
            rescored,
            practice: false,
        })
    }
}

impl<C: Clock> RefinementSource for ScriptedExpert<C> {
    fn collect(&mut self, queued: &[(&CotCandidate, &VideoSample)]) -> Result<Vec<RefinementEvent>> {
        let take = self.per_round_limit.unwrap_or(usize::MAX);
        queued.iter().take(take).map(|(c, s)| self.refine(c, s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_sample, CotVariant};

    #[test]
    fn corpus_is_valid_and_deterministic() {
        let a = synthetic_corpus(200, 5);
        assert_eq!(a, synthetic_corpus(200, 5));
        assert_ne!(a, synthetic_corpus(200, 6));
        for s in &a {
            assert!(validate_sample(s).is_empty(), "{}: {:?}", s.video_id, validate_sample(s));
            assert!(s.description.matches('.').count() <= 5);
        }
        assert!(a.iter().any(|s| s.topic.is_some()));
    }

    #[test]
    fn expert_rationale_clears_threshold_without_hallucination() {
        let scorer = Scorer::with_defaults();
        for s in synthetic_corpus(50, 11) {
            for qa in &s.qa_pairs {
                let text = expert_rationale(&s, &qa.answer);
                let score = scorer.score_text(&text, qa.variant(), &s).unwrap();
                assert!(score.mention_report.neg_objects.is_empty(), "{text}: {:?}", score.mention_report);
                assert!(score.mention_report.neg_actions.is_empty(), "{text}: {:?}", score.mention_report);
                assert_eq!((score.spa, score.tem, score.sum), (1.0, 1.0, 1), "{text}");
                if qa.variant() == CotVariant::TopicCot {
                    assert_eq!(score.con, Some(1));
                }
                assert!(score.aggregate >= 0.9, "{text}: {}", score.aggregate);
            }
        }
    }
}
