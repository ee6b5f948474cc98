//! Dataset pool as a fold over [`PoolEvent`]s.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::RoundReport;
use crate::error::{Error, Result};
use crate::model::{validate_sample, CotCandidate, CotStatus, QaPair, RefinementEvent, VideoSample};
use crate::provider::{ProviderError, TrainingPair};
use crate::scoring::Route;

/// `(video_id, qa_id)`
pub type PairKey = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum PoolEvent {
    SampleAdded {
        sample: VideoSample,
    },
    /// A generated candidate together with its score.
    CandidateScored {
        candidate: CotCandidate,
        retries: u32,
    },
    CandidateRouted {
        candidate_id: String,
        route: Route,
    },
    GenerationFailed {
        video_id: String,
        qa_id: String,
        round: u32,
        error: ProviderError,
        retries: u32,
    },
    RefinementIngested {
        event: RefinementEvent,
    },
    /// The oldest `count` untrained pairs were handed to the prompt generator.
    TrainingFlushed {
        count: usize,
    },
    RoundCompleted {
        report: RoundReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub round: u32,
    pub error: ProviderError,
    pub retries: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pool {
    samples: BTreeMap<String, VideoSample>,
    candidates: BTreeMap<String, CotCandidate>,
    accepted: BTreeMap<PairKey, String>,
    queued: BTreeMap<PairKey, String>,
    failures: BTreeMap<PairKey, FailureRecord>,
    refined: BTreeSet<String>,
    training: Vec<TrainingPair>,
    untrained: usize,
    update_calls: u64,
    rounds: Vec<RoundReport>,
    events_applied: u64,
}

fn key(video_id: &str, qa_id: &str) -> PairKey {
    (video_id.to_string(), qa_id.to_string())
}

impl Pool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a pool from its full event history.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a PoolEvent>) -> Result<Self> {
        let mut pool = Self::new();
        for e in events {
            pool.apply(e)?;
        }
        Ok(pool)
    }

    /// The training pairs sent by each successful prompt-generator update, in order.
    pub fn flushed_batches<'a>(events: impl IntoIterator<Item = &'a PoolEvent>) -> Result<Vec<Vec<TrainingPair>>> {
        let mut pool = Self::new();
        let mut out = Vec::new();
        for e in events {
            pool.apply(e)?;
            if let PoolEvent::TrainingFlushed { count } = e {
                out.push(pool.training[pool.training.len() - count..].to_vec());
            }
        }
        Ok(out)
    }

    /// Validates `event` against the current state and folds it in. On error
    /// the pool is unchanged.
    pub fn apply(&mut self, event: &PoolEvent) -> Result<()> {
        match event {
            PoolEvent::SampleAdded { sample } => {
                let violations = validate_sample(sample);
                if !violations.is_empty() {
                    let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
                    return Err(Error::invalid(format!("sample {}: {}", sample.video_id, list.join("; "))));
                }
                if self.samples.contains_key(&sample.video_id) {
                    return Err(Error::Conflict(format!("sample {} already in pool", sample.video_id)));
                }
                self.samples.insert(sample.video_id.clone(), sample.clone());
            }
            PoolEvent::CandidateScored { candidate, .. } => {
                self.qa(&candidate.video_id, &candidate.qa_id)?;
                if self.candidates.contains_key(&candidate.candidate_id) {
                    return Err(Error::Conflict(format!("candidate {} already exists", candidate.candidate_id)));
                }
                if candidate.status != CotStatus::Scored || candidate.score.is_none() {
                    return Err(Error::invalid(format!("candidate {} is not scored", candidate.candidate_id)));
                }
                let k = key(&candidate.video_id, &candidate.qa_id);
                self.check_eligible(&k)?;
                self.failures.remove(&k);
                self.candidates.insert(candidate.candidate_id.clone(), candidate.clone());
            }
            PoolEvent::CandidateRouted { candidate_id, route } => {
                let c = self.candidate_mut(candidate_id)?;
                let next = match route {
                    Route::Accept => CotStatus::Accepted,
                    Route::ExpertQueue => CotStatus::QueuedForExpert,
                };
                c.transition(next)?;
                let k = key(&c.video_id, &c.qa_id);
                match route {
                    Route::Accept => self.accepted.insert(k, candidate_id.clone()),
                    Route::ExpertQueue => self.queued.insert(k, candidate_id.clone()),
                };
            }
            PoolEvent::GenerationFailed { video_id, qa_id, round, error, retries } => {
                self.qa(video_id, qa_id)?;
                let k = key(video_id, qa_id);
                self.check_eligible(&k)?;
                self.failures.insert(k, FailureRecord { round: *round, error: error.clone(), retries: *retries });
            }
            PoolEvent::RefinementIngested { event } => {
                let c = self.candidates.get(&event.candidate_id).ok_or_else(|| {
                    Error::NotFound(format!("candidate {}", event.candidate_id))
                })?;
                if c.status != CotStatus::QueuedForExpert {
                    return Err(Error::IllegalTransition {
                        candidate_id: c.candidate_id.clone(),
                        from: c.status,
                        to: CotStatus::Refined,
                    });
                }
                let sample = &self.samples[&c.video_id];
                let qa = sample.qa(&c.qa_id).expect("candidate references a known pair");
                let pair = TrainingPair {
                    video_id: sample.video_id.clone(),
                    qa_id: qa.qa_id.clone(),
                    description: sample.description.clone(),
                    question: qa.question.clone(),
                    answer: qa.answer.clone(),
                    refined_cot: event.refined_text.clone(),
                };
                let c = self.candidates.get_mut(&event.candidate_id).expect("checked above");
                c.text = event.refined_text.clone();
                c.score = Some(event.rescored.clone());
                c.transition(CotStatus::Refined)?;
                c.transition(CotStatus::Accepted)?;
                let k = key(&c.video_id, &c.qa_id);
                self.queued.remove(&k);
                self.accepted.insert(k, event.candidate_id.clone());
                self.refined.insert(event.candidate_id.clone());
                if !event.practice {
                    self.training.push(pair);
                    self.untrained += 1;
                }
            }
            PoolEvent::TrainingFlushed { count } => {
                if *count != self.untrained || *count == 0 {
                    return Err(Error::invalid(format!(
                        "flush of {count} pairs but {} are untrained",
                        self.untrained
                    )));
                }
                self.untrained = 0;
                self.update_calls += 1;
            }
            PoolEvent::RoundCompleted { report } => {
                let expected = self.rounds.len() as u32 + 1;
                if report.round != expected {
                    return Err(Error::invalid(format!("round {} completed, expected {expected}", report.round)));
                }
                self.rounds.push(report.clone());
            }
        }
        self.events_applied += 1;
        Ok(())
    }

    fn qa(&self, video_id: &str, qa_id: &str) -> Result<&QaPair> {
        self.samples
            .get(video_id)
            .and_then(|s| s.qa(qa_id))
            .ok_or_else(|| Error::NotFound(format!("qa pair {video_id}/{qa_id}")))
    }

    fn check_eligible(&self, k: &PairKey) -> Result<()> {
        if self.accepted.contains_key(k) || self.queued.contains_key(k) {
            return Err(Error::Conflict(format!("qa pair {}/{} is not awaiting generation", k.0, k.1)));
        }
        Ok(())
    }

    fn candidate_mut(&mut self, id: &str) -> Result<&mut CotCandidate> {
        self.candidates.get_mut(id).ok_or_else(|| Error::NotFound(format!("candidate {id}")))
    }

    pub fn samples(&self) -> impl Iterator<Item = &VideoSample> {
        self.samples.values()
    }

    pub fn sample(&self, video_id: &str) -> Option<&VideoSample> {
        self.samples.get(video_id)
    }

    pub fn candidate(&self, id: &str) -> Option<&CotCandidate> {
        self.candidates.get(id)
    }

    pub fn candidates(&self) -> impl Iterator<Item = &CotCandidate> {
        self.candidates.values()
    }

    pub fn all_pairs(&self) -> impl Iterator<Item = PairKey> + '_ {
        self.samples.values().flat_map(|s| s.qa_pairs.iter().map(move |q| key(&s.video_id, &q.qa_id)))
    }

    pub fn pair_count(&self) -> usize {
        self.samples.values().map(|s| s.qa_pairs.len()).sum()
    }

    /// Pairs without an accepted rationale, including those awaiting review.
    pub fn pending(&self) -> Vec<PairKey> {
        self.all_pairs().filter(|k| !self.accepted.contains_key(k)).collect()
    }

    /// Pending pairs not held by the review queue, in key order.
    pub fn eligible(&self) -> Vec<PairKey> {
        self.all_pairs().filter(|k| !self.accepted.contains_key(k) && !self.queued.contains_key(k)).collect()
    }

    /// Accepted candidate per pair.
    pub fn accepted(&self) -> &BTreeMap<PairKey, String> {
        &self.accepted
    }

    /// Candidate awaiting review per pair.
    pub fn queued(&self) -> &BTreeMap<PairKey, String> {
        &self.queued
    }

    /// Last failure of pairs still waiting for a successful generation.
    pub fn failures(&self) -> &BTreeMap<PairKey, FailureRecord> {
        &self.failures
    }

    pub fn training_set(&self) -> &[TrainingPair] {
        &self.training
    }

    /// Training pairs not yet sent to the prompt generator.
    pub fn untrained(&self) -> &[TrainingPair] {
        &self.training[self.training.len() - self.untrained..]
    }

    pub fn update_calls(&self) -> u64 {
        self.update_calls
    }

    pub fn rounds(&self) -> &[RoundReport] {
        &self.rounds
    }

    pub fn events_applied(&self) -> u64 {
        self.events_applied
    }

    /// Whether an expert refinement of `candidate_id` has been ingested.
    pub fn is_refined(&self, candidate_id: &str) -> bool {
        self.refined.contains(candidate_id)
    }
}
