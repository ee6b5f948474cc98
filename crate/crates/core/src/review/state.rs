//! Review store state as a pure fold over [`ReviewEvent`]s.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CotCandidate, CotStatus, RefinementEvent, VideoSample};
use crate::orchestrator::{RoundReport, HISTOGRAM_BUCKETS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ReviewEvent {
    Enqueued {
        candidate: CotCandidate,
        sample: VideoSample,
        at: DateTime<Utc>,
    },
    Claimed {
        candidate_id: String,
        expert_id: String,
        at: DateTime<Utc>,
        lease_expires: DateTime<Utc>,
    },
    Refined {
        event: RefinementEvent,
        below_threshold: bool,
    },
    /// Administrative removal without refinement.
    Removed {
        candidate_id: String,
        reason: String,
        at: DateTime<Utc>,
    },
    RoundCompleted {
        report: RoundReport,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub expert_id: String,
    pub lease_expires: DateTime<Utc>,
}

impl Claim {
    pub fn is_live(&self, now: DateTime<Utc>) -> bool {
        self.lease_expires > now
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEntry {
    pub candidate: CotCandidate,
    pub sample: VideoSample,
    pub enqueued_at: DateTime<Utc>,
    pub claim: Option<Claim>,
}

/// Every candidate the store has seen, with its latest known form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub candidate: CotCandidate,
    pub sample: VideoSample,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewState {
    pub queue: BTreeMap<String, StoredEntry>,
    pub candidates: BTreeMap<String, CandidateRecord>,
    pub rounds: Vec<RoundReport>,
    pub per_expert: BTreeMap<String, u64>,
    pub enqueued: u64,
    pub refined: u64,
    pub removed: u64,
    pub refined_below_threshold: u64,
    /// Events folded so far.
    pub seq: u64,
}


impl ReviewState {
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a ReviewEvent>) -> Result<Self> {
        let mut s = Self::default();
        for e in events {
            s.apply(e)?;
        }
        Ok(s)
    }

    fn entry(&self, id: &str) -> Result<&StoredEntry> {
        self.queue.get(id).ok_or_else(|| Error::NotFound(format!("queue entry {id}")))
    }

    /// Checks `event` against the state and folds it in; on error nothing changes.
    pub fn apply(&mut self, event: &ReviewEvent) -> Result<()> {
        match event {
            ReviewEvent::Enqueued { candidate, sample, at } => {
                if self.candidates.contains_key(&candidate.candidate_id) {
                    return Err(Error::Conflict(format!("candidate {} already enqueued", candidate.candidate_id)));
                }
                if candidate.status != CotStatus::QueuedForExpert || candidate.score.is_none() {
                    return Err(Error::invalid(format!(
                        "candidate {} must be scored and queued_for_expert",
                        candidate.candidate_id
                    )));
                }
                if candidate.video_id != sample.video_id || sample.qa(&candidate.qa_id).is_none() {
                    return Err(Error::invalid(format!(
                        "candidate {} does not belong to sample {}",
                        candidate.candidate_id, sample.video_id
                    )));
                }
                self.queue.insert(
                    candidate.candidate_id.clone(),
                    StoredEntry { candidate: candidate.clone(), sample: sample.clone(), enqueued_at: *at, claim: None },
                );
                self.candidates.insert(
                    candidate.candidate_id.clone(),
                    CandidateRecord { candidate: candidate.clone(), sample: sample.clone(), refinement: None, removed: None },
                );
                self.enqueued += 1;
            }
            ReviewEvent::Claimed { candidate_id, expert_id, at, lease_expires } => {
                let e = self.entry(candidate_id)?;
                if let Some(c) = e.claim.as_ref().filter(|c| c.is_live(*at)) {
                    return Err(Error::Conflict(format!(
                        "candidate {candidate_id} claimed by {} until {}",
                        c.expert_id, c.lease_expires
                    )));
                }
                if lease_expires <= at {
                    return Err(Error::invalid("lease must end after it starts"));
                }
                self.queue.get_mut(candidate_id).expect("checked").claim =
                    Some(Claim { expert_id: expert_id.clone(), lease_expires: *lease_expires });
            }
            ReviewEvent::Refined { event, below_threshold } => {
                let e = self.entry(&event.candidate_id)?;
                match &e.claim {
                    Some(c) if c.expert_id == event.expert_id && c.is_live(event.timestamp) => {}
                    _ => {
                        return Err(Error::Forbidden(format!(
                            "{} holds no live claim on {}",
                            event.expert_id, event.candidate_id
                        )))
                    }
                }
                self.queue.remove(&event.candidate_id);
                let rec = self.candidates.get_mut(&event.candidate_id).expect("queued implies known");
                let c = &mut rec.candidate;
                c.text = event.refined_text.clone();
                c.score = Some(event.rescored.clone());
                c.status = CotStatus::Accepted;
                rec.refinement = Some(event.clone());
                *self.per_expert.entry(event.expert_id.clone()).or_default() += 1;
                self.refined += 1;
                if *below_threshold {
                    self.refined_below_threshold += 1;
                }
            }
            ReviewEvent::Removed { candidate_id, reason, .. } => {
                self.entry(candidate_id)?;
                self.queue.remove(candidate_id);
                self.candidates.get_mut(candidate_id).expect("queued implies known").removed = Some(reason.clone());
                self.removed += 1;
            }
            ReviewEvent::RoundCompleted { report } => {
                if report.score_histogram.len() != HISTOGRAM_BUCKETS {
                    return Err(Error::invalid("round histogram has the wrong number of buckets"));
                }
                self.rounds.push(report.clone());
            }
        }
        self.seq += 1;
        Ok(())
    }
}
