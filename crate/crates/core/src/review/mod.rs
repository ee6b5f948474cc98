//! Expert review queue backed by an append-only event log.
//!
//! All mutations go through [`ReviewService`], which validates a command
//! against the current [`ReviewState`], appends the resulting event and folds
//! it in. On disk a store directory holds `events.jsonl` and an optional
//! `snapshot.json`; opening the store loads the snapshot and replays the tail.

mod state;

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

pub use state::{CandidateRecord, Claim, ReviewEvent, ReviewState, StoredEntry};

use crate::clock::{Clock, SystemClock};
use crate::error::{Error, Result};
use crate::eventlog::{read_log, CorruptionReport, EventLog};
use crate::model::{CotCandidate, CotVariant, QualityScore, RefinementEvent, VideoSample};
use crate::orchestrator::{RefinementSource, ReviewSink, RoundReport, HISTOGRAM_BUCKETS};
use crate::scoring::{missing_terms, Scorer};

pub const MAX_PAGE_SIZE: usize = 200;
pub const DEFAULT_LEASE_SECONDS: i64 = 900;
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum ClaimState {
    Unclaimed,
    Claimed { expert_id: String, lease_expires: DateTime<Utc> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub video_id: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub candidate_id: String,
    pub sample: SampleSummary,
    pub variant: CotVariant,
    pub text: String,
    pub score: QualityScore,
    pub enqueued_at: DateTime<Utc>,
    pub claim: ClaimState,
}

impl QueueEntry {
    fn from_stored(e: &StoredEntry, now: DateTime<Utc>) -> Self {
        let qa = e.sample.qa(&e.candidate.qa_id).expect("stored entries reference their pair");
        Self {
            candidate_id: e.candidate.candidate_id.clone(),
            sample: SampleSummary {
                video_id: e.sample.video_id.clone(),
                question: qa.question.clone(),
                answer: qa.answer.clone(),
            },
            variant: e.candidate.variant,
            text: e.candidate.text.clone(),
            score: e.candidate.score.clone().expect("queued candidates are scored"),
            enqueued_at: e.enqueued_at,
            claim: match &e.claim {
                Some(c) if c.is_live(now) => {
                    ClaimState::Claimed { expert_id: c.expert_id.clone(), lease_expires: c.lease_expires }
                }
                _ => ClaimState::Unclaimed,
            },
        }
    }

    fn aggregate(&self) -> f64 {
        self.score.aggregate
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueFilter {
    pub variant: Option<CotVariant>,
    pub min_score: Option<f64>,
    pub max_score: Option<f64>,
}

impl QueueFilter {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("min_score", self.min_score), ("max_score", self.max_score)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("{name} {v} outside [0, 1]")));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_score, self.max_score) {
            if lo > hi {
                return Err(Error::invalid(format!("min_score {lo} exceeds max_score {hi}")));
            }
        }
        Ok(())
    }

    fn admits(&self, e: &QueueEntry) -> bool {
        self.variant.is_none_or(|v| v == e.variant)
            && self.min_score.is_none_or(|lo| e.aggregate() >= lo)
            && self.max_score.is_none_or(|hi| e.aggregate() <= hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRequest {
    pub offset: usize,
    pub size: usize,
}

impl Default for PageRequest {
    fn default() -> Self {
        Self { offset: 0, size: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuePage {
    pub entries: Vec<QueueEntry>,
    /// Matching entries across all pages.
    pub total: usize,
    pub offset: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub event: RefinementEvent,
    pub previous: QualityScore,
    pub below_threshold: bool,
    /// Dimensions of the rescored rationale that are not at their maximum.
    pub failing_dimensions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub candidate: CotCandidate,
    pub sample: VideoSample,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue_entry: Option<QueueEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementEvent>,
    pub missing_objects: Vec<String>,
    pub missing_actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub queue_depth: usize,
    pub enqueued: u64,
    pub refined: u64,
    pub removed: u64,
    pub refined_below_threshold: u64,
    pub rounds: Vec<RoundReport>,
    /// Machine acceptances over all generated candidates across rounds.
    pub acceptance_rate: f64,
    /// Sum of the round histograms; its mass equals the candidates scored.
    pub score_histogram: Vec<u64>,
    pub refinements_per_expert: std::collections::BTreeMap<String, u64>,
}

impl Stats {
    pub fn from_state(s: &ReviewState) -> Self {
        let mut hist = vec![0u64; HISTOGRAM_BUCKETS];
        let (mut generated, mut accepted) = (0usize, 0usize);
        for r in &s.rounds {
            generated += r.generated;
            accepted += r.accepted;
            for (h, c) in hist.iter_mut().zip(&r.score_histogram) {
                *h += c;
            }
        }
        Self {
            queue_depth: s.queue.len(),
            enqueued: s.enqueued,
            refined: s.refined,
            removed: s.removed,
            refined_below_threshold: s.refined_below_threshold,
            rounds: s.rounds.clone(),
            acceptance_rate: if generated == 0 { 0.0 } else { accepted as f64 / generated as f64 },
            score_histogram: hist,
            refinements_per_expert: s.per_expert.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub crc: u32,
    pub state: ReviewState,
}

impl Snapshot {
    pub fn of(state: &ReviewState) -> Result<Self> {
        Ok(Self { seq: state.seq, crc: state_crc(state)?, state: state.clone() })
    }

    pub fn verify(&self) -> bool {
        self.seq == self.state.seq && state_crc(&self.state).is_ok_and(|c| c == self.crc)
    }
}

fn state_crc(state: &ReviewState) -> Result<u32> {
    Ok(crc32fast::hash(&serde_json::to_vec(state)?))
}

/// Outcome of rebuilding state from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub state: ReviewState,
    /// Sequence number of the snapshot used, if any.
    pub snapshot_seq: Option<u64>,
    pub corruption: Option<CorruptionReport>,
}

/// Rebuilds state from the snapshot (when valid) plus the log tail.
pub fn reconstruct(dir: &Path) -> Result<Reconstruction> {
    let read = read_log::<ReviewEvent>(&dir.join(EVENTS_FILE))?;
    let snapshot = load_snapshot(&dir.join(SNAPSHOT_FILE))?.filter(|s| {
        let usable = s.seq <= read.events.len() as u64;
        if !usable {
            tracing::warn!(snapshot_seq = s.seq, log_len = read.events.len(), "snapshot ahead of the valid log; ignoring it");
        }
        usable
    });
    let (mut state, snapshot_seq) = match snapshot {
        Some(s) => {
            let seq = s.seq;
            (s.state, Some(seq))
        }
        None => (ReviewState::default(), None),
    };
    for e in &read.events[state.seq as usize..] {
        state.apply(e)?;
    }
    if let Some(c) = &read.corruption {
        tracing::warn!(line = c.line, reason = %c.reason, "review log corrupted; state reflects the valid prefix");
    }
    Ok(Reconstruction { state, snapshot_seq, corruption: read.corruption })
}

fn load_snapshot(path: &Path) -> Result<Option<Snapshot>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    match serde_json::from_str::<Snapshot>(&text) {
        Ok(s) if s.verify() => Ok(Some(s)),
        Ok(_) | Err(_) => {
            tracing::warn!(path = %path.display(), "snapshot failed verification; replaying the full log");
            Ok(None)
        }
    }
}

pub struct ReviewService<C: Clock = SystemClock> {
    state: ReviewState,
    scorer: Scorer,
    clock: C,
    dir: Option<PathBuf>,
    log: Option<EventLog<ReviewEvent>>,
    snapshot_every: Option<u64>,
    /// Set when opening found a damaged log.
    corruption: Option<CorruptionReport>,
}

impl<C: Clock> std::fmt::Debug for ReviewService<C> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewService")
            .field("dir", &self.dir)
            .field("seq", &self.state.seq)
            .field("queue_depth", &self.state.queue.len())
            .finish_non_exhaustive()
    }
}

impl<C: Clock> ReviewService<C> {
    /// Store with no persistence.
    pub fn in_memory(scorer: Scorer, clock: C) -> Self {
        Self {
            state: ReviewState::default(),
            scorer,
            clock,
            dir: None,
            log: None,
            snapshot_every: None,
            corruption: None,
        }
    }

    /// Opens or creates the store in `dir`. A corrupted log tail is reported
    /// and cut off; the service continues from the last valid record.
    pub fn open(dir: &Path, scorer: Scorer, clock: C, snapshot_every: Option<u64>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rec = reconstruct(dir)?;
        let (log, _) = EventLog::<ReviewEvent>::open(&dir.join(EVENTS_FILE))?;
        Ok(Self {
            state: rec.state,
            scorer,
            clock,
            dir: Some(dir.to_path_buf()),
            log: Some(log),
            snapshot_every: snapshot_every.filter(|n| *n > 0),
            corruption: rec.corruption,
        })
    }

    pub fn state(&self) -> &ReviewState {
        &self.state
    }

    pub fn scorer(&self) -> &Scorer {
        &self.scorer
    }

    pub fn corruption(&self) -> Option<&CorruptionReport> {
        self.corruption.as_ref()
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn commit(&mut self, event: ReviewEvent) -> Result<()> {
        self.state.apply(&event)?;
        if let Some(log) = &mut self.log {
            if let Err(e) = log.append(&event) {
                let dir = self.dir.clone().expect("persistent stores have a directory");
                self.state = reconstruct(&dir)?.state;
                return Err(e);
            }
        }
        if let Some(n) = self.snapshot_every {
            if self.state.seq.is_multiple_of(n) {
                self.snapshot()?;
            }
        }
        Ok(())
    }

    /// Writes `snapshot.json` for the current state.
    pub fn snapshot(&self) -> Result<Option<u64>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let snap = Snapshot::of(&self.state)?;
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let path = dir.join(SNAPSHOT_FILE);
        fs::write(&tmp, serde_json::to_vec(&snap)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(snap.seq))
    }

    pub fn enqueue(&mut self, candidate: CotCandidate, sample: VideoSample) -> Result<()> {
        let at = self.clock.now();
        self.commit(ReviewEvent::Enqueued { candidate, sample, at })
    }

    pub fn record_round(&mut self, report: RoundReport) -> Result<()> {
        self.commit(ReviewEvent::RoundCompleted { report })
    }

    pub fn list_queue(&self, filter: &QueueFilter, page: PageRequest) -> Result<QueuePage> {
        if !(1..=MAX_PAGE_SIZE).contains(&page.size) {
            return Err(Error::invalid(format!("page size {} outside [1, {MAX_PAGE_SIZE}]", page.size)));
        }
        filter.validate()?;
        let now = self.clock.now();
        let mut all: Vec<QueueEntry> = self
            .state
            .queue
            .values()
            .map(|e| QueueEntry::from_stored(e, now))
            .filter(|e| filter.admits(e))
            .collect();
        all.sort_by(|a, b| a.aggregate().total_cmp(&b.aggregate()).then_with(|| a.candidate_id.cmp(&b.candidate_id)));
        let total = all.len();
        let entries: Vec<QueueEntry> = all.into_iter().skip(page.offset).take(page.size).collect();
        let end = page.offset + entries.len();
        Ok(QueuePage { entries, total, offset: page.offset, next_offset: (end < total).then_some(end) })
    }

    pub fn claim(&mut self, candidate_id: &str, expert_id: &str, lease_seconds: i64) -> Result<QueueEntry> {
        if expert_id.trim().is_empty() {
            return Err(Error::invalid("expert id empty"));
        }
        if lease_seconds <= 0 {
            return Err(Error::invalid("lease_seconds must be positive"));
        }
        let at = self.clock.now();
        self.commit(ReviewEvent::Claimed {
            candidate_id: candidate_id.into(),
            expert_id: expert_id.into(),
            at,
            lease_expires: at + Duration::seconds(lease_seconds),
        })?;
        Ok(QueueEntry::from_stored(&self.state.queue[candidate_id], at))
    }

    pub fn submit_refinement(
        &mut self,
        candidate_id: &str,
        expert_id: &str,
        refined_text: &str,
        practice: bool,
    ) -> Result<SubmitOutcome> {
        let now = self.clock.now();
        let entry = self.state.queue.get(candidate_id).ok_or_else(|| Error::NotFound(format!("queue entry {candidate_id}")))?;
        match &entry.claim {
            Some(c) if c.expert_id == expert_id && c.is_live(now) => {}
            Some(c) if c.expert_id == expert_id => {
                return Err(Error::Conflict(format!("lease on {candidate_id} expired at {}", c.lease_expires)))
            }
            _ => return Err(Error::Forbidden(format!("{expert_id} has not claimed {candidate_id}"))),
        }
        if refined_text.trim().is_empty() {
            return Err(Error::invalid("refined text empty"));
        }
        if refined_text == entry.candidate.text {
            return Err(Error::invalid("refined text identical to the original"));
        }
        let rescored = self.scorer.score_text(refined_text, entry.candidate.variant, &entry.sample)?;
        let below = rescored.aggregate < self.scorer.config().threshold;
        let failing = failing_dimensions(&rescored);
        let event = RefinementEvent {
            event_id: self.state.refined + 1,
            candidate_id: candidate_id.into(),
            expert_id: expert_id.into(),
            original_text: entry.candidate.text.clone(),
            refined_text: refined_text.into(),
            timestamp: now,
            rescored,
            practice,
        };
        let previous = entry.candidate.score.clone().expect("queued candidates are scored");
        self.commit(ReviewEvent::Refined { event: event.clone(), below_threshold: below })?;
        Ok(SubmitOutcome { event, previous, below_threshold: below, failing_dimensions: failing })
    }

    pub fn remove(&mut self, candidate_id: &str, reason: &str) -> Result<()> {
        let at = self.clock.now();
        self.commit(ReviewEvent::Removed { candidate_id: candidate_id.into(), reason: reason.into(), at })
    }

    pub fn stats(&self) -> Stats {
        Stats::from_state(&self.state)
    }

    pub fn get_candidate(&self, candidate_id: &str) -> Result<CandidateView> {
        let rec = self
            .state
            .candidates
            .get(candidate_id)
            .ok_or_else(|| Error::NotFound(format!("candidate {candidate_id}")))?;
        let report = rec.candidate.score.as_ref().map(|s| s.mention_report.clone()).unwrap_or_default();
        let g = &rec.sample.grounding;
        Ok(CandidateView {
            candidate: rec.candidate.clone(),
            sample: rec.sample.clone(),
            queue_entry: self.state.queue.get(candidate_id).map(|e| QueueEntry::from_stored(e, self.clock.now())),
            refinement: rec.refinement.clone(),
            missing_objects: missing_terms(&report, &g.objects, true).into_iter().map(String::from).collect(),
            missing_actions: missing_terms(&report, &g.actions, false).into_iter().map(String::from).collect(),
        })
    }

    /// Refinements recorded by the store, in log order.
    pub fn refinements(&self) -> impl Iterator<Item = &RefinementEvent> {
        self.state.candidates.values().filter_map(|r| r.refinement.as_ref())
    }
}

/// Names of dimensions below their maximum value.
pub fn failing_dimensions(s: &QualityScore) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |name: &str, v: Option<f64>| {
        if v.is_some_and(|v| v < 1.0) {
            out.push(name.to_string());
        }
    };
    check("bac", s.bac.map(f64::from));
    check("tem", Some(s.tem));
    check("spa", Some(s.spa));
    check("rel", s.rel.map(f64::from));
    check("sum", Some(f64::from(s.sum)));
    check("con", s.con.map(f64::from));
    out
}

impl<C: Clock> ReviewSink for ReviewService<C> {
    fn enqueue(&mut self, candidate: &CotCandidate, sample: &VideoSample) -> Result<()> {
        ReviewService::enqueue(self, candidate.clone(), sample.clone())
    }

    fn round_completed(&mut self, report: &RoundReport) -> Result<()> {
        self.record_round(report.clone())
    }
}

/// Pulls refinements the store holds for candidates the pool still has queued.
impl<C: Clock> RefinementSource for ReviewService<C> {
    fn collect(&mut self, queued: &[(&CotCandidate, &VideoSample)]) -> Result<Vec<RefinementEvent>> {
        Ok(queued
            .iter()
            .filter_map(|(c, _)| self.state.candidates.get(&c.candidate_id)?.refinement.clone())
            .collect())
    }
}
