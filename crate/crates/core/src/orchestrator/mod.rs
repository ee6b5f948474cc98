//! The active-learning loop: generate, score, route, learn from refinements.
//!
//! Every state change is a [`PoolEvent`] applied to the [`Pool`] by a single
//! writer. Generation and scoring of a round's batch may run on several
//! threads, but results are applied in pair-key order, so the event log of a
//! run depends only on inputs and seeds.

mod pool;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

pub use pool::{FailureRecord, PairKey, Pool, PoolEvent};

use crate::error::{Error, Result};
use crate::eventlog::EventLog;
use crate::model::{CotCandidate, CotStatus, QaPair, QualityScore, RefinementEvent, VideoSample};
use crate::provider::{ProviderError, ProviderSet, UpdateAck};
use crate::scoring::{Route, Scorer};

pub const HISTOGRAM_BUCKETS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub generated: usize,
    pub accepted: usize,
    pub queued: usize,
    /// Pairs whose generation failed after retries; they stay pending.
    pub failed: usize,
    pub mean_score: f64,
    /// Counts of aggregate scores in `[k/10, (k+1)/10)`, the last bucket closed.
    pub score_histogram: Vec<u64>,
}

impl RoundReport {
    pub fn empty(round: u32) -> Self {
        Self {
            round,
            generated: 0,
            accepted: 0,
            queued: 0,
            failed: 0,
            mean_score: 0.0,
            score_histogram: vec![0; HISTOGRAM_BUCKETS],
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.accepted as f64 / self.generated as f64
        }
    }
}

pub fn histogram_bucket(score: f64) -> usize {
    ((score * HISTOGRAM_BUCKETS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BUCKETS - 1)
}

/// When accumulated refinements are sent to the prompt generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "cadence")]
pub enum UpdateCadence {
    /// After every refinement.
    Immediate,
    /// Whenever `size` refinements have accumulated.
    Batch { size: usize },
    /// At the start of each round.
    #[default]
    PerRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Pairs generated per round; all eligible pairs when unset.
    pub batch_size: Option<usize>,
    pub parallelism: usize,
    pub cadence: UpdateCadence,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { batch_size: None, parallelism: 1, cadence: UpdateCadence::PerRound }
    }
}

/// Scores and routes candidates. [`Scorer`] is the production implementation.
pub trait CandidateScorer: Send + Sync {
    fn score(&self, candidate: &CotCandidate, sample: &VideoSample) -> Result<QualityScore>;
    fn route(&self, aggregate: f64) -> Result<Route>;
}

impl CandidateScorer for Scorer {
    fn score(&self, candidate: &CotCandidate, sample: &VideoSample) -> Result<QualityScore> {
        self.score_candidate(candidate, sample)
    }
    fn route(&self, aggregate: f64) -> Result<Route> {
        Scorer::route(self, aggregate)
    }
}

/// Receives candidates routed to experts.
pub trait ReviewSink {
    fn enqueue(&mut self, candidate: &CotCandidate, sample: &VideoSample) -> Result<()>;

    fn round_completed(&mut self, _report: &RoundReport) -> Result<()> {
        Ok(())
    }
}

impl ReviewSink for Vec<CotCandidate> {
    fn enqueue(&mut self, candidate: &CotCandidate, _sample: &VideoSample) -> Result<()> {
        self.push(candidate.clone());
        Ok(())
    }
}

/// Supplies expert refinements between rounds.
pub trait RefinementSource {
    fn collect(&mut self, queued: &[(&CotCandidate, &VideoSample)]) -> Result<Vec<RefinementEvent>>;
}

/// A source that never refines anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoRefinements;

impl RefinementSource for NoRefinements {
    fn collect(&mut self, _queued: &[(&CotCandidate, &VideoSample)]) -> Result<Vec<RefinementEvent>> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenerationOutcome {
    Generated { candidate: CotCandidate, retries: u32 },
    Failed { error: ProviderError, retries: u32 },
}

pub fn candidate_id(video_id: &str, qa_id: &str, round: u32) -> String {
    format!("{video_id}:{qa_id}:r{round}")
}

/// Produces one unscored candidate for `qa`, retrying each provider call.
pub fn generate_candidate(sample: &VideoSample, qa: &QaPair, providers: &ProviderSet, round: u32) -> GenerationOutcome {
    let p = providers.retry.run(|| providers.prompt.summarize(&sample.description, &qa.question, &qa.answer));
    let mut retries = p.retries;
    let prompt = match p.result {
        Ok(v) => v,
        Err(error) => return GenerationOutcome::Failed { error, retries },
    };
    let g = providers.retry.run(|| providers.cot.generate(&prompt));
    retries += g.retries;
    match g.result {
        Ok(text) => GenerationOutcome::Generated {
            candidate: CotCandidate {
                candidate_id: candidate_id(&sample.video_id, &qa.qa_id, round),
                video_id: sample.video_id.clone(),
                qa_id: qa.qa_id.clone(),
                text,
                variant: qa.variant(),
                score: None,
                status: CotStatus::Generated,
                round,
                prompt_used: prompt,
            },
            retries,
        },
        Err(error) => GenerationOutcome::Failed { error, retries },
    }
}

/// Maps `f` over `items` on up to `parallelism` threads, preserving order.
pub fn par_map<T: Sync, R: Send>(items: &[T], parallelism: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().expect("slot poisoned") = Some(f(item));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot poisoned").expect("every slot filled")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementAck {
    pub candidate_id: String,
    pub training_set_size: usize,
    /// Present when this refinement triggered a prompt-generator update.
    pub update: Option<std::result::Result<UpdateAck, ProviderError>>,
}

pub struct Orchestrator<S: CandidateScorer = Scorer> {
    pool: Pool,
    providers: ProviderSet,
    scorer: S,
    config: LoopConfig,
    events: Vec<PoolEvent>,
    log: Option<EventLog<PoolEvent>>,
}

impl<S: CandidateScorer> std::fmt::Debug for Orchestrator<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("config", &self.config)
            .field("events", &self.events.len())
            .finish_non_exhaustive()
    }
}

enum Processed {
    Scored { candidate: CotCandidate, retries: u32, route: Route },
    Failed { key: PairKey, error: ProviderError, retries: u32 },
}

impl<S: CandidateScorer> Orchestrator<S> {
    pub fn new(providers: ProviderSet, scorer: S, config: LoopConfig) -> Self {
        Self { pool: Pool::new(), providers, scorer, config, events: Vec::new(), log: None }
    }

    /// Resumes from an existing history; new events are appended to `log`.
    pub fn resume(
        providers: ProviderSet,
        scorer: S,
        config: LoopConfig,
        history: Vec<PoolEvent>,
        log: Option<EventLog<PoolEvent>>,
    ) -> Result<Self> {
        let pool = Pool::replay(&history)?;
        Ok(Self { pool, providers, scorer, config, events: history, log })
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn events(&self) -> &[PoolEvent] {
        &self.events
    }

    pub fn providers(&self) -> &ProviderSet {
        &self.providers
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn scorer(&self) -> &S {
        &self.scorer
    }

    fn emit(&mut self, event: PoolEvent) -> Result<()> {
        self.pool.apply(&event)?;
        if let Some(log) = &mut self.log {
            log.append(&event)?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn add_sample(&mut self, sample: VideoSample) -> Result<()> {
        self.emit(PoolEvent::SampleAdded { sample })
    }

    /// Re-sends every past update to the prompt generator, restoring the
    /// state of a stateful local generator after a resume. Nothing is logged.
    pub fn restore_prompt_state(&mut self) -> Result<usize> {
        let batches = Pool::flushed_batches(&self.events)?;
        for b in &batches {
            self.providers.prompt.update(b)?;
        }
        Ok(batches.len())
    }

    /// Sends untrained refinement pairs to the prompt generator.
    pub fn flush_training(&mut self) -> Result<Option<std::result::Result<UpdateAck, ProviderError>>> {
        let pairs = self.pool.untrained().to_vec();
        if pairs.is_empty() {
            return Ok(None);
        }
        let r = self.providers.prompt.update(&pairs);
        match &r {
            Ok(_) => self.emit(PoolEvent::TrainingFlushed { count: pairs.len() })?,
            Err(e) => tracing::warn!(error = %e, pairs = pairs.len(), "prompt generator update failed; pairs kept"),
        }
        Ok(Some(r))
    }

    /// Generates, scores and routes one batch of eligible pairs.
    pub fn run_round(&mut self, sink: &mut dyn ReviewSink) -> Result<RoundReport> {
        let eligible = self.pool.eligible();
        if eligible.is_empty() {
            return Err(Error::NothingToDo(if self.pool.pending().is_empty() {
                "no pending qa pairs".into()
            } else {
                "every pending qa pair is awaiting expert review".into()
            }));
        }
        if self.config.cadence == UpdateCadence::PerRound {
            self.flush_training()?;
        }
        let round = self.pool.rounds().len() as u32 + 1;
        let batch: Vec<PairKey> = match self.config.batch_size {
            Some(n) => eligible.into_iter().take(n.max(1)).collect(),
            None => eligible,
        };

        let processed = {
            let (pool, providers, scorer) = (&self.pool, &self.providers, &self.scorer);
            par_map(&batch, self.config.parallelism, |k| -> Result<Processed> {
                let sample = pool.sample(&k.0).expect("eligible pairs reference pool samples");
                let qa = sample.qa(&k.1).expect("eligible pairs reference pool pairs");
                match generate_candidate(sample, qa, providers, round) {
                    GenerationOutcome::Failed { error, retries } => {
                        Ok(Processed::Failed { key: k.clone(), error, retries })
                    }
                    GenerationOutcome::Generated { mut candidate, retries } => {
                        let score = scorer.score(&candidate, sample)?;
                        let route = scorer.route(score.aggregate)?;
                        candidate.mark_scored(score)?;
                        Ok(Processed::Scored { candidate, retries, route })
                    }
                }
            })
        };
        let processed: Vec<Processed> = processed.into_iter().collect::<Result<_>>()?;

        let mut report = RoundReport::empty(round);
        let mut total = 0.0;
        for p in processed {
            match p {
                Processed::Failed { key, error, retries } => {
                    tracing::warn!(video_id = %key.0, qa_id = %key.1, error = %error, retries, "generation failed");
                    report.failed += 1;
                    self.emit(PoolEvent::GenerationFailed { video_id: key.0, qa_id: key.1, round, error, retries })?;
                }
                Processed::Scored { candidate, retries, route } => {
                    let aggregate = candidate.score.as_ref().expect("scored").aggregate;
                    report.generated += 1;
                    total += aggregate;
                    report.score_histogram[histogram_bucket(aggregate)] += 1;
                    let id = candidate.candidate_id.clone();
                    self.emit(PoolEvent::CandidateScored { candidate, retries })?;
                    self.emit(PoolEvent::CandidateRouted { candidate_id: id.clone(), route })?;
                    match route {
                        Route::Accept => report.accepted += 1,
                        Route::ExpertQueue => {
                            report.queued += 1;
                            let c = self.pool.candidate(&id).expect("just added");
                            let s = self.pool.sample(&c.video_id).expect("known sample");
                            sink.enqueue(c, s)?;
                        }
                    }
                }
            }
        }
        if report.generated > 0 {
            report.mean_score = total / report.generated as f64;
        }
        tracing::info!(
            round,
            generated = report.generated,
            accepted = report.accepted,
            queued = report.queued,
            failed = report.failed,
            mean_score = report.mean_score,
            "round complete"
        );
        self.emit(PoolEvent::RoundCompleted { report: report.clone() })?;
        sink.round_completed(&report)?;
        Ok(report)
    }

    /// Accepts an expert refinement of a queued candidate.
    pub fn ingest_refinement(&mut self, event: RefinementEvent) -> Result<RefinementAck> {
        let candidate_id = event.candidate_id.clone();
        self.emit(PoolEvent::RefinementIngested { event })?;
        let update = match self.config.cadence {
            UpdateCadence::Immediate => self.flush_training()?,
            UpdateCadence::Batch { size } if self.pool.untrained().len() >= size.max(1) => self.flush_training()?,
            _ => None,
        };
        Ok(RefinementAck { candidate_id, training_set_size: self.pool.training_set().len(), update })
    }

    /// Candidates awaiting review, in pair-key order.
    pub fn queued_items(&self) -> Vec<(&CotCandidate, &VideoSample)> {
        self.pool
            .queued()
            .values()
            .map(|id| {
                let c = self.pool.candidate(id).expect("queued candidate exists");
                (c, self.pool.sample(&c.video_id).expect("known sample"))
            })
            .collect()
    }

    /// Alternates rounds with refinement collection until nothing is pending
    /// or `max_rounds` rounds have run.
    pub fn run_until_converged(
        &mut self,
        max_rounds: u32,
        sink: &mut dyn ReviewSink,
        source: &mut dyn RefinementSource,
    ) -> Result<Vec<RoundReport>> {
        if max_rounds == 0 {
            return Err(Error::invalid("max_rounds must be at least 1"));
        }
        let mut reports = Vec::new();
        for _ in 0..max_rounds {
            if self.pool.eligible().is_empty() {
                break;
            }
            reports.push(self.run_round(sink)?);
            let refinements = source.collect(&self.queued_items())?;
            for r in refinements {
                self.ingest_refinement(r)?;
            }
            if self.pool.pending().is_empty() {
                break;
            }
        }
        if reports.is_empty() {
            reports.push(RoundReport::empty(self.pool.rounds().len() as u32 + 1));
        }
        Ok(reports)
    }
}
