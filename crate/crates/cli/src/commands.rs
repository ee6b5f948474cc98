//! Subcommand implementations. Each returns the JSON document printed on stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cotforge_core::clock::{Clock, SystemClock};
use cotforge_core::eval::{acc_mc, acc_oe_judge, acc_oe_keywords, analyze, read_eval_records, render_svgs};
use cotforge_core::eventlog::{read_log, EventLog};
use cotforge_core::export::{export, read_records, DatasetKind, ExportOptions, SplitRatios};
use cotforge_core::lexical::PosLexicon;
use cotforge_core::orchestrator::{LoopConfig, Orchestrator, Pool, PoolEvent, RefinementSource, RoundReport};
use cotforge_core::provider::transcript::{read_transcript, TranscriptLog};
use cotforge_core::provider::{ProviderKind, ProviderSet, TranscriptMode};
use cotforge_core::review::{reconstruct, ClaimState, PageRequest, QueueFilter, ReviewService, MAX_PAGE_SIZE};
use cotforge_core::synth::{expert_rationale, synthetic_corpus};
use cotforge_core::{Error, VideoSample};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::CliConfig;
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TranscriptUse {
    Record,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Mc,
    Keywords,
    Judge,
}

fn to_json<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn transcript_mode(path: Option<&Path>, mode: TranscriptUse) -> Result<TranscriptMode> {
    Ok(match (path, mode) {
        (None, TranscriptUse::Record) => TranscriptMode::Off,
        (None, TranscriptUse::Replay) => return Err(UsageError::new("--transcript-mode replay needs a transcript path").into()),
        (Some(p), TranscriptUse::Record) => TranscriptMode::Record(TranscriptLog::to_file(p)?),
        (Some(p), TranscriptUse::Replay) => TranscriptMode::Replay(
            read_transcript(p).with_context(|| format!("reading transcript {}", p.display()))?,
        ),
    })
}

/// Opens the pool log, cutting off a damaged tail.
fn open_pool(cfg: &CliConfig) -> Result<(Pool, Vec<PoolEvent>, EventLog<PoolEvent>)> {
    fs::create_dir_all(&cfg.data_dir).with_context(|| format!("creating {}", cfg.data_dir.display()))?;
    let (log, read) = EventLog::<PoolEvent>::open(&cfg.pool_log())?;
    if let Some(c) = &read.corruption {
        tracing::warn!(line = c.line, reason = %c.reason, "pool log corrupted; continuing from the valid prefix");
    }
    let pool = Pool::replay(&read.events)?;
    Ok((pool, read.events, log))
}

fn load_pool(cfg: &CliConfig) -> Result<Pool> {
    let read = read_log::<PoolEvent>(&cfg.pool_log())?;
    if let Some(c) = &read.corruption {
        tracing::warn!(line = c.line, reason = %c.reason, "pool log corrupted; using the valid prefix");
    }
    Ok(Pool::replay(&read.events)?)
}

#[derive(Debug, Serialize)]
struct Rejected {
    line: usize,
    reason: String,
}

#[derive(Debug, Serialize)]
struct FileOutcome {
    path: String,
    accepted: usize,
    rejected: Vec<Rejected>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn add_sample(pool: &mut Pool, log: &mut EventLog<PoolEvent>, sample: VideoSample) -> Result<(), Error> {
    let event = PoolEvent::SampleAdded { sample };
    pool.apply(&event)?;
    log.append(&event)?;
    Ok(())
}

pub fn ingest(cfg: &CliConfig, paths: &[PathBuf], synthetic: Option<usize>) -> Result<Value> {
    if paths.is_empty() && synthetic.is_none() {
        return Err(UsageError::new("give sample files or --synthetic N").into());
    }
    let (mut pool, _, mut log) = open_pool(cfg)?;
    let mut files = Vec::new();
    let mut ingested = 0;
    for path in paths {
        let mut out = FileOutcome { path: path.display().to_string(), accepted: 0, rejected: Vec::new(), error: None };
        match fs::read_to_string(path) {
            Err(e) => {
                tracing::error!(path = %path.display(), error = %e, "cannot read sample file");
                out.error = Some(e.to_string());
            }
            Ok(text) => {
                for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let parsed = serde_json::from_str::<VideoSample>(line).map_err(Error::from);
                    match parsed.and_then(|s| add_sample(&mut pool, &mut log, s)) {
                        Ok(()) => out.accepted += 1,
                        Err(e) => out.rejected.push(Rejected { line: i + 1, reason: e.to_string() }),
                    }
                }
            }
        }
        ingested += out.accepted;
        files.push(out);
    }
    let mut synthetic_added = 0;
    if let Some(n) = synthetic {
        for s in synthetic_corpus(n, cfg.seed) {
            add_sample(&mut pool, &mut log, s)?;
            synthetic_added += 1;
        }
    }
    if ingested + synthetic_added == 0 && files.iter().any(|f| f.error.is_some()) {
        bail!("no samples ingested: {}", files.iter().filter_map(|f| f.error.as_ref().map(|e| format!("{}: {e}", f.path))).collect::<Vec<_>>().join("; "));
    }
    Ok(json!({
        "files": files,
        "synthetic": synthetic_added,
        "pool_size": pool.samples().count(),
        "qa_pairs": pool.pair_count(),
    }))
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub rounds: u32,
    pub parallelism: Option<usize>,
    pub threshold: Option<f64>,
    pub transcript: Option<PathBuf>,
    pub transcript_mode: TranscriptUse,
    pub batch_size: Option<usize>,
    /// Simulated experts who refine every queued entry after each round.
    pub simulate_experts: Option<usize>,
}

/// Hands every refinement the review store holds for queued candidates to the loop.
fn pull_refinements<C: Clock>(orch: &mut Orchestrator, review: &mut ReviewService<C>) -> Result<usize> {
    let events = review.collect(&orch.queued_items())?;
    let n = events.len();
    for e in events {
        orch.ingest_refinement(e)?;
    }
    Ok(n)
}

fn simulate_experts<C: Clock>(review: &mut ReviewService<C>, experts: usize, lease: i64) -> Result<usize> {
    let mut open = Vec::new();
    let mut page = PageRequest { offset: 0, size: MAX_PAGE_SIZE };
    loop {
        let p = review.list_queue(&QueueFilter::default(), page)?;
        open.extend(p.entries.into_iter().filter(|e| e.claim == ClaimState::Unclaimed).map(|e| e.candidate_id));
        match p.next_offset {
            Some(o) => page.offset = o,
            None => break,
        }
    }
    for (i, id) in open.iter().enumerate() {
        let expert = format!("sim-expert-{}", i % experts.max(1) + 1);
        let view = review.get_candidate(id)?;
        let qa = view.sample.qa(&view.candidate.qa_id).expect("queued candidates reference their pair");
        let text = expert_rationale(&view.sample, &qa.answer);
        review.claim(id, &expert, lease)?;
        review.submit_refinement(id, &expert, &text, false)?;
    }
    Ok(open.len())
}

pub fn run(cfg: &CliConfig, opts: &RunOptions) -> Result<Value> {
    let mode = transcript_mode(opts.transcript.as_deref(), opts.transcript_mode)?;
    let providers: ProviderSet = cfg.providers.build(cfg.seed, &mode)?;
    let scorer = cfg.scorer(opts.threshold)?;
    let loop_config = LoopConfig {
        batch_size: opts.batch_size.or(cfg.run.batch_size),
        parallelism: opts.parallelism.unwrap_or(cfg.parallelism).max(1),
        cadence: cfg.run.cadence,
    };
    let (_, history, log) = open_pool(cfg)?;
    let mut orch = Orchestrator::resume(providers, scorer.clone(), loop_config, history, Some(log))?;
    if matches!(cfg.providers.prompt_generator, ProviderKind::Mock(_)) {
        let n = orch.restore_prompt_state()?;
        tracing::debug!(updates = n, "restored local prompt generator");
    }
    let mut review = ReviewService::open(&cfg.review_dir(), scorer, SystemClock, Some(cfg.serve.snapshot_every))?;

    let mut reports: Vec<RoundReport> = Vec::new();
    for _ in 0..opts.rounds {
        let pulled = pull_refinements(&mut orch, &mut review)?;
        if pulled > 0 {
            tracing::info!(refinements = pulled, "ingested expert refinements");
        }
        match orch.run_round(&mut review) {
            Ok(r) => {
                tracing::info!(round = r.round, generated = r.generated, accepted = r.accepted, queued = r.queued, mean = r.mean_score, "round complete");
                reports.push(r);
            }
            Err(Error::NothingToDo(why)) => {
                tracing::info!(reason = %why, "stopping early");
                break;
            }
            Err(e) => return Err(e.into()),
        }
        if let Some(n) = opts.simulate_experts {
            simulate_experts(&mut review, n, cfg.run.lease_seconds)?;
        }
    }
    pull_refinements(&mut orch, &mut review)?;
    if let TranscriptMode::Record(log) = &mode {
        tracing::info!(entries = log.entries().len(), "transcript recorded");
    }
    to_json(&reports)
}

pub fn serve(cfg: &CliConfig, listen: Option<String>, snapshot_every: Option<u64>, static_dir: Option<PathBuf>) -> Result<Value> {
    let scorer = cfg.scorer(None)?;
    let every = snapshot_every.unwrap_or(cfg.serve.snapshot_every);
    let service = ReviewService::open(&cfg.review_dir(), scorer, SystemClock, Some(every))?;
    if let Some(c) = service.corruption() {
        tracing::warn!(line = c.line, reason = %c.reason, "review log corrupted; serving the valid prefix");
    }
    let listen = listen.unwrap_or_else(|| cfg.serve.listen.clone());
    let static_dir = static_dir.or_else(|| cfg.serve.static_dir.clone());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::server::serve(Arc::new(tokio::sync::RwLock::new(service)), &listen, static_dir))?;
    Ok(json!({ "stopped": true }))
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub sample_file: Option<PathBuf>,
    pub video_id: Option<String>,
    pub qa_id: Option<String>,
    pub text: Option<String>,
    pub text_file: Option<PathBuf>,
    pub threshold: Option<f64>,
}

fn read_sample_file(path: &Path) -> Result<VideoSample> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    serde_json::from_str(text.trim())
        .or_else(|_| serde_json::from_str(first.unwrap_or("")))
        .with_context(|| format!("parsing sample from {}", path.display()))
}

pub fn score(cfg: &CliConfig, opts: &ScoreOptions) -> Result<Value> {
    let text = match (&opts.text, &opts.text_file) {
        (Some(t), None) => t.clone(),
        (None, Some(p)) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        _ => return Err(UsageError::new("give exactly one of --text or --text-file").into()),
    };
    let sample = match (&opts.sample_file, &opts.video_id) {
        (Some(p), _) => read_sample_file(p)?,
        (None, Some(id)) => load_pool(cfg)?.sample(id).cloned().with_context(|| format!("sample {id} not in the pool"))?,
        (None, None) => return Err(UsageError::new("give --sample-file or --video-id").into()),
    };
    let qa = match &opts.qa_id {
        Some(q) => sample.qa(q).with_context(|| format!("qa pair {q} not in sample {}", sample.video_id))?,
        None => sample.qa_pairs.first().with_context(|| format!("sample {} has no qa pairs", sample.video_id))?,
    };
    let scorer = cfg.scorer(opts.threshold)?;
    let s = scorer.score_text(&text, qa.variant(), &sample)?;
    let route = scorer.route(s.aggregate)?;
    Ok(json!({ "video_id": sample.video_id, "qa_id": qa.qa_id, "score": s, "route": route }))
}

#[derive(Debug, Clone)]
pub struct ExportArgs {
    pub dataset: DatasetKind,
    pub ratios: SplitRatios,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub negative_ratio: f64,
}

pub fn export_cmd(cfg: &CliConfig, a: &ExportArgs) -> Result<Value> {
    let pool = load_pool(cfg)?;
    let candidates: Vec<_> = pool.candidates().cloned().collect();
    let samples: Vec<_> = pool.samples().cloned().collect();
    let opts = ExportOptions {
        dataset: a.dataset,
        ratios: a.ratios,
        seed: a.seed.unwrap_or(cfg.seed),
        negative_ratio: a.negative_ratio,
    };
    let out = a.out.clone().unwrap_or_else(|| cfg.data_dir.join("export"));
    to_json(&export(&candidates, &samples, &opts, &out)?)
}

pub fn eval(
    cfg: &CliConfig,
    metric: Metric,
    records: &Path,
    transcript: Option<&Path>,
    mode: TranscriptUse,
    parallelism: Option<usize>,
) -> Result<Value> {
    let recs = read_eval_records(records)?;
    match metric {
        Metric::Mc => to_json(&acc_mc(&recs)?),
        Metric::Keywords => to_json(&acc_oe_keywords(&recs)?),
        Metric::Judge => {
            let mode = transcript_mode(transcript, mode)?;
            let set = cfg.providers.build(cfg.seed, &mode)?;
            let report = acc_oe_judge(&recs, set.judge.as_ref(), &set.retry, parallelism.unwrap_or(cfg.parallelism))?;
            to_json(&report)
        }
    }
}

pub fn analyze_cmd(
    cfg: &CliConfig,
    records: &[PathBuf],
    bucket_width: usize,
    top: usize,
    plots: Option<&Path>,
) -> Result<Value> {
    let texts: Vec<String> = if records.is_empty() {
        let pool = load_pool(cfg)?;
        pool.accepted().values().filter_map(|id| pool.candidate(id)).map(|c| c.text.clone()).collect()
    } else {
        let mut t = Vec::new();
        for p in records {
            t.extend(read_records(p)?.into_iter().filter_map(|r| r.rationale));
        }
        t
    };
    let report = analyze(&texts, bucket_width, top, &PosLexicon::english())?;
    let mut written = Vec::new();
    if let Some(dir) = plots {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, svg) in render_svgs(&report) {
            let p = dir.join(format!("{name}.svg"));
            fs::write(&p, svg).with_context(|| format!("writing {}", p.display()))?;
            written.push(p.display().to_string());
        }
    }
    let mut v = to_json(&report)?;
    if !written.is_empty() {
        v["plots"] = json!(written);
    }
    Ok(v)
}

pub fn replay(cfg: &CliConfig) -> Result<Value> {
    let read = read_log::<PoolEvent>(&cfg.pool_log())?;
    let pool = Pool::replay(&read.events)?;
    let review = reconstruct(&cfg.review_dir())?;
    let full = cotforge_core::review::ReviewState::replay(
        &read_log::<cotforge_core::review::ReviewEvent>(&cfg.review_dir().join(cotforge_core::review::EVENTS_FILE))?.events,
    )?;
    let statuses: BTreeMap<String, usize> = pool.candidates().fold(BTreeMap::new(), |mut m, c| {
        *m.entry(c.status.to_string()).or_default() += 1;
        m
    });
    Ok(json!({
        "pool": {
            "events": read.events.len(),
            "samples": pool.samples().count(),
            "qa_pairs": pool.pair_count(),
            "accepted": pool.accepted().len(),
            "queued": pool.queued().len(),
            "failed": pool.failures().len(),
            "pending": pool.pending().len(),
            "rounds": pool.rounds().len(),
            "training_pairs": pool.training_set().len(),
            "candidate_status": statuses,
            "corruption": read.corruption,
        },
        "review": {
            "events": review.state.seq,
            "snapshot_seq": review.snapshot_seq,
            "queue_depth": review.state.queue.len(),
            "refined": review.state.refined,
            "snapshot_matches_full_replay": review.state == full,
            "corruption": review.corruption,
        },
    }))
}
