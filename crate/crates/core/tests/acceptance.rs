//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use chrono::Duration;
use cotforge_core::clock::ManualClock;
use cotforge_core::eval::{acc_mc, acc_oe_judge, acc_oe_keywords, length_distribution, top_words, EvalRecord, LengthBucket};
use cotforge_core::eventlog::read_log;
use cotforge_core::export::{export, split, DatasetKind, ExportOptions, Split, SplitRatios, MANIFEST_FILE};
use cotforge_core::lexical::{MentionMatcher, NGramModel, PosCategory, PosLexicon};
use cotforge_core::orchestrator::{LoopConfig, Orchestrator, RoundReport, UpdateCadence};
use cotforge_core::provider::mock::{MockCotGenerator, MockPromptGenerator, OverlapJudge};
use cotforge_core::provider::{ProviderSet, RetryPolicy};
use cotforge_core::review::{reconstruct, ReviewEvent, ReviewService, ReviewState};
use cotforge_core::scoring::{aggregate, route, score_perplexity_dim, score_spatial, score_temporal};
use cotforge_core::scoring::{PerplexityMode, Route, Scorer, ScoringConfig};
use cotforge_core::synth::{synthetic_corpus, ScriptedExpert};
use cotforge_core::{
    AnswerOption, CotCandidate, CotStatus, CotVariant, GroundingAnnotation, Keyword, MentionReport, QaKind, QaPair,
    QualityScore, Term, VideoSample,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// Aggregation

fn aggregation() -> Outcome {
    let cfg = ScoringConfig::default();
    let weights = [0.1, 0.1, 0.3, 0.3, 0.1, 0.1];
    ensure!(cfg.weights(CotVariant::VideoCot) == weights, "default video weights {:?}", cfg.weights(CotVariant::VideoCot));
    let dims = [1.0, 1.0, 0.5, 0.5, 1.0, 1.0];
    let got = aggregate(&dims, CotVariant::VideoCot, &cfg).map_err(|e| e.to_string())?;
    ensure!(close(got, 0.7, 1e-12), "(1,1,.5,.5,1,1) gave {got}");
    let dot: f64 = dims.iter().zip(weights).map(|(d, w)| d * w).sum();
    ensure!(close(got, dot, 1e-12), "{got} differs from dot product {dot}");
    for (variant, n) in [(CotVariant::VideoCot, 6), (CotVariant::TopicCot, 5)] {
        let ones = aggregate(&vec![1.0; n], variant, &cfg).map_err(|e| e.to_string())?;
        let zeros = aggregate(&vec![0.0; n], variant, &cfg).map_err(|e| e.to_string())?;
        ensure!(close(ones, 1.0, 1e-12), "{variant} all-ones gave {ones}");
        ensure!(zeros == 0.0, "{variant} all-zeros gave {zeros}");
    }
    Ok(())
}

// Routing

fn routing() -> Outcome {
    let cfg = ScoringConfig::default();
    for (score, want) in [(0.07, Route::ExpertQueue), (0.97, Route::Accept), (0.90, Route::Accept), (0.8999999, Route::ExpertQueue)] {
        let got = route(score, &cfg).map_err(|e| e.to_string())?;
        ensure!(got == want, "{score} routed to {got:?}, expected {want:?}");
    }
    Ok(())
}

// Spatial / temporal coverage

const OBJECT_POOL: [&str; 16] = [
    "girl", "boy", "dog", "cat", "ball", "car", "tree", "bicycle", "table", "cup", "horse", "bird", "chair", "boat",
    "kite", "bench",
];
const ACTION_POOL: [&str; 12] = ["run", "jump", "throw", "kick", "ride", "climb", "swim", "push", "pull", "walk", "dance", "carry"];
const FILLERS: [&str; 6] = ["the", "a", "on", "in", "of", "with"];

struct Instance {
    grounding: GroundingAnnotation,
    text: String,
    absent_objects: Vec<&'static str>,
    expected_spa: f64,
    expected_tem: f64,
}

/// Counts distinct grounded and distinct ungrounded pool words in the token stream.
fn oracle_ratio(tokens: &[&str], grounded: &BTreeSet<&str>, pool: &[&str]) -> f64 {
    let present: BTreeSet<&str> = tokens.iter().copied().filter(|t| pool.contains(t)).collect();
    let pos = present.iter().filter(|t| grounded.contains(*t)).count() as f64;
    let neg = present.iter().filter(|t| !grounded.contains(*t)).count() as f64;
    (pos - neg) / grounded.len() as f64
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let mut objects = OBJECT_POOL.to_vec();
    objects.shuffle(rng);
    let mut actions = ACTION_POOL.to_vec();
    actions.shuffle(rng);
    let grounded_objects: BTreeSet<&str> = objects[..rng.random_range(1..=5)].iter().copied().collect();
    let grounded_actions: BTreeSet<&str> = actions[..rng.random_range(1..=4)].iter().copied().collect();
    let len = rng.random_range(0..=30);
    let tokens: Vec<&str> = (0..len)
        .map(|_| match rng.random_range(0..10) {
            0..=2 => *grounded_objects.iter().nth(rng.random_range(0..grounded_objects.len())).unwrap(),
            3 => OBJECT_POOL[rng.random_range(0..OBJECT_POOL.len())],
            4..=5 => *grounded_actions.iter().nth(rng.random_range(0..grounded_actions.len())).unwrap(),
            6 => ACTION_POOL[rng.random_range(0..ACTION_POOL.len())],
            _ => FILLERS[rng.random_range(0..FILLERS.len())],
        })
        .collect();
    let absent_objects =
        OBJECT_POOL.iter().copied().filter(|o| !grounded_objects.contains(o) && !tokens.contains(o)).collect();
    Instance {
        grounding: GroundingAnnotation {
            objects: grounded_objects.iter().map(|t| Term::new(*t)).collect(),
            actions: grounded_actions.iter().map(|t| Term::new(*t)).collect(),
        },
        expected_spa: oracle_ratio(&tokens, &grounded_objects, &OBJECT_POOL),
        expected_tem: oracle_ratio(&tokens, &grounded_actions, &ACTION_POOL),
        text: tokens.join(" "),
        absent_objects,
    }
}

fn coverage_oracle() -> Outcome {
    let matcher = MentionMatcher::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut injected = 0;
    for i in 0..1000 {
        let inst = instance(&mut rng);
        let report = matcher.match_text(&inst.text, &inst.grounding);
        let spa = score_spatial(&report, &inst.grounding, false);
        let tem = score_temporal(&report, &inst.grounding, false);
        ensure!(spa.raw == inst.expected_spa, "#{i} {:?}: spa {} != oracle {}", inst.text, spa.raw, inst.expected_spa);
        ensure!(tem.raw == inst.expected_tem, "#{i} {:?}: tem {} != oracle {}", inst.text, tem.raw, inst.expected_tem);
        let clamped = score_spatial(&report, &inst.grounding, true).clamped;
        ensure!(clamped == inst.expected_spa.clamp(0.0, 1.0), "#{i}: clamped spa {clamped}");
        let clamped = score_temporal(&report, &inst.grounding, true).clamped;
        ensure!(clamped == inst.expected_tem.clamp(0.0, 1.0), "#{i}: clamped tem {clamped}");

        let Some(noun) = inst.absent_objects.first() else { continue };
        let text = format!("{} the {noun}", inst.text);
        let after = score_spatial(&matcher.match_text(&text, &inst.grounding), &inst.grounding, false).raw;
        ensure!(after < spa.raw, "#{i}: injecting {noun:?} moved raw spa {} -> {after}", spa.raw);
        injected += 1;
    }
    ensure!(injected == 1000, "only {injected} instances had a noun to inject");
    Ok(())
}

// Perplexity

fn perplexity_analytics() -> Outcome {
    // 48 words plus the end marker and unknown slot make 50 equiprobable types.
    let vocab: Vec<String> = (0..48).map(|i| format!("w{i}")).collect();
    let uniform = NGramModel::uniform(vocab.clone(), 1, 0.01).map_err(|e| e.to_string())?;
    ensure!(uniform.predictable_types() == 50, "uniform model has {} types", uniform.predictable_types());
    for text in ["w1 w2 w3", "w7. w8 w9 w10 w47", "unseen words here"] {
        let s = score_perplexity_dim(text, &uniform, PerplexityMode::Reciprocal).map_err(|e| e.to_string())?;
        ensure!(s == 0.02, "S_ppl of {text:?} is {s}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let words: Vec<String> = (0..30).map(|i| format!("t{i}")).collect();
    let sentence = |rng: &mut ChaCha8Rng, n: usize| -> String {
        let mut s: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())].as_str()).collect();
        if rng.random_bool(0.2) {
            s.push("zzz");
        }
        s.join(" ") + "."
    };
    for i in 0..10_000 {
        let corpus: Vec<String> = (0..rng.random_range(1..=4)).map(|_| {
            let n = rng.random_range(1..=8);
            sentence(&mut rng, n)
        }).collect();
        let order = rng.random_range(1..=3);
        let k = [0.001, 0.01, 0.5, 1.0, 5.0][rng.random_range(0..5)];
        let model = NGramModel::train(&corpus, order, k).map_err(|e| format!("#{i}: {e}"))?;
        let n = rng.random_range(1..=12);
        let text = sentence(&mut rng, n);
        let ppl = model.perplexity(&text).map_err(|e| format!("#{i}: {e}"))?;
        ensure!(ppl.is_finite() && ppl >= 1.0, "#{i}: PPL {ppl} for {text:?} (order {order}, k {k})");
    }
    Ok(())
}

// Closed loop

fn closed_loop() -> Outcome {
    let corpus = synthetic_corpus(200, 3);
    let pairs: usize = corpus.iter().map(|s| s.qa_pairs.len()).sum();
    let providers =
        ProviderSet::new(MockPromptGenerator::improving(2), MockCotGenerator::new(9), OverlapJudge, RetryPolicy::immediate(2));
    let config = LoopConfig { batch_size: Some(pairs.div_ceil(3)), parallelism: 4, cadence: UpdateCadence::PerRound };
    let mut o = Orchestrator::new(providers, Scorer::with_defaults(), config);
    for s in corpus {
        o.add_sample(s).map_err(|e| e.to_string())?;
    }
    let mut expert = ScriptedExpert::new(Scorer::with_defaults(), 10);
    let reports: Vec<RoundReport> = o.run_until_converged(3, &mut Vec::new(), &mut expert).map_err(|e| e.to_string())?;
    ensure!(reports.len() == 3, "{} rounds ran", reports.len());
    for w in reports.windows(2) {
        ensure!(w[1].mean_score >= w[0].mean_score, "mean score fell: {} -> {}", w[0].mean_score, w[1].mean_score);
    }
    let last = reports.last().unwrap();
    ensure!(last.acceptance_rate() >= 0.9, "final acceptance rate {}", last.acceptance_rate());

    let pool = o.pool();
    let all: BTreeSet<_> = pool.all_pairs().collect();
    ensure!(all.len() == pairs, "pool has {} pairs, corpus {pairs}", all.len());
    let pending: BTreeSet<_> = pool.pending().into_iter().collect();
    let accepted: BTreeSet<_> = pool.accepted().keys().cloned().collect();
    ensure!(accepted.is_disjoint(&pending), "a pair is both accepted and pending");
    ensure!(accepted.union(&pending).count() == pairs, "accepted + pending != pairs");
    ensure!(pending.is_empty(), "{} pairs still pending", pending.len());
    let mut terminal: BTreeMap<(String, String), usize> = BTreeMap::new();
    for c in pool.candidates().filter(|c| c.status == CotStatus::Accepted) {
        *terminal.entry((c.video_id.clone(), c.qa_id.clone())).or_default() += 1;
    }
    ensure!(terminal.len() == pairs && terminal.values().all(|n| *n == 1), "some pair lacks exactly one accepted rationale");
    Ok(())
}

// Splits and export

fn split_correctness() -> Outcome {
    let ids: Vec<String> = (0..100).map(|i| format!("vid{i:03}")).collect();
    let a = split(&ids, &SplitRatios::default(), 7).map_err(|e| e.to_string())?;
    let count = |s: Split| a.values().filter(|x| **x == s).count();
    ensure!((count(Split::Train), count(Split::Val), count(Split::Test)) == (60, 20, 20), "100 ids split {}/{}/{}", count(Split::Train), count(Split::Val), count(Split::Test));

    // Ratios as percentages so the floor rule can be checked in integers.
    for (train, val, test) in [(60, 20, 20), (80, 10, 10), (70, 15, 15), (50, 25, 25), (34, 33, 33)] {
        let r = SplitRatios::new(train as f64 / 100.0, val as f64 / 100.0, test as f64 / 100.0).map_err(|e| e.to_string())?;
        for n in 1..=10_000usize {
            let (v, t) = (n * val / 100, n * test / 100);
            let want = (n - v - t, v, t);
            ensure!(r.counts(n) == want, "n={n} ratios {train}/{val}/{test}: {:?} != {want:?}", r.counts(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(train as u64);
        let sizes: Vec<usize> = (1..=60).chain((0..40).map(|_| rng.random_range(61..=10_000))).chain([10_000]).collect();
        for n in sizes {
            let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
            let got = split(&ids, &r, n as u64).map_err(|e| e.to_string())?;
            ensure!(got.len() == n, "n={n}: {} ids assigned", got.len());
            let c = |s: Split| got.values().filter(|x| **x == s).count();
            ensure!((c(Split::Train), c(Split::Val), c(Split::Test)) == r.counts(n), "n={n}: split sizes differ from rule");
        }
    }

    let corpus = synthetic_corpus(40, 9);
    let candidates: Vec<CotCandidate> = corpus
        .iter()
        .flat_map(|s| {
            s.qa_pairs.iter().filter(|q| q.variant() == CotVariant::VideoCot).map(move |q| CotCandidate {
                candidate_id: format!("{}:{}:r1", s.video_id, q.qa_id),
                video_id: s.video_id.clone(),
                qa_id: q.qa_id.clone(),
                text: format!("The answer is {}. Therefore it fits.", q.answer),
                variant: CotVariant::VideoCot,
                score: None,
                status: CotStatus::Accepted,
                round: 1,
                prompt_used: "p".into(),
            })
        })
        .collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = ExportOptions::new(DatasetKind::VideoCot, 7);
    let (one, two) = (dir.path().join("one"), dir.path().join("two"));
    export(&candidates, &corpus, &opts, &one).map_err(|e| e.to_string())?;
    export(&candidates, &corpus, &opts, &two).map_err(|e| e.to_string())?;
    let read = |root: &Path, f: &str| fs::read(root.join("video_cot").join(f)).map_err(|e| e.to_string());
    ensure!(read(&one, MANIFEST_FILE)? == read(&two, MANIFEST_FILE)?, "manifests differ between runs");
    let mut owner: BTreeMap<String, &str> = BTreeMap::new();
    for s in ["train", "val", "test"] {
        let bytes = read(&one, &format!("{s}.jsonl"))?;
        ensure!(bytes == read(&two, &format!("{s}.jsonl"))?, "{s} split differs between runs");
        for line in String::from_utf8_lossy(&bytes).lines() {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let id = v["video_id"].as_str().unwrap_or_default().to_string();
            if let Some(prev) = owner.insert(id.clone(), s) {
                ensure!(prev == s, "video {id} in both {prev} and {s}");
            }
        }
    }
    ensure!(owner.len() == 40, "{} videos exported", owner.len());
    Ok(())
}

// Metrics

fn mc(i: usize, answer: &str, output: &str) -> EvalRecord {
    EvalRecord {
        video_id: format!("mc{i:02}"),
        qa_id: "q".into(),
        model_output: output.into(),
        gold: QaPair {
            qa_id: "q".into(),
            question: "Which option?".into(),
            options: Some(["A", "B", "C", "D", "E"].iter().map(|l| AnswerOption { label: (*l).into(), text: "x".into() }).collect()),
            answer: answer.into(),
            keywords: Vec::new(),
            kind: QaKind::Mc,
        },
    }
}

fn oe(i: usize, keywords: &[(&str, &[&str])], gold: &str, output: &str) -> EvalRecord {
    EvalRecord {
        video_id: format!("oe{i:02}"),
        qa_id: "q".into(),
        model_output: output.into(),
        gold: QaPair {
            qa_id: "q".into(),
            question: "Why?".into(),
            options: None,
            answer: gold.into(),
            keywords: keywords
                .iter()
                .map(|(k, s)| Keyword { keyword: (*k).into(), synonyms: s.iter().map(|x| (*x).into()).collect() })
                .collect(),
            kind: QaKind::Oe,
        },
    }
}

fn metric_oracles() -> Outcome {
    let mcs = vec![
        mc(0, "A", "The answer is A"),
        mc(1, "B", "answer: C"),
        mc(2, "C", "I think (C) is right"),
        mc(3, "D", "Option D."),
        mc(4, "E", "no idea"),
        mc(5, "A", "B"),
        mc(6, "B", "The correct choice is B because the man runs"),
        mc(7, "C", "answer would be C"),
        mc(8, "D", "Let me see... E"),
        mc(9, "E", "E"),
    ];
    let r = acc_mc(&mcs).map_err(|e| e.to_string())?;
    ensure!(close(r.accuracy, 0.6, 1e-9), "acc_mc {}", r.accuracy);
    ensure!((r.correct, r.wrong, r.unextractable) == (6, 3, 1), "mc counts {}/{}/{}", r.correct, r.wrong, r.unextractable);

    let fit: &[(&str, &[&str])] = &[("fitness", &[]), ("event", &["gathering"])];
    let pet: &[(&str, &[&str])] = &[("dog", &[]), ("ball", &[])];
    let oes = vec![
        oe(0, fit, "fitness", "It is a fitness gathering."),
        oe(1, fit, "event", "They talk about fitness."),
        oe(2, fit, "fitness", "Nothing relevant here."),
        oe(3, pet, "dog ball", "The dog runs. Later the dog fetches the ball."),
        oe(4, pet, "ball", "A ball rolls away. Then lunch. Then home. The dog sleeps."),
        oe(5, &[("rain", &["storm"]), ("umbrella", &[])], "rain", "The storm starts. She opens an umbrella."),
        oe(6, &[("birthday", &[]), ("party", &["celebration"]), ("cake", &[])], "birthday party", "It is a birthday celebration."),
        oe(7, &[("cooking", &[])], "cooking dinner", "They are cooking dinner."),
        oe(8, &[("race", &[]), ("car", &[])], "race", "The car wins the race."),
        oe(9, &[("music", &[]), ("dance", &[])], "dance", "People listen to music."),
    ];
    ensure!(mcs.len() + oes.len() == 20, "fixture size");
    // Per-record hit rates: 1, 1/2, 0, 1, 1/2, 1, 2/3, 1, 1, 1/2.
    let want_kw = 43.0 / 60.0;
    let kw = acc_oe_keywords(&oes).map_err(|e| e.to_string())?;
    ensure!(close(kw.accuracy, want_kw, 1e-9), "keyword accuracy {} != {want_kw}", kw.accuracy);
    let judged = acc_oe_judge(&oes, &OverlapJudge, &RetryPolicy::immediate(0), 3).map_err(|e| e.to_string())?;
    ensure!(close(judged.accuracy, 0.5, 1e-9), "judge accuracy {}", judged.accuracy);
    ensure!(judged.evaluated == 10 && judged.unevaluated == 0, "judge evaluated {}", judged.evaluated);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let mut shuffled = oes.clone();
        shuffled.shuffle(&mut rng);
        for r in &mut shuffled {
            r.gold.keywords.shuffle(&mut rng);
            for k in &mut r.gold.keywords {
                k.synonyms.shuffle(&mut rng);
            }
        }
        let acc = acc_oe_keywords(&shuffled).map_err(|e| e.to_string())?.accuracy;
        ensure!(close(acc, kw.accuracy, 1e-12), "permutation changed keyword accuracy to {acc}");
    }
    Ok(())
}

// Event sourcing

fn placeholder_score(aggregate: f64) -> QualityScore {
    QualityScore {
        ppl: 0.02,
        bac: Some(0),
        tem: 0.0,
        spa: 0.0,
        rel: Some(0),
        sum: 0,
        con: None,
        aggregate,
        raw_spa: 0.0,
        raw_tem: 0.0,
        mention_report: MentionReport::default(),
        diagnostics: Vec::new(),
    }
}

fn queued(sample: &VideoSample, aggregate: f64) -> CotCandidate {
    let qa = &sample.qa_pairs[0];
    CotCandidate {
        candidate_id: format!("{}:{}:r1", sample.video_id, qa.qa_id),
        video_id: sample.video_id.clone(),
        qa_id: qa.qa_id.clone(),
        text: "The answer is A.".into(),
        variant: qa.variant(),
        score: Some(placeholder_score(aggregate)),
        status: CotStatus::QueuedForExpert,
        round: 1,
        prompt_used: "p".into(),
    }
}

/// Enqueue, enqueue, claim, refine, record-round, repeated.
fn scripted(dir: &Path, n: usize, snapshot_every: Option<u64>) -> Result<ReviewService<ManualClock>, String> {
    let clock = ManualClock::epoch();
    let mut s = ReviewService::open(dir, Scorer::with_defaults(), clock.clone(), snapshot_every).map_err(|e| e.to_string())?;
    let corpus = synthetic_corpus(n, 4);
    let mut next = 0;
    for op in 0..n {
        let r = match op % 5 {
            0 | 1 => {
                let sample = &corpus[next];
                next += 1;
                s.enqueue(queued(sample, (next % 9) as f64 / 10.0), sample.clone())
            }
            2 => {
                let id = s.state().queue.keys().next().cloned().ok_or("empty queue")?;
                s.claim(&id, &format!("e{}", op % 3), 30).map(|_| ())
            }
            3 => {
                let (id, expert) = s
                    .state()
                    .queue
                    .iter()
                    .find_map(|(id, e)| e.claim.as_ref().map(|c| (id.clone(), c.expert_id.clone())))
                    .ok_or("no claimed entry")?;
                s.submit_refinement(&id, &expert, &format!("Refined text {op}. Therefore, the answer is A."), false).map(|_| ())
            }
            _ => {
                let mut r = RoundReport::empty(op as u32);
                r.generated = 1;
                r.queued = 1;
                r.score_histogram[3] = 1;
                s.record_round(r)
            }
        };
        r.map_err(|e| format!("op {op}: {e}"))?;
        clock.advance(Duration::seconds(7));
    }
    Ok(s)
}

fn full_replay(dir: &Path) -> Result<(ReviewState, usize), String> {
    let read = read_log::<ReviewEvent>(&dir.join("events.jsonl")).map_err(|e| e.to_string())?;
    Ok((ReviewState::replay(&read.events).map_err(|e| e.to_string())?, read.events.len()))
}

fn event_sourcing() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let svc = scripted(dir.path(), 500, Some(120))?;
    let rec = reconstruct(dir.path()).map_err(|e| e.to_string())?;
    ensure!(rec.snapshot_seq == Some(480), "snapshot at {:?}", rec.snapshot_seq);
    ensure!(rec.corruption.is_none(), "clean log reported corruption");
    let (full, events) = full_replay(dir.path())?;
    ensure!(events == 500, "{events} events logged");
    let as_json = |s: &ReviewState| serde_json::to_value(s).map_err(|e| e.to_string());
    ensure!(as_json(&rec.state)? == as_json(&full)?, "snapshot+tail differs from full replay");
    ensure!(rec.state == full && &full == svc.state(), "replayed state differs from the live service");
    drop(svc);

    // Truncated final record.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    drop(scripted(dir.path(), 20, None)?);
    let log = dir.path().join("events.jsonl");
    let mut bytes = fs::read(&log).map_err(|e| e.to_string())?;
    bytes.extend_from_slice(br#"{"seq":21,"crc":12,"ev"#);
    fs::write(&log, &bytes).map_err(|e| e.to_string())?;
    let rec = reconstruct(dir.path()).map_err(|e| e.to_string())?;
    let c = rec.corruption.ok_or("truncated tail not reported")?;
    ensure!(c.line == 21 && c.valid_records == 20, "halted at line {} after {} records", c.line, c.valid_records);
    ensure!(rec.state.seq == 20, "state at seq {}", rec.state.seq);

    // Damaged record in the middle: everything after it is ignored.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    drop(scripted(dir.path(), 20, None)?);
    let log = dir.path().join("events.jsonl");
    let text = fs::read_to_string(&log).map_err(|e| e.to_string())?;
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let prefix = read_log::<ReviewEvent>(&log).map_err(|e| e.to_string())?.events[..9].to_vec();
    lines[9] = lines[9].replacen("\"crc\":", "\"crc\":1", 1);
    fs::write(&log, lines.join("\n") + "\n").map_err(|e| e.to_string())?;
    let rec = reconstruct(dir.path()).map_err(|e| e.to_string())?;
    let c = rec.corruption.ok_or("damaged record not reported")?;
    ensure!(c.line == 10 && c.valid_records == 9, "halted at line {} after {} records", c.line, c.valid_records);
    let want = ReviewState::replay(&prefix).map_err(|e| e.to_string())?;
    ensure!(rec.state == want, "state differs from the valid prefix");
    Ok(())
}

// Analysis

const NOUNS: [&str; 6] = ["dog", "girl", "ball", "tree", "car", "bird"];
const VERBS: [&str; 6] = ["run", "jump", "kick", "climb", "swim", "walk"];
const CONJUNCTIONS: [&str; 5] = ["therefore", "and", "but", "because", "so"];

fn brute_top(counts: &BTreeMap<&str, u64>, k: usize) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = counts.iter().map(|(w, c)| (w.to_string(), *c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

fn analysis() -> Outcome {
    let lex = PosLexicon::english();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..50 {
        let mut counts: [BTreeMap<&str, u64>; 3] = Default::default();
        let mut lengths = Vec::new();
        let texts: Vec<String> = (0..rng.random_range(1..40))
            .map(|_| {
                let n = rng.random_range(0..80);
                lengths.push(n);
                let words: Vec<&str> = (0..n)
                    .map(|_| {
                        let (pool, slot): (&[&str], Option<usize>) = match rng.random_range(0..4) {
                            0 => (&NOUNS, Some(0)),
                            1 => (&VERBS, Some(1)),
                            2 => (&CONJUNCTIONS, Some(2)),
                            _ => (&FILLERS, None),
                        };
                        let w = pool[rng.random_range(0..pool.len())];
                        if let Some(i) = slot {
                            *counts[i].entry(w).or_default() += 1;
                        }
                        w
                    })
                    .collect();
                words.join(" ")
            })
            .collect();
        for width in [1, 5, 10, 25] {
            let mut buckets: BTreeMap<usize, u64> = BTreeMap::new();
            for n in &lengths {
                *buckets.entry(n / width).or_default() += 1;
            }
            let want: Vec<LengthBucket> =
                buckets.into_iter().map(|(b, count)| LengthBucket { start: b * width, end: (b + 1) * width, count }).collect();
            let got = length_distribution(&texts, width).map_err(|e| e.to_string())?;
            ensure!(got == want, "trial {trial} width {width}: {got:?} != {want:?}");
        }
        for (i, cat) in [PosCategory::Noun, PosCategory::Verb, PosCategory::Conjunction].into_iter().enumerate() {
            for k in [1, 3, 10] {
                let got: Vec<(String, u64)> =
                    top_words(&texts, cat, k, &lex).map_err(|e| e.to_string())?.into_iter().map(|w| (w.word, w.count)).collect();
                let want = brute_top(&counts[i], k);
                ensure!(got == want, "trial {trial} {cat:?} top {k}: {got:?} != {want:?}");
            }
        }
    }

    let fixture = [
        "The girl kicks the ball, therefore the dog runs.",
        "The boy waits because the bus is late, and therefore he walks.",
        "Therefore the bird sings, but the cat sleeps.",
        "The car stops so the man crosses; therefore traffic waits.",
    ];
    let top = top_words(&fixture, PosCategory::Conjunction, 3, &lex).map_err(|e| e.to_string())?;
    ensure!(top.first().map(|w| (w.word.as_str(), w.count)) == Some(("therefore", 4)), "top conjunctions {top:?}");
    Ok(())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("aggregation exactness", aggregation),
        ("routing fidelity", routing),
        ("spatial/temporal oracle equivalence", coverage_oracle),
        ("perplexity analytics", perplexity_analytics),
        ("closed-loop simulation", closed_loop),
        ("split correctness", split_correctness),
        ("metric oracles", metric_oracles),
        ("event-sourcing replay", event_sourcing),
        ("analysis functionality", analysis),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("PASS {name} ({ms} ms)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({ms} ms): {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
