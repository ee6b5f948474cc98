//! Dataset materialization and deterministic train/val/test splits.
//!
//! Records are written as `{out}/{dataset}/{split}.jsonl`, sorted by
//! `(video_id, qa_id)`, with a `manifest.json` next to them holding record
//! counts and SHA-256 checksums of the file bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{AnswerOption, CotCandidate, CotStatus, CotVariant, Language, QaKind, VideoSample};

const RATIO_TOLERANCE: f64 = 1e-9;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    VideoCot,
    TopicQa,
    TopicCot,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::VideoCot, DatasetKind::TopicQa, DatasetKind::TopicCot];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::VideoCot => "video_cot",
            DatasetKind::TopicQa => "topic_qa",
            DatasetKind::TopicCot => "topic_cot",
        }
    }

    fn variant(self) -> Option<CotVariant> {
        match self {
            DatasetKind::VideoCot => Some(CotVariant::VideoCot),
            DatasetKind::TopicCot => Some(CotVariant::TopicCot),
            DatasetKind::TopicQa => None,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dataset {s:?}; expected video_cot, topic_qa or topic_cot")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub dataset: DatasetKind,
    pub video_id: String,
    pub qa_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<AnswerOption>>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    pub language: Language,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::invalid(format!("split ratios must be positive, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > RATIO_TOLERANCE {
            return Err(Error::invalid(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Split sizes for `n` ids: floors for val and test, the rest to train.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| (n as f64 * r + RATIO_TOLERANCE).floor() as usize;
        let (val, test) = (floor(self.val), floor(self.test));
        (n - val - test, val, test)
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    /// Parses `"train,val,test"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad ratio {p:?}"))))
            .collect::<Result<_>>()?;
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(Error::invalid(format!("expected three comma-separated ratios, got {s:?}"))),
        }
    }
}

/// Assigns every distinct id to one split by a seeded shuffle followed by
/// contiguous train, val, test blocks.
pub fn split(video_ids: &[String], ratios: &SplitRatios, seed: u64) -> Result<BTreeMap<String, Split>> {
    ratios.validate()?;
    let mut ids: Vec<&String> = video_ids.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.is_empty() {
        return Err(Error::invalid("cannot split an empty id list"));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val, _) = ratios.counts(ids.len());
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (id.clone(), s)
        })
        .collect())
}

pub fn topic_question(topic: &str) -> String {
    format!("Is the video relevant to the topic {topic}?")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopicQaBuild {
    /// Records with `split` set to train; [`export`] assigns the real split.
    pub records: Vec<ExportRecord>,
    pub warnings: Vec<String>,
}

/// One relevance record per topical sample, plus `negative_ratio` times as
/// many "no" records pairing videos with a topic drawn from other samples.
pub fn build_topicqa(samples: &[VideoSample], negative_ratio: f64, seed: u64) -> Result<TopicQaBuild> {
    if !negative_ratio.is_finite() || negative_ratio < 0.0 {
        return Err(Error::invalid(format!("negative ratio {negative_ratio} must be non-negative")));
    }
    let mut out = TopicQaBuild::default();
    let mut positives: Vec<&VideoSample> = Vec::new();
    for s in samples {
        match &s.topic {
            Some(t) => {
                let qa = s.qa_pairs.iter().find(|q| q.kind == QaKind::TopicRelevance);
                out.records.push(ExportRecord {
                    dataset: DatasetKind::TopicQa,
                    video_id: s.video_id.clone(),
                    qa_id: qa.map_or_else(|| "topic".to_string(), |q| q.qa_id.clone()),
                    question: topic_question(&t.name),
                    options: None,
                    answer: qa.map_or_else(|| "yes".to_string(), |q| q.answer.clone()),
                    rationale: None,
                    topic: Some(t.name.clone()),
                    language: s.language,
                    split: Split::Train,
                });
                positives.push(s);
            }
            None => out.warnings.push(format!("sample {} has no topic; skipped", s.video_id)),
        }
    }
    if positives.is_empty() {
        out.warnings.push("no topical samples; topic_qa is empty".into());
        return Ok(out);
    }

    let wanted = (positives.len() as f64 * negative_ratio + RATIO_TOLERANCE).floor() as usize;
    let topics: BTreeSet<&str> = positives.iter().filter_map(|s| s.topic.as_ref()).map(|t| t.name.as_str()).collect();
    if wanted > 0 && topics.len() < 2 {
        out.warnings.push("a single distinct topic leaves no foreign topic for negative pairs".into());
        return Ok(out);
    }
    let topics: Vec<&str> = topics.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = positives.clone();
    order.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    order.shuffle(&mut rng);
    let mut per_video: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..wanted {
        let s = order[i % order.len()];
        let own = s.topic.as_ref().map(|t| t.name.as_str());
        let foreign: Vec<&str> = topics.iter().copied().filter(|t| Some(*t) != own).collect();
        let topic = *foreign.choose(&mut rng).expect("at least two topics");
        let n = per_video.entry(s.video_id.as_str()).or_default();
        *n += 1;
        out.records.push(ExportRecord {
            dataset: DatasetKind::TopicQa,
            video_id: s.video_id.clone(),
            qa_id: format!("neg{n}"),
            question: topic_question(topic),
            options: None,
            answer: "no".into(),
            rationale: None,
            topic: Some(topic.to_string()),
            language: s.language,
            split: Split::Train,
        });
    }
    Ok(out)
}

/// Rationale records for one variant; every candidate of that variant must be accepted.
pub fn rationale_records(
    candidates: &[CotCandidate],
    samples: &[VideoSample],
    kind: DatasetKind,
) -> Result<Vec<ExportRecord>> {
    let variant = kind.variant().ok_or_else(|| Error::invalid(format!("{kind} has no rationales")))?;
    let relevant: Vec<&CotCandidate> = candidates.iter().filter(|c| c.variant == variant).collect();
    let offenders: Vec<String> =
        relevant.iter().filter(|c| c.status != CotStatus::Accepted).map(|c| c.candidate_id.clone()).collect();
    if !offenders.is_empty() {
        return Err(Error::UnacceptedCandidates(offenders));
    }
    let by_id: BTreeMap<&str, &VideoSample> = samples.iter().map(|s| (s.video_id.as_str(), s)).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(relevant.len());
    for c in relevant {
        let sample = by_id.get(c.video_id.as_str()).ok_or_else(|| Error::NotFound(format!("sample {}", c.video_id)))?;
        let qa = sample
            .qa(&c.qa_id)
            .ok_or_else(|| Error::NotFound(format!("qa pair {}/{}", c.video_id, c.qa_id)))?;
        if !seen.insert((c.video_id.as_str(), c.qa_id.as_str())) {
            return Err(Error::Conflict(format!("two accepted rationales for {}/{}", c.video_id, c.qa_id)));
        }
        out.push(ExportRecord {
            dataset: kind,
            video_id: c.video_id.clone(),
            qa_id: c.qa_id.clone(),
            question: qa.question.clone(),
            options: qa.options.clone(),
            answer: qa.answer.clone(),
            rationale: Some(c.text.clone()),
            topic: (kind == DatasetKind::TopicCot).then(|| sample.topic.as_ref().map(|t| t.name.clone())).flatten(),
            language: sample.language,
            split: Split::Train,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportOptions {
    pub dataset: DatasetKind,
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Negative "no" records per positive, for topic_qa only.
    pub negative_ratio: f64,
}

impl ExportOptions {
    pub fn new(dataset: DatasetKind, seed: u64) -> Self {
        Self { dataset, ratios: SplitRatios::default(), seed, negative_ratio: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub file: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: DatasetKind,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub total: usize,
    pub splits: BTreeMap<Split, SplitFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Builds the requested dataset, assigns splits by video and writes it under `out`.
pub fn export(
    candidates: &[CotCandidate],
    samples: &[VideoSample],
    opts: &ExportOptions,
    out: &Path,
) -> Result<Manifest> {
    opts.ratios.validate()?;
    let (mut records, warnings) = match opts.dataset {
        DatasetKind::TopicQa => {
            let b = build_topicqa(samples, opts.negative_ratio, opts.seed)?;
            (b.records, b.warnings)
        }
        kind => (rationale_records(candidates, samples, kind)?, Vec::new()),
    };
    for w in &warnings {
        tracing::warn!(dataset = %opts.dataset, "{w}");
    }
    if !records.is_empty() {
        let ids: Vec<String> = records.iter().map(|r| r.video_id.clone()).collect();
        let assignment = split(&ids, &opts.ratios, opts.seed)?;
        for r in &mut records {
            r.split = assignment[&r.video_id];
        }
    }
    records.sort_by(|a, b| (&a.video_id, &a.qa_id).cmp(&(&b.video_id, &b.qa_id)));

    let dir = out.join(opts.dataset.as_str());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut splits = BTreeMap::new();
    for s in Split::ALL {
        let mut bytes = Vec::new();
        let mut n = 0;
        for r in records.iter().filter(|r| r.split == s) {
            serde_json::to_writer(&mut bytes, r)?;
            bytes.push(b'\n');
            n += 1;
        }
        let file = format!("{}.jsonl", s.as_str());
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        splits.insert(s, SplitFile { file, records: n, sha256: hex::encode(Sha256::digest(&bytes)) });
    }
    let manifest = Manifest {
        dataset: opts.dataset,
        seed: opts.seed,
        ratios: opts.ratios,
        total: records.len(),
        splits,
        warnings,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads one exported split file back.
pub fn read_records(path: &Path) -> Result<Vec<ExportRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
