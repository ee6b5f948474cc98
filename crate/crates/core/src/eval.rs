//! Accuracy metrics over model outputs and corpus analyses of rationale text.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexical::lexicon::{find_folded, phrase_keys};
use crate::lexical::stem::fold;
use crate::lexical::tokenize::words;
use crate::lexical::{tag_pos, tokenize, PosCategory, PosLexicon, EOS};
use crate::model::{QaKind, QaPair};
use crate::orchestrator::par_map;
use crate::provider::{Judge, ProviderError, RetryPolicy};
use crate::scoring::summary_span;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub video_id: String,
    pub qa_id: String,
    pub model_output: String,
    pub gold: QaPair,
}

impl EvalRecord {
    pub fn id(&self) -> String {
        format!("{}/{}", self.video_id, self.qa_id)
    }
}

pub fn read_eval_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn non_empty(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    Ok(())
}

const LABELS: [&str; 5] = ["A", "B", "C", "D", "E"];
const CUES: [&str; 3] = ["answer", "option", "choice"];
const CUE_FILLER: [&str; 5] = ["is", "be", "would", "the", "correct"];

/// The option label a model output commits to.
///
/// A label right after "answer", "option" or "choice" (optionally followed
/// by filler such as "is") wins; otherwise the first standalone A-E token.
pub fn extract_label(output: &str) -> Option<&'static str> {
    let toks: Vec<&str> = output.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
    let label = |t: &str| LABELS.iter().copied().find(|l| *l == t);
    for (i, t) in toks.iter().enumerate() {
        if CUES.contains(&t.to_lowercase().as_str()) {
            let rest = toks[i + 1..].iter().skip_while(|w| CUE_FILLER.contains(&w.to_lowercase().as_str()));
            if let Some(l) = rest.take(1).find_map(|w| label(w)) {
                return Some(l);
            }
        }
    }
    toks.iter().find_map(|t| label(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub accuracy: f64,
    pub total: usize,
    pub correct: usize,
    pub wrong: usize,
    /// Outputs with no extractable label; counted as wrong, not in `wrong`.
    pub unextractable: usize,
    pub flagged: Vec<String>,
}

pub fn acc_mc(records: &[EvalRecord]) -> Result<McReport> {
    non_empty(records)?;
    if let Some(r) = records.iter().find(|r| r.gold.kind != QaKind::Mc) {
        return Err(Error::invalid(format!("record {} is not multiple choice", r.id())));
    }
    let (mut correct, mut wrong, mut flagged) = (0, 0, Vec::new());
    for r in records {
        match extract_label(&r.model_output) {
            Some(l) if l == r.gold.answer => correct += 1,
            Some(_) => wrong += 1,
            None => flagged.push(r.id()),
        }
    }
    flagged.sort();
    Ok(McReport {
        accuracy: correct as f64 / records.len() as f64,
        total: records.len(),
        correct,
        wrong,
        unextractable: flagged.len(),
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordReport {
    pub accuracy: f64,
    pub total: usize,
    pub per_record: BTreeMap<String, f64>,
}

/// Fraction of the gold keywords whose term or a synonym occurs in the
/// final two sentences of `output`.
pub fn keyword_hit_rate(output: &str, gold: &QaPair) -> f64 {
    let span = summary_span(&tokenize(output));
    let keys: Vec<String> = span.iter().map(|t| if t == EOS { t.clone() } else { fold(t) }).collect();
    let hits = gold
        .keywords
        .iter()
        .filter(|k| k.surface_forms().any(|f| !find_folded(&keys, &phrase_keys(f)).is_empty()))
        .count();
    hits as f64 / gold.keywords.len() as f64
}

pub fn acc_oe_keywords(records: &[EvalRecord]) -> Result<KeywordReport> {
    non_empty(records)?;
    let empty: Vec<String> = records.iter().filter(|r| r.gold.keywords.is_empty()).map(EvalRecord::id).collect();
    if !empty.is_empty() {
        return Err(Error::invalid(format!("records without keywords: {}", empty.join(", "))));
    }
    let per_record: BTreeMap<String, f64> =
        records.iter().map(|r| (r.id(), keyword_hit_rate(&r.model_output, &r.gold))).collect();
    // Sum in sorted-id order so the mean does not depend on record order.
    let sum: f64 = per_record.values().sum();
    Ok(KeywordReport { accuracy: sum / per_record.len() as f64, total: records.len(), per_record })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    /// Correct over evaluated records; 0 when none could be evaluated.
    pub accuracy: f64,
    pub total: usize,
    pub evaluated: usize,
    pub correct: usize,
    pub unevaluated: usize,
    pub unevaluated_rate: f64,
    pub failures: BTreeMap<String, ProviderError>,
}

/// Asks `judge` about every record; records whose judge call still fails
/// after retries are excluded from the accuracy and reported.
pub fn acc_oe_judge(
    records: &[EvalRecord],
    judge: &dyn Judge,
    retry: &RetryPolicy,
    parallelism: usize,
) -> Result<JudgeReport> {
    non_empty(records)?;
    let verdicts = par_map(records, parallelism, |r| {
        retry.run(|| judge.judge(&r.gold.question, &r.gold.answer, &r.model_output)).result
    });
    let (mut correct, mut evaluated, mut failures) = (0, 0, BTreeMap::new());
    for (r, v) in records.iter().zip(verdicts) {
        match v {
            Ok(ok) => {
                evaluated += 1;
                correct += usize::from(ok);
            }
            Err(e) => {
                failures.insert(r.id(), e);
            }
        }
    }
    let unevaluated = failures.len();
    Ok(JudgeReport {
        accuracy: if evaluated == 0 { 0.0 } else { correct as f64 / evaluated as f64 },
        total: records.len(),
        evaluated,
        correct,
        unevaluated,
        unevaluated_rate: unevaluated as f64 / records.len() as f64,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub start: usize,
    pub end: usize,
    pub count: u64,
}

/// Word-count histogram with buckets `[k*width, (k+1)*width)`; empty buckets are omitted.
pub fn length_distribution<S: AsRef<str>>(texts: &[S], bucket_width: usize) -> Result<Vec<LengthBucket>> {
    if bucket_width == 0 {
        return Err(Error::invalid("bucket width must be at least 1"));
    }
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for t in texts {
        let n = words(&tokenize(t.as_ref())).count();
        *counts.entry(n / bucket_width).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, count)| LengthBucket { start: k * bucket_width, end: (k + 1) * bucket_width, count })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCount {
    pub word: String,
    pub count: u64,
}

/// The `k` most frequent tokens tagged `category`, ties broken alphabetically.
pub fn top_words<S: AsRef<str>>(
    texts: &[S],
    category: PosCategory,
    k: usize,
    lexicon: &PosLexicon,
) -> Result<Vec<WordCount>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in texts {
        for w in words(&tokenize(t.as_ref())) {
            if tag_pos(w, lexicon) == category {
                *counts.entry(w.to_string()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<WordCount> = counts.into_iter().map(|(word, count)| WordCount { word, count }).collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.word.cmp(&b.word)));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub texts: usize,
    pub bucket_width: usize,
    pub length_distribution: Vec<LengthBucket>,
    pub top_nouns: Vec<WordCount>,
    pub top_verbs: Vec<WordCount>,
    pub top_conjunctions: Vec<WordCount>,
}

pub fn analyze<S: AsRef<str>>(texts: &[S], bucket_width: usize, k: usize, lexicon: &PosLexicon) -> Result<AnalysisReport> {
    Ok(AnalysisReport {
        texts: texts.len(),
        bucket_width,
        length_distribution: length_distribution(texts, bucket_width)?,
        top_nouns: top_words(texts, PosCategory::Noun, k, lexicon)?,
        top_verbs: top_words(texts, PosCategory::Verb, k, lexicon)?,
        top_conjunctions: top_words(texts, PosCategory::Conjunction, k, lexicon)?,
    })
}

fn bar_chart(title: &str, bars: &[(String, u64)]) -> String {
    const W: usize = 640;
    const H: usize = 320;
    const PAD: usize = 40;
    let max = bars.iter().map(|(_, c)| *c).max().unwrap_or(0).max(1);
    let slot = (W - 2 * PAD) / bars.len().max(1);
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">
<text x="{PAD}" y="20" font-size="14">{}</text>
"#,
        escape(title)
    );
    for (i, (label, count)) in bars.iter().enumerate() {
        let h = (*count as f64 / max as f64 * (H - 3 * PAD) as f64).round() as usize;
        let x = PAD + i * slot;
        let y = H - PAD - h;
        svg.push_str(&format!(
            r##"<rect x="{x}" y="{y}" width="{}" height="{h}" fill="#4a7ab5"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="{}" y="{}" text-anchor="middle">{count}</text>
"##,
            slot.saturating_sub(4).max(1),
            x + slot / 2,
            H - PAD + 14,
            escape(label),
            x + slot / 2,
            y.saturating_sub(4),
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG bar charts for an analysis: `lengths` plus one per word category.
pub fn render_svgs(report: &AnalysisReport) -> BTreeMap<&'static str, String> {
    let words = |w: &[WordCount]| w.iter().map(|w| (w.word.clone(), w.count)).collect::<Vec<_>>();
    let lengths: Vec<(String, u64)> =
        report.length_distribution.iter().map(|b| (format!("{}-{}", b.start, b.end), b.count)).collect();
    BTreeMap::from([
        ("lengths", bar_chart("Rationale length (words)", &lengths)),
        ("nouns", bar_chart("Top nouns", &words(&report.top_nouns))),
        ("verbs", bar_chart("Top verbs", &words(&report.top_verbs))),
        ("conjunctions", bar_chart("Top conjunctions", &words(&report.top_conjunctions))),
    ])
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;
    use crate::model::{AnswerOption, Keyword};
    use crate::provider::mock::FnJudge;

    fn mc(answer: &str, output: &str, i: usize) -> EvalRecord {
        EvalRecord {
            video_id: format!("v{i}"),
            qa_id: "q1".into(),
            model_output: output.into(),
            gold: QaPair {
                qa_id: "q1".into(),
                question: "Why?".into(),
                options: Some(LABELS.iter().map(|l| AnswerOption { label: (*l).into(), text: "x".into() }).collect()),
                answer: answer.into(),
                keywords: Vec::new(),
                kind: QaKind::Mc,
            },
        }
    }

    fn oe(keywords: &[(&str, &[&str])], output: &str, i: usize) -> EvalRecord {
        EvalRecord {
            video_id: format!("v{i}"),
            qa_id: "q2".into(),
            model_output: output.into(),
            gold: QaPair {
                qa_id: "q2".into(),
                question: "Why?".into(),
                options: None,
                answer: "because".into(),
                keywords: keywords
                    .iter()
                    .map(|(k, s)| Keyword { keyword: (*k).into(), synonyms: s.iter().map(|s| (*s).into()).collect() })
                    .collect(),
                kind: QaKind::Oe,
            },
        }
    }

    #[test]
    fn label_extraction() {
        assert_eq!(extract_label("The answer is B"), Some("B"));
        assert_eq!(extract_label("A man runs, so the answer is (C)."), Some("C"));
        assert_eq!(extract_label("I pick D."), Some("D"));
        assert_eq!(extract_label("no idea at all"), None);
        assert_eq!(extract_label("Answer: E"), Some("E"));
    }

    #[test]
    fn mc_examples() {
        let r = acc_mc(&[mc("B", "The answer is B", 0)]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        let r = acc_mc(&[mc("C", "cannot tell", 0)]).unwrap();
        assert_eq!((r.correct, r.unextractable), (0, 1));
        assert_eq!(r.flagged, vec!["v0/q1".to_string()]);
        let r = acc_mc(&[mc("A", "answer A", 0), mc("B", "answer B", 1), mc("C", "answer D", 2)]).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-9);
        assert!(acc_mc(&[]).is_err());
        assert!(acc_mc(&[oe(&[("x", &[])], "x", 0)]).is_err());
    }

    #[test]
    fn keyword_examples() {
        let kw: &[(&str, &[&str])] = &[("fitness", &[]), ("event", &["gathering"])];
        let r = |out: &str| acc_oe_keywords(&[oe(kw, out, 0)]).unwrap().accuracy;
        assert_eq!(r("They came early. It is because they are at a fitness gathering."), 1.0);
        assert_eq!(r("They talk about fitness."), 0.5);
        assert_eq!(r("Nothing relevant."), 0.0);
        // Keywords outside the final two sentences do not count.
        assert_eq!(r("A fitness event. Then lunch. Then home."), 0.0);
        assert!(acc_oe_keywords(&[oe(&[], "x", 3)]).is_err());
    }

    #[test]
    fn judge_examples() {
        let recs: Vec<EvalRecord> = (0..4).map(|i| oe(&[("k", &[])], &format!("out{i}"), i)).collect();
        let all = FnJudge(|_: &str, _: &str, _: &str| Ok(true));
        assert_eq!(acc_oe_judge(&recs, &all, &RetryPolicy::immediate(0), 1).unwrap().accuracy, 1.0);
        let three = FnJudge(|_: &str, _: &str, o: &str| Ok(o != "out3"));
        assert_eq!(acc_oe_judge(&recs, &three, &RetryPolicy::immediate(0), 2).unwrap().accuracy, 0.75);
        let flaky = FnJudge(|_: &str, _: &str, o: &str| match o {
            "out0" => Err(ProviderError::Timeout),
            "out1" => Ok(false),
            _ => Ok(true),
        });
        let r = acc_oe_judge(&recs, &flaky, &RetryPolicy::immediate(2), 4).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!((r.evaluated, r.unevaluated), (3, 1));
        assert_eq!(r.failures.keys().collect::<Vec<_>>(), ["v0/q2"]);
    }

    #[test]
    fn length_examples() {
        let b = length_distribution(&["a b c", "one two three four five six seven"], 5).unwrap();
        assert_eq!(b, vec![LengthBucket { start: 0, end: 5, count: 1 }, LengthBucket { start: 5, end: 10, count: 1 }]);
        assert!(length_distribution::<&str>(&[], 5).unwrap().is_empty());
        let long = vec!["word"; 120].join(" ");
        assert_eq!(length_distribution(&[long], 50).unwrap(), vec![LengthBucket { start: 100, end: 150, count: 1 }]);
        assert!(length_distribution(&["x"], 0).is_err());
    }

    #[test]
    fn top_word_examples() {
        let lex = PosLexicon::english();
        let texts = ["The man runs and the person waves.", "The man sits. Therefore, the person waits.", "Man and person. Therefore man, therefore person."];
        let nouns = top_words(&texts, PosCategory::Noun, 2, &lex).unwrap();
        assert_eq!(nouns, vec![WordCount { word: "man".into(), count: 4 }, WordCount { word: "person".into(), count: 4 }]);
        let conj = top_words(&texts, PosCategory::Conjunction, 5, &lex).unwrap();
        assert_eq!(conj[0], WordCount { word: "therefore".into(), count: 3 });
        assert!(top_words::<&str>(&[], PosCategory::Verb, 5, &lex).unwrap().is_empty());
    }

    #[test]
    fn svg_has_one_bar_per_entry() {
        let lex = PosLexicon::english();
        let r = analyze(&["The man runs. Therefore he wins."], 10, 5, &lex).unwrap();
        let svgs = render_svgs(&r);
        assert_eq!(svgs["lengths"].matches("<rect").count(), r.length_distribution.len());
        assert!(svgs["conjunctions"].contains("therefore"));
    }

    proptest! {
        #[test]
        fn keyword_metric_invariant_under_permutation(
            hits in proptest::collection::vec(proptest::collection::btree_set(0usize..5, 0..5), 1..8),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let pool = ["ball", "rope", "kite", "fitness", "party"];
            let recs: Vec<EvalRecord> = hits.iter().enumerate().map(|(i, h): (usize, &BTreeSet<usize>)| {
                let out = format!("Intro. Summary with {}.", h.iter().map(|j| pool[*j]).collect::<Vec<_>>().join(" "));
                let kws: Vec<(&str, &[&str])> = pool.iter().map(|k| (*k, &[][..])).collect();
                oe(&kws, &out, i)
            }).collect();
            let base = acc_oe_keywords(&recs).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut shuffled = recs.clone();
            shuffled.shuffle(&mut rng);
            for r in &mut shuffled {
                r.gold.keywords.shuffle(&mut rng);
            }
            prop_assert_eq!(acc_oe_keywords(&shuffled).unwrap(), base.clone());
            let expected = hits.iter().map(|h| h.len() as f64 / 5.0).sum::<f64>() / hits.len() as f64;
            prop_assert!((base.accuracy - expected).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&base.accuracy));
        }

        #[test]
        fn mc_counts_partition(labels in proptest::collection::vec((0usize..5, 0usize..6), 1..30)) {
            let recs: Vec<EvalRecord> = labels.iter().enumerate().map(|(i, (g, o))| {
                let out = if *o == 5 { "unsure".to_string() } else { format!("answer {}", LABELS[*o]) };
                mc(LABELS[*g], &out, i)
            }).collect();
            let r = acc_mc(&recs).unwrap();
            prop_assert_eq!(r.correct + r.wrong + r.unextractable, r.total);
            prop_assert!((0.0..=1.0).contains(&r.accuracy));
        }

        #[test]
        fn histogram_mass(lens in proptest::collection::vec(0usize..300, 0..40), width in 1usize..60) {
            let texts: Vec<String> = lens.iter().map(|n| vec!["w"; *n].join(" ")).collect();
            let b = length_distribution(&texts, width).unwrap();
            prop_assert_eq!(b.iter().map(|b| b.count).sum::<u64>(), texts.len() as u64);
        }
    }
}
