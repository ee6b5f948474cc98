//! Interpolated add-k n-gram language model and perplexity.
//!
//! Each order `j` estimates `p_j(w | h) = (c(h, w) + k) / (c(h) + k * V)` where
//! `V` is the number of predictable types (vocabulary, end-of-sentence and the
//! unknown slot) and `c(h)` is the total count of n-grams extending `h`.
//! Orders are mixed with fixed interpolation weights.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, BOS, EOS, UNK};
use crate::error::{Error, Result};

const SEED_CORPUS: &str = include_str!("../../data/seed_corpus.txt");
const FORMAT_VERSION: u32 = 1;

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_SMOOTHING_K: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct NGramModel {
    order: usize,
    smoothing_k: f64,
    interpolation_weights: Vec<f64>,
    vocabulary: BTreeSet<String>,
    /// `counts[j]` holds n-grams of length `j + 1`, keyed by space-joined tokens.
    counts: Vec<BTreeMap<String, u64>>,
    /// `context_counts[j]` sums `counts[j]` over the final token.
    context_counts: Vec<HashMap<String, u64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    smoothing_k: f64,
    interpolation_weights: Vec<f64>,
    vocabulary: BTreeSet<String>,
    counts: Vec<BTreeMap<String, u64>>,
}

impl From<NGramModel> for ModelFile {
    fn from(m: NGramModel) -> Self {
        ModelFile {
            version: FORMAT_VERSION,
            order: m.order,
            smoothing_k: m.smoothing_k,
            interpolation_weights: m.interpolation_weights,
            vocabulary: m.vocabulary,
            counts: m.counts,
        }
    }
}

impl TryFrom<ModelFile> for NGramModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", f.version)));
        }
        if f.counts.len() != f.order {
            return Err(Error::invalid("count tables do not match model order"));
        }
        let mut m = NGramModel::empty(f.order, f.smoothing_k, f.vocabulary)?;
        m.set_weights(f.interpolation_weights)?;
        m.counts = f.counts;
        m.rebuild_contexts();
        Ok(m)
    }
}

fn validate_k(k: f64) -> Result<()> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid(format!("smoothing_k must be positive, got {k}")));
    }
    Ok(())
}

/// Tokenized text ending in exactly one sentence marker.
fn padded_stream(text: &str) -> Vec<String> {
    let mut tokens = tokenize(text);
    if !tokens.is_empty() && tokens.last().map(String::as_str) != Some(EOS) {
        tokens.push(EOS.to_string());
    }
    tokens
}

fn context_key(ngram: &str) -> &str {
    ngram.rsplit_once(' ').map_or("", |(ctx, _)| ctx)
}

impl NGramModel {
    fn empty(order: usize, smoothing_k: f64, vocabulary: BTreeSet<String>) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("order must be at least 1"));
        }
        validate_k(smoothing_k)?;
        Ok(Self {
            order,
            smoothing_k,
            interpolation_weights: vec![1.0 / order as f64; order],
            vocabulary,
            counts: vec![BTreeMap::new(); order],
            context_counts: vec![HashMap::new(); order],
        })
    }

    /// Trains on a corpus; each text is one stream padded with `order - 1`
    /// begin markers and closed with an end marker.
    pub fn train<S: AsRef<str>>(corpus: &[S], order: usize, smoothing_k: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot train a language model on an empty corpus"));
        }
        let mut model = Self::empty(order, smoothing_k, BTreeSet::new())?;
        for text in corpus {
            let tokens = padded_stream(text.as_ref());
            if tokens.is_empty() {
                continue;
            }
            for t in &tokens {
                if t != EOS {
                    model.vocabulary.insert(t.clone());
                }
            }
            let mut stream: Vec<&str> = vec![BOS; order - 1];
            stream.extend(tokens.iter().map(String::as_str));
            for pos in (order - 1)..stream.len() {
                for len in 1..=order {
                    let gram = stream[pos + 1 - len..=pos].join(" ");
                    *model.counts[len - 1].entry(gram).or_insert(0) += 1;
                }
            }
        }
        if model.counts[0].is_empty() {
            return Err(Error::invalid("corpus contains no tokens"));
        }
        model.rebuild_contexts();
        Ok(model)
    }

    /// A model with no observations: every token has probability `1 / V`
    /// where `V = |vocabulary| + 2` (end marker and unknown slot).
    pub fn uniform<I, S>(vocabulary: I, order: usize, smoothing_k: f64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::empty(order, smoothing_k, vocabulary.into_iter().map(Into::into).collect())
    }

    /// The trigram model over the shipped bootstrap corpus plus `extra` texts.
    pub fn seed<S: AsRef<str>>(extra: &[S]) -> Self {
        let mut corpus: Vec<&str> = SEED_CORPUS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        corpus.extend(extra.iter().map(AsRef::as_ref));
        Self::train(&corpus, DEFAULT_ORDER, DEFAULT_SMOOTHING_K).expect("seed corpus is non-empty")
    }

    pub fn seed_corpus() -> Vec<&'static str> {
        SEED_CORPUS.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect()
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.set_weights(weights)?;
        Ok(self)
    }

    fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.order {
            return Err(Error::invalid(format!(
                "expected {} interpolation weights, got {}",
                self.order,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("interpolation weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("interpolation weights sum to {total}, not 1")));
        }
        self.interpolation_weights = weights;
        Ok(())
    }

    fn rebuild_contexts(&mut self) {
        self.context_counts = self
            .counts
            .iter()
            .map(|table| {
                let mut ctx: HashMap<String, u64> = HashMap::new();
                for (gram, c) in table {
                    *ctx.entry(context_key(gram).to_string()).or_insert(0) += c;
                }
                ctx
            })
            .collect();
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn interpolation_weights(&self) -> &[f64] {
        &self.interpolation_weights
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    /// Count of an n-gram given as tokens; length selects the table.
    pub fn count(&self, ngram: &[&str]) -> u64 {
        match ngram.len() {
            0 => 0,
            n if n > self.order => 0,
            n => self.counts[n - 1].get(&ngram.join(" ")).copied().unwrap_or(0),
        }
    }

    /// Number of predictable types: vocabulary, end marker and unknown slot.
    pub fn predictable_types(&self) -> usize {
        self.vocabulary.len() + 2
    }

    fn normalize<'a>(&self, token: &'a str) -> &'a str {
        if token == EOS || token == BOS || self.vocabulary.contains(token) {
            token
        } else {
            UNK
        }
    }

    /// Interpolated probability of `token` after `history` (most recent last).
    ///
    /// `history` may be shorter than `order - 1`; missing context is begin markers.
    pub fn probability(&self, history: &[&str], token: &str) -> f64 {
        let v = self.predictable_types() as f64;
        let k = self.smoothing_k;
        let token = self.normalize(token);
        let mut ctx: Vec<&str> = vec![BOS; (self.order - 1).saturating_sub(history.len())];
        ctx.extend(history.iter().map(|t| self.normalize(t)));
        let ctx = &ctx[ctx.len() - (self.order - 1)..];

        let mut p = 0.0;
        for j in 0..self.order {
            let h = &ctx[ctx.len() - j..];
            let h_key = h.join(" ");
            let gram = if h_key.is_empty() { token.to_string() } else { format!("{h_key} {token}") };
            let c_hw = self.counts[j].get(&gram).copied().unwrap_or(0) as f64;
            let c_h = self.context_counts[j].get(&h_key).copied().unwrap_or(0) as f64;
            p += self.interpolation_weights[j] * (c_hw + k) / (c_h + k * v);
        }
        p.min(1.0)
    }

    /// Per-token probabilities of `text` as scored by [`Self::perplexity`].
    pub fn token_probabilities(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = padded_stream(text);
        if tokens.is_empty() {
            return Err(Error::invalid("perplexity of an empty token stream"));
        }
        let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
        Ok((0..refs.len())
            .map(|i| {
                let start = i.saturating_sub(self.order - 1);
                self.probability(&refs[start..i], refs[i])
            })
            .collect())
    }

    /// `exp(-(1/N) * sum(ln p_i))`, computed relative to the largest
    /// probability so the result is exact for uniform streams and never below 1.
    pub fn perplexity(&self, text: &str) -> Result<f64> {
        let probs = self.token_probabilities(text)?;
        let p_max = probs.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        let mean_gap = probs.iter().map(|p| (p_max / p).ln()).sum::<f64>() / probs.len() as f64;
        Ok(mean_gap.exp() / p_max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Trains an n-gram model, rejecting empty corpora and non-positive smoothing.
pub fn train_lm<S: AsRef<str>>(corpus: &[S], order: usize, smoothing_k: f64) -> Result<NGramModel> {
    NGramModel::train(corpus, order, smoothing_k)
}

pub fn perplexity(model: &NGramModel, text: &str) -> Result<f64> {
    model.perplexity(text)
}
