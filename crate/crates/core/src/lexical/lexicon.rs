use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stem::{fold, strip_inflection};
use super::tokenize::{tokenize, EOS};
use crate::error::{Error, Result};

const NOUNS: &str = include_str!("../../data/nouns.txt");
const VERBS: &str = include_str!("../../data/verbs.txt");
const CONJUNCTIONS: &str = include_str!("../../data/conjunctions.txt");
const CLOSED_CLASS: &str = include_str!("../../data/closed_class.txt");
const ABSTRACT_NOUNS: &str = include_str!("../../data/abstract_nouns.txt");
const VERB_ALLOWLIST: &str = include_str!("../../data/verb_allowlist.txt");

/// Parses a plain-text term list: one term per line, `#` starts a comment.
pub fn parse_term_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn load_term_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_term_list(&text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosCategory {
    Noun,
    Verb,
    Conjunction,
    Other,
}

/// Where a tag came from; only lexicon hits are trusted for hallucination checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagSource {
    /// Matched a lexicon entry, possibly after stripping an inflection.
    Lexicon { lemma: String },
    SuffixRule,
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag {
    pub category: PosCategory,
    pub source: TagSource,
}

/// Lexicon-plus-suffix part-of-speech tagger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosLexicon {
    pub noun_terms: BTreeSet<String>,
    pub verb_terms: BTreeSet<String>,
    pub conjunction_terms: BTreeSet<String>,
    /// Function words forced to [`PosCategory::Other`] before suffix rules run.
    #[serde(default)]
    pub closed_class_terms: BTreeSet<String>,
    pub suffix_rules: Vec<(String, PosCategory)>,
}

impl PosLexicon {
    pub fn new(
        noun_terms: BTreeSet<String>,
        verb_terms: BTreeSet<String>,
        conjunction_terms: BTreeSet<String>,
        closed_class_terms: BTreeSet<String>,
        suffix_rules: Vec<(String, PosCategory)>,
    ) -> Result<Self> {
        let lex = Self { noun_terms, verb_terms, conjunction_terms, closed_class_terms, suffix_rules };
        lex.check_disjoint()?;
        Ok(lex)
    }

    /// The shipped English lexicon.
    pub fn english() -> Self {
        Self::new(
            parse_term_list(NOUNS),
            parse_term_list(VERBS),
            parse_term_list(CONJUNCTIONS),
            parse_term_list(CLOSED_CLASS),
            default_suffix_rules(),
        )
        .expect("shipped lexicon is disjoint")
    }

    fn check_disjoint(&self) -> Result<()> {
        let sets = [
            ("noun", &self.noun_terms),
            ("verb", &self.verb_terms),
            ("conjunction", &self.conjunction_terms),
            ("closed-class", &self.closed_class_terms),
        ];
        for (i, (a_name, a)) in sets.iter().enumerate() {
            for (b_name, b) in &sets[i + 1..] {
                if let Some(t) = a.intersection(b).next() {
                    return Err(Error::invalid(format!(
                        "lexicon sets {a_name} and {b_name} overlap on {t:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn lookup(&self, token: &str) -> Option<(PosCategory, String)> {
        if self.closed_class_terms.contains(token) {
            return Some((PosCategory::Other, token.to_string()));
        }
        let exact = [
            (PosCategory::Noun, &self.noun_terms),
            (PosCategory::Verb, &self.verb_terms),
            (PosCategory::Conjunction, &self.conjunction_terms),
        ];
        for (cat, set) in exact {
            if set.contains(token) {
                return Some((cat, token.to_string()));
            }
        }
        let base = strip_inflection(token);
        if base == token {
            return None;
        }
        let verbal = token.ends_with("ing") || token.ends_with("ed");
        let order: [(PosCategory, &BTreeSet<String>); 2] = if verbal {
            [(PosCategory::Verb, &self.verb_terms), (PosCategory::Noun, &self.noun_terms)]
        } else {
            [(PosCategory::Noun, &self.noun_terms), (PosCategory::Verb, &self.verb_terms)]
        };
        let mut candidates = vec![base.clone(), format!("{base}e")];
        let chars: Vec<char> = base.chars().collect();
        if chars.len() >= 2 && chars[chars.len() - 1] == chars[chars.len() - 2] {
            candidates.push(chars[..chars.len() - 1].iter().collect());
        }
        for (cat, set) in order {
            // Nouns only inflect for plural.
            if cat == PosCategory::Noun && verbal {
                continue;
            }
            if let Some(hit) = candidates.iter().find(|c| set.contains(c.as_str())) {
                return Some((cat, hit.clone()));
            }
        }
        None
    }

    /// Tags a normalized token: lexicon first, then suffix rules, else other.
    pub fn tag_detailed(&self, token: &str) -> Tag {
        if let Some((category, lemma)) = self.lookup(token) {
            return Tag { category, source: TagSource::Lexicon { lemma } };
        }
        let len = token.chars().count();
        for (suffix, cat) in &self.suffix_rules {
            if token.ends_with(suffix.as_str()) && len >= suffix.chars().count() + 3 {
                return Tag { category: *cat, source: TagSource::SuffixRule };
            }
        }
        Tag { category: PosCategory::Other, source: TagSource::Default }
    }

    pub fn tag(&self, token: &str) -> PosCategory {
        self.tag_detailed(token).category
    }
}

impl Default for PosLexicon {
    fn default() -> Self {
        Self::english()
    }
}

pub fn default_suffix_rules() -> Vec<(String, PosCategory)> {
    [
        ("tion", PosCategory::Noun),
        ("sion", PosCategory::Noun),
        ("ment", PosCategory::Noun),
        ("ness", PosCategory::Noun),
        ("ity", PosCategory::Noun),
        ("ance", PosCategory::Noun),
        ("ence", PosCategory::Noun),
        ("ship", PosCategory::Noun),
        ("ize", PosCategory::Verb),
        ("ise", PosCategory::Verb),
        ("ify", PosCategory::Verb),
        ("ing", PosCategory::Verb),
        ("ed", PosCategory::Verb),
    ]
    .into_iter()
    .map(|(s, c)| (s.to_string(), c))
    .collect()
}

/// Terms excluded from hallucination counting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allowlist {
    pub nouns: BTreeSet<String>,
    pub verbs: BTreeSet<String>,
}

impl Default for Allowlist {
    fn default() -> Self {
        Self { nouns: parse_term_list(ABSTRACT_NOUNS), verbs: parse_term_list(VERB_ALLOWLIST) }
    }
}

/// A set of phrases matched as whole-token subsequences of a token stream.
///
/// Phrases never match across a sentence boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct PhraseSet {
    phrases: Vec<String>,
    #[serde(skip)]
    tokenized: Vec<Vec<String>>,
}

impl PhraseSet {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let phrases: Vec<String> = phrases.into_iter().map(Into::into).collect();
        let tokenized = phrases
            .iter()
            .map(|p| tokenize(p).into_iter().filter(|t| t != EOS).collect::<Vec<_>>())
            .filter(|t: &Vec<String>| !t.is_empty())
            .collect();
        Self { phrases, tokenized }
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn is_empty(&self) -> bool {
        self.tokenized.is_empty()
    }

    /// True iff any phrase occurs in `tokens`.
    pub fn matches(&self, tokens: &[String]) -> bool {
        self.tokenized.iter().any(|p| find_subsequence(tokens, p).is_some())
    }
}

impl From<Vec<String>> for PhraseSet {
    fn from(v: Vec<String>) -> Self {
        PhraseSet::new(v)
    }
}

impl From<PhraseSet> for Vec<String> {
    fn from(p: PhraseSet) -> Self {
        p.phrases
    }
}

/// Start index of the first occurrence of `needle` in `haystack`.
pub fn find_subsequence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Every start index where `needle` occurs, compared by fold key.
pub fn find_folded(haystack_keys: &[String], needle_keys: &[String]) -> Vec<usize> {
    if needle_keys.is_empty() || needle_keys.len() > haystack_keys.len() {
        return Vec::new();
    }
    haystack_keys
        .windows(needle_keys.len())
        .enumerate()
        .filter(|(_, w)| *w == needle_keys)
        .map(|(i, _)| i)
        .collect()
}

/// Fold keys of a phrase's word tokens.
pub fn phrase_keys(phrase: &str) -> Vec<String> {
    tokenize(phrase).iter().filter(|t| *t != EOS).map(|t| fold(t)).collect()
}
