//! Grounded-term coverage and hallucinated-mention detection.

use std::collections::BTreeSet;

use super::lexicon::{find_folded, phrase_keys, Allowlist, PosCategory, PosLexicon, TagSource};
use super::stem::fold;
use super::tokenize::{tokenize, EOS};
use crate::model::{GroundingAnnotation, MentionReport, Term};

/// Everything mention matching needs besides the text and grounding.
#[derive(Debug, Clone, Default)]
pub struct MentionMatcher {
    pub lexicon: PosLexicon,
    pub allowlist: Allowlist,
}

fn fold_stream(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| if t == EOS { EOS.to_string() } else { fold(t) }).collect()
}

struct Coverage {
    matched: Vec<String>,
    /// Fold keys of every single-word surface form.
    closure: BTreeSet<String>,
}

fn cover(terms: &[Term], keys: &[String], covered: &mut [bool]) -> Coverage {
    let mut matched = Vec::new();
    let mut closure = BTreeSet::new();
    for term in terms {
        let mut hit = false;
        for form in term.surface_forms() {
            let form_keys = phrase_keys(form);
            if form_keys.len() == 1 {
                closure.insert(form_keys[0].clone());
            }
            for start in find_folded(keys, &form_keys) {
                hit = true;
                covered[start..start + form_keys.len()].iter_mut().for_each(|c| *c = true);
            }
        }
        if hit && !matched.contains(&term.term) {
            matched.push(term.term.clone());
        }
    }
    Coverage { matched, closure }
}

impl MentionMatcher {
    pub fn new(lexicon: PosLexicon, allowlist: Allowlist) -> Self {
        Self { lexicon, allowlist }
    }

    pub fn match_text(&self, text: &str, grounding: &GroundingAnnotation) -> MentionReport {
        self.match_tokens(&tokenize(text), grounding)
    }

    /// Matches grounded terms (token subsequences, inflection-folded) and
    /// collects lexicon nouns/verbs that no grounded term accounts for.
    pub fn match_tokens(&self, tokens: &[String], grounding: &GroundingAnnotation) -> MentionReport {
        let keys = fold_stream(tokens);
        let mut obj_covered = vec![false; tokens.len()];
        let mut act_covered = vec![false; tokens.len()];
        let objects = cover(&grounding.objects, &keys, &mut obj_covered);
        let actions = cover(&grounding.actions, &keys, &mut act_covered);

        let mut neg_objects: Vec<String> = Vec::new();
        let mut neg_actions: Vec<String> = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            if tok == EOS || obj_covered[i] || act_covered[i] {
                continue;
            }
            let tag = self.lexicon.tag_detailed(tok);
            let TagSource::Lexicon { lemma } = tag.source else { continue };
            let lemma_key = fold(&lemma);
            match tag.category {
                PosCategory::Noun => {
                    if self.allowlist.nouns.contains(&lemma)
                        || objects.closure.contains(&keys[i])
                        || objects.closure.contains(&lemma_key)
                    {
                        continue;
                    }
                    if !neg_objects.contains(&lemma) {
                        neg_objects.push(lemma);
                    }
                }
                PosCategory::Verb => {
                    if self.allowlist.verbs.contains(&lemma)
                        || actions.closure.contains(&keys[i])
                        || actions.closure.contains(&lemma_key)
                    {
                        continue;
                    }
                    if !neg_actions.contains(&lemma) {
                        neg_actions.push(lemma);
                    }
                }
                _ => {}
            }
        }

        MentionReport {
            pos_objects: objects.matched,
            neg_objects,
            pos_actions: actions.matched,
            neg_actions,
        }
    }
}
