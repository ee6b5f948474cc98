//! Deterministic text utilities: tokenization, part-of-speech lexicon,
//! n-gram perplexity and grounded mention matching.

pub mod lexicon;
pub mod lm;
pub mod mentions;
pub mod stem;
pub mod tokenize;

pub use lexicon::{Allowlist, PhraseSet, PosCategory, PosLexicon};
pub use lm::{perplexity, train_lm, NGramModel};
pub use mentions::MentionMatcher;
pub use tokenize::{tokenize, EOS};

use crate::model::{GroundingAnnotation, MentionReport};

pub fn tag_pos(token: &str, lexicon: &PosLexicon) -> PosCategory {
    lexicon.tag(token)
}

pub fn match_mentions(
    text: &str,
    grounding: &GroundingAnnotation,
    lexicon: &PosLexicon,
    allowlist: &Allowlist,
) -> MentionReport {
    MentionMatcher::new(lexicon.clone(), allowlist.clone()).match_text(text, grounding)
}
