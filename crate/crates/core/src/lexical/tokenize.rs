//! Lowercasing word tokenizer with sentence-boundary markers.

/// Sentence-boundary marker emitted for `.`, `!`, `?` (and their CJK forms).
pub const EOS: &str = "</s>";
/// Left padding symbol used only as language-model context.
pub const BOS: &str = "<s>";
/// Slot for tokens never seen in training.
pub const UNK: &str = "<unk>";

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？')
}

/// Splits text into lowercase word tokens.
///
/// Punctuation is dropped, except sentence terminators which become a single
/// [`EOS`] per run. A `.` between two digits and an apostrophe between two
/// letters stay inside the word.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();

    let flush = |word: &mut String, tokens: &mut Vec<String>| {
        if !word.is_empty() {
            tokens.push(std::mem::take(word));
        }
    };

    for (i, &c) in chars.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else if c == '.'
            && !word.is_empty()
            && prev.is_some_and(|p| p.is_ascii_digit())
            && next.is_some_and(|n| n.is_ascii_digit())
        {
            word.push('.');
        } else if (c == '\'' || c == '’')
            && !word.is_empty()
            && prev.is_some_and(char::is_alphabetic)
            && next.is_some_and(char::is_alphabetic)
        {
            word.push('\'');
        } else {
            flush(&mut word, &mut tokens);
            if is_terminator(c) && tokens.last().is_some_and(|t| t != EOS) {
                tokens.push(EOS.to_string());
            }
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

/// Word tokens with sentence markers removed.
pub fn words(tokens: &[String]) -> impl Iterator<Item = &str> {
    tokens.iter().map(String::as_str).filter(|t| *t != EOS)
}

/// Renders tokens back into text that tokenizes to the same stream.
pub fn join_tokens(tokens: &[String]) -> String {
    tokens
        .iter()
        .map(|t| if t == EOS { "." } else { t.as_str() })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits a token stream into sentences at [`EOS`] markers; markers are dropped.
pub fn sentences(tokens: &[String]) -> Vec<&[String]> {
    tokens
        .split(|t| t == EOS)
        .filter(|s| !s.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn simple_sentence() {
        assert_eq!(toks("The girl stops."), ["the", "girl", "stops", EOS]);
    }

    #[test]
    fn empty() {
        assert!(toks("").is_empty());
        assert!(toks("  ...  ").is_empty());
    }

    #[test]
    fn punctuation_dropped() {
        assert_eq!(
            toks("Therefore, the answer is B."),
            ["therefore", "the", "answer", "is", "b", EOS]
        );
    }

    #[test]
    fn terminator_runs_collapse() {
        assert_eq!(toks("Wait... what?!"), ["wait", EOS, "what", EOS]);
    }

    #[test]
    fn decimals_and_contractions() {
        assert_eq!(toks("It's 3.5 m long."), ["it's", "3.5", "m", "long", EOS]);
        assert_eq!(toks("track-and-field"), ["track", "and", "field"]);
    }

    #[test]
    fn sentence_split() {
        let t = toks("One two. Three! Four");
        let s = sentences(&t);
        assert_eq!(s.len(), 3);
        assert_eq!(s[2], ["four"]);
    }

    proptest! {
        #[test]
        fn retokenizing_joined_stream_is_idempotent(text in "[a-zA-Z0-9 ,.!?'’\\-]{0,80}") {
            let first = tokenize(&text);
            let second = tokenize(&join_tokens(&first));
            prop_assert_eq!(first, second);
        }
    }
}
