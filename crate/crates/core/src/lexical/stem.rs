//! Suffix-stripping match keys.
//!
//! These are not linguistic stems. Two inflections of the same word map to the
//! same key (`dances`, `danced`, `dancing` -> `danc`), which is all mention
//! matching needs.

const MIN_STEM: usize = 3;

fn strip<'a>(word: &'a str, suffix: &str) -> Option<&'a str> {
    word.strip_suffix(suffix).filter(|rest| rest.chars().count() >= MIN_STEM)
}

fn ends_with_sibilant(stem: &str) -> bool {
    ["s", "x", "z", "ch", "sh"].iter().any(|s| stem.ends_with(s))
}

/// Removes one inflectional suffix (`-ies`, `-es`, `-s`, `-ied`, `-ed`, `-ing`).
pub fn strip_inflection(word: &str) -> String {
    if let Some(rest) = strip(word, "ies").or_else(|| strip(word, "ied")) {
        return format!("{rest}y");
    }
    if let Some(rest) = strip(word, "es") {
        if ends_with_sibilant(rest) {
            return rest.to_string();
        }
    }
    if !word.ends_with("ss") && !word.ends_with("us") && !word.ends_with("is") {
        if let Some(rest) = strip(word, "s") {
            return rest.to_string();
        }
    }
    if let Some(rest) = strip(word, "ing").or_else(|| strip(word, "ed")) {
        return rest.to_string();
    }
    word.to_string()
}

/// Match key: inflection stripped, a final doubled consonant undoubled and a
/// final `e` dropped. Applied identically to text tokens and lexicon terms.
pub fn fold(word: &str) -> String {
    let mut key: Vec<char> = strip_inflection(word).chars().collect();
    let n = key.len();
    if n >= 2 {
        let (a, b) = (key[n - 2], key[n - 1]);
        if a == b && b.is_ascii_alphabetic() && !"aeioulsz".contains(b) {
            key.pop();
        }
    }
    if key.len() > MIN_STEM && key.last() == Some(&'e') {
        key.pop();
    }
    key.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verb_inflections_share_a_key() {
        for group in [
            ["run", "runs", "running"],
            ["dance", "dances", "dancing"],
            ["jump", "jumped", "jumping"],
            ["stop", "stopped", "stopping"],
            ["carry", "carries", "carried"],
        ] {
            let keys: Vec<_> = group.iter().map(|w| fold(w)).collect();
            assert!(keys.windows(2).all(|w| w[0] == w[1]), "{group:?} -> {keys:?}");
        }
    }

    #[test]
    fn plurals_share_a_key() {
        for (a, b) in [("girl", "girls"), ("box", "boxes"), ("glass", "glasses"), ("bicycle", "bicycles")] {
            assert_eq!(fold(a), fold(b));
        }
    }

    #[test]
    fn short_words_kept() {
        assert_eq!(fold("is"), "is");
        assert_eq!(fold("bus"), "bus");
        assert_eq!(fold("was"), "was");
        assert_eq!(fold("grass"), "grass");
    }
}
