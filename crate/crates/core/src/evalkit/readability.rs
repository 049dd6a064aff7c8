//! SMOG readability with pinned syllable and sentence rules.

use std::sync::LazyLock;

use regex::Regex;

use super::EvalError;

pub const SYLLABLE_RULES: &str = include_str!("../../data/syllable_rules.txt");
pub const ABBREVIATIONS: &str = include_str!("../../data/abbreviations.txt");

struct SyllableRules {
    rules: Vec<(i32, Regex)>,
}

static RULES: LazyLock<SyllableRules> = LazyLock::new(|| {
    let rules = SYLLABLE_RULES
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (delta, pattern) = l
                .split_once(char::is_whitespace)
                .expect("rule is '<delta> <regex>'");
            (
                delta.parse().expect("integer delta"),
                Regex::new(pattern.trim()).expect("rule regex"),
            )
        })
        .collect();
    SyllableRules { rules }
});

static ABBREVS: LazyLock<Vec<String>> = LazyLock::new(|| {
    ABBREVIATIONS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
});

fn is_vowel(c: char, first: bool) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u') || (c == 'y' && !first)
}

/// Vowel groups adjusted by the shipped rule list; at least 1 for any word
/// containing a letter, 0 otherwise.
pub fn syllables(word: &str) -> usize {
    let w: String = word
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphabetic())
        .collect();
    if w.is_empty() {
        return 0;
    }
    let mut groups = 0i32;
    let mut in_group = false;
    for (i, c) in w.chars().enumerate() {
        let v = is_vowel(c, i == 0);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    for (delta, re) in &RULES.rules {
        groups += delta * re.find_iter(&w).count() as i32;
    }
    groups.max(1) as usize
}

pub fn is_polysyllable(word: &str) -> bool {
    syllables(word) >= 3
}

static BOUNDARY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"[.!?]+["'”’)\]]*\s+"#).unwrap());

/// Splits on terminal punctuation followed by whitespace and a capital
/// letter, except after a listed abbreviation. Fragments without any
/// alphanumeric character are discarded.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for m in BOUNDARY.find_iter(text) {
        let next_upper = text[m.end()..]
            .chars()
            .next()
            .is_some_and(char::is_uppercase);
        if !next_upper {
            continue;
        }
        let before = &text[start..m.start()];
        let last_word = before
            .rsplit(char::is_whitespace)
            .next()
            .unwrap_or("")
            .to_lowercase();
        let punct = m.as_str().trim_end();
        if punct.starts_with('.') && punct.len() == 1 && ABBREVS.contains(&format!("{last_word}."))
        {
            continue;
        }
        let end = m.start() + punct.len();
        out.push(text[start..end].trim());
        start = m.end();
    }
    out.push(text[start..].trim());
    out.retain(|s| s.chars().any(char::is_alphanumeric));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmogCounts {
    pub sentences: usize,
    pub polysyllables: usize,
}

/// Sentence and polysyllable totals over all texts. Each text is split on
/// its own, so text boundaries are sentence boundaries.
pub fn smog_counts<S: AsRef<str>>(texts: &[S]) -> SmogCounts {
    let mut sentences = 0;
    let mut polysyllables = 0;
    for t in texts {
        let parts = split_sentences(t.as_ref());
        sentences += parts.len();
        for s in parts {
            polysyllables += s
                .split(|c: char| !c.is_alphabetic())
                .filter(|w| is_polysyllable(w))
                .count();
        }
    }
    SmogCounts {
        sentences,
        polysyllables,
    }
}

pub fn smog_formula(polysyllables: usize, sentences: usize) -> f64 {
    1.0430 * (polysyllables as f64 * 30.0 / sentences as f64).sqrt() + 3.1291
}

/// Aggregate SMOG grade over the concatenation of `texts`.
pub fn smog_index<S: AsRef<str>>(texts: &[S]) -> Result<f64, EvalError> {
    let c = smog_counts(texts);
    if c.sentences < 3 {
        return Err(EvalError::InsufficientText {
            sentences: c.sentences,
        });
    }
    Ok(smog_formula(c.polysyllables, c.sentences))
}
