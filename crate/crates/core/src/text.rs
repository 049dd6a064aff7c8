//! Small text normalization helpers shared by the router, grounding and KG modules.

/// Lowercases, deletes hyphens, and splits on anything that is not alphanumeric.
///
/// Hyphen deletion makes `h-index`, `H-Index` and `HIndex` all normalize to
/// the single token `hindex`.
pub fn match_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if is_hyphen(ch) {
            continue;
        }
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn is_hyphen(ch: char) -> bool {
    matches!(ch, '-' | '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}')
}

/// True if `needle` occurs as a contiguous run inside `haystack`.
pub fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Lowercase, punctuation replaced by spaces, whitespace collapsed.
pub fn normalize_title(text: &str) -> String {
    word_spans(text)
        .into_iter()
        .map(|w| w.lower)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A word of the original text with its byte span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
    pub lower: String,
}

/// Alphanumeric runs with byte offsets into `text`.
pub fn word_spans(text: &str) -> Vec<WordSpan> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            out.push(WordSpan {
                start: s,
                end: i,
                lower: text[s..i].to_lowercase(),
            });
        }
    }
    if let Some(s) = start {
        out.push(WordSpan {
            start: s,
            end: text.len(),
            lower: text[s..].to_lowercase(),
        });
    }
    out
}

/// Collapses every whitespace run to one space and trims.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyphen_insensitive_tokens() {
        assert_eq!(match_tokens("H-Index"), vec!["hindex"]);
        assert_eq!(
            match_tokens("the HIndex of X?"),
            vec!["the", "hindex", "of", "x"]
        );
        assert_eq!(match_tokens("i10-index"), vec!["i10index"]);
    }

    #[test]
    fn phrase_matching_is_contiguous() {
        let hay = match_tokens("what is the citation count of X");
        assert!(contains_phrase(&hay, &match_tokens("citation count")));
        assert!(!contains_phrase(&hay, &match_tokens("count citation")));
        assert!(!contains_phrase(&hay, &[]));
    }

    #[test]
    fn title_normalization() {
        assert_eq!(
            normalize_title("  Attention Is All\tYou Need! "),
            "attention is all you need"
        );
        assert_eq!(normalize_title("BERT: Pre-training"), "bert pre training");
    }

    #[test]
    fn word_spans_have_byte_offsets() {
        let s = "né le 'X'";
        let spans = word_spans(s);
        assert_eq!(spans.len(), 3);
        assert_eq!(&s[spans[0].start..spans[0].end], "né");
        assert_eq!(&s[spans[2].start..spans[2].end], "X");
    }
}
