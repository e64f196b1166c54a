//! Word tokenisation shared by language identification, statistics and the
//! encoders.

/// Devanagari block, minus the danda punctuation marks.
pub fn is_devanagari(c: char) -> bool {
    matches!(c, '\u{0900}'..='\u{097F}') && !matches!(c, '\u{0964}' | '\u{0965}')
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_devanagari(c) || c == '\''
}

/// Split on whitespace and punctuation. Apostrophes are kept inside words
/// (`it's`) and trimmed from their edges.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split(|c: char| !is_word_char(c))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Number of whitespace-separated tokens.
pub fn whitespace_len(text: &str) -> usize {
    text.split_whitespace().count()
}
