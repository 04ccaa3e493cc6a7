//! Shared text utilities: tokenization, normalization, sentence splitting.

/// Lowercase tokens split on non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Case-folded, punctuation-stripped, whitespace-collapsed form.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// True iff the normalized needle occurs as a token-boundary substring of the
/// normalized haystack.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let needle = normalize(needle);
    if needle.is_empty() {
        return false;
    }
    let hay = format!(" {} ", normalize(haystack));
    hay.contains(&format!(" {needle} "))
}

/// Splits on `.`, `!`, `?` followed by whitespace (or end of text).
/// Abbreviations are not special-cased.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            match chars.peek() {
                Some(next) if next.is_whitespace() => {
                    let s = current.trim();
                    if !s.is_empty() {
                        sentences.push(s.to_string());
                    }
                    current.clear();
                }
                None => {}
                _ => {}
            }
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        sentences.push(s.to_string());
    }
    sentences
}

/// FNV-1a over the input bytes; stable across runs and platforms.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Query content words: tokens that are not question/function words.
pub fn content_words(query: &str) -> Vec<String> {
    tokenize(query)
        .into_iter()
        .filter(|t| !STOP.contains(&t.as_str()))
        .collect()
}

const STOP: &[&str] = &[
    "what", "who", "whom", "whose", "which", "where", "when", "why", "how", "is", "are", "was",
    "were", "the", "a", "an", "of", "in", "on", "for", "to", "do", "does", "did",
];

/// Like [`content_words`] but preserving the original casing, for use when
/// composing document text.
pub fn content_words_cased(query: &str) -> Vec<String> {
    query
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOP.contains(&t.to_lowercase().as_str()))
        .map(|t| t.to_string())
        .collect()
}
