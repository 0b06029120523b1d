//! Whitespace/punctuation tokenizer shared by the corpus filter, the encoder
//! and the BM25 index.

/// Splits on Unicode whitespace after deleting every character that is
/// neither alphanumeric nor whitespace. `"U.S. troops, 2021-05-01"` yields
/// `["US", "troops", "20210501"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.chars().filter(|c| c.is_alphanumeric()).collect::<String>())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Same as [`tokenize`] with every token lowercased.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.to_lowercase()).collect()
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace()
        .filter(|raw| raw.chars().any(char::is_alphanumeric))
        .count()
}
