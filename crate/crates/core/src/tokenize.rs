//! Lowercased Unicode word tokenizer with legal citation bigrams.

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

/// Words that, when followed by a token starting with a digit, also emit a
/// joined citation token (`section 302` → `section_302`).
pub const DEFAULT_CITATION_PREFIXES: &[&str] = &[
    "section", "sec", "article", "art", "rule", "order", "clause", "exhibit", "ex", "annexure",
    "pw", "dw", "cw", "para", "paragraph", "schedule", "fir",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub citation_prefixes: Vec<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            citation_prefixes: DEFAULT_CITATION_PREFIXES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Tokenizer {
    /// Unigrams only, in text order.
    pub fn words(&self, text: &str) -> Vec<String> {
        text.unicode_words().map(str::to_lowercase).collect()
    }

    /// Unigrams followed by citation bigrams, for the lexical index.
    pub fn index_terms(&self, text: &str) -> Vec<String> {
        let mut words = self.words(text);
        let bigrams: Vec<String> = words
            .windows(2)
            .filter(|pair| {
                pair[1].chars().next().is_some_and(|c| c.is_ascii_digit())
                    && self.citation_prefixes.iter().any(|p| p == &pair[0])
            })
            .map(|pair| format!("{}_{}", pair[0], pair[1]))
            .collect();
        words.extend(bigrams);
        words
    }
}
