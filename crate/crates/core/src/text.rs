//! Text normalization, ordinal extraction and sentence splitting.

use std::sync::LazyLock;

use regex::Regex;

static ORDINAL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{1,4})[.)]\s").expect("ordinal regex"));

/// Abbreviations that end in a period but never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "no.", "nos.", "sec.", "secs.", "vs.", "v.", "mr.", "mrs.", "ms.", "dr.", "smt.", "sh.",
    "shri.", "ltd.", "co.", "art.", "cl.", "ex.", "exh.", "para.", "paras.", "p.", "pp.", "viz.",
    "i.e.", "e.g.", "etc.", "r/o.", "s/o.", "d/o.", "w/o.", "u/s.", "hon.", "st.", "cr.", "crl.",
    "p.s.", "fir.",
];

/// Maps byte offsets of retained raw characters to byte offsets in the
/// normalized string. Monotone in both coordinates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OffsetMap {
    pairs: Vec<(usize, usize)>,
}

impl OffsetMap {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Normalized offset of the raw character starting at `raw`, if it was retained.
    pub fn get(&self, raw: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&raw, |&(r, _)| r)
            .ok()
            .map(|i| self.pairs[i].1)
    }

    /// Normalized offset of the first retained character at or after `raw`.
    pub fn ceil(&self, raw: usize) -> Option<usize> {
        let i = self.pairs.partition_point(|&(r, _)| r < raw);
        self.pairs.get(i).map(|&(_, n)| n)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }
}

/// Rejoin line-break hyphenation and collapse whitespace.
///
/// A hyphen directly followed by a line break is dropped together with the
/// break when the preceding character is a letter and the continuation starts
/// with a lowercase letter. Every other whitespace run becomes one space;
/// leading and trailing whitespace is removed.
pub fn normalize_text(raw: &str) -> (String, OffsetMap) {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let mut out = String::with_capacity(raw.len());
    let mut pairs = Vec::with_capacity(chars.len());
    let mut pending_space: Option<usize> = None;
    let mut prev_char: Option<char> = None;
    let mut i = 0;

    while i < chars.len() {
        let (off, c) = chars[i];
        if c == '-' && prev_char.is_some_and(char::is_alphabetic) {
            if let Some(next) = hyphen_break_end(&chars, i + 1) {
                i = next;
                continue;
            }
        }
        if c.is_whitespace() {
            if !out.is_empty() && pending_space.is_none() {
                pending_space = Some(off);
            }
            i += 1;
            continue;
        }
        if let Some(space_off) = pending_space.take() {
            pairs.push((space_off, out.len()));
            out.push(' ');
        }
        pairs.push((off, out.len()));
        out.push(c);
        prev_char = Some(c);
        i += 1;
    }

    (out, OffsetMap { pairs })
}

/// If `chars[start..]` is `[ \t]* (\r)?\n \s*` followed by a lowercase
/// letter, return the index of that letter.
fn hyphen_break_end(chars: &[(usize, char)], start: usize) -> Option<usize> {
    let mut j = start;
    while j < chars.len() && matches!(chars[j].1, ' ' | '\t') {
        j += 1;
    }
    if j < chars.len() && chars[j].1 == '\r' {
        j += 1;
    }
    if j >= chars.len() || chars[j].1 != '\n' {
        return None;
    }
    j += 1;
    while j < chars.len() && chars[j].1.is_whitespace() {
        j += 1;
    }
    match chars.get(j) {
        Some(&(_, c)) if c.is_lowercase() => Some(j),
        _ => None,
    }
}

/// Printed paragraph number at the start of normalized text ("23. The ...").
pub fn extract_ordinal(normalized: &str) -> Option<u32> {
    ORDINAL_RE
        .captures(normalized)
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse().ok())
}

/// Byte length of the first `n` sentences of `text`.
///
/// A boundary is `.`, `?` or `!` followed by a space and an uppercase letter,
/// unless the word carrying the period is a known abbreviation, a single
/// initial, or the leading paragraph number.
pub fn sentence_prefix_len(text: &str, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let mut found = 0;
    let bytes = text.as_bytes();
    for (i, c) in text.char_indices() {
        if !matches!(c, '.' | '?' | '!') {
            continue;
        }
        let end = i + 1;
        if bytes.get(end) != Some(&b' ') {
            continue;
        }
        let starts_upper = text[end + 1..]
            .chars()
            .next()
            .is_some_and(char::is_uppercase);
        if !starts_upper {
            continue;
        }
        if c == '.' && !period_ends_sentence(text, i) {
            continue;
        }
        found += 1;
        if found == n {
            return end;
        }
    }
    text.len()
}

fn period_ends_sentence(text: &str, period: usize) -> bool {
    let word_start = text[..period].rfind(' ').map_or(0, |p| p + 1);
    let word = &text[word_start..=period];
    let bare = &word[..word.len() - 1];
    if word_start == 0 && !bare.is_empty() && bare.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    let mut letters = bare.chars();
    if let (Some(c), None) = (letters.next(), letters.next()) {
        if c.is_alphabetic() {
            return false;
        }
    }
    let lower = word.to_lowercase();
    let trimmed = lower.trim_start_matches(['(', '"', '\'']);
    !ABBREVIATIONS.contains(&trimmed)
}
