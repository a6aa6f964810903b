//! Mapping offsets and quoted text back to anchors.
//!
//! Fuzzy alignment compares the quote against every segment of length
//! `|q| * {0.8, 1.0, 1.2}` of every anchor and keeps the segment with the
//! smallest `levenshtein / max(len)`. Ties resolve to the earliest anchor,
//! then the earliest start, then the shortest segment. A bucketed character
//! histogram gives a lower bound that skips most segments without running
//! the DP; the DP itself stops once its row minimum cannot beat the current
//! best or the tolerance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CharRange, DocumentRecord};

pub const DEFAULT_TOLERANCE: f64 = 0.2;
const LENGTH_FACTORS: [f64; 3] = [0.8, 1.0, 1.2];
const BUCKETS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("offset {start}..{end} out of bounds for text of length {len}")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("quoted text is empty")]
    EmptyQuote,
    #[error("no anchor within tolerance {tolerance}")]
    NoAnchor { tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMethod {
    Exact,
    Tolerant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub anchor_id: String,
    pub position: usize,
    pub matched: CharRange,
    pub distance: f64,
    pub method: AlignMethod,
}

/// Anchor holding the majority of `offset`; ties go to the earlier anchor.
pub fn align_offset(record: &DocumentRecord, offset: CharRange) -> Result<usize, AlignError> {
    let len = record.canonical_text.len();
    if offset.start >= len || offset.end > len || offset.end < offset.start {
        return Err(AlignError::OutOfBounds { start: offset.start, end: offset.end, len });
    }
    let first = record.anchors.partition_point(|a| a.char_range.end <= offset.start);
    if offset.is_empty() {
        return Ok(first.min(record.anchors.len() - 1));
    }
    let mut best: Option<(usize, usize)> = None;
    for (pos, anchor) in record.anchors.iter().enumerate().skip(first) {
        if anchor.char_range.start >= offset.end {
            break;
        }
        let cover = anchor.char_range.overlap(&offset);
        if cover > 0 && best.is_none_or(|(_, c)| cover > c) {
            best = Some((pos, cover));
        }
    }
    // A range lying entirely on a separator falls to the following anchor.
    Ok(best.map_or(first.min(record.anchors.len() - 1), |(p, _)| p))
}

pub fn align_fuzzy(record: &DocumentRecord, quoted: &str, tolerance: f64) -> Result<AlignmentResult, AlignError> {
    if quoted.is_empty() {
        return Err(AlignError::EmptyQuote);
    }
    for (pos, anchor) in record.anchors.iter().enumerate() {
        if let Some(i) = record.text(anchor).find(quoted) {
            let start = anchor.char_range.start + i;
            return Ok(AlignmentResult {
                anchor_id: anchor.anchor_id.clone(),
                position: pos,
                matched: CharRange::new(start, start + quoted.len()),
                distance: 0.0,
                method: AlignMethod::Exact,
            });
        }
    }

    let q: Vec<char> = quoted.chars().collect();
    let mut search = Search::new(&q, tolerance);
    for (pos, anchor) in record.anchors.iter().enumerate() {
        let text = record.text(anchor);
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        search.scan_anchor(pos, &chars);
    }
    let Some(best) = search.best else {
        return Err(AlignError::NoAnchor { tolerance });
    };
    let distance = best.dist as f64 / best.denom as f64;
    if distance > tolerance {
        return Err(AlignError::NoAnchor { tolerance });
    }
    let anchor = &record.anchors[best.position];
    let text = record.text(anchor);
    let byte_at = |ci: usize| text.char_indices().nth(ci).map_or(text.len(), |(b, _)| b);
    let start = anchor.char_range.start + byte_at(best.start);
    let end = anchor.char_range.start + byte_at(best.start + best.len);
    Ok(AlignmentResult {
        anchor_id: anchor.anchor_id.clone(),
        position: best.position,
        matched: CharRange::new(start, end),
        distance,
        method: AlignMethod::Tolerant,
    })
}

#[derive(Debug, Clone, Copy)]
struct Best {
    position: usize,
    start: usize,
    len: usize,
    dist: usize,
    denom: usize,
}

struct Search<'q> {
    q: &'q [char],
    q_hist: [i32; BUCKETS],
    lengths: Vec<usize>,
    tolerance: f64,
    best: Option<Best>,
    prev: Vec<usize>,
    cur: Vec<usize>,
}

fn bucket(c: char) -> usize {
    (c as u32 as usize).wrapping_mul(0x9e37_79b1) >> 7 & (BUCKETS - 1)
}

impl<'q> Search<'q> {
    fn new(q: &'q [char], tolerance: f64) -> Self {
        let mut q_hist = [0i32; BUCKETS];
        for &c in q {
            q_hist[bucket(c)] += 1;
        }
        let n = q.len() as f64;
        let mut lengths: Vec<usize> = LENGTH_FACTORS
            .iter()
            .map(|f| ((n * f).round() as usize).max(1))
            .collect();
        lengths.sort_unstable();
        lengths.dedup();
        Self {
            q,
            q_hist,
            lengths,
            tolerance,
            best: None,
            prev: vec![0; q.len() + 1],
            cur: vec![0; q.len() + 1],
        }
    }

    /// True when `dist / denom` cannot be accepted or cannot beat the best.
    fn hopeless(&self, dist: usize, denom: usize) -> bool {
        if dist as f64 / denom as f64 > self.tolerance {
            return true;
        }
        match self.best {
            Some(b) => dist * b.denom > b.dist * denom,
            None => false,
        }
    }

    fn better(&self, dist: usize, denom: usize) -> bool {
        match self.best {
            Some(b) => dist * b.denom < b.dist * denom,
            None => true,
        }
    }

    fn scan_anchor(&mut self, position: usize, chars: &[(usize, char)]) {
        let n = chars.len();
        if n == 0 {
            return;
        }
        let mut lengths: Vec<usize> = self.lengths.iter().map(|&l| l.min(n)).collect();
        lengths.dedup();
        let qn = self.q.len();

        // Sliding histograms, one per segment length.
        let mut hists: Vec<[i32; BUCKETS]> = lengths
            .iter()
            .map(|&l| {
                let mut h = [0i32; BUCKETS];
                for &(_, c) in &chars[..l] {
                    h[bucket(c)] += 1;
                }
                h
            })
            .collect();

        let max_start = n - lengths[0];
        for start in 0..=max_start {
            if start > 0 {
                for (h, &l) in hists.iter_mut().zip(&lengths) {
                    if start + l - 1 < n {
                        h[bucket(chars[start - 1].1)] -= 1;
                        h[bucket(chars[start + l - 1].1)] += 1;
                    }
                }
            }
            let mut wanted: Vec<usize> = Vec::with_capacity(lengths.len());
            for (h, &l) in hists.iter().zip(&lengths) {
                if start + l > n {
                    continue;
                }
                let l1: i32 = h.iter().zip(&self.q_hist).map(|(a, b)| (a - b).abs()).sum();
                let lower = (l1 as usize).div_ceil(2).max(qn.abs_diff(l));
                if !self.hopeless(lower, qn.max(l)) {
                    wanted.push(l);
                }
            }
            if !wanted.is_empty() {
                self.run_dp(position, chars, start, &wanted);
            }
        }
    }

    /// Levenshtein of the quote against `chars[start..start + l]` for each
    /// wanted `l`, in one pass over the segment.
    fn run_dp(&mut self, position: usize, chars: &[(usize, char)], start: usize, wanted: &[usize]) {
        let qn = self.q.len();
        let l_max = *wanted.last().expect("non-empty");
        let denom_max = qn.max(l_max);
        for (i, v) in self.prev.iter_mut().enumerate() {
            *v = i;
        }
        let mut next_wanted = 0;
        for j in 1..=l_max {
            let sc = chars[start + j - 1].1;
            self.cur[0] = j;
            let mut row_min = j;
            for i in 1..=qn {
                let cost = usize::from(self.q[i - 1] != sc);
                let v = (self.prev[i - 1] + cost).min(self.prev[i] + 1).min(self.cur[i - 1] + 1);
                self.cur[i] = v;
                row_min = row_min.min(v);
            }
            std::mem::swap(&mut self.prev, &mut self.cur);
            if j == wanted[next_wanted] {
                let dist = self.prev[qn];
                let denom = qn.max(j);
                if dist as f64 / denom as f64 <= self.tolerance && self.better(dist, denom) {
                    self.best = Some(Best { position, start, len: j, dist, denom });
                }
                next_wanted += 1;
                if next_wanted == wanted.len() {
                    break;
                }
            }
            if self.hopeless(row_min, denom_max) {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_layout, AnchorKind, BBoxCoords, LayoutPayload, LayoutSpan};

    fn record(texts: &[&str]) -> DocumentRecord {
        let spans = texts
            .iter()
            .enumerate()
            .map(|(i, t)| LayoutSpan {
                span_id: format!("s{i}"),
                section_type: AnchorKind::Para,
                page_number: 1,
                bbox_coords: BBoxCoords { x0: 0.0, y0: i as f64 / 100.0, x1: 1.0, y1: 1.0 },
                content: t.to_string(),
                table: None,
                char_range: None,
            })
            .collect();
        parse_layout(&LayoutPayload { doc_id: "d".into(), page_count: 1, spans }).unwrap()
    }

    /// Independent textbook DP.
    fn levenshtein(a: &[char], b: &[char]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in d[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn offset_containment_and_majority() {
        let rec = record(&["aaaaaaaaaa", "bbbbbbbbbb", "cccccccccc"]);
        // anchors at 0..10, 11..21, 22..32
        assert_eq!(align_offset(&rec, CharRange::new(12, 15)), Ok(1));
        assert_eq!(align_offset(&rec, CharRange::new(15, 25)), Ok(1)); // 6 vs 3
        assert_eq!(align_offset(&rec, CharRange::new(18, 26)), Ok(2)); // 3 vs 4
        assert_eq!(align_offset(&rec, CharRange::new(0, 32)), Ok(0)); // all tie at 10
        assert_eq!(align_offset(&rec, CharRange::new(10, 11)), Ok(1)); // separator
        assert!(matches!(align_offset(&rec, CharRange::new(40, 41)), Err(AlignError::OutOfBounds { .. })));
        assert!(matches!(align_offset(&rec, CharRange::new(3, 33)), Err(AlignError::OutOfBounds { .. })));
    }

    #[test]
    fn offset_whole_document_picks_largest_anchor() {
        let rec = record(&["short", "a much longer anchor text", "another long anchor text!"]);
        let whole = CharRange::new(0, rec.canonical_text.len());
        let covers: Vec<usize> = rec.anchors.iter().map(|a| a.char_range.len()).collect();
        let max = *covers.iter().max().unwrap();
        let expected = covers.iter().position(|&c| c == max).unwrap();
        assert_eq!(align_offset(&rec, whole), Ok(expected));
        assert_eq!(expected, 1);
    }

    #[test]
    fn verbatim_quote_is_exact() {
        let rec = record(&["first", "the call detail records were seized", "third"]);
        let r = align_fuzzy(&rec, "call detail records", 0.2).unwrap();
        assert_eq!(r.method, AlignMethod::Exact);
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.position, 1);
        assert_eq!(&rec.canonical_text[r.matched.start..r.matched.end], "call detail records");
    }

    #[test]
    fn ocr_typo_aligns_tolerantly() {
        let rec = record(&["nothing here", "the call detail records were seized", "third"]);
        let r = align_fuzzy(&rec, "cal1 detail records", 0.2).unwrap();
        assert_eq!(r.method, AlignMethod::Tolerant);
        assert_eq!(r.position, 1);
        let q: Vec<char> = "cal1 detail records".chars().collect();
        let seg: Vec<char> = "call detail records".chars().collect();
        assert_eq!(levenshtein(&q, &seg), 1);
        assert!((r.distance - 1.0 / 19.0).abs() < 1e-12);
    }

    #[test]
    fn absent_text_has_no_anchor() {
        let rec = record(&["the call detail records were seized", "bail was granted"]);
        let e = align_fuzzy(&rec, "qzxv wkpj mnbt rrrr yyyy uuuu llll oooo", 0.2);
        assert!(matches!(e, Err(AlignError::NoAnchor { .. })));
        assert_eq!(align_fuzzy(&rec, "", 0.2), Err(AlignError::EmptyQuote));
    }

    #[test]
    fn tolerance_boundary() {
        // 10-char quote with 2 substitutions: distance exactly 0.2
        let rec = record(&["xx abcdefghij yy"]);
        let q = "abXdeYghij";
        assert!(align_fuzzy(&rec, q, 0.199).is_err());
        let r = align_fuzzy(&rec, q, 0.201).unwrap();
        assert!((r.distance - 0.2).abs() < 1e-12);
        assert!(align_fuzzy(&rec, q, 0.2).is_ok());
    }

    /// Exhaustive version of the same candidate set, no pruning.
    fn brute(rec: &DocumentRecord, quoted: &str) -> Option<(usize, usize, usize, f64)> {
        let q: Vec<char> = quoted.chars().collect();
        let mut lens: Vec<usize> = [0.8, 1.0, 1.2].iter().map(|f| ((q.len() as f64 * f).round() as usize).max(1)).collect();
        lens.sort_unstable();
        lens.dedup();
        let mut best: Option<(usize, usize, usize, usize, usize)> = None;
        for (pos, a) in rec.anchors.iter().enumerate() {
            let t: Vec<char> = rec.text(a).chars().collect();
            let mut ls: Vec<usize> = lens.iter().map(|&l| l.min(t.len())).collect();
            ls.dedup();
            for s in 0..t.len() {
                for &l in &ls {
                    if s + l > t.len() {
                        continue;
                    }
                    let d = levenshtein(&q, &t[s..s + l]);
                    let m = q.len().max(l);
                    if best.is_none_or(|(_, _, _, bd, bm)| d * bm < bd * m) {
                        best = Some((pos, s, l, d, m));
                    }
                }
            }
        }
        best.map(|(p, s, l, d, m)| (p, s, l, d as f64 / m as f64))
    }

    proptest::proptest! {
        #[test]
        fn pruned_search_matches_brute_force(
            texts in proptest::collection::vec("[abc ]{1,24}", 1..4),
            quoted in "[abcd]{1,8}",
            tol in 0.0f64..0.6,
        ) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let spans_ok = refs.iter().any(|t| !t.trim().is_empty());
            proptest::prop_assume!(spans_ok);
            let rec = record(&refs);
            let exact = rec.anchors.iter().any(|a| rec.text(a).contains(quoted.as_str()));
            proptest::prop_assume!(!exact);
            let got = align_fuzzy(&rec, &quoted, tol);
            let (p, s, l, d) = brute(&rec, &quoted).unwrap();
            if d <= tol {
                let r = got.unwrap();
                proptest::prop_assert_eq!(r.position, p);
                proptest::prop_assert!((r.distance - d).abs() < 1e-12);
                let seg: String = rec.text_at(p).chars().skip(s).take(l).collect();
                proptest::prop_assert_eq!(&rec.canonical_text[r.matched.start..r.matched.end], seg.as_str());
            } else {
                proptest::prop_assert!(got.is_err());
            }
        }

        #[test]
        fn tolerance_is_monotone(
            texts in proptest::collection::vec("[abc ]{1,24}", 1..4),
            quoted in "[abcd]{1,8}",
            t in 0.0f64..0.5,
            bump in 0.0f64..0.5,
        ) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            proptest::prop_assume!(refs.iter().any(|t| !t.trim().is_empty()));
            let rec = record(&refs);
            if let Ok(a) = align_fuzzy(&rec, &quoted, t) {
                let b = align_fuzzy(&rec, &quoted, t + bump).unwrap();
                proptest::prop_assert_eq!(a, b);
            }
        }
    }
}
