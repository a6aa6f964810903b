//! Shared setup for the criterion benches.

use anchornav_core::ingest::{parse_layout, AnchorKind};
use anchornav_core::synthetic::{synthetic_payload, SyntheticSpec};
use anchornav_core::{DocumentIndex, EngineConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Index over a synthetic document of `pages` pages.
pub fn synthetic_index(pages: u32) -> DocumentIndex {
    let spec = SyntheticSpec { doc_id: format!("bench-{pages}"), pages, ..SyntheticSpec::default() };
    let record = parse_layout(&synthetic_payload(&spec)).expect("synthetic payload parses");
    DocumentIndex::with_defaults(record, &EngineConfig::default()).expect("synthetic document indexes")
}

/// Three to five consecutive words lifted from random paragraphs.
pub fn sample_queries(index: &DocumentIndex, count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &index.record;
    let paras: Vec<_> = r.anchors.iter().filter(|a| a.kind == AnchorKind::Para).collect();
    (0..count)
        .map(|_| {
            let words: Vec<&str> = r.text(paras.choose(&mut rng).expect("has paragraphs")).split_whitespace().collect();
            let n = rng.gen_range(3..=5).min(words.len());
            let start = rng.gen_range(0..=words.len() - n);
            words[start..start + n].join(" ")
        })
        .collect()
}

/// A paragraph excerpt with every tenth character replaced.
pub fn corrupted_excerpt(index: &DocumentIndex, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &index.record;
    let a = r.anchors.iter().filter(|a| a.kind == AnchorKind::Para).collect::<Vec<_>>()[rng.gen_range(0..50)];
    r.text(a)
        .chars()
        .take(60)
        .enumerate()
        .map(|(i, c)| if i % 10 == 9 { 'x' } else { c })
        .collect()
}
