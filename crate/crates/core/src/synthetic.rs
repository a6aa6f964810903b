//! Seeded generator of large layout payloads for load and oracle tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{AnchorKind, BBoxCoords, LayoutPayload, LayoutSpan, TableSpec};

const WORDS: &[&str] = &[
    "accused", "adjourned", "affidavit", "alibi", "appeal", "appellant", "arrest", "bail", "bench",
    "blood", "car", "canal", "case", "charge", "chargesheet", "complaint", "confession", "conviction",
    "counsel", "court", "cross", "custody", "dagger", "date", "death", "defence", "deposition",
    "detail", "diary", "dispute", "document", "evidence", "examination", "exhibit", "eyewitness",
    "finding", "forensic", "hearing", "hospital", "injury", "inquest", "investigation", "judge",
    "judgment", "knife", "ledger", "magistrate", "medical", "memo", "motive", "murder", "night",
    "notice", "officer", "order", "panchnama", "petition", "phone", "police", "postmortem",
    "prosecution", "recovery", "record", "remand", "report", "respondent", "scene", "seizure",
    "sentence", "statement", "station", "summons", "tower", "trial", "verdict", "victim", "village",
    "warrant", "weapon", "witness", "wound", "the", "of", "and", "to", "in", "was", "by", "on",
    "with", "that", "from", "at", "as", "is", "which", "after", "before", "under", "not",
];

const SYLLABLES: &[&str] = &[
    "ra", "ve", "ko", "mi", "tan", "dor", "shi", "lu", "pe", "gar", "nim", "sol", "bha", "ket",
    "vir", "jo", "mu", "zan", "ter", "pal",
];

const CITATIONS: &[&str] = &["Section", "PW", "DW", "Exhibit", "Article", "Rule"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub doc_id: String,
    pub pages: u32,
    pub paras_per_page: u32,
    /// A heading opens every this many pages.
    pub heading_every: u32,
    /// A 2x3 table is placed every this many pages; 0 disables tables.
    pub table_every: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            doc_id: "synthetic".into(),
            pages: 350,
            paras_per_page: 20,
            heading_every: 5,
            table_every: 25,
            seed: 7,
        }
    }
}

pub struct TextGen {
    rng: ChaCha8Rng,
    lexicon: Vec<String>,
}

impl TextGen {
    pub fn new(seed: u64, pseudo_words: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lexicon: Vec<String> = WORDS.iter().map(|w| w.to_string()).collect();
        for _ in 0..pseudo_words {
            let n = rng.gen_range(2..=4);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(&mut rng).expect("syllables")).collect();
            lexicon.push(w);
        }
        Self { rng, lexicon }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn word(&mut self) -> String {
        if self.rng.gen_bool(0.05) {
            let prefix = CITATIONS.choose(&mut self.rng).expect("citations");
            return format!("{prefix} {}", self.rng.gen_range(1..500));
        }
        self.lexicon.choose(&mut self.rng).expect("lexicon").clone()
    }

    pub fn sentence(&mut self, min: usize, max: usize) -> String {
        let n = self.rng.gen_range(min..=max);
        let mut words: Vec<String> = (0..n).map(|_| self.word()).collect();
        let first = &mut words[0];
        if let Some(c) = first.chars().next() {
            *first = c.to_uppercase().collect::<String>() + &first[c.len_utf8()..];
        }
        format!("{}.", words.join(" "))
    }

    pub fn paragraph(&mut self) -> String {
        let n = self.rng.gen_range(2..=3);
        (0..n).map(|_| self.sentence(6, 12)).collect::<Vec<_>>().join(" ")
    }
}

pub fn synthetic_payload(spec: &SyntheticSpec) -> LayoutPayload {
    let mut gen = TextGen::new(spec.seed, 3000);
    let mut spans = Vec::new();
    let mut ordinal = 0u32;
    let mut next_id = 0usize;
    let mut push = |spans: &mut Vec<LayoutSpan>, kind, page, y0: f64, x: (f64, f64), content: String, table| {
        spans.push(LayoutSpan {
            span_id: format!("syn-{next_id}"),
            section_type: kind,
            page_number: page,
            bbox_coords: BBoxCoords { x0: x.0, y0, x1: x.1, y1: (y0 + 0.03).min(1.0) },
            content,
            table,
            char_range: None,
        });
        next_id += 1;
    };
    let mut tables = 0;
    for page in 1..=spec.pages {
        let mut rows: u32 = spec.paras_per_page;
        let heading = spec.heading_every > 0 && (page - 1) % spec.heading_every == 0;
        let table = spec.table_every > 0 && page % spec.table_every == 0;
        if heading {
            rows += 1;
        }
        if table {
            rows += 2;
        }
        let step = 0.95 / rows as f64;
        let mut row = 0u32;
        let mut y = || {
            let v = 0.02 + step * row as f64;
            row += 1;
            v
        };
        if heading {
            let title = format!("PART {} {}", page / spec.heading_every.max(1) + 1, gen.word().to_uppercase());
            push(&mut spans, AnchorKind::Heading, page, y(), (0.1, 0.9), title, None);
        }
        for _ in 0..spec.paras_per_page {
            ordinal += 1;
            let text = format!("{ordinal}. {}", gen.paragraph());
            push(&mut spans, AnchorKind::Para, page, y(), (0.1, 0.9), text, None);
        }
        if table {
            tables += 1;
            let table_id = format!("T{tables}");
            for r in 0..2u32 {
                let y0 = y();
                for c in 0..3u32 {
                    let x0 = 0.1 + 0.27 * c as f64;
                    let content = format!("{} {}", gen.word(), gen.rng().gen_range(1..10_000));
                    let t = TableSpec { table_id: table_id.clone(), row: r, col: c, rowspan: 1, colspan: 1 };
                    push(&mut spans, AnchorKind::TableCell, page, y0, (x0, x0 + 0.25), content, Some(t));
                }
            }
        }
    }
    LayoutPayload { doc_id: spec.doc_id.clone(), page_count: spec.pages, spans }
}

/// Random anchor texts over a small lexicon, for oracle comparisons.
pub fn random_texts(seed: u64, count: usize) -> Vec<String> {
    let mut gen = TextGen::new(seed, 40);
    (0..count).map(|_| gen.sentence(3, 25)).collect()
}

/// Random queries drawing words from the same lexicon as [`random_texts`].
pub fn random_queries(seed: u64, count: usize) -> Vec<String> {
    let mut gen = TextGen::new(seed, 40);
    (0..count)
        .map(|_| {
            let n = gen.rng().gen_range(1..=5);
            (0..n).map(|_| gen.word()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// Payload with one paragraph span per text on as many pages as needed.
pub fn payload_from_texts(doc_id: &str, texts: &[String]) -> LayoutPayload {
    let per_page = 25usize;
    let spans = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let y0 = 0.02 + 0.038 * (i % per_page) as f64;
            LayoutSpan {
                span_id: format!("r{i}"),
                section_type: AnchorKind::Para,
                page_number: (i / per_page) as u32 + 1,
                bbox_coords: BBoxCoords { x0: 0.1, y0, x1: 0.9, y1: y0 + 0.03 },
                content: t.clone(),
                table: None,
                char_range: None,
            }
        })
        .collect();
    LayoutPayload {
        doc_id: doc_id.to_string(),
        page_count: texts.len().div_ceil(per_page).max(1) as u32,
        spans,
    }
}
