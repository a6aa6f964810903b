//! Layout interchange parsing into an immutable [`DocumentRecord`].
//!
//! The interchange file is produced by an external layout extractor. Each
//! span is one displayable unit; spans that continue across a page break
//! repeat the same `span_id` on consecutive entries and are merged into a
//! single anchor carrying one bbox per fragment.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{extract_ordinal, normalize_text};

/// Separator placed between anchor texts in the canonical text.
pub const ANCHOR_SEPARATOR: char = '\n';

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("overlapping spans: {0}")]
    OverlapError(String),
    #[error("document has no anchors")]
    EmptyDocument,
    #[error("invalid window parameters: {0}")]
    InvalidWindow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Para,
    Heading,
    TableCell,
}

impl AnchorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnchorKind::Para => "para",
            AnchorKind::Heading => "heading",
            AnchorKind::TableCell => "table_cell",
        }
    }
}

// ---------------------------------------------------------------------------
// Interchange schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutPayload {
    pub doc_id: String,
    pub page_count: u32,
    pub spans: Vec<LayoutSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpan {
    pub span_id: String,
    pub section_type: AnchorKind,
    pub page_number: u32,
    pub bbox_coords: BBoxCoords,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableSpec>,
    /// Offsets into the extractor's own text stream, when it reports them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_range: Option<SourceRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBoxCoords {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub table_id: String,
    pub row: u32,
    pub col: u32,
    pub rowspan: u32,
    pub colspan: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRange {
    pub start: u64,
    pub end: u64,
}

// ---------------------------------------------------------------------------
// Record types
// ---------------------------------------------------------------------------

/// Page-relative box; coordinates are fractions of the page size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub page: u32,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Half-open byte range into the canonical text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharRange {
    pub start: usize,
    pub end: usize,
}

impl CharRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, offset: usize) -> bool {
        self.start <= offset && offset < self.end
    }

    pub fn overlap(&self, other: &CharRange) -> usize {
        let s = self.start.max(other.start);
        let e = self.end.min(other.end);
        e.saturating_sub(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableRef {
    pub table_id: String,
    pub row: u32,
    pub col: u32,
    pub rowspan: u32,
    pub colspan: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub anchor_id: String,
    pub doc_id: String,
    #[serde(rename = "type")]
    pub kind: AnchorKind,
    pub bboxes: Vec<BBox>,
    pub char_range: CharRange,
    pub span_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<u32>,
    pub section_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableRef>,
}

impl Anchor {
    /// Page of the first fragment.
    pub fn page(&self) -> u32 {
        self.bboxes[0].page
    }

    pub fn bbox(&self) -> &BBox {
        &self.bboxes[0]
    }

    pub fn pages(&self) -> impl Iterator<Item = u32> + '_ {
        self.bboxes.iter().map(|b| b.page)
    }

    pub fn is_text(&self) -> bool {
        self.kind != AnchorKind::TableCell
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableGrid {
    pub rows: u32,
    pub cols: u32,
    pub pages: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub window_id: String,
    pub anchor_ids: Vec<String>,
    /// Positions of the covered anchors in [`DocumentRecord::anchors`].
    pub positions: Vec<usize>,
    pub char_range: CharRange,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub width: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { width: 3, stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub canonical_text: String,
    pub anchors: Vec<Anchor>,
    pub tables: BTreeMap<String, TableGrid>,
    pub windows: Vec<Window>,
    pub page_count: u32,
}

impl DocumentRecord {
    pub fn text(&self, anchor: &Anchor) -> &str {
        &self.canonical_text[anchor.char_range.start..anchor.char_range.end]
    }

    pub fn text_at(&self, position: usize) -> &str {
        self.text(&self.anchors[position])
    }

    /// Position of an anchor id; ids are zero-padded reading-order indexes.
    pub fn position(&self, anchor_id: &str) -> Option<usize> {
        let idx: usize = anchor_id
            .strip_prefix(self.doc_id.as_str())?
            .strip_prefix(':')?
            .parse()
            .ok()?;
        (self.anchors.get(idx)?.anchor_id == anchor_id).then_some(idx)
    }

    pub fn anchor(&self, anchor_id: &str) -> Option<&Anchor> {
        self.position(anchor_id).map(|p| &self.anchors[p])
    }

    pub fn contains_anchor(&self, anchor_id: &str) -> bool {
        self.position(anchor_id).is_some()
    }

    pub fn cell(&self, table_id: &str, row: u32, col: u32) -> Option<&Anchor> {
        self.anchors.iter().find(|a| {
            a.table.as_ref().is_some_and(|t| {
                t.table_id == table_id
                    && (t.row..t.row + t.rowspan).contains(&row)
                    && (t.col..t.col + t.colspan).contains(&col)
            })
        })
    }

    /// Rebuild the window list with different parameters.
    pub fn with_windows(&self, cfg: WindowConfig) -> Result<DocumentRecord, IngestError> {
        let windows = build_windows(self, cfg.width, cfg.stride)?;
        Ok(DocumentRecord { windows, ..self.clone() })
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

pub fn parse_layout_json(json: &str) -> Result<DocumentRecord, IngestError> {
    let payload: LayoutPayload =
        serde_json::from_str(json).map_err(|e| IngestError::SchemaViolation(e.to_string()))?;
    parse_layout(&payload)
}

pub fn parse_layout(payload: &LayoutPayload) -> Result<DocumentRecord, IngestError> {
    parse_layout_with(payload, WindowConfig::default())
}

struct Draft {
    kind: AnchorKind,
    span_id: String,
    bboxes: Vec<BBox>,
    raw: String,
    table: Option<TableRef>,
    input_order: usize,
}

pub fn parse_layout_with(
    payload: &LayoutPayload,
    windows: WindowConfig,
) -> Result<DocumentRecord, IngestError> {
    validate(payload)?;
    if payload.spans.is_empty() {
        return Err(IngestError::EmptyDocument);
    }

    let mut drafts: Vec<Draft> = Vec::new();
    let mut seen_spans: HashSet<&str> = HashSet::new();
    for span in &payload.spans {
        let bbox = BBox {
            page: span.page_number,
            x0: span.bbox_coords.x0,
            y0: span.bbox_coords.y0,
            x1: span.bbox_coords.x1,
            y1: span.bbox_coords.y1,
        };
        if let Some(last) = drafts.last_mut().filter(|d| d.span_id == span.span_id) {
            if last.kind != span.section_type || last.kind == AnchorKind::TableCell {
                return Err(IngestError::SchemaViolation(format!(
                    "span {} continues with an incompatible fragment",
                    span.span_id
                )));
            }
            last.raw.push('\n');
            last.raw.push_str(&span.content);
            last.bboxes.push(bbox);
            continue;
        }
        if !seen_spans.insert(span.span_id.as_str()) {
            return Err(IngestError::SchemaViolation(format!(
                "duplicate span_id {}",
                span.span_id
            )));
        }
        drafts.push(Draft {
            kind: span.section_type,
            span_id: span.span_id.clone(),
            bboxes: vec![bbox],
            raw: span.content.clone(),
            table: span.table.as_ref().map(|t| TableRef {
                table_id: t.table_id.clone(),
                row: t.row,
                col: t.col,
                rowspan: t.rowspan,
                colspan: t.colspan,
            }),
            input_order: drafts.len(),
        });
    }

    let mut tables: BTreeMap<String, TableGrid> = BTreeMap::new();
    for d in &drafts {
        if let Some(t) = &d.table {
            let grid = tables.entry(t.table_id.clone()).or_insert(TableGrid {
                rows: 0,
                cols: 0,
                pages: Vec::new(),
            });
            grid.rows = grid.rows.max(t.row + t.rowspan);
            grid.cols = grid.cols.max(t.col + t.colspan);
            if !grid.pages.contains(&d.bboxes[0].page) {
                grid.pages.push(d.bboxes[0].page);
            }
        }
    }
    for grid in tables.values_mut() {
        grid.pages.sort_unstable();
    }

    let mut texts: Vec<(Draft, String)> = drafts
        .into_iter()
        .filter_map(|d| {
            let (norm, _) = normalize_text(&d.raw);
            (!norm.is_empty()).then_some((d, norm))
        })
        .collect();
    if texts.is_empty() {
        return Err(IngestError::EmptyDocument);
    }

    texts.sort_by(|(a, _), (b, _)| {
        let (ba, bb) = (&a.bboxes[0], &b.bboxes[0]);
        ba.page
            .cmp(&bb.page)
            .then(ba.y0.total_cmp(&bb.y0))
            .then(ba.x0.total_cmp(&bb.x0))
            .then(a.input_order.cmp(&b.input_order))
    });

    let width = id_width(texts.len());
    let mut canonical = String::new();
    let mut anchors = Vec::with_capacity(texts.len());
    let mut section: Vec<String> = Vec::new();
    for (idx, (draft, norm)) in texts.into_iter().enumerate() {
        if idx > 0 {
            canonical.push(ANCHOR_SEPARATOR);
        }
        let start = canonical.len();
        canonical.push_str(&norm);
        let char_range = CharRange::new(start, canonical.len());
        if draft.kind == AnchorKind::Heading {
            section = vec![norm.clone()];
        }
        let ordinal = match draft.kind {
            AnchorKind::Para => extract_ordinal(&norm),
            _ => None,
        };
        anchors.push(Anchor {
            anchor_id: format!("{}:{:0width$}", payload.doc_id, idx),
            doc_id: payload.doc_id.clone(),
            kind: draft.kind,
            bboxes: draft.bboxes,
            char_range,
            span_id: draft.span_id,
            ordinal,
            section_path: section.clone(),
            table: draft.table,
        });
    }

    let mut record = DocumentRecord {
        doc_id: payload.doc_id.clone(),
        canonical_text: canonical,
        anchors,
        tables,
        windows: Vec::new(),
        page_count: payload.page_count,
    };
    record.windows = build_windows(&record, windows.width, windows.stride)?;
    Ok(record)
}

fn id_width(count: usize) -> usize {
    let digits = count.saturating_sub(1).max(1).ilog10() as usize + 1;
    digits.max(5)
}

fn validate(payload: &LayoutPayload) -> Result<(), IngestError> {
    let schema = |msg: String| Err(IngestError::SchemaViolation(msg));
    if payload.doc_id.trim().is_empty() {
        return schema("doc_id must be non-empty".into());
    }
    if payload.doc_id.contains(':') {
        return schema("doc_id must not contain ':'".into());
    }
    if payload.page_count == 0 {
        return schema("page_count must be >= 1".into());
    }
    for span in &payload.spans {
        let id = &span.span_id;
        if id.is_empty() {
            return schema("span_id must be non-empty".into());
        }
        if span.page_number == 0 || span.page_number > payload.page_count {
            return schema(format!("span {id}: page_number {} out of range", span.page_number));
        }
        let b = &span.bbox_coords;
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !(unit(b.x0) && unit(b.y0) && unit(b.x1) && unit(b.y1)) {
            return schema(format!("span {id}: bbox coordinates must lie in [0, 1]"));
        }
        if b.x0 > b.x1 || b.y0 > b.y1 {
            return schema(format!("span {id}: bbox corners out of order"));
        }
        match (&span.section_type, &span.table) {
            (AnchorKind::TableCell, None) => {
                return schema(format!("span {id}: table_cell without table reference"))
            }
            (AnchorKind::TableCell, Some(t)) => {
                if t.rowspan == 0 || t.colspan == 0 {
                    return schema(format!("span {id}: rowspan/colspan must be >= 1"));
                }
                if t.table_id.is_empty() {
                    return schema(format!("span {id}: empty table_id"));
                }
            }
            (_, Some(_)) => return schema(format!("span {id}: table reference on non-cell span")),
            _ => {}
        }
        if let Some(r) = span.char_range {
            if r.start >= r.end {
                return schema(format!("span {id}: empty char_range"));
            }
        }
    }

    let mut ranges: Vec<(SourceRange, &str)> = payload
        .spans
        .iter()
        .filter_map(|s| s.char_range.map(|r| (r, s.span_id.as_str())))
        .collect();
    ranges.sort_by_key(|(r, _)| (r.start, r.end));
    for pair in ranges.windows(2) {
        let ((a, ida), (b, idb)) = (pair[0], pair[1]);
        if b.start < a.end && ida != idb {
            return Err(IngestError::OverlapError(format!(
                "spans {ida} and {idb} claim overlapping char ranges"
            )));
        }
    }

    let mut cells: BTreeMap<&str, Vec<(&TableSpec, &str)>> = BTreeMap::new();
    for span in &payload.spans {
        if let Some(t) = &span.table {
            cells.entry(t.table_id.as_str()).or_default().push((t, &span.span_id));
        }
    }
    for (table_id, list) in cells {
        for (i, (a, ida)) in list.iter().enumerate() {
            for (b, idb) in &list[i + 1..] {
                let rows = a.row < b.row + b.rowspan && b.row < a.row + a.rowspan;
                let cols = a.col < b.col + b.colspan && b.col < a.col + a.colspan;
                if rows && cols {
                    return Err(IngestError::OverlapError(format!(
                        "cells {ida} and {idb} overlap in table {table_id}"
                    )));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

/// Number of sliding windows over `anchors` text anchors.
pub fn window_count(anchors: usize, width: usize, stride: usize) -> usize {
    if anchors == 0 {
        0
    } else if anchors <= width {
        1
    } else {
        (anchors - width).div_ceil(stride) + 1
    }
}

/// Sliding windows over heading/paragraph anchors, then one window per table cell.
///
/// The final text window is truncated rather than shifted back, so every
/// pair of consecutive windows overlaps by exactly `width - stride` anchors
/// whenever the shorter one has that many.
pub fn build_windows(
    record: &DocumentRecord,
    width: usize,
    stride: usize,
) -> Result<Vec<Window>, IngestError> {
    if width == 0 {
        return Err(IngestError::InvalidWindow("width must be >= 1".into()));
    }
    if stride == 0 || stride > width {
        return Err(IngestError::InvalidWindow(format!(
            "stride must lie in 1..={width}"
        )));
    }
    let text_positions: Vec<usize> = record
        .anchors
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_text())
        .map(|(i, _)| i)
        .collect();
    let cell_positions: Vec<usize> = record
        .anchors
        .iter()
        .enumerate()
        .filter(|(_, a)| !a.is_text())
        .map(|(i, _)| i)
        .collect();
    if text_positions.is_empty() && cell_positions.is_empty() {
        return Err(IngestError::EmptyDocument);
    }

    let count = window_count(text_positions.len(), width, stride);
    let total = count + cell_positions.len();
    let id_w = id_width(total);
    let mut out = Vec::with_capacity(total);
    let mut push = |positions: &[usize]| {
        let first = &record.anchors[positions[0]];
        let last = &record.anchors[positions[positions.len() - 1]];
        let char_range = CharRange::new(first.char_range.start, last.char_range.end);
        out.push(Window {
            window_id: format!("{}:w{:0id_w$}", record.doc_id, out.len()),
            anchor_ids: positions
                .iter()
                .map(|&p| record.anchors[p].anchor_id.clone())
                .collect(),
            positions: positions.to_vec(),
            char_range,
            text: record.canonical_text[char_range.start..char_range.end].to_string(),
        });
    };
    for w in 0..count {
        let start = w * stride;
        let end = (start + width).min(text_positions.len());
        push(&text_positions[start..end]);
    }
    for &p in &cell_positions {
        push(&[p]);
    }
    Ok(out)
}
