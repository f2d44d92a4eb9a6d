//! Modality catalog input and annotation.
//!
//! A catalog is CSV (header `id,kind,caption,location_tag,asset_uri`) or JSONL
//! with the same fields. Empty CSV cells mean absent.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::backend::{AgentBackend, BackendError, CompletionRequest};
use crate::model::{ModalityItem, ModalityKind};
use crate::prompts::{PromptId, Vars};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("IO: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON on line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("DUPLICATE_ITEM: {0}")]
    Duplicate(String),
    #[error("EMPTY_CAPTION: {0}")]
    EmptyCaption(String),
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    kind: ModalityKind,
    caption: String,
    #[serde(default)]
    location_tag: Option<String>,
    #[serde(default)]
    asset_uri: Option<String>,
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.map(|v| v.trim().to_owned()).filter(|v| !v.is_empty())
}

pub fn parse_catalog_csv(text: &str) -> Result<Vec<ModalityItem>, CatalogError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut items = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row?;
        let mut item = ModalityItem::new(row.id, row.kind, row.caption);
        item.location_tag = non_empty(row.location_tag);
        item.asset_uri = non_empty(row.asset_uri);
        items.push(item);
    }
    check(items)
}

pub fn parse_catalog_jsonl(text: &str) -> Result<Vec<ModalityItem>, CatalogError> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: ModalityItem =
            serde_json::from_str(line).map_err(|e| CatalogError::Json { line: i + 1, message: e.to_string() })?;
        items.push(item);
    }
    check(items)
}

fn check(items: Vec<ModalityItem>) -> Result<Vec<ModalityItem>, CatalogError> {
    let mut seen = BTreeSet::new();
    for item in &items {
        if !seen.insert(item.id.as_str()) {
            return Err(CatalogError::Duplicate(item.id.to_string()));
        }
        if item.caption.trim().is_empty() {
            return Err(CatalogError::EmptyCaption(item.id.to_string()));
        }
    }
    Ok(items)
}

/// Reads CSV or JSONL, chosen by file extension (`.csv` is CSV, anything else JSONL).
pub fn load_catalog(path: &Path) -> Result<Vec<ModalityItem>, CatalogError> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        parse_catalog_csv(&text)
    } else {
        parse_catalog_jsonl(&text)
    }
}

pub fn write_items_jsonl(items: &[ModalityItem]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("item serialises") + "\n")
        .collect()
}

fn single_answer(backend: &dyn AgentBackend, prompt: PromptId, caption: &str) -> Result<String, BackendError> {
    let mut vars = Vars::new();
    vars.insert("CAPTION".into(), caption.to_owned());
    let out = backend.complete(&CompletionRequest::render(prompt, vars, 0)?)?;
    Ok(out.text.trim().trim_matches(|c: char| c == '"' || c == '.').trim().to_owned())
}

/// Optionally rewrites image captions, then fills missing location tags with a
/// one-word guess. Audio the backend cannot place is tagged `none`. The
/// rewrite only sees the caption text, not the image.
pub fn annotate_catalog(
    items: &mut [ModalityItem],
    backend: &dyn AgentBackend,
    refine_captions: bool,
) -> Result<(), BackendError> {
    for item in items.iter_mut() {
        if refine_captions && item.kind == ModalityKind::Image {
            let refined = single_answer(backend, PromptId::CaptionRefine, &item.caption)?;
            if !refined.is_empty() {
                item.caption = refined;
            }
        }
        if item.location_tag.as_deref().is_none_or(|t| t.trim().is_empty()) {
            let prompt = match item.kind {
                ModalityKind::Image => PromptId::LocationImage,
                ModalityKind::Audio => PromptId::LocationAudio,
            };
            let tag = single_answer(backend, prompt, &item.caption)?.to_lowercase();
            item.location_tag = Some(if tag.is_empty() { "none".into() } else { tag });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;

    #[test]
    fn csv_with_optional_columns() {
        let text = "id,kind,caption,location_tag,asset_uri\nx1,image,\"A cat, asleep\",bedroom,\nx2,audio,Rain falls,,file:///r.wav\n";
        let items = parse_catalog_csv(text).unwrap();
        assert_eq!(items[0].caption, "A cat, asleep");
        assert_eq!(items[0].location_tag.as_deref(), Some("bedroom"));
        assert_eq!(items[1].location_tag, None);
        assert_eq!(items[1].asset_uri.as_deref(), Some("file:///r.wav"));
    }

    #[test]
    fn jsonl_round_trip_and_duplicates() {
        let items = vec![ModalityItem::new("a", ModalityKind::Image, "cap").with_location("park")];
        assert_eq!(parse_catalog_jsonl(&write_items_jsonl(&items)).unwrap(), items);
        let dup = write_items_jsonl(&[items[0].clone(), items[0].clone()]);
        assert!(matches!(parse_catalog_jsonl(&dup), Err(CatalogError::Duplicate(_))));
        assert!(matches!(parse_catalog_jsonl("{"), Err(CatalogError::Json { line: 1, .. })));
    }

    #[test]
    fn annotation_fills_missing_tags_only() {
        let mut items = vec![
            ModalityItem::new("a", ModalityKind::Image, "Pots on a kitchen stove"),
            ModalityItem::new("b", ModalityKind::Audio, "A strange hum"),
            ModalityItem::new("c", ModalityKind::Audio, "Gulls").with_location("beach"),
        ];
        annotate_catalog(&mut items, &ScriptedBackend::seeded(0), true).unwrap();
        assert_eq!(items[0].location_tag.as_deref(), Some("kitchen"));
        assert_eq!(items[1].location_tag.as_deref(), Some("none"));
        assert_eq!(items[1].usable_location(), None);
        assert_eq!(items[2].location_tag.as_deref(), Some("beach"));
    }
}
