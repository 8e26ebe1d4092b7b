//! Prompt template loading and rendering. Templates are plain text files
//! with `{lowercase_word}` placeholders; the crate ships defaults and a
//! config directory can override them — all of them, so a run never mixes
//! template generations silently.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::dataset::{CandidatePage, Catalog, Interaction};
use crate::ItemId;

/// Every template the pipeline renders. An override directory must provide
/// `<name>.txt` for each.
pub const TEMPLATE_NAMES: &[&str] = &[
    "profile_personality",
    "profile_preferences",
    "profile_short",
    "memory_consolidate",
    "act_profile",
    "act_rate",
    "tpe_detect",
    "tpe_cluster_analyze",
    "tpe_cluster_rank",
    "tpe_cluster_onestep",
    "tpe_seq",
];

const DEFAULTS: &[(&str, &str)] = &[
    ("profile_personality", include_str!("../prompts/profile_personality.txt")),
    ("profile_preferences", include_str!("../prompts/profile_preferences.txt")),
    ("profile_short", include_str!("../prompts/profile_short.txt")),
    ("memory_consolidate", include_str!("../prompts/memory_consolidate.txt")),
    ("act_profile", include_str!("../prompts/act_profile.txt")),
    ("act_rate", include_str!("../prompts/act_rate.txt")),
    ("tpe_detect", include_str!("../prompts/tpe_detect.txt")),
    ("tpe_cluster_analyze", include_str!("../prompts/tpe_cluster_analyze.txt")),
    ("tpe_cluster_rank", include_str!("../prompts/tpe_cluster_rank.txt")),
    ("tpe_cluster_onestep", include_str!("../prompts/tpe_cluster_onestep.txt")),
    ("tpe_seq", include_str!("../prompts/tpe_seq.txt")),
];

/// Character budget for rendered history sections.
pub const HISTORY_CHAR_BUDGET: usize = 4000;
/// Character budget for rendered memory sections.
pub const MEMORY_CHAR_BUDGET: usize = 2000;

/// The sentence injected as `{position_note}` when direct prompting is on.
pub const POSITION_NOTE: &str =
    "Note: the order in which candidates are listed is random; candidate positions carry no significance.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("prompts directory is missing template file {path}")]
    MissingTemplateFile { path: String },
    #[error("template {template:?} uses placeholder {{{placeholder}}} with no value supplied")]
    UnresolvedPlaceholder { template: String, placeholder: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, String>,
}

impl TemplateStore {
    /// The built-in templates.
    pub fn defaults() -> Self {
        let templates = DEFAULTS
            .iter()
            .map(|&(name, text)| (name.to_string(), text.to_string()))
            .collect();
        Self { templates }
    }

    /// Loads every template from `<dir>/<name>.txt`; any missing file is an
    /// error naming the file.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for &name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if !path.is_file() {
                return Err(PromptError::MissingTemplateFile {
                    path: path.display().to_string(),
                });
            }
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            templates.insert(name.to_string(), text);
        }
        Ok(Self { templates })
    }

    pub fn raw(&self, name: &str) -> Result<&str, PromptError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    /// Substitutes `{key}` placeholders. Every placeholder appearing in the
    /// template must have a value (possibly empty); extra values are ignored.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let template = self.raw(name)?;
        for placeholder in placeholders_in(template) {
            if !vars.iter().any(|(k, _)| *k == placeholder) {
                return Err(PromptError::UnresolvedPlaceholder {
                    template: name.to_string(),
                    placeholder,
                });
            }
        }
        let mut rendered = template.to_string();
        for (key, value) in vars {
            rendered = rendered.replace(&format!("{{{key}}}"), value);
        }
        Ok(rendered)
    }
}

/// Distinct `{lowercase_word}` placeholders in template order.
fn placeholders_in(template: &str) -> Vec<String> {
    let bytes = template.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_lowercase() || bytes[end] == b'_') {
                end += 1;
            }
            if end > start
                && end < bytes.len()
                && bytes[end] == b'}'
                && bytes[start].is_ascii_lowercase()
            {
                let name = &template[start..end];
                if !found.iter().any(|f| f == name) {
                    found.push(name.to_string());
                }
                i = end + 1;
                continue;
            }
        }
        i += 1;
    }
    found
}

/// The `{position_note}` value for the current prompting condition.
pub fn position_note(direct_prompting: bool) -> &'static str {
    if direct_prompting {
        POSITION_NOTE
    } else {
        ""
    }
}

/// One item as shown to the model: `[id] Title — Genres`.
pub fn item_line(item_id: ItemId, catalog: &Catalog) -> String {
    match catalog.items.get(&item_id) {
        Some(item) => format!("[{}] {} — {}", item.item_id, item.title, item.genres.join("/")),
        None => format!("[{item_id}] (unknown item)"),
    }
}

/// History lines, oldest first: `n. date | item | rated r | feeling`.
/// Truncated to the newest entries under `max_chars`; the bool reports
/// whether anything was dropped.
pub fn render_history(
    interactions: &[Interaction],
    catalog: &Catalog,
    max_chars: usize,
) -> (String, bool) {
    let mut text = String::new();
    for (i, interaction) in interactions.iter().enumerate() {
        let _ = write!(
            text,
            "{}. {} | {} | rated {}",
            i + 1,
            render_date(interaction.timestamp),
            item_line(interaction.item_id, catalog),
            interaction.rating
        );
        if let Some(feeling) = &interaction.feeling {
            if !feeling.is_empty() {
                let _ = write!(text, " | felt: {feeling}");
            }
        }
        text.push('\n');
    }
    truncate_oldest(&text, max_chars)
}

/// The candidate page as shown to the model, one line per position.
pub fn render_candidates(page: &CandidatePage, catalog: &Catalog) -> String {
    let mut text = String::new();
    for (position, item_id) in page.entries() {
        let _ = writeln!(text, "{position}. {}", item_line(item_id, catalog));
    }
    text
}

fn render_date(timestamp: i64) -> String {
    match chrono::DateTime::from_timestamp(timestamp, 0) {
        Some(dt) => dt.format("%Y-%m-%d").to_string(),
        None => format!("ts {timestamp}"),
    }
}

/// Keeps at most `max_chars` characters from the end of `text` — the newest
/// entries when the text is rendered oldest-first. Returns the (possibly
/// shortened) text and whether anything was dropped.
pub fn truncate_oldest(text: &str, max_chars: usize) -> (String, bool) {
    let total = text.chars().count();
    if total <= max_chars {
        return (text.to_string(), false);
    }
    let marker = "[earlier entries omitted]\n";
    let keep: String = text
        .chars()
        .skip(total - max_chars)
        .collect();
    // Resume at the next line break so we never keep half an entry.
    let tail = match keep.find('\n') {
        Some(pos) if pos + 1 < keep.len() => &keep[pos + 1..],
        _ => keep.as_str(),
    };
    (format!("{marker}{tail}"), true)
}

/// Keeps at most `max_chars` characters from the start of `text` — the
/// newest entries when the text is rendered newest-first.
pub fn truncate_trailing(text: &str, max_chars: usize) -> (String, bool) {
    if text.chars().count() <= max_chars {
        return (text.to_string(), false);
    }
    let keep: String = text.chars().take(max_chars).collect();
    // Cut back to the last complete line.
    let head = match keep.rfind('\n') {
        Some(pos) => &keep[..=pos],
        None => keep.as_str(),
    };
    (format!("{head}[older entries omitted]\n"), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_name() {
        let store = TemplateStore::defaults();
        for &name in TEMPLATE_NAMES {
            assert!(store.raw(name).is_ok(), "missing default template {name}");
        }
    }

    #[test]
    fn render_substitutes_placeholders() {
        let store = TemplateStore::defaults();
        let text = store
            .render(
                "tpe_detect",
                &[("history", "1. Movie A rated 5\n2. Movie B rated 4")],
            )
            .unwrap();
        assert!(text.contains("Movie A rated 5"));
        assert!(!text.contains("{history}"));
    }

    #[test]
    fn render_rejects_missing_value() {
        let store = TemplateStore::defaults();
        let err = store.render("tpe_detect", &[]).unwrap_err();
        match err {
            PromptError::UnresolvedPlaceholder { placeholder, .. } => {
                assert_eq!(placeholder, "history");
            }
            other => panic!("expected UnresolvedPlaceholder, got {other:?}"),
        }
    }

    #[test]
    fn from_dir_requires_every_file() {
        let dir = tempfile::tempdir().unwrap();
        for &name in &TEMPLATE_NAMES[1..] {
            std::fs::write(dir.path().join(format!("{name}.txt")), "stub {history}").ok();
        }
        let err = TemplateStore::from_dir(dir.path()).unwrap_err();
        match err {
            PromptError::MissingTemplateFile { path } => {
                assert!(path.contains("profile_personality.txt"));
            }
            other => panic!("expected MissingTemplateFile, got {other:?}"),
        }
    }

    #[test]
    fn from_dir_loads_overrides() {
        let dir = tempfile::tempdir().unwrap();
        for &name in TEMPLATE_NAMES {
            std::fs::write(dir.path().join(format!("{name}.txt")), format!("override {name}"))
                .unwrap();
        }
        let store = TemplateStore::from_dir(dir.path()).unwrap();
        assert_eq!(store.raw("act_rate").unwrap(), "override act_rate");
    }

    #[test]
    fn placeholder_scan_ignores_non_placeholder_braces() {
        assert_eq!(placeholders_in("a {history} b {Upper} {two words} {_}"), vec!["history"]);
        assert_eq!(placeholders_in("{a}{a}{b}"), vec!["a", "b"]);
    }

    #[test]
    fn truncation_keeps_newest_lines() {
        let text = "old entry one\nold entry two\nnew entry three\n";
        let (kept, truncated) = truncate_oldest(text, 20);
        assert!(truncated);
        assert!(kept.contains("new entry three"));
        assert!(!kept.contains("old entry one"));
        assert!(kept.starts_with("[earlier entries omitted]"));

        let (same, untruncated) = truncate_oldest("short", 100);
        assert_eq!(same, "short");
        assert!(!untruncated);
    }

    #[test]
    fn trailing_truncation_keeps_leading_lines() {
        let text = "newest note\nmiddle note\noldest note\n";
        let (kept, truncated) = truncate_trailing(text, 14);
        assert!(truncated);
        assert!(kept.contains("newest note"));
        assert!(!kept.contains("oldest note"));
        assert!(kept.ends_with("[older entries omitted]\n"));
    }

    #[test]
    fn history_rendering_includes_dates_items_and_feelings() {
        let catalog = toy_catalog();
        let interactions = vec![
            Interaction { item_id: 1, rating: 5, timestamp: 978_307_200, feeling: None },
            Interaction {
                item_id: 2,
                rating: 3,
                timestamp: 978_393_600,
                feeling: Some("left me cold".into()),
            },
        ];
        let (text, truncated) = render_history(&interactions, &catalog, 4000);
        assert!(!truncated);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("1. 2001-01-01 | [1] Alpha (1990) — Drama | rated 5"));
        assert!(lines[1].contains("felt: left me cold"));
    }

    #[test]
    fn candidate_rendering_numbers_positions() {
        let catalog = toy_catalog();
        let page = CandidatePage { order: vec![2, 1], ground_truth: 1, seed: 0 };
        let text = render_candidates(&page, &catalog);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("1. [2]"));
        assert!(lines[1].starts_with("2. [1]"));
    }

    fn toy_catalog() -> Catalog {
        use crate::dataset::ItemRecord;
        let items = [
            (1, "Alpha (1990)"),
            (2, "Beta (1991)"),
        ]
        .into_iter()
        .map(|(id, title)| {
            (
                id,
                ItemRecord {
                    item_id: id,
                    title: title.to_string(),
                    year: 1990,
                    genres: vec!["Drama".into()],
                },
            )
        })
        .collect();
        Catalog {
            users: Default::default(),
            items,
            ratings: Vec::new(),
            load_warnings: Vec::new(),
        }
    }
}
