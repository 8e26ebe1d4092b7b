//! Turns free-form model output into a full ranking of a candidate page.

use std::collections::HashSet;

use thiserror::Error;

use crate::ItemId;

/// A complete ranking over one page — exactly the candidate set, each id
/// once. `repaired` records that the raw output needed fixing (duplicates
/// dropped, missing candidates appended, or a full fallback).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRanking {
    pub order: Vec<ItemId>,
    pub repaired: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no recognized candidate ids in model output")]
    NoRecognizedIds,
}

/// Extracts recognized candidate ids from `raw` in output order, dropping
/// duplicates (first occurrence wins) and appending any candidates the model
/// omitted in original page order. Unrecognized numbers are ignored.
pub fn parse_ranking(
    raw: &str,
    candidates: &[ItemId],
    page_order: &[ItemId],
) -> Result<ParsedRanking, ParseError> {
    let candidate_set: HashSet<ItemId> = candidates.iter().copied().collect();
    let mut order: Vec<ItemId> = Vec::with_capacity(candidates.len());
    let mut taken: HashSet<ItemId> = HashSet::with_capacity(candidates.len());
    let mut duplicates_dropped = false;

    for token in numeric_tokens(raw) {
        let Ok(id) = token.parse::<ItemId>() else { continue };
        if !candidate_set.contains(&id) {
            continue;
        }
        if taken.insert(id) {
            order.push(id);
        } else {
            duplicates_dropped = true;
        }
    }
    if order.is_empty() {
        return Err(ParseError::NoRecognizedIds);
    }

    let mut missing_appended = false;
    for &id in page_order {
        if taken.insert(id) {
            order.push(id);
            missing_appended = true;
        }
    }

    Ok(ParsedRanking {
        order,
        repaired: duplicates_dropped || missing_appended,
    })
}

/// Maximal runs of ASCII digits, in text order.
fn numeric_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_ascii_digit()).filter(|t| !t.is_empty())
}
