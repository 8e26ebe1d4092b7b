//! MovieLens-1M ingestion, chronological per-user sequences, leave-one-out
//! splits, negative sampling, and candidate-page construction.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{ItemId, UserId};

mod ml1m;
mod sampling;
mod stats;
pub mod synth;

pub use sampling::{build_candidate_page, sample_negatives, sample_users, Placement};
pub use stats::{compute_stat_patterns, PopularityConfig, PopularityIndex};

/// One catalog item. The year is parsed out of the trailing `(YYYY)` in the
/// title; the title itself is kept verbatim, year included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: ItemId,
    pub title: String,
    pub year: u16,
    pub genres: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub gender: Gender,
    pub age_bracket: u8,
    pub occupation: u8,
    pub zip: String,
}

/// One user–item event. `feeling` is absent for historical data and filled
/// in by the agent during simulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub item_id: ItemId,
    pub rating: u8,
    pub timestamp: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feeling: Option<String>,
}

/// A user's interactions sorted ascending by timestamp; equal timestamps
/// keep their original file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionHistory {
    pub user_id: UserId,
    pub interactions: Vec<Interaction>,
}

impl InteractionHistory {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// An ordered page of candidates shown to the agent in one round.
/// Position p (1-based) is index p-1 of `order`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePage {
    pub order: Vec<ItemId>,
    pub ground_truth: ItemId,
    pub seed: u64,
}

impl CandidatePage {
    /// (1-based position, item id) pairs in page order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, ItemId)> + '_ {
        self.order.iter().enumerate().map(|(i, &id)| (i + 1, id))
    }

    /// 1-based position of an item, if present.
    pub fn position_of(&self, item: ItemId) -> Option<usize> {
        self.order.iter().position(|&id| id == item).map(|i| i + 1)
    }

    /// 1-based position of the ground-truth item.
    pub fn ground_truth_position(&self) -> usize {
        self.position_of(self.ground_truth)
            .expect("page contains its ground truth")
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Per-user rating/viewing statistics for the long-term profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatPatterns {
    pub mean_rating: f64,
    /// Counts for ratings 1..=5; sums to the history length.
    pub rating_histogram: [u32; 5],
    pub popular_item_fraction: f64,
    pub high_rated_item_fraction: f64,
    /// Set when computed from an empty history (all fields zero).
    pub empty_history: bool,
}

/// One parsed `ratings.dat` row, kept in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRow {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub rating: u8,
    pub timestamp: i64,
}

/// The fully parsed dataset: users and items keyed by id, ratings in file
/// order. Immutable after load and safe to share across workers.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub users: BTreeMap<UserId, UserRecord>,
    pub items: BTreeMap<ItemId, ItemRecord>,
    pub ratings: Vec<RatingRow>,
    /// Non-fatal observations from loading (e.g. an empty ratings file).
    pub load_warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing dataset file: {0}")]
    MissingFile(String),
    #[error("{file}:{line}: {reason}")]
    Malformed {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: reference to unknown {what} {id}")]
    DanglingReference {
        file: String,
        line: usize,
        what: &'static str,
        id: u32,
    },
    #[error("user {user} has only {available} unseen items, need {needed}")]
    InsufficientUnseen {
        user: UserId,
        needed: usize,
        available: usize,
    },
    #[error("fixed ground-truth position {position} out of range 1..={page_size}")]
    PlacementOutOfRange { position: usize, page_size: usize },
    #[error("candidate page inputs contain duplicate item {0}")]
    DuplicateCandidate(ItemId),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parses users.dat, movies.dat, and ratings.dat from an ML-1M-format
/// directory and verifies every rating references a known user and item.
pub fn load_ml1m(dir: &std::path::Path) -> Result<Catalog, DatasetError> {
    ml1m::load(dir)
}

/// Groups ratings into per-user chronological histories (stable sort by
/// timestamp, so equal timestamps preserve file order).
pub fn build_sequences(catalog: &Catalog) -> BTreeMap<UserId, InteractionHistory> {
    let mut per_user: BTreeMap<UserId, Vec<Interaction>> = BTreeMap::new();
    for row in &catalog.ratings {
        per_user.entry(row.user_id).or_default().push(Interaction {
            item_id: row.item_id,
            rating: row.rating,
            timestamp: row.timestamp,
            feeling: None,
        });
    }
    per_user
        .into_iter()
        .map(|(user_id, mut interactions)| {
            interactions.sort_by_key(|i| i.timestamp);
            let mut seen = HashSet::new();
            for i in &interactions {
                if !seen.insert((i.item_id, i.timestamp)) {
                    log::warn!(
                        "user {user_id}: duplicate interaction (item {}, ts {})",
                        i.item_id,
                        i.timestamp
                    );
                }
            }
            (user_id, InteractionHistory { user_id, interactions })
        })
        .collect()
}

/// Splits a history into (everything before the last event, the last event).
/// Returns `None` for histories shorter than 2 — the caller skips the user.
pub fn leave_one_out_split(
    history: &InteractionHistory,
) -> Option<(InteractionHistory, Interaction)> {
    if history.len() < 2 {
        return None;
    }
    let mut interactions = history.interactions.clone();
    let target = interactions.pop().expect("length checked above");
    Some((
        InteractionHistory {
            user_id: history.user_id,
            interactions,
        },
        target,
    ))
}
