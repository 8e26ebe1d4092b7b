//! Weighted rank aggregation over per-signal candidate rankings.
//!
//! The aggregator fuses up to three rank lists — profile/memory, sequential
//! prediction, and clustering analysis — with either Borda count or
//! reciprocal rank fusion. In adaptive mode the sequential and clustering
//! weights are gated on detected pattern flags; the profile weight is always 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::temporal::PatternFlags;
use crate::ItemId;

/// Which pipeline signal produced a rank list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    Profile,
    Sequential,
    Clustering,
}

/// A full ranking over one candidate page, produced by one signal source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    /// Candidate ids, best first (rank 1 at index 0). Duplicate-free.
    pub order: Vec<ItemId>,
    pub source: SignalSource,
    /// Per-list weight hook; multiplies the aggregator weight. Defaults to 1.
    pub weight: f64,
}

impl RankList {
    pub fn new(order: Vec<ItemId>, source: SignalSource) -> Self {
        Self {
            order,
            source,
            weight: 1.0,
        }
    }
}

/// Aggregation method selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Borda,
    Rrf,
}

/// Static per-signal weights, used when adaptive gating is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticWeights {
    pub profile: f64,
    pub sequential: f64,
    pub clustering: f64,
}

impl Default for StaticWeights {
    fn default() -> Self {
        Self {
            profile: 1.0,
            sequential: 1.0,
            clustering: 1.0,
        }
    }
}

/// Weights applied to sequential/clustering lists when their pattern flag is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectedWeights {
    pub sequential: f64,
    pub clustering: f64,
}

impl Default for DetectedWeights {
    fn default() -> Self {
        Self {
            sequential: 1.0,
            clustering: 1.0,
        }
    }
}

/// Aggregator configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub method: FusionMethod,
    /// Smoothing constant for reciprocal rank fusion.
    pub rrf_k: f64,
    /// Gate sequential/clustering weights on detected pattern flags.
    pub adaptive: bool,
    /// Used when `adaptive` is false. The profile weight must stay 1.
    pub static_weights: StaticWeights,
    /// Used when `adaptive` is true and a pattern flag is set.
    pub detected_weights: DetectedWeights,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            method: FusionMethod::Rrf,
            rrf_k: 60.0,
            adaptive: true,
            static_weights: StaticWeights::default(),
            detected_weights: DetectedWeights::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("rank lists do not cover the same item set")]
    MismatchedItemSets,
    #[error("rank list contains duplicate items")]
    DuplicateItems,
    #[error("got {lists} lists but {weights} weights")]
    LengthMismatch { lists: usize, weights: usize },
    #[error("weight must be finite and non-negative, got {0}")]
    InvalidWeight(f64),
    #[error("no rank list with positive weight")]
    NoPositiveWeight,
    #[error("rrf_k must be positive, got {0}")]
    InvalidRrfK(f64),
}

/// Resolves `(W_l, W_s, W_c)` from pattern flags: the profile weight is
/// always 1; sequential/clustering weights are the configured detected
/// weights when the corresponding flag is set, 0 otherwise.
pub fn adaptive_weights(flags: &PatternFlags, config: &FusionConfig) -> (f64, f64, f64) {
    let seq = if flags.has_sequential {
        config.detected_weights.sequential
    } else {
        0.0
    };
    let cluster = if flags.has_clustering {
        config.detected_weights.clustering
    } else {
        0.0
    };
    (1.0, seq, cluster)
}

/// Weighted Borda count: rank 1 in a list of m earns m-1 points, the last
/// rank earns 0; points are weighted per list and summed.
pub fn borda_fuse(lists: &[&[ItemId]], weights: &[f64]) -> Result<Vec<ItemId>, FusionError> {
    fuse_by(lists, weights, |rank, m| (m - rank) as f64)
}

/// Weighted reciprocal rank fusion: each list contributes
/// `weight / (rrf_k + rank)` with 1-based ranks.
pub fn rrf_fuse(
    lists: &[&[ItemId]],
    weights: &[f64],
    rrf_k: f64,
) -> Result<Vec<ItemId>, FusionError> {
    if rrf_k.is_nan() || rrf_k <= 0.0 {
        return Err(FusionError::InvalidRrfK(rrf_k));
    }
    fuse_by(lists, weights, |rank, _| 1.0 / (rrf_k + rank as f64))
}

/// The self-adaptive aggregation step over the available signal rankings.
///
/// Weights come from [`adaptive_weights`] in adaptive mode, or from the
/// static weights otherwise; each is further multiplied by the list's own
/// weight hook. Absent and zero-weight lists are dropped before fusing.
/// Ties break by the first surviving list's order, then ascending item id.
pub fn aggregate(
    profile: Option<&RankList>,
    sequential: Option<&RankList>,
    clustering: Option<&RankList>,
    flags: &PatternFlags,
    config: &FusionConfig,
) -> Result<Vec<ItemId>, FusionError> {
    let (w_l, w_s, w_c) = if config.adaptive {
        adaptive_weights(flags, config)
    } else {
        (
            config.static_weights.profile,
            config.static_weights.sequential,
            config.static_weights.clustering,
        )
    };

    let mut lists: Vec<&[ItemId]> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (list, weight) in [(profile, w_l), (sequential, w_s), (clustering, w_c)] {
        if let Some(list) = list {
            let combined = weight * list.weight;
            if combined > 0.0 {
                lists.push(&list.order);
                weights.push(combined);
            }
        }
    }
    if lists.is_empty() {
        return Err(FusionError::NoPositiveWeight);
    }
    match config.method {
        FusionMethod::Borda => borda_fuse(&lists, &weights),
        FusionMethod::Rrf => rrf_fuse(&lists, &weights, config.rrf_k),
    }
}

/// Fused per-item scores for the surviving lists, in first-list order.
/// Exposed for diagnostics; the fuse functions sort these.
pub fn fused_scores(
    lists: &[&[ItemId]],
    weights: &[f64],
    point: impl Fn(usize, usize) -> f64,
) -> Result<Vec<(ItemId, f64)>, FusionError> {
    if lists.len() != weights.len() {
        return Err(FusionError::LengthMismatch {
            lists: lists.len(),
            weights: weights.len(),
        });
    }
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(FusionError::InvalidWeight(w));
        }
    }

    // Weight 0 is equivalent to removing the list entirely, including for
    // tie-breaking, so drop zero-weight lists up front.
    let active: Vec<(&[ItemId], f64)> = lists
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&l, &w)| (l, w))
        .collect();
    if active.is_empty() {
        return Err(FusionError::NoPositiveWeight);
    }

    let first = active[0].0;
    let m = first.len();
    let reference: std::collections::BTreeSet<ItemId> = first.iter().copied().collect();
    if reference.len() != m {
        return Err(FusionError::DuplicateItems);
    }

    let mut scores: std::collections::HashMap<ItemId, f64> =
        first.iter().map(|&id| (id, 0.0)).collect();
    for &(list, weight) in &active {
        if list.len() != m {
            return Err(FusionError::MismatchedItemSets);
        }
        let mut seen = std::collections::BTreeSet::new();
        for (idx, &id) in list.iter().enumerate() {
            if !seen.insert(id) {
                return Err(FusionError::DuplicateItems);
            }
            if !reference.contains(&id) {
                return Err(FusionError::MismatchedItemSets);
            }
            let rank = idx + 1;
            *scores.get_mut(&id).unwrap() += weight * point(rank, m);
        }
    }

    Ok(first.iter().map(|&id| (id, scores[&id])).collect())
}

fn fuse_by(
    lists: &[&[ItemId]],
    weights: &[f64],
    point: impl Fn(usize, usize) -> f64,
) -> Result<Vec<ItemId>, FusionError> {
    let scored = fused_scores(lists, weights, point)?;
    // scored is in first-list order, so a stable sort on descending score
    // realizes the tie rule: first list's order, then ascending item id.
    let mut order: Vec<(usize, ItemId, f64)> = scored
        .into_iter()
        .enumerate()
        .map(|(pos, (id, s))| (pos, id, s))
        .collect();
    order.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("fusion scores are finite")
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    Ok(order.into_iter().map(|(_, id, _)| id).collect())
}
