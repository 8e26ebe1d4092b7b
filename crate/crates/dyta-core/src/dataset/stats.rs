//! Popularity/high-rating indexes over training interactions and the
//! per-user statistical patterns derived from them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{Interaction, InteractionHistory, StatPatterns};
use crate::{ItemId, UserId};

/// Thresholds defining "popular" and "highly rated" items. The dataset
/// names these notions without pinning values, so they stay configurable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopularityConfig {
    /// An item is popular if it lands in the top `top_fraction` of items
    /// (by training-interaction count) among items with at least one
    /// training interaction.
    pub top_fraction: f64,
    /// Mean training rating at or above this makes an item highly rated...
    pub high_rated_mean: f64,
    /// ...provided it has at least this many training ratings.
    pub high_rated_min_count: u32,
}

impl Default for PopularityConfig {
    fn default() -> Self {
        Self {
            top_fraction: 0.2,
            high_rated_mean: 4.0,
            high_rated_min_count: 20,
        }
    }
}

/// Item sets computed once over training interactions (each user's history
/// minus its held-out last event) and shared read-only by all workers.
#[derive(Debug, Clone)]
pub struct PopularityIndex {
    popular: BTreeSet<ItemId>,
    high_rated: BTreeSet<ItemId>,
}

impl PopularityIndex {
    /// Builds the index from per-user chronological sequences, excluding
    /// each user's final interaction so the held-out targets never leak
    /// into the statistics.
    pub fn build(
        sequences: &BTreeMap<UserId, InteractionHistory>,
        config: &PopularityConfig,
    ) -> Self {
        let mut counts: HashMap<ItemId, u32> = HashMap::new();
        let mut rating_sums: HashMap<ItemId, u64> = HashMap::new();
        for history in sequences.values() {
            let train_len = history.len().saturating_sub(1);
            for interaction in &history.interactions[..train_len] {
                *counts.entry(interaction.item_id).or_insert(0) += 1;
                *rating_sums.entry(interaction.item_id).or_insert(0) += interaction.rating as u64;
            }
        }

        let mut by_count: Vec<(ItemId, u32)> = counts.iter().map(|(&id, &c)| (id, c)).collect();
        by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let top = (config.top_fraction * by_count.len() as f64).ceil() as usize;
        let popular = by_count.iter().take(top).map(|&(id, _)| id).collect();

        let high_rated = counts
            .iter()
            .filter(|(id, &count)| {
                count >= config.high_rated_min_count
                    && rating_sums[id] as f64 / count as f64 >= config.high_rated_mean
            })
            .map(|(&id, _)| id)
            .collect();

        Self { popular, high_rated }
    }

    pub fn is_popular(&self, item: ItemId) -> bool {
        self.popular.contains(&item)
    }

    pub fn is_high_rated(&self, item: ItemId) -> bool {
        self.high_rated.contains(&item)
    }

    pub fn popular_count(&self) -> usize {
        self.popular.len()
    }
}

/// Mean rating, rating histogram, and popular/high-rated viewing fractions
/// over a history slice. An empty history yields all zeros with the
/// `empty_history` flag set.
pub fn compute_stat_patterns(history: &[Interaction], index: &PopularityIndex) -> StatPatterns {
    if history.is_empty() {
        log::warn!("computing stat patterns over an empty history");
        return StatPatterns {
            mean_rating: 0.0,
            rating_histogram: [0; 5],
            popular_item_fraction: 0.0,
            high_rated_item_fraction: 0.0,
            empty_history: true,
        };
    }
    let mut histogram = [0u32; 5];
    let mut rating_sum = 0u64;
    let mut popular = 0usize;
    let mut high_rated = 0usize;
    for interaction in history {
        histogram[(interaction.rating - 1) as usize] += 1;
        rating_sum += interaction.rating as u64;
        if index.is_popular(interaction.item_id) {
            popular += 1;
        }
        if index.is_high_rated(interaction.item_id) {
            high_rated += 1;
        }
    }
    let len = history.len() as f64;
    StatPatterns {
        mean_rating: rating_sum as f64 / len,
        rating_histogram: histogram,
        popular_item_fraction: popular as f64 / len,
        high_rated_item_fraction: high_rated as f64 / len,
        empty_history: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interaction(item_id: ItemId, rating: u8) -> Interaction {
        Interaction {
            item_id,
            rating,
            timestamp: 1,
            feeling: None,
        }
    }

    fn sequences_from(specs: &[(UserId, Vec<(ItemId, u8)>)]) -> BTreeMap<UserId, InteractionHistory> {
        specs
            .iter()
            .map(|(user_id, items)| {
                let interactions = items
                    .iter()
                    .enumerate()
                    .map(|(i, &(item_id, rating))| Interaction {
                        item_id,
                        rating,
                        timestamp: (i + 1) as i64,
                        feeling: None,
                    })
                    .collect();
                (*user_id, InteractionHistory { user_id: *user_id, interactions })
            })
            .collect()
    }

    #[test]
    fn mean_and_histogram() {
        let index = PopularityIndex {
            popular: BTreeSet::new(),
            high_rated: BTreeSet::new(),
        };
        let history: Vec<Interaction> =
            [5, 5, 4, 3, 3].iter().map(|&r| interaction(1, r)).collect();
        let stats = compute_stat_patterns(&history, &index);
        assert_eq!(stats.mean_rating, 4.0);
        assert_eq!(stats.rating_histogram, [0, 0, 2, 1, 2]);
        assert!(!stats.empty_history);
    }

    #[test]
    fn empty_history_flagged() {
        let index = PopularityIndex {
            popular: BTreeSet::new(),
            high_rated: BTreeSet::new(),
        };
        let stats = compute_stat_patterns(&[], &index);
        assert!(stats.empty_history);
        assert_eq!(stats.mean_rating, 0.0);
    }

    #[test]
    fn fractions_count_matching_interactions() {
        let index = PopularityIndex {
            popular: BTreeSet::new(),
            high_rated: [1, 2, 3].into_iter().collect(),
        };
        let history: Vec<Interaction> =
            [1, 2, 3, 10, 11, 12].iter().map(|&id| interaction(id, 4)).collect();
        let stats = compute_stat_patterns(&history, &index);
        assert_eq!(stats.popular_item_fraction, 0.0);
        assert_eq!(stats.high_rated_item_fraction, 0.5);
    }

    #[test]
    fn popularity_excludes_held_out_targets() {
        // Item 99 appears only as final interactions; it must not count.
        let sequences = sequences_from(&[
            (1, vec![(1, 5), (2, 5), (99, 5)]),
            (2, vec![(1, 5), (2, 5), (99, 5)]),
        ]);
        let config = PopularityConfig {
            top_fraction: 0.5,
            ..PopularityConfig::default()
        };
        let index = PopularityIndex::build(&sequences, &config);
        assert!(!index.is_popular(99));
        assert!(index.is_popular(1), "top half by count, ties broken by id");
    }

    #[test]
    fn popular_is_top_fraction_by_count_then_id() {
        // Training counts: item 1 ×3, item 2 ×2, items 3,4 ×1 each.
        let sequences = sequences_from(&[
            (1, vec![(1, 3), (2, 3), (3, 3), (9, 1)]),
            (2, vec![(1, 3), (2, 3), (4, 3), (9, 1)]),
            (3, vec![(1, 3), (9, 1), (9, 1)]),
        ]);
        let config = PopularityConfig {
            top_fraction: 0.4, // ceil(0.4 × 5 eligible items) = 2
            ..PopularityConfig::default()
        };
        let index = PopularityIndex::build(&sequences, &config);
        assert_eq!(index.popular_count(), 2);
        assert!(index.is_popular(1));
        assert!(index.is_popular(2));
        assert!(!index.is_popular(3));
        assert!(!index.is_popular(4));
        assert!(!index.is_popular(9));
    }

    #[test]
    fn high_rated_needs_mean_and_count() {
        let repeats = |item: ItemId, rating: u8, n: usize| -> Vec<(ItemId, u8)> {
            std::iter::repeat_n((item, rating), n).collect()
        };
        // Item 1: 25 training ratings of 5 (qualifies).
        // Item 2: 25 training ratings of 3 (mean too low).
        // Item 3: 5 training ratings of 5 (too few).
        let mut a = repeats(1, 5, 25);
        a.push((100, 1)); // held-out target
        let mut b = repeats(2, 3, 25);
        b.push((100, 1));
        let mut c = repeats(3, 5, 5);
        c.push((100, 1));
        let sequences = sequences_from(&[(1, a), (2, b), (3, c)]);
        let index = PopularityIndex::build(&sequences, &PopularityConfig::default());
        assert!(index.is_high_rated(1));
        assert!(!index.is_high_rated(2));
        assert!(!index.is_high_rated(3));
    }
}
