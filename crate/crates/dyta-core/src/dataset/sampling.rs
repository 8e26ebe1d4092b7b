//! Seeded sampling: negatives, candidate pages with controlled ground-truth
//! placement, and user subsets. Every function is a pure function of its
//! inputs plus a seed.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CandidatePage, Catalog, DatasetError, InteractionHistory};
use crate::{ItemId, UserId};

/// Where the ground truth lands in the page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Uniformly shuffled order.
    #[default]
    Random,
    /// Ground truth pinned at this 1-based position, negatives shuffled
    /// into the remaining slots.
    Fixed(usize),
}

/// Draws `count` distinct items the user has never interacted with
/// (anywhere in the full history, prefix and target alike), uniformly over
/// the unseen portion of the catalog.
pub fn sample_negatives(
    full_history: &InteractionHistory,
    catalog: &Catalog,
    count: usize,
    seed: u64,
) -> Result<Vec<ItemId>, DatasetError> {
    let seen: HashSet<ItemId> = full_history.interactions.iter().map(|i| i.item_id).collect();
    let pool: Vec<ItemId> = catalog
        .items
        .keys()
        .copied()
        .filter(|id| !seen.contains(id))
        .collect();
    if pool.len() < count {
        return Err(DatasetError::InsufficientUnseen {
            user: full_history.user_id,
            needed: count,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, pool.len(), count);
    Ok(picks.iter().map(|i| pool[i]).collect())
}

/// Builds the m-item candidate page from one ground truth and m-1 negatives.
pub fn build_candidate_page(
    target: ItemId,
    negatives: &[ItemId],
    seed: u64,
    placement: Placement,
) -> Result<CandidatePage, DatasetError> {
    let page_size = negatives.len() + 1;
    let mut distinct = HashSet::with_capacity(page_size);
    for &id in negatives.iter().chain(std::iter::once(&target)) {
        if !distinct.insert(id) {
            return Err(DatasetError::DuplicateCandidate(id));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = match placement {
        Placement::Random => {
            let mut order: Vec<ItemId> = std::iter::once(target)
                .chain(negatives.iter().copied())
                .collect();
            order.shuffle(&mut rng);
            order
        }
        Placement::Fixed(position) => {
            if position < 1 || position > page_size {
                return Err(DatasetError::PlacementOutOfRange { position, page_size });
            }
            let mut shuffled = negatives.to_vec();
            shuffled.shuffle(&mut rng);
            let mut order = Vec::with_capacity(page_size);
            order.extend_from_slice(&shuffled[..position - 1]);
            order.push(target);
            order.extend_from_slice(&shuffled[position - 1..]);
            order
        }
    };
    Ok(CandidatePage {
        order,
        ground_truth: target,
        seed,
    })
}

/// Picks `count` users from the eligible list (ascending ids in, ascending
/// ids out). Asking for at least the whole list returns it unchanged.
pub fn sample_users(eligible: &[UserId], count: usize, seed: u64) -> Vec<UserId> {
    if count >= eligible.len() {
        return eligible.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<UserId> = rand::seq::index::sample(&mut rng, eligible.len(), count)
        .iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Interaction, ItemRecord};
    use std::collections::BTreeMap;

    fn toy_catalog(item_ids: &[ItemId]) -> Catalog {
        let items: BTreeMap<ItemId, ItemRecord> = item_ids
            .iter()
            .map(|&id| {
                (
                    id,
                    ItemRecord {
                        item_id: id,
                        title: format!("Item {id} (2000)"),
                        year: 2000,
                        genres: vec!["Drama".into()],
                    },
                )
            })
            .collect();
        Catalog {
            users: BTreeMap::new(),
            items,
            ratings: Vec::new(),
            load_warnings: Vec::new(),
        }
    }

    fn history(user_id: u32, items: &[ItemId]) -> InteractionHistory {
        InteractionHistory {
            user_id,
            interactions: items
                .iter()
                .enumerate()
                .map(|(i, &item_id)| Interaction {
                    item_id,
                    rating: 3,
                    timestamp: (i + 1) as i64,
                    feeling: None,
                })
                .collect(),
        }
    }

    #[test]
    fn negatives_forced_when_pool_is_exact() {
        let catalog = toy_catalog(&(1..=12).collect::<Vec<_>>());
        let seen = history(1, &[10, 11, 12]);
        let mut negatives = sample_negatives(&seen, &catalog, 9, 99).unwrap();
        negatives.sort_unstable();
        assert_eq!(negatives, (1..=9).collect::<Vec<_>>());
    }

    #[test]
    fn negatives_deterministic_for_seed() {
        let catalog = toy_catalog(&(1..=100).collect::<Vec<_>>());
        let seen = history(1, &[1, 2, 3]);
        let a = sample_negatives(&seen, &catalog, 9, 7).unwrap();
        let b = sample_negatives(&seen, &catalog, 9, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_negatives(&seen, &catalog, 9, 8).unwrap();
        assert_ne!(a, c, "different seeds should draw different sets");
    }

    #[test]
    fn negatives_insufficient_pool_is_fatal() {
        let catalog = toy_catalog(&[1, 2, 3]);
        let seen = history(1, &[1, 2]);
        let err = sample_negatives(&seen, &catalog, 9, 0).unwrap_err();
        assert!(matches!(err, DatasetError::InsufficientUnseen { available: 1, .. }));
    }

    #[test]
    fn fixed_placement_pins_ground_truth() {
        for position in 1..=10 {
            let page = build_candidate_page(100, &(1..=9).collect::<Vec<_>>(), 5, Placement::Fixed(position))
                .unwrap();
            assert_eq!(page.ground_truth_position(), position);
            assert_eq!(page.len(), 10);
        }
    }

    #[test]
    fn fixed_placement_out_of_range() {
        let err =
            build_candidate_page(100, &[1, 2], 5, Placement::Fixed(4)).unwrap_err();
        assert!(matches!(err, DatasetError::PlacementOutOfRange { position: 4, page_size: 3 }));
    }

    #[test]
    fn random_placement_deterministic_for_seed() {
        let negatives: Vec<ItemId> = (1..=9).collect();
        let a = build_candidate_page(100, &negatives, 42, Placement::Random).unwrap();
        let b = build_candidate_page(100, &negatives, 42, Placement::Random).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_candidate_rejected() {
        let err = build_candidate_page(3, &[1, 2, 3], 0, Placement::Random).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateCandidate(3)));
    }

    #[test]
    fn user_sample_is_sorted_subset() {
        let eligible: Vec<UserId> = (1..=50).collect();
        let picked = sample_users(&eligible, 10, 3);
        assert_eq!(picked.len(), 10);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert!(picked.iter().all(|u| eligible.contains(u)));
        assert_eq!(picked, sample_users(&eligible, 10, 3));
    }

    #[test]
    fn user_sample_covers_all_when_count_exceeds() {
        let eligible: Vec<UserId> = vec![4, 8, 15];
        assert_eq!(sample_users(&eligible, 99, 0), eligible);
    }
}
