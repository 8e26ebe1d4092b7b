//! Non-agent baselines: a uniformly random ranking and Okapi BM25 textual
//! matching between a user-preference string and the candidate items.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dyta_core::dataset::{CandidatePage, Catalog};
use dyta_core::fusion::{RankList, SignalSource};
use dyta_core::ItemId;

use crate::metrics::page_metrics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Lowercase tokens split on non-alphanumeric boundaries.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// The indexable text of one item: its title plus genre labels.
pub fn item_document(item_id: ItemId, catalog: &Catalog) -> Vec<String> {
    match catalog.items.get(&item_id) {
        Some(item) => {
            let mut tokens = tokenize(&item.title);
            for genre in &item.genres {
                tokens.extend(tokenize(genre));
            }
            tokens
        }
        None => Vec::new(),
    }
}

/// Ranks the page by Okapi BM25 similarity between the query text and each
/// candidate's document, with corpus statistics computed over the page's
/// own documents. Ties and an empty query fall back to ascending item id
/// and page order respectively.
pub fn bm25_rank(
    user_profile_text: &str,
    page: &CandidatePage,
    catalog: &Catalog,
    params: &Bm25Params,
) -> RankList {
    let query = tokenize(user_profile_text);
    if query.is_empty() {
        log::warn!("empty BM25 query; keeping page order");
        return RankList::new(page.order.clone(), SignalSource::Profile);
    }
    let docs: Vec<(ItemId, Vec<String>)> = page
        .order
        .iter()
        .map(|&id| (id, item_document(id, catalog)))
        .collect();
    let scored = bm25_scores(&query, &docs, params);
    let mut order: Vec<(ItemId, f64)> = scored;
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    RankList::new(order.into_iter().map(|(id, _)| id).collect(), SignalSource::Profile)
}

/// BM25 scores per document. Exposed for oracle comparison in tests.
pub fn bm25_scores(
    query: &[String],
    docs: &[(ItemId, Vec<String>)],
    params: &Bm25Params,
) -> Vec<(ItemId, f64)> {
    let n = docs.len() as f64;
    let avgdl = if docs.is_empty() {
        0.0
    } else {
        docs.iter().map(|(_, d)| d.len() as f64).sum::<f64>() / n
    };
    // Document frequency per distinct query term.
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for term in query {
        df.entry(term.as_str())
            .or_insert_with(|| docs.iter().filter(|(_, d)| d.iter().any(|t| t == term)).count() as f64);
    }
    docs.iter()
        .map(|(id, doc)| {
            let dl = doc.len() as f64;
            let mut score = 0.0;
            for term in query {
                let tf = doc.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                // Non-negative IDF variant.
                let idf = (1.0 + (n - df[term.as_str()] + 0.5) / (df[term.as_str()] + 0.5)).ln();
                let norm = params.k1 * (1.0 - params.b + params.b * dl / avgdl);
                score += idf * tf * (params.k1 + 1.0) / (tf + norm);
            }
            (*id, score)
        })
        .collect()
}

/// Monte Carlo estimate of the metric means a uniformly random ranking
/// achieves on pages of `m` candidates.
pub fn random_rank_metrics(m: usize, trials: u64, seed: u64) -> (f64, f64, f64) {
    assert!(m >= 1 && trials >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = (1..=m).collect();
    let (mut n5, mut n10, mut h3) = (0.0, 0.0, 0.0);
    for _ in 0..trials {
        positions.shuffle(&mut rng);
        // After a uniform shuffle, the ground truth's rank is the slot the
        // first element landed in — any fixed element works.
        let rank = positions[0];
        let (a, b, c) = page_metrics(rank);
        n5 += a;
        n10 += b;
        h3 += c;
    }
    let t = trials as f64;
    (n5 / t, n10 / t, h3 / t)
}
