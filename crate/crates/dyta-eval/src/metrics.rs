//! Ranking metrics under the leave-one-out protocol: exactly one relevant
//! item per page, so the ideal DCG is 1 and nDCG@K reduces to a closed
//! form over the ground-truth rank.

/// nDCG@K for a single relevant item at 1-based `gt_position`:
/// `1/log2(1 + gt_position)` inside the cutoff, 0 outside.
pub fn ndcg_single(gt_position: usize, k: usize) -> f64 {
    assert!(gt_position >= 1, "ranks are 1-based");
    assert!(k >= 1, "cutoff must be at least 1");
    if gt_position <= k {
        1.0 / ((1 + gt_position) as f64).log2()
    } else {
        0.0
    }
}

/// HR@N for a single relevant item: 1 inside the cutoff, 0 outside.
pub fn hr_single(gt_position: usize, n: usize) -> f64 {
    assert!(gt_position >= 1, "ranks are 1-based");
    if gt_position <= n {
        1.0
    } else {
        0.0
    }
}

/// The three reported metrics for one page outcome.
pub fn page_metrics(gt_position: usize) -> (f64, f64, f64) {
    (
        ndcg_single(gt_position, 5),
        ndcg_single(gt_position, 10),
        hr_single(gt_position, 3),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_is_perfect() {
        assert_eq!(ndcg_single(1, 5), 1.0);
        assert_eq!(hr_single(1, 3), 1.0);
    }

    #[test]
    fn rank_three_at_five_is_half() {
        assert_eq!(ndcg_single(3, 5), 0.5);
    }

    #[test]
    fn rank_ten_at_ten() {
        assert!((ndcg_single(10, 10) - 0.289065).abs() < 1e-6);
    }

    #[test]
    fn outside_cutoff_is_zero() {
        assert_eq!(ndcg_single(6, 5), 0.0);
        assert_eq!(hr_single(4, 3), 0.0);
    }

    #[test]
    fn hit_rate_boundary() {
        assert_eq!(hr_single(3, 3), 1.0);
    }

    /// Brute-force oracle: build the explicit relevance vector, compute
    /// DCG@K and IDCG@K by definition, and compare.
    #[test]
    fn matches_brute_force_dcg_oracle() {
        let m = 10;
        for gt_position in 1..=m {
            let relevance: Vec<f64> =
                (1..=m).map(|i| if i == gt_position { 1.0 } else { 0.0 }).collect();
            let mut ideal = relevance.clone();
            ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for k in [3, 5, 10] {
                let dcg: f64 = relevance
                    .iter()
                    .take(k)
                    .enumerate()
                    .map(|(i, rel)| rel / ((i + 2) as f64).log2())
                    .sum();
                let idcg: f64 = ideal
                    .iter()
                    .take(k)
                    .enumerate()
                    .map(|(i, rel)| rel / ((i + 2) as f64).log2())
                    .sum();
                let oracle = if idcg == 0.0 { 0.0 } else { dcg / idcg };
                assert!(
                    (ndcg_single(gt_position, k) - oracle).abs() < 1e-12,
                    "gt_position {gt_position}, K {k}"
                );
                let hit_oracle =
                    if relevance.iter().take(k).any(|&r| r > 0.0) { 1.0 } else { 0.0 };
                assert_eq!(hr_single(gt_position, k), hit_oracle);
            }
        }
    }
}
