//! The analysis experiments on top of the runner: position bias under
//! fixed ground-truth placement, rating-distribution alignment, the
//! ablation matrix, and the history-length / ICL-example-count sweeps.

use serde::Serialize;

use dyta_core::dataset::Placement;

use crate::config::Preset;
use crate::runner::{EvalError, Harness, Method, RunOptions, RunReport, PAGE_SIZE};

/// One condition cell of the position-bias grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositionBiasRow {
    pub direct_prompting: bool,
    /// Where the ground truth was pinned in the page, 1-based.
    pub position: usize,
    /// Fraction of users whose top-1 choice was the ground truth.
    pub hit_rate: f64,
    pub ndcg_at_10: f64,
    pub users: usize,
}

/// Pins the ground truth at every page position, with and without the
/// explicit positions-carry-no-significance prompt sentence, and measures
/// how often the agent's first choice is the ground truth. One run (the
/// first seed), the shared user sample throughout.
pub fn position_bias_experiment(
    harness: &Harness,
    preset: Preset,
) -> Result<Vec<PositionBiasRow>, EvalError> {
    let Method::Agent(base) = preset.method(&harness.config) else {
        return Err(EvalError::Config(format!(
            "position bias needs an agent preset, not {}",
            preset.name()
        )));
    };
    let seeds = vec![harness.config.seeds[0]];
    let mut rows = Vec::with_capacity(2 * PAGE_SIZE);
    for direct_prompting in [false, true] {
        for position in 1..=PAGE_SIZE {
            let mut agent = base.clone();
            agent.direct_prompting = direct_prompting;
            let opts = RunOptions {
                placement: Placement::Fixed(position),
                seeds: Some(seeds.clone()),
                ledger_dir: None,
            };
            let name = format!(
                "{}-pos{}-direct_{}",
                preset.name(),
                position,
                direct_prompting
            );
            let report = harness.run_with(&name, &Method::Agent(agent), &opts)?;
            let run = &report.per_run[0];
            rows.push(PositionBiasRow {
                direct_prompting,
                position,
                hit_rate: run.top1_hits as f64 / run.users_evaluated.max(1) as f64,
                ndcg_at_10: run.ndcg_at_10,
                users: run.users_evaluated,
            });
        }
    }
    Ok(rows)
}

/// A normalized histogram over the five rating values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatingDistribution {
    pub probabilities: [f64; 5],
}

impl RatingDistribution {
    pub fn from_counts(counts: [u64; 5]) -> Option<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return None;
        }
        let mut probabilities = [0.0; 5];
        for (p, &c) in probabilities.iter_mut().zip(&counts) {
            *p = c as f64 / total as f64;
        }
        Some(Self { probabilities })
    }

    pub fn from_ratings<'a>(ratings: impl IntoIterator<Item = &'a u8>) -> Option<Self> {
        let mut counts = [0u64; 5];
        for &rating in ratings {
            assert!((1..=5).contains(&rating), "ratings are 1..=5");
            counts[rating as usize - 1] += 1;
        }
        Self::from_counts(counts)
    }

    /// Total variation distance: half the L1 distance between the
    /// probability vectors; 0 for identical distributions, 1 for disjoint.
    pub fn tv_distance(&self, other: &Self) -> f64 {
        0.5 * self
            .probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
    }
}

/// Normalizes both samples and reports their total variation distance.
pub fn rating_distribution_analysis(
    simulated: &[u8],
    reference: &[u8],
) -> Result<(RatingDistribution, RatingDistribution, f64), EvalError> {
    let sim = RatingDistribution::from_ratings(simulated)
        .ok_or_else(|| EvalError::Config("no simulated ratings".into()))?;
    let real = RatingDistribution::from_ratings(reference)
        .ok_or_else(|| EvalError::Config("no reference ratings".into()))?;
    let tv = sim.tv_distance(&real);
    Ok((sim, real, tv))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingDistReport {
    pub preset: String,
    pub simulated: RatingDistribution,
    pub dataset: RatingDistribution,
    pub tv_distance: f64,
}

/// Runs the preset, collects every simulated rating, and compares its
/// distribution against the sampled users' real rating histogram.
pub fn rating_distribution_experiment(
    harness: &Harness,
    preset: Preset,
) -> Result<(RunReport, RatingDistReport), EvalError> {
    let report = harness.run(preset)?;
    let mut sim_counts = [0u64; 5];
    for run in &report.per_run {
        for (acc, &count) in sim_counts.iter_mut().zip(&run.rating_histogram) {
            *acc += count as u64;
        }
    }
    let simulated = RatingDistribution::from_counts(sim_counts).ok_or_else(|| {
        EvalError::Config(format!("preset {} produced no ratings", preset.name()))
    })?;

    let mut real_counts = [0u64; 5];
    for user in &harness.users {
        for interaction in &harness.data.sequences[user].interactions {
            real_counts[interaction.rating as usize - 1] += 1;
        }
    }
    let dataset = RatingDistribution::from_counts(real_counts)
        .ok_or_else(|| EvalError::Config("sampled users have no ratings".into()))?;

    let dist = RatingDistReport {
        preset: preset.name().to_string(),
        tv_distance: simulated.tv_distance(&dataset),
        simulated,
        dataset,
    };
    Ok((report, dist))
}

/// The nine agent rows of the ablation table, evaluated on identical
/// pages (same seeds, same user sample).
pub fn ablation_matrix(harness: &Harness) -> Result<Vec<RunReport>, EvalError> {
    Preset::ABLATION.iter().map(|&preset| harness.run(preset)).collect()
}

pub const DEFAULT_HISTORY_SWEEP: [usize; 4] = [5, 10, 15, 20];
pub const DEFAULT_ICL_SWEEP: [usize; 4] = [0, 3, 6, 9];

/// Full-pipeline runs with the history window length overridden.
pub fn history_sweep(
    harness: &Harness,
    lengths: &[usize],
) -> Result<Vec<(usize, RunReport)>, EvalError> {
    sweep(harness, lengths, |agent, len| agent.history_len = len)
}

/// Full-pipeline runs with the ICL example count overridden.
pub fn icl_sweep(
    harness: &Harness,
    ks: &[usize],
) -> Result<Vec<(usize, RunReport)>, EvalError> {
    sweep(harness, ks, |agent, k| agent.icl_k = k)
}

fn sweep(
    harness: &Harness,
    values: &[usize],
    set: impl Fn(&mut dyta_core::agent::AgentConfig, usize),
) -> Result<Vec<(usize, RunReport)>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Config("sweep values must be non-empty".into()));
    }
    let Method::Agent(base) = Preset::DytaRrf.method(&harness.config) else {
        unreachable!("dyta_rrf is an agent preset");
    };
    values
        .iter()
        .map(|&value| {
            let mut agent = base.clone();
            set(&mut agent, value);
            let name = format!("dyta_rrf-sweep{value}");
            harness
                .run_with(&name, &Method::Agent(agent), &RunOptions::default())
                .map(|report| (value, report))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::runner::BackendSpec;
    use dyta_core::dataset::synth::{generate_ml1m, SynthConfig};
    use dyta_core::gateway::MockPolicy;

    fn harness(policy: MockPolicy, users: usize) -> (tempfile::TempDir, Harness) {
        let dir = tempfile::tempdir().unwrap();
        generate_ml1m(dir.path(), &SynthConfig::default()).unwrap();
        let mut config = RunConfig::minimal(dir.path());
        config.user_sample.count = users;
        config.runs = 1;
        config.seeds = vec![7];
        let harness = Harness::new(config, BackendSpec::Mock(policy)).unwrap();
        (dir, harness)
    }

    #[test]
    fn position_picker_hits_only_the_first_slot() {
        let (_dir, harness) = harness(MockPolicy::PositionPicker, 5);
        let rows = position_bias_experiment(&harness, Preset::DytaRrf).unwrap();
        assert_eq!(rows.len(), 2 * PAGE_SIZE);
        for row in &rows {
            let expected = if row.position == 1 { 1.0 } else { 0.0 };
            assert_eq!(
                row.hit_rate, expected,
                "position {} direct {}",
                row.position, row.direct_prompting
            );
            assert_eq!(row.users, 5);
        }
    }

    #[test]
    fn gt_first_is_position_insensitive() {
        let (_dir, harness) = harness(MockPolicy::GtFirst, 4);
        let rows = position_bias_experiment(&harness, Preset::DytaRrf).unwrap();
        assert!(rows.iter().all(|r| r.hit_rate == 1.0 && r.ndcg_at_10 == 1.0));
    }

    #[test]
    fn position_bias_rejects_non_agent_presets() {
        let (_dir, harness) = harness(MockPolicy::GtFirst, 4);
        assert!(position_bias_experiment(&harness, Preset::Random).is_err());
    }

    #[test]
    fn tv_distance_hand_computed_values() {
        let identical = RatingDistribution::from_ratings(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(identical.tv_distance(&identical), 0.0);

        let all_fives = RatingDistribution::from_ratings(&[5, 5, 5]).unwrap();
        let all_ones = RatingDistribution::from_ratings(&[1, 1]).unwrap();
        assert_eq!(all_fives.tv_distance(&all_ones), 1.0);

        // Two-bin case (0.6, 0.4) vs (0.4, 0.6) over ratings {1, 2}.
        let p = RatingDistribution::from_ratings(&[1, 1, 1, 2, 2]).unwrap();
        let q = RatingDistribution::from_ratings(&[1, 1, 2, 2, 2]).unwrap();
        assert!((p.tv_distance(&q) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rating_analysis_rejects_empty_samples() {
        assert!(rating_distribution_analysis(&[], &[1]).is_err());
        assert!(rating_distribution_analysis(&[1], &[]).is_err());
    }

    #[test]
    fn rating_experiment_builds_both_distributions() {
        let (_dir, harness) = harness(MockPolicy::GtFirst, 6);
        let (report, dist) = rating_distribution_experiment(&harness, Preset::DytaRrf).unwrap();
        assert!(!report.invalid);
        // Default mock rating reply is always 4.
        assert_eq!(dist.simulated.probabilities[3], 1.0);
        let sum: f64 = dist.dataset.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&dist.tv_distance));
    }

    #[test]
    fn ablation_covers_nine_presets_on_identical_pages() {
        let (_dir, harness) = harness(MockPolicy::GtFirst, 3);
        let reports = ablation_matrix(&harness).unwrap();
        assert_eq!(reports.len(), 9);
        let names: Vec<&str> = reports.iter().map(|r| r.preset.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "long_term",
                "long_short",
                "sequential",
                "clustering",
                "seq_long",
                "no_saa_bc",
                "no_saa_rrf",
                "dyta_bc",
                "dyta_rrf"
            ]
        );
        for report in &reports {
            assert_eq!(report.manifest.users, reports[0].manifest.users);
            assert_eq!(report.manifest.run_seeds, reports[0].manifest.run_seeds);
            assert_eq!(report.metrics.ndcg_at_5, 1.0, "{}", report.preset);
        }
    }

    #[test]
    fn sweeps_cover_their_grids() {
        let (_dir, harness) = harness(MockPolicy::GtFirst, 3);
        let history = history_sweep(&harness, &DEFAULT_HISTORY_SWEEP).unwrap();
        assert_eq!(
            history.iter().map(|(v, _)| *v).collect::<Vec<_>>(),
            vec![5, 10, 15, 20]
        );
        let icl = icl_sweep(&harness, &DEFAULT_ICL_SWEEP).unwrap();
        assert_eq!(icl.iter().map(|(v, _)| *v).collect::<Vec<_>>(), vec![0, 3, 6, 9]);
        // Parameter-insensitive under the oracle mock.
        for (_, report) in history.iter().chain(&icl) {
            assert_eq!(report.metrics.ndcg_at_5, 1.0);
        }
        assert!(history_sweep(&harness, &[]).is_err());
    }
}
