//! The evaluation loop: sample users once, then for every run seed build
//! each user's candidate page, let the method rank it, and reduce
//! ground-truth ranks into metric means — first over users, then over
//! runs. User evaluations are independent and run in parallel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use dyta_core::agent::{AgentConfig, AgentState};
use dyta_core::dataset::{
    build_candidate_page, build_sequences, leave_one_out_split, load_ml1m, sample_negatives,
    sample_users, Catalog, DatasetError, InteractionHistory, Placement, PopularityConfig,
    PopularityIndex,
};
use dyta_core::gateway::{Gateway, GatewayError, LiveBackend, LiveSettings, MockPolicy,
    RequestDefaults};
use dyta_core::prompts::TemplateStore;
use dyta_core::{
    derive_seed, StageContext, UserId, SEED_SALT_NEGATIVES, SEED_SALT_PAGE,
    SEED_SALT_RANDOM_BASELINE,
};

use crate::baselines::{bm25_rank, Bm25Params};
use crate::config::{Preset, RunConfig};
use crate::metrics::page_metrics;

/// Candidate pages hold the ground truth plus this many negatives.
pub const NEGATIVES_PER_PAGE: usize = 9;
pub const PAGE_SIZE: usize = NEGATIVES_PER_PAGE + 1;

/// A run is marked invalid when more than this fraction of its users fail.
pub const FAILURE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error("backend: {0}")]
    Backend(#[from] GatewayError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Gateway errors that invalidate the whole run rather than one user.
fn is_fatal_gateway(error: &GatewayError) -> bool {
    matches!(
        error,
        GatewayError::Auth { .. }
            | GatewayError::MissingApiKey(_)
            | GatewayError::InvalidRequest(_)
            | GatewayError::Ledger(_)
    )
}

/// What ranks a candidate page: the LLM agent, a uniform shuffle, or BM25
/// text matching.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Agent(AgentConfig),
    Random,
    Bm25,
}

/// How each run's gateway is built.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    Mock(MockPolicy),
    Live(LiveSettings),
}

impl BackendSpec {
    pub fn gateway(&self, max_concurrency: usize) -> Result<Gateway, EvalError> {
        let gateway = match self {
            BackendSpec::Mock(policy) => Gateway::mock(policy.clone()),
            BackendSpec::Live(settings) => {
                Gateway::new(Box::new(LiveBackend::from_env(settings)?))
            }
        };
        Ok(gateway.with_concurrency(max_concurrency))
    }
}

/// The dataset after ingestion: chronological per-user sequences, the
/// popularity index used for profile statistics, and the users eligible
/// for leave-one-out evaluation (at least two interactions).
pub struct PreparedData {
    pub catalog: Catalog,
    pub sequences: BTreeMap<UserId, InteractionHistory>,
    pub popularity: PopularityIndex,
    pub eligible_users: Vec<UserId>,
    /// Users excluded because their history is too short to split.
    pub short_history_users: usize,
}

impl PreparedData {
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let catalog = load_ml1m(dir)?;
        let sequences = build_sequences(&catalog);
        let popularity = PopularityIndex::build(&sequences, &PopularityConfig::default());
        let eligible_users: Vec<UserId> = sequences
            .iter()
            .filter(|(_, h)| h.len() >= 2)
            .map(|(&u, _)| u)
            .collect();
        let short_history_users = sequences.len() - eligible_users.len();
        Ok(Self { catalog, sequences, popularity, eligible_users, short_history_users })
    }
}

/// Everything shared across runs and presets: prepared data, templates,
/// request defaults, the fixed user sample, and the config digest.
pub struct Harness {
    pub data: PreparedData,
    pub templates: TemplateStore,
    pub defaults: RequestDefaults,
    pub users: Vec<UserId>,
    pub config: RunConfig,
    pub backend: BackendSpec,
    config_digest: String,
}

impl Harness {
    pub fn new(config: RunConfig, backend: BackendSpec) -> Result<Self, EvalError> {
        config.validate()?;
        let data = PreparedData::load(&config.dataset_dir)?;
        if data.eligible_users.is_empty() {
            return Err(EvalError::Config(
                "dataset has no user with at least two interactions".into(),
            ));
        }
        let users = sample_users(
            &data.eligible_users,
            config.user_sample.count,
            config.user_sample.seed,
        );
        let templates = match &config.prompts_dir {
            Some(dir) => {
                TemplateStore::from_dir(dir).map_err(|e| EvalError::Config(e.to_string()))?
            }
            None => TemplateStore::defaults(),
        };
        let defaults = RequestDefaults {
            model_name: config.llm.model_name.clone(),
            temperature: config.llm.temperature,
            top_p: config.llm.top_p,
            ..RequestDefaults::default()
        };
        let config_digest = config.digest();
        Ok(Self { data, templates, defaults, users, config, backend, config_digest })
    }

    /// Runs a preset with the config's seeds, random placement, and no
    /// ledger files.
    pub fn run(&self, preset: Preset) -> Result<RunReport, EvalError> {
        self.run_with(preset.name(), &preset.method(&self.config), &RunOptions::default())
    }

    /// Runs an arbitrary method under explicit options.
    pub fn run_with(
        &self,
        name: &str,
        method: &Method,
        opts: &RunOptions,
    ) -> Result<RunReport, EvalError> {
        let seeds = opts.seeds.clone().unwrap_or_else(|| self.config.seeds.clone());
        let mut per_run = Vec::with_capacity(seeds.len());
        let mut ledger_files = Vec::new();
        for (run_idx, &seed) in seeds.iter().enumerate() {
            let mut gateway = self.backend.gateway(self.config.llm.max_concurrency)?;
            if let Some(dir) = &opts.ledger_dir {
                let file = format!("calls-run{run_idx}.jsonl");
                gateway = gateway.with_ledger_file(&dir.join(&file))?;
                ledger_files.push(file);
            }
            let outcomes: Vec<Result<UserOutcome, String>> = self
                .users
                .par_iter()
                .map(|&user| self.eval_user(user, seed, method, &gateway, opts.placement))
                .collect::<Result<_, EvalError>>()?;
            gateway.flush_ledger()?;
            per_run.push(reduce_run(seed, &self.users, &outcomes));
            let run = per_run.last().unwrap();
            log::info!(
                "{name} run {run_idx} (seed {seed}): nDCG@5 {:.4}, nDCG@10 {:.4}, HR@3 {:.4}, \
                 {} users, {} failures",
                run.ndcg_at_5,
                run.ndcg_at_10,
                run.hr_at_3,
                run.users_evaluated,
                run.failures
            );
        }
        let invalid = per_run
            .iter()
            .any(|r| r.failures as f64 > FAILURE_THRESHOLD * self.users.len() as f64);
        let mean = |f: fn(&RunMetrics) -> f64| {
            per_run.iter().map(f).sum::<f64>() / per_run.len() as f64
        };
        Ok(RunReport {
            preset: name.to_string(),
            metrics: MeanMetrics {
                ndcg_at_5: mean(|r| r.ndcg_at_5),
                ndcg_at_10: mean(|r| r.ndcg_at_10),
                hr_at_3: mean(|r| r.hr_at_3),
            },
            per_run,
            user_count: self.users.len(),
            runs: seeds.len(),
            invalid,
            manifest: Manifest {
                config_digest: self.config_digest.clone(),
                user_sample_seed: self.config.user_sample.seed,
                run_seeds: seeds,
                users: self.users.clone(),
                backend: match &self.backend {
                    BackendSpec::Mock(_) => "mock".to_string(),
                    BackendSpec::Live(_) => "live".to_string(),
                },
                placement: match opts.placement {
                    Placement::Random => "random".to_string(),
                    Placement::Fixed(p) => format!("fixed:{p}"),
                },
                ledger_files,
                pages_note: PAGES_NOTE.to_string(),
            },
        })
    }

    /// Evaluates one user under one run seed. The outer error aborts the
    /// run (fatal backend/config problems); the inner error marks this
    /// user as skipped-and-counted.
    fn eval_user(
        &self,
        user: UserId,
        run_seed: u64,
        method: &Method,
        gateway: &Gateway,
        placement: Placement,
    ) -> Result<Result<UserOutcome, String>, EvalError> {
        let history = &self.data.sequences[&user];
        let Some((prefix, target)) = leave_one_out_split(history) else {
            return Ok(Err(format!("user {user}: history too short to split")));
        };
        let negatives = match sample_negatives(
            history,
            &self.data.catalog,
            NEGATIVES_PER_PAGE,
            derive_seed(run_seed, user, SEED_SALT_NEGATIVES),
        ) {
            Ok(negatives) => negatives,
            Err(e) => return Ok(Err(format!("user {user}: {e}"))),
        };
        let page = match build_candidate_page(
            target.item_id,
            &negatives,
            derive_seed(run_seed, user, SEED_SALT_PAGE),
            placement,
        ) {
            Ok(page) => page,
            Err(e) => return Ok(Err(format!("user {user}: {e}"))),
        };

        match method {
            Method::Agent(agent_config) => {
                let Some(user_rec) = self.data.catalog.users.get(&user) else {
                    return Ok(Err(format!("user {user}: no demographic record")));
                };
                let ctx = StageContext {
                    gateway,
                    templates: &self.templates,
                    defaults: &self.defaults,
                    catalog: &self.data.catalog,
                };
                let (mut state, init_truncated) = match AgentState::init(
                    &ctx,
                    agent_config,
                    user_rec,
                    &prefix,
                    &self.data.popularity,
                ) {
                    Ok(v) => v,
                    Err(e) if is_fatal_gateway(&e) => return Err(e.into()),
                    Err(e) => return Ok(Err(format!("user {user}: init: {e}"))),
                };
                let decision = match state.decide(&ctx, &page, agent_config) {
                    Ok(d) => d,
                    Err(e) if is_fatal_gateway(&e) => return Err(e.into()),
                    Err(e) => return Ok(Err(format!("user {user}: decide: {e}"))),
                };
                let rank = rank_of(&decision.final_ranking, page.ground_truth);
                Ok(Ok(UserOutcome {
                    rank,
                    top1_hit: decision.chosen == page.ground_truth,
                    rating: Some(decision.rating),
                    fallback: decision.fallback,
                    truncated: init_truncated || decision.truncated,
                }))
            }
            Method::Random => {
                let mut order = page.order.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    run_seed,
                    user,
                    SEED_SALT_RANDOM_BASELINE,
                ));
                order.shuffle(&mut rng);
                let rank = rank_of(&order, page.ground_truth);
                Ok(Ok(UserOutcome {
                    rank,
                    top1_hit: order[0] == page.ground_truth,
                    rating: None,
                    fallback: false,
                    truncated: false,
                }))
            }
            Method::Bm25 => {
                let query = preference_text(&prefix, &self.data.catalog);
                let ranked =
                    bm25_rank(&query, &page, &self.data.catalog, &Bm25Params::default());
                let rank = rank_of(&ranked.order, page.ground_truth);
                Ok(Ok(UserOutcome {
                    rank,
                    top1_hit: ranked.order[0] == page.ground_truth,
                    rating: None,
                    fallback: false,
                    truncated: false,
                }))
            }
        }
    }
}

/// Options for `run_with`; the default mirrors `Harness::run`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub placement: Placement,
    /// Uses the config's seeds when unset.
    pub seeds: Option<Vec<u64>>,
    /// When set, each run writes its gateway ledger here.
    pub ledger_dir: Option<PathBuf>,
}

/// One user's page result inside a run.
#[derive(Debug, Clone, PartialEq)]
pub struct UserOutcome {
    /// 1-based rank of the ground truth in the final ranking.
    pub rank: usize,
    /// Whether the method put the ground truth first.
    pub top1_hit: bool,
    /// The simulated rating, for agent methods.
    pub rating: Option<u8>,
    pub fallback: bool,
    pub truncated: bool,
}

fn rank_of(order: &[dyta_core::ItemId], ground_truth: dyta_core::ItemId) -> usize {
    order
        .iter()
        .position(|&id| id == ground_truth)
        .expect("final ranking keeps the full candidate set")
        + 1
}

/// The BM25 query: titles and genres of everything in the user's prefix
/// history, i.e. a purely textual stand-in for their preferences.
pub fn preference_text(prefix: &InteractionHistory, catalog: &Catalog) -> String {
    let mut text = String::new();
    for interaction in &prefix.interactions {
        if let Some(item) = catalog.items.get(&interaction.item_id) {
            text.push_str(&item.title);
            text.push(' ');
            for genre in &item.genres {
                text.push_str(genre);
                text.push(' ');
            }
        }
    }
    text
}

fn reduce_run(seed: u64, users: &[UserId], outcomes: &[Result<UserOutcome, String>]) -> RunMetrics {
    debug_assert_eq!(users.len(), outcomes.len());
    let mut metrics = RunMetrics { seed, ..RunMetrics::default() };
    let (mut n5, mut n10, mut h3) = (0.0, 0.0, 0.0);
    for (user, outcome) in users.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                let (a, b, c) = page_metrics(o.rank);
                n5 += a;
                n10 += b;
                h3 += c;
                metrics.users_evaluated += 1;
                metrics.top1_hits += usize::from(o.top1_hit);
                metrics.fallback_pages += usize::from(o.fallback);
                metrics.truncated_prompts += usize::from(o.truncated);
                if let Some(rating) = o.rating {
                    metrics.rating_histogram[rating as usize - 1] += 1;
                }
            }
            Err(reason) => {
                log::warn!("seed {seed}: user {user} skipped: {reason}");
                metrics.failures += 1;
            }
        }
    }
    if metrics.users_evaluated > 0 {
        let count = metrics.users_evaluated as f64;
        metrics.ndcg_at_5 = n5 / count;
        metrics.ndcg_at_10 = n10 / count;
        metrics.hr_at_3 = h3 / count;
    }
    metrics
}

/// Means over runs of the per-run user means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanMetrics {
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub hr_at_3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RunMetrics {
    pub seed: u64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub hr_at_3: f64,
    pub users_evaluated: usize,
    pub failures: usize,
    pub top1_hits: usize,
    pub fallback_pages: usize,
    pub truncated_prompts: usize,
    pub rating_histogram: [u32; 5],
}

const PAGES_NOTE: &str = "candidate pages derive from (run seed, user id) only; \
    every method and preset faces identical pages per seed";

/// Everything needed to reproduce and audit a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub config_digest: String,
    pub user_sample_seed: u64,
    pub run_seeds: Vec<u64>,
    pub users: Vec<UserId>,
    pub backend: String,
    pub placement: String,
    pub ledger_files: Vec<String>,
    pub pages_note: String,
}

/// The report for one preset/method evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub preset: String,
    pub metrics: MeanMetrics,
    pub per_run: Vec<RunMetrics>,
    pub user_count: usize,
    pub runs: usize,
    pub invalid: bool,
    pub manifest: Manifest,
}

/// Convenience entry point: prepare the harness and run one preset.
pub fn run_evaluation(
    config: RunConfig,
    backend: BackendSpec,
    preset: Preset,
) -> Result<RunReport, EvalError> {
    Harness::new(config, backend)?.run(preset)
}
