//! Per-agent state — fixed long-term profile, cadence-refreshed short-term
//! profile, two-tier memory — and the full decision a simulated user makes
//! over one candidate page: rank with every enabled signal, fuse, pick,
//! rate, remember.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    compute_stat_patterns, CandidatePage, Interaction, InteractionHistory, PopularityIndex,
    StatPatterns, UserRecord,
};
use crate::fusion::{self, FusionConfig, RankList, SignalSource};
use crate::gateway::{complete_ranking, GatewayError};
use crate::prompts::{self, HISTORY_CHAR_BUDGET, MEMORY_CHAR_BUDGET};
use crate::temporal::{self, PatternFlags};
use crate::{ItemId, StageContext, UserId};

/// ML-1M occupation codes, used to render demographics readably.
const OCCUPATIONS: &[&str] = &[
    "other", "academic/educator", "artist", "clerical/admin", "college/grad student",
    "customer service", "doctor/health care", "executive/managerial", "farmer", "homemaker",
    "K-12 student", "lawyer", "programmer", "retired", "sales/marketing", "scientist",
    "self-employed", "technician/engineer", "tradesman/craftsman", "unemployed", "writer",
];

/// Fixed after initialization; only ever read afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermProfile {
    pub demographics: String,
    pub personality: String,
    pub item_preferences: String,
    pub stats: StatPatterns,
    /// Set when an extraction call failed and a text field is empty.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortTermProfile {
    pub summary: String,
    /// 0 before the first cadence refresh, then the refresh round.
    pub last_updated_round: u32,
}

/// A consolidated pattern note with the round it was extracted at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySummary {
    pub round: u32,
    pub text: String,
}

/// Two-tier memory: a bounded log of recent interactions (feelings
/// included) and an append-only list of consolidated summaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub short_term: VecDeque<Interaction>,
    pub long_term: Vec<MemorySummary>,
    pub short_term_capacity: usize,
}

impl MemoryStore {
    fn new(capacity: usize) -> Self {
        Self {
            short_term: VecDeque::with_capacity(capacity),
            long_term: Vec::new(),
            short_term_capacity: capacity,
        }
    }

    fn remember(&mut self, interaction: Interaction) {
        if self.short_term.len() == self.short_term_capacity {
            self.short_term.pop_front();
        }
        self.short_term.push_back(interaction);
    }
}

/// Which rank signals an agent computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalToggles {
    pub profile: bool,
    pub sequential: bool,
    pub clustering: bool,
}

impl Default for SignalToggles {
    fn default() -> Self {
        Self { profile: true, sequential: true, clustering: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub history_len: usize,
    pub update_cadence: u32,
    pub icl_k: usize,
    pub signals: SignalToggles,
    /// Analysis and ranking as separate clustering calls (the default) or
    /// one combined call.
    pub two_step_clustering: bool,
    /// Maintain the short-term profile and cadence-driven memory
    /// consolidation (off in the long-term-only ablation).
    pub short_term_enabled: bool,
    pub direct_prompting: bool,
    pub fusion: FusionConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            history_len: 10,
            update_cadence: 5,
            icl_k: 3,
            signals: SignalToggles::default(),
            two_step_clustering: true,
            short_term_enabled: true,
            direct_prompting: false,
            fusion: FusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub user_id: UserId,
    pub long_term: LongTermProfile,
    pub short_term: ShortTermProfile,
    pub memory: MemoryStore,
    pub round: u32,
    pub history_window: VecDeque<Interaction>,
    pub history_len: usize,
}

/// What one decide() call produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub final_ranking: Vec<ItemId>,
    pub chosen: ItemId,
    pub rating: u8,
    pub feeling: String,
    pub flags: PatternFlags,
    /// True when every enabled signal failed and the ranking fell back to
    /// page order.
    pub fallback: bool,
    /// How many enabled signals failed on transport.
    pub failed_signals: u32,
    /// True when any prompt section was truncated to its budget.
    pub truncated: bool,
}

/// Whether a gateway error poisons the whole run (configuration) rather
/// than just the one signal that hit it.
fn is_fatal(error: &GatewayError) -> bool {
    matches!(
        error,
        GatewayError::Auth { .. } | GatewayError::MissingApiKey(_) | GatewayError::Ledger(_)
    )
}

/// Builds the immutable long-term profile: demographics from the user
/// record, statistics over the full prefix, and two LLM extractions
/// (personality, item preferences; both tagged `profile.init`). A failed
/// extraction leaves its field empty and sets `degraded`.
pub fn init_long_term(
    ctx: &StageContext<'_>,
    user: &UserRecord,
    prefix: &InteractionHistory,
    popularity: &PopularityIndex,
) -> Result<(LongTermProfile, bool), GatewayError> {
    let stats = compute_stat_patterns(&prefix.interactions, popularity);
    let (history_text, truncated) =
        prompts::render_history(&prefix.interactions, ctx.catalog, HISTORY_CHAR_BUDGET);

    let mut degraded = false;
    let mut extract = |template: &str| -> Result<String, GatewayError> {
        let prompt = ctx
            .templates
            .render(template, &[("history", history_text.as_str())])
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        match ctx.gateway.complete(&ctx.defaults.request("profile.init", prompt)) {
            Ok(response) if !response.content.trim().is_empty() => Ok(response.content),
            Ok(_) => {
                log::warn!("user {}: empty {template} extraction", user.user_id);
                degraded = true;
                Ok(String::new())
            }
            Err(e) if is_fatal(&e) => Err(e),
            Err(e) => {
                log::warn!("user {}: {template} extraction failed: {e}", user.user_id);
                degraded = true;
                Ok(String::new())
            }
        }
    };
    let personality = extract("profile_personality")?;
    let item_preferences = extract("profile_preferences")?;

    let occupation = OCCUPATIONS
        .get(user.occupation as usize)
        .copied()
        .unwrap_or("unknown");
    let demographics = format!(
        "gender {:?}, age bracket {}, occupation: {}",
        user.gender, user.age_bracket, occupation
    );
    Ok((
        LongTermProfile { demographics, personality, item_preferences, stats, degraded },
        truncated,
    ))
}

impl AgentState {
    /// Initializes an agent from its prefix history: long-term profile,
    /// history window and short-term memory seeded from the newest
    /// `history_len` interactions, and (when enabled) a first short-term
    /// summary. Returns the state plus a prompt-truncation flag.
    pub fn init(
        ctx: &StageContext<'_>,
        config: &AgentConfig,
        user: &UserRecord,
        prefix: &InteractionHistory,
        popularity: &PopularityIndex,
    ) -> Result<(Self, bool), GatewayError> {
        let (long_term, mut truncated) = init_long_term(ctx, user, prefix, popularity)?;
        let window_start = prefix.len().saturating_sub(config.history_len);
        let window: VecDeque<Interaction> =
            prefix.interactions[window_start..].iter().cloned().collect();
        let mut memory = MemoryStore::new(config.history_len);
        for interaction in &window {
            memory.remember(interaction.clone());
        }
        let mut state = Self {
            user_id: user.user_id,
            long_term,
            short_term: ShortTermProfile { summary: String::new(), last_updated_round: 0 },
            memory,
            round: 0,
            history_window: window,
            history_len: config.history_len,
        };
        if config.short_term_enabled {
            truncated |= state.refresh_short_term(ctx)?;
        }
        Ok((state, truncated))
    }

    fn window_slice(&self) -> Vec<Interaction> {
        self.history_window.iter().cloned().collect()
    }

    /// Regenerates the short-term summary from the current window (tag
    /// `profile.short`). On failure the previous summary is retained.
    fn refresh_short_term(&mut self, ctx: &StageContext<'_>) -> Result<bool, GatewayError> {
        let window = self.window_slice();
        let (history_text, truncated) =
            prompts::render_history(&window, ctx.catalog, HISTORY_CHAR_BUDGET);
        let prompt = ctx
            .templates
            .render("profile_short", &[("history", history_text.as_str())])
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        match ctx.gateway.complete(&ctx.defaults.request("profile.short", prompt)) {
            Ok(response) => {
                self.short_term.summary = response.content;
                self.short_term.last_updated_round = self.round;
            }
            Err(e) if is_fatal(&e) => return Err(e),
            Err(e) => {
                log::warn!("user {}: short-term refresh failed: {e}", self.user_id);
            }
        }
        Ok(truncated)
    }

    /// Cadence refresh, called by the orchestrator when
    /// `round % update_cadence == 0 && round > 0`.
    pub fn update_short_term(&mut self, ctx: &StageContext<'_>) -> Result<bool, GatewayError> {
        self.refresh_short_term(ctx)
    }

    /// Appends the interaction to the history window and short-term memory
    /// and advances the round counter.
    pub fn record_interaction(&mut self, item_id: ItemId, rating: u8, feeling: String) {
        debug_assert!((1..=5).contains(&rating));
        let timestamp = self
            .history_window
            .back()
            .map(|i| i.timestamp + 3600)
            .unwrap_or(1);
        let interaction = Interaction {
            item_id,
            rating,
            timestamp,
            feeling: Some(feeling),
        };
        if self.history_window.len() == self.history_len {
            self.history_window.pop_front();
        }
        self.history_window.push_back(interaction.clone());
        self.memory.remember(interaction);
        self.round += 1;
    }

    /// Distills short-term memory into one appended long-term summary (tag
    /// `memory.consolidate`). Empty short-term memory makes no call;
    /// failure appends nothing. Short-term entries are retained either way.
    pub fn consolidate_memory(&mut self, ctx: &StageContext<'_>) -> Result<(), GatewayError> {
        if self.memory.short_term.is_empty() {
            return Ok(());
        }
        let entries = self.memory.short_term.iter().cloned().collect::<Vec<_>>();
        let (memory_text, _) =
            prompts::render_history(&entries, ctx.catalog, MEMORY_CHAR_BUDGET);
        let prompt = match ctx
            .templates
            .render("memory_consolidate", &[("memory", memory_text.as_str())])
        {
            Ok(prompt) => prompt,
            Err(e) => return Err(GatewayError::InvalidRequest(e.to_string())),
        };
        match ctx.gateway.complete(&ctx.defaults.request("memory.consolidate", prompt)) {
            Ok(response) => {
                self.memory.long_term.push(MemorySummary {
                    round: self.round,
                    text: response.content,
                });
                Ok(())
            }
            Err(e) if is_fatal(&e) => Err(e),
            Err(e) => {
                log::warn!("user {}: memory consolidation failed: {e}", self.user_id);
                Ok(())
            }
        }
    }

    /// Memory as shown to the model: newest first, long-term summaries
    /// before raw short-term entries, truncated to the memory budget.
    fn render_memory(&self, ctx: &StageContext<'_>) -> (String, bool) {
        let mut text = String::new();
        for summary in self.memory.long_term.iter().rev() {
            text.push_str(&format!("[round {}] {}\n", summary.round, summary.text));
        }
        for interaction in self.memory.short_term.iter().rev() {
            text.push_str(&format!(
                "{} | rated {}{}\n",
                prompts::item_line(interaction.item_id, ctx.catalog),
                interaction.rating,
                match &interaction.feeling {
                    Some(feeling) if !feeling.is_empty() => format!(" | felt: {feeling}"),
                    _ => String::new(),
                }
            ));
        }
        prompts::truncate_trailing(&text, MEMORY_CHAR_BUDGET)
    }

    fn render_long_term(&self) -> String {
        let stats = &self.long_term.stats;
        format!(
            "{}\nPersonality: {}\nPreferences: {}\nHabits: mean rating {:.2}; \
             ratings 1-5 given {} / {} / {} / {} / {} times; \
             {:.0}% of viewing is popular titles, {:.0}% highly rated ones.",
            self.long_term.demographics,
            self.long_term.personality,
            self.long_term.item_preferences,
            stats.mean_rating,
            stats.rating_histogram[0],
            stats.rating_histogram[1],
            stats.rating_histogram[2],
            stats.rating_histogram[3],
            stats.rating_histogram[4],
            stats.popular_item_fraction * 100.0,
            stats.high_rated_item_fraction * 100.0,
        )
    }

    /// The profile/memory rank signal r_l (tag `act.profile`).
    pub fn profile_rank(
        &self,
        ctx: &StageContext<'_>,
        page: &CandidatePage,
        direct_prompting: bool,
    ) -> Result<(RankList, bool), GatewayError> {
        let (memory_text, truncated) = self.render_memory(ctx);
        let short_term = if self.short_term.summary.is_empty() {
            "(none)"
        } else {
            &self.short_term.summary
        };
        let prompt = ctx
            .templates
            .render(
                "act_profile",
                &[
                    ("long_term", self.render_long_term().as_str()),
                    ("short_term", short_term),
                    ("memory", &memory_text),
                    ("candidates", &prompts::render_candidates(page, ctx.catalog)),
                    ("position_note", prompts::position_note(direct_prompting)),
                ],
            )
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let request = ctx.defaults.request("act.profile", prompt).with_page(page);
        let parsed = complete_ranking(ctx.gateway, &request, page)?;
        Ok((RankList::new(parsed.order, SignalSource::Profile), truncated))
    }

    /// Generates the rating and feeling for the chosen item (tag
    /// `act.rate`): one call, one integer-parse retry, then a fallback to
    /// the user's rounded mean rating.
    fn rate_chosen(
        &self,
        ctx: &StageContext<'_>,
        chosen: ItemId,
    ) -> Result<(u8, String), GatewayError> {
        let window = self.window_slice();
        let (history_text, _) =
            prompts::render_history(&window, ctx.catalog, HISTORY_CHAR_BUDGET);
        let prompt = ctx
            .templates
            .render(
                "act_rate",
                &[
                    ("long_term", self.render_long_term().as_str()),
                    ("history", &history_text),
                    ("candidates", &prompts::item_line(chosen, ctx.catalog)),
                ],
            )
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let request = ctx.defaults.request("act.rate", prompt);

        for attempt in 0..2 {
            match ctx.gateway.complete(&request) {
                Ok(response) => {
                    if let Some(parsed) = parse_rating_reply(&response.content) {
                        return Ok(parsed);
                    }
                    log::warn!(
                        "user {}: unparseable rating reply (attempt {})",
                        self.user_id,
                        attempt + 1
                    );
                }
                Err(e) if is_fatal(&e) => return Err(e),
                Err(e) => {
                    log::warn!("user {}: rating call failed: {e}", self.user_id);
                    break;
                }
            }
        }
        Ok((self.default_rating(), String::new()))
    }

    fn default_rating(&self) -> u8 {
        if self.long_term.stats.empty_history {
            3
        } else {
            (self.long_term.stats.mean_rating.round() as i64).clamp(1, 5) as u8
        }
    }

    /// One full decision over a candidate page: compute the enabled rank
    /// signals, fuse them, take the top item, rate it, and record the
    /// interaction (including cadence-driven short-term/memory refresh).
    pub fn decide(
        &mut self,
        ctx: &StageContext<'_>,
        page: &CandidatePage,
        config: &AgentConfig,
    ) -> Result<Decision, GatewayError> {
        let window = self.window_slice();
        let mut truncated = false;
        let mut failed_signals = 0u32;

        // Pattern detection gates the temporal signals only in adaptive
        // mode; static-weight ablations skip the call entirely.
        let flags = if config.fusion.adaptive
            && (config.signals.sequential || config.signals.clustering)
        {
            temporal::detect_patterns(ctx, &window)
        } else {
            PatternFlags::none()
        };
        let run_sequential = config.signals.sequential
            && !window.is_empty()
            && (!config.fusion.adaptive || flags.has_sequential);
        let run_clustering = config.signals.clustering
            && window.len() >= 2
            && (!config.fusion.adaptive || flags.has_clustering);

        let swallow = |result: Result<(RankList, bool), GatewayError>,
                           failed: &mut u32,
                           truncated: &mut bool|
         -> Result<Option<RankList>, GatewayError> {
            match result {
                Ok((list, t)) => {
                    *truncated |= t;
                    Ok(Some(list))
                }
                Err(e) if is_fatal(&e) => Err(e),
                Err(e) => {
                    log::warn!("signal failed: {e}");
                    *failed += 1;
                    Ok(None)
                }
            }
        };

        let profile_list = if config.signals.profile {
            swallow(
                self.profile_rank(ctx, page, config.direct_prompting),
                &mut failed_signals,
                &mut truncated,
            )?
        } else {
            None
        };
        let sequential_list = if run_sequential {
            let icl = temporal::build_icl_examples(&window, config.icl_k, ctx.catalog);
            swallow(
                temporal::sequential_rank(ctx, &window, page, &icl, config.direct_prompting)
                    .map(|l| (l, false)),
                &mut failed_signals,
                &mut truncated,
            )?
        } else {
            None
        };
        let clustering_list = if run_clustering {
            swallow(
                temporal::cluster_rank(
                    ctx,
                    &window,
                    page,
                    config.two_step_clustering,
                    config.direct_prompting,
                )
                .map(|l| (l, false)),
                &mut failed_signals,
                &mut truncated,
            )?
        } else {
            None
        };

        let (final_ranking, fallback) = match fusion::aggregate(
            profile_list.as_ref(),
            sequential_list.as_ref(),
            clustering_list.as_ref(),
            &flags,
            &config.fusion,
        ) {
            Ok(order) => (order, false),
            Err(e) => {
                log::warn!("user {}: no usable signal ({e}); using page order", self.user_id);
                (page.order.clone(), true)
            }
        };
        let chosen = final_ranking[0];

        let (rating, feeling) = self.rate_chosen(ctx, chosen)?;
        self.record_interaction(chosen, rating, feeling.clone());

        if config.short_term_enabled
            && self.round > 0
            && self.round.is_multiple_of(config.update_cadence)
        {
            truncated |= self.update_short_term(ctx)?;
            self.consolidate_memory(ctx)?;
        }

        Ok(Decision {
            final_ranking,
            chosen,
            rating,
            feeling,
            flags,
            fallback,
            failed_signals,
            truncated,
        })
    }
}

/// First line must contain an integer 1..=5; the rest (or the second line)
/// is the feeling text.
fn parse_rating_reply(raw: &str) -> Option<(u8, String)> {
    let mut lines = raw.trim().lines();
    let first = lines.next()?;
    let digits: String = first.chars().filter(|c| c.is_ascii_digit()).collect();
    let rating: u8 = digits.parse().ok()?;
    if !(1..=5).contains(&rating) {
        return None;
    }
    let feeling = lines.collect::<Vec<_>>().join(" ").trim().to_string();
    Some((rating, feeling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Catalog, Gender, ItemRecord};
    use crate::gateway::{Gateway, MockPolicy, RequestDefaults};
    use crate::prompts::TemplateStore;
    use std::collections::BTreeMap;

    fn toy_catalog(n: u32) -> Catalog {
        let genres = ["Drama", "Comedy", "Horror", "Sci-Fi"];
        let items: BTreeMap<u32, ItemRecord> = (1..=n)
            .map(|id| {
                (
                    id,
                    ItemRecord {
                        item_id: id,
                        title: format!("Movie {id} (1999)"),
                        year: 1999,
                        genres: vec![genres[(id % 4) as usize].into()],
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

    fn toy_user() -> UserRecord {
        UserRecord {
            user_id: 1,
            gender: Gender::F,
            age_bracket: 25,
            occupation: 12,
            zip: "12345".into(),
        }
    }

    fn prefix(ids: &[u32]) -> InteractionHistory {
        InteractionHistory {
            user_id: 1,
            interactions: ids
                .iter()
                .enumerate()
                .map(|(i, &item_id)| Interaction {
                    item_id,
                    rating: (i % 5) as u8 + 1,
                    timestamp: 978_000_000 + i as i64 * 86_400,
                    feeling: None,
                })
                .collect(),
        }
    }

    fn empty_popularity() -> PopularityIndex {
        PopularityIndex::build(&BTreeMap::new(), &Default::default())
    }

    struct Fixture {
        gateway: Gateway,
        templates: TemplateStore,
        defaults: RequestDefaults,
        catalog: Catalog,
    }

    impl Fixture {
        fn new(policy: MockPolicy) -> Self {
            Self {
                gateway: Gateway::mock(policy),
                templates: TemplateStore::defaults(),
                defaults: RequestDefaults::default(),
                catalog: toy_catalog(40),
            }
        }

        fn ctx(&self) -> StageContext<'_> {
            StageContext {
                gateway: &self.gateway,
                templates: &self.templates,
                defaults: &self.defaults,
                catalog: &self.catalog,
            }
        }

        fn count_tag(&self, tag: &str) -> usize {
            self.gateway.ledger().iter().filter(|e| e.tag == tag).count()
        }
    }

    fn page(order: &[u32], gt: u32) -> CandidatePage {
        CandidatePage { order: order.to_vec(), ground_truth: gt, seed: 0 }
    }

    fn init_agent(fixture: &Fixture, config: &AgentConfig, prefix_ids: &[u32]) -> AgentState {
        let user = toy_user();
        let history = prefix(prefix_ids);
        let (state, _) =
            AgentState::init(&fixture.ctx(), config, &user, &history, &empty_popularity())
                .unwrap();
        state
    }

    #[test]
    fn init_builds_profile_and_seeds_window() {
        let script: BTreeMap<String, String> = [
            ("profile.init".to_string(), "enjoys sci-fi".to_string()),
            ("profile.short".to_string(), "into comedies lately".to_string()),
        ]
        .into();
        let fixture = Fixture::new(MockPolicy::Scripted(script));
        let config = AgentConfig::default();
        let state = init_agent(&fixture, &config, &(1..=15).collect::<Vec<_>>());

        assert_eq!(state.long_term.personality, "enjoys sci-fi");
        assert_eq!(state.long_term.item_preferences, "enjoys sci-fi");
        assert!(!state.long_term.degraded);
        assert_eq!(state.short_term.summary, "into comedies lately");
        assert_eq!(state.short_term.last_updated_round, 0);
        assert_eq!(state.history_window.len(), 10, "window clamps to history_len");
        assert_eq!(state.round, 0);
        // Window holds the newest ten of fifteen interactions.
        assert_eq!(state.history_window.front().unwrap().item_id, 6);
        assert_eq!(state.history_window.back().unwrap().item_id, 15);
        assert_eq!(fixture.count_tag("profile.init"), 2);
        assert_eq!(fixture.count_tag("profile.short"), 1);
    }

    #[test]
    fn init_stats_mean_matches_ratings() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let mut history = prefix(&[1, 2, 3, 4, 5]);
        for (interaction, rating) in history.interactions.iter_mut().zip([5, 5, 4, 3, 3]) {
            interaction.rating = rating;
        }
        let (profile, _) =
            init_long_term(&fixture.ctx(), &toy_user(), &history, &empty_popularity()).unwrap();
        assert_eq!(profile.stats.mean_rating, 4.0);
    }

    #[test]
    fn empty_extraction_sets_degraded_but_continues() {
        let script: BTreeMap<String, String> = [
            ("profile.init".to_string(), "  ".to_string()),
            ("profile.short".to_string(), "summary".to_string()),
        ]
        .into();
        let fixture = Fixture::new(MockPolicy::Scripted(script));
        let (profile, _) = init_long_term(
            &fixture.ctx(),
            &toy_user(),
            &prefix(&[1, 2, 3]),
            &empty_popularity(),
        )
        .unwrap();
        assert!(profile.degraded);
        assert_eq!(profile.personality, "");
        assert!(!profile.stats.empty_history, "stats still computed");
    }

    #[test]
    fn long_term_profile_is_immutable_across_rounds() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig::default();
        let mut state = init_agent(&fixture, &config, &(1..=12).collect::<Vec<_>>());
        let snapshot = state.long_term.clone();
        for round in 0..7 {
            let gt = 30 + round;
            let mut order: Vec<u32> = (20..=28).collect();
            order.push(gt);
            state.decide(&fixture.ctx(), &page(&order, gt), &config).unwrap();
        }
        assert_eq!(state.long_term, snapshot);
    }

    #[test]
    fn record_interaction_evicts_and_counts() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig { short_term_enabled: false, ..AgentConfig::default() };
        let mut state = init_agent(&fixture, &config, &(1..=10).collect::<Vec<_>>());
        for i in 0..11 {
            state.record_interaction(20 + i, 4, format!("feeling {i}"));
        }
        assert_eq!(state.round, 11);
        assert_eq!(state.history_window.len(), 10);
        assert_eq!(state.memory.short_term.len(), 10);
        assert_eq!(state.history_window.back().unwrap().feeling.as_deref(), Some("feeling 10"));
        // Oldest simulated interaction (20) was evicted.
        assert!(state.history_window.iter().all(|i| i.item_id != 20));
    }

    #[test]
    fn short_term_updates_exactly_on_cadence() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig::default(); // cadence 5
        let mut state = init_agent(&fixture, &config, &(1..=12).collect::<Vec<_>>());
        assert_eq!(fixture.count_tag("profile.short"), 1, "init summary only");

        let mut update_rounds = Vec::new();
        for round in 1..=12u32 {
            let before = fixture.count_tag("profile.short");
            let gt = 30 + round;
            let mut order: Vec<u32> = (20..=28).collect();
            order.push(gt);
            state.decide(&fixture.ctx(), &page(&order, gt), &config).unwrap();
            if fixture.count_tag("profile.short") > before {
                update_rounds.push(round);
            }
        }
        assert_eq!(update_rounds, vec![5, 10]);
        assert_eq!(state.short_term.last_updated_round, 10);
        assert_eq!(fixture.count_tag("memory.consolidate"), 2);
        assert_eq!(state.memory.long_term.len(), 2);
        assert_eq!(state.memory.long_term[0].round, 5);
        assert_eq!(state.memory.long_term[1].round, 10);
    }

    #[test]
    fn consolidation_skips_empty_short_term() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig { history_len: 5, ..AgentConfig::default() };
        let user = toy_user();
        // Prefix of length 0 is impossible (init needs history), so build a
        // state manually with an empty memory.
        let history = prefix(&[1, 2, 3]);
        let (mut state, _) =
            AgentState::init(&fixture.ctx(), &config, &user, &history, &empty_popularity())
                .unwrap();
        state.memory.short_term.clear();
        let before = fixture.gateway.ledger_len();
        state.consolidate_memory(&fixture.ctx()).unwrap();
        assert_eq!(fixture.gateway.ledger_len(), before, "no call on empty memory");
        assert!(state.memory.long_term.is_empty());
    }

    #[test]
    fn profile_rank_follows_mock_policy() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig::default();
        let state = init_agent(&fixture, &config, &(1..=10).collect::<Vec<_>>());
        let page = page(&[21, 22, 23, 24], 23);
        let (rank, _) = state.profile_rank(&fixture.ctx(), &page, false).unwrap();
        assert_eq!(rank.order[0], 23);
        assert_eq!(rank.source, SignalSource::Profile);

        let fixture2 = Fixture::new(MockPolicy::PositionPicker);
        let state2 = init_agent(&fixture2, &config, &(1..=10).collect::<Vec<_>>());
        let (rank2, _) = state2.profile_rank(&fixture2.ctx(), &page, false).unwrap();
        assert_eq!(rank2.order, page.order);
    }

    #[test]
    fn single_signal_decide_equals_that_signal() {
        let fixture = Fixture::new(MockPolicy::Utility(
            [(21u32, 1.0), (22, 4.0), (23, 3.0), (24, 2.0)].into(),
        ));
        let config = AgentConfig {
            signals: SignalToggles { profile: true, sequential: false, clustering: false },
            short_term_enabled: false,
            fusion: FusionConfig { adaptive: false, ..FusionConfig::default() },
            ..AgentConfig::default()
        };
        let mut state = init_agent(&fixture, &config, &(1..=10).collect::<Vec<_>>());
        let decision = state.decide(&fixture.ctx(), &page(&[21, 22, 23, 24], 21), &config).unwrap();
        assert_eq!(decision.final_ranking, vec![22, 23, 24, 21]);
        assert_eq!(decision.chosen, 22);
        assert!(!decision.fallback);
    }

    #[test]
    fn decide_with_gt_first_chooses_ground_truth() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig::default();
        let mut state = init_agent(&fixture, &config, &(1..=12).collect::<Vec<_>>());
        let decision = state.decide(&fixture.ctx(), &page(&[21, 22, 23, 24], 24), &config).unwrap();
        assert_eq!(decision.chosen, 24);
        assert_eq!(decision.rating, 4, "default mock rate reply is 4");
        assert!(!decision.feeling.is_empty());
        assert_eq!(state.round, 1);
        assert_eq!(
            state.history_window.back().unwrap().item_id,
            24,
            "interaction recorded"
        );
    }

    #[test]
    fn decide_call_pattern_full_pipeline() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig::default();
        let mut state = init_agent(&fixture, &config, &(1..=12).collect::<Vec<_>>());
        let before: usize = fixture.gateway.ledger_len();
        state.decide(&fixture.ctx(), &page(&[21, 22, 23, 24], 24), &config).unwrap();
        let tags: Vec<String> = fixture.gateway.ledger()[before..]
            .iter()
            .map(|e| e.tag.clone())
            .collect();
        // Detection, profile, sequential, two-step clustering, rating.
        assert_eq!(
            tags,
            vec![
                "tpe.detect",
                "act.profile",
                "tpe.seq",
                "tpe.cluster.analyze",
                "tpe.cluster.rank",
                "act.rate"
            ]
        );
    }

    #[test]
    fn static_mode_skips_detection() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig {
            fusion: FusionConfig { adaptive: false, ..FusionConfig::default() },
            short_term_enabled: false,
            ..AgentConfig::default()
        };
        let mut state = init_agent(&fixture, &config, &(1..=12).collect::<Vec<_>>());
        state.decide(&fixture.ctx(), &page(&[21, 22, 23, 24], 24), &config).unwrap();
        assert_eq!(fixture.count_tag("tpe.detect"), 0);
        assert_eq!(fixture.count_tag("tpe.seq"), 1);
        assert_eq!(fixture.count_tag("tpe.cluster.rank"), 1);
    }

    #[test]
    fn adaptive_flags_off_leaves_profile_only() {
        let script: BTreeMap<String, String> = [
            ("profile.init".to_string(), "p".to_string()),
            ("profile.short".to_string(), "s".to_string()),
            ("tpe.detect".to_string(), "sequential: no\nclustering: no".to_string()),
            ("act.profile".to_string(), "23, 21, 24, 22".to_string()),
            ("act.rate".to_string(), "5\nfun".to_string()),
        ]
        .into();
        let fixture = Fixture::new(MockPolicy::Scripted(script));
        let config = AgentConfig::default();
        let mut state = init_agent(&fixture, &config, &(1..=12).collect::<Vec<_>>());
        let decision = state.decide(&fixture.ctx(), &page(&[21, 22, 23, 24], 24), &config).unwrap();
        assert_eq!(decision.final_ranking, vec![23, 21, 24, 22], "r_l passes through");
        assert_eq!(fixture.count_tag("tpe.seq"), 0, "gated off");
        assert_eq!(fixture.count_tag("tpe.cluster.analyze"), 0);
        assert_eq!(decision.rating, 5);
        assert_eq!(decision.feeling, "fun");
    }

    #[test]
    fn rating_reply_parsing() {
        assert_eq!(parse_rating_reply("4\nloved it"), Some((4, "loved it".into())));
        assert_eq!(parse_rating_reply("Rating: 5"), Some((5, String::new())));
        assert_eq!(parse_rating_reply("9\nway off"), None);
        assert_eq!(parse_rating_reply("no digits here"), None);
        assert_eq!(
            parse_rating_reply("3\ntoo slow\nbut pretty"),
            Some((3, "too slow but pretty".into()))
        );
    }

    #[test]
    fn unparseable_rating_falls_back_to_mean() {
        let script: BTreeMap<String, String> = [
            ("profile.init".to_string(), "p".to_string()),
            ("tpe.detect".to_string(), "sequential: no\nclustering: no".to_string()),
            ("act.profile".to_string(), "21, 22, 23, 24".to_string()),
            ("act.rate".to_string(), "no idea how to rate".to_string()),
        ]
        .into();
        let fixture = Fixture::new(MockPolicy::Scripted(script));
        let config = AgentConfig { short_term_enabled: false, ..AgentConfig::default() };
        let user = toy_user();
        let mut history = prefix(&(1..=10).collect::<Vec<_>>());
        for interaction in &mut history.interactions {
            interaction.rating = 4;
        }
        let (mut state, _) =
            AgentState::init(&fixture.ctx(), &config, &user, &history, &empty_popularity())
                .unwrap();
        let decision = state.decide(&fixture.ctx(), &page(&[21, 22, 23, 24], 21), &config).unwrap();
        assert_eq!(decision.rating, 4, "rounded mean of all-4 prefix");
        assert_eq!(fixture.count_tag("act.rate"), 2, "one retry before fallback");
    }

    #[test]
    fn all_signals_failing_falls_back_to_page_order() {
        // Scripted policy with no ranking tags: every signal call fails
        // fatally, decide still completes via page order.
        let script: BTreeMap<String, String> = [
            ("profile.init".to_string(), "p".to_string()),
            ("tpe.detect".to_string(), "sequential: yes\nclustering: yes".to_string()),
            ("act.rate".to_string(), "2\nmeh".to_string()),
        ]
        .into();
        let fixture = Fixture::new(MockPolicy::Scripted(script));
        let config = AgentConfig { short_term_enabled: false, ..AgentConfig::default() };
        let mut state = init_agent(&fixture, &config, &(1..=10).collect::<Vec<_>>());
        let page = page(&[21, 22, 23, 24], 23);
        let decision = state.decide(&fixture.ctx(), &page, &config).unwrap();
        assert!(decision.fallback);
        assert_eq!(decision.final_ranking, page.order);
        assert_eq!(decision.failed_signals, 3);
        assert_eq!(decision.chosen, 21);
    }

    #[test]
    fn memory_long_term_is_append_only_and_replayable() {
        let run = || {
            let fixture = Fixture::new(MockPolicy::GtFirst);
            let config = AgentConfig::default();
            let mut state = init_agent(&fixture, &config, &(1..=12).collect::<Vec<_>>());
            for round in 1..=10u32 {
                let gt = 30 + round;
                let mut order: Vec<u32> = (20..=28).collect();
                order.push(gt);
                state.decide(&fixture.ctx(), &page(&order, gt), &config).unwrap();
            }
            state
        };
        let a = run();
        let b = run();
        assert_eq!(a.memory.long_term, b.memory.long_term);
        assert_eq!(a.memory.long_term.len(), 2);
        assert_eq!(a, b, "same policy + inputs reproduce identical state");
    }

    #[test]
    fn state_snapshot_round_trips_through_json() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig::default();
        let state = init_agent(&fixture, &config, &(1..=12).collect::<Vec<_>>());
        let json = serde_json::to_string(&state).unwrap();
        let back: AgentState = serde_json::from_str(&json).unwrap();
        assert_eq!(state, back);
    }

    #[test]
    fn direct_prompting_injects_note_into_rendered_prompt() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let config = AgentConfig::default();
        let state = init_agent(&fixture, &config, &(1..=10).collect::<Vec<_>>());
        let page = page(&[21, 22, 23], 22);
        // Render the act_profile prompt both ways at the template level.
        let render = |direct: bool| {
            let (memory_text, _) = state.render_memory(&fixture.ctx());
            fixture
                .templates
                .render(
                    "act_profile",
                    &[
                        ("long_term", state.render_long_term().as_str()),
                        ("short_term", state.short_term.summary.as_str()),
                        ("memory", &memory_text),
                        ("candidates", &prompts::render_candidates(&page, &fixture.catalog)),
                        ("position_note", prompts::position_note(direct)),
                    ],
                )
                .unwrap()
        };
        let with_note = render(true);
        let without = render(false);
        assert!(with_note.contains("candidate positions carry no significance"));
        assert!(!without.contains("candidate positions carry no significance"));
    }
}
