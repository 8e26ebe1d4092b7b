//! Temporal pattern extraction over the recent interaction window:
//! pattern-presence detection, clustering analysis with two-step prompting,
//! and sequential next-item prediction with in-context-learning examples.
//! Produces the sequential and clustering rank signals.

use serde::{Deserialize, Serialize};

use crate::dataset::{CandidatePage, Interaction};
use crate::fusion::{RankList, SignalSource};
use crate::gateway::{complete_ranking, GatewayError};
use crate::prompts::{self, HISTORY_CHAR_BUDGET};
use crate::StageContext;

/// Which temporal patterns the detector found in the window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternFlags {
    pub has_sequential: bool,
    pub has_clustering: bool,
    /// The detector's description of the clusters; empty unless
    /// `has_clustering` is set.
    pub cluster_note: String,
}

impl PatternFlags {
    pub fn none() -> Self {
        Self {
            has_sequential: false,
            has_clustering: false,
            cluster_note: String::new(),
        }
    }
}

/// One in-context demonstration: a short run of interactions and the item
/// the user actually chose next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub context: String,
    pub next_item: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExampleSet {
    pub examples: Vec<IclExample>,
    pub k: usize,
}

impl IclExampleSet {
    /// The demonstration block for the prompt; empty string when zero-shot.
    pub fn rendered(&self) -> String {
        let mut out = String::new();
        for (i, example) in self.examples.iter().enumerate() {
            out.push_str(&format!(
                "Example {}:\nViewing so far:\n{}Next watched: {}\n\n",
                i + 1,
                example.context,
                example.next_item
            ));
        }
        out
    }
}

/// How many interactions precede each demonstration target. Fixed stride so
/// prompt size stays bounded regardless of window length.
const ICL_CONTEXT_LEN: usize = 3;

/// Asks the model whether the window shows sequential and/or clustering
/// patterns (one combined call, tag `tpe.detect`). Degenerate windows
/// (fewer than 2 interactions) return no flags without a call; malformed
/// replies and transport failures also degrade to no flags, with a warning.
pub fn detect_patterns(ctx: &StageContext<'_>, history: &[Interaction]) -> PatternFlags {
    if history.len() < 2 {
        return PatternFlags::none();
    }
    let (history_text, _) = prompts::render_history(history, ctx.catalog, HISTORY_CHAR_BUDGET);
    let prompt = match ctx.templates.render("tpe_detect", &[("history", &history_text)]) {
        Ok(prompt) => prompt,
        Err(err) => {
            log::warn!("tpe.detect render failed: {err}");
            return PatternFlags::none();
        }
    };
    let request = ctx.defaults.request("tpe.detect", prompt);
    match ctx.gateway.complete(&request) {
        Ok(response) => parse_detect_reply(&response.content).unwrap_or_else(|| {
            log::warn!("tpe.detect reply malformed; treating as no patterns");
            PatternFlags::none()
        }),
        Err(err) => {
            log::warn!("tpe.detect call failed: {err}");
            PatternFlags::none()
        }
    }
}

/// Strict parse of the detector reply: both a `sequential:` and a
/// `clustering:` line with exact yes/no values must be present.
/// Returns `None` when malformed.
pub fn parse_detect_reply(raw: &str) -> Option<PatternFlags> {
    let mut sequential = None;
    let mut clustering = None;
    let mut note = String::new();
    for line in raw.lines() {
        let line = line.trim();
        let lower = line.to_lowercase();
        if let Some(rest) = lower.strip_prefix("sequential:") {
            sequential = parse_yes_no(rest);
        } else if let Some(rest) = lower.strip_prefix("clustering:") {
            clustering = parse_yes_no(rest);
        } else if lower.starts_with("note:") {
            note = line["note:".len()..].trim().to_string();
        }
    }
    let has_clustering = clustering?;
    Some(PatternFlags {
        has_sequential: sequential?,
        has_clustering,
        cluster_note: if has_clustering { note } else { String::new() },
    })
}

fn parse_yes_no(token: &str) -> Option<bool> {
    match token.trim().trim_end_matches(['.', ',']) {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Builds min(k, |H|-1) demonstrations from the newest window positions:
/// each pairs up to [`ICL_CONTEXT_LEN`] preceding interactions with the item
/// actually chosen next. Pure and deterministic; only window items appear.
pub fn build_icl_examples(
    history: &[Interaction],
    k: usize,
    catalog: &crate::dataset::Catalog,
) -> IclExampleSet {
    let count = k.min(history.len().saturating_sub(1));
    let examples = (history.len() - count..history.len())
        .map(|t| {
            let context_start = t.saturating_sub(ICL_CONTEXT_LEN);
            let (context, _) =
                prompts::render_history(&history[context_start..t], catalog, HISTORY_CHAR_BUDGET);
            IclExample {
                context,
                next_item: prompts::item_line(history[t].item_id, catalog),
            }
        })
        .collect();
    IclExampleSet { examples, k }
}

/// The sequential signal r_s: one call (tag `tpe.seq`) whose prompt carries
/// the ICL demonstrations, the live window, and the candidate page.
pub fn sequential_rank(
    ctx: &StageContext<'_>,
    history: &[Interaction],
    page: &CandidatePage,
    icl: &IclExampleSet,
    direct_prompting: bool,
) -> Result<RankList, GatewayError> {
    let (history_text, _) = prompts::render_history(history, ctx.catalog, HISTORY_CHAR_BUDGET);
    let prompt = ctx
        .templates
        .render(
            "tpe_seq",
            &[
                ("icl_examples", icl.rendered().as_str()),
                ("history", &history_text),
                ("candidates", &prompts::render_candidates(page, ctx.catalog)),
                ("position_note", prompts::position_note(direct_prompting)),
            ],
        )
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let request = ctx.defaults.request("tpe.seq", prompt).with_page(page);
    let parsed = complete_ranking(ctx.gateway, &request, page)?;
    Ok(RankList::new(parsed.order, SignalSource::Sequential))
}

/// The clustering signal r_c. With `two_step` the analysis call (tag
/// `tpe.cluster.analyze`) runs first and its output flows verbatim into the
/// ranking call (tag `tpe.cluster.rank`); otherwise a single combined call
/// does both at once.
pub fn cluster_rank(
    ctx: &StageContext<'_>,
    history: &[Interaction],
    page: &CandidatePage,
    two_step: bool,
    direct_prompting: bool,
) -> Result<RankList, GatewayError> {
    let (history_text, _) = prompts::render_history(history, ctx.catalog, HISTORY_CHAR_BUDGET);
    let candidates = prompts::render_candidates(page, ctx.catalog);
    let note = prompts::position_note(direct_prompting);

    let parsed = if two_step {
        let analyze_prompt = ctx
            .templates
            .render("tpe_cluster_analyze", &[("history", &history_text)])
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let analysis = ctx
            .gateway
            .complete(&ctx.defaults.request("tpe.cluster.analyze", analyze_prompt))?
            .content;
        let rank_prompt = ctx
            .templates
            .render(
                "tpe_cluster_rank",
                &[
                    ("analysis", analysis.as_str()),
                    ("candidates", &candidates),
                    ("position_note", note),
                ],
            )
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let request = ctx.defaults.request("tpe.cluster.rank", rank_prompt).with_page(page);
        complete_ranking(ctx.gateway, &request, page)?
    } else {
        let prompt = ctx
            .templates
            .render(
                "tpe_cluster_onestep",
                &[
                    ("history", &history_text),
                    ("candidates", &candidates),
                    ("position_note", note),
                ],
            )
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        // Same tag as the two-step ranking call: it is the ranking step,
        // there just is no separate analysis call before it.
        let request = ctx.defaults.request("tpe.cluster.rank", prompt).with_page(page);
        complete_ranking(ctx.gateway, &request, page)?
    };
    Ok(RankList::new(parsed.order, SignalSource::Clustering))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Catalog, ItemRecord};
    use crate::gateway::{Gateway, MockPolicy, RequestDefaults};
    use crate::prompts::TemplateStore;
    use std::collections::BTreeMap;

    fn toy_catalog(n: u32) -> Catalog {
        let items: BTreeMap<u32, ItemRecord> = (1..=n)
            .map(|id| {
                (
                    id,
                    ItemRecord {
                        item_id: id,
                        title: format!("Movie {id} (1999)"),
                        year: 1999,
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

    fn interactions(ids: &[u32]) -> Vec<Interaction> {
        ids.iter()
            .enumerate()
            .map(|(i, &item_id)| Interaction {
                item_id,
                rating: 4,
                timestamp: 978_000_000 + i as i64 * 86_400,
                feeling: None,
            })
            .collect()
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
                catalog: toy_catalog(30),
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
    }

    fn page(order: &[u32], gt: u32) -> CandidatePage {
        CandidatePage { order: order.to_vec(), ground_truth: gt, seed: 0 }
    }

    #[test]
    fn detect_reply_parsing() {
        let flags = parse_detect_reply("sequential: yes\nclustering: no").unwrap();
        assert!(flags.has_sequential && !flags.has_clustering);
        assert_eq!(flags.cluster_note, "");

        let flags =
            parse_detect_reply("Sequential: no\nClustering: yes\nnote: horror bursts").unwrap();
        assert!(!flags.has_sequential && flags.has_clustering);
        assert_eq!(flags.cluster_note, "horror bursts");

        // Note only survives alongside a clustering=yes.
        let flags = parse_detect_reply("sequential: yes\nclustering: no\nnote: spurious").unwrap();
        assert_eq!(flags.cluster_note, "");

        assert!(parse_detect_reply("sequential: maybe\nclustering: no").is_none());
        assert!(parse_detect_reply("clustering: yes").is_none());
        assert!(parse_detect_reply("gibberish").is_none());
    }

    #[test]
    fn detect_skips_call_on_degenerate_window() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let history = interactions(&[1]);
        let flags = detect_patterns(&fixture.ctx(), &history);
        assert_eq!(flags, PatternFlags::none());
        assert_eq!(fixture.gateway.ledger_len(), 0, "no LLM call for |H| < 2");
    }

    #[test]
    fn detect_issues_exactly_one_call() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let history = interactions(&[1, 2, 3]);
        let flags = detect_patterns(&fixture.ctx(), &history);
        assert!(flags.has_sequential && flags.has_clustering);
        assert_eq!(fixture.gateway.ledger_len(), 1);
        assert_eq!(fixture.gateway.ledger()[0].tag, "tpe.detect");
    }

    #[test]
    fn malformed_detect_reply_degrades_to_no_flags() {
        let script: BTreeMap<String, String> =
            [("tpe.detect".to_string(), "the user likes movies".to_string())].into();
        let fixture = Fixture::new(MockPolicy::Scripted(script));
        let flags = detect_patterns(&fixture.ctx(), &interactions(&[1, 2, 3]));
        assert_eq!(flags, PatternFlags::none());
    }

    #[test]
    fn icl_examples_clamp_to_window() {
        let catalog = toy_catalog(30);
        let history = interactions(&[1, 2, 3, 4, 5]);
        assert_eq!(build_icl_examples(&history, 0, &catalog).examples.len(), 0);
        assert_eq!(build_icl_examples(&history, 9, &catalog).examples.len(), 4);
        let set = build_icl_examples(&history, 3, &catalog);
        assert_eq!(set.examples.len(), 3);
        // Targets are the last three window items, oldest example first.
        assert!(set.examples[0].next_item.contains("Movie 3"));
        assert!(set.examples[1].next_item.contains("Movie 4"));
        assert!(set.examples[2].next_item.contains("Movie 5"));
    }

    #[test]
    fn icl_targets_come_from_window_tail() {
        let catalog = toy_catalog(30);
        let history = interactions(&(1..=10).collect::<Vec<_>>());
        let set = build_icl_examples(&history, 3, &catalog);
        // Window positions 8, 9, 10 (1-based) are the demonstration targets.
        for (example, item) in set.examples.iter().zip([8, 9, 10]) {
            assert!(example.next_item.contains(&format!("Movie {item}")));
        }
    }

    #[test]
    fn sequential_rank_uses_one_call_and_permutes_page() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let history = interactions(&[1, 2, 3, 4]);
        let page = page(&[10, 11, 12], 11);
        let icl = build_icl_examples(&history, 3, &fixture.catalog);
        let rank = sequential_rank(&fixture.ctx(), &history, &page, &icl, false).unwrap();
        assert_eq!(rank.order[0], 11, "GT_FIRST ranks ground truth first");
        let mut sorted = rank.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![10, 11, 12]);
        assert_eq!(rank.source, SignalSource::Sequential);
        assert_eq!(fixture.gateway.ledger_len(), 1);
        assert_eq!(fixture.gateway.ledger()[0].tag, "tpe.seq");
    }

    #[test]
    fn two_step_clustering_issues_two_calls_in_order() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let history = interactions(&[1, 2, 3]);
        let page = page(&[10, 11, 12], 12);
        let rank = cluster_rank(&fixture.ctx(), &history, &page, true, false).unwrap();
        assert_eq!(rank.order[0], 12);
        let tags: Vec<String> = fixture.gateway.ledger().iter().map(|e| e.tag.clone()).collect();
        assert_eq!(tags, vec!["tpe.cluster.analyze", "tpe.cluster.rank"]);
    }

    #[test]
    fn one_step_clustering_issues_one_call() {
        let fixture = Fixture::new(MockPolicy::GtFirst);
        let history = interactions(&[1, 2, 3]);
        let page = page(&[10, 11, 12], 10);
        cluster_rank(&fixture.ctx(), &history, &page, false, false).unwrap();
        assert_eq!(fixture.gateway.ledger_len(), 1);
        assert_eq!(fixture.gateway.ledger()[0].tag, "tpe.cluster.rank");
    }

    #[test]
    fn scripted_analysis_flows_into_rank_call() {
        let script: BTreeMap<String, String> = [
            ("tpe.cluster.analyze".to_string(), "recent horror cluster".to_string()),
            ("tpe.cluster.rank".to_string(), "12, 10, 11".to_string()),
        ]
        .into();
        let fixture = Fixture::new(MockPolicy::Scripted(script));
        let history = interactions(&[1, 2, 3]);
        let page = page(&[10, 11, 12], 12);
        let rank = cluster_rank(&fixture.ctx(), &history, &page, true, false).unwrap();
        assert_eq!(rank.order, vec![12, 10, 11]);
        // The second request embeds the first call's output verbatim, which
        // shows up in its digest being stable across repeats.
        let ledger = fixture.gateway.ledger();
        assert_eq!(ledger.len(), 2);
        assert_eq!(ledger[1].response_content, "12, 10, 11");
    }

    #[test]
    fn utility_policy_orders_by_hidden_utilities() {
        let utilities: BTreeMap<u32, f64> = [(10, 1.0), (11, 2.0), (12, 3.0)].into();
        let fixture = Fixture::new(MockPolicy::Utility(utilities));
        let history = interactions(&[1, 2, 3]);
        let page = page(&[10, 11, 12], 10);
        let icl = build_icl_examples(&history, 3, &fixture.catalog);
        let rank = sequential_rank(&fixture.ctx(), &history, &page, &icl, false).unwrap();
        assert_eq!(rank.order, vec![12, 11, 10]);
    }
}
