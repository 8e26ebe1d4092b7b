//! Deterministic mock backend. Each policy is a pure function of the
//! request, which makes whole-pipeline runs reproducible and lets tests
//! assert exact metric values.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};

use super::{BackendError, ChatBackend, ChatRequest, PageContext};
use crate::ItemId;

/// Stage tags whose replies must parse as a ranking of the request's page.
const RANKING_TAGS: &[&str] = &["act.profile", "tpe.cluster.rank", "tpe.seq"];

/// Canned replies for non-ranking stages, used by every policy except
/// `Scripted` (which must cover its tags explicitly).
const DEFAULT_REPLIES: &[(&str, &str)] = &[
    ("profile.init", "A steady viewer with clear favourites who rates close to their mood."),
    ("profile.short", "Lately drawn to a couple of familiar genres, rating generously."),
    ("memory.consolidate", "Keeps returning to familiar genres in short bursts."),
    ("act.rate", "4\nIt fit the evening better than expected."),
    ("tpe.detect", "sequential: yes\nclustering: yes\nnote: recent bursts within one genre"),
    ("tpe.cluster.analyze", "Recent viewing bunches into one active genre cluster."),
];

/// How the mock backend answers.
#[derive(Debug, Clone)]
pub enum MockPolicy {
    /// Fixed reply per tag; a tag with no entry is an error.
    Scripted(BTreeMap<String, String>),
    /// Ranking stages put the ground truth first, negatives in page order.
    GtFirst,
    /// Ranking stages put the ground truth at this 1-based position.
    GtAt(usize),
    /// Ranking stages emit candidates exactly in page order — a maximally
    /// position-biased rater.
    PositionPicker,
    /// Ranking stages sort candidates by a hidden per-item utility,
    /// descending; missing items count as 0; ties keep page order.
    Utility(BTreeMap<ItemId, f64>),
}

/// What error the failure injector produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    RateLimited,
    Timeout,
    AuthRejected,
}

pub struct MockBackend {
    policy: MockPolicy,
    failures_left: AtomicU32,
    failure_kind: FailureKind,
}

impl MockBackend {
    pub fn new(policy: MockPolicy) -> Self {
        Self {
            policy,
            failures_left: AtomicU32::new(0),
            failure_kind: FailureKind::RateLimited,
        }
    }

    /// Makes the first `count` calls fail with the given kind before the
    /// policy takes over — for exercising the retry contract.
    pub fn with_failures(mut self, count: u32, kind: FailureKind) -> Self {
        self.failures_left = AtomicU32::new(count);
        self.failure_kind = kind;
        self
    }

    fn take_failure(&self) -> Option<BackendError> {
        let claimed = self
            .failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if !claimed {
            return None;
        }
        Some(match self.failure_kind {
            FailureKind::RateLimited => BackendError::Retryable("HTTP 429 Too Many Requests".into()),
            FailureKind::Timeout => BackendError::Retryable("request timed out".into()),
            FailureKind::AuthRejected => BackendError::Auth(401),
        })
    }

    fn rank(&self, context: &PageContext) -> Result<Vec<ItemId>, BackendError> {
        let page = &context.page_order;
        let need_gt = |gt: Option<ItemId>| {
            gt.ok_or_else(|| BackendError::Fatal("mock policy needs a ground truth in page context".into()))
        };
        match &self.policy {
            MockPolicy::GtFirst => {
                let gt = need_gt(context.ground_truth)?;
                let mut order = vec![gt];
                order.extend(page.iter().copied().filter(|&id| id != gt));
                Ok(order)
            }
            MockPolicy::GtAt(position) => {
                let gt = need_gt(context.ground_truth)?;
                let position = *position;
                if position < 1 || position > page.len() {
                    return Err(BackendError::Fatal(format!(
                        "GtAt position {position} out of range 1..={}",
                        page.len()
                    )));
                }
                let mut order: Vec<ItemId> = page.iter().copied().filter(|&id| id != gt).collect();
                order.insert(position - 1, gt);
                Ok(order)
            }
            MockPolicy::PositionPicker => Ok(page.clone()),
            MockPolicy::Utility(utilities) => {
                let mut order: Vec<(usize, ItemId)> = page.iter().copied().enumerate().collect();
                order.sort_by(|(pa, a), (pb, b)| {
                    let ua = utilities.get(a).copied().unwrap_or(0.0);
                    let ub = utilities.get(b).copied().unwrap_or(0.0);
                    ub.partial_cmp(&ua).expect("finite utilities").then(pa.cmp(pb))
                });
                Ok(order.into_iter().map(|(_, id)| id).collect())
            }
            MockPolicy::Scripted(_) => unreachable!("scripted handled before rank()"),
        }
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if let Some(err) = self.take_failure() {
            return Err(err);
        }
        if let MockPolicy::Scripted(script) = &self.policy {
            return script
                .get(&request.tag)
                .cloned()
                .ok_or_else(|| BackendError::Fatal(format!("no scripted reply for tag {:?}", request.tag)));
        }
        if RANKING_TAGS.contains(&request.tag.as_str()) {
            let context = request.page_context.as_ref().ok_or_else(|| {
                BackendError::Fatal(format!("ranking tag {:?} without page context", request.tag))
            })?;
            let order = self.rank(context)?;
            return Ok(order
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", "));
        }
        Ok(DEFAULT_REPLIES
            .iter()
            .find(|(tag, _)| *tag == request.tag)
            .map(|(_, reply)| reply.to_string())
            .unwrap_or_else(|| "ok".to_string()))
    }
}
