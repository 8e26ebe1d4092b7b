//! Call-ledger records and the replay backend that serves captured
//! responses back by request digest, making live runs re-analyzable offline.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{request_digest, BackendError, ChatBackend, ChatRequest};

/// One line of the JSONL call ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub tag: String,
    pub request_digest: String,
    pub response_content: String,
    pub attempts: u32,
    pub latency_ms: u64,
}

/// Reads a JSONL ledger file back into entries.
pub fn read_ledger(path: &Path) -> std::io::Result<Vec<LedgerEntry>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(std::io::Error::other))
        .collect()
}

/// Serves previously captured responses keyed by request digest. Repeated
/// identical requests replay their captured responses in order; once a
/// digest's responses are exhausted, the last one repeats.
pub struct ReplayBackend {
    responses: HashMap<String, Vec<String>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<LedgerEntry>) -> Self {
        let mut responses: HashMap<String, Vec<String>> = HashMap::new();
        for entry in entries {
            responses
                .entry(entry.request_digest)
                .or_default()
                .push(entry.response_content);
        }
        Self { responses, cursors: Mutex::new(HashMap::new()) }
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(read_ledger(path)?))
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let digest = request_digest(request);
        let responses = self.responses.get(&digest).ok_or_else(|| {
            BackendError::Fatal(format!(
                "ledger has no response for tag {:?} (digest {digest})",
                request.tag
            ))
        })?;
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let cursor = cursors.entry(digest).or_insert(0);
        let response = responses[(*cursor).min(responses.len() - 1)].clone();
        *cursor += 1;
        Ok(response)
    }
}
