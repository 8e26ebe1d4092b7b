//! OpenAI-compatible chat-completions backend over HTTP. The credential
//! comes exclusively from the `DYTA_API_KEY` environment variable.

use serde::Deserialize;
use serde_json::json;

use super::{BackendError, ChatBackend, ChatRequest, GatewayError};

pub const API_KEY_ENV: &str = "DYTA_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveSettings {
    /// E.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub timeout_secs: u64,
}

impl Default for LiveSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            timeout_secs: 60,
        }
    }
}

pub struct LiveBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LiveBackend {
    pub fn new(settings: &LiveSettings, api_key: String) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Backend(format!("building HTTP client: {e}")))?;
        Ok(Self {
            client,
            endpoint: endpoint_url(&settings.base_url),
            api_key,
        })
    }

    /// Builds the backend with the credential from `DYTA_API_KEY`.
    pub fn from_env(settings: &LiveSettings) -> Result<Self, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(GatewayError::MissingApiKey(API_KEY_ENV))?;
        Self::new(settings, api_key)
    }
}

fn endpoint_url(base_url: &str) -> String {
    format!("{}/chat/completions", base_url.trim_end_matches('/'))
}

impl ChatBackend for LiveBackend {
    fn id(&self) -> &str {
        "live"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        // `page_context` is deliberately not serialized: the wire format is
        // exactly the standard chat-completions schema.
        let body = json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        });
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() || e.is_connect() {
                    BackendError::Retryable(e.to_string())
                } else {
                    BackendError::Fatal(e.to_string())
                }
            })?;

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(BackendError::Auth(status.as_u16()));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let detail = response.text().unwrap_or_default();
            return Err(BackendError::Fatal(format!("HTTP {status}: {detail}")));
        }

        let parsed: CompletionBody = response
            .json()
            .map_err(|e| BackendError::Fatal(format!("malformed completion body: {e}")))?;
        if let Some(usage) = &parsed.usage {
            log::debug!(
                "tag {}: prompt_tokens={} completion_tokens={}",
                request.tag,
                usage.prompt_tokens,
                usage.completion_tokens
            );
        }
        parsed
            .choices
            .into_iter()
            .next()
            .map(|choice| choice.message.content)
            .ok_or_else(|| BackendError::Fatal("completion body has no choices".into()))
    }
}
