//! Remote HTTP agent backend.
//!
//! Realizes every agent role over one authenticated JSON-over-HTTP
//! transport. Requests are retried per policy (timeouts and 5xx up to the
//! configured attempt count; a malformed body gets exactly one retry).
//! Request and response payloads are never logged — they contain PHI; log
//! lines carry only the route and status.

use deid_core::agents::{
    AgentError, AgentFactory, AgentSet, ClusterAgent, ClusterProposal, DecisionAgent, Extractor,
    GapClassifier, GenerationAgent,
};
use deid_core::extraction::{ExtractionRequest, ExtractionResponse};
use deid_core::relex::ReplacementQuery;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    pub base_url: String,
    pub timeout_ms: u64,
    /// Total attempts for retryable failures (timeouts, 5xx).
    pub retries: usize,
    /// Name of the environment variable holding the bearer token. The token
    /// itself never appears in settings files.
    pub auth_token_env: String,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        RemoteSettings {
            base_url: String::new(),
            timeout_ms: 10_000,
            retries: 3,
            auth_token_env: "DEID_REMOTE_AUTH_TOKEN".into(),
        }
    }
}

pub struct RemoteAgents {
    agent: ureq::Agent,
    base_url: String,
    auth_token: Option<String>,
    retries: usize,
}

impl RemoteAgents {
    pub fn new(settings: RemoteSettings) -> Result<Self, AgentError> {
        if settings.base_url.is_empty() {
            return Err(AgentError::Unavailable(
                "remote backend requires a base_url setting".into(),
            ));
        }
        let timeout = Duration::from_millis(settings.timeout_ms);
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(timeout)
            .timeout(timeout)
            .build();
        let auth_token = std::env::var(&settings.auth_token_env)
            .ok()
            .filter(|t| !t.is_empty());
        Ok(RemoteAgents {
            agent,
            base_url: settings.base_url.trim_end_matches('/').to_string(),
            auth_token,
            retries: settings.retries.max(1),
        })
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        route: &str,
        payload: &Req,
    ) -> Result<Resp, AgentError> {
        let url = format!("{}/{route}", self.base_url);
        let body = serde_json::to_string(payload)
            .map_err(|e| AgentError::Failed(format!("could not encode request: {e}")))?;
        let mut malformed_retry_used = false;
        let mut attempt = 0usize;
        loop {
            attempt += 1;
            let mut request = self
                .agent
                .post(&url)
                .set("content-type", "application/json");
            if let Some(token) = &self.auth_token {
                request = request.set("authorization", &format!("Bearer {token}"));
            }
            match request.send_string(&body) {
                Ok(response) => {
                    let text = response.into_string().map_err(|e| {
                        AgentError::MalformedResponse(format!("unreadable body: {e}"))
                    })?;
                    match serde_json::from_str::<Resp>(&text) {
                        Ok(parsed) => {
                            log::debug!("remote {route}: ok (attempt {attempt})");
                            return Ok(parsed);
                        }
                        Err(e) if !malformed_retry_used => {
                            // One retry on a malformed body, then surface it.
                            log::warn!("remote {route}: malformed response; retrying once");
                            malformed_retry_used = true;
                            let _ = e;
                            continue;
                        }
                        Err(e) => {
                            return Err(AgentError::MalformedResponse(format!(
                                "{route}: {e}"
                            )))
                        }
                    }
                }
                Err(ureq::Error::Status(code, _)) if code == 401 || code == 403 => {
                    log::warn!("remote {route}: authentication rejected ({code})");
                    return Err(AgentError::AuthFailure);
                }
                Err(ureq::Error::Status(code, _)) if (500..600).contains(&code) => {
                    log::warn!("remote {route}: server error {code} (attempt {attempt})");
                    if attempt >= self.retries {
                        return Err(AgentError::Unavailable(format!(
                            "{route}: server error {code} after {attempt} attempts"
                        )));
                    }
                }
                Err(ureq::Error::Status(code, _)) => {
                    return Err(AgentError::Failed(format!("{route}: HTTP {code}")));
                }
                Err(ureq::Error::Transport(t)) => {
                    log::warn!("remote {route}: transport failure (attempt {attempt})");
                    if attempt >= self.retries {
                        return Err(match t.kind() {
                            ureq::ErrorKind::Io => AgentError::Timeout,
                            _ => AgentError::Unavailable(format!("{route}: {}", t.kind())),
                        });
                    }
                }
            }
        }
    }
}

#[derive(Serialize)]
struct ClusterRequest<'a> {
    text: &'a str,
    mentions: &'a [(String, Vec<String>)],
}

#[derive(Deserialize)]
struct ClusterResponse {
    proposals: Vec<ClusterProposal>,
}

#[derive(Serialize)]
struct ValidateRequest<'a> {
    query: &'a ReplacementQuery,
    candidate: &'a str,
    context_window: &'a str,
}

#[derive(Deserialize)]
struct ValidateResponse {
    valid: bool,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    query: &'a ReplacementQuery,
    context_window: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    replacement: String,
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    marked_transcript: &'a str,
    markers: &'a [String],
}

#[derive(Deserialize)]
struct ClassifyResponse {
    verdicts: BTreeMap<String, bool>,
}

impl Extractor for RemoteAgents {
    fn extract(&self, request: &ExtractionRequest) -> Result<ExtractionResponse, AgentError> {
        self.call("extract", request)
    }
}

impl ClusterAgent for RemoteAgents {
    fn cluster(
        &self,
        text: &str,
        mentions: &[(String, Vec<String>)],
    ) -> Result<Vec<ClusterProposal>, AgentError> {
        let response: ClusterResponse = self.call("cluster", &ClusterRequest { text, mentions })?;
        Ok(response.proposals)
    }
}

impl DecisionAgent for RemoteAgents {
    fn validate(
        &self,
        query: &ReplacementQuery,
        candidate: &str,
        context_window: &str,
    ) -> Result<bool, AgentError> {
        let response: ValidateResponse = self.call(
            "validate",
            &ValidateRequest {
                query,
                candidate,
                context_window,
            },
        )?;
        Ok(response.valid)
    }
}

impl GenerationAgent for RemoteAgents {
    fn generate(
        &self,
        query: &ReplacementQuery,
        context_window: &str,
    ) -> Result<String, AgentError> {
        let response: GenerateResponse = self.call(
            "generate",
            &GenerateRequest {
                query,
                context_window,
            },
        )?;
        Ok(response.replacement)
    }
}

impl GapClassifier for RemoteAgents {
    fn classify(
        &self,
        marked_transcript: &str,
        markers: &[String],
    ) -> Result<BTreeMap<String, bool>, AgentError> {
        let response: ClassifyResponse = self.call(
            "classify_gaps",
            &ClassifyRequest {
                marked_transcript,
                markers,
            },
        )?;
        Ok(response.verdicts)
    }
}

pub struct RemoteFactory;

impl AgentFactory for RemoteFactory {
    fn build(&self, settings: &serde_json::Value) -> Result<AgentSet, AgentError> {
        let settings: RemoteSettings = serde_json::from_value(settings.clone())
            .map_err(|e| AgentError::Unavailable(format!("invalid remote settings: {e}")))?;
        let shared = Arc::new(RemoteAgents::new(settings)?);
        Ok(AgentSet {
            extractor: shared.clone(),
            cluster: shared.clone(),
            decision: shared.clone(),
            generator: shared.clone(),
            classifier: shared,
        })
    }
}
