//! Live backend speaking the OpenAI chat-completions wire format.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, ChatRequest, Completion, GatewayError, RoleTag, Usage};

/// Environment variable naming the chat-completions endpoint URL.
pub const ENV_URL: &str = "GATEWAY_URL";
/// Environment variable holding the bearer credential.
pub const ENV_KEY: &str = "GATEWAY_KEY";

/// Retry schedule for transient failures (transport errors, HTTP 429/5xx).
/// Backoff doubles after each failed attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Model identifiers routed by request role: one model profiles authors and
/// derives rules/personas, one writes stories, one judges pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleModels {
    pub profiling_model: String,
    pub story_model: String,
    pub judge_model: String,
}

impl Default for RoleModels {
    fn default() -> Self {
        RoleModels {
            profiling_model: "gpt-4o".into(),
            story_model: "gpt-4o".into(),
            judge_model: "o4-mini".into(),
        }
    }
}

impl RoleModels {
    pub fn model_for(&self, role: RoleTag) -> &str {
        match role {
            RoleTag::StoryGen => &self.story_model,
            RoleTag::Judge => &self.judge_model,
            _ => &self.profiling_model,
        }
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug)]
pub struct LiveBackend {
    url: String,
    key: String,
    models: RoleModels,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    id: String,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LiveBackend {
    pub fn new(url: impl Into<String>, key: impl Into<String>, models: RoleModels) -> Self {
        let url = url.into();
        let id = format!("live:{}", models.profiling_model);
        LiveBackend {
            url,
            key: key.into(),
            models,
            retry: RetryPolicy::default(),
            client: reqwest::blocking::Client::new(),
            id,
        }
    }

    /// Reads the endpoint and credential from `GATEWAY_URL` / `GATEWAY_KEY`.
    pub fn from_env(models: RoleModels) -> Result<Self, GatewayError> {
        let url = std::env::var(ENV_URL).map_err(|_| GatewayError::MissingEnv(ENV_URL))?;
        let key = std::env::var(ENV_KEY).map_err(|_| GatewayError::MissingEnv(ENV_KEY))?;
        Ok(LiveBackend::new(url, key, models))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn send_once(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let mut messages = Vec::with_capacity(2 + 2 * request.few_shot.len());
        messages.push(WireMessage {
            role: "system",
            content: &request.system,
        });
        for (user, assistant) in &request.few_shot {
            messages.push(WireMessage {
                role: "user",
                content: user,
            });
            messages.push(WireMessage {
                role: "assistant",
                content: assistant,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &request.user,
        });
        let body = WireRequest {
            model: self.models.model_for(request.role_tag),
            messages,
            temperature: request.sampling.temperature,
            top_p: request.sampling.top_p,
            max_tokens: request.sampling.max_tokens,
        };

        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.key)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::NetworkError(e.to_string()))?;

        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| GatewayError::NetworkError(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::ProviderError {
                status,
                message: truncate(&text, 300),
            });
        }

        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
            GatewayError::ProviderError {
                status,
                message: format!("unparseable response body: {e}"),
            }
        })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or(GatewayError::ProviderError {
                status,
                message: "response contained no choices".into(),
            })?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(Completion {
            text: choice.message.content,
            usage: Usage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            backend_id: format!("live:{}", self.models.model_for(request.role_tag)),
        })
    }
}

fn truncate(text: &str, max: usize) -> String {
    if text.len() <= max {
        text.to_string()
    } else {
        let mut end = max;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &text[..end])
    }
}

/// Transport failures and throttling/server statuses are worth retrying;
/// anything else (auth, bad request, parse) fails immediately.
fn is_retryable(error: &GatewayError) -> bool {
    match error {
        GatewayError::NetworkError(_) => true,
        GatewayError::ProviderError { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl Backend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let mut backoff = self.retry.initial_backoff;
        let mut last_error = None;
        for attempt in 1..=self.retry.max_attempts.max(1) {
            match self.send_once(request) {
                Ok(completion) => return Ok(completion),
                Err(error) => {
                    if !is_retryable(&error) || attempt == self.retry.max_attempts.max(1) {
                        return Err(error);
                    }
                    last_error = Some(error);
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
        Err(last_error.unwrap_or_else(|| GatewayError::NetworkError("no attempts made".into())))
    }

    fn id(&self) -> &str {
        &self.id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal one-thread HTTP server: answers each connection with the next
    /// scripted (status, body) pair and records the raw request bodies.
    fn serve(
        responses: Vec<(u16, String)>,
    ) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let hits_clone = hits.clone();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                hits_clone.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream);
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let trimmed = line.trim();
                    if let Some(rest) = trimmed
                        .to_ascii_lowercase()
                        .strip_prefix("content-length:")
                        .map(str::trim)
                        .map(String::from)
                    {
                        content_length = rest.parse().unwrap();
                    }
                    if trimmed.is_empty() {
                        break;
                    }
                }
                let mut body_buf = vec![0u8; content_length];
                reader.read_exact(&mut body_buf).unwrap();
                bodies.push(String::from_utf8(body_buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                reader.into_inner().write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (url, hits, handle)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 5}
        })
        .to_string()
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(1),
        }
    }

    fn request() -> ChatRequest {
        ChatRequest::new(RoleTag::StoryGen, "be a writer", "write one line")
            .unwrap()
            .with_few_shot(vec![("demo q".into(), "demo a".into())])
    }

    #[test]
    fn sends_openai_shape_and_parses_completion() {
        let (url, hits, handle) = serve(vec![(200, ok_body("a story"))]);
        let backend = LiveBackend::new(url, "secret", RoleModels::default()).with_retry(fast_retry());
        let completion = backend.complete(&request()).unwrap();
        assert_eq!(completion.text, "a story");
        assert_eq!(completion.usage.prompt_tokens, 12);
        assert_eq!(completion.usage.completion_tokens, 5);
        assert_eq!(completion.backend_id, "live:gpt-4o");
        assert_eq!(hits.load(Ordering::SeqCst), 1);

        let bodies = handle.join().unwrap();
        let body: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["top_p"], 0.95);
        assert_eq!(body["max_tokens"], 4096);
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 4);
        assert_eq!(messages[0]["role"], "system");
        assert_eq!(messages[1]["role"], "user");
        assert_eq!(messages[2]["role"], "assistant");
        assert_eq!(messages[3]["role"], "user");
        assert_eq!(messages[3]["content"], "write one line");
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, hits, handle) = serve(vec![
            (500, "{}".into()),
            (429, "{}".into()),
            (200, ok_body("eventually")),
        ]);
        let backend = LiveBackend::new(url, "k", RoleModels::default()).with_retry(fast_retry());
        let completion = backend.complete(&request()).unwrap();
        assert_eq!(completion.text, "eventually");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        handle.join().unwrap();
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let (url, hits, handle) = serve(vec![
            (503, "{}".into()),
            (503, "{}".into()),
            (503, "{}".into()),
        ]);
        let backend = LiveBackend::new(url, "k", RoleModels::default()).with_retry(fast_retry());
        let err = backend.complete(&request()).unwrap_err();
        assert!(matches!(err, GatewayError::ProviderError { status: 503, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        handle.join().unwrap();
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits, handle) = serve(vec![(404, "missing".into())]);
        let backend = LiveBackend::new(url, "k", RoleModels::default()).with_retry(fast_retry());
        let err = backend.complete(&request()).unwrap_err();
        assert!(matches!(err, GatewayError::ProviderError { status: 404, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        handle.join().unwrap();
    }

    #[test]
    fn judge_requests_route_to_the_judge_model() {
        let (url, _, handle) = serve(vec![(200, ok_body("4"))]);
        let backend = LiveBackend::new(url, "k", RoleModels::default());
        let req = ChatRequest::new(RoleTag::Judge, "score", "stories").unwrap();
        let completion = backend.complete(&req).unwrap();
        assert_eq!(completion.backend_id, "live:o4-mini");
        let bodies = handle.join().unwrap();
        let body: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(body["model"], "o4-mini");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn from_env_requires_both_variables() {
        // Serialized via a lock-free convention: tests in this module are the
        // only ones touching these variables.
        std::env::remove_var(ENV_URL);
        std::env::remove_var(ENV_KEY);
        assert_eq!(
            LiveBackend::from_env(RoleModels::default()).unwrap_err(),
            GatewayError::MissingEnv(ENV_URL)
        );
        std::env::set_var(ENV_URL, "http://localhost:1/v1/chat/completions");
        assert_eq!(
            LiveBackend::from_env(RoleModels::default()).unwrap_err(),
            GatewayError::MissingEnv(ENV_KEY)
        );
        std::env::set_var(ENV_KEY, "k");
        assert!(LiveBackend::from_env(RoleModels::default()).is_ok());
        std::env::remove_var(ENV_URL);
        std::env::remove_var(ENV_KEY);
    }
}
