//! Deterministic mock backends for offline runs and tests.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{whitespace_tokens, Backend, ChatRequest, Completion, GatewayError, Usage};

/// On-disk mock description.
///
/// ```json
/// {"mode": "script", "responses": ["first reply", "second reply"]}
/// {"mode": "map", "responses": {"<fingerprint>": "reply"}}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "responses", rename_all = "lowercase")]
pub enum MockFixture {
    /// Responses served in order, one per request, regardless of content.
    Script(Vec<String>),
    /// Responses keyed by request [`fingerprint`](super::fingerprint).
    Map(BTreeMap<String, String>),
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::FixtureError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| GatewayError::FixtureError(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let mut body = serde_json::to_string_pretty(self)
            .map_err(|e| GatewayError::FixtureError(e.to_string()))?;
        body.push('\n');
        std::fs::write(path, body)
            .map_err(|e| GatewayError::FixtureError(format!("{}: {e}", path.display())))
    }
}

enum MockState {
    Script(VecDeque<String>),
    Map(BTreeMap<String, String>),
}

/// Backend that replays canned responses. Script mode serializes dequeues
/// behind a mutex so concurrent callers each get exactly one response; map
/// mode is a pure lookup by request fingerprint. Every served request is
/// recorded so tests can inspect the exact traffic a component produced.
pub struct MockBackend {
    state: Mutex<MockState>,
    recorded: Mutex<Vec<ChatRequest>>,
    id: String,
}

impl MockBackend {
    pub fn script(responses: Vec<String>) -> Self {
        MockBackend {
            state: Mutex::new(MockState::Script(responses.into())),
            recorded: Mutex::new(Vec::new()),
            id: "mock:script".into(),
        }
    }

    pub fn map(responses: BTreeMap<String, String>) -> Self {
        MockBackend {
            state: Mutex::new(MockState::Map(responses)),
            recorded: Mutex::new(Vec::new()),
            id: "mock:map".into(),
        }
    }

    pub fn from_fixture(fixture: MockFixture) -> Self {
        match fixture {
            MockFixture::Script(responses) => MockBackend::script(responses),
            MockFixture::Map(responses) => MockBackend::map(responses),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(MockBackend::from_fixture(MockFixture::load(path)?))
    }

    /// Responses not yet served (script) or registered (map). A fully
    /// consumed script reports zero, which is how fixture tests assert the
    /// scripted call count matches the pipeline's exactly.
    pub fn remaining(&self) -> usize {
        match &*self.state.lock().unwrap() {
            MockState::Script(queue) => queue.len(),
            MockState::Map(map) => map.len(),
        }
    }

    /// Requests successfully served so far.
    pub fn served(&self) -> usize {
        self.recorded.lock().unwrap().len()
    }

    /// Copies of every request served, in order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.recorded.lock().unwrap().clone()
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let text = {
            let mut state = self.state.lock().unwrap();
            match &mut *state {
                MockState::Script(queue) => match queue.pop_front() {
                    Some(text) => text,
                    None => {
                        return Err(GatewayError::MockMiss {
                            fingerprint: request.fingerprint(),
                        })
                    }
                },
                MockState::Map(map) => {
                    let fp = request.fingerprint();
                    match map.get(&fp) {
                        Some(text) => text.clone(),
                        None => return Err(GatewayError::MockMiss { fingerprint: fp }),
                    }
                }
            }
        };
        self.recorded.lock().unwrap().push(request.clone());
        let prompt_tokens = whitespace_tokens(&request.system)
            + request
                .few_shot
                .iter()
                .map(|(u, a)| whitespace_tokens(u) + whitespace_tokens(a))
                .sum::<u64>()
            + whitespace_tokens(&request.user);
        Ok(Completion {
            usage: Usage {
                prompt_tokens,
                completion_tokens: whitespace_tokens(&text),
            },
            text,
            backend_id: self.id.clone(),
        })
    }

    fn id(&self) -> &str {
        &self.id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::RoleTag;

    fn request(user: &str) -> ChatRequest {
        ChatRequest::new(RoleTag::Judge, "sys", user).unwrap()
    }

    #[test]
    fn script_serves_in_order_then_misses() {
        let mock = MockBackend::script(vec!["one".into(), "two".into()]);
        assert_eq!(mock.complete(&request("a")).unwrap().text, "one");
        assert_eq!(mock.complete(&request("b")).unwrap().text, "two");
        assert_eq!(mock.remaining(), 0);
        assert_eq!(mock.served(), 2);
        let err = mock.complete(&request("c")).unwrap_err();
        assert!(matches!(err, GatewayError::MockMiss { fingerprint } if !fingerprint.is_empty()));
    }

    #[test]
    fn map_looks_up_by_fingerprint() {
        let req = request("mapped");
        let mut responses = BTreeMap::new();
        responses.insert(req.fingerprint(), "hit".to_string());
        let mock = MockBackend::map(responses);
        assert_eq!(mock.complete(&req).unwrap().text, "hit");
        // Same text with different sampling is a different fingerprint.
        let mut other = req.clone();
        other.sampling.temperature = 0.7;
        let err = mock.complete(&other).unwrap_err();
        assert_eq!(
            err,
            GatewayError::MockMiss {
                fingerprint: other.fingerprint()
            }
        );
    }

    #[test]
    fn usage_counts_whitespace_tokens_on_both_sides() {
        let mock = MockBackend::script(vec!["three word reply".into()]);
        let req = ChatRequest::new(RoleTag::Avg, "two words", "and three more")
            .unwrap()
            .with_few_shot(vec![("one".into(), "pair here".into())]);
        let completion = mock.complete(&req).unwrap();
        assert_eq!(completion.usage.prompt_tokens, 2 + 3 + 1 + 2);
        assert_eq!(completion.usage.completion_tokens, 3);
        assert_eq!(completion.backend_id, "mock:script");
    }

    #[test]
    fn fixture_round_trips_through_json() {
        let script = MockFixture::Script(vec!["a".into(), "b".into()]);
        let json = serde_json::to_string(&script).unwrap();
        assert_eq!(json, r#"{"mode":"script","responses":["a","b"]}"#);
        assert_eq!(serde_json::from_str::<MockFixture>(&json).unwrap(), script);

        let mut m = BTreeMap::new();
        m.insert("fp".to_string(), "text".to_string());
        let map = MockFixture::Map(m);
        let json = serde_json::to_string(&map).unwrap();
        assert_eq!(json, r#"{"mode":"map","responses":{"fp":"text"}}"#);
        assert_eq!(serde_json::from_str::<MockFixture>(&json).unwrap(), map);
    }

    #[test]
    fn script_is_safe_under_concurrent_dequeues() {
        let mock = std::sync::Arc::new(MockBackend::script(
            (0..64).map(|i| format!("r{i}")).collect(),
        ));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let mock = mock.clone();
            handles.push(std::thread::spawn(move || {
                let mut seen = Vec::new();
                for _ in 0..8 {
                    seen.push(mock.complete(&request("x")).unwrap().text);
                }
                seen
            }));
        }
        let mut all: Vec<String> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        all.sort();
        all.dedup();
        // Every scripted response was served exactly once.
        assert_eq!(all.len(), 64);
        assert_eq!(mock.remaining(), 0);
    }
}
