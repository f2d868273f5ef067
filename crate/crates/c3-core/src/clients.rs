//! Backend clients: chat-completions LLM with an on-disk response cache,
//! an NER annotation server client, and a deterministic offline gazetteer
//! NER. With the gazetteer backend and a warm cache the whole toolkit runs
//! without network access.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::registry::{ContextRegistry, TypeGroup};

/// Environment variable naming the chat-completions endpoint.
pub const ENV_LLM_ENDPOINT: &str = "C3_LLM_ENDPOINT";
/// Environment variable holding the API key.
pub const ENV_LLM_KEY: &str = "C3_LLM_KEY";

const MAX_RETRIES: u32 = 3;
const BODY_EXCERPT_LEN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn wire_name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// A chat-completions request. `temperature` of `None` defers to the
/// backend default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub max_response_tokens: usize,
    pub temperature: Option<f64>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, model_id: impl Into<String>, max_response_tokens: usize) -> Self {
        Self {
            messages,
            model_id: model_id.into(),
            max_response_tokens,
            temperature: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let system_count = self.messages.iter().filter(|m| m.role == Role::System).count();
        if system_count != 1 || self.messages.first().map(|m| m.role) != Some(Role::System) {
            return Err(Error::precondition(
                "llm_complete",
                "messages must start with exactly one SYSTEM message",
            ));
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(Error::precondition("llm_complete", "message content must be non-empty"));
        }
        Ok(())
    }
}

/// Canonical JSON for a request: keys in sorted order (serde_json maps are
/// BTree-backed), message content whitespace-normalized. The cache key is
/// the SHA-256 of this form, so equal canonical forms share one entry.
pub fn canonical_request_json(request: &ChatRequest) -> String {
    fn normalize_ws(text: &str) -> String {
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }
    let messages: Vec<serde_json::Value> = request
        .messages
        .iter()
        .map(|m| {
            serde_json::json!({
                "content": normalize_ws(&m.content),
                "role": m.role.wire_name(),
            })
        })
        .collect();
    let mut value = serde_json::json!({
        "max_tokens": request.max_response_tokens,
        "messages": messages,
        "model": request.model_id,
    });
    if let Some(t) = request.temperature {
        value["temperature"] = serde_json::json!(t);
    }
    value.to_string()
}

/// Hex SHA-256 cache key of the canonicalized request.
pub fn cache_key(request: &ChatRequest) -> String {
    let digest = Sha256::digest(canonical_request_json(request).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: String,
    response: String,
}

/// Counting semaphore capping concurrent backend calls.
struct InFlightGate {
    limit: usize,
    state: Mutex<usize>,
    cv: Condvar,
}

impl InFlightGate {
    fn new(limit: usize) -> Self {
        Self { limit: limit.max(1), state: Mutex::new(0), cv: Condvar::new() }
    }

    fn acquire(&self) {
        let mut n = self.state.lock().expect("gate lock");
        while *n >= self.limit {
            n = self.cv.wait(n).expect("gate wait");
        }
        *n += 1;
    }

    fn release(&self) {
        let mut n = self.state.lock().expect("gate lock");
        *n -= 1;
        self.cv.notify_one();
    }
}

/// Chat-completions client with write-through on-disk caching.
///
/// Cache hits are served without touching the network, so recorded
/// fixtures make every LLM-dependent path reproducible offline.
pub struct LlmClient {
    endpoint: Option<String>,
    api_key: Option<String>,
    cache_dir: Option<PathBuf>,
    model_id: String,
    gate: InFlightGate,
}

impl LlmClient {
    pub const DEFAULT_MODEL: &'static str = "gpt-4-turbo";
    pub const DEFAULT_IN_FLIGHT_LIMIT: usize = 4;

    pub fn new(endpoint: Option<String>, api_key: Option<String>, cache_dir: Option<PathBuf>) -> Self {
        Self {
            endpoint,
            api_key,
            cache_dir,
            model_id: Self::DEFAULT_MODEL.to_string(),
            gate: InFlightGate::new(Self::DEFAULT_IN_FLIGHT_LIMIT),
        }
    }

    /// Endpoint and key from `C3_LLM_ENDPOINT` / `C3_LLM_KEY`.
    pub fn from_env(cache_dir: Option<PathBuf>) -> Self {
        Self::new(
            std::env::var(ENV_LLM_ENDPOINT).ok(),
            std::env::var(ENV_LLM_KEY).ok(),
            cache_dir,
        )
    }

    /// Cache-only client; any cache miss fails.
    pub fn offline(cache_dir: PathBuf) -> Self {
        Self::new(None, None, Some(cache_dir))
    }

    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn with_in_flight_limit(mut self, limit: usize) -> Self {
        self.gate = InFlightGate::new(limit);
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn cache_read(&self, key: &str) -> Option<String> {
        let path = self.cache_path(key)?;
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str::<CacheEntry>(&text).ok().map(|e| e.response)
    }

    fn cache_write(&self, key: &str, request_json: &str, response: &str) -> Result<()> {
        let Some(path) = self.cache_path(key) else { return Ok(()) };
        let dir = path.parent().expect("cache path has parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let entry = CacheEntry { request: request_json.to_string(), response: response.to_string() };
        let body = serde_json::to_string_pretty(&entry)?;
        // write-temp-then-rename keeps concurrent readers consistent
        let tmp = dir.join(format!(
            ".{}.tmp-{}",
            path.file_name().unwrap().to_string_lossy(),
            std::process::id()
        ));
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Pre-record a response for a request; used to warm fixture caches.
    pub fn warm_cache(&self, request: &ChatRequest, response: &str) -> Result<()> {
        request.validate()?;
        let canonical = canonical_request_json(request);
        self.cache_write(&cache_key(request), &canonical, response)
    }

    /// First completion text for the request, cache first.
    pub fn complete(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        let key = cache_key(request);
        if let Some(hit) = self.cache_read(&key) {
            return Ok(hit);
        }
        let (endpoint, api_key) = match (&self.endpoint, &self.api_key) {
            (Some(e), Some(k)) => (e.clone(), k.clone()),
            _ => return Err(Error::MissingCredential { key }),
        };
        self.gate.acquire();
        let outcome = self.complete_over_http(&endpoint, &api_key, request);
        self.gate.release();
        let response = outcome?;
        self.cache_write(&key, &canonical_request_json(request), &response)?;
        Ok(response)
    }

    fn complete_over_http(&self, endpoint: &str, api_key: &str, request: &ChatRequest) -> Result<String> {
        let messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| serde_json::json!({ "role": m.role.wire_name(), "content": m.content }))
            .collect();
        let mut body = serde_json::json!({
            "model": request.model_id,
            "messages": messages,
            "max_tokens": request.max_response_tokens,
        });
        if let Some(t) = request.temperature {
            body["temperature"] = serde_json::json!(t);
        }
        let body = body.to_string();

        let mut delay = Duration::from_millis(250);
        let mut last_err = None;
        for attempt in 0..=MAX_RETRIES {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.post_once(endpoint, api_key, &body) {
                Ok(text) => return parse_completion(&text),
                Err(err) => {
                    let transient = matches!(
                        &err,
                        Error::Transport(_) | Error::HttpStatus { status: 429 | 500..=599, .. }
                    );
                    if !transient {
                        return Err(err);
                    }
                    last_err = Some(err);
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn post_once(&self, endpoint: &str, api_key: &str, body: &str) -> Result<String> {
        let result = ureq::post(endpoint)
            .header("authorization", &format!("Bearer {api_key}"))
            .header("content-type", "application/json")
            .config()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .send(body);
        match result {
            Ok(mut resp) => resp
                .body_mut()
                .read_to_string()
                .map_err(|e| Error::Transport(e.to_string())),
            Err(ureq::Error::StatusCode(status)) => Err(Error::HttpStatus {
                status,
                body_excerpt: String::new(),
            }),
            Err(e) => Err(Error::Transport(e.to_string())),
        }
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(BODY_EXCERPT_LEN).collect()
}

/// Extract `choices[0].message.content` from a chat-completions response.
fn parse_completion(body: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| Error::ResponseParse {
        reason: e.to_string(),
        body_excerpt: excerpt(body),
    })?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::ResponseParse {
            reason: "missing choices[0].message.content".into(),
            body_excerpt: excerpt(body),
        })
}

/// One recognized entity mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerAnnotation {
    pub span_text: String,
    pub label: String,
}

/// NER backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NerBackendKind {
    Server,
    Gazetteer,
}

/// Client for an NLP annotation server's NER endpoint. The server takes a
/// raw-text POST with a `properties` query parameter selecting the `ner`
/// annotator and answers JSON with per-sentence entity-mention arrays.
pub struct NerServerClient {
    endpoint: String,
}

impl NerServerClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into() }
    }

    pub fn annotate(&self, text: &str, registry: &ContextRegistry) -> Result<Vec<NerAnnotation>> {
        let properties = "%7B%22annotators%22%3A%22ner%22%2C%22outputFormat%22%3A%22json%22%7D";
        let url = format!("{}/?properties={}", self.endpoint.trim_end_matches('/'), properties);
        let mut resp = ureq::post(&url)
            .config()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .send(text)
            .map_err(|e| Error::NerServer(e.to_string()))?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::NerServer(e.to_string()))?;
        parse_server_annotations(&body, registry)
    }
}

/// Map a server NER tag onto the context label space.
fn map_server_label(raw: &str) -> Option<&'static str> {
    Some(match raw {
        "PERSON" => "PERSON",
        "CITY" => "CITY",
        "COUNTRY" => "COUNTRY",
        "LOCATION" => "LOCATION",
        "STATE_OR_PROVINCE" => "GPE",
        "ORGANIZATION" => "ORGANIZATION",
        "FACILITY" => "FAC",
        "NATIONALITY" | "RELIGION" | "IDEOLOGY" => "NORP",
        "DATE" => "DATE",
        "TIME" => "TIME",
        "DURATION" => "DURATION",
        "SET" => "TIMESET",
        "MONEY" => "MONEY",
        "PERCENT" => "PERCENT",
        "ORDINAL" => "ORDINAL",
        "NUMBER" => "CARDINAL",
        _ => return None,
    })
}

fn parse_server_annotations(body: &str, registry: &ContextRegistry) -> Result<Vec<NerAnnotation>> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| Error::ResponseParse {
        reason: e.to_string(),
        body_excerpt: excerpt(body),
    })?;
    let mut out = Vec::new();
    let sentences = value["sentences"].as_array().cloned().unwrap_or_default();
    for sentence in sentences {
        let mentions = sentence["entitymentions"].as_array().cloned().unwrap_or_default();
        for mention in mentions {
            let (Some(text), Some(raw)) = (mention["text"].as_str(), mention["ner"].as_str()) else {
                continue;
            };
            if let Some(label) = map_server_label(raw) {
                if is_valid_ner_label(label, registry) {
                    out.push(NerAnnotation { span_text: text.to_string(), label: label.to_string() });
                }
            }
        }
    }
    Ok(out)
}

/// Labels the offline NER may produce: string contexts outside Cyberspace.
fn is_valid_ner_label(label: &str, registry: &ContextRegistry) -> bool {
    registry
        .lookup(label)
        .map(|c| c.group == TypeGroup::String && c.category != "Cyberspace")
        .unwrap_or(false)
}

/// Deterministic offline NER. A text gets label `L` when, after trimming
/// and lowercasing, it equals a term in the `L` gazetteer, or every
/// whitespace-separated token does.
pub fn gazetteer_annotate(text: &str, registry: &ContextRegistry) -> Vec<NerAnnotation> {
    let normalized = text.trim().to_lowercase();
    let tokens: Vec<&str> = normalized.split_whitespace().collect();
    let mut out = Vec::new();
    for label in registry.gazetteer_labels() {
        if !is_valid_ner_label(label, registry) {
            continue;
        }
        let terms: &BTreeSet<String> = registry.gazetteer(label).expect("label iterated from map");
        let whole = !normalized.is_empty() && terms.contains(&normalized);
        let tokenwise = !tokens.is_empty() && tokens.iter().all(|t| terms.contains(*t));
        if whole || tokenwise {
            out.push(NerAnnotation { span_text: text.trim().to_string(), label: label.to_string() });
        }
    }
    out
}

/// Annotate with the selected backend.
pub fn ner_annotate(
    text: &str,
    backend: NerBackendKind,
    server: Option<&NerServerClient>,
    registry: &ContextRegistry,
) -> Result<Vec<NerAnnotation>> {
    match backend {
        NerBackendKind::Gazetteer => Ok(gazetteer_annotate(text, registry)),
        NerBackendKind::Server => {
            let client = server.ok_or_else(|| Error::NerServer("no endpoint configured".into()))?;
            client.annotate(text, registry)
        }
    }
}

/// Dump a cache directory path for a request, for diagnostics.
pub fn cache_file_name(request: &ChatRequest) -> String {
    format!("{}.json", cache_key(request))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ContextRegistry;

    fn req(content: &str) -> ChatRequest {
        ChatRequest::new(
            vec![ChatMessage::system("role"), ChatMessage::user(content)],
            "test-model",
            20,
        )
    }

    #[test]
    fn canonical_form_is_whitespace_insensitive() {
        let a = req("hello   world");
        let b = req("hello world");
        let c = req("hello worlds");
        assert_eq!(canonical_request_json(&a), canonical_request_json(&b));
        assert_eq!(cache_key(&a), cache_key(&b));
        assert_ne!(cache_key(&a), cache_key(&c));
    }

    #[test]
    fn missing_system_message_is_rejected() {
        let bad = ChatRequest::new(vec![ChatMessage::user("q")], "m", 10);
        assert!(matches!(
            LlmClient::new(None, None, None).complete(&bad),
            Err(Error::Precondition { .. })
        ));
    }

    #[test]
    fn cache_round_trip_without_network() {
        let dir = tempfile::tempdir().unwrap();
        let client = LlmClient::offline(dir.path().to_path_buf());
        let request = req("what context?");
        assert!(matches!(
            client.complete(&request),
            Err(Error::MissingCredential { .. })
        ));
        client.warm_cache(&request, "PERSON").unwrap();
        assert_eq!(client.complete(&request).unwrap(), "PERSON");
        // byte-identical on a second read
        assert_eq!(client.complete(&request).unwrap(), "PERSON");
    }

    #[test]
    fn completion_parse_errors_carry_excerpt() {
        let err = parse_completion("not json at all").unwrap_err();
        match err {
            Error::ResponseParse { body_excerpt, .. } => {
                assert!(body_excerpt.starts_with("not json"))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
        assert_eq!(
            parse_completion(r#"{"choices":[{"message":{"content":"EMAIL"}}]}"#).unwrap(),
            "EMAIL"
        );
    }

    #[test]
    fn gazetteer_labels_simple_mentions() {
        let reg = ContextRegistry::load_default().unwrap();
        let person = gazetteer_annotate("Simon", &reg);
        assert!(person.iter().any(|a| a.label == "PERSON"), "{person:?}");
        let multi = gazetteer_annotate("Enrico Fermi", &reg);
        assert!(multi.iter().any(|a| a.label == "PERSON"));
        let money = gazetteer_annotate("2 euros", &reg);
        assert!(money.iter().any(|a| a.label == "MONEY"));
        assert!(gazetteer_annotate("|x45e*3q4+", &reg).is_empty());
        assert!(gazetteer_annotate("", &reg).is_empty());
    }

    #[test]
    fn gazetteer_never_labels_cyberspace() {
        let reg = ContextRegistry::load_default().unwrap();
        for ann in gazetteer_annotate("Beijing London first", &reg) {
            let ctx = reg.lookup(&ann.label).unwrap();
            assert_ne!(ctx.category, "Cyberspace");
            assert_eq!(ctx.group, TypeGroup::String);
        }
    }

    #[test]
    fn server_response_parsing_maps_labels() {
        let reg = ContextRegistry::load_default().unwrap();
        let body = r#"{
            "sentences": [{
                "entitymentions": [
                    {"text": "Sat 26 April", "ner": "DATE"},
                    {"text": "every week", "ner": "SET"},
                    {"text": "three", "ner": "NUMBER"},
                    {"text": "weird", "ner": "HANDLE"}
                ]
            }]
        }"#;
        let anns = parse_server_annotations(body, &reg).unwrap();
        let labels: Vec<&str> = anns.iter().map(|a| a.label.as_str()).collect();
        assert_eq!(labels, vec!["DATE", "TIMESET", "CARDINAL"]);
    }
}
