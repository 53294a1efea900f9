//! Chat-completions and embeddings endpoints over HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{estimate_tokens, ChatProvider, CompletionRequest, CompletionResult, Embedder, RetryPolicy};
use crate::error::ProviderError;
use crate::library::Embedding;

pub const API_KEY_ENV: &str = "EVOLIB_API_KEY";

/// Sends one JSON POST and returns `(status, body)`.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), ProviderError>;
}

#[derive(Debug, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), ProviderError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok((status, text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// e.g. `https://api.openai.com/v1`
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

impl EndpointConfig {
    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

fn api_key_from_env() -> Option<String> {
    std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty())
}

fn post(
    transport: &dyn Transport,
    retry: &RetryPolicy,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
    timeout: Duration,
    parse: impl Fn(&str) -> Result<(), ProviderError>,
) -> Result<String, ProviderError> {
    retry.run(|| {
        let (status, text) = transport.post_json(url, api_key, body, timeout)?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status {
                status,
                body: text.chars().take(500).collect(),
            });
        }
        parse(&text)?;
        Ok(text)
    })
}

pub struct HttpChat {
    endpoint: EndpointConfig,
    api_key: Option<String>,
    transport: Box<dyn Transport>,
    retry: RetryPolicy,
}

impl HttpChat {
    /// Reads the API key from `EVOLIB_API_KEY`.
    pub fn new(endpoint: EndpointConfig, retry: RetryPolicy) -> Result<Self, ProviderError> {
        let api_key = api_key_from_env().ok_or(ProviderError::MissingCredentials(API_KEY_ENV))?;
        Ok(Self::with_transport(endpoint, Some(api_key), Box::new(UreqTransport), retry))
    }

    pub fn with_transport(
        endpoint: EndpointConfig,
        api_key: Option<String>,
        transport: Box<dyn Transport>,
        retry: RetryPolicy,
    ) -> Self {
        HttpChat {
            endpoint,
            api_key,
            transport,
            retry,
        }
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({ "role": m.role, "content": m.content }))
            .collect();
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
        });
        if let Some(max) = request.max_output_tokens {
            body["max_tokens"] = json!(max);
        }
        if let Some(effort) = request.reasoning_effort {
            body["reasoning_effort"] = json!(effort);
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

fn parse_chat(text: &str) -> Result<(String, Option<(u64, u64)>), ProviderError> {
    let resp: ChatResponse = serde_json::from_str(text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let content = resp
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| ProviderError::Malformed("no choices[0].message.content".into()))?;
    let usage = resp
        .usage
        .and_then(|u| Some((u.prompt_tokens?, u.completion_tokens?)));
    Ok((content, usage))
}

impl ChatProvider for HttpChat {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        request.validate()?;
        let body = self.body(request);
        let text = post(
            self.transport.as_ref(),
            &self.retry,
            &self.endpoint.url("chat/completions"),
            self.api_key.as_deref(),
            &body,
            Duration::from_secs(self.endpoint.timeout_secs),
            |t| parse_chat(t).map(|_| ()),
        )?;
        let (content, usage) = parse_chat(&text)?;
        Ok(match usage {
            Some((input_tokens, output_tokens)) => CompletionResult {
                text: content,
                input_tokens,
                output_tokens,
                estimated: false,
            },
            None => CompletionResult {
                input_tokens: estimate_tokens(request.prompt_chars()),
                output_tokens: estimate_tokens(content.chars().count()),
                text: content,
                estimated: true,
            },
        })
    }
}

pub struct HttpEmbedder {
    endpoint: EndpointConfig,
    dim: usize,
    api_key: Option<String>,
    transport: Box<dyn Transport>,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(endpoint: EndpointConfig, dim: usize, retry: RetryPolicy) -> Result<Self, ProviderError> {
        let api_key = api_key_from_env().ok_or(ProviderError::MissingCredentials(API_KEY_ENV))?;
        Ok(Self::with_transport(endpoint, dim, Some(api_key), Box::new(UreqTransport), retry))
    }

    pub fn with_transport(
        endpoint: EndpointConfig,
        dim: usize,
        api_key: Option<String>,
        transport: Box<dyn Transport>,
        retry: RetryPolicy,
    ) -> Self {
        HttpEmbedder {
            endpoint,
            dim,
            api_key,
            transport,
            retry,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

fn parse_embedding(text: &str, dim: usize) -> Result<Embedding, ProviderError> {
    let resp: EmbeddingResponse = serde_json::from_str(text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let values = resp
        .data
        .into_iter()
        .next()
        .ok_or_else(|| ProviderError::Malformed("no data[0].embedding".into()))?
        .embedding;
    if values.len() != dim {
        return Err(ProviderError::Malformed(format!(
            "embedding has dimension {}, expected {dim}",
            values.len()
        )));
    }
    Embedding::normalize(values).map_err(|e| ProviderError::Malformed(e.to_string()))
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidRequest("cannot embed empty text".into()));
        }
        let body = json!({ "model": self.endpoint.model, "input": text });
        let resp = post(
            self.transport.as_ref(),
            &self.retry,
            &self.endpoint.url("embeddings"),
            self.api_key.as_deref(),
            &body,
            Duration::from_secs(self.endpoint.timeout_secs),
            |t| parse_embedding(t, self.dim).map(|_| ()),
        )?;
        parse_embedding(&resp, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::providers::Message;

    /// Replays canned responses and records what was sent.
    struct Scripted {
        replies: Mutex<Vec<Result<(u16, String), ProviderError>>>,
        seen: Mutex<Vec<(String, Value)>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<(u16, String), ProviderError>>) -> Self {
            Scripted {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl Transport for &'static Scripted {
        fn post_json(&self, url: &str, _: Option<&str>, body: &Value, _: Duration) -> Result<(u16, String), ProviderError> {
            self.seen.lock().unwrap().push((url.to_owned(), body.clone()));
            self.replies.lock().unwrap().pop().expect("script exhausted")
        }
    }

    fn endpoint() -> EndpointConfig {
        EndpointConfig {
            base_url: "http://localhost:9/v1/".into(),
            model: "m".into(),
            timeout_secs: 1,
        }
    }

    fn leak(s: Scripted) -> &'static Scripted {
        Box::leak(Box::new(s))
    }

    fn chat(script: &'static Scripted) -> HttpChat {
        HttpChat::with_transport(endpoint(), Some("k".into()), Box::new(script), RetryPolicy::immediate(3))
    }

    fn ok_body() -> String {
        r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#.into()
    }

    #[test]
    fn request_shape_and_usage() {
        let script = leak(Scripted::new(vec![Ok((200, ok_body()))]));
        let out = chat(script)
            .complete(&CompletionRequest::new(vec![Message::user("hello")]))
            .unwrap();
        assert_eq!(out.text, "hi");
        assert_eq!((out.input_tokens, out.output_tokens, out.estimated), (12, 3, false));
        let seen = script.seen.lock().unwrap();
        assert_eq!(seen[0].0, "http://localhost:9/v1/chat/completions");
        assert_eq!(seen[0].1["messages"][0]["role"], "user");
        assert_eq!(seen[0].1["messages"][0]["content"], "hello");
        assert_eq!(seen[0].1["top_p"], 0.5);
        assert_eq!(seen[0].1["model"], "m");
    }

    #[test]
    fn malformed_body_fails_after_retries() {
        let script = leak(Scripted::new(vec![
            Ok((200, "not json".into())),
            Ok((200, "{}".into())),
            Ok((200, "{\"choices\":[]}".into())),
        ]));
        let err = chat(script)
            .complete(&CompletionRequest::new(vec![Message::user("x")]))
            .unwrap_err();
        assert!(matches!(err, ProviderError::Exhausted { attempts: 3, .. }), "{err}");
        assert_eq!(script.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn transient_then_success() {
        let script = leak(Scripted::new(vec![
            Ok((503, "busy".into())),
            Err(ProviderError::Transport("reset".into())),
            Ok((200, ok_body())),
        ]));
        let out = chat(script)
            .complete(&CompletionRequest::new(vec![Message::user("x")]))
            .unwrap();
        assert_eq!(out.text, "hi");
    }

    #[test]
    fn missing_usage_is_estimated() {
        let script = leak(Scripted::new(vec![Ok((
            200,
            r#"{"choices":[{"message":{"content":"12345678"}}]}"#.into(),
        ))]));
        let out = chat(script)
            .complete(&CompletionRequest::new(vec![Message::user("abcdefghijkl")]))
            .unwrap();
        assert!(out.estimated);
        assert_eq!((out.input_tokens, out.output_tokens), (3, 2));
    }

    #[test]
    fn empty_messages_never_hit_the_wire() {
        let script = leak(Scripted::new(vec![]));
        assert!(matches!(
            chat(script).complete(&CompletionRequest::new(vec![])),
            Err(ProviderError::InvalidRequest(_))
        ));
        assert!(script.seen.lock().unwrap().is_empty());
    }

    #[test]
    fn embeddings_are_normalized_and_dim_checked() {
        let script = leak(Scripted::new(vec![
            Ok((200, r#"{"data":[{"embedding":[3.0,4.0]}]}"#.into())),
            Ok((200, r#"{"data":[{"embedding":[1.0,0.0,0.0]}]}"#.into())),
            Ok((200, r#"{"data":[{"embedding":[1.0,0.0,0.0]}]}"#.into())),
            Ok((200, r#"{"data":[{"embedding":[1.0,0.0,0.0]}]}"#.into())),
        ]));
        let emb = HttpEmbedder::with_transport(endpoint(), 2, None, Box::new(script), RetryPolicy::immediate(3));
        let v = emb.embed("text").unwrap();
        assert_eq!(v.as_slice(), &[0.6, 0.8]);
        assert_eq!(script.seen.lock().unwrap()[0].1["input"], "text");
        assert!(emb.embed("text").is_err());
    }
}
