//! Scripted offline backend for `mock://<script>` endpoints.
//!
//! Script files are JSON (or TOML when the extension is `.toml`):
//!
//! ```json
//! {
//!   "scripts": {
//!     "long":     { "replies": [ { "generate": { "tokens": 2000 }, "chunk_tokens": 4 } ] },
//!     "flaky":    { "replies": [ { "text": "one two three four", "error_at": 3 } ] },
//!     "slow":     { "replies": [ { "text": "eventually", "delay_ms": 5000 } ] },
//!     "selector": { "replies": [ { "text": "[LLM2, LLM1]" } ] },
//!     "echo":     { "replies": [ { "capture": "LLM1's answer: ([\\s\\S]*?)\\n\\n" } ] }
//!   }
//! }
//! ```
//!
//! Reply fields:
//!
//! * `text`: reply body, split into whitespace-delimited words, one token
//!   per word, `chunk_tokens` words per streamed chunk (default 1).
//! * `chunks`: explicit chunk list; tokens per chunk = its word count.
//! * `generate`: `{ "tokens": N, "word": "tok" }`, N copies of `word`.
//! * `capture`: regex applied to the last user message; the reply becomes
//!   capture group 1 (or the whole match), substituted for `{capture}` in
//!   `text` when `text` is also present. Falls back to `text` on no match.
//! * `when_contains`: the reply only applies to requests whose messages
//!   contain this substring.
//! * `delay_ms`: sleep before each chunk.
//! * `error_at`: the N-th chunk (1-based) fails; earlier chunks are delivered.
//! * `usage`: whether a usage frame is sent at the end (default true).
//!
//! Reply resolution: the first reply whose `when_contains` matches wins;
//! otherwise unconditional replies are replayed in order, cycling. Streams
//! ignore `max_tokens` (they model a server that keeps generating until the
//! client hangs up); non-streamed calls honor it.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::stream::{self, BoxStream, StreamExt};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{estimate_tokens, ChatMessage, ChatRequest, Role, StreamChunk, Usage};
use crate::error::ClientError;

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

fn default_word() -> String {
    "tok".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generate {
    pub tokens: u64,
    #[serde(default = "default_word")]
    pub word: String,
}

/// One scripted reply, as written in a script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockReply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<Generate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_contains: Option<String>,
    #[serde(default = "one")]
    pub chunk_tokens: u32,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_at: Option<usize>,
    #[serde(default = "yes")]
    pub usage: bool,
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            chunks: None,
            generate: None,
            capture: None,
            when_contains: None,
            chunk_tokens: 1,
            delay_ms: 0,
            error_at: None,
            usage: true,
        }
    }

    /// `tokens` copies of `tok`, `chunk_tokens` per chunk.
    pub fn generate(tokens: u64, chunk_tokens: u32) -> Self {
        Self {
            text: None,
            generate: Some(Generate {
                tokens,
                word: default_word(),
            }),
            chunk_tokens,
            ..Self::text("")
        }
    }

    pub fn capture(pattern: impl Into<String>) -> Self {
        Self {
            text: None,
            capture: Some(pattern.into()),
            ..Self::text("")
        }
    }

    pub fn chunked(mut self, chunk_tokens: u32) -> Self {
        self.chunk_tokens = chunk_tokens;
        self
    }

    pub fn when_contains(mut self, needle: impl Into<String>) -> Self {
        self.when_contains = Some(needle.into());
        self
    }

    pub fn error_at(mut self, chunk: usize) -> Self {
        self.error_at = Some(chunk);
        self
    }

    pub fn delay_ms(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }

    pub fn without_usage(mut self) -> Self {
        self.usage = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub replies: Vec<MockReply>,
}

impl MockScript {
    pub fn new(replies: Vec<MockReply>) -> Self {
        Self { replies }
    }
}

/// On-disk script file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScriptFile {
    #[serde(default)]
    pub version: Option<u32>,
    pub scripts: HashMap<String, MockScript>,
}

struct CompiledReply {
    spec: MockReply,
    capture: Option<Regex>,
}

/// A request the mock backend received, kept for assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub script: String,
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub stream: bool,
}

impl RecordedRequest {
    pub fn last_user(&self) -> &str {
        last_user(&self.messages)
    }
}

fn last_user(messages: &[ChatMessage]) -> &str {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

/// Deterministic scripted backend shared by every `mock://` endpoint.
pub struct MockBackend {
    scripts: HashMap<String, Vec<CompiledReply>>,
    cursors: Mutex<HashMap<String, usize>>,
    log: Mutex<Vec<RecordedRequest>>,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("scripts", &self.scripts.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// A fully materialized reply, ready to stream.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ResolvedReply {
    pub chunks: Vec<(String, u64)>,
    pub delay: Duration,
    pub error_at: Option<usize>,
    pub usage: bool,
}

impl MockBackend {
    pub fn new(file: MockScriptFile) -> Result<Self, ClientError> {
        let mut scripts = HashMap::new();
        for (name, script) in file.scripts {
            if script.replies.is_empty() {
                return Err(ClientError::MockScripts(format!("script '{name}' has no replies")));
            }
            let mut compiled = Vec::with_capacity(script.replies.len());
            for (i, reply) in script.replies.into_iter().enumerate() {
                let bodies = [reply.text.is_some(), reply.chunks.is_some(), reply.generate.is_some()]
                    .iter()
                    .filter(|b| **b)
                    .count();
                if bodies > 1 || (bodies == 0 && reply.capture.is_none()) {
                    return Err(ClientError::MockScripts(format!(
                        "script '{name}' reply {i}: give exactly one of text, chunks, generate (or a capture)"
                    )));
                }
                if reply.chunk_tokens == 0 {
                    return Err(ClientError::MockScripts(format!(
                        "script '{name}' reply {i}: chunk_tokens must be ≥ 1"
                    )));
                }
                if reply.error_at == Some(0) {
                    return Err(ClientError::MockScripts(format!(
                        "script '{name}' reply {i}: error_at is 1-based"
                    )));
                }
                let capture = match &reply.capture {
                    Some(p) => Some(Regex::new(p).map_err(|e| {
                        ClientError::MockScripts(format!("script '{name}' reply {i}: {e}"))
                    })?),
                    None => None,
                };
                compiled.push(CompiledReply { spec: reply, capture });
            }
            scripts.insert(name, compiled);
        }
        Ok(Self {
            scripts,
            cursors: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn from_scripts<I, S>(scripts: I) -> Result<Arc<Self>, ClientError>
    where
        I: IntoIterator<Item = (S, MockScript)>,
        S: Into<String>,
    {
        let file = MockScriptFile {
            version: Some(1),
            scripts: scripts.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        };
        Self::new(file).map(Arc::new)
    }

    pub fn parse(text: &str, toml_format: bool) -> Result<Self, ClientError> {
        let file: MockScriptFile = if toml_format {
            toml::from_str(text).map_err(|e| ClientError::MockScripts(e.to_string()))?
        } else {
            serde_json::from_str(text).map_err(|e| ClientError::MockScripts(e.to_string()))?
        };
        Self::new(file)
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::MockScripts(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "toml"))
    }

    pub fn has_script(&self, name: &str) -> bool {
        self.scripts.contains_key(name)
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    pub fn requests_for(&self, model_id: &str) -> Vec<RecordedRequest> {
        self.requests()
            .into_iter()
            .filter(|r| r.model_id == model_id)
            .collect()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().expect("mock log poisoned").len()
    }

    pub(crate) fn resolve(&self, script: &str, request: &ChatRequest) -> Result<ResolvedReply, ClientError> {
        let replies = self
            .scripts
            .get(script)
            .ok_or_else(|| ClientError::UnknownScript(script.to_string()))?;
        self.log.lock().expect("mock log poisoned").push(RecordedRequest {
            script: script.to_string(),
            model_id: request.model_id.clone(),
            messages: request.messages.clone(),
            max_tokens: request.max_tokens,
            stream: request.stream,
        });

        let haystack: String = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let matched = replies.iter().find(|r| {
            r.spec
                .when_contains
                .as_deref()
                .is_some_and(|needle| haystack.contains(needle))
        });
        let reply = match matched {
            Some(r) => r,
            None => {
                let unconditional: Vec<&CompiledReply> =
                    replies.iter().filter(|r| r.spec.when_contains.is_none()).collect();
                if unconditional.is_empty() {
                    return Err(ClientError::MockScripts(format!(
                        "script '{script}' has no reply matching the request"
                    )));
                }
                let mut cursors = self.cursors.lock().expect("mock cursors poisoned");
                let cursor = cursors.entry(script.to_string()).or_insert(0);
                let r = unconditional[*cursor % unconditional.len()];
                *cursor += 1;
                r
            }
        };
        Ok(materialize(reply, last_user(&request.messages)))
    }
}

fn materialize(reply: &CompiledReply, last_user: &str) -> ResolvedReply {
    let spec = &reply.spec;
    let per_chunk = spec.chunk_tokens as usize;
    let chunks: Vec<(String, u64)> = if let Some(gen) = &spec.generate {
        let mut out = Vec::new();
        let mut left = gen.tokens;
        while left > 0 {
            let n = left.min(per_chunk as u64);
            out.push((format!("{} ", gen.word).repeat(n as usize), n));
            left -= n;
        }
        out
    } else if let Some(explicit) = &spec.chunks {
        explicit
            .iter()
            .map(|c| (c.clone(), estimate_tokens(c)))
            .collect()
    } else {
        let captured = reply.capture.as_ref().and_then(|re| {
            re.captures(last_user).map(|c| {
                c.get(1)
                    .or_else(|| c.get(0))
                    .map(|m| m.as_str().to_string())
                    .unwrap_or_default()
            })
        });
        let body = match (captured, &spec.text) {
            (Some(c), Some(t)) => t.replace("{capture}", &c),
            (Some(c), None) => c,
            (None, Some(t)) => t.clone(),
            (None, None) => String::new(),
        };
        split_words(&body, per_chunk)
    };
    ResolvedReply {
        chunks,
        delay: Duration::from_millis(spec.delay_ms),
        error_at: spec.error_at,
        usage: spec.usage,
    }
}

/// Splits text into chunks of `per_chunk` words. Concatenating the chunks
/// reproduces the input exactly.
fn split_words(text: &str, per_chunk: usize) -> Vec<(String, u64)> {
    // Cut before every word except the first, so whitespace rides along with
    // the preceding word.
    let mut cuts = vec![0];
    let mut prev_ws = false;
    let mut seen_word = false;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if !ws && prev_ws && seen_word {
            cuts.push(i);
        }
        seen_word |= !ws;
        prev_ws = ws;
    }
    cuts.push(text.len());
    let pieces: Vec<&str> = cuts
        .windows(2)
        .map(|w| &text[w[0]..w[1]])
        .filter(|p| !p.is_empty())
        .collect();
    pieces
        .chunks(per_chunk)
        .map(|group| {
            let s: String = group.concat();
            let n = estimate_tokens(&s);
            (s, n)
        })
        .collect()
}

/// Streams a resolved reply as chunk events, honoring delay and error injection.
pub(crate) fn reply_stream(
    reply: ResolvedReply,
    prompt_tokens: u64,
) -> BoxStream<'static, Result<StreamChunk, String>> {
    let total: u64 = reply.chunks.iter().map(|(_, n)| *n).sum();
    let n_chunks = reply.chunks.len();
    let ResolvedReply {
        chunks,
        delay,
        error_at,
        usage,
    } = reply;
    let pause = move || async move {
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
    };
    let body = stream::iter(chunks.into_iter().enumerate()).then(move |(i, (text, tokens))| async move {
        pause().await;
        if error_at == Some(i + 1) {
            Err(format!("injected failure at chunk {}", i + 1))
        } else {
            Ok(StreamChunk {
                text,
                tokens: Some(tokens),
                finish_reason: None,
                usage: None,
            })
        }
    });
    // An error index past the last chunk fails the stream before it finishes.
    let late = stream::iter(error_at.filter(|e| *e > n_chunks)).then(move |e| async move {
        pause().await;
        Err(format!("injected failure at chunk {e}"))
    });
    let tail = stream::once(async move {
        Ok(StreamChunk {
            text: String::new(),
            tokens: Some(0),
            finish_reason: Some("stop".to_string()),
            usage: usage.then_some(Usage {
                prompt_tokens,
                completion_tokens: total,
            }),
        })
    });
    body.chain(late)
        .chain(tail)
        .scan(false, |failed, item| {
            if *failed {
                return futures::future::ready(None);
            }
            *failed = item.is_err();
            futures::future::ready(Some(item))
        })
        .boxed()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_preserves_text() {
        for text in ["", "one", "  lead two  three\n\nfour ", "a\tb", "héllo wörld"] {
            for n in 1..4 {
                let chunks = split_words(text, n);
                let joined: String = chunks.iter().map(|(s, _)| s.as_str()).collect();
                assert_eq!(joined, text, "n={n}");
                let words: u64 = chunks.iter().map(|(_, t)| *t).sum();
                assert_eq!(words, text.split_whitespace().count() as u64);
            }
        }
        assert_eq!(split_words("a b c d e", 2).len(), 3);
    }

    fn req(content: &str) -> ChatRequest {
        ChatRequest::user("m", content, 10)
    }

    #[test]
    fn replay_cycles_and_matches() {
        let backend = MockBackend::from_scripts([(
            "s",
            MockScript::new(vec![
                MockReply::text("first"),
                MockReply::text("special").when_contains("magic"),
                MockReply::text("second"),
            ]),
        )])
        .unwrap();
        let texts: Vec<String> = ["x", "magic word", "y", "z"]
            .iter()
            .map(|c| {
                backend.resolve("s", &req(c)).unwrap().chunks.iter().map(|c| c.0.clone()).collect()
            })
            .collect();
        assert_eq!(texts, ["first", "special", "second", "first"]);
        assert_eq!(backend.request_count(), 4);
    }

    #[test]
    fn capture_substitutes() {
        let backend = MockBackend::from_scripts([(
            "s",
            MockScript::new(vec![MockReply {
                text: Some("The answer is {capture}.".into()),
                ..MockReply::capture(r"\[answer:(\d+)\]")
            }]),
        )])
        .unwrap();
        let r = backend.resolve("s", &req("what? [answer:42]")).unwrap();
        let text: String = r.chunks.iter().map(|c| c.0.as_str()).collect();
        assert_eq!(text, "The answer is 42.");
        let r = backend.resolve("s", &req("no tag")).unwrap();
        let text: String = r.chunks.iter().map(|c| c.0.as_str()).collect();
        assert_eq!(text, "The answer is {capture}.");
    }

    #[test]
    fn generate_chunks() {
        let backend =
            MockBackend::from_scripts([("g", MockScript::new(vec![MockReply::generate(10, 4)]))]).unwrap();
        let r = backend.resolve("g", &req("x")).unwrap();
        let sizes: Vec<u64> = r.chunks.iter().map(|c| c.1).collect();
        assert_eq!(sizes, [4, 4, 2]);
    }

    #[test]
    fn invalid_scripts_rejected() {
        let both = MockReply {
            generate: Some(Generate { tokens: 1, word: "x".into() }),
            ..MockReply::text("x")
        };
        assert!(MockBackend::from_scripts([("a", MockScript::new(vec![both]))]).is_err());
        assert!(MockBackend::from_scripts([("a", MockScript::new(vec![]))]).is_err());
        assert!(MockBackend::from_scripts([("a", MockScript::new(vec![MockReply::capture("(")]))]).is_err());
        assert!(MockBackend::from_scripts([("a", MockScript::new(vec![MockReply::text("x").error_at(0)]))]).is_err());
        assert!(matches!(
            MockBackend::from_scripts([("a", MockScript::new(vec![MockReply::text("x")]))])
                .unwrap()
                .resolve("b", &req("x")),
            Err(ClientError::UnknownScript(_))
        ));
    }

    #[test]
    fn parses_file_format() {
        let json = r#"{"scripts": {"long": {"replies": [{"generate": {"tokens": 5}, "chunk_tokens": 2}]},
                       "flaky": {"replies": [{"text": "a b c", "error_at": 3, "delay_ms": 1}]}}}"#;
        let b = MockBackend::parse(json, false).unwrap();
        assert!(b.has_script("long") && b.has_script("flaky"));
        let toml = "[scripts.sel]\nreplies = [{ text = \"[LLM1]\" }]\n";
        assert!(MockBackend::parse(toml, true).unwrap().has_script("sel"));
    }

    #[tokio::test]
    async fn stream_stops_at_error() {
        let reply = ResolvedReply {
            chunks: vec![("a ".into(), 1), ("b ".into(), 1), ("c ".into(), 1), ("d".into(), 1)],
            delay: Duration::ZERO,
            error_at: Some(3),
            usage: true,
        };
        let items: Vec<_> = reply_stream(reply, 0).collect().await;
        assert_eq!(items.len(), 3);
        assert!(items[2].is_err());
    }
}
