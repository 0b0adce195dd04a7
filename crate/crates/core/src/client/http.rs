//! Wire calls to `POST {endpoint}/chat/completions`.

use futures::stream::{self, StreamExt};
use serde::Deserialize;
use serde_json::json;

use super::sse::{parse_frame, Frame, SseDecoder};
use super::{ChatRequest, ChunkStream, Usage};
use crate::types::ModelSpec;

pub(crate) fn completions_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

fn body(spec: &ModelSpec, request: &ChatRequest) -> serde_json::Value {
    let mut body = json!({
        "model": spec.wire_model(),
        "messages": request.messages,
        "max_tokens": request.max_tokens,
        "stream": request.stream,
    });
    if request.stream {
        body["stream_options"] = json!({ "include_usage": true });
    }
    if let Some(t) = request.temperature {
        body["temperature"] = json!(t);
    }
    body
}

async fn send(
    http: &reqwest::Client,
    spec: &ModelSpec,
    request: &ChatRequest,
) -> Result<reqwest::Response, String> {
    let mut builder = http.post(completions_url(&spec.endpoint)).json(&body(spec, request));
    if let Some(var) = &spec.api_key_env {
        let key = std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?;
        builder = builder.bearer_auth(key);
    }
    let response = builder.send().await.map_err(|e| format!("request failed: {e}"))?;
    let status = response.status();
    if !status.is_success() {
        let text = response.text().await.unwrap_or_default();
        let snippet: String = text.chars().take(300).collect();
        return Err(format!("HTTP {status}: {snippet}"));
    }
    Ok(response)
}

pub(crate) async fn open_stream(
    http: &reqwest::Client,
    spec: &ModelSpec,
    request: &ChatRequest,
) -> Result<ChunkStream, String> {
    let response = send(http, spec, request).await?;
    let bytes = response.bytes_stream();

    struct State<S> {
        bytes: S,
        decoder: SseDecoder,
        pending: std::collections::VecDeque<String>,
        eof: bool,
        done: bool,
    }

    let state = State {
        bytes: Box::pin(bytes),
        decoder: SseDecoder::new(),
        pending: Default::default(),
        eof: false,
        done: false,
    };

    let stream = stream::unfold(state, |mut st| async move {
        loop {
            if st.done {
                return None;
            }
            if let Some(payload) = st.pending.pop_front() {
                match parse_frame(&payload) {
                    Ok(Frame::Done) => return None,
                    Ok(Frame::Chunk(c)) => return Some((Ok(c), st)),
                    Err(e) => {
                        st.done = true;
                        return Some((Err(e), st));
                    }
                }
            }
            if st.eof {
                // Connection closed without [DONE]: treat as end of stream.
                return None;
            }
            match st.bytes.next().await {
                Some(Ok(b)) => {
                    let frames = st.decoder.push(&b);
                    st.pending.extend(frames);
                }
                Some(Err(e)) => {
                    st.done = true;
                    return Some((Err(format!("stream read error: {e}")), st));
                }
                None => {
                    st.eof = true;
                    let rest = st.decoder.finish();
                    st.pending.extend(rest);
                }
            }
        }
    });
    Ok(stream.boxed())
}

#[derive(Deserialize)]
struct CompletionBody {
    #[serde(default)]
    choices: Vec<CompletionChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct CompletionMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Non-streamed completion: (text, finish_reason, usage).
pub(crate) async fn complete(
    http: &reqwest::Client,
    spec: &ModelSpec,
    request: &ChatRequest,
) -> Result<(String, Option<String>, Option<Usage>), String> {
    let response = send(http, spec, request).await?;
    let body: CompletionBody = response
        .json()
        .await
        .map_err(|e| format!("malformed completion body: {e}"))?;
    let choice = body
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| "completion has no choices".to_string())?;
    Ok((
        choice.message.content.unwrap_or_default(),
        choice.finish_reason,
        body.usage,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_joining() {
        assert_eq!(
            completions_url("https://api.example.com/v1/"),
            "https://api.example.com/v1/chat/completions"
        );
        assert_eq!(
            completions_url("http://h:1/v1/chat/completions"),
            "http://h:1/v1/chat/completions"
        );
    }

    #[test]
    fn request_body_shape() {
        let spec = ModelSpec::new("m", "http://x", rust_decimal::Decimal::ONE);
        let req = ChatRequest::user("m", "hi", 200).with_temperature(Some(0.0));
        let b = body(&spec, &req);
        assert_eq!(b["model"], "m");
        assert_eq!(b["stream"], true);
        assert_eq!(b["max_tokens"], 200);
        assert_eq!(b["messages"][0]["role"], "user");
        assert_eq!(b["stream_options"]["include_usage"], true);
        assert_eq!(b["temperature"], 0.0);
    }
}
