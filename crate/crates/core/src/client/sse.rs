//! Server-sent events decoding for OpenAI-style chat-completion streams.
//!
//! ```text
//! data: {"choices":[{"delta":{"content":"Hel"}}]}
//!
//! data: {"choices":[],"usage":{"prompt_tokens":9,"completion_tokens":12}}
//!
//! data: [DONE]
//! ```

use serde::Deserialize;

use super::{StreamChunk, Usage};

/// Incremental line splitter. Feed raw bytes, get back complete `data:`
/// payloads (multi-line data fields joined with `\n`).
#[derive(Debug, Default)]
pub struct SseDecoder {
    buf: Vec<u8>,
    data: Option<String>,
}

impl SseDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<String> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        while let Some(pos) = self.buf.iter().position(|b| *b == b'\n') {
            let raw: Vec<u8> = self.buf.drain(..=pos).collect();
            let line = String::from_utf8_lossy(&raw[..raw.len() - 1]);
            let line = line.strip_suffix('\r').unwrap_or(&line);
            self.line(line, &mut out);
        }
        out
    }

    /// Flushes a trailing event not terminated by a blank line.
    pub fn finish(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.buf.is_empty() {
            let rest = String::from_utf8_lossy(&std::mem::take(&mut self.buf)).into_owned();
            self.line(rest.trim_end_matches('\r'), &mut out);
        }
        if let Some(d) = self.data.take() {
            out.push(d);
        }
        out
    }

    fn line(&mut self, line: &str, out: &mut Vec<String>) {
        if line.is_empty() {
            if let Some(d) = self.data.take() {
                out.push(d);
            }
            return;
        }
        if let Some(rest) = line.strip_prefix("data:") {
            let rest = rest.strip_prefix(' ').unwrap_or(rest);
            match &mut self.data {
                Some(d) => {
                    d.push('\n');
                    d.push_str(rest);
                }
                None => self.data = Some(rest.to_string()),
            }
        }
        // `event:`, `id:`, `retry:` and `:` comments carry nothing we use.
    }
}

#[derive(Deserialize)]
struct ChunkBody {
    #[serde(default)]
    choices: Vec<ChunkChoice>,
    #[serde(default)]
    usage: Option<Usage>,
    #[serde(default)]
    error: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct ChunkChoice {
    #[serde(default)]
    delta: Option<Delta>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Delta {
    #[serde(default)]
    content: Option<String>,
}

/// What one `data:` payload means.
#[derive(Debug, PartialEq)]
pub enum Frame {
    Chunk(StreamChunk),
    Done,
}

pub fn parse_frame(payload: &str) -> Result<Frame, String> {
    let payload = payload.trim();
    if payload == "[DONE]" {
        return Ok(Frame::Done);
    }
    let body: ChunkBody =
        serde_json::from_str(payload).map_err(|e| format!("malformed stream frame: {e}"))?;
    if let Some(err) = body.error {
        return Err(format!("provider error: {err}"));
    }
    let mut chunk = StreamChunk::default();
    for choice in body.choices {
        if let Some(text) = choice.delta.and_then(|d| d.content) {
            chunk.text.push_str(&text);
        }
        if choice.finish_reason.is_some() {
            chunk.finish_reason = choice.finish_reason;
        }
    }
    chunk.usage = body.usage;
    Ok(Frame::Chunk(chunk))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_across_pushes() {
        let mut d = SseDecoder::new();
        assert!(d.push(b"data: {\"a\"").is_empty());
        assert_eq!(d.push(b":1}\n\ndata: [DONE]\n\n"), vec!["{\"a\":1}", "[DONE]"]);
    }

    #[test]
    fn crlf_and_comments() {
        let mut d = SseDecoder::new();
        let out = d.push(b": keep-alive\r\nevent: message\r\ndata: x\r\n\r\n");
        assert_eq!(out, vec!["x"]);
    }

    #[test]
    fn multiline_data_and_unterminated_tail() {
        let mut d = SseDecoder::new();
        assert!(d.push(b"data: a\ndata: b\n").is_empty());
        assert_eq!(d.finish(), vec!["a\nb"]);
        let mut d = SseDecoder::new();
        d.push(b"data: tail");
        assert_eq!(d.finish(), vec!["tail"]);
    }

    #[test]
    fn parses_delta_usage_and_done() {
        let f = parse_frame(r#"{"choices":[{"delta":{"content":"hi "}}]}"#).unwrap();
        assert_eq!(
            f,
            Frame::Chunk(StreamChunk {
                text: "hi ".into(),
                ..Default::default()
            })
        );
        let f = parse_frame(
            r#"{"choices":[{"delta":{},"finish_reason":"length"}],"usage":{"prompt_tokens":3,"completion_tokens":7}}"#,
        )
        .unwrap();
        let Frame::Chunk(c) = f else { panic!() };
        assert_eq!(c.finish_reason.as_deref(), Some("length"));
        assert_eq!(c.usage.unwrap().completion_tokens, 7);
        assert_eq!(parse_frame(" [DONE] ").unwrap(), Frame::Done);
    }

    #[test]
    fn rejects_garbage_and_errors() {
        assert!(parse_frame("not json").is_err());
        assert!(parse_frame(r#"{"error":{"message":"rate limited"}}"#)
            .unwrap_err()
            .contains("rate limited"));
    }
}
