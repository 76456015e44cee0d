//! Chat-completion retrieval and the instruction dataset.

use std::io::Write;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::tags::{parse_annotated_text, render_annotated, Annotation, Source, Tag};
use super::transcript::TimedTranscript;
use super::{filter_valid, RetrievalResult};
use crate::index::SemanticIndex;
use crate::net::{bearer_from_env, content_hash, post_with_retries, JsonRequest, JsonTransport, ResponseCache, RetryPolicy};
use crate::{Error, Result};

pub const DEFAULT_INSTRUCTION: &str = "Read the transcript and decide where a speaker would make \
one of the gestures listed below. Copy the transcript word for word and insert each chosen gesture \
directly after the word it accompanies, written as [<identifier> <LABEL>] with the identifier and \
label exactly as listed.\n\nGestures:\n{gestures}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub auth_env: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Parallel requests when annotating several transcripts.
    pub max_concurrency: usize,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        LlmClientConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            auth_env: "SEMGEST_API_KEY".into(),
            temperature: 0.0,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 500,
            max_concurrency: 4,
        }
    }
}

pub struct ChatClient {
    pub config: LlmClientConfig,
    transport: Arc<dyn JsonTransport>,
    cache: ResponseCache,
}

impl ChatClient {
    pub fn new(config: LlmClientConfig, transport: Arc<dyn JsonTransport>, cache: ResponseCache) -> Result<Self> {
        if config.timeout_secs <= 0.0 {
            return Err(Error::Config("client timeout must be positive".into()));
        }
        Ok(ChatClient {
            config,
            transport,
            cache,
        })
    }

    /// Reply text and retries spent. Cached replies cost no retries.
    pub fn complete(&self, system: &str, user: &str) -> Result<(String, u32)> {
        self.complete_salted(system, user, "")
    }

    /// Like `complete`, with `salt` added to the cache key so repeated
    /// identical requests can each reach the service.
    pub fn complete_salted(&self, system: &str, user: &str, salt: &str) -> Result<(String, u32)> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let key = content_hash(&["chat", &self.config.endpoint, &body.to_string(), salt]);
        let (resp, retries) = match self.cache.get(&key)? {
            Some(v) => (v, 0),
            None => {
                let req = JsonRequest {
                    url: self.config.endpoint.clone(),
                    headers: bearer_from_env(&self.config.auth_env).into_iter().collect(),
                    body,
                    timeout: Duration::from_secs_f64(self.config.timeout_secs),
                };
                let policy = RetryPolicy {
                    max_retries: self.config.max_retries,
                    backoff_ms: self.config.backoff_ms,
                };
                let (v, r) = post_with_retries(self.transport.as_ref(), &req, &policy)?;
                if reply_text(&v).is_some() {
                    self.cache.put(&key, &v)?;
                }
                (v, r)
            }
        };
        let text = reply_text(&resp).ok_or_else(|| Error::Format {
            msg: "chat response lacks choices[0].message.content".into(),
            raw: resp.to_string(),
        })?;
        Ok((text, retries))
    }
}

fn reply_text(v: &Value) -> Option<String> {
    v["choices"][0]["message"]["content"].as_str().map(str::to_string)
}

pub fn render_instruction(template: &str, index: &SemanticIndex) -> String {
    template.replace("{gestures}", &index.catalog().join("\n"))
}

/// Annotate one transcript through the chat service. Tags naming gestures
/// that do not exist are dropped and listed in the report.
pub fn retrieve_llm(
    transcript: &TimedTranscript,
    index: &SemanticIndex,
    client: &ChatClient,
    template: &str,
) -> Result<RetrievalResult> {
    transcript.validate()?;
    let (reply, retries) = client.complete(&render_instruction(template, index), &transcript.text())?;
    let tags = parse_annotated_text(&reply).map_err(|e| Error::Format {
        msg: e.to_string(),
        raw: reply.clone(),
    })?;
    let annotations = tags
        .into_iter()
        .map(|t| Annotation {
            word: t.position,
            identifier: t.identifier,
            label: t.label,
            source: Source::Llm,
        })
        .collect();
    filter_valid(transcript, annotations, index, retries)
}

/// Annotate several transcripts with at most `max_concurrency` requests in flight.
pub fn retrieve_llm_many(
    transcripts: &[TimedTranscript],
    index: &SemanticIndex,
    client: &ChatClient,
    template: &str,
) -> Vec<Result<RetrievalResult>> {
    let limit = client.config.max_concurrency.max(1);
    let mut out = Vec::with_capacity(transcripts.len());
    for chunk in transcripts.chunks(limit) {
        let results: Vec<Result<RetrievalResult>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|t| s.spawn(move || retrieve_llm(t, index, client, template)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invalid("worker panicked".into()))))
                .collect()
        });
        out.extend(results);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

/// One record per transcript: the gesture list, the raw text, and the text
/// with gold tags inline.
pub fn build_instruction_dataset(
    items: &[(TimedTranscript, Vec<Annotation>)],
    index: &SemanticIndex,
    template: &str,
) -> Result<Vec<InstructionRecord>> {
    let instruction = render_instruction(template, index);
    let mut out = Vec::with_capacity(items.len());
    for (t, gold) in items {
        let words = t.word_texts();
        if let Some(a) = gold.iter().find(|a| a.word >= words.len().max(1)) {
            return Err(Error::OutOfRange(format!(
                "gold annotation at word {} of {}",
                a.word,
                words.len()
            )));
        }
        if let Some(w) = words.iter().find(|w| w.contains(['[', ']']) || w.trim().is_empty()) {
            return Err(Error::Config(format!("transcript word {w:?} cannot be tagged inline")));
        }
        let mut tags: Vec<(usize, Tag)> = gold
            .iter()
            .enumerate()
            .map(|(i, a)| {
                (
                    i,
                    Tag {
                        position: a.word,
                        identifier: a.identifier.clone(),
                        label: a.label.clone(),
                    },
                )
            })
            .collect();
        tags.sort_by_key(|(i, t)| (t.position, *i));
        let tags: Vec<Tag> = tags.into_iter().map(|(_, t)| t).collect();
        out.push(InstructionRecord {
            instruction: instruction.clone(),
            input: t.text(),
            output: render_annotated(&words, &tags),
        });
    }
    Ok(out)
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, rows: &[T]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::library;
    use super::*;
    use crate::net::testing::Scripted;
    use crate::net::TransportFailure;
    use crate::retrieval::{Hallucination, TimedWord};

    fn transcript() -> TimedTranscript {
        TimedTranscript {
            words: ["prices", "went", "up", "fast"]
                .iter()
                .enumerate()
                .map(|(i, w)| TimedWord {
                    w: w.to_string(),
                    start: i as f64,
                    end: i as f64 + 0.5,
                })
                .collect(),
            sentences: vec![0],
        }
    }

    fn client(replies: Vec<std::result::Result<Value, TransportFailure>>) -> ChatClient {
        ChatClient::new(
            LlmClientConfig {
                endpoint: "http://localhost/chat".into(),
                backoff_ms: 0,
                auth_env: "SEMGEST_TEST_UNSET_TOKEN".into(),
                ..LlmClientConfig::default()
            },
            Arc::new(Scripted::new(replies)),
            ResponseCache::in_memory(),
        )
        .unwrap()
    }

    fn reply(text: &str) -> Value {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
    }

    #[test]
    fn valid_tag_from_mock() {
        let idx = library();
        let raise = idx.lookup("ARMS RAISE").unwrap().identifier.clone();
        let c = client(vec![Ok(reply(&format!("prices went up [{raise} ARMS RAISE] fast")))]);
        let r = retrieve_llm(&transcript(), &idx, &c, DEFAULT_INSTRUCTION).unwrap();
        assert_eq!(r.annotations.len(), 1);
        assert_eq!(r.annotations[0].word, 2);
        assert!((r.midpoints[0] - 2.25).abs() < 1e-12);
    }

    #[test]
    fn invented_gesture_dropped() {
        let idx = library();
        let c = client(vec![Ok(reply("prices went up [999 JAZZ HANDS] fast"))]);
        let r = retrieve_llm(&transcript(), &idx, &c, DEFAULT_INSTRUCTION).unwrap();
        assert!(r.annotations.is_empty());
        assert_eq!(r.report.invalid, vec![(0, Hallucination::UnknownIdentifier)]);
    }

    #[test]
    fn server_error_then_success() {
        let idx = library();
        let c = client(vec![
            Err(TransportFailure::Retryable("HTTP 500".into())),
            Ok(reply("prices went up fast")),
        ]);
        let r = retrieve_llm(&transcript(), &idx, &c, DEFAULT_INSTRUCTION).unwrap();
        assert_eq!(r.retries, 1);
    }

    #[test]
    fn unparseable_reply_carries_raw_text() {
        let idx = library();
        let c = client(vec![Ok(reply("prices [went up"))]);
        match retrieve_llm(&transcript(), &idx, &c, DEFAULT_INSTRUCTION) {
            Err(Error::Format { raw, .. }) => assert_eq!(raw, "prices [went up"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prompt_lists_every_gesture() {
        let idx = library();
        let text = render_instruction(DEFAULT_INSTRUCTION, &idx);
        for r in &idx.records {
            assert!(text.contains(&format!("{} {}", r.identifier, r.label)));
        }
    }

    #[test]
    fn dataset_without_annotations_echoes_input() {
        let idx = library();
        let recs = build_instruction_dataset(&[(transcript(), vec![])], &idx, DEFAULT_INSTRUCTION).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].output, recs[0].input);
    }
}
