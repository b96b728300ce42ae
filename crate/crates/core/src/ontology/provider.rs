use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{build_prompt, parse_reply, Ontology, OntologyError, Violation};
use crate::fsutil::atomic_write;

pub const API_KEY_ENV: &str = "ECHO_LLM_API_KEY";

/// A chat-completion backend: one user prompt in, the assistant text out.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, OntologyError>;
}

impl<F> ChatProvider for F
where
    F: Fn(&str) -> Result<String, OntologyError> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, OntologyError> {
        self(prompt)
    }
}

/// OpenAI-style `POST {url}` with `{"model", "messages"}`; reads
/// `choices[0].message.content`.
pub struct HttpChatProvider {
    url: String,
    model: String,
    api_key: String,
    timeout: Duration,
    log_dir: Option<PathBuf>,
    calls: AtomicUsize,
}

impl HttpChatProvider {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(120),
            log_dir: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(url: impl Into<String>, model: impl Into<String>) -> Result<Self, OntologyError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(OntologyError::MissingApiKey)?;
        Ok(Self::new(url, model, key))
    }

    /// Request and response bodies are written to `dir` as
    /// `llm-<call>-request.json` / `llm-<call>-response.json`.
    pub fn with_log_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.log_dir = Some(dir.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn log(&self, call: usize, kind: &str, body: &str) {
        if let Some(dir) = &self.log_dir {
            let path = dir.join(format!("llm-{call:03}-{kind}.json"));
            if let Err(e) = atomic_write(&path, body.as_bytes()) {
                log::warn!("cannot write {}: {e}", path.display());
            }
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, prompt: &str) -> Result<String, OntologyError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        self.log(call, "request", &serde_json::to_string_pretty(&body)?);
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let resp = agent
            .post(&self.url)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let text = match resp {
            Ok(r) => r.into_string()?,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                self.log(call, "response", &detail);
                return Err(OntologyError::ProviderUnreachable(format!("HTTP {code}: {detail}")));
            }
            Err(e) => return Err(OntologyError::ProviderUnreachable(e.to_string())),
        };
        self.log(call, "response", &text);
        let content = serde_json::from_str::<Value>(&text).ok().and_then(|v| {
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
        });
        // A body without the expected shape is handed to the parser as-is
        // so the retry loop can report it.
        Ok(content.unwrap_or(text))
    }
}

/// One provider round trip.
#[derive(Clone, Debug, PartialEq)]
pub struct ProviderReply {
    pub raw_text: String,
    pub parsed: Option<Ontology>,
    pub attempt: usize,
}

/// Prompt → provider → parse → validate, retried up to `max_retries`
/// attempts in total; each retry carries the previous violations.
pub fn generate_ontology(
    provider: &dyn ChatProvider,
    labels: &[String],
    p: usize,
    max_retries: usize,
) -> Result<Ontology, OntologyError> {
    generate_ontology_traced(provider, labels, p, max_retries).0
}

/// As [`generate_ontology`], also returning every reply received.
pub fn generate_ontology_traced(
    provider: &dyn ChatProvider,
    labels: &[String],
    p: usize,
    max_retries: usize,
) -> (Result<Ontology, OntologyError>, Vec<ProviderReply>) {
    let base = match build_prompt(labels, p) {
        Ok(b) => b,
        Err(e) => return (Err(e), Vec::new()),
    };
    let attempts = max_retries.max(1);
    let mut replies = Vec::new();
    let mut prompt = base.clone();
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        let raw = match provider.complete(&prompt.text) {
            Ok(r) => r,
            Err(e) => return (Err(e), replies),
        };
        match parse_reply(&raw, labels, p) {
            Ok(o) => {
                replies.push(ProviderReply {
                    raw_text: raw,
                    parsed: Some(o.clone()),
                    attempt,
                });
                return (Ok(o), replies);
            }
            Err(OntologyError::UnparseableReply { reason, violations }) => {
                log::warn!("ontology attempt {attempt}/{attempts} rejected: {reason}");
                replies.push(ProviderReply {
                    raw_text: raw,
                    parsed: None,
                    attempt,
                });
                prompt = base.with_feedback(&violations as &[Violation], &reason);
                last_error = reason;
            }
            Err(e) => return (Err(e), replies),
        }
    }
    (
        Err(OntologyError::OntologyGenerationFailed { attempts, last_error }),
        replies,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetKind;
    use std::sync::Mutex;

    #[test]
    fn garbage_exhausts_retries() {
        let calls = AtomicUsize::new(0);
        let provider = |_: &str| -> Result<String, OntologyError> {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok("I like turtles".into())
        };
        let labels = DatasetKind::Esc10.labels();
        let (res, replies) = generate_ontology_traced(&provider, &labels, 2, 3);
        assert!(matches!(res, Err(OntologyError::OntologyGenerationFailed { attempts: 3, .. })));
        assert_eq!(replies.len(), 3);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retry_prompt_carries_violations() {
        let prompts = Mutex::new(Vec::new());
        let provider = |prompt: &str| -> Result<String, OntologyError> {
            let mut seen = prompts.lock().unwrap();
            seen.push(prompt.to_string());
            Ok(if seen.len() == 1 {
                r#"{"A": ["dog"], "B": ["rooster"]}"#.into()
            } else {
                r#"{"A": ["dog","rooster","rain","sea_waves","crackling_fire"],
                    "B": ["crying_baby","sneezing","clock_tick","helicopter","chainsaw"]}"#
                    .into()
            })
        };
        let labels = DatasetKind::Esc10.labels();
        let o = generate_ontology(&provider, &labels, 2, 3).unwrap();
        assert_eq!(o.p, 2);
        let seen = prompts.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert!(seen[1].contains("`rain` is not assigned"));
    }

    #[test]
    fn provider_failure_is_not_retried() {
        let provider =
            |_: &str| -> Result<String, OntologyError> { Err(OntologyError::ProviderUnreachable("down".into())) };
        let labels = DatasetKind::Us8k.labels();
        assert!(matches!(
            generate_ontology(&provider, &labels, 3, 3),
            Err(OntologyError::ProviderUnreachable(_))
        ));
    }
}
