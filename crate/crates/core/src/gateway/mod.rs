//! Text generation behind one trait, with a remote completion client and a
//! scripted test double.

mod http;
mod scripted;
mod template;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpGenerator, HttpGeneratorConfig};
pub use scripted::{ScriptEntry, ScriptFile, ScriptedGenerator};
pub use template::PromptTemplate;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("generator unavailable: {0}")]
    Unavailable(String),
    #[error("generator protocol error: {0}")]
    Protocol(String),
    #[error("script has no entry for {0}")]
    ScriptExhausted(RequestKey),
    #[error("script file line {line}: {message}")]
    MalformedScript { line: usize, message: String },
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("prompt template: {0}")]
    Template(String),
}

/// Why a request is being made. Scripted backends key their answers on it;
/// remote backends ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Temporary sentence, temperature 0, no retrieval.
    Greedy,
    /// Stochastic samples for uncertainty scoring.
    Sample,
    /// Retrieval subquery.
    Subquery,
    /// Regeneration with retrieved documents in the prompt.
    WithDocs,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Greedy => "greedy",
            Mode::Sample => "sample",
            Mode::Subquery => "subquery",
            Mode::WithDocs => "with_docs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestKey {
    /// Dataset example the request belongs to, when known.
    pub question_id: Option<String>,
    pub step: usize,
    pub mode: Mode,
}

impl RequestKey {
    pub fn new(step: usize, mode: Mode) -> Self {
        RequestKey { question_id: None, step, mode }
    }
}

impl fmt::Display for RequestKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.question_id {
            Some(q) => write!(f, "(question={q:?}, step={}, mode={})", self.step, self.mode),
            None => write!(f, "(step={}, mode={})", self.step, self.mode),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub num_samples: usize,
    pub max_tokens: usize,
    pub stop: Vec<String>,
    pub key: RequestKey,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.num_samples == 0 {
            return Err(GenerationError::InvalidRequest("num_samples must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GenerationError::InvalidRequest(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GenerationError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// A text generator. Implementations return exactly `num_samples`
/// completions or an error.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, GenerationError>;
}

impl<T: Generator + ?Sized> Generator for &T {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, GenerationError> {
        (**self).generate(request)
    }
}

impl<T: Generator + ?Sized> Generator for Box<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, GenerationError> {
        (**self).generate(request)
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn strip_stop_sequences<'a>(text: &'a str, stop: &[String]) -> &'a str {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

pub(crate) fn check_count(request: &GenerationRequest, got: usize) -> Result<(), GenerationError> {
    if got != request.num_samples {
        return Err(GenerationError::Protocol(format!(
            "requested {} completions, backend returned {got}",
            request.num_samples
        )));
    }
    Ok(())
}
