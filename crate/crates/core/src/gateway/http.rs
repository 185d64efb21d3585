use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_count, strip_stop_sequences, Completion, FinishReason, GenerationError, GenerationRequest, Generator};
use crate::transport::{JsonClient, RetryPolicy, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpGeneratorConfig {
    /// Full URL of the text-completions endpoint, e.g. `http://host/v1/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

/// Client for an OpenAI-compatible `/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    client: JsonClient,
    model: String,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    n: usize,
    max_tokens: usize,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

impl HttpGenerator {
    pub fn new(config: &HttpGeneratorConfig, api_key: Option<String>) -> Self {
        Self::with_retry(config, api_key, RetryPolicy::default())
    }

    pub fn with_retry(config: &HttpGeneratorConfig, api_key: Option<String>, retry: RetryPolicy) -> Self {
        HttpGenerator {
            client: JsonClient::new(&config.endpoint, api_key, retry, Duration::from_secs(config.timeout_secs)),
            model: config.model.clone(),
        }
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, GenerationError> {
        request.validate()?;
        let body = CompletionBody {
            model: &self.model,
            prompt: &request.prompt,
            temperature: request.temperature,
            n: request.num_samples,
            max_tokens: request.max_tokens,
            stop: &request.stop,
        };
        let resp: CompletionResponse = self.client.post(&body).map_err(|e| match e {
            TransportError::Protocol(msg) => GenerationError::Protocol(msg),
            other => GenerationError::Unavailable(other.to_string()),
        })?;
        check_count(request, resp.choices.len())?;
        Ok(resp
            .choices
            .into_iter()
            .map(|c| Completion {
                text: strip_stop_sequences(&c.text, &request.stop).to_string(),
                finish_reason: match c.finish_reason.as_deref() {
                    None | Some("stop") => FinishReason::Stop,
                    Some("length") => FinishReason::Length,
                    Some(_) => FinishReason::Error,
                },
            })
            .collect())
    }
}
