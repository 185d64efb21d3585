use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{jaccard, SimilarityError};
use crate::text::words;
use crate::transport::{JsonClient, RetryPolicy, TransportError};

const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Class probabilities for an ordered (premise, hypothesis) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict {
    pub entail: f64,
    pub neutral: f64,
    pub contradict: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NliClass {
    Entail,
    Neutral,
    Contradict,
}

impl NliVerdict {
    /// Checks every probability is in `[0, 1]` and the three sum to 1 ± 1e-6.
    pub fn new(entail: f64, neutral: f64, contradict: f64) -> Result<Self, SimilarityError> {
        let v = NliVerdict { entail, neutral, contradict };
        v.validate()?;
        Ok(v)
    }

    fn validate(&self) -> Result<(), SimilarityError> {
        for (name, p) in [("entail", self.entail), ("neutral", self.neutral), ("contradict", self.contradict)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimilarityError::InvalidVerdict(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        let sum = self.entail + self.neutral + self.contradict;
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(SimilarityError::InvalidVerdict(format!("probabilities sum to {sum}")));
        }
        Ok(())
    }

    /// Most probable class; ties go to entail, then neutral.
    pub fn argmax(&self) -> NliClass {
        if self.entail >= self.neutral && self.entail >= self.contradict {
            NliClass::Entail
        } else if self.neutral >= self.contradict {
            NliClass::Neutral
        } else {
            NliClass::Contradict
        }
    }
}

/// Natural-language-inference classifier over ordered sentence pairs.
pub trait NliProvider: Send + Sync {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, SimilarityError>;
}

impl<T: NliProvider + ?Sized> NliProvider for &T {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, SimilarityError> {
        (**self).classify(premise, hypothesis)
    }
}

impl<T: NliProvider + ?Sized> NliProvider for Box<T> {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, SimilarityError> {
        (**self).classify(premise, hypothesis)
    }
}

/// Deterministic word-overlap stand-in for an NLI model.
///
/// Same word sequence after normalization: entailment `(1, 0, 0)`. Jaccard of
/// at least 0.5: `(0.7, 0.3, 0)`. Anything else: `(0, 0.3, 0.7)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalNli;

impl NliProvider for LexicalNli {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, SimilarityError> {
        let v = if words(premise) == words(hypothesis) {
            NliVerdict { entail: 1.0, neutral: 0.0, contradict: 0.0 }
        } else if jaccard(premise, hypothesis) >= 0.5 {
            NliVerdict { entail: 0.7, neutral: 0.3, contradict: 0.0 }
        } else {
            NliVerdict { entail: 0.0, neutral: 0.3, contradict: 0.7 }
        };
        Ok(v)
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

/// Client for a remote NLI scoring service.
///
/// Request: `{"premise": ..., "hypothesis": ...}`. Response:
/// `{"entail": p, "neutral": p, "contradict": p}`.
#[derive(Debug, Clone)]
pub struct HttpNli {
    client: JsonClient,
}

impl HttpNli {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        Self::with_retry(url, api_key, RetryPolicy::default())
    }

    pub fn with_retry(url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        HttpNli { client: JsonClient::new(url, api_key, retry, Duration::from_secs(60)) }
    }
}

impl NliProvider for HttpNli {
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, SimilarityError> {
        let verdict: NliVerdict = self.client.post(&NliRequest { premise, hypothesis }).map_err(|e| match e {
            TransportError::Protocol(msg) => SimilarityError::InvalidVerdict(msg),
            other => SimilarityError::Unavailable(other.to_string()),
        })?;
        verdict.validate()?;
        Ok(verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_validation() {
        assert!(NliVerdict::new(0.5, 0.25, 0.25).is_ok());
        assert!(NliVerdict::new(0.5, 0.5, 0.5).is_err());
        assert!(NliVerdict::new(-0.1, 0.6, 0.5).is_err());
        assert!(NliVerdict::new(1.0, 0.0, 1e-7).is_ok());
    }

    #[test]
    fn argmax_classes() {
        assert_eq!(NliVerdict::new(0.7, 0.3, 0.0).unwrap().argmax(), NliClass::Entail);
        assert_eq!(NliVerdict::new(0.0, 0.3, 0.7).unwrap().argmax(), NliClass::Contradict);
        assert_eq!(NliVerdict::new(0.2, 0.6, 0.2).unwrap().argmax(), NliClass::Neutral);
    }

    #[test]
    fn lexical_stub_tiers() {
        let nli = LexicalNli;
        assert_eq!(nli.classify("The cat.", "the CAT").unwrap().entail, 1.0);
        assert_eq!(nli.classify("the cat sat", "the cat ran").unwrap().entail, 0.7);
        assert_eq!(nli.classify("A", "B").unwrap().contradict, 0.7);
    }
}
