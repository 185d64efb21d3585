//! Answer scoring and run aggregation.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::RunTrace;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset line {line}: {message}")]
    MalformedDataset { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace/example mismatch: {0}")]
    Alignment(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
}

/// Lowercase, drop punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let pred: Vec<&str> = pred.split_whitespace().collect();
    let gold: Vec<&str> = gold.split_whitespace().collect();
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-level F1 of `prediction` against any gold answer.
pub fn token_f1<S: AsRef<str>>(prediction: &str, gold_answers: &[S]) -> f64 {
    gold_answers.iter().map(|g| f1_single(prediction, g.as_ref())).fold(0.0, f64::max)
}

pub fn exact_match<S: AsRef<str>>(prediction: &str, gold_answers: &[S]) -> bool {
    let p = normalize_answer(prediction);
    gold_answers.iter().any(|g| normalize_answer(g.as_ref()) == p)
}

/// Reads `{"id", "question", "answers"}` lines in file order.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<QaExample>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EvalError::MalformedDataset { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QaExample = serde_json::from_str(&line)
            .map_err(|e| EvalError::MalformedDataset { line: line_no, message: e.to_string() })?;
        if ex.gold_answers.is_empty() {
            return Err(EvalError::MalformedDataset { line: line_no, message: "\"answers\" is empty".into() });
        }
        out.push(ex);
    }
    Ok(out)
}

/// Loads a dataset. With `limit`, returns the first `limit` examples after a
/// shuffle seeded by `seed`; without it, every example in file order.
pub fn load_dataset(path: &Path, limit: Option<usize>, seed: u64) -> Result<Vec<QaExample>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io { path: path.into(), source })?;
    let examples = read_dataset(std::io::BufReader::new(file))?;
    Ok(subsample(examples, limit, seed))
}

pub fn subsample(mut examples: Vec<QaExample>, limit: Option<usize>, seed: u64) -> Vec<QaExample> {
    if let Some(n) = limit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        examples.shuffle(&mut rng);
        examples.truncate(n);
    }
    examples
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub id: String,
    pub prediction: String,
    pub f1: f64,
    pub em: bool,
    pub searches: usize,
    pub steps: usize,
    pub failed: bool,
}

/// Aggregate metrics over one pass through a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub num_examples: usize,
    pub num_failed: usize,
    pub mean_search: f64,
    pub mean_steps: f64,
    /// Total searches over total steps.
    pub ret_ratio: f64,
    pub mean_f1: f64,
    pub mean_em: f64,
    /// Exact match.
    pub frac_correct: f64,
    /// F1 of zero.
    pub frac_incorrect: f64,
    /// Neither of the above.
    pub frac_partial: f64,
    pub per_example: Vec<ExampleResult>,
}

/// Scores traces against their examples, matched by id.
///
/// Search/step means cover every example. F1, EM and the
/// correct/partial/incorrect fractions exclude failed runs.
pub fn aggregate(traces: &[RunTrace], examples: &[QaExample]) -> Result<RunReport, EvalError> {
    if traces.len() != examples.len() {
        return Err(EvalError::Alignment(format!("{} traces for {} examples", traces.len(), examples.len())));
    }
    let by_id: HashMap<&str, &QaExample> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    if by_id.len() != examples.len() {
        return Err(EvalError::Alignment("duplicate example ids".into()));
    }

    let mut per_example = Vec::with_capacity(traces.len());
    for t in traces {
        let id = t.question_id.as_deref().ok_or_else(|| EvalError::Alignment("trace without question id".into()))?;
        let ex = by_id.get(id).ok_or_else(|| EvalError::Alignment(format!("no example with id {id:?}")))?;
        per_example.push(ExampleResult {
            id: id.to_string(),
            prediction: t.final_answer.clone(),
            f1: token_f1(&t.final_answer, &ex.gold_answers),
            em: exact_match(&t.final_answer, &ex.gold_answers),
            searches: t.num_searches,
            steps: t.num_steps,
            failed: t.failed(),
        });
    }
    let ids: std::collections::HashSet<&str> = per_example.iter().map(|r| r.id.as_str()).collect();
    if ids.len() != per_example.len() {
        return Err(EvalError::Alignment("more than one trace for the same id".into()));
    }
    Ok(summarize(per_example))
}

/// Builds the aggregate fields from per-example results.
pub fn summarize(per_example: Vec<ExampleResult>) -> RunReport {
    let n = per_example.len();
    let total_search: usize = per_example.iter().map(|r| r.searches).sum();
    let total_steps: usize = per_example.iter().map(|r| r.steps).sum();
    let scored: Vec<&ExampleResult> = per_example.iter().filter(|r| !r.failed).collect();
    let m = scored.len();
    let frac = |count: usize| if m == 0 { 0.0 } else { count as f64 / m as f64 };
    let mean = |total: f64, count: usize| if count == 0 { 0.0 } else { total / count as f64 };

    let correct = scored.iter().filter(|r| r.em).count();
    let incorrect = scored.iter().filter(|r| !r.em && r.f1 == 0.0).count();
    RunReport {
        num_examples: n,
        num_failed: n - m,
        mean_search: mean(total_search as f64, n),
        mean_steps: mean(total_steps as f64, n),
        ret_ratio: if total_steps == 0 { 0.0 } else { total_search as f64 / total_steps as f64 },
        mean_f1: mean(scored.iter().map(|r| r.f1).sum(), m),
        mean_em: frac(correct),
        frac_correct: frac(correct),
        frac_incorrect: frac(incorrect),
        frac_partial: frac(m - correct - incorrect),
        per_example,
    }
}
