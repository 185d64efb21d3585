//! Pairwise similarity between sampled responses.
//!
//! Every estimator starts from the same object: an `n × n` symmetric matrix
//! with a unit diagonal whose entries say how alike two responses are. Two
//! kernels fill it. [`jaccard`] compares word sets and needs nothing else;
//! [`nli_similarity`] asks an [`NliProvider`] whether one response entails
//! (or contradicts) the other, in both directions, and averages.

mod nli;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::text::words;

pub use nli::{HttpNli, LexicalNli, NliClass, NliProvider, NliVerdict};

/// Slack allowed when validating kernel outputs and matrix entries.
const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("a response set needs at least 2 responses, got {0}")]
    TooFewResponses(usize),
    #[error("similarity unavailable: {0}")]
    Unavailable(String),
    #[error("invalid NLI verdict: {0}")]
    InvalidVerdict(String),
    #[error("kernel returned {value} for pair ({i}, {j}); expected a value in [0, 1]")]
    OutOfRange { i: usize, j: usize, value: f64 },
    #[error("invalid similarity matrix: {0}")]
    InvalidMatrix(String),
}

/// Ordered sample of `n ≥ 2` generated responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ResponseSet(Vec<String>);

impl ResponseSet {
    pub fn new(responses: Vec<String>) -> Result<Self, SimilarityError> {
        if responses.len() < 2 {
            return Err(SimilarityError::TooFewResponses(responses.len()));
        }
        Ok(ResponseSet(responses))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl TryFrom<Vec<String>> for ResponseSet {
    type Error = SimilarityError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        ResponseSet::new(v)
    }
}

impl From<ResponseSet> for Vec<String> {
    fn from(r: ResponseSet) -> Self {
        r.0
    }
}

/// Symmetric similarity matrix with unit diagonal and entries in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct SimilarityMatrix(Matrix);

impl SimilarityMatrix {
    /// Validates `m` against the similarity-matrix invariants.
    pub fn new(m: Matrix) -> Result<Self, SimilarityError> {
        let n = m.dim();
        if n == 0 {
            return Err(SimilarityError::InvalidMatrix("empty matrix".into()));
        }
        for i in 0..n {
            if m[(i, i)] != 1.0 {
                return Err(SimilarityError::InvalidMatrix(format!("diagonal entry {i} is {}", m[(i, i)])));
            }
            for j in 0..n {
                let v = m[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(SimilarityError::InvalidMatrix(format!("entry [{i}][{j}] = {v} outside [0, 1]")));
                }
                if v != m[(j, i)] {
                    return Err(SimilarityError::InvalidMatrix(format!("entry [{i}][{j}] differs from [{j}][{i}]")));
                }
            }
        }
        Ok(SimilarityMatrix(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, SimilarityError> {
        Self::new(Matrix::from_rows(rows))
    }

    /// The all-ones matrix: every response identical.
    pub fn all_ones(n: usize) -> Self {
        SimilarityMatrix(Matrix::filled(n, 1.0))
    }

    /// The identity: every response unrelated to every other.
    pub fn identity(n: usize) -> Self {
        SimilarityMatrix(Matrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Relabels responses: `out[i][j] = self[p[i]][p[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> SimilarityMatrix {
        SimilarityMatrix(self.0.permuted(perm))
    }
}

impl fmt::Debug for SimilarityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Which NLI probability a similarity is read from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliMode {
    /// Mean entailment probability over both directions.
    #[default]
    Entail,
    /// One minus the mean contradiction probability.
    Contra,
}

/// Jaccard index of the lowercase alphanumeric word sets of `a` and `b`.
///
/// Two strings with no words at all are treated as identical (1.0).
pub fn jaccard(a: &str, b: &str) -> f64 {
    let wa: HashSet<String> = words(a).into_iter().collect();
    let wb: HashSet<String> = words(b).into_iter().collect();
    if wa.is_empty() && wb.is_empty() {
        return 1.0;
    }
    let inter = wa.intersection(&wb).count();
    let union = wa.len() + wb.len() - inter;
    inter as f64 / union as f64
}

/// NLI-based similarity of `a` and `b`, symmetric in its arguments.
///
/// `Entail` gives `½(p_e(a→b) + p_e(b→a))`; `Contra` gives
/// `1 − ½(p_c(a→b) + p_c(b→a))`.
pub fn nli_similarity<P: NliProvider + ?Sized>(
    a: &str,
    b: &str,
    provider: &P,
    mode: NliMode,
) -> Result<f64, SimilarityError> {
    let forward = provider.classify(a, b)?;
    let backward = provider.classify(b, a)?;
    Ok(match mode {
        NliMode::Entail => 0.5 * (forward.entail + backward.entail),
        NliMode::Contra => 1.0 - 0.5 * (forward.contradict + backward.contradict),
    })
}

/// Builds the similarity matrix of `responses` under a possibly directional
/// `kernel`. Off-diagonal entries average `kernel(i, j)` and `kernel(j, i)`;
/// the diagonal is fixed at 1.
pub fn build_matrix<F>(responses: &ResponseSet, mut kernel: F) -> Result<SimilarityMatrix, SimilarityError>
where
    F: FnMut(&str, &str) -> Result<f64, SimilarityError>,
{
    let items = responses.as_slice();
    let n = items.len();
    let mut m = Matrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let forward = checked(kernel(&items[i], &items[j])?, i, j)?;
            let backward = checked(kernel(&items[j], &items[i])?, j, i)?;
            let v = 0.5 * (forward + backward);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(SimilarityMatrix(m))
}

fn checked(value: f64, i: usize, j: usize) -> Result<f64, SimilarityError> {
    if !value.is_finite() || !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&value) {
        return Err(SimilarityError::OutOfRange { i, j, value });
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Jaccard similarity matrix.
pub fn jaccard_matrix(responses: &ResponseSet) -> SimilarityMatrix {
    build_matrix(responses, |a, b| Ok(jaccard(a, b))).expect("jaccard is infallible and bounded")
}

/// NLI similarity matrix. Each unordered pair costs two provider calls.
pub fn nli_matrix<P: NliProvider + ?Sized>(
    responses: &ResponseSet,
    provider: &P,
    mode: NliMode,
) -> Result<SimilarityMatrix, SimilarityError> {
    // nli_similarity is already symmetric, so reuse it for the (j, i) call
    // through a tiny cache instead of asking the provider twice.
    let mut cache: std::collections::HashMap<(String, String), f64> = Default::default();
    build_matrix(responses, |a, b| {
        let key = if a <= b { (a.to_owned(), b.to_owned()) } else { (b.to_owned(), a.to_owned()) };
        if let Some(v) = cache.get(&key) {
            return Ok(*v);
        }
        let v = nli_similarity(a, b, provider, mode)?;
        cache.insert(key, v);
        Ok(v)
    })
}
