//! Black-box, sequence-level uncertainty over a set of sampled responses.
//!
//! All five measures look only at the sampled text:
//!
//! | estimator | similarity | value |
//! |---|---|---|
//! | `SemanticSets` | NLI argmax, both directions | number of entailment clusters, in `[1, n]` |
//! | `EigVLaplacian` | NLI (or Jaccard) | `Σ_k max(0, 1 − λ_k)` over the normalized Laplacian spectrum, in `[1, n]` |
//! | `DegMatJaccard` | Jaccard | `1 − Σ_ij W_ij / n²`, in `[0, 1 − 1/n]` |
//! | `DegMatNli` | NLI | same degree formula |
//! | `Eccentricity` | NLI (or Jaccard) | spread of the spectral embedding, `≥ 0` |
//!
//! Higher always means less certain.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{symmetric_eigen, LinalgError, Matrix};
use crate::similarity::{
    jaccard_matrix, nli_matrix, NliClass, NliMode, NliProvider, ResponseSet, SimilarityError, SimilarityMatrix,
};
use crate::union_find::UnionFind;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimator {0} needs an NLI provider but none is configured")]
    MissingProvider(Estimator),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    SemanticSets,
    EigVLaplacian,
    DegMatJaccard,
    DegMatNli,
    Eccentricity,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::SemanticSets,
        Estimator::EigVLaplacian,
        Estimator::DegMatJaccard,
        Estimator::DegMatNli,
        Estimator::Eccentricity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::SemanticSets => "semantic_sets",
            Estimator::EigVLaplacian => "eig_v_laplacian",
            Estimator::DegMatJaccard => "deg_mat_jaccard",
            Estimator::DegMatNli => "deg_mat_nli",
            Estimator::Eccentricity => "eccentricity",
        }
    }

    /// Whether scoring needs an NLI provider under `config`.
    pub fn needs_nli(self, config: &EstimatorConfig) -> bool {
        match self {
            Estimator::SemanticSets | Estimator::DegMatNli => true,
            Estimator::EigVLaplacian | Estimator::Eccentricity => config.spectral_similarity == SpectralSimilarity::Nli,
            Estimator::DegMatJaccard => false,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        Ok(match key.as_str() {
            "semanticsets" => Estimator::SemanticSets,
            "eigvlaplacian" | "eigv" => Estimator::EigVLaplacian,
            "degmatjaccard" => Estimator::DegMatJaccard,
            "degmatnli" => Estimator::DegMatNli,
            "eccentricity" | "ecc" => Estimator::Eccentricity,
            _ => return Err(format!("unknown estimator {s:?}")),
        })
    }
}

/// Similarity used by the spectral estimators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralSimilarity {
    #[default]
    Nli,
    Jaccard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Laplacian eigenvectors with eigenvalue below this feed the
    /// eccentricity embedding. Must lie in `(0, 2)`.
    pub ecc_eigen_threshold: f64,
    pub nli_mode: NliMode,
    pub spectral_similarity: SpectralSimilarity,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            ecc_eigen_threshold: 0.9,
            nli_mode: NliMode::Entail,
            spectral_similarity: SpectralSimilarity::Nli,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let t = self.ecc_eigen_threshold;
        if !(t > 0.0 && t < 2.0) {
            return Err(EstimatorError::InvalidConfig(format!("ecc_eigen_threshold {t} must lie in (0, 2)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub estimator: Estimator,
    pub value: f64,
}

/// Symmetric normalized Laplacian `I − D^{-1/2} W D^{-1/2}`.
pub fn laplacian(w: &SimilarityMatrix) -> Matrix {
    let n = w.dim();
    let inv_sqrt: Vec<f64> = w.matrix().row_sums().iter().map(|d| 1.0 / d.sqrt()).collect();
    Matrix::from_fn(n, |i, j| {
        let identity = if i == j { 1.0 } else { 0.0 };
        identity - w.get(i, j) * (inv_sqrt[i] * inv_sqrt[j])
    })
}

/// `Σ_k max(0, 1 − λ_k)` over the Laplacian spectrum.
pub fn eigv_laplacian(w: &SimilarityMatrix) -> Result<UncertaintyScore, EstimatorError> {
    let es = symmetric_eigen(&laplacian(w))?;
    let value = es.eigenvalues.iter().map(|l| (1.0 - l).max(0.0)).sum();
    Ok(UncertaintyScore { estimator: Estimator::EigVLaplacian, value })
}

/// `trace(nI − D) / n²`, i.e. `1 − Σ_ij W_ij / n²`.
pub fn degree_uncertainty(w: &SimilarityMatrix, estimator: Estimator) -> UncertaintyScore {
    let n = w.dim() as f64;
    let degrees = w.matrix().row_sums();
    let trace: f64 = degrees.iter().map(|d| n - d).sum();
    UncertaintyScore { estimator, value: (trace / (n * n)).max(0.0) }
}

/// Spread of responses in the spectral embedding.
///
/// Each response is embedded as its row across the Laplacian eigenvectors
/// whose eigenvalue is below `config.ecc_eigen_threshold`; the score is the
/// Frobenius norm of the centered embedding.
pub fn eccentricity(w: &SimilarityMatrix, config: &EstimatorConfig) -> Result<UncertaintyScore, EstimatorError> {
    config.validate()?;
    let es = symmetric_eigen(&laplacian(w))?;
    let n = w.dim();
    let kept: Vec<usize> = (0..n).filter(|&k| es.eigenvalues[k] < config.ecc_eigen_threshold).collect();
    let mut total = 0.0;
    for &k in &kept {
        let col = es.eigenvector(k);
        let mean = col.iter().sum::<f64>() / n as f64;
        total += col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    }
    Ok(UncertaintyScore { estimator: Estimator::Eccentricity, value: total.sqrt() })
}

/// Number of clusters when responses that entail each other in both
/// directions (by argmax class) are merged transitively.
pub fn num_semantic_sets<P: NliProvider + ?Sized>(
    responses: &ResponseSet,
    provider: &P,
) -> Result<usize, EstimatorError> {
    let items = responses.as_slice();
    let n = items.len();
    let mut sets = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if sets.connected(i, j) {
                continue;
            }
            if provider.classify(&items[i], &items[j])?.argmax() == NliClass::Entail
                && provider.classify(&items[j], &items[i])?.argmax() == NliClass::Entail
            {
                sets.union(i, j);
            }
        }
    }
    Ok(sets.num_sets())
}

/// Scores `responses` with `estimator`.
pub fn score(
    responses: &ResponseSet,
    estimator: Estimator,
    nli: Option<&dyn NliProvider>,
    config: &EstimatorConfig,
) -> Result<UncertaintyScore, EstimatorError> {
    config.validate()?;
    let provider = || nli.ok_or(EstimatorError::MissingProvider(estimator));
    let spectral_matrix = || -> Result<SimilarityMatrix, EstimatorError> {
        Ok(match config.spectral_similarity {
            SpectralSimilarity::Nli => nli_matrix(responses, provider()?, config.nli_mode)?,
            SpectralSimilarity::Jaccard => jaccard_matrix(responses),
        })
    };
    match estimator {
        Estimator::SemanticSets => {
            let sets = num_semantic_sets(responses, provider()?)?;
            Ok(UncertaintyScore { estimator, value: sets as f64 })
        }
        Estimator::EigVLaplacian => eigv_laplacian(&spectral_matrix()?),
        Estimator::DegMatJaccard => Ok(degree_uncertainty(&jaccard_matrix(responses), estimator)),
        Estimator::DegMatNli => {
            let w = nli_matrix(responses, provider()?, config.nli_mode)?;
            Ok(degree_uncertainty(&w, estimator))
        }
        Estimator::Eccentricity => eccentricity(&spectral_matrix()?, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::LexicalNli;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn set(v: &[&str]) -> ResponseSet {
        ResponseSet::new(v.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn half() -> SimilarityMatrix {
        SimilarityMatrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]).unwrap()
    }

    #[test]
    fn laplacian_fixtures() {
        assert_eq!(laplacian(&SimilarityMatrix::identity(3)), Matrix::zeros(3));

        let l = laplacian(&SimilarityMatrix::all_ones(3));
        let expected = Matrix::from_fn(3, |i, j| if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 });
        assert!(l.max_abs_diff(&expected) < 1e-15);
        let es = symmetric_eigen(&l).unwrap();
        assert!(close(es.eigenvalues[0], 0.0, 1e-12));
        assert!(close(es.eigenvalues[1], 1.0, 1e-12));
        assert!(close(es.eigenvalues[2], 1.0, 1e-12));

        // d = 1.5 on both rows: L = [[1 - 1/1.5, -0.5/1.5], ...]
        let l = laplacian(&half());
        let expected = Matrix::from_rows(&[[1.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 1.0 / 3.0]]);
        assert!(l.max_abs_diff(&expected) < 1e-15);
        let es = symmetric_eigen(&l).unwrap();
        assert!(close(es.eigenvalues[0], 0.0, 1e-12));
        assert!(close(es.eigenvalues[1], 2.0 / 3.0, 1e-12));
    }

    #[test]
    fn eigv_fixtures() {
        assert!(close(eigv_laplacian(&SimilarityMatrix::all_ones(3)).unwrap().value, 1.0, 1e-10));
        assert!(close(eigv_laplacian(&SimilarityMatrix::identity(3)).unwrap().value, 3.0, 1e-12));
        assert!(close(eigv_laplacian(&half()).unwrap().value, 4.0 / 3.0, 1e-10));
    }

    #[test]
    fn degree_fixtures() {
        let e = Estimator::DegMatJaccard;
        assert_eq!(degree_uncertainty(&SimilarityMatrix::all_ones(4), e).value, 0.0);
        assert!(close(degree_uncertainty(&SimilarityMatrix::identity(3), e).value, 2.0 / 3.0, 1e-15));
        assert!(close(degree_uncertainty(&half(), e).value, 0.25, 1e-15));
    }

    #[test]
    fn eccentricity_fixtures() {
        let cfg = EstimatorConfig::default();
        for n in 2..7 {
            assert!(eccentricity(&SimilarityMatrix::all_ones(n), &cfg).unwrap().value < 1e-7);
        }
        let v = eccentricity(&SimilarityMatrix::identity(3), &cfg).unwrap().value;
        assert!(close(v, 2f64.sqrt(), 1e-12));
    }

    #[test]
    fn eccentricity_rejects_bad_threshold() {
        let cfg = EstimatorConfig { ecc_eigen_threshold: 2.0, ..Default::default() };
        assert!(matches!(eccentricity(&half(), &cfg), Err(EstimatorError::InvalidConfig(_))));
    }

    #[test]
    fn semantic_set_counts() {
        assert_eq!(num_semantic_sets(&set(&["x"; 5]), &LexicalNli).unwrap(), 1);
        assert_eq!(num_semantic_sets(&set(&["A", "A", "B"]), &LexicalNli).unwrap(), 2);
        assert_eq!(num_semantic_sets(&set(&["a", "b", "c", "d"]), &LexicalNli).unwrap(), 4);
    }

    #[test]
    fn score_dispatch() {
        let cfg = EstimatorConfig::default();
        let same = set(&["Paris is the capital."; 5]);
        let disjoint = set(&["alpha", "bravo", "charlie", "delta", "echo"]);
        let nli: &dyn NliProvider = &LexicalNli;

        assert_eq!(score(&same, Estimator::DegMatJaccard, None, &cfg).unwrap().value, 0.0);
        assert!(close(score(&disjoint, Estimator::DegMatJaccard, None, &cfg).unwrap().value, 0.8, 1e-12));
        assert_eq!(score(&same, Estimator::SemanticSets, Some(nli), &cfg).unwrap().value, 1.0);
        assert_eq!(score(&disjoint, Estimator::SemanticSets, Some(nli), &cfg).unwrap().value, 5.0);
        assert!(close(score(&disjoint, Estimator::EigVLaplacian, Some(nli), &cfg).unwrap().value, 5.0, 1e-9));
        assert!(close(score(&disjoint, Estimator::DegMatNli, Some(nli), &cfg).unwrap().value, 0.8, 1e-12));
        assert!(score(&same, Estimator::Eccentricity, Some(nli), &cfg).unwrap().value < 1e-6);
    }

    #[test]
    fn missing_provider_is_a_config_error() {
        let cfg = EstimatorConfig::default();
        let rs = set(&["a", "b"]);
        for e in [Estimator::SemanticSets, Estimator::DegMatNli, Estimator::EigVLaplacian, Estimator::Eccentricity] {
            assert!(matches!(score(&rs, e, None, &cfg), Err(EstimatorError::MissingProvider(_))));
        }
        let jac = EstimatorConfig { spectral_similarity: SpectralSimilarity::Jaccard, ..cfg };
        assert!(score(&rs, Estimator::EigVLaplacian, None, &jac).is_ok());
        assert!(score(&rs, Estimator::Eccentricity, None, &jac).is_ok());
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.as_str().parse::<Estimator>().unwrap(), e);
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.as_str()));
        }
        assert_eq!("DegMatJaccard".parse::<Estimator>().unwrap(), Estimator::DegMatJaccard);
        assert!("nope".parse::<Estimator>().is_err());
    }

    fn similarity_matrix(n: usize) -> impl Strategy<Value = SimilarityMatrix> {
        proptest::collection::vec(0.0f64..=1.0, n * (n - 1) / 2).prop_map(move |upper| {
            let mut m = Matrix::identity(n);
            let mut it = upper.into_iter();
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = it.next().unwrap();
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            SimilarityMatrix::new(m).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn laplacian_spectrum_in_range(w in (2usize..8).prop_flat_map(similarity_matrix)) {
            let es = symmetric_eigen(&laplacian(&w)).unwrap();
            for l in es.eigenvalues {
                prop_assert!((-1e-9..=2.0 + 1e-9).contains(&l), "eigenvalue {l}");
            }
        }
    }

    proptest! {
        #[test]
        fn estimator_ranges(w in (2usize..8).prop_flat_map(similarity_matrix)) {
            let n = w.dim() as f64;
            let eigv = eigv_laplacian(&w).unwrap().value;
            prop_assert!(eigv >= 1.0 - 1e-9 && eigv <= n + 1e-9, "eigv {eigv}");
            let deg = degree_uncertainty(&w, Estimator::DegMatJaccard).value;
            prop_assert!(deg >= 0.0 && deg <= 1.0 - 1.0 / n + 1e-12);
            prop_assert!(eccentricity(&w, &EstimatorConfig::default()).unwrap().value >= 0.0);
        }
    }
}
