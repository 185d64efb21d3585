//! Run configuration and the dataset-level experiment driver behind `uqrag run`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineConfig, EngineError, PolicyKind, RetrievalPolicy, RunTrace};
use crate::estimators::EstimatorConfig;
use crate::eval::{aggregate, load_dataset, EvalError, QaExample, RunReport};
use crate::gateway::{GenerationError, Generator, HttpGenerator, HttpGeneratorConfig, PromptTemplate, ScriptFile, ScriptedGenerator};
use crate::retrieval::{InvertedIndex, RetrievalError};
use crate::similarity::{HttpNli, LexicalNli, NliProvider};
use crate::transport::JsonClient;

/// Version of the `report.json` layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSettings {
    pub kind: GeneratorKind,
    /// Script file for the mock generator.
    pub script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliKind {
    #[default]
    None,
    Lexical,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NliSettings {
    pub kind: NliKind,
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub index: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub answer_template: Option<PathBuf>,
    pub subquery_template: Option<PathBuf>,
}

/// Everything `uqrag run` needs. Loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub generator: GeneratorSettings,
    pub nli: NliSettings,
    pub policy: RetrievalPolicy,
    pub engine: EngineConfig,
    pub estimator: EstimatorConfig,
    pub paths: Paths,
    pub seed: u64,
    pub limit: Option<usize>,
    pub repeats: usize,
    pub parallel: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            generator: GeneratorSettings::default(),
            nli: NliSettings::default(),
            policy: RetrievalPolicy::always(crate::engine::QueryMode::TemporarySentence),
            engine: EngineConfig::default(),
            estimator: EstimatorConfig::default(),
            paths: Paths::default(),
            seed: 0,
            limit: None,
            repeats: 1,
            parallel: 1,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    /// Checks cross-field requirements before any generation happens.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        match self.generator.kind {
            GeneratorKind::Mock if self.generator.script.is_none() => {
                return bad("mock generator requires a script path".into())
            }
            GeneratorKind::Http if self.generator.endpoint.is_none() => {
                return bad("http generator requires an endpoint".into())
            }
            _ => {}
        }
        if self.nli.kind == NliKind::Http && self.nli.endpoint.is_none() {
            return bad("http NLI provider requires an endpoint".into());
        }
        self.policy.validate()?;
        self.engine.validate()?;
        self.estimator.validate().map_err(EngineError::from)?;
        if self.policy.kind == PolicyKind::Threshold {
            let est = self.policy.estimator.expect("validated");
            if est.needs_nli(&self.estimator) && self.nli.kind == NliKind::None {
                return bad(format!("estimator {est} needs an NLI provider (set nli.kind)"));
            }
        }
        if self.paths.index.is_none() {
            return bad("index path is required".into());
        }
        if self.paths.dataset.is_none() {
            return bad("dataset path is required".into());
        }
        if self.paths.report_dir.is_none() {
            return bad("report directory is required".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.parallel == 0 {
            return bad("parallel must be at least 1".into());
        }
        Ok(())
    }

    pub fn build_generator(&self) -> Result<Box<dyn Generator>, ExperimentError> {
        Ok(match self.generator.kind {
            GeneratorKind::Mock => {
                let path = self.generator.script.as_ref().ok_or_else(|| ExperimentError::Config("missing script".into()))?;
                Box::new(ScriptedGenerator::new(ScriptFile::load(path)?))
            }
            GeneratorKind::Http => {
                let endpoint =
                    self.generator.endpoint.clone().ok_or_else(|| ExperimentError::Config("missing endpoint".into()))?;
                let cfg = HttpGeneratorConfig {
                    endpoint,
                    model: self.generator.model.clone().unwrap_or_default(),
                    timeout_secs: 120,
                };
                Box::new(HttpGenerator::new(&cfg, JsonClient::api_key_from_env()))
            }
        })
    }

    pub fn build_nli(&self) -> Result<Option<Box<dyn NliProvider>>, ExperimentError> {
        Ok(match self.nli.kind {
            NliKind::None => None,
            NliKind::Lexical => Some(Box::new(LexicalNli)),
            NliKind::Http => {
                let url = self.nli.endpoint.clone().ok_or_else(|| ExperimentError::Config("missing NLI endpoint".into()))?;
                Some(Box::new(HttpNli::new(url, JsonClient::api_key_from_env())))
            }
        })
    }

    fn templates(&self) -> Result<(PromptTemplate, PromptTemplate), ExperimentError> {
        let answer = match &self.paths.answer_template {
            Some(p) => PromptTemplate::load(p)?,
            None => PromptTemplate::default_answer(),
        };
        let subquery = match &self.paths.subquery_template {
            Some(p) => PromptTemplate::load(p)?,
            None => PromptTemplate::default_subquery(),
        };
        Ok((answer, subquery))
    }
}

/// Metrics averaged over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub mean_search: f64,
    pub mean_steps: f64,
    pub ret_ratio: f64,
    pub mean_f1: f64,
    pub frac_correct: f64,
    pub frac_incorrect: f64,
    pub frac_partial: f64,
}

impl MeanRow {
    pub fn of(reports: &[RunReport]) -> Self {
        let k = reports.len().max(1) as f64;
        let avg = |f: fn(&RunReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        MeanRow {
            mean_search: avg(|r| r.mean_search),
            mean_steps: avg(|r| r.mean_steps),
            ret_ratio: avg(|r| r.ret_ratio),
            mean_f1: avg(|r| r.mean_f1),
            frac_correct: avg(|r| r.frac_correct),
            frac_incorrect: avg(|r| r.frac_incorrect),
            frac_partial: avg(|r| r.frac_partial),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub timestamp_unix: u64,
    pub seed: u64,
}

impl RunMetadata {
    /// Uses `SOURCE_DATE_EPOCH` for the timestamp when set.
    pub fn now(seed: u64) -> Self {
        let timestamp_unix = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        RunMetadata { tool_version: env!("CARGO_PKG_VERSION").to_string(), timestamp_unix, seed }
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub config: RunConfig,
    pub repeats: Vec<RunReport>,
    pub mean: MeanRow,
}

impl ExperimentReport {
    pub fn any_failed(&self) -> bool {
        self.repeats.iter().any(|r| r.num_failed > 0)
    }

    /// `#examples  #search  #steps  f1`, averaged over repeats.
    pub fn summary_line(&self) -> String {
        let n = self.repeats.first().map(|r| r.num_examples).unwrap_or(0);
        format!(
            "examples={n} search={:.2} steps={:.2} f1={:.3} ret_ratio={:.2} failed={}",
            self.mean.mean_search,
            self.mean.mean_steps,
            self.mean.mean_f1,
            self.mean.ret_ratio,
            self.repeats.iter().map(|r| r.num_failed).sum::<usize>(),
        )
    }
}

/// A trace line in `traces.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub repeat: usize,
    #[serde(flatten)]
    pub trace: RunTrace,
}

/// Answers every example once with `engine`, keeping dataset order.
pub fn run_examples(engine: &Engine<'_>, examples: &[QaExample], parallel: usize) -> Vec<RunTrace> {
    let answer = |ex: &QaExample| engine.answer(Some(&ex.id), &ex.question);
    if parallel <= 1 {
        return examples.iter().map(answer).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallel).build() {
        Ok(pool) => pool.install(|| examples.par_iter().map(answer).collect()),
        Err(_) => examples.iter().map(answer).collect(),
    }
}

/// Loads everything named in `config`, runs all repeats and writes
/// `traces.jsonl` and `report.json` into the report directory.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let generator = config.build_generator()?;
    let nli = config.build_nli()?;
    let (answer_t, subquery_t) = config.templates()?;
    let index = InvertedIndex::load(config.paths.index.as_ref().expect("validated"))?;
    let examples = load_dataset(config.paths.dataset.as_ref().expect("validated"), config.limit, config.seed)?;

    let mut engine = Engine::new(generator.as_ref(), &index, config.policy, config.engine.clone())?
        .with_estimator_config(config.estimator)?
        .with_templates(answer_t, subquery_t);
    if let Some(nli) = nli.as_deref() {
        engine = engine.with_nli(nli);
    }
    engine.check_providers()?;

    let report_dir = config.paths.report_dir.as_ref().expect("validated");
    std::fs::create_dir_all(report_dir).map_err(|source| ExperimentError::Io { path: report_dir.clone(), source })?;
    let traces_path = report_dir.join("traces.jsonl");
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    let mut traces_out = std::io::BufWriter::new(std::fs::File::create(&traces_path).map_err(io_err(&traces_path))?);

    let mut repeats = Vec::with_capacity(config.repeats);
    for repeat in 0..config.repeats {
        let traces = run_examples(&engine, &examples, config.parallel);
        for trace in &traces {
            let rec = TraceRecord { repeat, trace: trace.clone() };
            let line = serde_json::to_string(&rec).expect("trace serializes");
            writeln!(traces_out, "{line}").map_err(io_err(&traces_path))?;
        }
        repeats.push(aggregate(&traces, &examples)?);
    }
    traces_out.flush().map_err(io_err(&traces_path))?;

    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metadata: RunMetadata::now(config.seed),
        config: config.clone(),
        mean: MeanRow::of(&repeats),
        repeats,
    };
    let report_path = report_dir.join("report.json");
    let body = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, body + "\n").map_err(io_err(&report_path))?;
    Ok(report)
}
