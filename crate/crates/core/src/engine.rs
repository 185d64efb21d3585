//! Sentence-by-sentence answer generation with uncertainty-gated retrieval.
//!
//! Each step:
//!
//! 1. Greedily propose a temporary sentence from the retrieval-free prompt.
//!    An empty proposal ends the answer.
//! 2. Ask the [`RetrievalPolicy`] whether to retrieve. The threshold policy
//!    draws `num_samples` stochastic continuations from the same prompt and
//!    fires when their uncertainty is strictly above `theta`.
//! 3. If it fires, build a query (the temporary sentence or a generated
//!    subquery), fetch `top_k` passages, and regenerate the sentence greedily
//!    with the passages in the prompt. Otherwise keep the temporary sentence.
//! 4. Append the committed sentence to the partial answer.
//!
//! The loop stops on an empty proposal, once a committed sentence contains
//! the answer marker, or after `max_steps` steps. There is at most one
//! retrieval per step and the regenerated sentence is not re-scored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{score, Estimator, EstimatorConfig, EstimatorError, UncertaintyScore};
use crate::gateway::{GenerationError, GenerationRequest, Generator, Mode, PromptTemplate, RequestKey};
use crate::retrieval::{InvertedIndex, RankedHit};
use crate::similarity::{NliProvider, ResponseSet};
use crate::text::{first_sentence, rfind_ignore_case};

/// Version of the serialized [`RunTrace`] layout.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Literal that triggers retrieval under the FLARE-Instruct baseline.
pub const SEARCH_MARKER: &str = "[Search";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("invalid retrieval policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("question is empty")]
    EmptyQuestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Always,
    Never,
    Threshold,
    FlareInstruct,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    TemporarySentence,
    Subquery,
}

/// When to retrieve and what to search for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPolicy {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<Estimator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default)]
    pub query_mode: QueryMode,
}

impl RetrievalPolicy {
    pub fn always(query_mode: QueryMode) -> Self {
        RetrievalPolicy { kind: PolicyKind::Always, estimator: None, theta: None, query_mode }
    }

    pub fn never() -> Self {
        RetrievalPolicy { kind: PolicyKind::Never, estimator: None, theta: None, query_mode: QueryMode::TemporarySentence }
    }

    pub fn threshold(estimator: Estimator, theta: f64, query_mode: QueryMode) -> Self {
        RetrievalPolicy { kind: PolicyKind::Threshold, estimator: Some(estimator), theta: Some(theta), query_mode }
    }

    pub fn flare_instruct(query_mode: QueryMode) -> Self {
        RetrievalPolicy { kind: PolicyKind::FlareInstruct, estimator: None, theta: None, query_mode }
    }

    /// Named configurations of the reported experiments.
    ///
    /// | name | trigger | query |
    /// |---|---|---|
    /// | `always-temporary` | always | temporary sentence |
    /// | `always-subquery` | always | subquery |
    /// | `flare-instruct` | `[Search` in the sentence | temporary sentence |
    /// | `deg-mat-jaccard` | U > 0.4 | subquery |
    /// | `eccentricity` | U > 2 | subquery |
    /// | `semantic-sets` | U > 2 | subquery |
    /// | `deg-mat-nli` | U > 0.5 | subquery |
    pub fn preset(name: &str) -> Option<Self> {
        use QueryMode::*;
        Some(match name {
            "always-temporary" => Self::always(TemporarySentence),
            "always-subquery" => Self::always(Subquery),
            "never" => Self::never(),
            "flare-instruct" => Self::flare_instruct(TemporarySentence),
            "deg-mat-jaccard" => Self::threshold(Estimator::DegMatJaccard, 0.4, Subquery),
            "eccentricity" => Self::threshold(Estimator::Eccentricity, 2.0, Subquery),
            "semantic-sets" => Self::threshold(Estimator::SemanticSets, 2.0, Subquery),
            "deg-mat-nli" => Self::threshold(Estimator::DegMatNli, 0.5, Subquery),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.kind == PolicyKind::Threshold {
            if self.estimator.is_none() {
                return Err(EngineError::InvalidPolicy("threshold policy needs an estimator".into()));
            }
            match self.theta {
                Some(t) if t.is_finite() => {}
                Some(t) => return Err(EngineError::InvalidPolicy(format!("theta {t} is not finite"))),
                None => return Err(EngineError::InvalidPolicy("threshold policy needs theta".into())),
            }
        }
        Ok(())
    }

    fn needs_samples(&self) -> bool {
        self.kind == PolicyKind::Threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub num_samples: usize,
    pub max_steps: usize,
    pub top_k: usize,
    pub greedy_temperature: f64,
    pub sample_temperature: f64,
    pub max_tokens: usize,
    pub stop: Vec<String>,
    pub answer_marker: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            num_samples: 5,
            max_steps: 8,
            top_k: 3,
            greedy_temperature: 0.0,
            sample_temperature: 1.0,
            max_tokens: 64,
            stop: vec!["\n\n".into()],
            answer_marker: "so the answer is".into(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.into()));
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if self.num_samples < 2 {
            return bad("num_samples must be at least 2 for uncertainty scoring");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1");
        }
        if !(self.greedy_temperature >= 0.0 && self.sample_temperature >= 0.0) {
            return bad("temperatures must be non-negative");
        }
        Ok(())
    }
}

/// Record of one generation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step_index: usize,
    pub temporary_sentence: String,
    /// Empty unless the policy scored uncertainty.
    pub samples: Vec<String>,
    pub uncertainty: Option<UncertaintyScore>,
    pub triggered: bool,
    pub subquery: Option<String>,
    /// The string sent to the retriever, when one was sent.
    pub query: Option<String>,
    pub retrieved: Vec<RankedHit>,
    pub committed_sentence: String,
}

/// Record of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub schema_version: u32,
    pub question_id: Option<String>,
    pub question: String,
    pub steps: Vec<StepTrace>,
    pub final_answer: String,
    pub num_searches: usize,
    pub num_steps: usize,
    /// Set when the run aborted; `steps` then holds the completed prefix.
    pub error: Option<String>,
}

impl RunTrace {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// Committed sentences joined with single spaces.
    pub fn answer_text(&self) -> String {
        join_sentences(self.steps.iter().map(|s| s.committed_sentence.as_str()))
    }
}

/// Question plus the sentences committed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub question_id: Option<String>,
    pub question: String,
    committed: Vec<String>,
}

impl Context {
    pub fn new(question_id: Option<String>, question: impl Into<String>) -> Self {
        Context { question_id, question: question.into(), committed: Vec::new() }
    }

    pub fn partial_answer(&self) -> String {
        join_sentences(self.committed.iter().map(String::as_str))
    }

    pub fn committed(&self) -> &[String] {
        &self.committed
    }

    pub fn commit(&mut self, sentence: String) {
        self.committed.push(sentence);
    }

    pub fn step_index(&self) -> usize {
        self.committed.len()
    }

    fn key(&self, step: usize, mode: Mode) -> RequestKey {
        RequestKey { question_id: self.question_id.clone(), step, mode }
    }
}

fn join_sentences<'a>(parts: impl Iterator<Item = &'a str>) -> String {
    parts.filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
}

/// Greedy proposal plus optional samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub temporary: String,
    pub samples: Option<ResponseSet>,
}

/// Decides whether to retrieve for this step.
///
/// `samples` must be present for threshold policies.
pub fn should_retrieve(
    policy: &RetrievalPolicy,
    temporary: &str,
    samples: Option<&ResponseSet>,
    nli: Option<&dyn NliProvider>,
    estimator_config: &EstimatorConfig,
) -> Result<(bool, Option<UncertaintyScore>), EngineError> {
    policy.validate()?;
    match policy.kind {
        PolicyKind::Always => Ok((true, None)),
        PolicyKind::Never => Ok((false, None)),
        PolicyKind::FlareInstruct => Ok((temporary.contains(SEARCH_MARKER), None)),
        PolicyKind::Threshold => {
            let (estimator, theta) = (policy.estimator.unwrap(), policy.theta.unwrap());
            let samples =
                samples.ok_or_else(|| EngineError::InvalidPolicy("threshold policy scored without samples".into()))?;
            let u = score(samples, estimator, nli, estimator_config)?;
            Ok((u.value > theta, Some(u)))
        }
    }
}

/// Argument of the first `[Search(...)]` marker in `text`, if any.
pub fn search_marker_query(text: &str) -> Option<&str> {
    let start = text.find(SEARCH_MARKER)? + SEARCH_MARKER.len();
    let rest = text[start..].strip_prefix('(')?;
    let end = rest.find(')')?;
    let arg = rest[..end].trim();
    (!arg.is_empty()).then_some(arg)
}

/// Text after the last case-insensitive `marker`, trimmed of whitespace,
/// a leading colon and trailing punctuation. Without a marker the whole
/// answer is returned trimmed.
pub fn extract_final_answer(answer: &str, marker: &str) -> String {
    match rfind_ignore_case(answer, marker) {
        Some(end) => answer[end..]
            .trim_start_matches(|c: char| c.is_whitespace() || c == ':')
            .trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '!' | '?'))
            .to_string(),
        None => answer.trim().to_string(),
    }
}

enum StepOutcome {
    Ended,
    Stepped(StepTrace),
}

/// Runs questions against one generator, retriever and policy.
///
/// Holds only shared references, so one engine can answer many questions
/// concurrently.
pub struct Engine<'a> {
    generator: &'a dyn Generator,
    index: &'a InvertedIndex,
    nli: Option<&'a dyn NliProvider>,
    policy: RetrievalPolicy,
    config: EngineConfig,
    estimator_config: EstimatorConfig,
    answer_template: PromptTemplate,
    subquery_template: PromptTemplate,
}

impl<'a> Engine<'a> {
    pub fn new(
        generator: &'a dyn Generator,
        index: &'a InvertedIndex,
        policy: RetrievalPolicy,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        policy.validate()?;
        config.validate()?;
        Ok(Engine {
            generator,
            index,
            nli: None,
            policy,
            config,
            estimator_config: EstimatorConfig::default(),
            answer_template: PromptTemplate::default_answer(),
            subquery_template: PromptTemplate::default_subquery(),
        })
    }

    pub fn with_nli(mut self, nli: &'a dyn NliProvider) -> Self {
        self.nli = Some(nli);
        self
    }

    pub fn with_estimator_config(mut self, config: EstimatorConfig) -> Result<Self, EngineError> {
        config.validate()?;
        self.estimator_config = config;
        Ok(self)
    }

    pub fn with_templates(mut self, answer: PromptTemplate, subquery: PromptTemplate) -> Self {
        self.answer_template = answer;
        self.subquery_template = subquery;
        self
    }

    pub fn policy(&self) -> &RetrievalPolicy {
        &self.policy
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Checks that the configured policy can be scored with the available
    /// providers before any generation happens.
    pub fn check_providers(&self) -> Result<(), EngineError> {
        if let Some(est) = self.policy.estimator.filter(|_| self.policy.kind == PolicyKind::Threshold) {
            if est.needs_nli(&self.estimator_config) && self.nli.is_none() {
                return Err(EstimatorError::MissingProvider(est).into());
            }
        }
        Ok(())
    }

    fn request(&self, ctx: &Context, prompt: String, mode: Mode, step: usize) -> GenerationRequest {
        let (temperature, num_samples) = match mode {
            Mode::Sample => (self.config.sample_temperature, self.config.num_samples),
            _ => (self.config.greedy_temperature, 1),
        };
        let stop = if mode == Mode::Subquery { vec!["\n".to_string()] } else { self.config.stop.clone() };
        GenerationRequest { prompt, temperature, num_samples, max_tokens: self.config.max_tokens, stop, key: ctx.key(step, mode) }
    }

    fn greedy_text(&self, ctx: &Context, prompt: String, mode: Mode, step: usize) -> Result<String, EngineError> {
        let out = self.generator.generate(&self.request(ctx, prompt, mode, step))?;
        Ok(out.into_iter().next().map(|c| c.text).unwrap_or_default())
    }

    /// Proposes the next temporary sentence without retrieval. Returns
    /// `None` when the generator has nothing more to say.
    pub fn propose_sentence(&self, ctx: &Context) -> Result<Option<Proposal>, EngineError> {
        let step = ctx.step_index();
        let prompt = self.answer_template.render(&[], &ctx.question, &ctx.partial_answer());
        let greedy = self.greedy_text(ctx, prompt.clone(), Mode::Greedy, step)?;
        let temporary = first_sentence(&greedy).to_string();
        if temporary.is_empty() {
            return Ok(None);
        }
        let samples = if self.policy.needs_samples() {
            let out = self.generator.generate(&self.request(ctx, prompt, Mode::Sample, step))?;
            let firsts = out.iter().map(|c| first_sentence(&c.text).to_string()).collect();
            Some(ResponseSet::new(firsts).map_err(EstimatorError::from)?)
        } else {
            None
        };
        Ok(Some(Proposal { temporary, samples }))
    }

    /// Asks the generator for a single-line question targeting the fact the
    /// partial answer is missing. Falls back to `temporary` on empty output.
    pub fn generate_subquery(&self, ctx: &Context, temporary: &str) -> Result<String, EngineError> {
        let prompt = self.subquery_template.render(&[], &ctx.question, &ctx.partial_answer());
        let text = self.greedy_text(ctx, prompt, Mode::Subquery, ctx.step_index())?;
        let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
        Ok(if line.is_empty() { temporary.to_string() } else { line.to_string() })
    }

    fn step(&self, ctx: &mut Context) -> Result<StepOutcome, EngineError> {
        let step_index = ctx.step_index();
        let Some(proposal) = self.propose_sentence(ctx)? else {
            return Ok(StepOutcome::Ended);
        };
        let (triggered, uncertainty) = should_retrieve(
            &self.policy,
            &proposal.temporary,
            proposal.samples.as_ref(),
            self.nli,
            &self.estimator_config,
        )?;

        let mut subquery = None;
        let mut query = None;
        let mut retrieved = Vec::new();
        let mut committed = proposal.temporary.clone();
        if triggered {
            let q = match self.policy.query_mode {
                QueryMode::Subquery => {
                    let sq = self.generate_subquery(ctx, &proposal.temporary)?;
                    subquery = Some(sq.clone());
                    sq
                }
                QueryMode::TemporarySentence => match self.policy.kind {
                    PolicyKind::FlareInstruct => {
                        search_marker_query(&proposal.temporary).unwrap_or(&proposal.temporary).to_string()
                    }
                    _ => proposal.temporary.clone(),
                },
            };
            retrieved = self.index.search(&q, self.config.top_k);
            query = Some(q);
            if !retrieved.is_empty() {
                let docs: Vec<_> = retrieved.iter().map(|h| h.doc.clone()).collect();
                let prompt = self.answer_template.render(&docs, &ctx.question, &ctx.partial_answer());
                let text = self.greedy_text(ctx, prompt, Mode::WithDocs, step_index)?;
                let regenerated = first_sentence(&text);
                if !regenerated.is_empty() {
                    committed = regenerated.to_string();
                }
            }
        }

        ctx.commit(committed.clone());
        Ok(StepOutcome::Stepped(StepTrace {
            step_index,
            temporary_sentence: proposal.temporary,
            samples: proposal.samples.map(ResponseSet::into_inner).unwrap_or_default(),
            uncertainty,
            triggered,
            subquery,
            query,
            retrieved,
            committed_sentence: committed,
        }))
    }

    /// Answers one question. Failures are recorded in the trace rather than
    /// returned, so partial progress survives.
    pub fn answer(&self, question_id: Option<&str>, question: &str) -> RunTrace {
        let mut trace = RunTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            question_id: question_id.map(str::to_string),
            question: question.to_string(),
            steps: Vec::new(),
            final_answer: String::new(),
            num_searches: 0,
            num_steps: 0,
            error: None,
        };
        if question.trim().is_empty() {
            trace.error = Some(EngineError::EmptyQuestion.to_string());
            return trace;
        }
        if let Err(e) = self.check_providers() {
            trace.error = Some(e.to_string());
            return trace;
        }

        let mut ctx = Context::new(trace.question_id.clone(), question);
        while trace.steps.len() < self.config.max_steps {
            match self.step(&mut ctx) {
                Ok(StepOutcome::Ended) => break,
                Ok(StepOutcome::Stepped(step)) => {
                    let done = rfind_ignore_case(&step.committed_sentence, &self.config.answer_marker).is_some();
                    trace.steps.push(step);
                    if done {
                        break;
                    }
                }
                Err(e) => {
                    trace.error = Some(e.to_string());
                    break;
                }
            }
        }

        trace.num_steps = trace.steps.len();
        trace.num_searches = trace.steps.iter().filter(|s| s.triggered).count();
        trace.final_answer = extract_final_answer(&trace.answer_text(), &self.config.answer_marker);
        trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptEntry, ScriptFile, ScriptedGenerator};
    use crate::retrieval::Document;
    use crate::similarity::LexicalNli;

    fn entry(step: usize, mode: Mode, outputs: &[&str]) -> ScriptEntry {
        ScriptEntry { question: None, step, mode, outputs: outputs.iter().map(|s| s.to_string()).collect() }
    }

    fn generator(entries: Vec<ScriptEntry>) -> ScriptedGenerator {
        ScriptedGenerator::new(ScriptFile::from_entries(entries).unwrap())
    }

    fn corpus() -> InvertedIndex {
        InvertedIndex::build(vec![
            Document::new("p1", "Promised Heaven", "Promised Heaven is a 1991 film directed by Eldar Ryazanov."),
            Document::new("p2", "Fire Over England", "Fire Over England is a 1937 film directed by William Howard."),
            Document::new("p3", "William Howard", "William Howard died on February 21, 1954."),
        ])
        .unwrap()
    }

    const SAME: [&str; 5] = ["Same words here."; 5];
    const DISJOINT: [&str; 5] = ["alpha.", "bravo.", "charlie.", "delta.", "echo."];

    fn three_step_script() -> Vec<ScriptEntry> {
        vec![
            entry(0, Mode::Greedy, &["Promised Heaven was directed by Eldar Ryazanov. Extra."]),
            entry(0, Mode::Sample, &SAME),
            entry(0, Mode::Subquery, &["Who directed Promised Heaven?"]),
            entry(0, Mode::WithDocs, &["Promised Heaven was directed by Eldar Ryazanov."]),
            entry(1, Mode::Greedy, &["William Howard died in 1954."]),
            entry(1, Mode::Sample, &DISJOINT),
            entry(1, Mode::Subquery, &["When did William Howard die?\nignored"]),
            entry(1, Mode::WithDocs, &["William Howard died on February 21, 1954."]),
            entry(2, Mode::Greedy, &["So the answer is Fire Over England."]),
            entry(2, Mode::Sample, &SAME),
            entry(2, Mode::Subquery, &["Which film?"]),
            entry(2, Mode::WithDocs, &["So the answer is Fire Over England."]),
        ]
    }

    const QUESTION: &str = "Which film has the director who died first, Promised Heaven or Fire Over England?";

    #[test]
    fn policy_validation() {
        assert!(RetrievalPolicy::threshold(Estimator::DegMatJaccard, 0.4, QueryMode::Subquery).validate().is_ok());
        let mut p = RetrievalPolicy::threshold(Estimator::DegMatJaccard, 0.4, QueryMode::Subquery);
        p.theta = None;
        assert!(p.validate().is_err());
        p.theta = Some(f64::NAN);
        assert!(p.validate().is_err());
        let mut p = RetrievalPolicy::always(QueryMode::Subquery);
        p.kind = PolicyKind::Threshold;
        assert!(p.validate().is_err());
        assert!(RetrievalPolicy::preset("deg-mat-jaccard").is_some());
        assert!(RetrievalPolicy::preset("bogus").is_none());
    }

    #[test]
    fn should_retrieve_examples() {
        let cfg = EstimatorConfig::default();
        let policy = RetrievalPolicy::threshold(Estimator::DegMatJaccard, 0.4, QueryMode::Subquery);
        let same = ResponseSet::new(SAME.iter().map(|s| s.to_string()).collect()).unwrap();
        let disjoint = ResponseSet::new(DISJOINT.iter().map(|s| s.to_string()).collect()).unwrap();

        let (fire, u) = should_retrieve(&policy, "t", Some(&same), None, &cfg).unwrap();
        assert!(!fire);
        assert_eq!(u.unwrap().value, 0.0);

        let (fire, u) = should_retrieve(&policy, "t", Some(&disjoint), None, &cfg).unwrap();
        assert!(fire);
        assert!((u.unwrap().value - 0.8).abs() < 1e-12);

        let flare = RetrievalPolicy::flare_instruct(QueryMode::TemporarySentence);
        assert_eq!(should_retrieve(&flare, "I need [Search(when did X die)]", None, None, &cfg).unwrap(), (true, None));
        assert_eq!(should_retrieve(&flare, "X died in 1950.", None, None, &cfg).unwrap(), (false, None));
        assert_eq!(should_retrieve(&RetrievalPolicy::never(), "", None, None, &cfg).unwrap(), (false, None));
        assert_eq!(
            should_retrieve(&RetrievalPolicy::always(QueryMode::Subquery), "", None, None, &cfg).unwrap(),
            (true, None)
        );
    }

    #[test]
    fn theta_is_strict() {
        let cfg = EstimatorConfig::default();
        let disjoint = ResponseSet::new(DISJOINT.iter().map(|s| s.to_string()).collect()).unwrap();
        let at = RetrievalPolicy::threshold(Estimator::DegMatJaccard, 0.8, QueryMode::Subquery);
        // U is 0.8 up to rounding; 1 - 5/25 in floating point.
        let (fire, u) = should_retrieve(&at, "", Some(&disjoint), None, &cfg).unwrap();
        assert_eq!(fire, u.unwrap().value > 0.8);
    }

    #[test]
    fn search_marker_argument() {
        assert_eq!(search_marker_query("I need [Search(when did X die)] now"), Some("when did X die"));
        assert_eq!(search_marker_query("[Search]"), None);
        assert_eq!(search_marker_query("nothing"), None);
    }

    #[test]
    fn final_answer_extraction() {
        let m = "so the answer is";
        assert_eq!(extract_final_answer("A. B. So the answer is Fire Over England.", m), "Fire Over England");
        assert_eq!(extract_final_answer("so the answer is: yes!", m), "yes");
        assert_eq!(extract_final_answer("No marker here.", m), "No marker here.");
        assert_eq!(extract_final_answer("", m), "");
    }

    #[test]
    fn threshold_run_fires_only_on_diverse_step() {
        let g = generator(three_step_script());
        let idx = corpus();
        let policy = RetrievalPolicy::threshold(Estimator::DegMatJaccard, 0.4, QueryMode::Subquery);
        let engine = Engine::new(&g, &idx, policy, EngineConfig::default()).unwrap();
        let trace = engine.answer(Some("q1"), QUESTION);
        assert_eq!(trace.error, None);
        assert_eq!(trace.num_steps, 3);
        assert_eq!(trace.num_searches, 1);
        assert_eq!(trace.final_answer, "Fire Over England");
        assert_eq!(trace.steps[0].temporary_sentence, "Promised Heaven was directed by Eldar Ryazanov.");
        assert!(!trace.steps[0].triggered);
        let s1 = &trace.steps[1];
        assert!(s1.triggered);
        assert_eq!(s1.subquery.as_deref(), Some("When did William Howard die?"));
        assert_eq!(s1.retrieved[0].doc.id, "p3");
        assert_eq!(s1.committed_sentence, "William Howard died on February 21, 1954.");
        assert_eq!(trace.steps[1].samples.len(), 5);
    }

    #[test]
    fn always_and_never_policies() {
        let g = generator(three_step_script());
        let idx = corpus();
        let always = Engine::new(&g, &idx, RetrievalPolicy::always(QueryMode::TemporarySentence), EngineConfig::default())
            .unwrap()
            .answer(None, QUESTION);
        assert_eq!(always.num_searches, always.num_steps);
        assert!(always.steps.iter().all(|s| s.triggered && !s.retrieved.is_empty() && s.samples.is_empty()));

        let never = Engine::new(&g, &idx, RetrievalPolicy::never(), EngineConfig::default()).unwrap().answer(None, QUESTION);
        assert_eq!(never.num_searches, 0);
        assert!(never.steps.iter().all(|s| s.committed_sentence == s.temporary_sentence));
        assert_eq!(never.num_steps, 3);
    }

    #[test]
    fn committed_sentences_rebuild_the_answer() {
        let g = generator(three_step_script());
        let idx = corpus();
        let policy = RetrievalPolicy::threshold(Estimator::DegMatJaccard, 0.4, QueryMode::Subquery);
        let trace = Engine::new(&g, &idx, policy, EngineConfig::default()).unwrap().answer(None, QUESTION);
        let joined: Vec<_> = trace.steps.iter().map(|s| s.committed_sentence.clone()).collect();
        assert_eq!(trace.answer_text(), joined.join(" "));
    }

    #[test]
    fn empty_first_proposal_ends_immediately() {
        let g = generator(vec![entry(0, Mode::Greedy, &[""])]);
        let idx = corpus();
        let trace = Engine::new(&g, &idx, RetrievalPolicy::always(QueryMode::Subquery), EngineConfig::default())
            .unwrap()
            .answer(None, "Q?");
        assert_eq!((trace.num_steps, trace.num_searches), (0, 0));
        assert_eq!(trace.final_answer, "");
        assert!(!trace.failed());
    }

    #[test]
    fn max_steps_caps_the_loop() {
        let entries = (0..10).map(|i| entry(i, Mode::Greedy, &["Still going."])).collect();
        let g = generator(entries);
        let idx = corpus();
        let cfg = EngineConfig { max_steps: 4, ..Default::default() };
        let trace = Engine::new(&g, &idx, RetrievalPolicy::never(), cfg).unwrap().answer(None, "Q?");
        assert_eq!(trace.num_steps, 4);
        assert_eq!(trace.final_answer, "Still going. Still going. Still going. Still going.");
    }

    #[test]
    fn failures_keep_the_partial_trace() {
        let mut entries = three_step_script();
        entries.retain(|e| !(e.step == 1 && e.mode == Mode::Sample));
        let g = generator(entries);
        let idx = corpus();
        let policy = RetrievalPolicy::threshold(Estimator::DegMatJaccard, 0.4, QueryMode::Subquery);
        let trace = Engine::new(&g, &idx, policy, EngineConfig::default()).unwrap().answer(None, QUESTION);
        assert!(trace.failed());
        assert!(trace.error.as_ref().unwrap().contains("step=1, mode=sample"));
        assert_eq!(trace.num_steps, 1);
    }

    #[test]
    fn empty_question_and_missing_provider() {
        let g = generator(three_step_script());
        let idx = corpus();
        let engine = Engine::new(&g, &idx, RetrievalPolicy::never(), EngineConfig::default()).unwrap();
        assert!(engine.answer(None, "  ").failed());

        let nli_policy = RetrievalPolicy::threshold(Estimator::DegMatNli, 0.5, QueryMode::Subquery);
        let engine = Engine::new(&g, &idx, nli_policy, EngineConfig::default()).unwrap();
        let trace = engine.answer(None, QUESTION);
        assert!(trace.failed() && trace.steps.is_empty());
        let engine = Engine::new(&g, &idx, nli_policy, EngineConfig::default()).unwrap().with_nli(&LexicalNli);
        assert!(!engine.answer(None, QUESTION).failed());
    }

    #[test]
    fn subquery_falls_back_to_temporary() {
        let g = generator(vec![entry(0, Mode::Subquery, &["  \n "])]);
        let idx = corpus();
        let engine = Engine::new(&g, &idx, RetrievalPolicy::never(), EngineConfig::default()).unwrap();
        let ctx = Context::new(None, "Q?");
        assert_eq!(engine.generate_subquery(&ctx, "Temp.").unwrap(), "Temp.");
    }

    #[test]
    fn flare_instruct_uses_marker_argument() {
        let g = generator(vec![
            entry(0, Mode::Greedy, &["I need [Search(When did William Howard die?)]"]),
            entry(0, Mode::WithDocs, &["So the answer is 1954."]),
        ]);
        let idx = corpus();
        let engine =
            Engine::new(&g, &idx, RetrievalPolicy::flare_instruct(QueryMode::TemporarySentence), EngineConfig::default())
                .unwrap();
        let trace = engine.answer(None, "When did he die?");
        assert_eq!(trace.steps[0].query.as_deref(), Some("When did William Howard die?"));
        assert_eq!(trace.final_answer, "1954");
    }

    #[test]
    fn config_validation() {
        let g = generator(vec![]);
        let idx = corpus();
        for cfg in [
            EngineConfig { max_steps: 0, ..Default::default() },
            EngineConfig { top_k: 0, ..Default::default() },
            EngineConfig { num_samples: 1, ..Default::default() },
        ] {
            assert!(Engine::new(&g, &idx, RetrievalPolicy::never(), cfg).is_err());
        }
    }
}
