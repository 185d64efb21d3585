use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_count, strip_stop_sequences, Completion, FinishReason, GenerationError, GenerationRequest, Generator, Mode, RequestKey};

/// One line of a script file.
///
/// `question` is optional: entries without it answer for every question,
/// entries with it only for that dataset example id (and take precedence).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub step: usize,
    pub mode: Mode,
    pub outputs: Vec<String>,
}

/// Canned generator outputs keyed by (question, step, mode).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptFile {
    entries: HashMap<RequestKey, Vec<String>>,
}

impl ScriptFile {
    pub fn from_entries<I: IntoIterator<Item = ScriptEntry>>(entries: I) -> Result<Self, GenerationError> {
        let mut map = HashMap::new();
        for (i, e) in entries.into_iter().enumerate() {
            let key = RequestKey { question_id: e.question, step: e.step, mode: e.mode };
            if map.contains_key(&key) {
                return Err(GenerationError::MalformedScript { line: i + 1, message: format!("duplicate entry {key}") });
            }
            map.insert(key, e.outputs);
        }
        Ok(ScriptFile { entries: map })
    }

    /// Parses JSON Lines; blank lines are skipped.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, GenerationError> {
        let mut entries = Vec::new();
        let mut lines = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| GenerationError::MalformedScript { line: i + 1, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line)
                .map_err(|e| GenerationError::MalformedScript { line: i + 1, message: e.to_string() })?;
            entries.push(entry);
            lines.push(i + 1);
        }
        // Report duplicates against real file line numbers.
        Self::from_entries(entries).map_err(|e| match e {
            GenerationError::MalformedScript { line, message } => {
                GenerationError::MalformedScript { line: lines[line - 1], message }
            }
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        let file = std::fs::File::open(path)
            .map_err(|e| GenerationError::MalformedScript { line: 0, message: format!("{}: {e}", path.display()) })?;
        Self::parse(std::io::BufReader::new(file))
    }

    /// Outputs for `key`, falling back from a question-specific entry to a
    /// question-agnostic one. Lookups never consume entries.
    pub fn lookup(&self, key: &RequestKey) -> Result<&[String], GenerationError> {
        if let Some(out) = self.entries.get(key) {
            return Ok(out);
        }
        if key.question_id.is_some() {
            let generic = RequestKey { question_id: None, ..key.clone() };
            if let Some(out) = self.entries.get(&generic) {
                return Ok(out);
            }
        }
        Err(GenerationError::ScriptExhausted(key.clone()))
    }

    /// Outputs of the question-agnostic entry for `(step, mode)`.
    pub fn scripted_next(&self, step: usize, mode: Mode) -> Result<&[String], GenerationError> {
        self.lookup(&RequestKey::new(step, mode))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Deterministic generator replaying a [`ScriptFile`].
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    script: ScriptFile,
}

impl ScriptedGenerator {
    pub fn new(script: ScriptFile) -> Self {
        ScriptedGenerator { script }
    }

    pub fn script(&self) -> &ScriptFile {
        &self.script
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, GenerationError> {
        request.validate()?;
        let outputs = self.script.lookup(&request.key)?;
        check_count(request, outputs.len())?;
        Ok(outputs
            .iter()
            .map(|text| Completion {
                text: strip_stop_sequences(text, &request.stop).to_string(),
                finish_reason: FinishReason::Stop,
            })
            .collect())
    }
}
