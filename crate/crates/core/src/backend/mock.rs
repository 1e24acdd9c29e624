use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{count_tokens_fallback, Backend, BackendError, BackendRequest, BackendResponse};
use crate::protocol::Role;

/// One scripted reply. Replies for the same (record, role) are served in
/// file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub record: Option<String>,
    pub role: Role,
    pub text: String,
    #[serde(default)]
    pub input_tokens: Option<u64>,
    #[serde(default)]
    pub output_tokens: Option<u64>,
}

impl ScriptEntry {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            record: None,
            role,
            text: text.into(),
            input_tokens: None,
            output_tokens: None,
        }
    }

    pub fn for_record(mut self, record: impl Into<String>) -> Self {
        self.record = Some(record.into());
        self
    }

    pub fn tokens(mut self, input: u64, output: u64) -> Self {
        self.input_tokens = Some(input);
        self.output_tokens = Some(output);
        self
    }
}

/// On-disk script: `{"turns": [ScriptEntry, ...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    pub turns: Vec<ScriptEntry>,
}

type Key = (Option<String>, Role);

#[derive(Debug, Default)]
struct State {
    served: HashMap<Key, usize>,
    log: Vec<BackendRequest>,
}

/// Deterministic backend replaying a script. Image attachments are ignored.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: HashMap<Key, Vec<ScriptEntry>>,
    state: Mutex<State>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut script: HashMap<Key, Vec<ScriptEntry>> = HashMap::new();
        for e in entries {
            script.entry((e.record.clone(), e.role)).or_default().push(e);
        }
        Self {
            script,
            state: Mutex::new(State::default()),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("reading script {}: {e}", path.display())))?;
        let file: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("parsing script {}: {e}", path.display())))?;
        Ok(Self::new(file.turns))
    }

    /// Every request served so far, in call order.
    pub fn calls(&self) -> Vec<BackendRequest> {
        self.state.lock().expect("mock state").log.clone()
    }

    /// Replies still unserved, summed over all keys.
    pub fn remaining(&self) -> usize {
        let state = self.state.lock().expect("mock state");
        self.script
            .iter()
            .map(|(k, v)| v.len() - state.served.get(k).copied().unwrap_or(0))
            .sum()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let key = (request.record_id.clone(), request.role);
        let mut state = self.state.lock().expect("mock state");
        let occurrence = state.served.get(&key).copied().unwrap_or(0);
        let entry = self
            .script
            .get(&key)
            .and_then(|v| v.get(occurrence))
            .ok_or_else(|| BackendError::ScriptExhausted {
                role: request.role,
                occurrence,
                record: request.record_id.clone(),
            })?;
        state.served.insert(key, occurrence + 1);
        state.log.push(request.clone());
        let approximate = entry.input_tokens.is_none() || entry.output_tokens.is_none();
        Ok(BackendResponse {
            text: entry.text.clone(),
            input_tokens: entry.input_tokens.unwrap_or_else(|| count_tokens_fallback(&request.prompt)),
            output_tokens: entry.output_tokens.unwrap_or_else(|| count_tokens_fallback(&entry.text)),
            latency_ms: 0,
            approximate,
        })
    }
}
