use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub speaker: String,
    pub text: String,
}

/// Append-only shared debate memory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, speaker: impl Into<String>, text: impl Into<String>) {
        self.entries.push(TranscriptEntry {
            speaker: speaker.into(),
            text: text.into(),
        });
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        render_blocks(self.entries.iter().map(|e| (e.speaker.as_str(), e.text.as_str())))
    }
}

/// Serialize history as `[speaker]: text` blocks separated by blank lines.
pub fn render_transcript<S: AsRef<str>, T: AsRef<str>>(history: &[(S, T)]) -> String {
    render_blocks(history.iter().map(|(s, t)| (s.as_ref(), t.as_ref())))
}

fn render_blocks<'a>(entries: impl Iterator<Item = (&'a str, &'a str)>) -> String {
    entries
        .map(|(speaker, text)| format!("[{speaker}]: {text}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}
