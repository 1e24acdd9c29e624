use super::text::{is_word, sentences, syllables, tokenize};

/// Raw counts behind both readability scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TextCounts {
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
    pub letters: usize,
}

impl TextCounts {
    pub fn from_tokens(tokens: &[String]) -> Self {
        let words: Vec<&String> = tokens.iter().filter(|t| is_word(t)).collect();
        Self {
            words: words.len(),
            sentences: sentences(tokens).len(),
            syllables: words.iter().map(|w| syllables(w)).sum(),
            letters: words.iter().flat_map(|w| w.chars()).filter(|c| c.is_alphabetic()).count(),
        }
    }

    pub fn flesch_reading_ease(&self) -> f64 {
        if self.words == 0 {
            return 0.0;
        }
        let w = self.words as f64;
        206.835 - 1.015 * (w / self.sentences as f64) - 84.6 * (self.syllables as f64 / w)
    }

    pub fn coleman_liau_index(&self) -> f64 {
        if self.words == 0 {
            return 0.0;
        }
        let w = self.words as f64;
        let l = self.letters as f64 * 100.0 / w;
        let s = self.sentences as f64 * 100.0 / w;
        0.0588 * l - 0.296 * s - 15.8
    }
}

/// `(flesch_reading_ease, coleman_liau_index)`; text without words scores `(0, 0)`.
pub fn readability(text: &str) -> (f64, f64) {
    let counts = TextCounts::from_tokens(&tokenize(text));
    (counts.flesch_reading_ease(), counts.coleman_liau_index())
}
