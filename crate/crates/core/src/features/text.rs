//! Tokenization, sentence splitting and syllable counting.

/// Split on whitespace, then detach leading and trailing punctuation one
/// character at a time. Internal punctuation (`state-of-the-art`, `it's`,
/// `3.5`) stays inside the token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric());
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|c| c.is_alphanumeric()).expect("has alphanumeric") + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

/// A token that carries at least one letter or digit.
pub fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

pub fn is_terminal(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

/// Group tokens into sentences ending at `.`, `!` or `?`. Sentences without
/// a word token are dropped.
pub fn sentences(tokens: &[String]) -> Vec<&[String]> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if is_terminal(tok) {
            let sentence = &tokens[start..=i];
            if sentence.iter().any(|t| is_word(t)) {
                out.push(sentence);
            }
            start = i + 1;
        }
    }
    let tail = &tokens[start..];
    if tail.iter().any(|t| is_word(t)) {
        out.push(tail);
    }
    out
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Vowel-group syllable count with a silent final `e`, never below 1.
///
/// A final `e` is silent unless it is the only vowel group or ends a
/// consonant + `le` cluster (`ta-ble`).
pub fn syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let mut groups = 0;
    let mut in_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !in_vowel {
            groups += 1;
        }
        in_vowel = v;
    }
    let n = letters.len();
    if groups > 1 && n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]) {
        let consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups -= 1;
        }
    }
    groups.max(1)
}
