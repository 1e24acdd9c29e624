//! Deterministic lexicon + suffix-rule part-of-speech tagger.
//!
//! Only nouns, verbs and adjectives are counted downstream; every other
//! class collapses into [`Tag::Other`].

use super::lexicon::Lexicons;
use super::text::{is_terminal, is_word};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Noun,
    Verb,
    Adjective,
    Adverb,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PosCounts {
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
}

const WH_WORDS: [&str; 5] = ["what", "why", "how", "when", "where"];

const ADJ_SUFFIXES: [&str; 9] = ["ous", "ful", "ive", "able", "ible", "al", "ic", "less", "ish"];

fn verb_stem_known(w: &str, lex: &Lexicons) -> bool {
    let mut candidates: Vec<String> = Vec::new();
    if let Some(s) = w.strip_suffix("ies") {
        candidates.push(format!("{s}y"));
    }
    if let Some(s) = w.strip_suffix("es") {
        candidates.push(s.to_string());
    }
    if let Some(s) = w.strip_suffix('s') {
        candidates.push(s.to_string());
    }
    if let Some(s) = w.strip_suffix("ied") {
        candidates.push(format!("{s}y"));
    }
    // Bare -ing forms stay nouns (gerunds) unless an auxiliary precedes them.
    if let Some(s) = w.strip_suffix("ed") {
        candidates.push(s.to_string());
        candidates.push(format!("{s}e"));
        let b = s.as_bytes();
        // Doubled final consonant: stopped -> stop.
        if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
            candidates.push(s[..s.len() - 1].to_string());
        }
    }
    if let Some(s) = w.strip_suffix('d') {
        candidates.push(s.to_string());
    }
    candidates.iter().any(|c| c.len() >= 2 && lex.verbs.contains(c))
}

/// Tag one word given the lowercase previous word (adverbs skipped) and
/// whether it opens its sentence.
fn tag_word(token: &str, prev: Option<&str>, sentence_initial: bool, lex: &Lexicons) -> Tag {
    if !token.chars().any(char::is_alphabetic) {
        return Tag::Other;
    }
    let w = token.to_lowercase();
    if lex.auxiliaries.contains(&w) {
        return Tag::Verb;
    }
    if lex.determiners.contains(&w)
        || lex.pronouns.contains(&w)
        || lex.prepositions.contains(&w)
        || lex.conjunctions.contains(&w)
        || WH_WORDS.contains(&w.as_str())
    {
        return Tag::Other;
    }
    if lex.adverbs.contains(&w) {
        return Tag::Adverb;
    }
    if lex.verbs.contains(&w) {
        return Tag::Verb;
    }
    if lex.adjectives.contains(&w) {
        return Tag::Adjective;
    }
    if !sentence_initial && token.chars().next().is_some_and(char::is_uppercase) {
        return Tag::Noun;
    }
    let after_aux_or_pronoun = prev.is_some_and(|p| lex.auxiliaries.contains(p) || lex.pronouns.contains(p));
    if w.ends_with("ly") {
        return Tag::Adverb;
    }
    if (w.ends_with("ing") || w.ends_with("ed")) && after_aux_or_pronoun {
        return Tag::Verb;
    }
    if w.ends_with('s') && !w.ends_with("ss") && prev.is_some_and(|p| lex.pronouns.contains(p)) {
        return Tag::Verb;
    }
    if verb_stem_known(&w, lex) {
        return Tag::Verb;
    }
    if ADJ_SUFFIXES.iter().any(|s| w.len() > s.len() + 2 && w.ends_with(s)) {
        return Tag::Adjective;
    }
    Tag::Noun
}

/// Tag every token; punctuation tags as [`Tag::Other`].
pub fn tag_tokens(tokens: &[String], lex: &Lexicons) -> Vec<Tag> {
    let mut out = Vec::with_capacity(tokens.len());
    for sentence in split_keeping_all(tokens) {
        let first = sentence.iter().position(|t| is_word(t));
        let mut prev: Option<String> = None;
        for (i, tok) in sentence.iter().enumerate() {
            let tag = tag_word(tok, prev.as_deref(), Some(i) == first, lex);
            out.push(tag);
            if is_word(tok) && tag != Tag::Adverb {
                prev = Some(tok.to_lowercase());
            }
        }
    }
    out
}

// Sentence spans that cover every token, including word-less runs.
fn split_keeping_all(tokens: &[String]) -> Vec<&[String]> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if is_terminal(tok) {
            out.push(&tokens[start..=i]);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        out.push(&tokens[start..]);
    }
    out
}

pub fn pos_counts(tokens: &[String], lex: &Lexicons) -> PosCounts {
    let mut counts = PosCounts::default();
    for tag in tag_tokens(tokens, lex) {
        match tag {
            Tag::Noun => counts.nouns += 1,
            Tag::Verb => counts.verbs += 1,
            Tag::Adjective => counts.adjectives += 1,
            Tag::Adverb | Tag::Other => {}
        }
    }
    counts
}
