//! Clause-nesting depth proxy and a capitalization-based entity counter.

use std::collections::HashSet;

use super::lexicon::Lexicons;
use super::text::{is_word, sentences, tokenize};

// Question words that open a sentence are interrogatives, not subordinators.
const WH_WORDS: [&str; 9] = ["who", "whom", "whose", "which", "when", "where", "whether", "what", "why"];

fn opens(token: &str) -> Option<char> {
    match token {
        "(" => Some(')'),
        "[" => Some(']'),
        "{" => Some('}'),
        "\u{201c}" => Some('\u{201d}'),
        _ => None,
    }
}

/// Deepest bracket/quote nesting in a token run. Straight double quotes
/// toggle: they close when the innermost open is a straight quote.
fn bracket_depth(tokens: &[String]) -> usize {
    let mut stack: Vec<char> = Vec::new();
    let mut max = 0;
    for tok in tokens {
        if tok == "\"" {
            if stack.last() == Some(&'"') {
                stack.pop();
            } else {
                stack.push('"');
            }
        } else if let Some(close) = opens(tok) {
            stack.push(close);
        } else if let Some(pos) = stack.iter().rposition(|&c| tok.len() == c.len_utf8() && tok.starts_with(c)) {
            stack.truncate(pos);
        }
        max = max.max(stack.len());
    }
    max
}

pub(crate) fn depth_of_tokens(tokens: &[String], lex: &Lexicons) -> usize {
    sentences(tokens)
        .into_iter()
        .map(|sentence| {
            let first_word = sentence.iter().position(|t| is_word(t));
            let subordinators = sentence
                .iter()
                .enumerate()
                .filter(|(i, t)| {
                    let lower = t.to_lowercase();
                    if !lex.subordinators.contains(&lower) {
                        return false;
                    }
                    !(Some(*i) == first_word && WH_WORDS.contains(&lower.as_str()))
                })
                .count();
            1 + subordinators + bracket_depth(sentence)
        })
        .max()
        .unwrap_or(0)
}

/// Per sentence: 1 + subordinators + bracket/quote nesting; the maximum over
/// sentences. Text without words has depth 0.
pub fn syntactic_depth(text: &str, lex: &Lexicons) -> usize {
    depth_of_tokens(&tokenize(text), lex)
}

fn is_capitalized(token: &str) -> bool {
    token.chars().next().is_some_and(char::is_uppercase)
}

fn is_pronoun_i(token: &str) -> bool {
    token == "I" || token.starts_with("I'")
}

fn is_year(token: &str) -> bool {
    token.len() == 4
        && token.bytes().all(|b| b.is_ascii_digit())
        && token.parse::<u32>().is_ok_and(|y| (1000..=2099).contains(&y))
}

pub(crate) fn entities_of_tokens(tokens: &[String], lex: &Lexicons) -> usize {
    let sents = sentences(tokens);
    let firsts: Vec<usize> = sents
        .iter()
        .map(|s| s.iter().position(|t| is_word(t)).unwrap_or(0))
        .collect();
    // Capitalized forms seen anywhere other than a sentence opening.
    let mut seen_mid: HashSet<&str> = HashSet::new();
    for (sentence, first) in sents.iter().zip(&firsts) {
        for (i, tok) in sentence.iter().enumerate() {
            if i != *first && is_capitalized(tok) {
                seen_mid.insert(tok.as_str());
            }
        }
    }
    let mut count = 0;
    for (sentence, first) in sents.iter().zip(&firsts) {
        let mut in_run = false;
        for (i, tok) in sentence.iter().enumerate() {
            if is_year(tok) {
                count += 1;
                in_run = false;
                continue;
            }
            let qualifies = is_capitalized(tok)
                && !is_pronoun_i(tok)
                && (i != *first || lex.proper_nouns.contains(&tok.to_lowercase()) || seen_mid.contains(tok.as_str()));
            if qualifies && !in_run {
                count += 1;
            }
            in_run = qualifies;
        }
    }
    count
}

/// Maximal runs of capitalized tokens plus four-digit years. A
/// sentence-opening word counts only if it is a known proper noun or is also
/// capitalized somewhere mid-sentence.
pub fn named_entity_count(text: &str, lex: &Lexicons) -> usize {
    entities_of_tokens(&tokenize(text), lex)
}
