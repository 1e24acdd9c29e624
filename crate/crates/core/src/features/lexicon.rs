use std::collections::HashSet;
use std::path::{Path, PathBuf};

const VERSION_PREFIX: &str = "# lexicon-version:";

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("reading lexicon {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon {name} has no `{VERSION_PREFIX} <version>` header")]
    MissingVersion { name: String },
    #[error("lexicon {name} is version {found}, others are {expected}")]
    VersionSkew { name: String, expected: String, found: String },
    #[error("lexicon {name} entry {term:?} is not lowercase")]
    NotLowercase { name: String, term: String },
    #[error("{term:?} is listed in both {first} and {second}")]
    Overlap { term: String, first: String, second: String },
}

/// One word list with its version header stripped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordList {
    pub version: String,
    pub terms: HashSet<String>,
}

impl WordList {
    pub fn parse(name: &str, text: &str) -> Result<Self, LexiconError> {
        let mut lines = text.lines();
        let version = lines
            .next()
            .and_then(|l| l.trim().strip_prefix(VERSION_PREFIX))
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| LexiconError::MissingVersion { name: name.to_string() })?;
        let mut terms = HashSet::new();
        for line in lines {
            let term = line.trim();
            if term.is_empty() || term.starts_with('#') {
                continue;
            }
            if term != term.to_lowercase() {
                return Err(LexiconError::NotLowercase {
                    name: name.to_string(),
                    term: term.to_string(),
                });
            }
            terms.insert(term.to_string());
        }
        Ok(Self { version, terms })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.terms.contains(word)
    }
}

/// Every word list the extractor consults. Immutable after load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pub version: String,
    pub hedges: WordList,
    pub certainty: WordList,
    pub contrast: WordList,
    pub subordinators: WordList,
    pub proper_nouns: WordList,
    pub determiners: WordList,
    pub pronouns: WordList,
    pub prepositions: WordList,
    pub conjunctions: WordList,
    pub auxiliaries: WordList,
    pub verbs: WordList,
    pub adjectives: WordList,
    pub adverbs: WordList,
}

pub const LEXICON_NAMES: [&str; 13] = [
    "hedges",
    "certainty",
    "contrast",
    "subordinators",
    "proper_nouns",
    "determiners",
    "pronouns",
    "prepositions",
    "conjunctions",
    "auxiliaries",
    "verbs",
    "adjectives",
    "adverbs",
];

const SHIPPED: [(&str, &str); 13] = [
    ("hedges", include_str!("../../data/lexicons/hedges.txt")),
    ("certainty", include_str!("../../data/lexicons/certainty.txt")),
    ("contrast", include_str!("../../data/lexicons/contrast.txt")),
    ("subordinators", include_str!("../../data/lexicons/subordinators.txt")),
    ("proper_nouns", include_str!("../../data/lexicons/proper_nouns.txt")),
    ("determiners", include_str!("../../data/lexicons/determiners.txt")),
    ("pronouns", include_str!("../../data/lexicons/pronouns.txt")),
    ("prepositions", include_str!("../../data/lexicons/prepositions.txt")),
    ("conjunctions", include_str!("../../data/lexicons/conjunctions.txt")),
    ("auxiliaries", include_str!("../../data/lexicons/auxiliaries.txt")),
    ("verbs", include_str!("../../data/lexicons/verbs.txt")),
    ("adjectives", include_str!("../../data/lexicons/adjectives.txt")),
    ("adverbs", include_str!("../../data/lexicons/adverbs.txt")),
];

impl Lexicons {
    /// The word lists compiled into the binary.
    pub fn shipped() -> Self {
        Self::from_texts(&SHIPPED).expect("shipped lexicons are valid")
    }

    /// Load `<dir>/<name>.txt` for every list.
    pub fn load(dir: &Path) -> Result<Self, LexiconError> {
        let mut texts = Vec::with_capacity(LEXICON_NAMES.len());
        for name in LEXICON_NAMES {
            let path = dir.join(format!("{name}.txt"));
            let text = std::fs::read_to_string(&path).map_err(|source| LexiconError::Io { path, source })?;
            texts.push((name, text));
        }
        let borrowed: Vec<(&str, &str)> = texts.iter().map(|(n, t)| (*n, t.as_str())).collect();
        Self::from_texts(&borrowed)
    }

    /// Write the shipped lists into `dir` so they can be edited and reloaded.
    pub fn write_shipped(dir: &Path) -> Result<(), LexiconError> {
        std::fs::create_dir_all(dir).map_err(|source| LexiconError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (name, text) in SHIPPED {
            let path = dir.join(format!("{name}.txt"));
            std::fs::write(&path, text).map_err(|source| LexiconError::Io { path, source })?;
        }
        Ok(())
    }

    fn from_texts(texts: &[(&str, &str)]) -> Result<Self, LexiconError> {
        let mut lists = Vec::with_capacity(texts.len());
        for (name, text) in texts {
            lists.push(WordList::parse(name, text)?);
        }
        let expected = lists[0].version.clone();
        for (list, (name, _)) in lists.iter().zip(texts) {
            if list.version != expected {
                return Err(LexiconError::VersionSkew {
                    name: name.to_string(),
                    expected,
                    found: list.version.clone(),
                });
            }
        }
        let mut it = lists.into_iter();
        let mut next = || it.next().expect("one list per name");
        let lex = Self {
            version: expected,
            hedges: next(),
            certainty: next(),
            contrast: next(),
            subordinators: next(),
            proper_nouns: next(),
            determiners: next(),
            pronouns: next(),
            prepositions: next(),
            conjunctions: next(),
            auxiliaries: next(),
            verbs: next(),
            adjectives: next(),
            adverbs: next(),
        };
        lex.check_cue_lists_disjoint()?;
        Ok(lex)
    }

    // A word counted as both a hedge and a certainty cue would make the two
    // counts move together; the cue lists must be pairwise disjoint.
    fn check_cue_lists_disjoint(&self) -> Result<(), LexiconError> {
        let cues = [
            ("hedges", &self.hedges),
            ("certainty", &self.certainty),
            ("contrast", &self.contrast),
        ];
        for (i, (a_name, a)) in cues.iter().enumerate() {
            for (b_name, b) in &cues[i + 1..] {
                let mut shared: Vec<&String> = a.terms.intersection(&b.terms).collect();
                shared.sort();
                if let Some(term) = shared.first() {
                    return Err(LexiconError::Overlap {
                        term: term.to_string(),
                        first: a_name.to_string(),
                        second: b_name.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}
