//! Tokenization and the word vocabulary.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const PAD: usize = 3;
pub const NUM_RESERVED: usize = 4;
pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<bos>", "<eos>", "<unk>", "<pad>"];

/// A lowercase word containing at least one alphanumeric character.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    /// Validates and wraps `s`; returns `None` if it is not a clean token.
    pub fn new(s: &str) -> Option<Self> {
        let ok = s.chars().any(char::is_alphanumeric) && s.to_lowercase() == s;
        ok.then(|| Token(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Splits on whitespace, trims non-alphanumeric characters from both ends of
/// each fragment (inner hyphens and apostrophes survive), drops fragments with
/// no alphanumeric character, and lowercases.
pub fn tokenize(raw: &str) -> Vec<Token> {
    raw.split_whitespace()
        .filter_map(|frag| {
            let trimmed = frag.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(Token(trimmed.to_lowercase()))
            }
        })
        .collect()
}

/// [`tokenize`] returning plain strings.
pub fn tokenize_words(raw: &str) -> Vec<String> {
    tokenize(raw).into_iter().map(Token::into_string).collect()
}

/// Word vocabulary with four reserved ids (`<bos>`, `<eos>`, `<unk>`, `<pad>`)
/// followed by retained tokens in descending frequency, ties broken
/// lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<C: AsRef<[S]>, S: AsRef<str>>(captions: &[C], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::Config("vocab min_count must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for cap in captions {
            for t in cap.as_ref() {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Vocabulary from non-reserved tokens in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut ids = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens: all, ids })
    }

    /// Vocabulary size including reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.get(token).is_some_and(|&i| i >= NUM_RESERVED)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    /// `<bos>`, token ids (unknown words map to `<unk>`), `<eos>`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut out = Vec::with_capacity(tokens.len() + 2);
        out.push(BOS);
        out.extend(tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)));
        out.push(EOS);
        out
    }

    /// Token ids without the sentence markers.
    pub fn encode_words<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    /// Maps ids back to tokens, dropping `<bos>`, `<eos>` and `<pad>`.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .filter(|&&i| !matches!(i, BOS | EOS | PAD))
            .map(|&i| {
                self.token(i).map(str::to_string).ok_or(Error::TokenId {
                    id: i,
                    size: self.len(),
                })
            })
            .collect()
    }

    /// One token per line, reserved tokens first; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, want) in RESERVED_TOKENS.iter().enumerate() {
            if lines.get(i) != Some(want) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected reserved token `{want}`"),
                });
            }
        }
        Self::from_tokens(lines[NUM_RESERVED..].iter().map(|s| s.to_string())).map_err(|e| {
            Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: e.to_string(),
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, path)
    }
}
