//! Text preparation for patent abstracts and task statements.
//!
//! Abstracts go through [`strip_brackets`] then [`normalize`]; task
//! statements go through [`strip_tool_clause`] then [`normalize`]. The
//! bracket pass removes parenthetical noise (reference numerals, inline
//! abbreviations); the tool-clause pass removes trailing ", using ..."
//! instrument listings from task statements so queries describe the work,
//! not the tool.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// A normalized document: lowercase alphanumeric tokens in original order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

/// Lowercased stopword set. Tokens present here are dropped by
/// [`normalize`].
#[derive(Debug, Clone, Default)]
pub struct StopwordSet {
    words: HashSet<String>,
}

const DEFAULT_STOPWORDS: &str = include_str!("default_stopwords.txt");

impl StopwordSet {
    /// The bundled list of 318 common English words.
    pub fn default_english() -> Self {
        Self::from_lines(DEFAULT_STOPWORDS.lines())
    }

    /// Loads one lowercase token per line; blank lines are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut words = HashSet::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let w = line.trim();
            if !w.is_empty() {
                words.insert(w.to_lowercase());
            }
        }
        Ok(Self { words })
    }

    pub fn from_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Self {
        Self { words: lines.map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()).collect() }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Removes every maximal balanced `()`, `[]` or `{}` span, brackets
/// included. Surrounding text is untouched, so removal can leave doubled
/// whitespace; [`normalize`] absorbs it. Unbalanced brackets are left in
/// place and fall out later as non-alphanumeric characters.
pub fn strip_brackets(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut removed = vec![false; chars.len()];
    // (expected closer, opener position)
    let mut stack: Vec<(char, usize)> = Vec::new();

    for (i, &c) in chars.iter().enumerate() {
        match c {
            '(' => stack.push((')', i)),
            '[' => stack.push((']', i)),
            '{' => stack.push(('}', i)),
            ')' | ']' | '}' => {
                if let Some(&(expected, start)) = stack.last() {
                    if expected == c {
                        stack.pop();
                        for slot in &mut removed[start..=i] {
                            *slot = true;
                        }
                    }
                    // Mismatched closer inside an open span: leave it; it is
                    // removed if an enclosing span completes, else kept.
                }
            }
            _ => {}
        }
    }

    chars
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(&c, _)| c)
        .collect()
}

/// Default trigger for [`strip_tool_clause`].
pub const TOOL_CLAUSE_TRIGGERS: &[&str] = &[", using "];

/// Removes the clause starting at the first trigger (ASCII
/// case-insensitive) in each sentence, up to but not including the sentence
/// terminator (`.`, `!`, `?`) or end of text. With the default trigger,
/// "Cut metal, using saws, to length" becomes "Cut metal".
pub fn strip_tool_clause(text: &str, triggers: &[&str]) -> String {
    // ASCII lowercasing preserves byte offsets, so positions found in
    // `lower` index `text` directly.
    let lower = text.to_ascii_lowercase();
    let lower_bytes = lower.as_bytes();
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;

    while i < bytes.len() {
        // Sentence extends to the terminator or end of text.
        let sentence_end = lower_bytes[i..]
            .iter()
            .position(|&b| b == b'.' || b == b'!' || b == b'?')
            .map(|p| i + p)
            .unwrap_or(bytes.len());

        let sentence = &lower[i..sentence_end];
        let cut = triggers
            .iter()
            .filter_map(|t| sentence.find(&t.to_ascii_lowercase()))
            .min()
            .map(|p| i + p)
            .unwrap_or(sentence_end);

        out.push_str(&text[i..cut]);
        if sentence_end < bytes.len() {
            // Keep the terminator character itself.
            out.push_str(&text[sentence_end..sentence_end + 1]);
            i = sentence_end + 1;
        } else {
            i = bytes.len();
        }
    }
    out
}

/// Lowercases, splits on non-alphanumeric characters, and drops tokens
/// shorter than two characters as well as stopwords. Applying it to its own
/// (space-joined) output changes nothing.
pub fn normalize(doc_id: &str, text: &str, stopwords: &StopwordSet) -> TokenizedDoc {
    let tokens = tokenize(text, stopwords);
    TokenizedDoc { doc_id: doc_id.to_string(), tokens }
}

/// Token stream behind [`normalize`], usable without a document id.
pub fn tokenize(text: &str, stopwords: &StopwordSet) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .filter(|t| !stopwords.contains(t))
        .map(str::to_string)
        .collect()
}
