//! Document-frequency statistics and sparse tf-idf vectors.
//!
//! Statistics are built once over the patent corpus. Before scoring, the
//! vocabulary is extended with query tokens (df 1 for tokens the corpus
//! never saw), producing the shared id space used by both the document
//! vectors and the word-similarity matrix.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::embedding::{read_array, read_str, read_u32, write_str};
use crate::error::Error;
use crate::textprep::TokenizedDoc;
use crate::Result;

/// Corpus vocabulary with document frequencies.
///
/// Token ids are assigned in lexicographic token order and index
/// `vocabulary` and `doc_freq` alike.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    vocabulary: Vec<String>,
    token_ids: HashMap<String, u32>,
    doc_count: usize,
    doc_freq: Vec<u32>,
}

/// Sparse vector of (token id, weight), sorted by id, zero weights absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl CorpusStats {
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_ids.get(token).copied()
    }

    /// Document frequency by token id.
    pub fn doc_freq(&self, id: u32) -> u32 {
        self.doc_freq[id as usize]
    }

    /// Returns a copy whose vocabulary additionally covers every token of
    /// `extra_docs`. New tokens get document frequency 1, the convention for
    /// query tokens the corpus never saw. Ids are reassigned (lexicographic
    /// order over the union); `doc_count` is unchanged.
    pub fn with_extended_vocabulary<'a>(&self, extra_docs: impl Iterator<Item = &'a TokenizedDoc>) -> CorpusStats {
        let mut df: HashMap<String, u32> = self
            .vocabulary
            .iter()
            .cloned()
            .zip(self.doc_freq.iter().copied())
            .collect();
        for doc in extra_docs {
            for tok in &doc.tokens {
                df.entry(tok.clone()).or_insert(1);
            }
        }
        Self::from_df_map(df, self.doc_count)
    }

    fn from_df_map(df: HashMap<String, u32>, doc_count: usize) -> CorpusStats {
        let mut vocabulary: Vec<String> = df.keys().cloned().collect();
        vocabulary.sort_unstable();
        let doc_freq: Vec<u32> = vocabulary.iter().map(|t| df[t]).collect();
        let token_ids = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        CorpusStats { vocabulary, token_ids, doc_count, doc_freq }
    }
}

/// Counts document frequencies over the corpus. A document contributes at
/// most once per token. Errors on an empty corpus.
pub fn build_stats(docs: &[TokenizedDoc]) -> Result<CorpusStats> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("corpus has no documents"));
    }

    // Per-chunk partial counts merged in fixed chunk order. Counts are
    // integers, so this is deterministic regardless of thread count.
    let partials: Vec<HashMap<String, u32>> = docs
        .par_chunks(1024)
        .map(|chunk| {
            let mut df: HashMap<String, u32> = HashMap::new();
            let mut seen: Vec<&str> = Vec::new();
            for doc in chunk {
                seen.clear();
                seen.extend(doc.tokens.iter().map(String::as_str));
                seen.sort_unstable();
                seen.dedup();
                for tok in &seen {
                    *df.entry(tok.to_string()).or_insert(0) += 1;
                }
            }
            df
        })
        .collect();

    let mut df: HashMap<String, u32> = HashMap::new();
    for partial in partials {
        for (tok, n) in partial {
            *df.entry(tok).or_insert(0) += n;
        }
    }
    Ok(CorpusStats::from_df_map(df, docs.len()))
}

/// Builds the tf-idf vector of `doc` in the id space of `stats`.
///
/// Weight = term count x ln(N / df). Tokens whose df equals N weigh zero
/// and are not stored. Every doc token must be in the stats vocabulary;
/// extend the vocabulary first for query documents.
pub fn tfidf_vector(doc: &TokenizedDoc, stats: &CorpusStats) -> Result<SparseVector> {
    weigh_tokens(&doc.tokens, stats)
}

/// Token-slice variant of [`tfidf_vector`].
pub fn weigh_tokens(tokens: &[String], stats: &CorpusStats) -> Result<SparseVector> {
    let mut counts: HashMap<u32, u32> = HashMap::with_capacity(tokens.len());
    for tok in tokens {
        let id = stats
            .token_id(tok)
            .ok_or_else(|| Error::UnknownEntity { kind: "token", id: tok.clone() })?;
        *counts.entry(id).or_insert(0) += 1;
    }
    let n = stats.doc_count as f64;
    let mut entries: Vec<(u32, f64)> = counts
        .into_iter()
        .filter_map(|(id, tf)| {
            let idf = (n / stats.doc_freq(id) as f64).ln();
            let w = tf as f64 * idf;
            (w != 0.0).then_some((id, w))
        })
        .collect();
    entries.sort_unstable_by_key(|&(id, _)| id);
    Ok(SparseVector { entries })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

const STATS_MAGIC: &[u8; 5] = b"PXSTA";
const STATS_VERSION: u32 = 1;

impl CorpusStats {
    /// Inspection export: one `token<TAB>id<TAB>df` row per token.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "token\tid\tdf").map_err(|e| Error::io(path, e))?;
        for (i, tok) in self.vocabulary.iter().enumerate() {
            writeln!(w, "{tok}\t{i}\t{}", self.doc_freq[i]).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Full binary serialization, including the document count the TSV
    /// export lacks.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(STATS_MAGIC).map_err(io)?;
        w.write_all(&STATS_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.doc_count as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.vocabulary.len() as u32).to_le_bytes()).map_err(io)?;
        for (i, tok) in self.vocabulary.iter().enumerate() {
            write_str(&mut w, tok).map_err(io)?;
            w.write_all(&self.doc_freq[i].to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != STATS_MAGIC {
            return Err(Error::invalid(format!("{}: not a corpus stats cache", path.display())));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != STATS_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported cache version {version}, expected {STATS_VERSION}",
                path.display()
            )));
        }
        let doc_count = u64::from_le_bytes(read_array(&mut r).map_err(io)?) as usize;
        let n = read_u32(&mut r).map_err(io)? as usize;
        let mut vocabulary = Vec::with_capacity(n);
        let mut doc_freq = Vec::with_capacity(n);
        for _ in 0..n {
            vocabulary.push(read_str(&mut r).map_err(io)?);
            doc_freq.push(read_u32(&mut r).map_err(io)?);
        }
        let token_ids = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(CorpusStats { vocabulary, token_ids, doc_count, doc_freq })
    }
}
