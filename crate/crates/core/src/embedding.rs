//! Word vectors and the sparse word-similarity matrix.
//!
//! Vectors load from the word2vec text format. The similarity matrix holds
//! clipped cosine similarities between all vocabulary tokens and is the `S`
//! in the soft cosine measure. Two instances are built per pipeline run,
//! one per embedding source, and their score runs are merged downstream.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::Error;
use crate::Result;

/// Token vectors from one embedding source.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    pub dimension: usize,
    pub entries: HashMap<String, Vec<f64>>,
    /// Identifies the embedding source, e.g. "general-corpus".
    pub label: String,
    /// Tokens that appeared more than once in the file; last entry wins.
    pub duplicates_replaced: usize,
}

impl WordVectorTable {
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }
}

/// Loads word2vec text format: a `<count> <dimension>` header line, then one
/// `token v1 .. vd` line per word. The header count is advisory; the
/// dimension is enforced on every line. Non-finite components are an error.
pub fn load_vectors(path: &Path, label: &str) -> Result<WordVectorTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty vector file"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::parse(path, 1, format!("expected '<count> <dimension>' header, found {header:?}")));
    }
    let dimension: usize = parts[1]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("bad dimension: {:?}", parts[1])))?;
    if dimension == 0 {
        return Err(Error::parse(path, 1, "dimension must be positive"));
    }

    let mut entries: HashMap<String, Vec<f64>> = HashMap::new();
    let mut duplicates_replaced = 0;
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap().to_string();
        let values: Vec<f64> = fields
            .map(|v| v.parse::<f64>().map_err(|_| Error::parse(path, idx + 1, format!("bad component: {v:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != dimension {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("token {token:?} has {} components, expected {dimension}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, idx + 1, format!("non-finite component for token {token:?}")));
        }
        if entries.insert(token, values).is_some() {
            duplicates_replaced += 1;
        }
    }

    Ok(WordVectorTable { dimension, entries, label: label.to_string(), duplicates_replaced })
}

/// Cosine similarity between two vectors of equal dimension.
///
/// Bitwise-identical nonzero vectors return exactly 1.0; a zero vector is an
/// error because its direction is undefined.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    if u == v {
        return Ok(1.0);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Hook for supplying vectors to tokens missing from the table (for example
/// a subword composer). Tokens it declines keep an identity row.
pub trait SubwordComposer: Sync {
    fn compose(&self, token: &str) -> Option<Vec<f64>>;
}

/// Sparse symmetric word-similarity matrix over a fixed vocabulary.
///
/// Token ids are positions in `vocabulary`. The diagonal is an implicit 1.0
/// for every token; off-diagonal entries hold `max(cosine, 0)` clamped to
/// [0, 1] and are stored only when positive and at least `floor`. Tokens
/// without a vector keep an identity row and contribute nothing
/// off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WordSimilarityMatrix {
    vocabulary: Vec<String>,
    token_ids: HashMap<String, u32>,
    /// Off-diagonal neighbors per row, sorted by column id. Symmetric:
    /// (i, j, v) stored implies (j, i, v) stored.
    rows: Vec<Vec<(u32, f64)>>,
    pub floor: f64,
    pub label: String,
}

impl WordSimilarityMatrix {
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_ids.get(token).copied()
    }

    /// Off-diagonal stored neighbors of token `i`, sorted by column.
    pub fn row(&self, i: u32) -> &[(u32, f64)] {
        &self.rows[i as usize]
    }

    pub fn entry(&self, i: u32, j: u32) -> f64 {
        if i == j {
            return 1.0;
        }
        match self.rows[i as usize].binary_search_by(|probe| probe.0.cmp(&j)) {
            Ok(pos) => self.rows[i as usize][pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn stored_entries(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Builds a matrix from an explicit dense array. The array must be
    /// symmetric with a unit diagonal and values in [0, 1]; entries below
    /// `floor` (and zeros) are not stored.
    pub fn from_dense(
        vocabulary: &[String],
        dense: &[Vec<f64>],
        floor: f64,
        label: &str,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&floor) {
            return Err(Error::invalid(format!("similarity floor must be in [0, 1], got {floor}")));
        }
        if dense.len() != vocabulary.len() || dense.iter().any(|r| r.len() != vocabulary.len()) {
            return Err(Error::invalid("dense similarity array is not square over the vocabulary".to_string()));
        }
        let mut token_ids = HashMap::with_capacity(vocabulary.len());
        for (i, tok) in vocabulary.iter().enumerate() {
            if token_ids.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId { kind: "vocabulary token", id: tok.clone() });
            }
        }
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); vocabulary.len()];
        for (i, row) in dense.iter().enumerate() {
            if row[i] != 1.0 {
                return Err(Error::invalid(format!("diagonal entry {i} is {}, expected 1", row[i])));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("similarity entry ({i}, {j}) out of range: {v}")));
                }
                if v != dense[j][i] {
                    return Err(Error::invalid(format!("similarity entry ({i}, {j}) is not symmetric")));
                }
                if i != j && v > 0.0 && v >= floor {
                    rows[i].push((j as u32, v));
                }
            }
        }
        Ok(WordSimilarityMatrix {
            vocabulary: vocabulary.to_vec(),
            token_ids,
            rows,
            floor,
            label: label.to_string(),
        })
    }
}

/// Builds the similarity matrix for `vocabulary` from `table`.
/// See [`build_similarity_matrix_with`] for the OOV hook variant.
pub fn build_similarity_matrix(
    table: &WordVectorTable,
    vocabulary: &[String],
    floor: f64,
) -> Result<WordSimilarityMatrix> {
    build_similarity_matrix_with(table, vocabulary, floor, None)
}

/// Builds the matrix, consulting `composer` for tokens missing from the
/// table. Tokens that stay vectorless (or have a zero vector) get identity
/// rows. Pair similarities are computed in parallel; assembly order is
/// fixed, so the result does not depend on thread count.
pub fn build_similarity_matrix_with(
    table: &WordVectorTable,
    vocabulary: &[String],
    floor: f64,
    composer: Option<&dyn SubwordComposer>,
) -> Result<WordSimilarityMatrix> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::invalid(format!("similarity floor must be in [0, 1], got {floor}")));
    }
    let mut token_ids = HashMap::with_capacity(vocabulary.len());
    for (i, tok) in vocabulary.iter().enumerate() {
        if token_ids.insert(tok.clone(), i as u32).is_some() {
            return Err(Error::DuplicateId { kind: "vocabulary token", id: tok.clone() });
        }
    }

    // Resolve each token to a vector once. Composed vectors must match the
    // table dimension and be finite; zero vectors degrade to identity rows.
    let mut vectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(vocabulary.len());
    for tok in vocabulary {
        let vec = match table.get(tok) {
            Some(v) => Some(v.to_vec()),
            None => match composer.and_then(|c| c.compose(tok)) {
                Some(v) => {
                    if v.len() != table.dimension {
                        return Err(Error::DimensionMismatch { expected: table.dimension, got: v.len() });
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite(format!("composed vector for {tok:?}")));
                    }
                    Some(v)
                }
                None => None,
            },
        };
        let vec = vec.filter(|v| v.iter().any(|x| *x != 0.0));
        vectors.push(vec);
    }
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.as_ref().map_or(0.0, |v| v.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect();

    // Upper triangle per row, in parallel; ordered collect keeps assembly
    // deterministic.
    let upper: Vec<Vec<(u32, f64)>> = (0..vocabulary.len())
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            let Some(vi) = &vectors[i] else { return out };
            for j in (i + 1)..vocabulary.len() {
                let Some(vj) = &vectors[j] else { continue };
                let value = if vi == vj {
                    1.0
                } else {
                    let dot: f64 = vi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    (dot / (norms[i] * norms[j])).clamp(0.0, 1.0)
                };
                if value > 0.0 && value >= floor {
                    out.push((j as u32, value));
                }
            }
            out
        })
        .collect();

    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); vocabulary.len()];
    for (i, entries) in upper.into_iter().enumerate() {
        for (j, value) in entries {
            rows[i].push((j, value));
            rows[j as usize].push((i as u32, value));
        }
    }
    // Mirrored entries arrive in ascending order on both sides; rows built
    // this way need one final ordering fix for the interleaving of mirrored
    // and own entries.
    for row in &mut rows {
        row.sort_unstable_by_key(|&(j, _)| j);
    }

    Ok(WordSimilarityMatrix {
        vocabulary: vocabulary.to_vec(),
        token_ids,
        rows,
        floor,
        label: table.label.clone(),
    })
}

// ---------------------------------------------------------------------------
// Binary cache
// ---------------------------------------------------------------------------

const SIM_MAGIC: &[u8; 5] = b"PXSIM";
const SIM_VERSION: u32 = 1;

impl WordSimilarityMatrix {
    /// Writes the matrix in the versioned binary cache format. Exact: f64
    /// bits are preserved.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(SIM_MAGIC).map_err(io)?;
        w.write_all(&SIM_VERSION.to_le_bytes()).map_err(io)?;
        write_str(&mut w, &self.label).map_err(io)?;
        w.write_all(&self.floor.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.vocabulary.len() as u32).to_le_bytes()).map_err(io)?;
        for tok in &self.vocabulary {
            write_str(&mut w, tok).map_err(io)?;
        }
        for row in &self.rows {
            w.write_all(&(row.len() as u32).to_le_bytes()).map_err(io)?;
            for &(j, v) in row {
                w.write_all(&j.to_le_bytes()).map_err(io)?;
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);

        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != SIM_MAGIC {
            return Err(Error::invalid(format!("{}: not a similarity matrix cache", path.display())));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != SIM_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported cache version {version}, expected {SIM_VERSION}",
                path.display()
            )));
        }
        let label = read_str(&mut r).map_err(io)?;
        let floor = f64::from_le_bytes(read_array(&mut r).map_err(io)?);
        let vocab_len = read_u32(&mut r).map_err(io)? as usize;
        let mut vocabulary = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            vocabulary.push(read_str(&mut r).map_err(io)?);
        }
        let mut rows = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let n = read_u32(&mut r).map_err(io)? as usize;
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                let j = read_u32(&mut r).map_err(io)?;
                let v = f64::from_le_bytes(read_array(&mut r).map_err(io)?);
                row.push((j, v));
            }
            rows.push(row);
        }
        let token_ids = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(WordSimilarityMatrix { vocabulary, token_ids, rows, floor, label })
    }
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_array<R: Read, const N: usize>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(entries: &[(&str, &[f64])]) -> WordVectorTable {
        WordVectorTable {
            dimension: entries.first().map_or(2, |(_, v)| v.len()),
            entries: entries.iter().map(|(t, v)| (t.to_string(), v.to_vec())).collect(),
            label: "test".to_string(),
            duplicates_replaced: 0,
        }
    }

    fn vocab(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn cosine_identical_is_exactly_one() {
        let v = vec![0.1, 0.2, 0.7, -0.3];
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn cosine_orthogonal_and_diagonal() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let got = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((got - 0.7071067811865475).abs() <= 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_vector_and_mismatch() {
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(), Error::ZeroVector));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn load_vectors_basic() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "2 3\nlaser 0.5 0.25 -0.125\nbeam 1 0 0\n").unwrap();
        f.flush().unwrap();
        let t = load_vectors(f.path(), "general").unwrap();
        assert_eq!(t.dimension, 3);
        assert_eq!(t.label, "general");
        assert_eq!(t.get("laser").unwrap(), &[0.5, 0.25, -0.125]);
        assert_eq!(t.duplicates_replaced, 0);
    }

    #[test]
    fn load_vectors_rejects_nan() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "1 2\nlaser NaN 0.5\n").unwrap();
        f.flush().unwrap();
        let err = load_vectors(f.path(), "x").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn load_vectors_rejects_dimension_mismatch_with_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "2 3\nlaser 1 2 3\nbeam 1 2\n").unwrap();
        f.flush().unwrap();
        let err = load_vectors(f.path(), "x").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_vectors_duplicate_last_wins() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "3 2\nlaser 1 0\nbeam 0 1\nlaser 0 2\n").unwrap();
        f.flush().unwrap();
        let t = load_vectors(f.path(), "x").unwrap();
        assert_eq!(t.duplicates_replaced, 1);
        assert_eq!(t.get("laser").unwrap(), &[0.0, 2.0]);
    }

    #[test]
    fn load_vectors_round_trips_many_tokens() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "100 4").unwrap();
        for i in 0..100 {
            writeln!(f, "tok{i} {} {} {} {}", i as f64 * 0.25, -(i as f64), 0.5, i as f64 / 3.0).unwrap();
        }
        f.flush().unwrap();
        let t = load_vectors(f.path(), "x").unwrap();
        assert_eq!(t.entries.len(), 100);
        assert_eq!(t.get("tok42").unwrap(), &[10.5, -42.0, 0.5, 14.0]);
    }

    #[test]
    fn single_token_matrix_is_identity() {
        let t = table(&[("laser", &[1.0, 0.0])]);
        let m = build_similarity_matrix(&t, &vocab(&["laser"]), 0.0).unwrap();
        assert_eq!(m.entry(0, 0), 1.0);
        assert_eq!(m.stored_entries(), 0);
    }

    #[test]
    fn identical_vectors_give_unit_off_diagonal() {
        let t = table(&[("laser", &[0.3, 0.4]), ("maser", &[0.3, 0.4])]);
        let m = build_similarity_matrix(&t, &vocab(&["laser", "maser"]), 0.0).unwrap();
        assert_eq!(m.entry(0, 1), 1.0);
        assert_eq!(m.entry(1, 0), 1.0);
    }

    #[test]
    fn negative_cosine_clips_to_zero_and_is_not_stored() {
        let t = table(&[("up", &[1.0, 0.0]), ("down", &[-1.0, 0.0])]);
        let m = build_similarity_matrix(&t, &vocab(&["up", "down"]), 0.0).unwrap();
        assert_eq!(m.entry(0, 1), 0.0);
        assert_eq!(m.stored_entries(), 0);
    }

    #[test]
    fn oov_token_gets_identity_row() {
        let t = table(&[("laser", &[1.0, 0.0])]);
        let m = build_similarity_matrix(&t, &vocab(&["laser", "unseen"]), 0.0).unwrap();
        assert_eq!(m.entry(1, 1), 1.0);
        assert_eq!(m.entry(0, 1), 0.0);
        assert!(m.row(1).is_empty());
    }

    #[test]
    fn floor_drops_weak_entries() {
        // cos(a,b) = 0.6 exactly, cos(a,c) = 0.8, cos(b,c) = 0.96.
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.6, 0.8]), ("c", &[0.8, 0.6])]);
        let m = build_similarity_matrix(&t, &vocab(&["a", "b", "c"]), 0.7).unwrap();
        assert_eq!(m.entry(0, 1), 0.0);
        for i in 0..3u32 {
            for (_, v) in m.row(i) {
                assert!(*v >= 0.7);
            }
        }
    }

    #[test]
    fn duplicate_vocabulary_token_is_rejected() {
        let t = table(&[("a", &[1.0, 0.0])]);
        let err = build_similarity_matrix(&t, &vocab(&["a", "a"]), 0.0).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { .. }));
    }

    struct PrefixComposer;
    impl SubwordComposer for PrefixComposer {
        fn compose(&self, token: &str) -> Option<Vec<f64>> {
            token.starts_with("las").then(|| vec![1.0, 0.0])
        }
    }

    #[test]
    fn composer_hook_fills_oov() {
        let t = table(&[("laser", &[1.0, 0.0])]);
        let m =
            build_similarity_matrix_with(&t, &vocab(&["laser", "lasing", "other"]), 0.0, Some(&PrefixComposer))
                .unwrap();
        assert_eq!(m.entry(0, 1), 1.0); // composed vector equals laser's
        assert_eq!(m.entry(0, 2), 0.0); // declined token stays identity
    }

    #[test]
    fn twenty_token_matrix_matches_dense_oracle() {
        // Deterministic vectors; oracle recomputes every pair with the
        // scalar cosine and applies clip/floor by hand.
        let toks: Vec<String> = (0..20).map(|i| format!("t{i:02}")).collect();
        let entries: Vec<(String, Vec<f64>)> = toks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let x = i as f64;
                (t.clone(), vec![(x * 0.7).sin(), (x * 0.3).cos(), ((x - 7.0) * 0.2).sin()])
            })
            .collect();
        let t = WordVectorTable {
            dimension: 3,
            entries: entries.into_iter().collect(),
            label: "oracle".to_string(),
            duplicates_replaced: 0,
        };
        let floor = 0.4;
        let m = build_similarity_matrix(&t, &toks, floor).unwrap();
        for i in 0..20u32 {
            for j in 0..20u32 {
                let expected = if i == j {
                    1.0
                } else {
                    let c = cosine(t.get(&toks[i as usize]).unwrap(), t.get(&toks[j as usize]).unwrap())
                        .unwrap()
                        .clamp(0.0, 1.0);
                    if c >= floor {
                        c
                    } else {
                        0.0
                    }
                };
                assert!((m.entry(i, j) - expected).abs() <= 1e-9, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn binary_cache_round_trips_exactly() {
        let t = table(&[("a", &[3.0, 4.0]), ("b", &[4.0, 3.0]), ("c", &[1.0, 0.5])]);
        let m = build_similarity_matrix(&t, &vocab(&["a", "b", "c"]), 0.1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save_binary(f.path()).unwrap();
        let back = WordSimilarityMatrix::load_binary(f.path()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn binary_cache_rejects_foreign_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "definitely not a cache").unwrap();
        f.flush().unwrap();
        assert!(WordSimilarityMatrix::load_binary(f.path()).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_table(max_tokens: usize) -> impl Strategy<Value = (WordVectorTable, Vec<String>)> {
            let dim = 4usize;
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim..=dim), 2..max_tokens).prop_map(
                move |vecs| {
                    let vocabulary: Vec<String> = (0..vecs.len()).map(|i| format!("w{i:03}")).collect();
                    let entries = vocabulary.iter().cloned().zip(vecs).collect();
                    (
                        WordVectorTable { dimension: dim, entries, label: "prop".to_string(), duplicates_replaced: 0 },
                        vocabulary,
                    )
                },
            )
        }

        proptest! {
            #[test]
            fn matrix_is_symmetric_with_unit_diagonal((table, vocabulary) in arb_table(24), floor in 0.0f64..0.9) {
                let m = build_similarity_matrix(&table, &vocabulary, floor).unwrap();
                let n = vocabulary.len() as u32;
                for i in 0..n {
                    prop_assert_eq!(m.entry(i, i), 1.0);
                    for j in 0..n {
                        let v = m.entry(i, j);
                        prop_assert_eq!(v, m.entry(j, i));
                        prop_assert!((0.0..=1.0).contains(&v));
                        if i != j && v != 0.0 {
                            prop_assert!(v >= floor);
                        }
                    }
                }
            }

            #[test]
            fn binary_round_trip_is_exact((table, vocabulary) in arb_table(16), floor in 0.0f64..0.5) {
                let m = build_similarity_matrix(&table, &vocabulary, floor).unwrap();
                let f = tempfile::NamedTempFile::new().unwrap();
                m.save_binary(f.path()).unwrap();
                let back = WordSimilarityMatrix::load_binary(f.path()).unwrap();
                prop_assert_eq!(m, back);
            }
        }
    }
}
