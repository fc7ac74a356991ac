//! Soft cosine scoring of task queries against patent abstracts.
//!
//! A task query is the token multiset of its work activity's member tasks
//! with the focal task oversampled. Every query is scored against every
//! patent; a run keeps only scores strictly above mean + k sigma of all
//! computed scores. Two runs (one per embedding) merge into the final
//! task-patent matrix, averaging scores where both runs kept an entry.
//!
//! Scoring is parallel over fixed-size patent blocks and reduces partials
//! in block order, so results are bit-identical for any thread count.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::embedding::{read_array, read_str, read_u32, write_str, WordSimilarityMatrix};
use crate::error::Error;
use crate::numeric::Moments;
use crate::textprep::TokenizedDoc;
use crate::tfidf::{weigh_tokens, CorpusStats, SparseVector};
use crate::Result;

/// Patents per scoring block. Fixed: block boundaries define the reduction
/// order, so this must not depend on thread count.
const SCORE_BLOCK: usize = 256;

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

/// Token multiset representing one task within its work activity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskQuery {
    pub task_id: String,
    pub dwa_id: String,
    /// Member-task tokens once each, plus `oversample - 1` extra copies of
    /// the focal task's tokens.
    pub tokens: Vec<String>,
}

/// Default oversampling factor: the focal task appears as often as the
/// activity has members, but at least twice.
pub fn default_oversample(member_count: usize) -> usize {
    member_count.max(2)
}

/// Assembles the query for `focal_task_id` within `dwa`. `task_tokens` maps
/// task ids to their normalized tokens; every member must be present.
/// `oversample` of `None` applies [`default_oversample`].
pub fn build_query(
    focal_task_id: &str,
    dwa: &crate::corpus::DwaRecord,
    task_tokens: &HashMap<String, Vec<String>>,
    oversample: Option<usize>,
) -> Result<TaskQuery> {
    if !dwa.member_task_ids.iter().any(|t| t == focal_task_id) {
        return Err(Error::invalid(format!(
            "task {focal_task_id} is not a member of dwa {}",
            dwa.dwa_id
        )));
    }
    let k = oversample.unwrap_or_else(|| default_oversample(dwa.member_task_ids.len()));
    if k < 1 {
        return Err(Error::invalid("oversample factor must be at least 1".to_string()));
    }

    let mut tokens = Vec::new();
    for member in &dwa.member_task_ids {
        let toks = task_tokens
            .get(member)
            .ok_or_else(|| Error::UnknownEntity { kind: "task", id: member.clone() })?;
        tokens.extend_from_slice(toks);
    }
    let focal = &task_tokens[focal_task_id];
    for _ in 1..k {
        tokens.extend_from_slice(focal);
    }
    Ok(TaskQuery { task_id: focal_task_id.to_string(), dwa_id: dwa.dwa_id.clone(), tokens })
}

// ---------------------------------------------------------------------------
// Soft cosine
// ---------------------------------------------------------------------------

/// u' S v over sparse vectors, summed in ascending token-id order.
fn quadratic_form(u: &SparseVector, v: &SparseVector, m: &WordSimilarityMatrix) -> f64 {
    let mut acc = 0.0;
    for &(i, ui) in &u.entries {
        // Implicit unit diagonal.
        if let Ok(pos) = v.entries.binary_search_by(|probe| probe.0.cmp(&i)) {
            acc += ui * v.entries[pos].1;
        }
        // Stored off-diagonal neighbors of i intersected with v.
        let row = m.row(i);
        let (mut a, mut b) = (0, 0);
        while a < row.len() && b < v.entries.len() {
            match row[a].0.cmp(&v.entries[b].0) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += ui * row[a].1 * v.entries[b].1;
                    a += 1;
                    b += 1;
                }
            }
        }
    }
    acc
}

/// Soft cosine similarity q' S d / sqrt(q' S q * d' S d), clamped to [0, 1].
/// Either argument having zero norm under S yields 0 rather than an error.
pub fn soft_cosine(q: &SparseVector, d: &SparseVector, m: &WordSimilarityMatrix) -> f64 {
    let qq = quadratic_form(q, q, m);
    let dd = quadratic_form(d, d, m);
    if qq <= 0.0 || dd <= 0.0 {
        return 0.0;
    }
    let qd = quadratic_form(q, d, m);
    (qd / (qq.sqrt() * dd.sqrt())).clamp(0.0, 1.0)
}

/// S q as a sorted sparse vector. Contributions to each output component
/// accumulate in ascending input-id order, keeping the result deterministic.
fn expand(q: &SparseVector, m: &WordSimilarityMatrix) -> SparseVector {
    let mut acc: HashMap<u32, f64> = HashMap::with_capacity(q.entries.len() * 4);
    for &(i, qi) in &q.entries {
        *acc.entry(i).or_insert(0.0) += qi;
        for &(j, s) in m.row(i) {
            *acc.entry(j).or_insert(0.0) += qi * s;
        }
    }
    let mut entries: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, v)| v != 0.0).collect();
    entries.sort_unstable_by_key(|&(id, _)| id);
    SparseVector { entries }
}

/// Dot product of two sorted sparse vectors.
fn sparse_dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let mut acc = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.entries.len() && j < b.entries.len() {
        match a.entries[i].0.cmp(&b.entries[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a.entries[i].1 * b.entries[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Score runs
// ---------------------------------------------------------------------------

/// Where the cutoff statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdScope {
    /// One mean and stddev over all query-patent scores of the run.
    #[default]
    Global,
    /// Separate statistics per task row.
    PerTask,
}

/// The cutoff rule: keep scores strictly above this value.
pub fn sigma_threshold(mean: f64, stddev: f64, k_sigma: f64) -> f64 {
    mean + k_sigma * stddev
}

/// Thresholded scores of one embedding run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRun {
    pub label: String,
    pub task_ids: Vec<String>,
    pub patent_ids: Vec<String>,
    /// Per task, (patent index, score) sorted by patent index. Only scores
    /// strictly above the applicable threshold appear.
    rows: Vec<Vec<(u32, f64)>>,
    /// Mean over all computed scores, zeros included.
    pub mean: f64,
    /// Population standard deviation over all computed scores.
    pub stddev: f64,
    /// Global cutoff, mean + k_sigma * stddev.
    pub threshold: f64,
    pub k_sigma: f64,
    pub scope: ThresholdScope,
    /// Row cutoffs when `scope` is `PerTask`.
    pub per_task_thresholds: Option<Vec<f64>>,
    /// Queries and patents whose norm under S was zero; their pairs score 0.
    pub zero_norm_docs: usize,
}

impl ScoreRun {
    pub fn row(&self, task_idx: u32) -> &[(u32, f64)] {
        &self.rows[task_idx as usize]
    }

    pub fn entry_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// All stored entries as (task index, patent index, score).
    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(t, row)| row.iter().map(move |&(p, s)| (t as u32, p, s)))
    }
}

fn check_unique_ids(ids: &[String], kind: &'static str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId { kind, id: id.clone() });
        }
    }
    Ok(())
}

/// Scores every query against every patent and keeps scores strictly above
/// the sigma cutoff.
///
/// All inputs must share one vocabulary: `stats` and `matrix` over the same
/// token list, documents expressible in it. Scores of zero (disjoint or
/// zero-norm pairs) enter the statistics like any other score.
pub fn score_run(
    queries: &[TaskQuery],
    patents: &[TokenizedDoc],
    matrix: &WordSimilarityMatrix,
    stats: &CorpusStats,
    k_sigma: f64,
    scope: ThresholdScope,
) -> Result<ScoreRun> {
    if !k_sigma.is_finite() || k_sigma < 0.0 {
        return Err(Error::invalid(format!("k_sigma must be nonnegative, got {k_sigma}")));
    }
    if stats.vocabulary() != matrix.vocabulary() {
        return Err(Error::invalid(
            "corpus stats and similarity matrix cover different vocabularies".to_string(),
        ));
    }
    let task_ids: Vec<String> = queries.iter().map(|q| q.task_id.clone()).collect();
    let patent_ids: Vec<String> = patents.iter().map(|p| p.doc_id.clone()).collect();
    check_unique_ids(&task_ids, "task")?;
    check_unique_ids(&patent_ids, "patent")?;

    // Vectorize, expand queries through S, and take norms.
    let query_vecs: Vec<SparseVector> =
        queries.iter().map(|q| weigh_tokens(&q.tokens, stats)).collect::<Result<_>>()?;
    let patent_vecs: Vec<SparseVector> =
        patents.par_iter().map(|p| weigh_tokens(&p.tokens, stats)).collect::<Result<_>>()?;

    let expanded: Vec<SparseVector> = query_vecs.par_iter().map(|q| expand(q, matrix)).collect();
    let query_norms: Vec<f64> = expanded
        .iter()
        .zip(&query_vecs)
        .map(|(u, q)| sparse_dot(u, q).max(0.0).sqrt())
        .collect();
    let patent_norms: Vec<f64> = patent_vecs
        .par_iter()
        .map(|d| quadratic_form(d, d, matrix).max(0.0).sqrt())
        .collect();

    let zero_norm_docs = query_norms.iter().filter(|&&n| n == 0.0).count()
        + patent_norms.iter().filter(|&&n| n == 0.0).count();

    let score_of = |qi: usize, pi: usize| -> f64 {
        let denom = query_norms[qi] * patent_norms[pi];
        if denom == 0.0 {
            return 0.0;
        }
        let num = sparse_dot(&expanded[qi], &patent_vecs[pi]);
        (num / denom).clamp(0.0, 1.0)
    };

    // Pass 1: moments per block, folded in block order. Per-task scope
    // tracks one accumulator per task per block.
    let blocks: Vec<(usize, usize)> = (0..patents.len())
        .step_by(SCORE_BLOCK.max(1))
        .map(|start| (start, (start + SCORE_BLOCK).min(patents.len())))
        .collect();

    let per_task = scope == ThresholdScope::PerTask;
    let block_moments: Vec<(Moments, Vec<Moments>)> = blocks
        .par_iter()
        .map(|&(start, end)| {
            let mut all = Moments::new();
            let mut rows = vec![Moments::new(); queries.len()];
            for (qi, row) in rows.iter_mut().enumerate() {
                for pi in start..end {
                    let s = score_of(qi, pi);
                    all.add(s);
                    if per_task {
                        row.add(s);
                    }
                }
            }
            (all, rows)
        })
        .collect();

    let mut all = Moments::new();
    let mut per_task_moments = vec![Moments::new(); if per_task { queries.len() } else { 0 }];
    for (block_all, block_rows) in &block_moments {
        all.merge(block_all);
        for (acc, part) in per_task_moments.iter_mut().zip(block_rows) {
            acc.merge(part);
        }
    }

    let mean = all.mean();
    let stddev = all.population_stddev();
    let threshold = sigma_threshold(mean, stddev, k_sigma);
    let per_task_thresholds: Option<Vec<f64>> = per_task.then(|| {
        per_task_moments
            .iter()
            .map(|m| sigma_threshold(m.mean(), m.population_stddev(), k_sigma))
            .collect()
    });

    // Pass 2: recompute scores and keep survivors. No score buffer is held
    // across the corpus, so memory stays proportional to the output.
    let cutoff_for = |qi: usize| -> f64 {
        per_task_thresholds.as_ref().map_or(threshold, |t| t[qi])
    };
    let block_hits: Vec<Vec<(u32, u32, f64)>> = blocks
        .par_iter()
        .map(|&(start, end)| {
            let mut hits = Vec::new();
            for qi in 0..queries.len() {
                let cutoff = cutoff_for(qi);
                for pi in start..end {
                    let s = score_of(qi, pi);
                    if s > cutoff {
                        hits.push((qi as u32, pi as u32, s));
                    }
                }
            }
            hits
        })
        .collect();

    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); queries.len()];
    for hits in block_hits {
        for (qi, pi, s) in hits {
            rows[qi as usize].push((pi, s));
        }
    }
    // Blocks ascend by patent index, so each row is already sorted.

    Ok(ScoreRun {
        label: matrix.label.clone(),
        task_ids,
        patent_ids,
        rows,
        mean,
        stddev,
        threshold,
        k_sigma,
        scope,
        per_task_thresholds,
        zero_norm_docs,
    })
}

// ---------------------------------------------------------------------------
// Merged matrix
// ---------------------------------------------------------------------------

/// Which run(s) an entry survived in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    A,
    B,
    Both,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::A => "a",
            Provenance::B => "b",
            Provenance::Both => "both",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "a" => Some(Provenance::A),
            "b" => Some(Provenance::B),
            "both" => Some(Provenance::Both),
            _ => None,
        }
    }
}

/// Union of two score runs. Entries kept by both runs carry the arithmetic
/// mean of the two scores.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPatentScoreMatrix {
    pub label_a: String,
    pub label_b: String,
    task_ids: Vec<String>,
    patent_ids: Vec<String>,
    task_index: HashMap<String, u32>,
    rows: Vec<Vec<(u32, f64, Provenance)>>,
}

impl TaskPatentScoreMatrix {
    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn patent_ids(&self) -> &[String] {
        &self.patent_ids
    }

    pub fn task_index(&self, task_id: &str) -> Option<u32> {
        self.task_index.get(task_id).copied()
    }

    pub fn patent_id(&self, patent_idx: u32) -> &str {
        &self.patent_ids[patent_idx as usize]
    }

    /// (patent index, score, provenance) sorted by patent index.
    pub fn row(&self, task_idx: u32) -> &[(u32, f64, Provenance)] {
        &self.rows[task_idx as usize]
    }

    pub fn entry_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64, Provenance)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(t, row)| row.iter().map(move |&(p, s, v)| (t as u32, p, s, v)))
    }

    /// Builds a matrix from explicit entries; ids must resolve and repeat
    /// (task, patent) pairs are rejected.
    pub fn from_entries(
        label_a: &str,
        label_b: &str,
        task_ids: Vec<String>,
        patent_ids: Vec<String>,
        entries: &[(String, String, f64, Provenance)],
    ) -> Result<Self> {
        check_unique_ids(&task_ids, "task")?;
        check_unique_ids(&patent_ids, "patent")?;
        let task_index: HashMap<String, u32> =
            task_ids.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let patent_index: HashMap<&str, u32> =
            patent_ids.iter().enumerate().map(|(i, p)| (p.as_str(), i as u32)).collect();

        let mut rows: Vec<Vec<(u32, f64, Provenance)>> = vec![Vec::new(); task_ids.len()];
        for (task, patent, score, prov) in entries {
            let t = *task_index
                .get(task.as_str())
                .ok_or_else(|| Error::UnknownEntity { kind: "task", id: task.clone() })?;
            let p = *patent_index
                .get(patent.as_str())
                .ok_or_else(|| Error::UnknownEntity { kind: "patent", id: patent.clone() })?;
            rows[t as usize].push((p, *score, *prov));
        }
        for (t, row) in rows.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(p, _, _)| p);
            for pair in row.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(Error::invalid(format!(
                        "duplicate entry for task {} and patent {}",
                        task_ids[t], patent_ids[pair[0].0 as usize]
                    )));
                }
            }
        }
        Ok(Self { label_a: label_a.to_string(), label_b: label_b.to_string(), task_ids, patent_ids, task_index, rows })
    }
}

/// Merges two runs over identical id universes into one matrix: union of
/// entries, arithmetic mean where both runs kept a pair.
pub fn merge_runs(a: &ScoreRun, b: &ScoreRun) -> Result<TaskPatentScoreMatrix> {
    if a.task_ids != b.task_ids {
        return Err(Error::IdSetMismatch(format!(
            "task ids differ ({} in run {}, {} in run {})",
            a.task_ids.len(),
            a.label,
            b.task_ids.len(),
            b.label
        )));
    }
    if a.patent_ids != b.patent_ids {
        return Err(Error::IdSetMismatch(format!(
            "patent ids differ ({} in run {}, {} in run {})",
            a.patent_ids.len(),
            a.label,
            b.patent_ids.len(),
            b.label
        )));
    }

    let mut rows: Vec<Vec<(u32, f64, Provenance)>> = Vec::with_capacity(a.rows.len());
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        let mut row = Vec::with_capacity(ra.len().max(rb.len()));
        let (mut i, mut j) = (0, 0);
        while i < ra.len() || j < rb.len() {
            match (ra.get(i), rb.get(j)) {
                (Some(&(pa, sa)), Some(&(pb, sb))) => match pa.cmp(&pb) {
                    std::cmp::Ordering::Less => {
                        row.push((pa, sa, Provenance::A));
                        i += 1;
                    }
                    std::cmp::Ordering::Greater => {
                        row.push((pb, sb, Provenance::B));
                        j += 1;
                    }
                    std::cmp::Ordering::Equal => {
                        row.push((pa, (sa + sb) / 2.0, Provenance::Both));
                        i += 1;
                        j += 1;
                    }
                },
                (Some(&(pa, sa)), None) => {
                    row.push((pa, sa, Provenance::A));
                    i += 1;
                }
                (None, Some(&(pb, sb))) => {
                    row.push((pb, sb, Provenance::B));
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        rows.push(row);
    }

    let task_index =
        a.task_ids.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    Ok(TaskPatentScoreMatrix {
        label_a: a.label.clone(),
        label_b: b.label.clone(),
        task_ids: a.task_ids.clone(),
        patent_ids: a.patent_ids.clone(),
        task_index,
        rows,
    })
}

/// Top `n` patents for a task, highest score first, ties broken by patent
/// id ascending.
pub fn top_patents(matrix: &TaskPatentScoreMatrix, task_id: &str, n: usize) -> Result<Vec<(String, f64)>> {
    let t = matrix
        .task_index(task_id)
        .ok_or_else(|| Error::UnknownEntity { kind: "task", id: task_id.to_string() })?;
    let mut scored: Vec<(&str, f64)> = matrix
        .row(t)
        .iter()
        .map(|&(p, s, _)| (matrix.patent_id(p), s))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    Ok(scored.into_iter().take(n).map(|(p, s)| (p.to_string(), s)).collect())
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

const MATRIX_MAGIC: &[u8; 5] = b"PXMTX";
const MATRIX_VERSION: u32 = 1;

impl TaskPatentScoreMatrix {
    /// Writes entries as TSV sorted by (task_id, patent_id). Scores print
    /// in shortest round-trip form, so reading the file back recovers them
    /// exactly. Ids without entries do not appear; use the binary cache to
    /// preserve the full id universes.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "task_id\tpatent_id\tscore\tprovenance").map_err(|e| Error::io(path, e))?;

        let mut order: Vec<u32> = (0..self.task_ids.len() as u32).collect();
        order.sort_by(|&x, &y| self.task_ids[x as usize].cmp(&self.task_ids[y as usize]));
        for t in order {
            let task = &self.task_ids[t as usize];
            let mut row: Vec<(&str, f64, Provenance)> = self
                .row(t)
                .iter()
                .map(|&(p, s, v)| (self.patent_id(p), s, v))
                .collect();
            row.sort_by(|a, b| a.0.cmp(b.0));
            for (patent, score, prov) in row {
                writeln!(w, "{task}\t{patent}\t{score}\t{}", prov.as_str())
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a TSV written by [`save_tsv`]. Id universes are rebuilt from
    /// the entries present.
    pub fn load_tsv(path: &Path, label_a: &str, label_b: &str) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let header = header.map_err(|e| Error::io(path, e))?;
        if header != "task_id\tpatent_id\tscore\tprovenance" {
            return Err(Error::parse(path, 1, format!("unexpected header: {header:?}")));
        }

        let mut entries: Vec<(String, String, f64, Provenance)> = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::parse(path, idx + 1, format!("expected 4 columns, found {}", f.len())));
            }
            let score: f64 = f[2]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad score: {:?}", f[2])))?;
            let prov = Provenance::parse(f[3])
                .ok_or_else(|| Error::parse(path, idx + 1, format!("bad provenance: {:?}", f[3])))?;
            entries.push((f[0].to_string(), f[1].to_string(), score, prov));
        }

        let mut task_ids: Vec<String> = entries.iter().map(|e| e.0.clone()).collect();
        task_ids.sort_unstable();
        task_ids.dedup();
        let mut patent_ids: Vec<String> = entries.iter().map(|e| e.1.clone()).collect();
        patent_ids.sort_unstable();
        patent_ids.dedup();
        Self::from_entries(label_a, label_b, task_ids, patent_ids, &entries)
    }

    /// Binary cache: versioned header, full id universes, exact f64 bits.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MATRIX_MAGIC).map_err(io)?;
        w.write_all(&MATRIX_VERSION.to_le_bytes()).map_err(io)?;
        write_str(&mut w, &self.label_a).map_err(io)?;
        write_str(&mut w, &self.label_b).map_err(io)?;
        w.write_all(&(self.task_ids.len() as u32).to_le_bytes()).map_err(io)?;
        for t in &self.task_ids {
            write_str(&mut w, t).map_err(io)?;
        }
        w.write_all(&(self.patent_ids.len() as u32).to_le_bytes()).map_err(io)?;
        for p in &self.patent_ids {
            write_str(&mut w, p).map_err(io)?;
        }
        for row in &self.rows {
            w.write_all(&(row.len() as u32).to_le_bytes()).map_err(io)?;
            for &(p, s, prov) in row {
                w.write_all(&p.to_le_bytes()).map_err(io)?;
                w.write_all(&s.to_le_bytes()).map_err(io)?;
                let tag: u8 = match prov {
                    Provenance::A => 0,
                    Provenance::B => 1,
                    Provenance::Both => 2,
                };
                w.write_all(&[tag]).map_err(io)?;
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
        if &magic != MATRIX_MAGIC {
            return Err(Error::invalid(format!("{}: not a score matrix cache", path.display())));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != MATRIX_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported cache version {version}, expected {MATRIX_VERSION}",
                path.display()
            )));
        }
        let label_a = read_str(&mut r).map_err(io)?;
        let label_b = read_str(&mut r).map_err(io)?;
        let n_tasks = read_u32(&mut r).map_err(io)? as usize;
        let mut task_ids = Vec::with_capacity(n_tasks);
        for _ in 0..n_tasks {
            task_ids.push(read_str(&mut r).map_err(io)?);
        }
        let n_patents = read_u32(&mut r).map_err(io)? as usize;
        let mut patent_ids = Vec::with_capacity(n_patents);
        for _ in 0..n_patents {
            patent_ids.push(read_str(&mut r).map_err(io)?);
        }
        let mut rows = Vec::with_capacity(n_tasks);
        for _ in 0..n_tasks {
            let n = read_u32(&mut r).map_err(io)? as usize;
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                let p = read_u32(&mut r).map_err(io)?;
                let s = f64::from_le_bytes(read_array(&mut r).map_err(io)?);
                let tag = read_array::<_, 1>(&mut r).map_err(io)?[0];
                let prov = match tag {
                    0 => Provenance::A,
                    1 => Provenance::B,
                    2 => Provenance::Both,
                    other => {
                        return Err(Error::invalid(format!(
                            "{}: bad provenance tag {other}",
                            path.display()
                        )))
                    }
                };
                row.push((p, s, prov));
            }
            rows.push(row);
        }
        let task_index = task_ids.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Self { label_a, label_b, task_ids, patent_ids, task_index, rows })
    }
}
