//! The pipeline stages. Each stage reads its upstream artifacts, runs the
//! corresponding core functions, and writes its own artifacts plus a
//! manifest under `<out>/<stage>/`.
//!
//! Stage order: ingest -> prep -> index -> score -> classify -> aggregate
//! -> analyze. classify is independent of index/score and optional (it
//! needs a concordance); aggregate falls back to untagged patents without
//! it. Running a stage without its upstream artifacts fails with an error
//! naming the stage to run first.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use patex_core::analysis::{self, ExternalIndex};
use patex_core::corpus::{self, OccupationRecord};
use patex_core::embedding::{self, WordSimilarityMatrix};
use patex_core::scores::{
    self, EntityKind, ExposureScore, HistogramAxis, PatentSubset, PatentTag, PatentTagIndex,
    YearlyGrouping,
};
use patex_core::similarity::{self, TaskQuery, TaskPatentScoreMatrix, ThresholdScope};
use patex_core::textprep::{self, StopwordSet, TokenizedDoc};
use patex_core::tfidf::{self, CorpusStats};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::manifest::{verify_digests, Manifest};

fn stage_dir(cfg: &PipelineConfig, stage: &str) -> PathBuf {
    cfg.out.join(stage)
}

/// Checks that an upstream stage has run and its artifacts are intact.
/// Returns the paths of `files` inside the stage directory.
fn require_stage(cfg: &PipelineConfig, stage: &str, files: &[&str]) -> Result<Vec<PathBuf>> {
    let dir = stage_dir(cfg, stage);
    let manifest = dir.join("manifest.json");
    if !manifest.is_file() {
        bail!("no artifacts under {}; requires stage: {stage}", dir.display());
    }
    let mut paths = Vec::with_capacity(files.len());
    for name in files {
        let p = dir.join(name);
        if !p.is_file() {
            bail!("{} is missing; requires stage: {stage}", p.display());
        }
        paths.push(p);
    }
    let mismatches = verify_digests(&manifest, None)?;
    if !mismatches.is_empty() {
        bail!(
            "stage {stage} artifacts changed since they were written (re-run it): {}",
            mismatches.join(", ")
        );
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Token TSVs
// ---------------------------------------------------------------------------

const TOKENS_HEADER: &str = "doc_id\ttokens";

fn write_tokens_tsv(path: &Path, docs: &[TokenizedDoc]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TOKENS_HEADER}")?;
    for doc in docs {
        if doc.doc_id.contains('\t') {
            bail!("doc id {:?} contains a tab", doc.doc_id);
        }
        writeln!(w, "{}\t{}", doc.doc_id, doc.tokens.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

fn read_tokens_tsv(path: &Path) -> Result<Vec<TokenizedDoc>> {
    let mut lines = BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    )
    .lines();
    match lines.next().transpose()? {
        Some(h) if h == TOKENS_HEADER => {}
        other => bail!("{}: unexpected header {other:?}", path.display()),
    }
    let mut docs = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let Some((id, toks)) = line.split_once('\t') else {
            bail!("{} line {}: expected doc_id<TAB>tokens", path.display(), idx + 2);
        };
        docs.push(TokenizedDoc {
            doc_id: id.to_string(),
            tokens: toks.split_whitespace().map(str::to_string).collect(),
        });
    }
    Ok(docs)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

pub fn run_ingest(cfg: &PipelineConfig) -> Result<()> {
    let dir = stage_dir(cfg, "ingest");
    std::fs::create_dir_all(&dir)?;
    let mut m = Manifest::new("ingest", &dir, cfg.manifest_params());
    for p in [&cfg.patents, &cfg.tasks, &cfg.dwas, &cfg.occupations] {
        m.input(p)?;
    }

    let load = corpus::load_patents(&cfg.patents, (cfg.year_min, cfg.year_max))?;
    log::info!(
        "loaded {} patents ({} outside {}..{}, {} with empty abstracts dropped)",
        load.records.len(),
        load.dropped_out_of_range,
        cfg.year_min,
        cfg.year_max,
        load.dropped_empty_abstract
    );
    let before = load.records.len();
    let patents = corpus::dedupe_families(load.records, &cfg.office_rank);
    log::info!("{} patents after family deduplication (from {before})", patents.len());

    let (tasks, dwas, occupations) = corpus::load_tasks(&cfg.tasks, &cfg.dwas, &cfg.occupations)?;
    log::info!("{} tasks, {} activities, {} occupations", tasks.len(), dwas.len(), occupations.len());

    m.artifact("patents.jsonl", |p| corpus::save_patents(p, &patents).map_err(Into::into))?;
    m.artifact("tasks.tsv", |p| corpus::save_task_file(p, &tasks).map_err(Into::into))?;
    m.artifact("dwas.tsv", |p| corpus::save_dwas(p, &dwas).map_err(Into::into))?;
    m.artifact("occupations.tsv", |p| corpus::save_occupations(p, &occupations).map_err(Into::into))?;
    m.finish()
}

// ---------------------------------------------------------------------------
// prep
// ---------------------------------------------------------------------------

pub fn run_prep(cfg: &PipelineConfig) -> Result<()> {
    let upstream =
        require_stage(cfg, "ingest", &["patents.jsonl", "tasks.tsv", "dwas.tsv", "occupations.tsv"])?;
    let dir = stage_dir(cfg, "prep");
    std::fs::create_dir_all(&dir)?;
    let mut m = Manifest::new("prep", &dir, cfg.manifest_params());
    for p in &upstream {
        m.input(p)?;
    }

    let stopwords = match &cfg.stopwords {
        Some(p) => {
            m.input(p)?;
            StopwordSet::from_file(p)?
        }
        None => StopwordSet::default_english(),
    };

    let patents = corpus::load_patents(&upstream[0], (cfg.year_min, cfg.year_max))?.records;
    let patent_docs: Vec<TokenizedDoc> = patents
        .par_iter()
        .map(|p| textprep::normalize(&p.patent_id, &textprep::strip_brackets(&p.abstract_text), &stopwords))
        .collect();

    let (tasks, _, _) = corpus::load_tasks(&upstream[1], &upstream[2], &upstream[3])?;
    let triggers: Vec<&str> = cfg.tool_triggers.iter().map(String::as_str).collect();
    let task_docs: Vec<TokenizedDoc> = tasks
        .iter()
        .map(|t| textprep::normalize(&t.task_id, &textprep::strip_tool_clause(&t.text, &triggers), &stopwords))
        .collect();

    let empty = patent_docs.iter().filter(|d| d.tokens.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} patent abstracts normalized to zero tokens");
    }

    m.artifact("patent_tokens.tsv", |p| write_tokens_tsv(p, &patent_docs))?;
    m.artifact("task_tokens.tsv", |p| write_tokens_tsv(p, &task_docs))?;
    m.finish()
}

// ---------------------------------------------------------------------------
// index
// ---------------------------------------------------------------------------

pub fn run_index(cfg: &PipelineConfig) -> Result<()> {
    let ingest = require_stage(cfg, "ingest", &["tasks.tsv", "dwas.tsv", "occupations.tsv"])?;
    let prep = require_stage(cfg, "prep", &["patent_tokens.tsv", "task_tokens.tsv"])?;
    let dir = stage_dir(cfg, "index");
    std::fs::create_dir_all(&dir)?;
    let mut m = Manifest::new("index", &dir, cfg.manifest_params());
    for p in ingest.iter().chain(&prep).chain([&cfg.vectors_a, &cfg.vectors_b]) {
        m.input(p)?;
    }

    let patent_docs = read_tokens_tsv(&prep[0])?;
    let task_docs = read_tokens_tsv(&prep[1])?;
    let base = tfidf::build_stats(&patent_docs)?;
    let stats = base.with_extended_vocabulary(task_docs.iter());
    log::info!(
        "vocabulary: {} tokens from {} patents, {} after task extension",
        base.vocabulary().len(),
        base.doc_count(),
        stats.vocabulary().len()
    );

    let (mut tasks, dwas, _) = corpus::load_tasks(&ingest[0], &ingest[1], &ingest[2])?;
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let dwa_by_id: HashMap<&str, &corpus::DwaRecord> =
        dwas.iter().map(|d| (d.dwa_id.as_str(), d)).collect();
    let task_tokens: HashMap<String, Vec<String>> =
        task_docs.into_iter().map(|d| (d.doc_id, d.tokens)).collect();

    let queries: Vec<TaskQuery> = tasks
        .iter()
        .map(|t| {
            let dwa = dwa_by_id
                .get(t.dwa_id.as_str())
                .with_context(|| format!("task {} references unknown dwa {}", t.task_id, t.dwa_id))?;
            similarity::build_query(&t.task_id, dwa, &task_tokens, cfg.oversample).map_err(Into::into)
        })
        .collect::<Result<_>>()?;

    let table_a = embedding::load_vectors(&cfg.vectors_a, &cfg.label_a)?;
    let table_b = embedding::load_vectors(&cfg.vectors_b, &cfg.label_b)?;
    for t in [&table_a, &table_b] {
        if t.duplicates_replaced > 0 {
            log::warn!("{}: {} duplicate vector tokens (last wins)", t.label, t.duplicates_replaced);
        }
    }
    let sim_a = embedding::build_similarity_matrix(&table_a, stats.vocabulary(), cfg.similarity_floor)?;
    let sim_b = embedding::build_similarity_matrix(&table_b, stats.vocabulary(), cfg.similarity_floor)?;
    log::info!(
        "similarity matrices: {} stored entries ({}), {} ({})",
        sim_a.stored_entries(),
        sim_a.label,
        sim_b.stored_entries(),
        sim_b.label
    );

    m.artifact("stats.tsv", |p| stats.save_tsv(p).map_err(Into::into))?;
    m.artifact("stats.bin", |p| stats.save_binary(p).map_err(Into::into))?;
    m.artifact("queries.tsv", |p| {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "task_id\tdwa_id\ttokens")?;
        for q in &queries {
            writeln!(w, "{}\t{}\t{}", q.task_id, q.dwa_id, q.tokens.join(" "))?;
        }
        w.flush().map_err(Into::into)
    })?;
    m.artifact("sim_a.bin", |p| sim_a.save_binary(p).map_err(Into::into))?;
    m.artifact("sim_b.bin", |p| sim_b.save_binary(p).map_err(Into::into))?;
    m.finish()
}

fn read_queries_tsv(path: &Path) -> Result<Vec<TaskQuery>> {
    let mut lines = BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    )
    .lines();
    match lines.next().transpose()? {
        Some(h) if h == "task_id\tdwa_id\ttokens" => {}
        other => bail!("{}: unexpected header {other:?}", path.display()),
    }
    let mut queries = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() != 3 {
            bail!("{} line {}: expected 3 fields", path.display(), idx + 2);
        }
        queries.push(TaskQuery {
            task_id: fields[0].to_string(),
            dwa_id: fields[1].to_string(),
            tokens: fields[2].split_whitespace().map(str::to_string).collect(),
        });
    }
    Ok(queries)
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

fn scope_str(scope: ThresholdScope) -> &'static str {
    match scope {
        ThresholdScope::Global => "global",
        ThresholdScope::PerTask => "per_task",
    }
}

pub fn run_score(cfg: &PipelineConfig) -> Result<()> {
    let prep = require_stage(cfg, "prep", &["patent_tokens.tsv"])?;
    let index =
        require_stage(cfg, "index", &["stats.bin", "queries.tsv", "sim_a.bin", "sim_b.bin"])?;
    let dir = stage_dir(cfg, "score");
    std::fs::create_dir_all(&dir)?;
    let mut m = Manifest::new("score", &dir, cfg.manifest_params());
    for p in prep.iter().chain(&index) {
        m.input(p)?;
    }

    let patents = read_tokens_tsv(&prep[0])?;
    let stats = CorpusStats::load_binary(&index[0])?;
    let queries = read_queries_tsv(&index[1])?;
    let sim_a = WordSimilarityMatrix::load_binary(&index[2])?;
    let sim_b = WordSimilarityMatrix::load_binary(&index[3])?;

    let run_a = similarity::score_run(&queries, &patents, &sim_a, &stats, cfg.k_sigma, cfg.threshold_scope)?;
    let run_b = similarity::score_run(&queries, &patents, &sim_b, &stats, cfg.k_sigma, cfg.threshold_scope)?;
    for run in [&run_a, &run_b] {
        log::info!(
            "run {}: {} entries above cutoff {} (mean {}, stddev {})",
            run.label,
            run.entry_count(),
            run.threshold,
            run.mean,
            run.stddev
        );
    }
    let matrix = similarity::merge_runs(&run_a, &run_b)?;
    log::info!("merged matrix: {} entries", matrix.entry_count());

    m.artifact("run_stats.tsv", |p| {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "label\tmean\tstddev\tthreshold\tk_sigma\tscope\tzero_norm_docs\tentries")?;
        for run in [&run_a, &run_b] {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                run.label,
                run.mean,
                run.stddev,
                run.threshold,
                run.k_sigma,
                scope_str(run.scope),
                run.zero_norm_docs,
                run.entry_count()
            )?;
        }
        w.flush().map_err(Into::into)
    })?;
    m.artifact("matrix.tsv", |p| matrix.save_tsv(p).map_err(Into::into))?;
    m.artifact("matrix.bin", |p| matrix.save_binary(p).map_err(Into::into))?;
    m.artifact("top_patents.tsv", |p| {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "task_id\trank\tpatent_id\tscore")?;
        let mut task_ids = matrix.task_ids().to_vec();
        task_ids.sort();
        for task_id in &task_ids {
            for (rank, (patent_id, score)) in
                similarity::top_patents(&matrix, task_id, cfg.top_n)?.iter().enumerate()
            {
                writeln!(w, "{task_id}\t{}\t{patent_id}\t{score}", rank + 1)?;
            }
        }
        w.flush().map_err(Into::into)
    })?;
    m.finish()
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

pub fn run_classify(cfg: &PipelineConfig) -> Result<()> {
    let Some(concordance_path) = &cfg.concordance else {
        bail!("classify needs a technology-field concordance: set concordance = <file> in the config");
    };
    let ingest = require_stage(cfg, "ingest", &["patents.jsonl"])?;
    let dir = stage_dir(cfg, "classify");
    std::fs::create_dir_all(&dir)?;
    let mut m = Manifest::new("classify", &dir, cfg.manifest_params());
    m.input(concordance_path)?;
    m.input(&ingest[0])?;

    let table = patex_core::fourir::load_concordance(concordance_path)?;
    let patents = corpus::load_patents(&ingest[0], (cfg.year_min, cfg.year_max))?.records;
    let rows: Vec<(String, bool, String)> = patents
        .par_iter()
        .map(|p| {
            let (is_4ir, fields) = patex_core::fourir::classify(p, &table);
            let fields = fields.into_iter().collect::<Vec<_>>().join(";");
            (p.patent_id.clone(), is_4ir, fields)
        })
        .collect();
    let tagged = rows.iter().filter(|r| r.1).count();
    log::info!("{tagged} of {} patents classified 4IR", rows.len());

    m.artifact("patent_fields.tsv", |p| {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "patent_id\tis_4ir\tfields")?;
        for (id, is_4ir, fields) in &rows {
            writeln!(w, "{id}\t{is_4ir}\t{fields}")?;
        }
        w.flush().map_err(Into::into)
    })?;
    m.finish()
}

/// Reads classify's patent_fields.tsv back as patent_id -> (is_4ir, fields).
fn read_patent_fields(path: &Path) -> Result<HashMap<String, (bool, BTreeSet<String>)>> {
    let mut lines = BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    )
    .lines();
    match lines.next().transpose()? {
        Some(h) if h == "patent_id\tis_4ir\tfields" => {}
        other => bail!("{}: unexpected header {other:?}", path.display()),
    }
    let mut out = HashMap::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            bail!("{} line {}: expected 3 fields", path.display(), idx + 2);
        }
        let is_4ir = match fields[1] {
            "true" => true,
            "false" => false,
            v => bail!("{} line {}: bad is_4ir {v:?}", path.display(), idx + 2),
        };
        let set: BTreeSet<String> =
            fields[2].split(';').filter(|s| !s.is_empty()).map(str::to_string).collect();
        if out.insert(fields[0].to_string(), (is_4ir, set)).is_some() {
            bail!("{} line {}: duplicate patent {}", path.display(), idx + 2, fields[0]);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// aggregate
// ---------------------------------------------------------------------------

/// Joins the persisted classification with patent filing years. Without a
/// concordance every patent is tagged non-4IR so the all/4ir/non_4ir split
/// still holds.
fn load_tags(cfg: &PipelineConfig, patents: &[corpus::PatentRecord]) -> Result<PatentTagIndex> {
    if cfg.concordance.is_none() {
        return Ok(PatentTagIndex::untagged(patents));
    }
    let fields_path = require_stage(cfg, "classify", &["patent_fields.tsv"])?.remove(0);
    let mut rows = read_patent_fields(&fields_path)?;
    if rows.len() != patents.len() {
        bail!(
            "classification covers {} patents but the corpus has {}; re-run classify",
            rows.len(),
            patents.len()
        );
    }
    let entries: Vec<(String, PatentTag)> = patents
        .iter()
        .map(|p| {
            let (is_4ir, fields) = rows
                .remove(&p.patent_id)
                .with_context(|| format!("patent {} missing from classification; re-run classify", p.patent_id))?;
            Ok((p.patent_id.clone(), PatentTag { filing_year: p.filing_year, is_4ir, fields }))
        })
        .collect::<Result<_>>()?;
    PatentTagIndex::from_parts(entries).map_err(Into::into)
}

pub fn run_aggregate(cfg: &PipelineConfig) -> Result<()> {
    let ingest = require_stage(
        cfg,
        "ingest",
        &["patents.jsonl", "tasks.tsv", "dwas.tsv", "occupations.tsv"],
    )?;
    let score = require_stage(cfg, "score", &["matrix.bin"])?;
    let dir = stage_dir(cfg, "aggregate");
    std::fs::create_dir_all(&dir)?;
    let mut m = Manifest::new("aggregate", &dir, cfg.manifest_params());
    for p in ingest.iter().chain(&score) {
        m.input(p)?;
    }

    let patents = corpus::load_patents(&ingest[0], (cfg.year_min, cfg.year_max))?.records;
    let (tasks, _, occupations) = corpus::load_tasks(&ingest[1], &ingest[2], &ingest[3])?;
    let matrix = TaskPatentScoreMatrix::load_binary(&score[0])?;
    let tags = load_tags(cfg, &patents)?;
    if cfg.concordance.is_some() {
        m.input(&stage_dir(cfg, "classify").join("patent_fields.tsv"))?;
    }

    let year_range = (cfg.year_min, cfg.year_max);
    let mut field_ids: BTreeSet<String> = BTreeSet::new();
    for p in &patents {
        if let Some(tag) = tags.get(&p.patent_id) {
            field_ids.extend(tag.fields.iter().cloned());
        }
    }
    let mut subsets = vec![PatentSubset::All, PatentSubset::FourIr, PatentSubset::NonFourIr];
    subsets.extend(field_ids.into_iter().map(PatentSubset::Field));

    // Task scores, then importance-weighted occupations, then clusters.
    let mut task_ids = matrix.task_ids().to_vec();
    task_ids.sort();
    let mut all_scores: Vec<ExposureScore> = Vec::new();
    let mut task_lookup: BTreeMap<(PatentSubset, String), ExposureScore> = BTreeMap::new();
    for task_id in &task_ids {
        for subset in &subsets {
            let s = scores::task_exposure(&matrix, &tags, task_id, subset, year_range, cfg.log_base)?;
            task_lookup.insert((subset.clone(), task_id.clone()), s.clone());
            all_scores.push(s);
        }
    }

    let mut occ_tasks: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for t in &tasks {
        occ_tasks.entry(t.occupation_id.as_str()).or_default().push((t.task_id.as_str(), t.importance));
    }
    let mut occ_lookup: BTreeMap<(PatentSubset, String), ExposureScore> = BTreeMap::new();
    for (occ_id, members) in &occ_tasks {
        for subset in &subsets {
            let pairs: Vec<(ExposureScore, f64)> = members
                .iter()
                .map(|&(task_id, importance)| {
                    let key = (subset.clone(), task_id.to_string());
                    let score = task_lookup
                        .get(&key)
                        .with_context(|| format!("task {task_id} has no exposure score"))?;
                    Ok((score.clone(), importance))
                })
                .collect::<Result<_>>()?;
            let s = scores::occupation_exposure(occ_id, &pairs)?;
            occ_lookup.insert((subset.clone(), occ_id.to_string()), s.clone());
            all_scores.push(s);
        }
    }

    let occ_by_id: BTreeMap<&str, &OccupationRecord> =
        occupations.iter().map(|o| (o.occupation_id.as_str(), o)).collect();
    let mut clusters: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for o in &occupations {
        if occ_tasks.contains_key(o.occupation_id.as_str()) {
            clusters.entry(o.career_cluster.as_str()).or_default().push(o.occupation_id.as_str());
        }
    }
    for (cluster_id, members) in &clusters {
        let weights: Option<Vec<f64>> = if cfg.cluster_employment_weighted {
            let missing: Vec<&str> = members
                .iter()
                .filter(|id| occ_by_id[*id].employment.is_none())
                .copied()
                .collect();
            if !missing.is_empty() {
                bail!(
                    "cluster {cluster_id} is employment-weighted but occupations lack employment: {}",
                    missing.join(", ")
                );
            }
            Some(members.iter().map(|id| occ_by_id[*id].employment.unwrap() as f64).collect())
        } else {
            None
        };
        for subset in &subsets {
            let member_scores: Vec<ExposureScore> = members
                .iter()
                .map(|id| occ_lookup[&(subset.clone(), id.to_string())].clone())
                .collect();
            all_scores.push(scores::cluster_exposure(cluster_id, &member_scores, weights.as_deref())?);
        }
    }

    m.artifact("scores.tsv", |p| scores::save_scores_tsv(&all_scores, p).map_err(Into::into))?;

    let yearly = scores::yearly_series(&matrix, &tags, YearlyGrouping::Subset)?;
    m.artifact("yearly_subset.tsv", |p| write_yearly(p, &yearly))?;

    if let (Some(measures_path), Some(scheme_path)) = (&cfg.task_measures, &cfg.scheme) {
        m.input(measures_path)?;
        m.input(scheme_path)?;
        let measures = scores::load_task_measures(measures_path)?;
        let scheme = scores::load_scheme(scheme_path)?;
        let profiles = scores::assign_task_types(&measures, &scheme)?;
        m.artifact("task_types.tsv", |p| {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "task_id\ttask_type\tz_score\tassigned")?;
            for profile in &profiles {
                for (ty, z) in &profile.z_scores {
                    let assigned = profile.assigned_types.contains(ty);
                    writeln!(w, "{}\t{ty}\t{z}\t{assigned}", profile.task_id)?;
                }
            }
            w.flush().map_err(Into::into)
        })?;
        let assignments: HashMap<String, BTreeSet<String>> =
            profiles.into_iter().map(|p| (p.task_id, p.assigned_types)).collect();
        let yearly_types = scores::yearly_series(&matrix, &tags, YearlyGrouping::TaskType(&assignments))?;
        m.artifact("yearly_task_type.tsv", |p| write_yearly(p, &yearly_types))?;
    }

    let per_task = scores::histogram(&matrix, HistogramAxis::PatentsPerTask, cfg.hist_bins)?;
    m.artifact("hist_patents_per_task.tsv", |p| write_histogram(p, &per_task))?;
    let per_patent = scores::histogram(&matrix, HistogramAxis::TasksPerPatent, cfg.hist_bins)?;
    m.artifact("hist_tasks_per_patent.tsv", |p| write_histogram(p, &per_patent))?;
    m.finish()
}

fn write_yearly(path: &Path, rows: &[scores::YearlyRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "year\tgroup\tcount\tshare")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{}", r.year, r.group, r.count, r.share)?;
    }
    w.flush().map_err(Into::into)
}

fn write_histogram(path: &Path, bins: &[scores::HistogramBin]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "low\thigh\tcount")?;
    for b in bins {
        writeln!(w, "{}\t{}\t{}", b.low, b.high, b.count)?;
    }
    w.flush().map_err(Into::into)
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

pub fn run_analyze(cfg: &PipelineConfig) -> Result<()> {
    let ingest = require_stage(cfg, "ingest", &["tasks.tsv", "dwas.tsv", "occupations.tsv"])?;
    let aggregate = require_stage(cfg, "aggregate", &["scores.tsv"])?;
    let dir = stage_dir(cfg, "analyze");
    std::fs::create_dir_all(&dir)?;
    let mut m = Manifest::new("analyze", &dir, cfg.manifest_params());
    for p in ingest.iter().chain(&aggregate) {
        m.input(p)?;
    }
    for path in cfg.indices.values() {
        m.input(path)?;
    }

    let all_scores = scores::load_scores_tsv(&aggregate[0])?;
    let occ_of = |subset: &PatentSubset| -> Vec<ExposureScore> {
        all_scores
            .iter()
            .filter(|s| s.entity_kind == EntityKind::Occupation && s.patent_subset == *subset)
            .cloned()
            .collect()
    };
    // With a concordance the exposure of interest is the 4IR subset and the
    // smoother contrasts 4IR against the rest; without one, only exposure
    // to all patents is meaningful.
    let smooth_curves: Vec<(&str, PatentSubset)> = if cfg.concordance.is_some() {
        vec![("smooth_4ir.csv", PatentSubset::FourIr), ("smooth_non_4ir.csv", PatentSubset::NonFourIr)]
    } else {
        log::info!("no concordance configured; analyzing exposure to all patents");
        vec![("smooth_all.csv", PatentSubset::All)]
    };
    let exposure_subset =
        if cfg.concordance.is_some() { PatentSubset::FourIr } else { PatentSubset::All };
    let occ_exposure = occ_of(&exposure_subset);
    if occ_exposure.is_empty() {
        bail!("no occupation-level scores in {}; re-run aggregate", aggregate[0].display());
    }

    let (_, _, occupations) = corpus::load_tasks(&ingest[0], &ingest[1], &ingest[2])?;
    let weights: HashMap<String, f64> = occupations
        .iter()
        .filter_map(|o| o.employment.map(|e| (o.occupation_id.clone(), e as f64)))
        .collect();

    let mut indices: BTreeMap<String, ExternalIndex> = BTreeMap::new();
    for (id, path) in &cfg.indices {
        indices.insert(id.clone(), analysis::load_external_index(path, id)?);
    }

    let mut correlations: Vec<(String, f64, usize)> = Vec::new();
    for (id, index) in &indices {
        let cmp = analysis::compare_index(&occ_exposure, index, Some(&weights))
            .with_context(|| format!("comparing exposure scores against index {id}"))?;
        log::info!("index {id}: r = {} over {} occupations", cmp.pearson, cmp.matched_n);
        if !cmp.unmatched_scores.is_empty() {
            log::warn!("index {id} misses occupations: {}", cmp.unmatched_scores.join(", "));
        }
        correlations.push((id.clone(), cmp.pearson, cmp.matched_n));

        m.artifact(&format!("scatter_{id}.csv"), |p| {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "occupation_id,score,index_value,weight")?;
            for pt in &cmp.scatter {
                let weight = pt.weight.map(|v| v.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{},{weight}", pt.occupation_id, pt.score, pt.index_value)?;
            }
            w.flush().map_err(Into::into)
        })?;

        let quad = analysis::quadrant_report(&occ_exposure, index, None, None)?;
        m.artifact(&format!("quadrants_{id}.tsv"), |p| {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "occupation_id\tquadrant\tx_split\ty_split")?;
            for (name, members) in [
                ("I", &quad.quadrant_i),
                ("II", &quad.quadrant_ii),
                ("III", &quad.quadrant_iii),
                ("IV", &quad.quadrant_iv),
            ] {
                for occ in members {
                    writeln!(w, "{occ}\t{name}\t{}\t{}", quad.x_split, quad.y_split)?;
                }
            }
            w.flush().map_err(Into::into)
        })?;
    }

    m.artifact("correlations.tsv", |p| {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "index_id\tpearson\tmatched_n")?;
        for (id, r, n) in &correlations {
            writeln!(w, "{id}\t{r}\t{n}")?;
        }
        w.flush().map_err(Into::into)
    })?;

    if let Some(id) = &cfg.smooth_index {
        let index = &indices[id];
        // Occupations ranked by the index value; x is the percentile
        // position, y the exposure score, one curve per subset.
        let mut matched: Vec<(&str, f64)> = occ_exposure
            .iter()
            .filter_map(|s| index.values.get(&s.entity_id).map(|&v| (s.entity_id.as_str(), v)))
            .collect();
        if matched.len() < 2 {
            bail!("smoothing against index {id} needs at least 2 matched occupations, got {}", matched.len());
        }
        matched.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(b.0)));
        let denom = (matched.len() - 1) as f64;
        let xs: Vec<f64> = (0..matched.len()).map(|i| i as f64 / denom).collect();

        let value_of = |scores: &[ExposureScore], occ: &str| -> Result<f64> {
            scores
                .iter()
                .find(|s| s.entity_id == occ)
                .map(|s| s.value)
                .with_context(|| format!("occupation {occ} has no score"))
        };
        for (name, subset) in &smooth_curves {
            let subset_scores = occ_of(subset);
            let ys: Vec<f64> =
                matched.iter().map(|&(occ, _)| value_of(&subset_scores, occ)).collect::<Result<_>>()?;
            let smooth = analysis::local_smooth(&xs, &ys, cfg.bandwidth, cfg.grid)?;
            if smooth.widened_windows > 0 {
                log::warn!("{name}: {} windows widened beyond the bandwidth", smooth.widened_windows);
            }
            m.artifact(name, |p| {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "x,fitted")?;
                for pt in &smooth.points {
                    writeln!(w, "{},{}", pt.x, pt.fitted)?;
                }
                w.flush().map_err(Into::into)
            })?;
        }
    }

    if let Some(id) = &cfg.regression_index {
        let index = &indices[id];
        let cmp = analysis::compare_index(&occ_exposure, index, None)
            .with_context(|| format!("regressing index {id} on exposure scores"))?;
        let exposure: Vec<f64> = cmp.scatter.iter().map(|pt| pt.score).collect();
        let response: Vec<f64> = cmp.scatter.iter().map(|pt| pt.index_value).collect();
        let term = format!("exposure_{exposure_subset}");
        let fit =
            analysis::ols(&response, &[(term.clone(), exposure)], true, &[term])?;
        m.artifact("regression.txt", |p| {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "response: {id}")?;
            writeln!(w, "term\testimate\tt_stat")?;
            for term in &fit.terms {
                writeln!(w, "{}\t{}\t{}", term.name, term.estimate, term.t_stat)?;
            }
            writeln!(w, "r2\t{}", fit.r2)?;
            writeln!(w, "adjusted_r2\t{}", fit.adjusted_r2)?;
            writeln!(w, "n\t{}", fit.n)?;
            w.flush().map_err(Into::into)
        })?;
    }
    m.finish()
}

// ---------------------------------------------------------------------------
// all
// ---------------------------------------------------------------------------

pub fn run_all(cfg: &PipelineConfig) -> Result<()> {
    run_ingest(cfg)?;
    run_prep(cfg)?;
    run_index(cfg)?;
    run_score(cfg)?;
    if cfg.concordance.is_some() {
        run_classify(cfg)?;
    } else {
        log::info!("skipping classify: no concordance configured");
    }
    run_aggregate(cfg)?;
    run_analyze(cfg)?;
    Ok(())
}
