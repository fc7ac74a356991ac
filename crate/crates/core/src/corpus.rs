//! Input records and loaders: patents, tasks, detailed work activities
//! (DWAs) and occupations.
//!
//! Patents arrive as JSON lines, the occupational files as headered TSV.
//! Loaders validate referential integrity up front so downstream stages can
//! index by id without checking. All loaders return records sorted by id,
//! which keeps later processing order-independent of input file order.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// One patent, reduced to the fields the pipeline needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatentRecord {
    pub patent_id: String,
    /// Family grouping id; one member per family survives deduplication.
    pub family_id: String,
    /// Issuing office code, e.g. "US", "EP", "WO".
    pub office: String,
    pub filing_year: i32,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    /// Raw CPC classification codes, whitespace preserved as found.
    pub cpc_codes: Vec<String>,
}

/// One task statement tied to a single DWA and occupation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub text: String,
    pub dwa_id: String,
    pub occupation_id: String,
    /// Task importance within its occupation, in (0, 1].
    pub importance: f64,
}

/// A detailed work activity grouping one or more tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwaRecord {
    pub dwa_id: String,
    pub title: String,
    pub member_task_ids: Vec<String>,
}

/// An occupation with the descriptors used for aggregation and analysis.
///
/// Optional descriptors stay `None` when the source file leaves them blank;
/// they are never zero-filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationRecord {
    pub occupation_id: String,
    pub title: String,
    pub career_cluster: String,
    pub education_share_college: Option<f64>,
    pub job_zone: Option<u8>,
    pub mean_wage: Option<f64>,
    pub employment: Option<u64>,
}

/// Result of [`load_patents`]: surviving records plus drop counters.
#[derive(Debug, Clone, Default)]
pub struct PatentLoad {
    /// Records sorted by `patent_id`.
    pub records: Vec<PatentRecord>,
    pub dropped_out_of_range: usize,
    pub dropped_empty_abstract: usize,
}

/// Office preference used by [`dedupe_families`]: earlier groups win.
/// Offices not listed anywhere rank after every listed group.
pub fn default_office_rank() -> Vec<Vec<String>> {
    [
        vec!["US"],
        vec!["GB", "CA", "AU", "NZ", "IE"],
        vec!["WO"],
        vec!["EP"],
    ]
    .into_iter()
    .map(|g| g.into_iter().map(str::to_string).collect())
    .collect()
}

/// Loads a JSONL patent file, keeping records with a nonempty abstract and a
/// filing year inside `year_range` (inclusive). Dropped records are counted,
/// not errors. Duplicate patent ids and malformed lines are errors.
pub fn load_patents(path: &Path, year_range: (i32, i32)) -> Result<PatentLoad> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut load = PatentLoad::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatentRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, format!("bad patent record: {e}")))?;
        if record.abstract_text.trim().is_empty() {
            load.dropped_empty_abstract += 1;
            continue;
        }
        if record.filing_year < year_range.0 || record.filing_year > year_range.1 {
            load.dropped_out_of_range += 1;
            continue;
        }
        load.records.push(record);
    }

    load.records.sort_by(|a, b| a.patent_id.cmp(&b.patent_id));
    for pair in load.records.windows(2) {
        if pair[0].patent_id == pair[1].patent_id {
            return Err(Error::DuplicateId { kind: "patent", id: pair[0].patent_id.clone() });
        }
    }
    Ok(load)
}

/// Writes patents as JSON lines. Inverse of [`load_patents`] for records
/// that pass its filters.
pub fn save_patents(path: &Path, records: &[PatentRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn office_rank_of(office: &str, office_rank: &[Vec<String>]) -> usize {
    let needle = office.to_ascii_uppercase();
    for (rank, group) in office_rank.iter().enumerate() {
        if group.iter().any(|o| o.eq_ignore_ascii_case(&needle)) {
            return rank;
        }
    }
    office_rank.len()
}

/// Keeps exactly one patent per family: the member whose office appears in
/// the earliest preference group, with ties broken by the lexicographically
/// smallest `patent_id`. Output is sorted by `patent_id`. Idempotent.
pub fn dedupe_families(records: Vec<PatentRecord>, office_rank: &[Vec<String>]) -> Vec<PatentRecord> {
    let mut best: HashMap<String, PatentRecord> = HashMap::with_capacity(records.len());
    for rec in records {
        match best.get(&rec.family_id) {
            None => {
                best.insert(rec.family_id.clone(), rec);
            }
            Some(cur) => {
                let new_key = (office_rank_of(&rec.office, office_rank), &rec.patent_id);
                let cur_key = (office_rank_of(&cur.office, office_rank), &cur.patent_id);
                if new_key < cur_key {
                    best.insert(rec.family_id.clone(), rec);
                }
            }
        }
    }
    let mut out: Vec<PatentRecord> = best.into_values().collect();
    out.sort_by(|a, b| a.patent_id.cmp(&b.patent_id));
    out
}

// ---------------------------------------------------------------------------
// TSV plumbing
// ---------------------------------------------------------------------------

pub(crate) fn read_tsv(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header row"))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let found: Vec<&str> = first.split('\t').collect();
    if found != header {
        return Err(Error::parse(
            path,
            1,
            format!("expected header {:?}, found {:?}", header.join("\t"), first),
        ));
    }

    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected {} columns, found {}", header.len(), fields.len()),
            ));
        }
        rows.push((idx + 1, fields));
    }
    Ok(rows)
}

fn parse_opt<T: std::str::FromStr>(
    raw: &str,
    path: &Path,
    line: usize,
    what: &str,
) -> Result<Option<T>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<T>()
        .map(Some)
        .map_err(|_| Error::parse(path, line, format!("bad {what}: {raw:?}")))
}

fn check_no_tabs(value: &str, what: &str) -> Result<()> {
    if value.contains('\t') || value.contains('\n') {
        return Err(Error::invalid(format!("{what} contains a tab or newline: {value:?}")));
    }
    Ok(())
}

/// Loads tasks, DWAs and occupations together and verifies that every
/// cross-reference resolves:
///
/// * each task's `dwa_id` and `occupation_id` name a loaded record,
/// * each DWA lists at least one member and every member task exists,
/// * each task importance lies in (0, 1].
///
/// Errors carry the full list of offending keys, not just the first.
pub fn load_tasks(
    tasks_path: &Path,
    dwas_path: &Path,
    occupations_path: &Path,
) -> Result<(Vec<TaskRecord>, Vec<DwaRecord>, Vec<OccupationRecord>)> {
    let occupations = load_occupations(occupations_path)?;
    let dwas = load_dwas(dwas_path)?;
    let tasks = load_task_file(tasks_path)?;

    let occ_ids: HashSet<&str> = occupations.iter().map(|o| o.occupation_id.as_str()).collect();
    let dwa_ids: HashSet<&str> = dwas.iter().map(|d| d.dwa_id.as_str()).collect();
    let task_ids: HashSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();

    let mut bad_dwa_refs = Vec::new();
    let mut bad_occ_refs = Vec::new();
    for t in &tasks {
        if !dwa_ids.contains(t.dwa_id.as_str()) {
            bad_dwa_refs.push(format!("{} -> {}", t.task_id, t.dwa_id));
        }
        if !occ_ids.contains(t.occupation_id.as_str()) {
            bad_occ_refs.push(format!("{} -> {}", t.task_id, t.occupation_id));
        }
    }
    if !bad_dwa_refs.is_empty() {
        return Err(Error::MissingReference { kind: "dwa", keys: bad_dwa_refs });
    }
    if !bad_occ_refs.is_empty() {
        return Err(Error::MissingReference { kind: "occupation", keys: bad_occ_refs });
    }

    let mut bad_members = Vec::new();
    for d in &dwas {
        for m in &d.member_task_ids {
            if !task_ids.contains(m.as_str()) {
                bad_members.push(format!("{} -> {}", d.dwa_id, m));
            }
        }
    }
    if !bad_members.is_empty() {
        return Err(Error::MissingReference { kind: "task", keys: bad_members });
    }

    Ok((tasks, dwas, occupations))
}

fn load_task_file(path: &Path) -> Result<Vec<TaskRecord>> {
    let rows = read_tsv(path, &["task_id", "text", "dwa_id", "occupation_id", "importance"])?;
    let mut tasks = Vec::with_capacity(rows.len());
    for (line, f) in rows {
        let importance: f64 = f[4]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad importance: {:?}", f[4])))?;
        if !(importance > 0.0 && importance <= 1.0) {
            return Err(Error::parse(
                path,
                line,
                format!("importance for {} must be in (0, 1], got {}", f[0], importance),
            ));
        }
        tasks.push(TaskRecord {
            task_id: f[0].clone(),
            text: f[1].clone(),
            dwa_id: f[2].clone(),
            occupation_id: f[3].clone(),
            importance,
        });
    }
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    check_unique(tasks.iter().map(|t| t.task_id.as_str()), "task")?;
    Ok(tasks)
}

fn load_dwas(path: &Path) -> Result<Vec<DwaRecord>> {
    let rows = read_tsv(path, &["dwa_id", "title", "member_task_ids"])?;
    let mut dwas = Vec::with_capacity(rows.len());
    for (line, f) in rows {
        let members: Vec<String> = f[2]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if members.is_empty() {
            return Err(Error::parse(path, line, format!("dwa {} has no member tasks", f[0])));
        }
        dwas.push(DwaRecord { dwa_id: f[0].clone(), title: f[1].clone(), member_task_ids: members });
    }
    dwas.sort_by(|a, b| a.dwa_id.cmp(&b.dwa_id));
    check_unique(dwas.iter().map(|d| d.dwa_id.as_str()), "dwa")?;
    Ok(dwas)
}

fn load_occupations(path: &Path) -> Result<Vec<OccupationRecord>> {
    let header = [
        "occupation_id",
        "title",
        "career_cluster",
        "education_share_college",
        "job_zone",
        "mean_wage",
        "employment",
    ];
    let rows = read_tsv(path, &header)?;
    let mut occs = Vec::with_capacity(rows.len());
    for (line, f) in rows {
        if f[2].is_empty() {
            return Err(Error::parse(path, line, format!("occupation {} has no career cluster", f[0])));
        }
        let education_share_college: Option<f64> =
            parse_opt(&f[3], path, line, "education_share_college")?;
        if let Some(s) = education_share_college {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::parse(
                    path,
                    line,
                    format!("education_share_college for {} must be in [0, 1], got {s}", f[0]),
                ));
            }
        }
        occs.push(OccupationRecord {
            occupation_id: f[0].clone(),
            title: f[1].clone(),
            career_cluster: f[2].clone(),
            education_share_college,
            job_zone: parse_opt(&f[4], path, line, "job_zone")?,
            mean_wage: parse_opt(&f[5], path, line, "mean_wage")?,
            employment: parse_opt(&f[6], path, line, "employment")?,
        });
    }
    occs.sort_by(|a, b| a.occupation_id.cmp(&b.occupation_id));
    check_unique(occs.iter().map(|o| o.occupation_id.as_str()), "occupation")?;
    Ok(occs)
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>, kind: &'static str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId { kind, id: id.to_string() });
        }
    }
    Ok(())
}

pub fn save_task_file(path: &Path, tasks: &[TaskRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "task_id\ttext\tdwa_id\toccupation_id\timportance").map_err(|e| Error::io(path, e))?;
    for t in tasks {
        for (v, what) in [(&t.task_id, "task_id"), (&t.text, "text"), (&t.dwa_id, "dwa_id")] {
            check_no_tabs(v, what)?;
        }
        writeln!(w, "{}\t{}\t{}\t{}\t{}", t.task_id, t.text, t.dwa_id, t.occupation_id, t.importance)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_dwas(path: &Path, dwas: &[DwaRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "dwa_id\ttitle\tmember_task_ids").map_err(|e| Error::io(path, e))?;
    for d in dwas {
        check_no_tabs(&d.title, "title")?;
        writeln!(w, "{}\t{}\t{}", d.dwa_id, d.title, d.member_task_ids.join(";"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_occupations(path: &Path, occs: &[OccupationRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "occupation_id\ttitle\tcareer_cluster\teducation_share_college\tjob_zone\tmean_wage\temployment"
    )
    .map_err(|e| Error::io(path, e))?;
    for o in occs {
        check_no_tabs(&o.title, "title")?;
        check_no_tabs(&o.career_cluster, "career_cluster")?;
        let fmt_f = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            o.occupation_id,
            o.title,
            o.career_cluster,
            fmt_f(&o.education_share_college),
            o.job_zone.map(|x| x.to_string()).unwrap_or_default(),
            fmt_f(&o.mean_wage),
            o.employment.map(|x| x.to_string()).unwrap_or_default(),
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
