//! Exposure scores over the thresholded task-patent matrix.
//!
//! A task's exposure to a patent subset is the log of one plus its matched
//! patent count. Occupations average their task scores weighted by task
//! importance; career clusters average occupation scores unweighted (an
//! employment-weighted variant sits behind an option). Yearly series,
//! task-type z-score assignment, and count histograms feed the descriptive
//! tables.
//!
//! Counts are exact integers, so the partition identity
//! `count(all) = count(4ir) + count(non_4ir)` holds exactly at every level.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::PatentRecord;
use crate::error::Error;
use crate::fourir::{classify, ConcordanceTable};
use crate::numeric::{mean_stddev, NeumaierSum};
use crate::similarity::TaskPatentScoreMatrix;
use crate::Result;

/// Aggregation level of an exposure score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EntityKind {
    Task,
    Dwa,
    Occupation,
    Cluster,
    WorkActivity,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Task => "task",
            EntityKind::Dwa => "dwa",
            EntityKind::Occupation => "occupation",
            EntityKind::Cluster => "cluster",
            EntityKind::WorkActivity => "work_activity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "task" => Some(EntityKind::Task),
            "dwa" => Some(EntityKind::Dwa),
            "occupation" => Some(EntityKind::Occupation),
            "cluster" => Some(EntityKind::Cluster),
            "work_activity" => Some(EntityKind::WorkActivity),
            _ => None,
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which patents count toward a score.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum PatentSubset {
    All,
    FourIr,
    NonFourIr,
    /// Patents tagged with one technology field.
    Field(String),
}

impl PatentSubset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(PatentSubset::All),
            "4ir" => Some(PatentSubset::FourIr),
            "non_4ir" => Some(PatentSubset::NonFourIr),
            _ => s
                .strip_prefix("field:")
                .filter(|id| !id.is_empty())
                .map(|id| PatentSubset::Field(id.to_string())),
        }
    }

    fn admits(&self, tag: &PatentTag) -> bool {
        match self {
            PatentSubset::All => true,
            PatentSubset::FourIr => tag.is_4ir,
            PatentSubset::NonFourIr => !tag.is_4ir,
            PatentSubset::Field(id) => tag.fields.contains(id),
        }
    }
}

impl fmt::Display for PatentSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatentSubset::All => f.write_str("all"),
            PatentSubset::FourIr => f.write_str("4ir"),
            PatentSubset::NonFourIr => f.write_str("non_4ir"),
            PatentSubset::Field(id) => write!(f, "field:{id}"),
        }
    }
}

/// One exposure score record.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureScore {
    pub entity_kind: EntityKind,
    pub entity_id: String,
    pub patent_subset: PatentSubset,
    /// Inclusive filing-year range the count covers.
    pub year_range: (i32, i32),
    pub value: f64,
    pub patent_count: u64,
}

/// Classification tags of one patent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatentTag {
    pub filing_year: i32,
    pub is_4ir: bool,
    pub fields: BTreeSet<String>,
}

/// Patent id to classification tag lookup.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PatentTagIndex {
    tags: HashMap<String, PatentTag>,
}

impl PatentTagIndex {
    /// Classifies every patent against the concordance, in parallel.
    pub fn build(patents: &[PatentRecord], table: &ConcordanceTable) -> Self {
        let tags = patents
            .par_iter()
            .map(|p| {
                let (is_4ir, fields) = classify(p, table);
                (p.patent_id.clone(), PatentTag { filing_year: p.filing_year, is_4ir, fields })
            })
            .collect();
        Self { tags }
    }

    /// Assembles an index from precomputed tags, e.g. a persisted
    /// classification table joined with patent years.
    pub fn from_parts(entries: impl IntoIterator<Item = (String, PatentTag)>) -> Result<Self> {
        let mut tags = HashMap::new();
        for (id, tag) in entries {
            if tags.insert(id.clone(), tag).is_some() {
                return Err(Error::DuplicateId { kind: "patent", id });
            }
        }
        Ok(Self { tags })
    }

    /// Tags every patent non-4IR; for pipelines run without a concordance.
    pub fn untagged(patents: &[PatentRecord]) -> Self {
        let tags = patents
            .iter()
            .map(|p| {
                (
                    p.patent_id.clone(),
                    PatentTag { filing_year: p.filing_year, is_4ir: false, fields: BTreeSet::new() },
                )
            })
            .collect();
        Self { tags }
    }

    pub fn get(&self, patent_id: &str) -> Option<&PatentTag> {
        self.tags.get(patent_id)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    fn require(&self, patent_id: &str) -> Result<&PatentTag> {
        self.get(patent_id)
            .ok_or_else(|| Error::UnknownEntity { kind: "patent", id: patent_id.to_string() })
    }
}

/// log_base(1 + count). Exact library log10/log2 are used for those bases.
fn log_value(count: u64, log_base: f64) -> f64 {
    let x = 1.0 + count as f64;
    if log_base == 10.0 {
        x.log10()
    } else if log_base == 2.0 {
        x.log2()
    } else {
        x.ln() / log_base.ln()
    }
}

fn check_log_base(log_base: f64) -> Result<()> {
    if !(log_base.is_finite() && log_base > 0.0 && log_base != 1.0) {
        return Err(Error::invalid(format!("log base must be positive and not 1, got {log_base}")));
    }
    Ok(())
}

fn check_year_range(year_range: (i32, i32)) -> Result<()> {
    if year_range.0 > year_range.1 {
        return Err(Error::invalid(format!(
            "year range {}..{} is empty",
            year_range.0, year_range.1
        )));
    }
    Ok(())
}

/// Task-level exposure: counts the task's matrix entries whose patent
/// passes the subset and inclusive year filters, then takes
/// log_base(1 + count).
pub fn task_exposure(
    matrix: &TaskPatentScoreMatrix,
    tags: &PatentTagIndex,
    task_id: &str,
    subset: &PatentSubset,
    year_range: (i32, i32),
    log_base: f64,
) -> Result<ExposureScore> {
    check_log_base(log_base)?;
    check_year_range(year_range)?;
    let t = matrix
        .task_index(task_id)
        .ok_or_else(|| Error::UnknownEntity { kind: "task", id: task_id.to_string() })?;

    let mut count = 0u64;
    for &(p, _, _) in matrix.row(t) {
        let tag = tags.require(matrix.patent_id(p))?;
        if tag.filing_year >= year_range.0 && tag.filing_year <= year_range.1 && subset.admits(tag) {
            count += 1;
        }
    }
    Ok(ExposureScore {
        entity_kind: EntityKind::Task,
        entity_id: task_id.to_string(),
        patent_subset: subset.clone(),
        year_range,
        value: log_value(count, log_base),
        patent_count: count,
    })
}

fn check_same_slice(scores: &[&ExposureScore]) -> Result<()> {
    for pair in scores.windows(2) {
        if pair[0].patent_subset != pair[1].patent_subset || pair[0].year_range != pair[1].year_range {
            return Err(Error::invalid(format!(
                "cannot aggregate scores over different subsets or year ranges ({} {} vs {} {})",
                pair[0].patent_subset, pair[0].entity_id, pair[1].patent_subset, pair[1].entity_id
            )));
        }
    }
    Ok(())
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let mut num = NeumaierSum::new();
    let mut den = NeumaierSum::new();
    for (&v, &w) in values.iter().zip(weights) {
        num.add(v * w);
        den.add(w);
    }
    num.total() / den.total()
}

/// Occupation-level exposure: the importance-weighted mean of the
/// occupation's task scores. All inputs must share subset and year range;
/// importances must be positive. The patent count is the plain sum of the
/// task counts.
pub fn occupation_exposure(
    occupation_id: &str,
    task_scores: &[(ExposureScore, f64)],
) -> Result<ExposureScore> {
    if task_scores.is_empty() {
        return Err(Error::EmptyInput("occupation has no task scores"));
    }
    let refs: Vec<&ExposureScore> = task_scores.iter().map(|(s, _)| s).collect();
    check_same_slice(&refs)?;
    for (score, importance) in task_scores {
        if !(importance.is_finite() && *importance > 0.0) {
            return Err(Error::invalid(format!(
                "importance for {} must be positive, got {importance}",
                score.entity_id
            )));
        }
    }

    let values: Vec<f64> = task_scores.iter().map(|(s, _)| s.value).collect();
    let weights: Vec<f64> = task_scores.iter().map(|&(_, w)| w).collect();
    Ok(ExposureScore {
        entity_kind: EntityKind::Occupation,
        entity_id: occupation_id.to_string(),
        patent_subset: task_scores[0].0.patent_subset.clone(),
        year_range: task_scores[0].0.year_range,
        value: weighted_mean(&values, &weights),
        patent_count: task_scores.iter().map(|(s, _)| s.patent_count).sum(),
    })
}

/// Cluster-level exposure: the unweighted mean of the cluster's occupation
/// scores. Passing `employment_weights` (one positive weight per score, in
/// order) switches to an employment-weighted mean.
pub fn cluster_exposure(
    cluster_id: &str,
    occupation_scores: &[ExposureScore],
    employment_weights: Option<&[f64]>,
) -> Result<ExposureScore> {
    if occupation_scores.is_empty() {
        return Err(Error::EmptyInput("cluster has no occupation scores"));
    }
    let refs: Vec<&ExposureScore> = occupation_scores.iter().collect();
    check_same_slice(&refs)?;

    let values: Vec<f64> = occupation_scores.iter().map(|s| s.value).collect();
    let value = match employment_weights {
        None => weighted_mean(&values, &vec![1.0; values.len()]),
        Some(weights) => {
            if weights.len() != occupation_scores.len() {
                return Err(Error::invalid(format!(
                    "{} employment weights for {} occupation scores",
                    weights.len(),
                    occupation_scores.len()
                )));
            }
            if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::invalid("employment weights must be positive".to_string()));
            }
            weighted_mean(&values, weights)
        }
    };
    Ok(ExposureScore {
        entity_kind: EntityKind::Cluster,
        entity_id: cluster_id.to_string(),
        patent_subset: occupation_scores[0].patent_subset.clone(),
        year_range: occupation_scores[0].year_range,
        value,
        patent_count: occupation_scores.iter().map(|s| s.patent_count).sum(),
    })
}

// ---------------------------------------------------------------------------
// Yearly series
// ---------------------------------------------------------------------------

/// Grouping of the yearly series.
pub enum YearlyGrouping<'a> {
    /// One group per task id.
    Task,
    /// "4ir" vs "non_4ir"; an exhaustive split of every entry.
    Subset,
    /// Groups by assigned task type. Multi-type tasks contribute one count
    /// per type; tasks without a type (or absent from the map) fall into
    /// "unassigned".
    TaskType(&'a HashMap<String, BTreeSet<String>>),
}

/// One (year, group) cell of a yearly series.
#[derive(Debug, Clone, PartialEq)]
pub struct YearlyRow {
    pub year: i32,
    pub group: String,
    pub count: u64,
    /// count / total of that year within this grouping.
    pub share: f64,
}

/// Counts matrix entries per filing year and group. Shares divide by the
/// year's total over the same grouping, so they sum to 1 per year.
/// Rows come out sorted by (year, group).
pub fn yearly_series(
    matrix: &TaskPatentScoreMatrix,
    tags: &PatentTagIndex,
    group_by: YearlyGrouping<'_>,
) -> Result<Vec<YearlyRow>> {
    let mut cells: BTreeMap<(i32, String), u64> = BTreeMap::new();
    let mut bump = |year: i32, group: String| *cells.entry((year, group)).or_insert(0) += 1;

    for (t, p, _, _) in matrix.entries() {
        let task_id = &matrix.task_ids()[t as usize];
        let tag = tags.require(matrix.patent_id(p))?;
        match &group_by {
            YearlyGrouping::Task => bump(tag.filing_year, task_id.clone()),
            YearlyGrouping::Subset => {
                let group = if tag.is_4ir { "4ir" } else { "non_4ir" };
                bump(tag.filing_year, group.to_string());
            }
            YearlyGrouping::TaskType(assignments) => {
                match assignments.get(task_id).filter(|types| !types.is_empty()) {
                    Some(types) => {
                        for ty in types.iter() {
                            bump(tag.filing_year, ty.clone());
                        }
                    }
                    None => bump(tag.filing_year, "unassigned".to_string()),
                }
            }
        }
    }

    let mut year_totals: BTreeMap<i32, u64> = BTreeMap::new();
    for (&(year, _), &count) in &cells {
        *year_totals.entry(year).or_insert(0) += count;
    }
    Ok(cells
        .into_iter()
        .map(|((year, group), count)| YearlyRow {
            year,
            group,
            count,
            share: count as f64 / year_totals[&year] as f64,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Task types
// ---------------------------------------------------------------------------

/// One task's standing in the task-type scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTypeProfile {
    pub task_id: String,
    /// Average member-measure z-score per task type.
    pub z_scores: BTreeMap<String, f64>,
    /// Types whose average z-score is strictly positive.
    pub assigned_types: BTreeSet<String>,
}

/// One (task, measure) observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMeasure {
    pub task_id: String,
    pub measure_id: String,
    pub value: f64,
}

/// Z-scores every measure across tasks (population standard deviation),
/// averages member-measure z-scores per type, and assigns the types whose
/// average is strictly positive.
///
/// Every measure named by the scheme must be present for every task. A
/// constant measure has undefined z-scores; they are defined as 0 for all
/// tasks and a warning is logged.
pub fn assign_task_types(
    measures: &[TaskMeasure],
    scheme: &[(String, String)],
) -> Result<Vec<TaskTypeProfile>> {
    if scheme.is_empty() {
        return Err(Error::EmptyInput("task-type scheme has no rows"));
    }
    let mut members: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (ty, measure) in scheme {
        let list = members.entry(ty.as_str()).or_default();
        if list.contains(&measure.as_str()) {
            return Err(Error::DuplicateId { kind: "scheme row", id: format!("{ty} -> {measure}") });
        }
        list.push(measure.as_str());
    }
    let needed: BTreeSet<&str> = members.values().flatten().copied().collect();

    let mut task_ids: Vec<&str> = measures.iter().map(|m| m.task_id.as_str()).collect();
    task_ids.sort_unstable();
    task_ids.dedup();

    let mut table: HashMap<(&str, &str), f64> = HashMap::with_capacity(measures.len());
    for m in measures {
        if table.insert((m.task_id.as_str(), m.measure_id.as_str()), m.value).is_some() {
            return Err(Error::DuplicateId {
                kind: "task measure",
                id: format!("{} -> {}", m.task_id, m.measure_id),
            });
        }
        if !m.value.is_finite() {
            return Err(Error::NonFinite(format!("measure {} of task {}", m.measure_id, m.task_id)));
        }
    }
    let missing: Vec<String> = task_ids
        .iter()
        .flat_map(|t| {
            needed
                .iter()
                .filter(|m| !table.contains_key(&(*t, **m)))
                .map(move |m| format!("{t} -> {m}"))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingReference { kind: "task measure", keys: missing });
    }

    // Z-score each needed measure across tasks, in task_id order.
    let mut z: HashMap<&str, Vec<f64>> = HashMap::new();
    for measure in &needed {
        let values: Vec<f64> = task_ids.iter().map(|t| table[&(*t, *measure)]).collect();
        let (mean, sd) = mean_stddev(&values);
        if sd == 0.0 {
            log::warn!("measure {measure} is constant across tasks; z-scores set to 0");
            z.insert(measure, vec![0.0; values.len()]);
        } else {
            z.insert(measure, values.iter().map(|v| (v - mean) / sd).collect());
        }
    }

    Ok(task_ids
        .iter()
        .enumerate()
        .map(|(i, task_id)| {
            let mut z_scores = BTreeMap::new();
            let mut assigned_types = BTreeSet::new();
            for (ty, measure_ids) in &members {
                let mut acc = NeumaierSum::new();
                for m in measure_ids {
                    acc.add(z[m][i]);
                }
                let avg = acc.total() / measure_ids.len() as f64;
                z_scores.insert(ty.to_string(), avg);
                if avg > 0.0 {
                    assigned_types.insert(ty.to_string());
                }
            }
            TaskTypeProfile { task_id: task_id.to_string(), z_scores, assigned_types }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// Which matrix marginal to bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistogramAxis {
    TasksPerPatent,
    PatentsPerTask,
}

/// One bin covering the inclusive integer range [low, high].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramBin {
    pub low: u64,
    pub high: u64,
    pub count: u64,
}

/// Bins entry counts per entity into `bins` equal integer-width bins
/// covering 0..=max. Entities without entries count at zero, so bin totals
/// equal the number of patents (or tasks).
pub fn histogram(matrix: &TaskPatentScoreMatrix, axis: HistogramAxis, bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin".to_string()));
    }
    let per_entity: Vec<u64> = match axis {
        HistogramAxis::PatentsPerTask => {
            (0..matrix.task_ids().len()).map(|t| matrix.row(t as u32).len() as u64).collect()
        }
        HistogramAxis::TasksPerPatent => {
            let mut counts = vec![0u64; matrix.patent_ids().len()];
            for (_, p, _, _) in matrix.entries() {
                counts[p as usize] += 1;
            }
            counts
        }
    };

    let max = per_entity.iter().copied().max().unwrap_or(0);
    let width = (max + 1).div_ceil(bins as u64);
    let width = width.max(1);
    let mut out: Vec<HistogramBin> = (0..bins as u64)
        .map(|i| HistogramBin { low: i * width, high: (i + 1) * width - 1, count: 0 })
        .collect();
    for v in per_entity {
        out[(v / width) as usize].count += 1;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

const SCORES_HEADER: [&str; 7] =
    ["entity_kind", "entity_id", "subset", "year_min", "year_max", "patent_count", "value"];

/// Writes scores as TSV in the given order. Values print in shortest
/// round-trip form.
pub fn save_scores_tsv(scores: &[ExposureScore], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", SCORES_HEADER.join("\t")).map_err(|e| Error::io(path, e))?;
    for s in scores {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.entity_kind, s.entity_id, s.patent_subset, s.year_range.0, s.year_range.1, s.patent_count, s.value
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_scores_tsv(path: &Path) -> Result<Vec<ExposureScore>> {
    let rows = crate::corpus::read_tsv(path, &SCORES_HEADER)?;
    rows.into_iter()
        .map(|(line, f)| {
            let entity_kind = EntityKind::parse(&f[0])
                .ok_or_else(|| Error::parse(path, line, format!("unknown entity kind: {:?}", f[0])))?;
            let patent_subset = PatentSubset::parse(&f[2])
                .ok_or_else(|| Error::parse(path, line, format!("unknown subset: {:?}", f[2])))?;
            let parse_num = |raw: &str, what: &str| {
                raw.parse()
                    .map_err(|_| Error::parse(path, line, format!("bad {what}: {raw:?}")))
            };
            Ok(ExposureScore {
                entity_kind,
                entity_id: f[1].clone(),
                patent_subset,
                year_range: (
                    f[3].parse().map_err(|_| Error::parse(path, line, format!("bad year: {:?}", f[3])))?,
                    f[4].parse().map_err(|_| Error::parse(path, line, format!("bad year: {:?}", f[4])))?,
                ),
                patent_count: f[5]
                    .parse()
                    .map_err(|_| Error::parse(path, line, format!("bad count: {:?}", f[5])))?,
                value: parse_num(&f[6], "value")?,
            })
        })
        .collect()
}

/// Reads task_id, measure_id, value rows.
pub fn load_task_measures(path: &Path) -> Result<Vec<TaskMeasure>> {
    let rows = crate::corpus::read_tsv(path, &["task_id", "measure_id", "value"])?;
    rows.into_iter()
        .map(|(line, f)| {
            let value: f64 = f[2]
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad value: {:?}", f[2])))?;
            if !value.is_finite() {
                return Err(Error::parse(path, line, "non-finite measure value"));
            }
            Ok(TaskMeasure { task_id: f[0].clone(), measure_id: f[1].clone(), value })
        })
        .collect()
}

/// Reads task_type, measure_id rows.
pub fn load_scheme(path: &Path) -> Result<Vec<(String, String)>> {
    let rows = crate::corpus::read_tsv(path, &["task_type", "measure_id"])?;
    Ok(rows.into_iter().map(|(_, f)| (f[0].clone(), f[1].clone())).collect())
}
