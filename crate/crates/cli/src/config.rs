//! Pipeline configuration: a single `key = value` file, validated up front.
//!
//! Paths are resolved relative to the config file's directory. Validation
//! collects every violation before failing so a bad file is fixed in one
//! round trip. Command-line flags override the corresponding keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use patex_core::similarity::ThresholdScope;

/// All knobs of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub patents: PathBuf,
    pub tasks: PathBuf,
    pub dwas: PathBuf,
    pub occupations: PathBuf,
    pub vectors_a: PathBuf,
    pub vectors_b: PathBuf,
    pub label_a: String,
    pub label_b: String,
    pub stopwords: Option<PathBuf>,
    pub concordance: Option<PathBuf>,
    pub task_measures: Option<PathBuf>,
    pub scheme: Option<PathBuf>,
    /// External indices keyed by id, from `index.<id> = <path>` lines.
    pub indices: BTreeMap<String, PathBuf>,
    pub regression_index: Option<String>,
    pub smooth_index: Option<String>,
    pub year_min: i32,
    pub year_max: i32,
    pub k_sigma: f64,
    pub threshold_scope: ThresholdScope,
    /// None means automatic (max(2, DWA member count)).
    pub oversample: Option<usize>,
    pub log_base: f64,
    /// Office preference groups, earlier groups win family deduplication.
    pub office_rank: Vec<Vec<String>>,
    pub bandwidth: f64,
    pub grid: usize,
    pub similarity_floor: f64,
    pub top_n: usize,
    pub hist_bins: usize,
    pub cluster_employment_weighted: bool,
    /// Clause starters removed from task text, e.g. ", using ".
    pub tool_triggers: Vec<String>,
    /// 0 means the library picks the thread count.
    pub threads: usize,
    pub out: PathBuf,
}

/// Command-line overrides applied after the file is parsed.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

fn parse_office_rank(raw: &str) -> Vec<Vec<String>> {
    raw.split('|')
        .map(|group| {
            group
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .filter(|g| !g.is_empty())
        .collect()
}

impl PipelineConfig {
    /// Parses and validates a config file. All violations are reported at
    /// once; any violation is fatal.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();

        let mut raw: BTreeMap<String, String> = BTreeMap::new();
        let mut violations: Vec<String> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    let key = key.trim().to_string();
                    if raw.insert(key.clone(), value.trim().to_string()).is_some() {
                        violations.push(format!("line {}: duplicate key {key:?}", idx + 1));
                    }
                }
                None => violations.push(format!("line {}: expected key = value", idx + 1)),
            }
        }

        let mut indices = BTreeMap::new();
        let mut plain: BTreeMap<String, String> = BTreeMap::new();
        for (key, value) in raw {
            if let Some(id) = key.strip_prefix("index.") {
                if id.is_empty() {
                    violations.push("index key with empty id".to_string());
                } else {
                    indices.insert(id.to_string(), base.join(&value));
                }
            } else {
                plain.insert(key, value);
            }
        }

        let known = [
            "patents", "tasks", "dwas", "occupations", "vectors_a", "vectors_b", "label_a",
            "label_b", "stopwords", "concordance", "task_measures", "scheme", "regression_index",
            "smooth_index", "year_min", "year_max", "k_sigma", "threshold_scope", "oversample",
            "log_base", "office_rank", "bandwidth", "grid", "similarity_floor", "top_n",
            "hist_bins", "cluster_employment_weighted", "tool_triggers", "threads", "out",
        ];
        for key in plain.keys() {
            if !known.contains(&key.as_str()) {
                violations.push(format!("unknown key {key:?}"));
            }
        }

        let get = |key: &str| plain.get(key).map(String::as_str);
        let req_path = |key: &str, violations: &mut Vec<String>| -> PathBuf {
            match get(key) {
                Some(v) => base.join(v),
                None => {
                    violations.push(format!("missing required key {key:?}"));
                    PathBuf::new()
                }
            }
        };
        let opt_path = |key: &str| get(key).map(|v| base.join(v));

        fn parse_num<T: std::str::FromStr>(
            key: &str,
            raw: Option<&str>,
            default: T,
            violations: &mut Vec<String>,
        ) -> T {
            match raw {
                None => default,
                Some(v) => v.parse().unwrap_or_else(|_| {
                    violations.push(format!("{key}: cannot parse {v:?}"));
                    default
                }),
            }
        }

        let patents = req_path("patents", &mut violations);
        let tasks = req_path("tasks", &mut violations);
        let dwas = req_path("dwas", &mut violations);
        let occupations = req_path("occupations", &mut violations);
        let vectors_a = req_path("vectors_a", &mut violations);
        let vectors_b = req_path("vectors_b", &mut violations);

        let year_min = parse_num("year_min", get("year_min"), 1970, &mut violations);
        let year_max = parse_num("year_max", get("year_max"), 9999, &mut violations);
        let k_sigma = parse_num("k_sigma", get("k_sigma"), 9.0, &mut violations);
        let log_base = parse_num("log_base", get("log_base"), 10.0, &mut violations);
        let bandwidth = parse_num("bandwidth", get("bandwidth"), 0.08, &mut violations);
        let grid = parse_num("grid", get("grid"), 100, &mut violations);
        let similarity_floor =
            parse_num("similarity_floor", get("similarity_floor"), 0.0, &mut violations);
        let top_n = parse_num("top_n", get("top_n"), 5, &mut violations);
        let hist_bins = parse_num("hist_bins", get("hist_bins"), 20, &mut violations);
        let threads = parse_num("threads", get("threads"), 0usize, &mut violations);

        let threshold_scope = match get("threshold_scope") {
            None | Some("global") => ThresholdScope::Global,
            Some("per_task") => ThresholdScope::PerTask,
            Some(v) => {
                violations.push(format!("threshold_scope: expected global or per_task, got {v:?}"));
                ThresholdScope::Global
            }
        };
        let oversample = match get("oversample") {
            None | Some("auto") => None,
            Some(v) => match v.parse::<usize>() {
                Ok(k) if k >= 1 => Some(k),
                _ => {
                    violations.push(format!("oversample: expected auto or integer >= 1, got {v:?}"));
                    None
                }
            },
        };
        let cluster_employment_weighted = match get("cluster_employment_weighted") {
            None | Some("false") => false,
            Some("true") => true,
            Some(v) => {
                violations.push(format!("cluster_employment_weighted: expected true or false, got {v:?}"));
                false
            }
        };
        let office_rank = match get("office_rank") {
            None => patex_core::corpus::default_office_rank(),
            Some(v) => {
                let groups = parse_office_rank(v);
                if groups.is_empty() {
                    violations.push(format!("office_rank: no office groups in {v:?}"));
                }
                groups
            }
        };
        let tool_triggers: Vec<String> = match get("tool_triggers") {
            None => vec![", using ".to_string()],
            Some(v) => {
                let triggers: Vec<String> =
                    v.split(';').filter(|s| !s.is_empty()).map(str::to_string).collect();
                if triggers.is_empty() {
                    violations.push(format!("tool_triggers: no phrases in {v:?}"));
                }
                triggers
            }
        };

        let regression_index = get("regression_index").map(str::to_string);
        let smooth_index = get("smooth_index").map(str::to_string);
        for (key, id) in [("regression_index", &regression_index), ("smooth_index", &smooth_index)] {
            if let Some(id) = id {
                if !indices.contains_key(id) {
                    violations.push(format!("{key}: no index.{id} is configured"));
                }
            }
        }

        let out = overrides
            .out
            .clone()
            .or_else(|| get("out").map(|v| base.join(v)))
            .unwrap_or_default();
        if out.as_os_str().is_empty() {
            violations.push("no output directory: set out = <dir> or pass --out".to_string());
        }

        let config = PipelineConfig {
            patents,
            tasks,
            dwas,
            occupations,
            vectors_a,
            vectors_b,
            label_a: get("label_a").unwrap_or("general-corpus").to_string(),
            label_b: get("label_b").unwrap_or("patent-corpus").to_string(),
            stopwords: opt_path("stopwords"),
            concordance: opt_path("concordance"),
            task_measures: opt_path("task_measures"),
            scheme: opt_path("scheme"),
            indices,
            regression_index,
            smooth_index,
            year_min,
            year_max,
            k_sigma,
            threshold_scope,
            oversample,
            log_base,
            office_rank,
            bandwidth,
            grid,
            similarity_floor,
            top_n,
            hist_bins,
            cluster_employment_weighted,
            tool_triggers,
            threads: overrides.threads.unwrap_or(threads),
            out,
        };
        config.validate(&mut violations);

        if !violations.is_empty() {
            bail!("invalid config {}:\n  - {}", path.display(), violations.join("\n  - "));
        }
        Ok(config)
    }

    fn validate(&self, violations: &mut Vec<String>) {
        let mut existing = |what: &str, path: &Path| {
            if path.as_os_str().is_empty() {
                return; // Already reported as a missing key.
            }
            if !path.is_file() {
                violations.push(format!("{what}: {} does not exist", path.display()));
            }
        };
        existing("patents", &self.patents);
        existing("tasks", &self.tasks);
        existing("dwas", &self.dwas);
        existing("occupations", &self.occupations);
        existing("vectors_a", &self.vectors_a);
        existing("vectors_b", &self.vectors_b);
        for (key, path) in [
            ("stopwords", &self.stopwords),
            ("concordance", &self.concordance),
            ("task_measures", &self.task_measures),
            ("scheme", &self.scheme),
        ] {
            if let Some(p) = path {
                existing(key, p);
            }
        }
        for (id, path) in &self.indices {
            if !path.is_file() {
                violations.push(format!("index.{id}: {} does not exist", path.display()));
            }
        }

        if self.year_min > self.year_max {
            violations.push(format!("year range {}..{} is empty", self.year_min, self.year_max));
        }
        if !self.k_sigma.is_finite() || self.k_sigma < 0.0 {
            violations.push(format!("k_sigma must be finite and >= 0, got {}", self.k_sigma));
        }
        if !(self.log_base.is_finite() && self.log_base > 0.0 && self.log_base != 1.0) {
            violations.push(format!("log_base must be positive and not 1, got {}", self.log_base));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth <= 1.0) {
            violations.push(format!("bandwidth must be in (0, 1], got {}", self.bandwidth));
        }
        if self.grid < 2 {
            violations.push(format!("grid must be >= 2, got {}", self.grid));
        }
        if !(0.0..=1.0).contains(&self.similarity_floor) {
            violations.push(format!("similarity_floor must be in [0, 1], got {}", self.similarity_floor));
        }
        if self.top_n < 1 {
            violations.push(format!("top_n must be >= 1, got {}", self.top_n));
        }
        if self.hist_bins < 1 {
            violations.push(format!("hist_bins must be >= 1, got {}", self.hist_bins));
        }
        if self.task_measures.is_some() != self.scheme.is_some() {
            violations.push("task_measures and scheme must be configured together".to_string());
        }
        if self.label_a == self.label_b {
            violations.push(format!("label_a and label_b must differ, both are {:?}", self.label_a));
        }
    }

    /// Scientific parameters recorded in every stage manifest. Thread count
    /// and output location are excluded: they must not affect output bytes.
    pub fn manifest_params(&self) -> BTreeMap<String, serde_json::Value> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: serde_json::Value| {
            m.insert(k.to_string(), v);
        };
        put("label_a", self.label_a.clone().into());
        put("label_b", self.label_b.clone().into());
        put("year_min", self.year_min.into());
        put("year_max", self.year_max.into());
        put("k_sigma", self.k_sigma.into());
        put(
            "threshold_scope",
            match self.threshold_scope {
                ThresholdScope::Global => "global",
                ThresholdScope::PerTask => "per_task",
            }
            .into(),
        );
        put(
            "oversample",
            self.oversample.map(|k| serde_json::Value::from(k as u64)).unwrap_or_else(|| "auto".into()),
        );
        put("log_base", self.log_base.into());
        put(
            "office_rank",
            self.office_rank.iter().map(|g| g.join(",")).collect::<Vec<_>>().join(" | ").into(),
        );
        put("bandwidth", self.bandwidth.into());
        put("grid", (self.grid as u64).into());
        put("similarity_floor", self.similarity_floor.into());
        put("top_n", (self.top_n as u64).into());
        put("hist_bins", (self.hist_bins as u64).into());
        put("cluster_employment_weighted", self.cluster_employment_weighted.into());
        put("tool_triggers", self.tool_triggers.join(";").into());
        put(
            "stopwords",
            self.stopwords.as_ref().map(|_| "file").unwrap_or("default").into(),
        );
        m
    }
}
