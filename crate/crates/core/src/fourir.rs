//! Technology-field concordance and patent classification.
//!
//! A concordance maps classification-code patterns to named technology
//! fields, each belonging to one of three dimensions. A patent counts as
//! 4IR when any of its codes matches any field pattern.
//!
//! Codes and patterns are normalized by removing all whitespace before
//! matching; comparison is case-sensitive after that. Prefix patterns match
//! normalized prefixes, and explicit ranges compare lexicographically on
//! the normalized strings. Classification schemes differ in how they order
//! codes, so range semantics are documented here rather than assumed
//! universal.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use crate::corpus::PatentRecord;
use crate::error::Error;
use crate::Result;

/// The three layers of the technology taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Dimension {
    Core,
    Enabling,
    Application,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Core => "core",
            Dimension::Enabling => "enabling",
            Dimension::Application => "application",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "core" => Some(Dimension::Core),
            "enabling" => Some(Dimension::Enabling),
            "application" => Some(Dimension::Application),
            _ => None,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One classification-code pattern, already normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodePattern {
    /// Matches codes starting with the given string.
    Prefix(String),
    /// Matches codes with low <= code <= high, lexicographically.
    Range(String, String),
}

impl CodePattern {
    /// Parses `PREFIX:<p>`, `RANGE:<low>:<high>`, or a bare prefix.
    pub fn parse(raw: &str) -> Result<Self> {
        let norm = normalize_code(raw);
        if norm.is_empty() {
            return Err(Error::invalid("empty code pattern".to_string()));
        }
        if let Some(rest) = norm.strip_prefix("PREFIX:") {
            if rest.is_empty() {
                return Err(Error::invalid("empty prefix pattern".to_string()));
            }
            return Ok(CodePattern::Prefix(rest.to_string()));
        }
        if let Some(rest) = norm.strip_prefix("RANGE:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 2 || parts[0].is_empty() || parts[1].is_empty() {
                return Err(Error::invalid(format!(
                    "range pattern must be RANGE:<low>:<high>, got {raw:?}"
                )));
            }
            if parts[0] > parts[1] {
                return Err(Error::invalid(format!(
                    "range low {:?} exceeds high {:?}",
                    parts[0], parts[1]
                )));
            }
            return Ok(CodePattern::Range(parts[0].to_string(), parts[1].to_string()));
        }
        Ok(CodePattern::Prefix(norm))
    }

    /// Whether a normalized code matches this pattern.
    pub fn matches(&self, normalized_code: &str) -> bool {
        match self {
            CodePattern::Prefix(p) => normalized_code.starts_with(p.as_str()),
            CodePattern::Range(low, high) => {
                normalized_code >= low.as_str() && normalized_code <= high.as_str()
            }
        }
    }

    /// Canonical text form, the inverse of [`CodePattern::parse`].
    pub fn to_pattern_string(&self) -> String {
        match self {
            CodePattern::Prefix(p) => format!("PREFIX:{p}"),
            CodePattern::Range(low, high) => format!("RANGE:{low}:{high}"),
        }
    }
}

/// Removes all whitespace from a classification code or pattern.
pub fn normalize_code(code: &str) -> String {
    code.chars().filter(|c| !c.is_whitespace()).collect()
}

/// One technology field with its code patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TechField {
    pub field_id: String,
    pub name: String,
    pub dimension: Dimension,
    pub code_ranges: Vec<CodePattern>,
}

impl TechField {
    pub fn matches(&self, normalized_code: &str) -> bool {
        self.code_ranges.iter().any(|p| p.matches(normalized_code))
    }
}

/// All technology fields of one concordance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcordanceTable {
    fields: Vec<TechField>,
}

impl ConcordanceTable {
    /// Requires at least one field and unique field ids.
    pub fn new(fields: Vec<TechField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::EmptyInput("concordance has no fields"));
        }
        let mut seen = HashSet::new();
        for f in &fields {
            if !seen.insert(f.field_id.as_str()) {
                return Err(Error::DuplicateId { kind: "field", id: f.field_id.clone() });
            }
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[TechField] {
        &self.fields
    }

    pub fn field(&self, field_id: &str) -> Option<&TechField> {
        self.fields.iter().find(|f| f.field_id == field_id)
    }
}

/// Loads a concordance CSV with columns field_id, name, dimension, pattern.
/// The pattern column holds one or more ";"-separated patterns. A header
/// row is recognized by its first column being exactly "field_id".
pub fn load_concordance(path: &Path) -> Result<ConcordanceTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::invalid(format!("{}: {other:?}", path.display())),
        })?;

    let mut fields = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::parse(path, row, e.to_string()))?;
        if idx == 0 && record.get(0) == Some("field_id") {
            continue;
        }
        if record.len() != 4 {
            return Err(Error::parse(path, row, format!("expected 4 columns, found {}", record.len())));
        }
        let field_id = record[0].trim().to_string();
        if field_id.is_empty() {
            return Err(Error::parse(path, row, "empty field_id"));
        }
        let dimension = Dimension::parse(record[2].trim())
            .ok_or_else(|| Error::parse(path, row, format!("unknown dimension: {:?}", &record[2])))?;
        let code_ranges: Vec<CodePattern> = record[3]
            .split(';')
            .filter(|p| !p.trim().is_empty())
            .map(CodePattern::parse)
            .collect::<Result<_>>()
            .map_err(|e| Error::parse(path, row, e.to_string()))?;
        if code_ranges.is_empty() {
            return Err(Error::parse(path, row, "field has no patterns"));
        }
        fields.push(TechField { field_id, name: record[1].trim().to_string(), dimension, code_ranges });
    }
    ConcordanceTable::new(fields)
}

/// Classifies one patent: 4IR iff any code matches any field, together with
/// the ids of all matched fields. Independent of code and field order.
pub fn classify(patent: &PatentRecord, table: &ConcordanceTable) -> (bool, BTreeSet<String>) {
    let mut matched = BTreeSet::new();
    for code in &patent.cpc_codes {
        let norm = normalize_code(code);
        for field in table.fields() {
            if field.matches(&norm) {
                matched.insert(field.field_id.clone());
            }
        }
    }
    (!matched.is_empty(), matched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn patent(codes: &[&str]) -> PatentRecord {
        PatentRecord {
            patent_id: "P1".to_string(),
            family_id: "F1".to_string(),
            office: "US".to_string(),
            filing_year: 2000,
            abstract_text: "x".to_string(),
            cpc_codes: codes.iter().map(|c| c.to_string()).collect(),
        }
    }

    fn field(id: &str, patterns: &[&str]) -> TechField {
        TechField {
            field_id: id.to_string(),
            name: id.to_string(),
            dimension: Dimension::Core,
            code_ranges: patterns.iter().map(|p| CodePattern::parse(p).unwrap()).collect(),
        }
    }

    fn table(fields: Vec<TechField>) -> ConcordanceTable {
        ConcordanceTable::new(fields).unwrap()
    }

    #[test]
    fn bare_pattern_is_a_prefix() {
        assert_eq!(CodePattern::parse("G06N").unwrap(), CodePattern::Prefix("G06N".to_string()));
        assert_eq!(
            CodePattern::parse("PREFIX:G06N").unwrap(),
            CodePattern::Prefix("G06N".to_string())
        );
    }

    #[test]
    fn range_pattern_parses_and_orders() {
        let p = CodePattern::parse("RANGE:G06F0001:G06F0016").unwrap();
        assert_eq!(p, CodePattern::Range("G06F0001".to_string(), "G06F0016".to_string()));
        assert!(CodePattern::parse("RANGE:B:A").is_err());
        assert!(CodePattern::parse("RANGE:A").is_err());
        assert!(CodePattern::parse("RANGE:A:B:C").is_err());
        assert!(CodePattern::parse("   ").is_err());
    }

    #[test]
    fn pattern_round_trips_through_text_form() {
        for raw in ["PREFIX:G06N", "RANGE:G06F0001:G06F0016"] {
            let p = CodePattern::parse(raw).unwrap();
            assert_eq!(p.to_pattern_string(), raw);
            assert_eq!(CodePattern::parse(&p.to_pattern_string()).unwrap(), p);
        }
    }

    #[test]
    fn matching_ignores_whitespace_but_not_case() {
        let f = field("f1", &["G06N"]);
        assert!(f.matches(&normalize_code("G06N 3/08")));
        assert!(f.matches(&normalize_code("  G06N3/08  ")));
        assert!(!f.matches(&normalize_code("g06n 3/08")));
    }

    #[test]
    fn range_bounds_are_inclusive() {
        let f = field("f1", &["RANGE:G06F0001:G06F0016"]);
        assert!(f.matches("G06F0001"));
        assert!(f.matches("G06F0016"));
        assert!(f.matches("G06F0010"));
        assert!(!f.matches("G06F0000"));
        assert!(!f.matches("G06F0017"));
        assert!(!f.matches("G06F"));
    }

    #[test]
    fn any_code_match_makes_a_patent_4ir() {
        let t = table(vec![field("f1", &["G06N"])]);
        let (is_4ir, fields) = classify(&patent(&["G06N 3/08", "A61B 5/00"]), &t);
        assert!(is_4ir);
        assert_eq!(fields.into_iter().collect::<Vec<_>>(), vec!["f1"]);
    }

    #[test]
    fn no_codes_means_not_4ir() {
        let t = table(vec![field("f1", &["G06N"])]);
        let (is_4ir, fields) = classify(&patent(&[]), &t);
        assert!(!is_4ir);
        assert!(fields.is_empty());
    }

    #[test]
    fn overlapping_fields_both_tag() {
        let t = table(vec![
            field("f1", &["G06N"]),
            field("f2", &["RANGE:G06N0001:G06N9999"]),
            field("f3", &["H04L"]),
        ]);
        let (is_4ir, fields) = classify(&patent(&["G06N0003"]), &t);
        assert!(is_4ir);
        assert_eq!(fields.into_iter().collect::<Vec<_>>(), vec!["f1", "f2"]);
    }

    #[test]
    fn classification_is_order_independent() {
        let fields = vec![field("f1", &["G06N"]), field("f2", &["A61B"])];
        let t_fwd = table(fields.clone());
        let t_rev = table(fields.into_iter().rev().collect());
        let p_fwd = patent(&["A61B 5/00", "G06N 3/08"]);
        let p_rev = patent(&["G06N 3/08", "A61B 5/00"]);
        assert_eq!(classify(&p_fwd, &t_fwd), classify(&p_rev, &t_rev));
    }

    #[test]
    fn empty_table_is_rejected() {
        assert!(matches!(ConcordanceTable::new(vec![]).unwrap_err(), Error::EmptyInput(_)));
    }

    #[test]
    fn duplicate_field_id_is_rejected() {
        let err = ConcordanceTable::new(vec![field("f1", &["A"]), field("f1", &["B"])]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { kind: "field", .. }));
    }

    #[test]
    fn csv_loads_with_and_without_header() {
        let mut with = tempfile::NamedTempFile::new().unwrap();
        write!(
            with,
            "field_id,name,dimension,pattern\nf1,Core AI,core,G06N\nf2,Smart agriculture,application,PREFIX:A01B;RANGE:G05B0019:G05B0021\n"
        )
        .unwrap();
        with.flush().unwrap();
        let t = load_concordance(with.path()).unwrap();
        assert_eq!(t.fields().len(), 2);
        assert_eq!(t.field("f1").unwrap().dimension, Dimension::Core);
        assert_eq!(t.field("f2").unwrap().code_ranges.len(), 2);

        let mut without = tempfile::NamedTempFile::new().unwrap();
        writeln!(without, "f1,Core AI,enabling,G06N").unwrap();
        without.flush().unwrap();
        let t = load_concordance(without.path()).unwrap();
        assert_eq!(t.field("f1").unwrap().code_ranges, vec![CodePattern::Prefix("G06N".to_string())]);
        assert_eq!(t.field("f1").unwrap().dimension, Dimension::Enabling);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "f1,ok,core,G06N\nf2,bad,core,RANGE:Z:A\n").unwrap();
        f.flush().unwrap();
        match load_concordance(f.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "f1,ok,sideways,G06N").unwrap();
        g.flush().unwrap();
        assert!(matches!(load_concordance(g.path()).unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_csv_is_an_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_concordance(f.path()).is_err());
        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "field_id,name,dimension,pattern").unwrap();
        g.flush().unwrap();
        assert!(load_concordance(g.path()).is_err());
    }

    #[test]
    fn ten_field_fixture_round_trips() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "field_id,name,dimension,pattern").unwrap();
        for i in 0..10 {
            let dim = ["core", "enabling", "application"][i % 3];
            writeln!(f, "f{i},Field {i},{dim},PREFIX:C{i:02};RANGE:D{i:02}00:D{i:02}99").unwrap();
        }
        f.flush().unwrap();
        let t = load_concordance(f.path()).unwrap();
        assert_eq!(t.fields().len(), 10);
        for i in 0..10 {
            let fld = t.field(&format!("f{i}")).unwrap();
            assert_eq!(fld.code_ranges.len(), 2);
            assert_eq!(fld.code_ranges[0].to_pattern_string(), format!("PREFIX:C{i:02}"));
            assert_eq!(fld.code_ranges[1].to_pattern_string(), format!("RANGE:D{i:02}00:D{i:02}99"));
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_code() -> impl Strategy<Value = String> {
            "[A-D][0-3]{2}[A-D][0-9]{2}"
        }

        fn arb_field(id: usize) -> impl Strategy<Value = TechField> {
            let pattern = prop_oneof![
                "[A-D][0-3]{0,2}".prop_map(CodePattern::Prefix),
                (arb_code(), arb_code()).prop_map(|(a, b)| {
                    if a <= b {
                        CodePattern::Range(a, b)
                    } else {
                        CodePattern::Range(b, a)
                    }
                }),
            ];
            prop::collection::vec(pattern, 1..3).prop_map(move |code_ranges| TechField {
                field_id: format!("f{id}"),
                name: format!("field {id}"),
                dimension: Dimension::Core,
                code_ranges,
            })
        }

        fn arb_table() -> impl Strategy<Value = Vec<TechField>> {
            (1usize..5).prop_flat_map(|n| {
                (0..n).map(arb_field).collect::<Vec<_>>()
            })
        }

        proptest! {
            #[test]
            fn adding_a_field_never_unclassifies(fields in arb_table(), extra in arb_field(99), codes in prop::collection::vec(arb_code(), 0..5)) {
                let p = patent(&codes.iter().map(String::as_str).collect::<Vec<_>>());
                let before = classify(&p, &table(fields.clone()));
                let mut grown = fields;
                grown.push(extra);
                let after = classify(&p, &table(grown));
                prop_assert!(!before.0 || after.0);
                prop_assert!(before.1.is_subset(&after.1));
            }

            #[test]
            fn adding_a_code_never_removes_tags(fields in arb_table(), codes in prop::collection::vec(arb_code(), 0..5), extra in arb_code()) {
                let t = table(fields);
                let p = patent(&codes.iter().map(String::as_str).collect::<Vec<_>>());
                let before = classify(&p, &t);
                let mut grown_codes = codes;
                grown_codes.push(extra);
                let grown = patent(&grown_codes.iter().map(String::as_str).collect::<Vec<_>>());
                let after = classify(&grown, &t);
                prop_assert!(before.1.is_subset(&after.1));
            }

            #[test]
            fn permutation_invariance(fields in arb_table(), codes in prop::collection::vec(arb_code(), 0..6)) {
                let forward = classify(
                    &patent(&codes.iter().map(String::as_str).collect::<Vec<_>>()),
                    &table(fields.clone()),
                );
                let reversed_codes: Vec<&str> = codes.iter().rev().map(String::as_str).collect();
                let backward = classify(
                    &patent(&reversed_codes),
                    &table(fields.into_iter().rev().collect()),
                );
                prop_assert_eq!(forward, backward);
            }
        }
    }
}
