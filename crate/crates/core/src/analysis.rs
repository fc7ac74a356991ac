//! Statistical layer: correlation, regression, local smoothing, and
//! comparison of exposure scores against external indices.
//!
//! Everything here is pure over immutable inputs. Sums use compensated
//! accumulation in data order, and grid evaluation parallelizes per grid
//! point, so results do not depend on thread count.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;

use crate::error::Error;
use crate::numeric::{mean_stddev, NeumaierSum};
use crate::scores::ExposureScore;
use crate::Result;

// ---------------------------------------------------------------------------
// Pearson correlation
// ---------------------------------------------------------------------------

/// Pearson correlation of two equally long, nonconstant series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::invalid(format!("correlation needs at least 2 points, got {}", x.len())));
    }
    for (label, series) in [("x", x), ("y", y)] {
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series {label}")));
        }
    }
    let (mx, sx) = mean_stddev(x);
    let (my, sy) = mean_stddev(y);
    if sx == 0.0 {
        return Err(Error::ConstantSeries("x"));
    }
    if sy == 0.0 {
        return Err(Error::ConstantSeries("y"));
    }
    let mut cov = NeumaierSum::new();
    for (&a, &b) in x.iter().zip(y) {
        cov.add((a - mx) * (b - my));
    }
    let r = cov.total() / (x.len() as f64 * sx * sy);
    Ok(r.clamp(-1.0, 1.0))
}

// ---------------------------------------------------------------------------
// Ordinary least squares
// ---------------------------------------------------------------------------

/// One fitted coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTerm {
    pub name: String,
    pub estimate: f64,
    pub t_stat: f64,
}

/// An OLS fit. Terms keep design order, intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    pub terms: Vec<RegressionTerm>,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub n: usize,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        self.terms.iter().find(|t| t.name == name).map(|t| (t.estimate, t.t_stat))
    }
}

fn standardized(values: &[f64], name: &str) -> Result<Vec<f64>> {
    let (mean, sd) = mean_stddev(values);
    if sd == 0.0 {
        // A constant column is collinear with the intercept; report it by
        // name instead of as a raw singular-matrix failure.
        return Err(Error::RankDeficient { terms: vec![name.to_string()] });
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Inverts a square matrix by Gauss-Jordan with partial pivoting.
/// On a vanishing pivot, reports the offending column index.
fn invert(mut a: Vec<Vec<f64>>) -> std::result::Result<Vec<Vec<f64>>, usize> {
    let p = a.len();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = scale.max(f64::MIN_POSITIVE) * 1e-12 * p as f64;
    for (i, row) in a.iter_mut().enumerate() {
        for j in 0..p {
            row.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    for col in 0..p {
        let mut best = col;
        for r in (col + 1)..p {
            if a[r][col].abs() > a[best][col].abs() {
                best = r;
            }
        }
        if a[best][col].abs() <= tol {
            return Err(col);
        }
        a.swap(col, best);
        let pivot = a[col][col];
        for v in &mut a[col] {
            *v /= pivot;
        }
        let pivot_row = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r == col {
                continue;
            }
            let factor = row[col];
            if factor != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
            }
        }
    }
    Ok(a.into_iter().map(|row| row[p..].to_vec()).collect())
}

/// Fits y on the named terms plus an intercept.
///
/// `standardize` z-scores y and every regressor first (population standard
/// deviation; all supplied regressors are treated as continuous).
/// `quadratic_terms` appends the square of each named base term, built from
/// the standardized base and re-standardized itself when `standardize` is
/// set; the appended column is named `<base>^2`.
///
/// Needs strictly more observations than design columns. A rank-deficient
/// design errors naming the collinear term.
pub fn ols(
    y: &[f64],
    terms: &[(String, Vec<f64>)],
    standardize: bool,
    quadratic_terms: &[String],
) -> Result<RegressionResult> {
    let n = y.len();
    for (name, values) in terms {
        if values.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("term {name}")));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".to_string()));
    }
    {
        let mut seen = HashSet::new();
        for (name, _) in terms {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateId { kind: "term", id: name.clone() });
            }
        }
    }
    for q in quadratic_terms {
        if !terms.iter().any(|(name, _)| name == q) {
            return Err(Error::UnknownEntity { kind: "term", id: q.clone() });
        }
    }

    let (y_mean, y_sd) = mean_stddev(y);
    if y_sd == 0.0 {
        return Err(Error::ConstantSeries("response"));
    }
    let y_fit: Vec<f64> = if standardize {
        y.iter().map(|v| (v - y_mean) / y_sd).collect()
    } else {
        y.to_vec()
    };

    // Design: intercept, then terms in order, then squared terms in order.
    let mut names: Vec<String> = vec!["intercept".to_string()];
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut base: HashMap<&str, usize> = HashMap::new();
    for (name, values) in terms {
        let col =
            if standardize { standardized(values, name)? } else { values.clone() };
        base.insert(name.as_str(), columns.len());
        names.push(name.clone());
        columns.push(col);
    }
    for q in quadratic_terms {
        let squared: Vec<f64> = columns[base[q.as_str()]].iter().map(|v| v * v).collect();
        let name = format!("{q}^2");
        let col = if standardize { standardized(&squared, &name)? } else { squared };
        names.push(name);
        columns.push(col);
    }

    let p = columns.len();
    if n <= p {
        return Err(Error::invalid(format!(
            "need more observations than design columns ({n} observations, {p} columns)"
        )));
    }

    // Normal equations with compensated accumulation.
    let dot = |a: &[f64], b: &[f64]| {
        let mut acc = NeumaierSum::new();
        for (&x, &z) in a.iter().zip(b) {
            acc.add(x * z);
        }
        acc.total()
    };
    let mut xtx = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i..p {
            let v = dot(&columns[i], &columns[j]);
            xtx[i][j] = v;
            xtx[j][i] = v;
        }
    }
    let xty: Vec<f64> = columns.iter().map(|c| dot(c, &y_fit)).collect();

    let inv = invert(xtx).map_err(|col| Error::RankDeficient { terms: vec![names[col].clone()] })?;
    let beta: Vec<f64> = (0..p).map(|i| dot(&inv[i], &xty)).collect();

    // Residual variance and fit quality.
    let mut ssr = NeumaierSum::new();
    for row in 0..n {
        let mut fitted = NeumaierSum::new();
        for (b, col) in beta.iter().zip(&columns) {
            fitted.add(b * col[row]);
        }
        let e = y_fit[row] - fitted.total();
        ssr.add(e * e);
    }
    let ssr = ssr.total().max(0.0);
    let (fit_mean, fit_sd) = mean_stddev(&y_fit);
    let _ = fit_mean;
    let sst = fit_sd * fit_sd * n as f64;
    let r2 = 1.0 - ssr / sst;
    let adjusted_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p as f64);
    let sigma_sq = ssr / (n as f64 - p as f64);

    let terms_out = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let se = (sigma_sq * inv[i][i]).max(0.0).sqrt();
            let estimate = beta[i];
            let t_stat = if se == 0.0 {
                if estimate == 0.0 {
                    0.0
                } else {
                    f64::INFINITY.copysign(estimate)
                }
            } else {
                estimate / se
            };
            RegressionTerm { name, estimate, t_stat }
        })
        .collect();

    Ok(RegressionResult { terms: terms_out, r2, adjusted_r2, n })
}

// ---------------------------------------------------------------------------
// Locally weighted smoothing
// ---------------------------------------------------------------------------

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothPoint {
    pub x: f64,
    pub fitted: f64,
}

/// A smoothed curve over a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothResult {
    pub points: Vec<SmoothPoint>,
    /// Grid points whose window held fewer than two weighted observations
    /// and was widened to reach the second-nearest point.
    pub widened_windows: usize,
}

/// Degree-1 locally weighted regression with a tricube kernel.
///
/// `x` must already be scaled to [0, 1] (percentile positions); the
/// half-width is `bandwidth` times the x-range. The curve is evaluated at
/// `grid` uniformly spaced points. A window holding fewer than two
/// positive-weight observations widens to twice the distance of the
/// second-nearest point, and such windows are counted and logged.
pub fn local_smooth(x: &[f64], y: &[f64], bandwidth: f64, grid: usize) -> Result<SmoothResult> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::invalid(format!("smoothing needs at least 2 points, got {}", x.len())));
    }
    if grid < 2 {
        return Err(Error::invalid(format!("grid must have at least 2 points, got {grid}")));
    }
    if !(bandwidth > 0.0 && bandwidth <= 1.0) {
        return Err(Error::invalid(format!("bandwidth must be in (0, 1], got {bandwidth}")));
    }
    if x.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("x values must lie in [0, 1]".to_string()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("y series".to_string()));
    }

    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::ConstantSeries("x"));
    }
    let h = bandwidth * (hi - lo);

    let evaluated: Vec<(SmoothPoint, bool)> = (0..grid)
        .into_par_iter()
        .map(|g| {
            let x0 = lo + (hi - lo) * g as f64 / (grid - 1) as f64;
            let tricube = |d: f64, radius: f64| {
                let u = d / radius;
                if u >= 1.0 {
                    0.0
                } else {
                    let t = 1.0 - u * u * u;
                    t * t * t
                }
            };
            let positive = |radius: f64| x.iter().filter(|&&xi| tricube((xi - x0).abs(), radius) > 0.0).count();

            let mut radius = h;
            let mut widened = false;
            if positive(radius) < 2 {
                // Second-smallest distance; doubling it keeps real weight on
                // both nearest points.
                let mut d1 = f64::INFINITY;
                let mut d2 = f64::INFINITY;
                for &xi in x {
                    let d = (xi - x0).abs();
                    if d < d1 {
                        d2 = d1;
                        d1 = d;
                    } else if d < d2 {
                        d2 = d;
                    }
                }
                radius = (2.0 * d2).max(h);
                widened = true;
            }

            // Weighted linear fit in t = xi - x0; the fitted value at the
            // grid point is the intercept.
            let mut sw = NeumaierSum::new();
            let mut swt = NeumaierSum::new();
            let mut swtt = NeumaierSum::new();
            let mut swy = NeumaierSum::new();
            let mut swty = NeumaierSum::new();
            for (&xi, &yi) in x.iter().zip(y) {
                let w = tricube((xi - x0).abs(), radius);
                if w > 0.0 {
                    let t = xi - x0;
                    sw.add(w);
                    swt.add(w * t);
                    swtt.add(w * t * t);
                    swy.add(w * yi);
                    swty.add(w * t * yi);
                }
            }
            let (sw, swt, swtt, swy, swty) =
                (sw.total(), swt.total(), swtt.total(), swy.total(), swty.total());
            let det = sw * swtt - swt * swt;
            let fitted = if det.abs() <= 1e-12 * (sw * swtt).abs().max(f64::MIN_POSITIVE) {
                // All weight on one x position: fall back to the weighted mean.
                swy / sw
            } else {
                (swtt * swy - swt * swty) / det
            };
            (SmoothPoint { x: x0, fitted }, widened)
        })
        .collect();

    let widened_windows = evaluated.iter().filter(|(_, w)| *w).count();
    if widened_windows > 0 {
        log::warn!("{widened_windows} of {grid} smoothing windows were widened to reach 2 points");
    }
    Ok(SmoothResult { points: evaluated.into_iter().map(|(p, _)| p).collect(), widened_windows })
}

// ---------------------------------------------------------------------------
// External indices
// ---------------------------------------------------------------------------

/// Occupation-level values of one external technology-exposure index.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalIndex {
    pub index_id: String,
    pub values: BTreeMap<String, f64>,
    /// Source note, e.g. the file the values came from.
    pub metadata: String,
}

/// Loads an external index CSV with columns occupation_id, value. A header
/// row is recognized by its first column being exactly "occupation_id".
pub fn load_external_index(path: &Path, index_id: &str) -> Result<ExternalIndex> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::invalid(format!("{}: {other:?}", path.display())),
        })?;

    let mut values = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::parse(path, row, e.to_string()))?;
        if idx == 0 && record.get(0) == Some("occupation_id") {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::parse(path, row, format!("expected 2 columns, found {}", record.len())));
        }
        let id = record[0].trim().to_string();
        let value: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, row, format!("bad value: {:?}", &record[1])))?;
        if !value.is_finite() {
            return Err(Error::parse(path, row, format!("non-finite value for {id}")));
        }
        if values.insert(id.clone(), value).is_some() {
            return Err(Error::DuplicateId { kind: "occupation", id });
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("external index has no rows"));
    }
    Ok(ExternalIndex { index_id: index_id.to_string(), values, metadata: path.display().to_string() })
}

/// One matched occupation in an index comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub occupation_id: String,
    pub score: f64,
    pub index_value: f64,
    /// Employment weight for plotted bubble sizes; not used in the
    /// correlation.
    pub weight: Option<f64>,
}

/// Correlation of exposure scores against one external index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexComparison {
    pub index_id: String,
    pub pearson: f64,
    pub matched_n: usize,
    /// Matched occupations, sorted by id.
    pub scatter: Vec<ScatterPoint>,
    /// Score entities absent from the index, sorted.
    pub unmatched_scores: Vec<String>,
    /// Index occupations absent from the scores, sorted.
    pub unmatched_index: Vec<String>,
}

/// Matches scores to index occupations by entity id and correlates the
/// matched values. Requires at least two matches.
pub fn compare_index(
    scores: &[ExposureScore],
    index: &ExternalIndex,
    weights: Option<&HashMap<String, f64>>,
) -> Result<IndexComparison> {
    let mut by_id: BTreeMap<&str, f64> = BTreeMap::new();
    for s in scores {
        if by_id.insert(s.entity_id.as_str(), s.value).is_some() {
            return Err(Error::DuplicateId { kind: "score entity", id: s.entity_id.clone() });
        }
    }

    let mut scatter = Vec::new();
    let mut unmatched_scores = Vec::new();
    for (&id, &value) in &by_id {
        match index.values.get(id) {
            Some(&index_value) => scatter.push(ScatterPoint {
                occupation_id: id.to_string(),
                score: value,
                index_value,
                weight: weights.and_then(|w| w.get(id).copied()),
            }),
            None => unmatched_scores.push(id.to_string()),
        }
    }
    let unmatched_index: Vec<String> = index
        .values
        .keys()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();

    if scatter.len() < 2 {
        return Err(Error::TooFewMatches { needed: 2, got: scatter.len() });
    }
    let xs: Vec<f64> = scatter.iter().map(|p| p.score).collect();
    let ys: Vec<f64> = scatter.iter().map(|p| p.index_value).collect();
    let r = pearson(&xs, &ys)?;
    Ok(IndexComparison {
        index_id: index.index_id.clone(),
        pearson: r,
        matched_n: scatter.len(),
        scatter,
        unmatched_scores,
        unmatched_index,
    })
}

/// Occupations split into quadrants along two axis splits.
///
/// X is the exposure score, Y the external index. Quadrant I is high-x
/// high-y; values exactly at a split count as high (upper/right).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrantReport {
    pub x_split: f64,
    pub y_split: f64,
    pub quadrant_i: Vec<String>,
    pub quadrant_ii: Vec<String>,
    pub quadrant_iii: Vec<String>,
    pub quadrant_iv: Vec<String>,
}

impl QuadrantReport {
    pub fn total(&self) -> usize {
        self.quadrant_i.len() + self.quadrant_ii.len() + self.quadrant_iii.len() + self.quadrant_iv.len()
    }
}

/// Partitions the matched occupations into quadrants. Splits default to
/// the means of the matched score and index values.
pub fn quadrant_report(
    scores: &[ExposureScore],
    index: &ExternalIndex,
    x_split: Option<f64>,
    y_split: Option<f64>,
) -> Result<QuadrantReport> {
    let mut matched: Vec<(&str, f64, f64)> = Vec::new();
    let mut seen = HashSet::new();
    for s in scores {
        if !seen.insert(s.entity_id.as_str()) {
            return Err(Error::DuplicateId { kind: "score entity", id: s.entity_id.clone() });
        }
        if let Some(&iv) = index.values.get(&s.entity_id) {
            matched.push((s.entity_id.as_str(), s.value, iv));
        }
    }
    if matched.is_empty() {
        return Err(Error::TooFewMatches { needed: 1, got: 0 });
    }
    matched.sort_by(|a, b| a.0.cmp(b.0));

    let xs: Vec<f64> = matched.iter().map(|m| m.1).collect();
    let ys: Vec<f64> = matched.iter().map(|m| m.2).collect();
    let x_split = x_split.unwrap_or_else(|| mean_stddev(&xs).0);
    let y_split = y_split.unwrap_or_else(|| mean_stddev(&ys).0);

    let mut report = QuadrantReport {
        x_split,
        y_split,
        quadrant_i: Vec::new(),
        quadrant_ii: Vec::new(),
        quadrant_iii: Vec::new(),
        quadrant_iv: Vec::new(),
    };
    for (id, x, y) in matched {
        let high_x = x >= x_split;
        let high_y = y >= y_split;
        let bucket = match (high_x, high_y) {
            (true, true) => &mut report.quadrant_i,
            (false, true) => &mut report.quadrant_ii,
            (false, false) => &mut report.quadrant_iii,
            (true, false) => &mut report.quadrant_iv,
        };
        bucket.push(id.to_string());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{EntityKind, PatentSubset};

    fn assert_close(got: f64, want: f64, tol: f64) {
        assert!((got - want).abs() <= tol, "got {got}, want {want}");
    }

    fn occ_score(id: &str, value: f64) -> ExposureScore {
        ExposureScore {
            entity_kind: EntityKind::Occupation,
            entity_id: id.to_string(),
            patent_subset: PatentSubset::FourIr,
            year_range: (1970, 2020),
            value,
            patent_count: 1,
        }
    }

    fn index(values: &[(&str, f64)]) -> ExternalIndex {
        ExternalIndex {
            index_id: "sml".to_string(),
            values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            metadata: "test".to_string(),
        }
    }

    #[test]
    fn pearson_of_affine_relation_is_one() {
        let x = [0.5, 1.0, 2.0, 4.0, 4.5];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        assert_close(pearson(&x, &y).unwrap(), 1.0, 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_close(pearson(&x, &neg).unwrap(), -1.0, 1e-12);
    }

    #[test]
    fn pearson_fixture_frozen() {
        let x = [0.5, 1.25, 2.0, 2.75, 3.5, 4.0, 5.5, 6.25];
        let y = [1.1, 0.9, 2.3, 2.0, 3.8, 3.1, 5.0, 5.9];
        assert_close(pearson(&x, &y).unwrap(), 0.9648474924752147, 1e-12);
    }

    #[test]
    fn pearson_rejects_bad_input() {
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]).unwrap_err(), Error::ConstantSeries("x")));
        assert!(matches!(pearson(&[1.0, 2.0], &[3.0, 3.0]).unwrap_err(), Error::ConstantSeries("y")));
        assert!(pearson(&[1.0], &[2.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    fn deterministic_xy(n: usize) -> (Vec<f64>, Vec<f64>) {
        let x1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() * 2.0 + 3.0).collect();
        let x2: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos()).collect();
        (x1, x2)
    }

    #[test]
    fn noise_free_slope_recovers_exactly() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = ols(&y, &[("x".to_string(), x)], false, &[]).unwrap();
        let (slope, t) = fit.coefficient("x").unwrap();
        assert_close(slope, 2.0, 1e-9);
        // SSR is zero up to rounding, so the t-statistic explodes.
        assert!(t > 1e6);
        assert_close(fit.adjusted_r2, 1.0, 1e-12);
        assert_eq!(fit.terms[0].name, "intercept");
    }

    #[test]
    fn orthogonal_response_gets_zero_slope() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = vec![1.0, -1.0, -1.0, 1.0];
        let fit = ols(&y, &[("x".to_string(), x)], false, &[]).unwrap();
        let (slope, _) = fit.coefficient("x").unwrap();
        assert_close(slope, 0.0, 1e-12);
        assert!(fit.adjusted_r2 <= 0.0);
    }

    #[test]
    fn planted_quadratic_coefficients_recover() {
        let (x1, x2) = deterministic_xy(40);
        let y: Vec<f64> = x1
            .iter()
            .zip(&x2)
            .map(|(&a, &b)| 1.5 + 2.0 * a - 0.75 * b + 0.3 * a * a)
            .collect();
        let fit = ols(
            &y,
            &[("x1".to_string(), x1), ("x2".to_string(), x2)],
            false,
            &["x1".to_string()],
        )
        .unwrap();
        assert_close(fit.coefficient("intercept").unwrap().0, 1.5, 1e-6);
        assert_close(fit.coefficient("x1").unwrap().0, 2.0, 1e-6);
        assert_close(fit.coefficient("x2").unwrap().0, -0.75, 1e-6);
        assert_close(fit.coefficient("x1^2").unwrap().0, 0.3, 1e-6);
        assert_close(fit.adjusted_r2, 1.0, 1e-9);
        assert_eq!(fit.n, 40);
    }

    #[test]
    fn standardized_fit_matches_rescaled_raw_fit() {
        // Add deterministic pseudo-noise so the fit is not exact.
        let (x1, x2) = deterministic_xy(60);
        let y: Vec<f64> = x1
            .iter()
            .zip(&x2)
            .enumerate()
            .map(|(i, (&a, &b))| 0.8 * a - 1.1 * b + ((i * 37 % 11) as f64) * 0.05)
            .collect();
        let terms = vec![("x1".to_string(), x1.clone()), ("x2".to_string(), x2.clone())];
        let raw = ols(&y, &terms, false, &[]).unwrap();
        let std = ols(&y, &terms, true, &[]).unwrap();

        // b_std = b_raw * sd(x) / sd(y); t-statistics are scale invariant.
        let sd_y = mean_stddev(&y).1;
        for (name, series) in [("x1", &x1), ("x2", &x2)] {
            let sd_x = mean_stddev(series).1;
            let (b_raw, t_raw) = raw.coefficient(name).unwrap();
            let (b_std, t_std) = std.coefficient(name).unwrap();
            assert_close(b_std, b_raw * sd_x / sd_y, 1e-9);
            assert_close(t_std, t_raw, 1e-7);
        }
        assert_close(raw.r2, std.r2, 1e-12);
        // Standardizing centers everything, so the intercept vanishes.
        assert_close(std.coefficient("intercept").unwrap().0, 0.0, 1e-9);
    }

    #[test]
    fn residuals_are_orthogonal_to_design() {
        let (x1, x2) = deterministic_xy(50);
        let y: Vec<f64> = x1
            .iter()
            .zip(&x2)
            .enumerate()
            .map(|(i, (&a, &b))| a - b + ((i % 7) as f64) * 0.3)
            .collect();
        let terms = vec![("x1".to_string(), x1.clone()), ("x2".to_string(), x2.clone())];
        let fit = ols(&y, &terms, true, &["x1".to_string()]).unwrap();

        // Rebuild the standardized design exactly as the fit defines it.
        let z1 = standardized(&x1, "x1").unwrap();
        let z2 = standardized(&x2, "x2").unwrap();
        let sq: Vec<f64> = z1.iter().map(|v| v * v).collect();
        let zq = standardized(&sq, "x1^2").unwrap();
        let zy = standardized(&y, "y").unwrap();
        let betas: Vec<f64> = fit.terms.iter().map(|t| t.estimate).collect();
        let residuals: Vec<f64> = (0..y.len())
            .map(|i| zy[i] - betas[0] - betas[1] * z1[i] - betas[2] * z2[i] - betas[3] * zq[i])
            .collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for col in [&z1, &z2, &zq] {
            let dot: f64 = residuals.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            assert!(dot.abs() / (norm(&residuals) * norm(col)).max(1e-12) <= 1e-8);
        }
    }

    #[test]
    fn collinear_design_errors_with_term_name() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let double: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        let err = ols(
            &y,
            &[("x".to_string(), x), ("x_again".to_string(), double)],
            false,
            &[],
        )
        .unwrap_err();
        match err {
            Error::RankDeficient { terms } => assert_eq!(terms, vec!["x_again"]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn ols_rejects_bad_shapes() {
        let x = vec![1.0, 2.0, 3.0];
        let y = vec![1.0, 2.0, 3.0];
        // As many columns as observations.
        let err = ols(
            &y,
            &[("a".to_string(), x.clone()), ("b".to_string(), vec![1.0, 4.0, 9.0])],
            false,
            &[],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
        assert!(matches!(
            ols(&y, &[("a".to_string(), vec![1.0])], false, &[]).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
        assert!(matches!(
            ols(&y, &[("a".to_string(), x.clone())], false, &["zz".to_string()]).unwrap_err(),
            Error::UnknownEntity { kind: "term", .. }
        ));
        assert!(matches!(
            ols(&[2.0, 2.0, 2.0], &[("a".to_string(), x)], false, &[]).unwrap_err(),
            Error::ConstantSeries(_)
        ));
    }

    fn uniform_x(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn smoother_reproduces_linear_data() {
        let x = uniform_x(60);
        let y: Vec<f64> = x.iter().map(|v| 4.0 * v - 1.5).collect();
        let out = local_smooth(&x, &y, 0.08, 100).unwrap();
        assert_eq!(out.points.len(), 100);
        assert_eq!(out.widened_windows, 0);
        for p in &out.points {
            assert_close(p.fitted, 4.0 * p.x - 1.5, 1e-9);
        }
    }

    #[test]
    fn smoother_reproduces_constant_data() {
        let x = uniform_x(30);
        let y = vec![2.5; 30];
        let out = local_smooth(&x, &y, 0.2, 50).unwrap();
        for p in &out.points {
            assert_close(p.fitted, 2.5, 1e-12);
        }
    }

    #[test]
    fn smoother_matches_uncentered_oracle_on_quadratic() {
        let x = uniform_x(60);
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v - 2.0 * v + 0.5).collect();
        let bandwidth = 0.08;
        let grid = 100;
        let out = local_smooth(&x, &y, bandwidth, grid).unwrap();

        // Oracle: same kernel, but un-centered Cramer solve per grid point,
        // evaluating a + b x0 instead of fitting around x0.
        let h = bandwidth * (x[59] - x[0]);
        for (g, p) in out.points.iter().enumerate() {
            let x0 = g as f64 / (grid - 1) as f64;
            let (mut sw, mut swx, mut swxx, mut swy, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&xi, &yi) in x.iter().zip(&y) {
                let u = (xi - x0).abs() / h;
                if u < 1.0 {
                    let w = (1.0 - u.powi(3)).powi(3);
                    sw += w;
                    swx += w * xi;
                    swxx += w * xi * xi;
                    swy += w * yi;
                    swxy += w * xi * yi;
                }
            }
            let det = sw * swxx - swx * swx;
            let a = (swxx * swy - swx * swxy) / det;
            let b = (sw * swxy - swx * swy) / det;
            assert_close(p.fitted, a + b * x0, 1e-9);
        }
    }

    #[test]
    fn sparse_windows_widen_and_count() {
        // Two tight clusters; mid-grid windows at bandwidth 0.05 are empty.
        let x = vec![0.0, 0.01, 0.02, 0.98, 0.99, 1.0];
        let y = vec![1.0, 1.1, 0.9, 5.0, 5.1, 4.9];
        let out = local_smooth(&x, &y, 0.05, 40).unwrap();
        assert!(out.widened_windows > 0);
        // Widened windows extrapolate a local line, so values may leave the
        // y-range, but they stay finite and of sensible magnitude.
        for p in &out.points {
            assert!(p.fitted.is_finite());
            assert!(p.fitted.abs() < 100.0);
        }
    }

    #[test]
    fn smoother_rejects_bad_input() {
        let x = uniform_x(10);
        let y = vec![1.0; 10];
        assert!(local_smooth(&x, &y, 0.0, 50).is_err());
        assert!(local_smooth(&x, &y, 1.5, 50).is_err());
        assert!(local_smooth(&x, &y[..9], 0.1, 50).is_err());
        assert!(local_smooth(&[0.5], &[1.0], 0.1, 50).is_err());
        assert!(local_smooth(&[0.5, 2.0], &[1.0, 2.0], 0.1, 50).is_err());
        assert!(local_smooth(&[0.5, 0.5], &[1.0, 2.0], 0.1, 50).is_err());
        assert!(local_smooth(&x, &y, 0.1, 1).is_err());
    }

    #[test]
    fn external_index_loads_with_and_without_header() {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "occupation_id,value\nO1,0.5\nO2,-1.25\n").unwrap();
        f.flush().unwrap();
        let idx = load_external_index(f.path(), "sml").unwrap();
        assert_eq!(idx.index_id, "sml");
        assert_eq!(idx.values.len(), 2);
        assert_eq!(idx.values["O2"], -1.25);

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "O1,0.5").unwrap();
        g.flush().unwrap();
        assert_eq!(load_external_index(g.path(), "x").unwrap().values.len(), 1);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "O1,NaN").unwrap();
        bad.flush().unwrap();
        assert!(load_external_index(bad.path(), "x").is_err());

        let mut dup = tempfile::NamedTempFile::new().unwrap();
        write!(dup, "O1,1\nO1,2\n").unwrap();
        dup.flush().unwrap();
        assert!(matches!(load_external_index(dup.path(), "x").unwrap_err(), Error::DuplicateId { .. }));
    }

    #[test]
    fn identical_index_correlates_perfectly() {
        let scores = vec![occ_score("O1", 1.0), occ_score("O2", 2.0), occ_score("O3", 4.0)];
        let idx = index(&[("O1", 1.0), ("O2", 2.0), ("O3", 4.0)]);
        let cmp = compare_index(&scores, &idx, None).unwrap();
        assert_close(cmp.pearson, 1.0, 1e-12);
        assert_eq!(cmp.matched_n, 3);
        assert!(cmp.unmatched_scores.is_empty());
        assert!(cmp.unmatched_index.is_empty());
    }

    #[test]
    fn comparison_equals_pearson_on_matched_vectors() {
        let scores = vec![
            occ_score("O1", 1.0),
            occ_score("O2", 3.0),
            occ_score("O3", 2.0),
            occ_score("O9", 9.0),
        ];
        let idx = index(&[("O1", 0.2), ("O2", 0.9), ("O3", 0.3), ("O8", 0.5)]);
        let weights: HashMap<String, f64> = [("O1".to_string(), 10.0)].into_iter().collect();
        let cmp = compare_index(&scores, &idx, Some(&weights)).unwrap();
        assert_eq!(cmp.matched_n, 3);
        assert_eq!(cmp.unmatched_scores, vec!["O9"]);
        assert_eq!(cmp.unmatched_index, vec!["O8"]);
        let expected = pearson(&[1.0, 3.0, 2.0], &[0.2, 0.9, 0.3]).unwrap();
        assert_eq!(cmp.pearson, expected);
        assert_eq!(cmp.scatter[0].weight, Some(10.0));
        assert_eq!(cmp.scatter[1].weight, None);
    }

    #[test]
    fn disjoint_ids_are_an_error() {
        let scores = vec![occ_score("O1", 1.0), occ_score("O2", 2.0)];
        let idx = index(&[("O8", 0.5), ("O9", 0.6)]);
        assert!(matches!(
            compare_index(&scores, &idx, None).unwrap_err(),
            Error::TooFewMatches { needed: 2, got: 0 }
        ));
    }

    #[test]
    fn quadrants_partition_with_boundary_up_right() {
        let scores = vec![
            occ_score("HI", 10.0),
            occ_score("LO", 0.0),
            occ_score("MIX", 10.0),
            occ_score("EDGE", 5.0),
        ];
        let idx = index(&[("HI", 1.0), ("LO", 0.0), ("MIX", 0.0), ("EDGE", 0.5)]);
        // Means: x = 6.25, y = 0.375.
        let q = quadrant_report(&scores, &idx, None, None).unwrap();
        assert_eq!(q.total(), 4);
        assert_eq!(q.quadrant_i, vec!["HI"]);
        assert_eq!(q.quadrant_ii, vec!["EDGE"]); // x below, y 0.5 >= 0.375
        assert_eq!(q.quadrant_iii, vec!["LO"]);
        assert_eq!(q.quadrant_iv, vec!["MIX"]);

        // All points at the splits land in quadrant I by the boundary rule.
        let tied = vec![occ_score("A", 2.0), occ_score("B", 2.0)];
        let tied_idx = index(&[("A", 1.0), ("B", 1.0)]);
        let q = quadrant_report(&tied, &tied_idx, None, None).unwrap();
        assert_eq!(q.quadrant_i, vec!["A", "B"]);
        assert_eq!(q.total(), 2);

        assert!(quadrant_report(&[occ_score("Z", 1.0)], &idx, None, None).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pearson_is_affine_invariant(
                base in prop::collection::vec(-10.0f64..10.0, 4..20),
                scale in 0.01f64..100.0,
                shift in -50.0f64..50.0
            ) {
                // Need nonconstant series; inject spread.
                let mut x = base.clone();
                x[0] += 25.0;
                let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * 0.5 + (i as f64).sin()).collect();
                prop_assume!(mean_stddev(&y).1 > 1e-9);
                let x_t: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
                let r = pearson(&x, &y).unwrap();
                let r_t = pearson(&x_t, &y).unwrap();
                prop_assert!((r - r_t).abs() <= 1e-12);
                let x_neg: Vec<f64> = x.iter().map(|v| -v).collect();
                let r_neg = pearson(&x_neg, &y).unwrap();
                prop_assert!((r + r_neg).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }

            #[test]
            fn smoother_is_exact_on_lines_for_any_bandwidth(
                slope in -5.0f64..5.0,
                intercept in -5.0f64..5.0,
                bandwidth in 0.05f64..1.0,
                n in 10usize..40
            ) {
                let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
                let y: Vec<f64> = x.iter().map(|v| slope * v + intercept).collect();
                let out = local_smooth(&x, &y, bandwidth, 25).unwrap();
                for p in &out.points {
                    prop_assert!((p.fitted - (slope * p.x + intercept)).abs() <= 1e-9);
                }
            }

            #[test]
            fn quadrants_always_partition(
                values in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..15)
            ) {
                let scores: Vec<ExposureScore> = values
                    .iter()
                    .enumerate()
                    .map(|(i, (s, _))| occ_score(&format!("O{i:02}"), *s))
                    .collect();
                let idx = index(
                    &values
                        .iter()
                        .enumerate()
                        .map(|(i, (_, v))| (format!("O{i:02}"), *v))
                        .collect::<Vec<_>>()
                        .iter()
                        .map(|(k, v)| (k.as_str(), *v))
                        .collect::<Vec<_>>(),
                );
                let q = quadrant_report(&scores, &idx, None, None).unwrap();
                prop_assert_eq!(q.total(), values.len());
                let mut all: Vec<&String> = q
                    .quadrant_i
                    .iter()
                    .chain(&q.quadrant_ii)
                    .chain(&q.quadrant_iii)
                    .chain(&q.quadrant_iv)
                    .collect();
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), values.len());
            }
        }
    }
}
