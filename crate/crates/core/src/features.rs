//! Port feature preparation.
//!
//! Registry columns are profiled, meta and sparse columns dropped, the
//! remaining categoricals mapped to ordinal codes in lexicographic level
//! order, and missing cells filled by cyclic per-column least-squares
//! regression on all other columns.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{PortId, PortRecord};

pub const LATITUDE: &str = "LATITUDE";
pub const LONGITUDE: &str = "LONGITUDE";
pub const HARBOR_SIZE: &str = "HARBOR SIZE";
pub const COUNTRY: &str = "COUNTRY";

/// Column-major table of raw string cells, one row per port.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub port_ids: Vec<PortId>,
    pub columns: Vec<String>,
    /// `cells[c][r]`, `None` for a missing value.
    pub cells: Vec<Vec<Option<String>>>,
}

impl RawTable {
    /// Registry feature columns plus coordinates, harbor size and country
    /// exposed as features (unless the registry already carries them).
    pub fn from_registry(ports: &[PortRecord]) -> Self {
        let mut names: BTreeSet<String> = ports.iter().flat_map(|p| p.raw_features.keys().cloned()).collect();
        let derived: [(&str, fn(&PortRecord) -> Option<String>); 4] = [
            (LATITUDE, |p| Some(p.lat.to_string())),
            (LONGITUDE, |p| Some(p.lon.to_string())),
            (HARBOR_SIZE, |p| p.harbor_size.map(|s| s.code().to_owned())),
            (COUNTRY, |p| (!p.country.is_empty()).then(|| p.country.clone())),
        ];
        let mut extra = Vec::new();
        for (name, get) in derived {
            if names.insert(name.to_owned()) {
                extra.push((name, get));
            }
        }
        let columns: Vec<String> = names.into_iter().collect();
        let cells = columns
            .iter()
            .map(|col| {
                let derived = extra.iter().find(|(n, _)| n == col);
                ports
                    .iter()
                    .map(|p| match derived {
                        Some((_, get)) => get(p),
                        None => p.raw_features.get(col).cloned().flatten(),
                    })
                    .collect()
            })
            .collect();
        RawTable {
            port_ids: ports.iter().map(|p| p.port_id).collect(),
            columns,
            cells,
        }
    }

    pub fn rows(&self) -> usize {
        self.port_ids.len()
    }

    pub fn column(&self, name: &str) -> Option<&[Option<String>]> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(&self.cells[i])
    }

    /// Keeps only the rows whose port id satisfies `keep`, preserving order.
    pub fn filter_rows(&self, keep: impl Fn(PortId) -> bool) -> RawTable {
        let idx: Vec<usize> = (0..self.rows()).filter(|&r| keep(self.port_ids[r])).collect();
        RawTable {
            port_ids: idx.iter().map(|&r| self.port_ids[r]).collect(),
            columns: self.columns.clone(),
            cells: self.cells.iter().map(|col| idx.iter().map(|&r| col[r].clone()).collect()).collect(),
        }
    }

    fn select(&self, keep: &[usize]) -> RawTable {
        RawTable {
            port_ids: self.port_ids.clone(),
            columns: keep.iter().map(|&c| self.columns[c].clone()).collect(),
            cells: keep.iter().map(|&c| self.cells[c].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Distinct observed levels in lexicographic order (categoricals only).
    pub levels: Vec<String>,
    pub missing_fraction: f64,
    /// Number of rows with a value.
    pub support: usize,
    /// Number of distinct observed values.
    pub cardinality: usize,
}

/// Default continuous columns; everything else is categorical.
pub fn default_continuous() -> Vec<String> {
    vec![LATITUDE.to_owned(), LONGITUDE.to_owned()]
}

pub fn profile(table: &RawTable, continuous: &[String]) -> Vec<FeatureSpec> {
    let n = table.rows();
    table
        .columns
        .iter()
        .zip(&table.cells)
        .map(|(name, col)| {
            let observed: Vec<&str> = col.iter().flatten().map(String::as_str).collect();
            let distinct: BTreeSet<&str> = observed.iter().copied().collect();
            let kind = if continuous.iter().any(|c| c.eq_ignore_ascii_case(name)) {
                FeatureKind::Continuous
            } else {
                FeatureKind::Categorical
            };
            FeatureSpec {
                name: name.clone(),
                kind,
                levels: match kind {
                    FeatureKind::Categorical => distinct.iter().map(|s| s.to_string()).collect(),
                    FeatureKind::Continuous => Vec::new(),
                },
                missing_fraction: if n == 0 { 0.0 } else { (n - observed.len()) as f64 / n as f64 },
                support: observed.len(),
                cardinality: distinct.len(),
            }
        })
        .collect()
}

/// Registry columns that describe or reference a port rather than
/// characterize it.
pub fn default_blocklist() -> Vec<String> {
    [
        "NAME",
        "PORT NAME",
        "MAIN PORT NAME",
        "ALTERNATE PORT NAME",
        "INDEX NUMBER",
        "WORLD PORT INDEX NUMBER",
        "REGION NUMBER",
        "REGION",
        "UN/LOCODE",
        "NAVIGATION AREA",
        "PUBLICATION",
        "CHART",
        "DNC",
        "LAT_HEMISPHERE",
        "LONG_HEMISPHERE",
        "LAT_DEG",
        "LAT_MIN",
        "LONG_DEG",
        "LONG_MIN",
    ]
    .into_iter()
    .map(str::to_owned)
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanTable {
    pub table: RawTable,
    pub specs: Vec<FeatureSpec>,
    pub dropped_meta: Vec<String>,
    pub dropped_missing: Vec<String>,
}

/// Drops blocklisted columns and columns whose missing fraction exceeds
/// `threshold`.
pub fn clean(table: &RawTable, specs: &[FeatureSpec], blocklist: &[String], threshold: f64) -> Result<CleanTable> {
    if specs.len() != table.columns.len() {
        return Err(Error::InvalidInput("specs do not match table columns".into()));
    }
    let mut keep = Vec::new();
    let mut dropped_meta = Vec::new();
    let mut dropped_missing = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        if blocklist.iter().any(|b| b.eq_ignore_ascii_case(&spec.name)) {
            dropped_meta.push(spec.name.clone());
        } else if spec.missing_fraction > threshold {
            dropped_missing.push(spec.name.clone());
        } else {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::Empty("retained feature set"));
    }
    Ok(CleanTable {
        table: table.select(&keep),
        specs: keep.iter().map(|&i| specs[i].clone()).collect(),
        dropped_meta,
        dropped_missing,
    })
}

/// Ordinal level dictionaries, persisted next to the encoded table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub features: Vec<EncodedFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedFeature {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub levels: Vec<String>,
}

impl Encoding {
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    fn encode_cell(&self, col: usize, raw: &str) -> Result<f64> {
        let f = &self.features[col];
        match f.kind {
            FeatureKind::Continuous => raw.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::InvalidInput(format!("column {}: {raw:?} is not a number", f.name))
            }),
            FeatureKind::Categorical => f
                .levels
                .binary_search_by(|l| l.as_str().cmp(raw))
                .map(|k| k as f64)
                .map_err(|_| Error::UnseenLevel {
                    column: f.name.clone(),
                    level: raw.to_owned(),
                }),
        }
    }

    /// Encodes a raw table with this dictionary. Columns are matched by name.
    pub fn transform(&self, table: &RawTable) -> Result<FeatureTable> {
        let cols: Vec<usize> = self
            .features
            .iter()
            .map(|f| {
                table
                    .columns
                    .iter()
                    .position(|c| *c == f.name)
                    .ok_or_else(|| Error::Schema(format!("column {:?} missing", f.name)))
            })
            .collect::<Result<_>>()?;
        let (n, d) = (table.rows(), cols.len());
        let mut values = vec![f64::NAN; n * d];
        let mut missing = vec![false; n * d];
        for (j, &c) in cols.iter().enumerate() {
            for r in 0..n {
                match &table.cells[c][r] {
                    Some(raw) => values[r * d + j] = self.encode_cell(j, raw)?,
                    None => missing[r * d + j] = true,
                }
            }
        }
        Ok(FeatureTable {
            port_ids: table.port_ids.clone(),
            names: self.names(),
            values,
            missing,
        })
    }

    /// Display value of a (possibly imputed) cell: categorical codes are
    /// rounded to the nearest valid level.
    pub fn decode(&self, col: usize, value: f64) -> String {
        let f = &self.features[col];
        match f.kind {
            FeatureKind::Continuous => value.to_string(),
            FeatureKind::Categorical => {
                if f.levels.is_empty() {
                    return String::new();
                }
                let k = value.round().clamp(0.0, (f.levels.len() - 1) as f64) as usize;
                f.levels[k].clone()
            }
        }
    }
}

/// Builds the level dictionary from the cleaned specs and encodes the table.
pub fn encode(clean: &CleanTable) -> Result<(FeatureTable, Encoding)> {
    let encoding = Encoding {
        features: clean
            .specs
            .iter()
            .map(|s| EncodedFeature {
                name: s.name.clone(),
                kind: s.kind,
                levels: s.levels.clone(),
            })
            .collect(),
    };
    let table = encoding.transform(&clean.table)?;
    Ok((table, encoding))
}

/// Dense row-major numeric feature matrix with its original missingness.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub port_ids: Vec<PortId>,
    pub names: Vec<String>,
    /// Row-major; missing cells hold NaN until imputed.
    pub values: Vec<f64>,
    /// Row-major; true where the cell was missing before imputation.
    pub missing: Vec<bool>,
}

impl FeatureTable {
    pub fn rows(&self) -> usize {
        self.port_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.cols();
        &self.values[r * d..(r + 1) * d]
    }

    pub fn is_missing(&self, r: usize, c: usize) -> bool {
        self.missing[r * self.cols() + c]
    }

    pub fn has_missing_values(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rows (as owned vectors) for the given port ids, in the given order.
    pub fn rows_for(&self, ports: &[PortId]) -> Result<Vec<Vec<f64>>> {
        let pos: BTreeMap<PortId, usize> = self.port_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        ports
            .iter()
            .map(|p| {
                pos.get(p)
                    .map(|&r| self.row(r).to_vec())
                    .ok_or_else(|| Error::InvalidInput(format!("port {p} not in feature table")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeParams {
    pub cycles: usize,
    /// Added to the normal-equation diagonal (intercept excluded).
    pub ridge: f64,
}

impl Default for ImputeParams {
    fn default() -> Self {
        ImputeParams { cycles: 10, ridge: 1e-6 }
    }
}

/// Solves `a x = b` for symmetric positive-definite `a` (row-major, `k x k`)
/// by Cholesky factorization. Returns `None` if `a` is not positive definite.
fn solve_spd(a: &[f64], b: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut sum = a[i * k + j];
            for p in 0..j {
                sum -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * k + i] = sum.sqrt();
            } else {
                l[i * k + j] = sum / l[j * k + j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * k + p] * y[p];
        }
        y[i] = s / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in i + 1..k {
            s -= l[p * k + i] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    Some(x)
}

/// Least-squares fit of `target` on all other columns (plus intercept) over
/// `rows`; returns `[intercept, coef for each other column...]`.
fn fit_column(values: &[f64], d: usize, target: usize, rows: &[usize], ridge: f64) -> Option<Vec<f64>> {
    let k = d; // intercept + (d - 1) predictors
    let mut xtx = vec![0.0; k * k];
    let mut xty = vec![0.0; k];
    let mut x = vec![0.0; k];
    for &r in rows {
        let row = &values[r * d..(r + 1) * d];
        x[0] = 1.0;
        let mut p = 1;
        for (c, &v) in row.iter().enumerate() {
            if c != target {
                x[p] = v;
                p += 1;
            }
        }
        let y = row[target];
        for i in 0..k {
            xty[i] += x[i] * y;
            for j in 0..=i {
                xtx[i * k + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            xtx[j * k + i] = xtx[i * k + j];
        }
        if i > 0 {
            xtx[i * k + i] += ridge;
        }
    }
    solve_spd(&xtx, &xty, k)
}

/// Iterative imputation.
///
/// Missing cells start at their column mean. Each cycle visits columns with
/// missing cells in ascending missing-fraction order (ties by position),
/// regresses the column's observed cells on all other columns' current
/// values and overwrites only the originally-missing cells. Observed cells
/// are never touched.
pub fn impute(table: &FeatureTable, params: &ImputeParams) -> Result<FeatureTable> {
    let (n, d) = (table.rows(), table.cols());
    let mut out = table.clone();
    if n == 0 || d == 0 {
        return Ok(out);
    }
    let mut missing_rows: Vec<Vec<usize>> = vec![Vec::new(); d];
    let mut observed_rows: Vec<Vec<usize>> = vec![Vec::new(); d];
    for r in 0..n {
        for c in 0..d {
            if table.missing[r * d + c] {
                missing_rows[c].push(r);
            } else {
                observed_rows[c].push(r);
            }
        }
    }
    for c in 0..d {
        if observed_rows[c].is_empty() {
            return Err(Error::NoObservedCells(table.names[c].clone()));
        }
        if missing_rows[c].is_empty() {
            continue;
        }
        let mean = observed_rows[c].iter().map(|&r| table.values[r * d + c]).sum::<f64>() / observed_rows[c].len() as f64;
        for &r in &missing_rows[c] {
            out.values[r * d + c] = mean;
        }
    }
    let mut order: Vec<usize> = (0..d).filter(|&c| !missing_rows[c].is_empty()).collect();
    order.sort_by_key(|&c| (missing_rows[c].len(), c));
    if d == 1 {
        return Ok(out);
    }

    for _ in 0..params.cycles {
        for &c in &order {
            let Some(beta) = fit_column(&out.values, d, c, &observed_rows[c], params.ridge) else {
                log::warn!("imputation fit for {} is singular; keeping previous values", table.names[c]);
                continue;
            };
            for &r in &missing_rows[c] {
                let row = &out.values[r * d..(r + 1) * d];
                let mut pred = beta[0];
                let mut p = 1;
                for (j, &v) in row.iter().enumerate() {
                    if j != c {
                        pred += beta[p] * v;
                        p += 1;
                    }
                }
                out.values[r * d + c] = pred;
            }
        }
    }
    Ok(out)
}

pub fn write_feature_table<W: Write>(out: W, table: &FeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["port_id".to_owned()];
    header.extend(table.names.iter().cloned());
    w.write_record(&header)?;
    for r in 0..table.rows() {
        let mut rec = vec![table.port_ids[r].to_string()];
        rec.extend(table.row(r).iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}

/// Mask file: same shape as the table, `1` where the cell was imputed.
pub fn write_missing_mask<W: Write>(out: W, table: &FeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["port_id".to_owned()];
    header.extend(table.names.iter().cloned());
    w.write_record(&header)?;
    let d = table.cols();
    for r in 0..table.rows() {
        let mut rec = vec![table.port_ids[r].to_string()];
        rec.extend(table.missing[r * d..(r + 1) * d].iter().map(|&m| if m { "1" } else { "0" }.to_owned()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<mask>", e))?;
    Ok(())
}

fn read_matrix<R: Read>(input: R) -> Result<(Vec<PortId>, Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.first().map(String::as_str) != Some("port_id") {
        return Err(Error::Schema("feature table must start with port_id".into()));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        ids.push(
            rec.get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidInput("bad port_id".into()))?,
        );
        rows.push(rec.iter().skip(1).map(str::to_owned).collect());
    }
    Ok((ids, header[1..].to_vec(), rows))
}

pub fn read_feature_table<R: Read, M: Read>(values: R, mask: Option<M>) -> Result<FeatureTable> {
    let (port_ids, names, rows) = read_matrix(values)?;
    let d = names.len();
    let mut vals = Vec::with_capacity(rows.len() * d);
    for row in &rows {
        if row.len() != d {
            return Err(Error::InvalidInput("ragged feature row".into()));
        }
        for cell in row {
            vals.push(if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse().map_err(|_| Error::InvalidInput(format!("bad feature value {cell:?}")))?
            });
        }
    }
    let missing = match mask {
        Some(m) => {
            let (mids, mnames, mrows) = read_matrix(m)?;
            if mids != port_ids || mnames != names {
                return Err(Error::Schema("mask does not match feature table".into()));
            }
            mrows.iter().flatten().map(|c| c == "1").collect()
        }
        None => vals.iter().map(|v: &f64| v.is_nan()).collect(),
    };
    Ok(FeatureTable {
        port_ids,
        names,
        values: vals,
        missing,
    })
}
