//! Tabular input: schema-driven CSV loading and the preprocessing chain
//! `drop_sparse_columns → one_hot → center_scale`.
//!
//! Discrete values are stored as numeric codes until [`one_hot`] expands them.
//! Every transform appends a [`Transform`] record to the dataset's provenance, and
//! [`Provenance::replay`] re-applies those records to the raw load.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{MaskedMatrix, Matrix};

pub const DEFAULT_MISSING_TOKENS: [&str; 2] = ["", "NA"];
pub const DEFAULT_MISSING_THRESHOLD: f64 = 0.5;
pub const MIN_LEVELS: usize = 2;
pub const MAX_LEVELS: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Ordinal,
    Binary,
    /// A 0/1 column produced by one-hot encoding a discrete column.
    Indicator,
}

impl ColumnKind {
    pub fn is_discrete(self) -> bool {
        matches!(self, ColumnKind::Categorical | ColumnKind::Ordinal | ColumnKind::Binary)
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Continuous => "continuous",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Ordinal => "ordinal",
            ColumnKind::Binary => "binary",
            ColumnKind::Indicator => "indicator",
        })
    }
}

impl FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" => Ok(ColumnKind::Continuous),
            "categorical" => Ok(ColumnKind::Categorical),
            "ordinal" => Ok(ColumnKind::Ordinal),
            "binary" => Ok(ColumnKind::Binary),
            "indicator" => Ok(ColumnKind::Indicator),
            other => Err(Error::config(format!("unknown column kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Declared values of a discrete column, in order.
    pub levels: Vec<String>,
    /// Ordinal only: keep as one numeric column instead of one-hot encoding.
    pub keep_numeric: bool,
}

impl ColumnSchema {
    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Continuous,
            levels: Vec::new(),
            keep_numeric: false,
        }
    }

    pub fn discrete<S: Into<String>>(
        name: impl Into<String>,
        kind: ColumnKind,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        ColumnSchema {
            name: name.into(),
            kind,
            levels: levels.into_iter().map(Into::into).collect(),
            keep_numeric: false,
        }
    }

    /// An ordinal column that is kept as a single numeric feature.
    pub fn numeric_ordinal<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        ColumnSchema {
            keep_numeric: true,
            ..Self::discrete(name, ColumnKind::Ordinal, levels)
        }
    }

    /// Whether [`center_scale`] divides this column by its standard deviation.
    pub fn is_scaled(&self) -> bool {
        self.kind == ColumnKind::Continuous || (self.kind == ColumnKind::Ordinal && self.keep_numeric)
    }

    /// Whether [`one_hot`] expands this column.
    pub fn is_expanded(&self) -> bool {
        self.kind.is_discrete() && !self.keep_numeric
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("column name must not be empty"));
        }
        if self.keep_numeric && self.kind != ColumnKind::Ordinal {
            return Err(Error::config(format!(
                "column '{}': only ordinal columns can be kept numeric",
                self.name
            )));
        }
        if self.kind.is_discrete() {
            let l = self.levels.len();
            if !(MIN_LEVELS..=MAX_LEVELS).contains(&l) {
                return Err(Error::config(format!(
                    "column '{}' declares {l} levels; discrete columns need {MIN_LEVELS} to {MAX_LEVELS}",
                    self.name
                )));
            }
            if self.kind == ColumnKind::Binary && l != 2 {
                return Err(Error::config(format!(
                    "binary column '{}' must declare exactly 2 levels",
                    self.name
                )));
            }
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = self.levels.iter().find(|l| !seen.insert(l.as_str())) {
                return Err(Error::config(format!(
                    "column '{}' declares level '{dup}' twice",
                    self.name
                )));
            }
        } else if !self.levels.is_empty() {
            return Err(Error::config(format!(
                "{} column '{}' cannot declare levels",
                self.kind, self.name
            )));
        }
        Ok(())
    }

    /// Stored value of each level: the parsed level for numeric ordinals whose
    /// levels are all numbers, the 1-based rank for other numeric ordinals, and
    /// the 0-based level index otherwise.
    pub fn level_codes(&self) -> Vec<f64> {
        if self.keep_numeric {
            let parsed: Option<Vec<f64>> = self
                .levels
                .iter()
                .map(|l| l.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            parsed.unwrap_or_else(|| (1..=self.levels.len()).map(|r| r as f64).collect())
        } else {
            (0..self.levels.len()).map(|i| i as f64).collect()
        }
    }

    fn schema_line(&self) -> String {
        let mut line = format!("{} = ", self.name);
        if self.keep_numeric {
            line.push_str("ordinal numeric");
        } else {
            line.push_str(&self.kind.to_string());
        }
        if !self.levels.is_empty() {
            line.push_str(": ");
            line.push_str(&self.levels.join(", "));
        }
        line
    }
}

/// Parses the schema text format, one column per line:
///
/// ```text
/// # comment
/// height = continuous
/// region = categorical: north, south, east
/// size   = ordinal: small, medium, large
/// rank   = ordinal numeric: 1, 2, 3
/// ```
pub fn parse_schema(text: &str) -> Result<Vec<ColumnSchema>> {
    let mut columns: Vec<ColumnSchema> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::config(format!("schema line {}: {msg}", lineno + 1));
        let (name, rest) = line.split_once('=').ok_or_else(|| bad("expected 'name = kind'"))?;
        let name = name.trim();
        let (kind_part, levels) = match rest.split_once(':') {
            Some((k, l)) => (k, l.split(',').map(|v| v.trim().to_string()).collect()),
            None => (rest, Vec::new()),
        };
        let words: Vec<&str> = kind_part.split_whitespace().collect();
        let col = match words.as_slice() {
            [kind] => ColumnSchema {
                name: name.to_string(),
                kind: kind.parse()?,
                levels,
                keep_numeric: false,
            },
            [kind, flag] if flag.eq_ignore_ascii_case("numeric") => ColumnSchema {
                name: name.to_string(),
                kind: kind.parse()?,
                levels,
                keep_numeric: true,
            },
            _ => return Err(bad("expected a column kind")),
        };
        col.validate()
            .map_err(|e| bad(&e.to_string()))?;
        if columns.iter().any(|c| c.name == col.name) {
            return Err(bad(&format!("column '{}' declared twice", col.name)));
        }
        columns.push(col);
    }
    if columns.is_empty() {
        return Err(Error::config("schema declares no columns"));
    }
    Ok(columns)
}

pub fn read_schema(path: impl AsRef<Path>) -> Result<Vec<ColumnSchema>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schema(&text)
}

pub fn format_schema(schema: &[ColumnSchema]) -> String {
    schema.iter().map(|c| c.schema_line() + "\n").collect()
}

/// One preprocessing step, with enough parameters to re-run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Transform {
    Load {
        source: String,
        rows: usize,
        columns: usize,
        missing_tokens: Vec<String>,
    },
    DropSparse {
        threshold: f64,
        dropped: Vec<String>,
    },
    OneHot {
        expanded: Vec<String>,
        columns_after: usize,
    },
    CenterScale {
        std_denominator: String,
        scaled: Vec<String>,
        /// Zero-variance continuous columns removed instead of scaled.
        dropped_constant: Vec<String>,
    },
}

impl Transform {
    fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        match self {
            Transform::Load { .. } => Ok(ds.clone()),
            Transform::DropSparse { threshold, .. } => drop_sparse_columns(ds, *threshold),
            Transform::OneHot { .. } => one_hot(ds),
            Transform::CenterScale { .. } => center_scale(ds),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub steps: Vec<Transform>,
}

impl Provenance {
    /// One JSON record per line.
    pub fn to_text(&self) -> String {
        self.steps
            .iter()
            .map(|t| serde_json::to_string(t).expect("transform records serialize") + "\n")
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let steps = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Input(format!("provenance line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Provenance { steps })
    }

    /// Re-applies every recorded step after the initial load to `raw`.
    pub fn replay(&self, raw: &Dataset) -> Result<Dataset> {
        let mut ds = raw.clone();
        for step in self.steps.iter().skip_while(|s| matches!(s, Transform::Load { .. })) {
            ds = step.apply(&ds)?;
        }
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: Vec<ColumnSchema>,
    pub matrix: MaskedMatrix,
    pub row_labels: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    /// An all-continuous dataset built in memory (e.g. from synthetic data).
    pub fn from_matrix(matrix: MaskedMatrix, source: impl Into<String>) -> Self {
        let (n, p) = matrix.shape();
        let schema = (1..=p).map(|j| ColumnSchema::continuous(format!("x{j}"))).collect();
        Dataset {
            schema,
            matrix,
            row_labels: (1..=n).map(|i| i.to_string()).collect(),
            provenance: Provenance {
                steps: vec![Transform::Load {
                    source: source.into(),
                    rows: n,
                    columns: p,
                    missing_tokens: Vec::new(),
                }],
            },
        }
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.schema.iter().map(|c| c.name.as_str()).collect()
    }

    fn check(&self) -> Result<()> {
        if self.schema.len() != self.matrix.cols() || self.row_labels.len() != self.matrix.rows() {
            return Err(Error::shape(format!(
                "dataset has {} schema columns and {} labels for a {}x{} matrix",
                self.schema.len(),
                self.row_labels.len(),
                self.matrix.rows(),
                self.matrix.cols()
            )));
        }
        Ok(())
    }

    /// Keeps the listed columns in order; provenance is carried over unchanged.
    fn with_columns(&self, keep: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            schema: keep.iter().map(|&j| self.schema[j].clone()).collect(),
            matrix: self.matrix.select_columns(keep),
            row_labels: self.row_labels.clone(),
            provenance: self.provenance.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    pub missing_tokens: Vec<String>,
    /// Header of a column holding row labels rather than data.
    pub label_column: Option<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            missing_tokens: DEFAULT_MISSING_TOKENS.iter().map(|s| s.to_string()).collect(),
            label_column: None,
        }
    }
}

/// Loads a CSV whose header names exactly the schema columns (in any order,
/// plus the optional label column). Columns come out in schema order. Rows in
/// load errors are 1-based data rows, not counting the header.
pub fn load_csv(path: impl AsRef<Path>, schema: &[ColumnSchema], opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string(), schema, opts)
}

pub fn read_csv<R: Read>(
    reader: R,
    source: &str,
    schema: &[ColumnSchema],
    opts: &CsvOptions,
) -> Result<Dataset> {
    for col in schema {
        col.validate()?;
    }
    if schema.is_empty() {
        return Err(Error::config("schema declares no columns"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header_err = |message: String| Error::Load {
        row: 0,
        column: String::new(),
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| header_err(format!("unreadable header: {e}")))?
        .clone();

    let mut position: HashMap<&str, usize> = HashMap::new();
    let mut label_at = None;
    for (k, h) in headers.iter().enumerate() {
        if opts.label_column.as_deref() == Some(h) {
            label_at = Some(k);
            continue;
        }
        if !schema.iter().any(|c| c.name == h) {
            return Err(Error::Load {
                row: 0,
                column: h.to_string(),
                message: "column is not declared in the schema".into(),
            });
        }
        if position.insert(h, k).is_some() {
            return Err(Error::Load {
                row: 0,
                column: h.to_string(),
                message: "duplicate header".into(),
            });
        }
    }
    if let Some(label) = &opts.label_column {
        if label_at.is_none() {
            return Err(Error::Load {
                row: 0,
                column: label.clone(),
                message: "label column missing from header".into(),
            });
        }
    }
    let source_idx: Vec<usize> = schema
        .iter()
        .map(|c| {
            position.get(c.name.as_str()).copied().ok_or_else(|| Error::Load {
                row: 0,
                column: c.name.clone(),
                message: "schema column missing from header".into(),
            })
        })
        .collect::<Result<_>>()?;
    let codes: Vec<HashMap<&str, f64>> = schema
        .iter()
        .map(|c| c.levels.iter().map(String::as_str).zip(c.level_codes()).collect())
        .collect();

    let p = schema.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Load {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Load {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, col) in schema.iter().enumerate() {
            let cell = &record[source_idx[j]];
            if opts.missing_tokens.iter().any(|t| t == cell) {
                values.push(0.0);
                mask.push(false);
                continue;
            }
            let cell_err = |message: String| Error::Load {
                row,
                column: col.name.clone(),
                message,
            };
            let v = if col.kind.is_discrete() {
                *codes[j]
                    .get(cell)
                    .ok_or_else(|| cell_err(format!("value '{cell}' is not a declared level")))?
            } else {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| cell_err(format!("cannot parse '{cell}' as a finite number")))?
            };
            values.push(v);
            mask.push(true);
        }
        labels.push(match label_at {
            Some(k) => record[k].to_string(),
            None => row.to_string(),
        });
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::data(format!("{source} has no data rows")));
    }
    let matrix = MaskedMatrix::new(Matrix::from_vec(n, p, values)?, mask)?;
    Ok(Dataset {
        schema: schema.to_vec(),
        matrix,
        row_labels: labels,
        provenance: Provenance {
            steps: vec![Transform::Load {
                source: source.to_string(),
                rows: n,
                columns: p,
                missing_tokens: opts.missing_tokens.clone(),
            }],
        },
    })
}

/// Treats every header column except `label_column` as continuous.
pub fn continuous_schema_from_header(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Vec<ColumnSchema>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| Error::Load {
        row: 0,
        column: String::new(),
        message: format!("unreadable header: {e}"),
    })?;
    let schema: Vec<ColumnSchema> = headers
        .iter()
        .filter(|h| Some(*h) != label_column)
        .map(ColumnSchema::continuous)
        .collect();
    if schema.is_empty() {
        return Err(Error::data(format!("{} has no data columns", path.display())));
    }
    Ok(schema)
}

/// Writes the dataset in the form [`load_csv`] reads: discrete codes as level
/// names, missing entries as `missing_token`, numbers in shortest round-trip form.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W, missing_token: &str) -> Result<()> {
    ds.check()?;
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Input(format!("csv write failed: {e}"));
    w.write_record(ds.column_names()).map_err(csv_err)?;
    let codes: Vec<Vec<f64>> = ds.schema.iter().map(ColumnSchema::level_codes).collect();
    for i in 0..ds.n_rows() {
        let mut fields = Vec::with_capacity(ds.n_cols());
        for (j, col) in ds.schema.iter().enumerate() {
            fields.push(match ds.matrix.get(i, j) {
                None => missing_token.to_string(),
                Some(v) if col.kind.is_discrete() => {
                    let k = codes[j].iter().position(|&c| c == v).ok_or_else(|| {
                        Error::data(format!("column '{}' holds undeclared code {v}", col.name))
                    })?;
                    col.levels[k].clone()
                }
                Some(v) => v.to_string(),
            });
        }
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(format!("csv write failed: {e}")))?;
    Ok(())
}

/// Writes the numeric matrix (missing as `NA`) and the 0/1 observation mask.
pub fn write_matrix_and_mask(ds: &Dataset, matrix_path: &Path, mask_path: &Path) -> Result<()> {
    ds.check()?;
    let header = ds.column_names().join(",");
    let mut m = header.clone() + "\n";
    let mut k = header + "\n";
    for i in 0..ds.n_rows() {
        let vals: Vec<String> = (0..ds.n_cols())
            .map(|j| ds.matrix.get(i, j).map_or("NA".to_string(), |v| v.to_string()))
            .collect();
        let bits: Vec<&str> = ds.matrix.row_mask(i).iter().map(|&b| if b { "1" } else { "0" }).collect();
        m += &(vals.join(",") + "\n");
        k += &(bits.join(",") + "\n");
    }
    fs::write(matrix_path, m).map_err(|e| Error::io(matrix_path, e))?;
    fs::write(mask_path, k).map_err(|e| Error::io(mask_path, e))?;
    Ok(())
}

/// Removes columns whose missing fraction is strictly above `threshold`.
pub fn drop_sparse_columns(ds: &Dataset, threshold: f64) -> Result<Dataset> {
    ds.check()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!("missing threshold must be in [0, 1], got {threshold}")));
    }
    let n = ds.n_rows() as f64;
    let observed = ds.matrix.column_observed_counts();
    let (keep, drop): (Vec<usize>, Vec<usize>) =
        (0..ds.n_cols()).partition(|&j| (n - observed[j] as f64) / n <= threshold);
    if keep.is_empty() {
        return Err(Error::data(format!(
            "every column is missing more than {threshold} of its entries"
        )));
    }
    let mut out = ds.with_columns(&keep)?;
    out.provenance.steps.push(Transform::DropSparse {
        threshold,
        dropped: drop.iter().map(|&j| ds.schema[j].name.clone()).collect(),
    });
    Ok(out)
}

/// Replaces each discrete column with one 0/1 column per level, named
/// `column=level`. A missing source entry is missing in every derived column.
/// Continuous columns and numeric ordinals pass through.
pub fn one_hot(ds: &Dataset) -> Result<Dataset> {
    ds.check()?;
    let n = ds.n_rows();
    let mut schema = Vec::new();
    let mut cols: Vec<Vec<Option<f64>>> = Vec::new();
    let mut expanded = Vec::new();
    for (j, col) in ds.schema.iter().enumerate() {
        let source: Vec<Option<f64>> = (0..n).map(|i| ds.matrix.get(i, j)).collect();
        if !col.is_expanded() {
            schema.push(col.clone());
            cols.push(source);
            continue;
        }
        col.validate()?;
        expanded.push(col.name.clone());
        for (level, code) in col.levels.iter().zip(col.level_codes()) {
            schema.push(ColumnSchema {
                name: format!("{}={}", col.name, level),
                kind: ColumnKind::Indicator,
                levels: Vec::new(),
                keep_numeric: false,
            });
            cols.push(source.iter().map(|v| v.map(|v| if v == code { 1.0 } else { 0.0 })).collect());
        }
    }
    let p = cols.len();
    let matrix = Matrix::from_fn(n, p, |i, j| cols[j][i].unwrap_or(f64::NAN));
    let mut out = Dataset {
        schema,
        matrix: MaskedMatrix::from_nan(matrix)?,
        row_labels: ds.row_labels.clone(),
        provenance: ds.provenance.clone(),
    };
    out.provenance.steps.push(Transform::OneHot {
        expanded,
        columns_after: p,
    });
    Ok(out)
}

/// Centers every column on its observed mean and divides continuous columns
/// (and numeric ordinals) by their sample standard deviation (`n − 1`
/// denominator). Constant continuous columns are dropped.
pub fn center_scale(ds: &Dataset) -> Result<Dataset> {
    ds.check()?;
    if let Some(c) = ds.schema.iter().find(|c| c.is_expanded()) {
        return Err(Error::config(format!(
            "column '{}' is discrete; one-hot encode before centering",
            c.name
        )));
    }
    let (n, p) = ds.matrix.shape();
    let mut keep = Vec::new();
    let mut scaled = Vec::new();
    let mut dropped_constant = Vec::new();
    let mut data = ds.matrix.data().clone();
    for j in 0..p {
        let obs: Vec<f64> = (0..n).filter_map(|i| ds.matrix.get(i, j)).collect();
        let col = &ds.schema[j];
        if obs.len() < 2 {
            return Err(Error::data(format!(
                "column '{}' has {} observed entries; at least 2 are needed",
                col.name,
                obs.len()
            )));
        }
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let mut scale = 1.0;
        if col.is_scaled() {
            if obs.iter().all(|&v| v == obs[0]) {
                dropped_constant.push(col.name.clone());
                continue;
            }
            let ss: f64 = obs.iter().map(|v| (v - mean) * (v - mean)).sum();
            scale = (ss / (obs.len() - 1) as f64).sqrt();
            scaled.push(col.name.clone());
        }
        for i in 0..n {
            if ds.matrix.is_observed(i, j) {
                data[(i, j)] = (data[(i, j)] - mean) / scale;
            }
        }
        keep.push(j);
    }
    if keep.is_empty() {
        return Err(Error::data("every column is constant"));
    }
    let transformed = Dataset {
        matrix: MaskedMatrix::new(data, ds.matrix.mask().to_vec())?,
        ..ds.clone()
    };
    let mut out = transformed.with_columns(&keep)?;
    out.provenance.steps.push(Transform::CenterScale {
        std_denominator: "n-1".into(),
        scaled,
        dropped_constant,
    });
    Ok(out)
}

/// The full preprocessing chain in its fixed order.
pub fn preprocess(ds: &Dataset, missing_threshold: f64) -> Result<Dataset> {
    let ds = drop_sparse_columns(ds, missing_threshold)?;
    let ds = one_hot(&ds)?;
    center_scale(&ds)
}
