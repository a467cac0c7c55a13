//! Tabular datasets: CSV loading, per-feature statistics, row masks and
//! feature subsets, normalization and export.
//!
//! A [`DataTable`] is immutable after load. Filtering and feature selection
//! produce [`TableView`]s, which only carry masks over a shared table.

use std::collections::HashSet;
use std::io::Read;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{self, FilterExpr, RowLookup, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// Summary of one numeric column. `std` uses the population divisor `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub missing_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    pub values: Vec<String>,
    pub missing_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Numeric(usize),
    Categorical(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMethod {
    Minmax,
    Zscore,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub header_row: bool,
    pub id_column: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            header_row: true,
            id_column: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    id_name: Option<String>,
    row_ids: Vec<String>,
    features: Vec<FeatureMeta>,
    /// Row-major, `n × d`.
    values: Vec<f64>,
    categorical: Vec<CategoricalColumn>,
    columns: Vec<Column>,
}

/// JSON rendering of table metadata for the API.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableMetadata {
    pub n_rows: usize,
    pub id_column: Option<String>,
    pub numeric: Vec<FeatureMeta>,
    pub categorical: Vec<CategoricalMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalMeta {
    pub name: String,
    pub kind: FeatureKind,
    pub distinct: usize,
    pub missing_count: usize,
}

/// True iff `s` is a plain decimal: optional sign, digits with optional
/// fraction, optional exponent. Rejects `inf`, `nan` and hex forms.
fn is_decimal(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if matches!(b.first(), Some(b'+' | b'-')) {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == b.len()
}

/// Population statistics of a column; `values` must be non-empty.
fn column_stats(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), min, max)
}

pub fn load_csv<R: Read>(mut source: R, options: &LoadOptions) -> Result<DataTable> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Encoding(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Encoding(e.to_string()))?;

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Structure {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }

    let mut records = records.into_iter();
    let names: Vec<String> = if options.header_row {
        let (_, header) = records.next().ok_or(Error::EmptyInput)?;
        header.iter().map(|s| s.trim().to_string()).collect()
    } else {
        Vec::new()
    };
    let rows: Vec<(u64, csv::StringRecord)> = records.collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let width = if options.header_row {
        names.len()
    } else {
        rows[0].1.len()
    };
    let names = if options.header_row {
        names
    } else {
        (0..width).map(|j| format!("col{j}")).collect()
    };
    let mut seen = HashSet::new();
    for name in &names {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateName(name.clone()));
        }
    }
    for (line, rec) in &rows {
        if rec.len() != width {
            return Err(Error::Structure {
                line: *line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
    }

    let cells: Vec<Vec<&str>> = (0..width)
        .map(|j| rows.iter().map(|(_, r)| r[j].trim()).collect())
        .collect();
    let numeric: Vec<bool> = cells
        .iter()
        .map(|col| {
            col.iter().any(|c| !c.is_empty())
                && col.iter().all(|c| c.is_empty() || is_decimal(c))
        })
        .collect();

    let id_index = match &options.id_column {
        Some(name) => {
            let j = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::UnknownNames(vec![name.clone()]))?;
            let mut ids = HashSet::new();
            if let Some(dup) = cells[j].iter().find(|c| !ids.insert(**c)) {
                return Err(Error::Parameter(format!(
                    "id column `{name}` has duplicate value `{dup}`"
                )));
            }
            Some(j)
        }
        None if width > 0 && !numeric[0] => {
            let mut ids = HashSet::new();
            let unique = cells[0].iter().all(|c| !c.is_empty() && ids.insert(*c));
            unique.then_some(0)
        }
        None => None,
    };

    let n = rows.len();
    let mut features = Vec::new();
    let mut categorical = Vec::new();
    let mut columns = Vec::new();
    let mut numeric_cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..width {
        if Some(j) == id_index {
            continue;
        }
        let col = &cells[j];
        let missing_count = col.iter().filter(|c| c.is_empty()).count();
        if numeric[j] {
            let present: Vec<f64> = col
                .iter()
                .filter(|c| !c.is_empty())
                .map(|c| c.parse::<f64>().expect("validated decimal"))
                .collect();
            if present.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            let fill = present.iter().sum::<f64>() / present.len() as f64;
            let filled: Vec<f64> = col
                .iter()
                .map(|c| if c.is_empty() { fill } else { c.parse().unwrap() })
                .collect();
            let (mean, std, min, max) = column_stats(&filled);
            columns.push(Column::Numeric(features.len()));
            features.push(FeatureMeta {
                name: names[j].clone(),
                kind: FeatureKind::Numeric,
                mean,
                std,
                min,
                max,
                missing_count,
            });
            numeric_cols.push(filled);
        } else {
            columns.push(Column::Categorical(categorical.len()));
            categorical.push(CategoricalColumn {
                name: names[j].clone(),
                values: col.iter().map(|c| c.to_string()).collect(),
                missing_count,
            });
        }
    }

    let d = features.len();
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        values.extend(numeric_cols.iter().map(|col| col[i]));
    }
    let (id_name, row_ids) = match id_index {
        Some(j) => (
            Some(names[j].clone()),
            cells[j].iter().map(|c| c.to_string()).collect(),
        ),
        None => (None, (0..n).map(|i| i.to_string()).collect()),
    };

    Ok(DataTable {
        id_name,
        row_ids,
        features,
        values,
        categorical,
        columns,
    })
}

impl DataTable {
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    /// Number of numeric features.
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn id_column(&self) -> Option<&str> {
        self.id_name.as_deref()
    }

    pub fn features(&self) -> &[FeatureMeta] {
        &self.features
    }

    pub fn categorical(&self) -> &[CategoricalColumn] {
        &self.categorical
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.row_ids.iter().position(|r| r == id)
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.features.len() + feature]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let d = self.features.len();
        &self.values[row * d..(row + 1) * d]
    }

    pub fn metadata(&self) -> TableMetadata {
        TableMetadata {
            n_rows: self.n_rows(),
            id_column: self.id_name.clone(),
            numeric: self.features.clone(),
            categorical: self
                .categorical
                .iter()
                .map(|c| CategoricalMeta {
                    name: c.name.clone(),
                    kind: FeatureKind::Categorical,
                    distinct: c.values.iter().collect::<HashSet<_>>().len(),
                    missing_count: c.missing_count,
                })
                .collect(),
        }
    }

    /// Row selected iff the row id, any cell's text, or any column name
    /// contains `query` case-insensitively.
    pub fn keyword_filter(&self, query: &str) -> Vec<bool> {
        let n = self.n_rows();
        let needle = query.to_lowercase();
        if needle.is_empty() {
            return vec![true; n];
        }
        let name_hit = self
            .features
            .iter()
            .map(|f| &f.name)
            .chain(self.categorical.iter().map(|c| &c.name))
            .chain(self.id_name.iter())
            .any(|name| name.to_lowercase().contains(&needle));
        if name_hit {
            return vec![true; n];
        }
        (0..n)
            .map(|i| {
                self.row_ids[i].to_lowercase().contains(&needle)
                    || self.row(i).iter().any(|v| v.to_string().contains(&needle))
                    || self
                        .categorical
                        .iter()
                        .any(|c| c.values[i].to_lowercase().contains(&needle))
            })
            .collect()
    }

    pub fn apply_filter(&self, expr: &FilterExpr) -> Result<Vec<bool>> {
        let unknown: Vec<String> = expr
            .identifiers()
            .into_iter()
            .filter(|name| {
                self.feature_index(name).is_none()
                    && !self.categorical.iter().any(|c| c.name == *name)
            })
            .map(str::to_string)
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownNames(unknown));
        }
        (0..self.n_rows())
            .map(|row| filter::eval(expr, &TableRow { table: self, row }))
            .collect()
    }
}

struct TableRow<'a> {
    table: &'a DataTable,
    row: usize,
}

impl RowLookup for TableRow<'_> {
    fn value(&self, name: &str) -> Option<Value<'_>> {
        if let Some(j) = self.table.feature_index(name) {
            return Some(Value::Num(self.table.value(self.row, j)));
        }
        self.table
            .categorical
            .iter()
            .find(|c| c.name == name)
            .map(|c| Value::Str(&c.values[self.row]))
    }
}

/// A row mask and ordered numeric-feature subset over a shared table.
#[derive(Debug, Clone)]
pub struct TableView {
    table: Arc<DataTable>,
    row_mask: Vec<bool>,
    features: Vec<usize>,
}

impl TableView {
    pub fn full(table: Arc<DataTable>) -> Self {
        let row_mask = vec![true; table.n_rows()];
        let features = (0..table.n_features()).collect();
        Self {
            table,
            row_mask,
            features,
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.table.n_rows() {
            return Err(Error::Dimension {
                expected: self.table.n_rows(),
                actual: mask.len(),
            });
        }
        self.row_mask = mask;
        Ok(self)
    }

    pub fn with_features<S: AsRef<str>>(mut self, names: &[S]) -> Result<Self> {
        let mut unknown = Vec::new();
        let mut indices = Vec::new();
        for name in names {
            let name = name.as_ref();
            match self.table.feature_index(name) {
                Some(j) if !indices.contains(&j) => indices.push(j),
                Some(_) => return Err(Error::DuplicateName(name.to_string())),
                None => unknown.push(name.to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownNames(unknown));
        }
        self.features = indices;
        Ok(self)
    }

    pub fn table(&self) -> &Arc<DataTable> {
        &self.table
    }

    pub fn row_mask(&self) -> &[bool] {
        &self.row_mask
    }

    /// Indices into the base table of the selected features.
    pub fn feature_indices(&self) -> &[usize] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features
            .iter()
            .map(|&j| self.table.features[j].name.clone())
            .collect()
    }

    /// Base-table indices of the selected rows, ascending.
    pub fn selected_rows(&self) -> Vec<usize> {
        self.row_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &keep)| keep.then_some(i))
            .collect()
    }

    pub fn n_rows(&self) -> usize {
        self.row_mask.iter().filter(|&&m| m).count()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Selected rows × selected features.
    pub fn matrix(&self) -> DMatrix<f64> {
        let rows = self.selected_rows();
        DMatrix::from_fn(rows.len(), self.features.len(), |i, j| {
            self.table.value(rows[i], self.features[j])
        })
    }

    /// Values of one selected feature (position within the subset) over the
    /// selected rows.
    pub fn column(&self, feature_pos: usize) -> Vec<f64> {
        let j = self.features[feature_pos];
        self.selected_rows()
            .into_iter()
            .map(|i| self.table.value(i, j))
            .collect()
    }

    /// Selected feature values of a base-table row.
    pub fn point(&self, row: usize) -> Vec<f64> {
        self.features
            .iter()
            .map(|&j| self.table.value(row, j))
            .collect()
    }

    /// Population standard deviation of each selected feature over the
    /// selected rows.
    pub fn feature_std(&self) -> Vec<f64> {
        (0..self.features.len())
            .map(|p| {
                let col = self.column(p);
                if col.is_empty() {
                    0.0
                } else {
                    column_stats(&col).1
                }
            })
            .collect()
    }
}

pub fn normalize(view: &TableView, method: NormalizeMethod) -> DMatrix<f64> {
    let mut m = view.matrix();
    if m.nrows() == 0 {
        return m;
    }
    for mut col in m.column_iter_mut() {
        let values: Vec<f64> = col.iter().copied().collect();
        let (mean, std, min, max) = column_stats(&values);
        match method {
            NormalizeMethod::Minmax => {
                let range = max - min;
                col.apply(|v| *v = if range > 0.0 { (*v - min) / range } else { 0.5 });
            }
            NormalizeMethod::Zscore => {
                col.apply(|v| *v = if std > 0.0 { (*v - mean) / std } else { 0.0 });
            }
        }
    }
    m
}

/// Serializes the view as RFC-4180 CSV. The id column is written only when
/// the table has a named one; categorical columns are always kept.
pub fn export_csv(view: &TableView) -> Vec<u8> {
    let table = &view.table;
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let kept: Vec<Column> = table
        .columns
        .iter()
        .copied()
        .filter(|c| match c {
            Column::Numeric(j) => view.features.contains(j),
            Column::Categorical(_) => true,
        })
        .collect();

    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = &table.id_name {
        header.push(id);
    }
    for c in &kept {
        header.push(match c {
            Column::Numeric(j) => &table.features[*j].name,
            Column::Categorical(j) => &table.categorical[*j].name,
        });
    }
    writer.write_record(&header).expect("write to Vec");

    for i in view.selected_rows() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        if table.id_name.is_some() {
            record.push(table.row_ids[i].clone());
        }
        for c in &kept {
            record.push(match c {
                Column::Numeric(j) => table.value(i, *j).to_string(),
                Column::Categorical(j) => table.categorical[*j].values[i].clone(),
            });
        }
        writer.write_record(&record).expect("write to Vec");
    }
    writer.into_inner().expect("flush to Vec")
}
