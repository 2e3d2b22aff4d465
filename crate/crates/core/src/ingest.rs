//! Loading, aligning and transforming price panels.
//!
//! Input files are UTF-8 CSV with a header row whose first column is `date`
//! (ISO-8601 calendar dates). A [`PanelSchema`] maps CSV columns to variable
//! names and group labels.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use thiserror::Error;

use crate::textio::{csv_line, format_full};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: first column must be named \"date\", found {found:?}")]
    MissingDateColumn { path: PathBuf, found: String },
    #[error("{path}: column {column:?} not found in header")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, line {line}: cannot parse date {value:?}")]
    BadDate { path: PathBuf, line: u64, value: String },
    #[error("{path}: no parseable rows")]
    NoRows { path: PathBuf },
    #[error("duplicate dates: {0}")]
    DuplicateDates(NaiveDate),
    #[error("dates must be strictly increasing ({0} follows {1})")]
    UnsortedDates(NaiveDate, NaiveDate),
    #[error("non-positive price {value} for {name} on {date}")]
    NonPositivePrice { name: String, date: NaiveDate, value: f64 },
    #[error("non-finite value for {name} at row {row}")]
    NonFinite { name: String, row: usize },
    #[error("panel shape mismatch: {0}")]
    Shape(String),
    #[error("variable names must be unique and nonempty (offending: {0:?})")]
    BadName(String),
    #[error("variable {0:?} has no group label")]
    Unlabelled(String),
    #[error("group partition is empty")]
    EmptyPartition,
    #[error("no panels to align")]
    NoPanels,
    #[error("empty date intersection")]
    EmptyIntersection,
    #[error("need at least {needed} rows, have {have}")]
    TooFewRows { needed: usize, have: usize },
}

/// How a row with a missing or unparseable mapped cell is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Listwise deletion.
    #[default]
    DropRow,
    /// Carry the last observed value forward; leading gaps are dropped.
    ForwardFill,
}

impl std::str::FromStr for MissingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "drop-row" | "drop" => Ok(Self::DropRow),
            "forward-fill" | "ffill" => Ok(Self::ForwardFill),
            other => Err(format!("unknown missing-data policy {other:?}")),
        }
    }
}

impl std::fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DropRow => "drop-row",
            Self::ForwardFill => "forward-fill",
        })
    }
}

/// Assignment of every variable to a group label (e.g. "crypto", "other").
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    entries: Vec<(String, String)>,
}

impl GroupPartition {
    pub fn new<I, N, L>(pairs: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (N, L)>,
        N: Into<String>,
        L: Into<String>,
    {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (name, label) in pairs {
            let (name, label) = (name.into(), label.into());
            if name.trim().is_empty() || !seen.insert(name.clone()) {
                return Err(IngestError::BadName(name));
            }
            if label.trim().is_empty() {
                return Err(IngestError::Unlabelled(name));
            }
            entries.push((name, label));
        }
        if entries.is_empty() {
            return Err(IngestError::EmptyPartition);
        }
        Ok(Self { entries })
    }

    /// Every name in one group.
    pub fn uniform<S: AsRef<str>>(names: &[S], label: &str) -> Result<Self, IngestError> {
        Self::new(names.iter().map(|n| (n.as_ref().to_string(), label.to_string())))
    }

    pub fn group_of(&self, name: &str) -> Option<&str> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, l)| l.as_str())
    }

    /// Distinct labels in order of first appearance.
    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (_, l) in &self.entries {
            if !out.contains(&l.as_str()) {
                out.push(l);
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(n, l)| (n.as_str(), l.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks that every name has a label.
    pub fn covers<S: AsRef<str>>(&self, names: &[S]) -> Result<(), IngestError> {
        for n in names {
            if self.group_of(n.as_ref()).is_none() {
                return Err(IngestError::Unlabelled(n.as_ref().to_string()));
            }
        }
        Ok(())
    }

    /// The partition restricted to (and reordered by) `names`.
    pub fn restricted_to<S: AsRef<str>>(&self, names: &[S]) -> Result<Self, IngestError> {
        self.covers(names)?;
        Self::new(names.iter().map(|n| {
            let n = n.as_ref();
            (n.to_string(), self.group_of(n).unwrap().to_string())
        }))
    }
}

fn check_names(names: &[String]) -> Result<(), IngestError> {
    let mut seen = HashSet::new();
    for n in names {
        if n.trim().is_empty() || !seen.insert(n.as_str()) {
            return Err(IngestError::BadName(n.clone()));
        }
    }
    Ok(())
}

fn check_dates(dates: &[NaiveDate]) -> Result<(), IngestError> {
    for w in dates.windows(2) {
        if w[1] == w[0] {
            return Err(IngestError::DuplicateDates(w[0]));
        }
        if w[1] < w[0] {
            return Err(IngestError::UnsortedDates(w[1], w[0]));
        }
    }
    Ok(())
}

/// Date-aligned `T x K` matrix of strictly positive price levels.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    values: DMatrix<f64>,
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, names: Vec<String>, values: DMatrix<f64>) -> Result<Self, IngestError> {
        check_names(&names)?;
        check_dates(&dates)?;
        if values.nrows() != dates.len() || values.ncols() != names.len() {
            return Err(IngestError::Shape(format!(
                "{} dates and {} names for a {}x{} matrix",
                dates.len(),
                names.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        for (t, date) in dates.iter().enumerate() {
            for (k, name) in names.iter().enumerate() {
                let v = values[(t, k)];
                if !v.is_finite() {
                    return Err(IngestError::NonFinite {
                        name: name.clone(),
                        row: t,
                    });
                }
                if v <= 0.0 {
                    return Err(IngestError::NonPositivePrice {
                        name: name.clone(),
                        date: *date,
                        value: v,
                    });
                }
            }
        }
        Ok(Self { dates, names, values })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Columns in the order given by `names`.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Self, IngestError> {
        let idx = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n.as_ref())
                    .ok_or_else(|| IngestError::Unlabelled(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let values = DMatrix::from_fn(self.len(), idx.len(), |t, k| self.values[(t, idx[k])]);
        Self::new(
            self.dates.clone(),
            idx.iter().map(|&i| self.names[i].clone()).collect(),
            values,
        )
    }
}

/// Percent log-returns (or any real-valued series) on a common date grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    values: DMatrix<f64>,
    partition: GroupPartition,
}

impl ReturnPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        names: Vec<String>,
        values: DMatrix<f64>,
        partition: GroupPartition,
    ) -> Result<Self, IngestError> {
        check_names(&names)?;
        check_dates(&dates)?;
        if values.nrows() != dates.len() || values.ncols() != names.len() {
            return Err(IngestError::Shape(format!(
                "{} dates and {} names for a {}x{} matrix",
                dates.len(),
                names.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        for t in 0..values.nrows() {
            for k in 0..values.ncols() {
                if !values[(t, k)].is_finite() {
                    return Err(IngestError::NonFinite {
                        name: names[k].clone(),
                        row: t,
                    });
                }
            }
        }
        let partition = partition.restricted_to(&names)?;
        Ok(Self {
            dates,
            names,
            values,
            partition,
        })
    }

    /// A panel on consecutive synthetic calendar days starting 2000-01-01.
    pub fn with_synthetic_dates(
        names: Vec<String>,
        values: DMatrix<f64>,
        partition: GroupPartition,
    ) -> Result<Self, IngestError> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let dates = (0..values.nrows()).map(|t| start + Days::new(t as u64)).collect();
        Self::new(dates, names, values, partition)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.column(k).iter().copied().collect()
    }

    /// Columns reordered by `order` (indices into the current columns).
    pub fn permuted(&self, order: &[usize]) -> Result<Self, IngestError> {
        let values = DMatrix::from_fn(self.len(), order.len(), |t, k| self.values[(t, order[k])]);
        let names: Vec<String> = order.iter().map(|&i| self.names[i].clone()).collect();
        Self::new(self.dates.clone(), names, values, self.partition.clone())
    }

    /// Every column multiplied by the matching entry of `scale`.
    pub fn rescaled(&self, scale: &[f64]) -> Result<Self, IngestError> {
        let values = DMatrix::from_fn(self.len(), self.names.len(), |t, k| self.values[(t, k)] * scale[k]);
        Self::new(self.dates.clone(), self.names.clone(), values, self.partition.clone())
    }

    /// CSV text: `date,<names...>` with full-precision values.
    pub fn to_csv(&self) -> String {
        let mut out = csv_line(std::iter::once("date".to_string()).chain(self.names.iter().cloned()));
        for (t, d) in self.dates.iter().enumerate() {
            out.push_str(&csv_line(
                std::iter::once(d.format("%Y-%m-%d").to_string())
                    .chain((0..self.names.len()).map(|k| format_full(self.values[(t, k)]))),
            ));
        }
        out
    }
}

/// Maps one CSV column onto a panel variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub column: String,
    pub name: String,
    pub group: String,
}

impl ColumnSpec {
    pub fn new(column: &str, name: &str, group: &str) -> Self {
        Self {
            column: column.to_string(),
            name: name.to_string(),
            group: group.to_string(),
        }
    }
}

/// Column-mapping configuration for one input file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PanelSchema {
    pub columns: Vec<ColumnSpec>,
    pub missing: MissingPolicy,
}

impl PanelSchema {
    pub fn partition(&self) -> Result<GroupPartition, IngestError> {
        GroupPartition::new(self.columns.iter().map(|c| (c.name.clone(), c.group.clone())))
    }
}

/// Header row of a CSV file.
pub fn csv_header(path: &Path) -> Result<Vec<String>, IngestError> {
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(|source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(header.iter().map(|h| h.trim().to_string()).collect())
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

type Rows = (Vec<NaiveDate>, Vec<Vec<f64>>);

fn read_rows(path: &Path, schema: &PanelSchema) -> Result<Rows, IngestError> {
    let mut reader = open_csv(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_string())
        .collect();
    match header.first() {
        Some(h) if h.eq_ignore_ascii_case("date") => {}
        other => {
            return Err(IngestError::MissingDateColumn {
                path: path.to_path_buf(),
                found: other.cloned().unwrap_or_default(),
            })
        }
    }
    let idx = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .skip(1)
                .position(|h| *h == c.column)
                .map(|p| p + 1)
                .ok_or_else(|| IngestError::MissingColumn {
                    path: path.to_path_buf(),
                    column: c.column.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_date = record.get(0).unwrap_or("");
        if raw_date.is_empty() && record.iter().all(str::is_empty) {
            continue;
        }
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| IngestError::BadDate {
            path: path.to_path_buf(),
            line,
            value: raw_date.to_string(),
        })?;
        let cells = idx
            .iter()
            .map(|&i| {
                record
                    .get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        rows.push((date, cells));
    }
    // stable sort keeps file order among equal dates so duplicates are detected below
    rows.sort_by_key(|(d, _)| *d);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(IngestError::DuplicateDates(w[0].0));
        }
    }

    let k = idx.len();
    let mut dates = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    let mut last: Vec<Option<f64>> = vec![None; k];
    for (date, cells) in rows {
        let filled: Vec<Option<f64>> = match schema.missing {
            MissingPolicy::DropRow => cells,
            MissingPolicy::ForwardFill => cells.iter().zip(&last).map(|(c, l)| c.or(*l)).collect(),
        };
        for (l, c) in last.iter_mut().zip(&filled) {
            if c.is_some() {
                *l = *c;
            }
        }
        if filled.iter().all(Option::is_some) {
            dates.push(date);
            values.push(filled.into_iter().map(Option::unwrap).collect());
        }
    }
    if dates.is_empty() {
        return Err(IngestError::NoRows {
            path: path.to_path_buf(),
        });
    }
    Ok((dates, values))
}

fn to_matrix(values: &[Vec<f64>], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(values.len(), k, |t, j| values[t][j])
}

/// Reads a price panel. Rows come back sorted by date.
pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<PricePanel, IngestError> {
    let (dates, values) = read_rows(path, schema)?;
    let names = schema.columns.iter().map(|c| c.name.clone()).collect();
    PricePanel::new(dates, names, to_matrix(&values, schema.columns.len()))
}

/// Reads pre-computed returns (any finite values) without differencing.
pub fn load_returns(path: &Path, schema: &PanelSchema) -> Result<ReturnPanel, IngestError> {
    let (dates, values) = read_rows(path, schema)?;
    let names = schema.columns.iter().map(|c| c.name.clone()).collect();
    ReturnPanel::new(
        dates,
        names,
        to_matrix(&values, schema.columns.len()),
        schema.partition()?,
    )
}

/// Merges panels on the intersection of their date sets; columns are
/// concatenated in input order.
pub fn align(panels: &[PricePanel]) -> Result<PricePanel, IngestError> {
    let first = panels.first().ok_or(IngestError::NoPanels)?;
    let mut common: BTreeSet<NaiveDate> = first.dates.iter().copied().collect();
    for p in &panels[1..] {
        let other: HashSet<NaiveDate> = p.dates.iter().copied().collect();
        common.retain(|d| other.contains(d));
    }
    if common.is_empty() {
        return Err(IngestError::EmptyIntersection);
    }
    let dates: Vec<NaiveDate> = common.into_iter().collect();
    let names: Vec<String> = panels.iter().flat_map(|p| p.names.iter().cloned()).collect();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(names.len());
    for p in panels {
        let row_of: HashMap<NaiveDate, usize> = p.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        for k in 0..p.names.len() {
            columns.push(dates.iter().map(|d| p.values[(row_of[d], k)]).collect());
        }
    }
    let values = DMatrix::from_fn(dates.len(), names.len(), |t, k| columns[k][t]);
    PricePanel::new(dates, names, values)
}

/// Percent log-returns `100 * ln(P_t / P_{t-1})`; one row shorter than the input.
pub fn log_returns(panel: &PricePanel, partition: &GroupPartition) -> Result<ReturnPanel, IngestError> {
    let t_len = panel.len();
    if t_len < 2 {
        return Err(IngestError::TooFewRows { needed: 2, have: t_len });
    }
    let p = &panel.values;
    let values = DMatrix::from_fn(t_len - 1, p.ncols(), |t, k| 100.0 * (p[(t + 1, k)] / p[(t, k)]).ln());
    ReturnPanel::new(
        panel.dates[1..].to_vec(),
        panel.names.clone(),
        values,
        partition.clone(),
    )
}

/// Cumulative growth `ln(P_t / P_0)`; the first row is zero.
pub fn growth_index(panel: &PricePanel) -> DMatrix<f64> {
    let p = &panel.values;
    DMatrix::from_fn(p.nrows(), p.ncols(), |t, k| (p[(t, k)] / p[(0, k)]).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn schema(cols: &[&str]) -> PanelSchema {
        PanelSchema {
            columns: cols.iter().map(|c| ColumnSpec::new(c, c, "g")).collect(),
            missing: MissingPolicy::DropRow,
        }
    }

    fn panel(dates: &[&str], name: &str, vals: &[f64]) -> PricePanel {
        PricePanel::new(
            dates.iter().map(|s| d(s)).collect(),
            vec![name.to_string()],
            DMatrix::from_column_slice(vals.len(), 1, vals),
        )
        .unwrap()
    }

    #[test]
    fn loads_simple_panel() {
        let f = write_csv("date,X\n2020-01-01,100\n2020-01-02,101\n2020-01-03,102\n");
        let p = load_panel(f.path(), &schema(&["X"])).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.names(), ["X"]);
        assert_eq!(p.values()[(2, 0)], 102.0);
    }

    #[test]
    fn sorts_rows_by_date() {
        let f = write_csv("date,X\n2020-01-03,3\n2020-01-01,1\n2020-01-02,2\n");
        let p = load_panel(f.path(), &schema(&["X"])).unwrap();
        assert_eq!(p.values().column(0).as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn duplicate_dates_rejected() {
        let f = write_csv("date,X\n2020-01-01,100\n2020-01-01,101\n2020-01-02,102\n");
        let err = load_panel(f.path(), &schema(&["X"])).unwrap_err();
        assert!(err.to_string().contains("duplicate dates"));
    }

    #[test]
    fn blank_cell_drops_row() {
        let f = write_csv("date,X,Y\n2020-01-01,1,5\n2020-01-02,,6\n2020-01-03,3,7\n2020-01-04,4,8\n");
        let p = load_panel(f.path(), &schema(&["X", "Y"])).unwrap();
        assert_eq!(p.len(), 3);
        assert!(!p.dates().contains(&d("2020-01-02")));
    }

    #[test]
    fn blank_cell_forward_filled() {
        let f = write_csv("date,X\n2020-01-01,\n2020-01-02,2\n2020-01-03,\n2020-01-04,4\n");
        let mut s = schema(&["X"]);
        s.missing = MissingPolicy::ForwardFill;
        let p = load_panel(f.path(), &s).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.values().column(0).as_slice(), &[2.0, 2.0, 4.0]);
    }

    #[test]
    fn non_positive_price_rejected() {
        let f = write_csv("date,X\n2020-01-01,1\n2020-01-02,0\n");
        assert!(matches!(
            load_panel(f.path(), &schema(&["X"])),
            Err(IngestError::NonPositivePrice { .. })
        ));
    }

    #[test]
    fn missing_file_and_empty_file() {
        assert!(matches!(
            load_panel(Path::new("/nonexistent/file.csv"), &schema(&["X"])),
            Err(IngestError::Io { .. })
        ));
        let f = write_csv("date,X\n");
        assert!(matches!(
            load_panel(f.path(), &schema(&["X"])),
            Err(IngestError::NoRows { .. })
        ));
    }

    #[test]
    fn requires_date_first_column() {
        let f = write_csv("day,X\n2020-01-01,1\n");
        assert!(matches!(
            load_panel(f.path(), &schema(&["X"])),
            Err(IngestError::MissingDateColumn { .. })
        ));
    }

    #[test]
    fn align_same_dates_concatenates() {
        let a = panel(&["2020-01-01", "2020-01-02"], "A", &[1.0, 2.0]);
        let b = panel(&["2020-01-01", "2020-01-02"], "B", &[3.0, 4.0]);
        let m = align(&[a, b]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.names(), ["A", "B"]);
        assert_eq!(m.values()[(1, 1)], 4.0);
    }

    #[test]
    fn align_intersects_dates() {
        let a = panel(&["2020-01-01", "2020-01-02", "2020-01-03"], "A", &[1.0, 2.0, 3.0]);
        let b = panel(&["2020-01-02", "2020-01-03", "2020-01-04"], "B", &[5.0, 6.0, 7.0]);
        let m = align(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.dates(), [d("2020-01-02"), d("2020-01-03")]);
        assert_eq!(m.values().column(0).as_slice(), &[2.0, 3.0]);
        assert_eq!(m.values().column(1).as_slice(), &[5.0, 6.0]);
        let swapped = align(&[b, a]).unwrap();
        assert_eq!(swapped.dates(), m.dates());
    }

    #[test]
    fn align_disjoint_is_error() {
        let a = panel(&["2020-01-01"], "A", &[1.0]);
        let b = panel(&["2020-01-02"], "B", &[1.0]);
        assert!(matches!(align(&[a, b]), Err(IngestError::EmptyIntersection)));
    }

    #[test]
    fn align_rejects_shared_names() {
        let a = panel(&["2020-01-01"], "A", &[1.0]);
        assert!(matches!(align(&[a.clone(), a]), Err(IngestError::BadName(_))));
    }

    #[test]
    fn log_return_examples() {
        let part = GroupPartition::uniform(&["X"], "g").unwrap();
        let flat = panel(&["2020-01-01", "2020-01-02", "2020-01-03"], "X", &[100.0; 3]);
        let r = log_returns(&flat, &part).unwrap();
        assert_eq!(r.values().as_slice(), &[0.0, 0.0]);

        let e = panel(
            &["2020-01-01", "2020-01-02"],
            "X",
            &[100.0, 100.0 * std::f64::consts::E],
        );
        assert!((log_returns(&e, &part).unwrap().values()[(0, 0)] - 100.0).abs() < 1e-12);

        let drop = panel(&["2020-01-01", "2020-01-02"], "X", &[100.0, 95.0]);
        let v = log_returns(&drop, &part).unwrap().values()[(0, 0)];
        assert!((v - (-5.129329438755058)).abs() < 1e-12);
        assert_eq!(log_returns(&drop, &part).unwrap().dates(), [d("2020-01-02")]);
    }

    #[test]
    fn growth_index_examples() {
        let e = std::f64::consts::E;
        let p = panel(&["2020-01-01", "2020-01-02", "2020-01-03"], "X", &[1.0, e, e * e]);
        let g = growth_index(&p);
        assert_eq!(g[(0, 0)], 0.0);
        assert!((g[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((g[(2, 0)] - 2.0).abs() < 1e-15);
        let q = panel(&["2020-01-01", "2020-01-02"], "X", &[50.0, 100.0]);
        assert!((growth_index(&q)[(1, 0)] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn partition_labels_in_first_appearance_order() {
        let p = GroupPartition::new([("a", "y"), ("b", "x"), ("c", "y")]).unwrap();
        assert_eq!(p.labels(), ["y", "x"]);
        assert!(GroupPartition::new(Vec::<(String, String)>::new()).is_err());
        assert!(GroupPartition::new([("a", "y"), ("a", "x")]).is_err());
    }

    fn prices() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1000.0, 2..40)
    }

    proptest! {
        #[test]
        fn returns_reconstruct_price_ratios(vals in prices()) {
            let dates: Vec<NaiveDate> = (0..vals.len()).map(|t| d("2020-01-01") + Days::new(t as u64)).collect();
            let p = PricePanel::new(dates, vec!["X".into()], DMatrix::from_column_slice(vals.len(), 1, &vals)).unwrap();
            let part = GroupPartition::uniform(&["X"], "g").unwrap();
            let r = log_returns(&p, &part).unwrap();
            let g = growth_index(&p);
            let mut acc = 0.0;
            for t in 1..vals.len() {
                acc += r.values()[(t - 1, 0)] / 100.0;
                let ratio = vals[t] / vals[0];
                prop_assert!((acc.exp() - ratio).abs() <= 1e-10 * ratio);
                prop_assert!((g[(t, 0)] - acc).abs() <= 1e-10 * (1.0 + acc.abs()));
            }
        }

        #[test]
        fn align_is_intersection_in_any_order(a in prop::collection::btree_set(0u64..30, 1..20), b in prop::collection::btree_set(0u64..30, 1..20)) {
            let mk = |set: &std::collections::BTreeSet<u64>, name: &str| {
                let dates: Vec<NaiveDate> = set.iter().map(|&t| d("2020-01-01") + Days::new(t)).collect();
                PricePanel::new(dates, vec![name.into()], DMatrix::from_element(set.len(), 1, 1.0)).unwrap()
            };
            let (pa, pb) = (mk(&a, "A"), mk(&b, "B"));
            let expect: Vec<NaiveDate> = a.intersection(&b).map(|&t| d("2020-01-01") + Days::new(t)).collect();
            match (align(&[pa.clone(), pb.clone()]), align(&[pb, pa])) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x.dates(), expect.as_slice());
                    prop_assert_eq!(y.dates(), expect.as_slice());
                }
                (Err(_), Err(_)) => prop_assert!(expect.is_empty()),
                _ => prop_assert!(false, "order-dependent outcome"),
            }
        }
    }
}
