//! Wald tests of one-step Granger noncausality in a fitted VAR and the
//! significance-banded causal network built from them.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dist::chi_square_sf;
use crate::ingest::GroupPartition;
use crate::linalg::{spd_cholesky, Singular};
use crate::network::{Edge, NetworkGraph, NetworkKind, Node};
use crate::textio::{csv_line, format_full, format_rounded};
use crate::var::VarModel;

/// Corner label of the p-value table; columns are causality sources.
pub const PVALUE_CORNER: &str = "Causality From →";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrangerError {
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("source and target are both {0:?}")]
    SameVariable(String),
    #[error("model has no coefficient covariance (population model?)")]
    NoCovariance,
    #[error("singular restricted covariance block for {from} -> {to}")]
    SingularRestriction { from: String, to: String },
    #[error("significance levels must be strictly increasing and inside (0, 1): {0:?}")]
    BadLevels(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldResult {
    pub source: String,
    pub target: String,
    pub stat: f64,
    pub df: usize,
    pub pvalue: f64,
}

/// Tests `A_{target,source,l} = 0` for `l = 1..p`.
///
/// `stat = (R b)' [R V R']^{-1} (R b)` with `V` the model's coefficient
/// covariance and `R` selecting the `p` lags of `source` in the equation of
/// `target`; the p-value is the chi-square(`p`) upper tail.
pub fn wald_noncausality(model: &VarModel, source: &str, target: &str) -> Result<WaldResult, GrangerError> {
    let j = model
        .index_of(source)
        .ok_or_else(|| GrangerError::UnknownVariable(source.to_string()))?;
    let i = model
        .index_of(target)
        .ok_or_else(|| GrangerError::UnknownVariable(target.to_string()))?;
    wald_by_index(model, j, i)
}

fn wald_by_index(model: &VarModel, j: usize, i: usize) -> Result<WaldResult, GrangerError> {
    let names = model.names();
    if i == j {
        return Err(GrangerError::SameVariable(names[i].clone()));
    }
    let cov = model.coef_cov().ok_or(GrangerError::NoCovariance)?;
    let p = model.p();
    let idx: Vec<usize> = (1..=p).map(|l| model.coef_index(i, l, j)).collect();
    let restricted = DVector::from_iterator(p, (1..=p).map(|l| model.lags()[l - 1][(i, j)]));
    let block = DMatrix::from_fn(p, p, |a, b| cov[(idx[a], idx[b])]);
    let chol = spd_cholesky(&block).map_err(|Singular| GrangerError::SingularRestriction {
        from: names[j].clone(),
        to: names[i].clone(),
    })?;
    let stat = restricted.dot(&chol.solve(&restricted)).max(0.0);
    Ok(WaldResult {
        source: names[j].clone(),
        target: names[i].clone(),
        stat,
        df: p,
        pvalue: chi_square_sf(stat, p as f64),
    })
}

/// A cell whose test could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub row: usize,
    pub col: usize,
    pub error: GrangerError,
}

/// `K x K` p-values; entry `(i, j)` tests "column `j` Granger-causes row `i`".
/// The diagonal and failed cells hold `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMatrix {
    names: Vec<String>,
    partition: GroupPartition,
    values: DMatrix<f64>,
    failures: Vec<CellFailure>,
}

impl PValueMatrix {
    /// Builds a matrix from raw values (diagonal ignored).
    pub fn from_values(names: Vec<String>, partition: GroupPartition, mut values: DMatrix<f64>) -> Self {
        for i in 0..values.nrows().min(values.ncols()) {
            values[(i, i)] = f64::NAN;
        }
        Self {
            names,
            partition,
            values,
            failures: Vec::new(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    /// p-value for "`col` causes `row`"; `None` on the diagonal or a failed cell.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[(row, col)];
        (row != col && v.is_finite()).then_some(v)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn failures(&self) -> &[CellFailure] {
        &self.failures
    }

    /// Table with causality sources as columns; `decimals = None` for full precision.
    pub fn to_csv(&self, decimals: Option<usize>) -> String {
        let mut out = csv_line(std::iter::once(PVALUE_CORNER.to_string()).chain(self.names.iter().cloned()));
        let k = self.names.len();
        for i in 0..k {
            let cells = (0..k).map(|j| {
                if i == j {
                    String::new()
                } else {
                    match (self.get(i, j), decimals) {
                        (None, _) => "NA".to_string(),
                        (Some(v), Some(d)) => format_rounded(v, d),
                        (Some(v), None) => format_full(v),
                    }
                }
            });
            out.push_str(&csv_line(std::iter::once(self.names[i].clone()).chain(cells)));
        }
        out
    }
}

/// p-values for every ordered pair of distinct variables.
pub fn pvalue_matrix(model: &VarModel) -> PValueMatrix {
    let k = model.k();
    let mut values = DMatrix::from_element(k, k, f64::NAN);
    let mut failures = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            match wald_by_index(model, j, i) {
                Ok(w) => values[(i, j)] = w.pvalue,
                Err(error) => failures.push(CellFailure { row: i, col: j, error }),
            }
        }
    }
    PValueMatrix {
        names: model.names().to_vec(),
        partition: model.partition().clone(),
        values,
        failures,
    }
}

/// Strictly increasing significance levels in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceLevels(Vec<f64>);

impl SignificanceLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self, GrangerError> {
        let ok =
            !levels.is_empty() && levels.iter().all(|&l| l > 0.0 && l < 1.0) && levels.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Self(levels))
        } else {
            Err(GrangerError::BadLevels(levels))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Smallest level at which `pvalue` rejects (`pvalue <= level`).
    pub fn band_of(&self, pvalue: f64) -> Option<f64> {
        self.0.iter().copied().find(|&l| pvalue <= l)
    }
}

impl Default for SignificanceLevels {
    fn default() -> Self {
        Self(vec![0.05, 0.10])
    }
}

/// `0.05 -> "5%"`, `0.025 -> "2.5%"`.
pub fn percent_label(level: f64) -> String {
    let pct = (level * 100.0 * 1e9).round() / 1e9;
    format!("{pct}%")
}

/// Directed edge `j -> i` for every p-value at or below the largest level,
/// annotated with the smallest level it passes.
pub fn causal_network(pm: &PValueMatrix, levels: &SignificanceLevels) -> NetworkGraph {
    let nodes = pm
        .names
        .iter()
        .map(|n| Node {
            name: n.clone(),
            group: pm.partition.group_of(n).unwrap_or("all").to_string(),
        })
        .collect();
    let k = pm.names.len();
    let mut edges = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let Some(pv) = pm.get(i, j) else { continue };
            if let Some(level) = levels.band_of(pv) {
                edges.push(Edge {
                    source: pm.names[j].clone(),
                    target: pm.names[i].clone(),
                    weight: pv,
                    band: percent_label(level),
                });
            }
        }
    }
    NetworkGraph::new(NetworkKind::Granger, nodes, edges).expect("edges reference existing nodes")
}
