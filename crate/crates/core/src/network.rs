//! Directed networks from Granger p-values or connectedness tables, and
//! their DOT and JSON serializations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fevd::ConnectednessTable;
use crate::textio::format_rounded;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("edge endpoint {0:?} is not a node")]
    UnknownEndpoint(String),
    #[error("self-loop on {0:?}")]
    SelfLoop(String),
    #[error("duplicate node {0:?}")]
    DuplicateNode(String),
    #[error("duplicate edge {0:?} -> {1:?}")]
    DuplicateEdge(String, String),
    #[error("edge weight must be finite")]
    NonFiniteWeight,
    #[error("thresholds must be positive")]
    NonPositiveThreshold,
    #[error("thresholds must be increasing")]
    NotIncreasing,
    #[error("at least one threshold required")]
    NoThresholds,
    #[error("unknown network kind {0:?} (expected granger or fevd)")]
    UnknownKind(String),
    #[error("invalid network JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Granger,
    Fevd,
}

impl NetworkKind {
    /// What an edge weight measures.
    pub fn weight_semantics(self) -> &'static str {
        match self {
            NetworkKind::Granger => "p-value",
            NetworkKind::Fevd => "percent share",
        }
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkKind::Granger => "granger",
            NetworkKind::Fevd => "fevd",
        })
    }
}

impl FromStr for NetworkKind {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "granger" => Ok(NetworkKind::Granger),
            "fevd" => Ok(NetworkKind::Fevd),
            _ => Err(NetworkError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub weight: f64,
    pub band: String,
}

/// Nodes sorted by name, edges sorted by `(source, target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    kind: NetworkKind,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl NetworkGraph {
    pub fn new(kind: NetworkKind, mut nodes: Vec<Node>, mut edges: Vec<Edge>) -> Result<Self, NetworkError> {
        nodes.sort_by(|a, b| a.name.cmp(&b.name));
        for w in nodes.windows(2) {
            if w[0].name == w[1].name {
                return Err(NetworkError::DuplicateNode(w[0].name.clone()));
            }
        }
        let known: BTreeSet<&str> = nodes.iter().map(|n| n.name.as_str()).collect();
        for e in &edges {
            for end in [&e.source, &e.target] {
                if !known.contains(end.as_str()) {
                    return Err(NetworkError::UnknownEndpoint(end.clone()));
                }
            }
            if e.source == e.target {
                return Err(NetworkError::SelfLoop(e.source.clone()));
            }
            if !e.weight.is_finite() {
                return Err(NetworkError::NonFiniteWeight);
            }
        }
        edges.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
        for w in edges.windows(2) {
            if w[0].source == w[1].source && w[0].target == w[1].target {
                return Err(NetworkError::DuplicateEdge(w[0].source.clone(), w[0].target.clone()));
            }
        }
        Ok(Self { kind, nodes, edges })
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge list CSV: `source,target,weight,band`, full precision.
    pub fn edges_csv(&self) -> String {
        let mut out = crate::textio::csv_line(["source", "target", "weight", "band"]);
        for e in &self.edges {
            out.push_str(&crate::textio::csv_line([
                e.source.clone(),
                e.target.clone(),
                crate::textio::format_full(e.weight),
                e.band.clone(),
            ]));
        }
        out
    }
}

/// Positive, strictly increasing magnitude cut-offs in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    pub fn new(values: Vec<f64>) -> Result<Self, NetworkError> {
        if values.is_empty() {
            return Err(NetworkError::NoThresholds);
        }
        if values.iter().any(|&t| !t.is_finite() || t <= 0.0) {
            return Err(NetworkError::NonPositiveThreshold);
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NetworkError::NotIncreasing);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    /// Label of the highest threshold met, `None` below the minimum.
    pub fn band_of(&self, value: f64) -> Option<String> {
        let idx = self.0.iter().rposition(|&t| value >= t)?;
        Some(match self.0.get(idx + 1) {
            Some(next) => format!("{}–{}", self.0[idx], next),
            None => format!("≥{}", self.0[idx]),
        })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self(vec![5.0, 15.0])
    }
}

/// Edge `j -> i` for every off-diagonal share `sgvd(i, j)` at or above the
/// smallest threshold.
pub fn threshold_network(table: &ConnectednessTable, thresholds: &Thresholds) -> NetworkGraph {
    let nodes = table
        .names
        .iter()
        .map(|n| Node {
            name: n.clone(),
            group: table.partition.group_of(n).unwrap_or("all").to_string(),
        })
        .collect();
    let k = table.names.len();
    let mut edges = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let w = table.sgvd[(i, j)];
            if let Some(band) = thresholds.band_of(w) {
                edges.push(Edge {
                    source: table.names[j].clone(),
                    target: table.names[i].clone(),
                    weight: w,
                    band,
                });
            }
        }
    }
    NetworkGraph::new(NetworkKind::Fevd, nodes, edges).expect("edges reference existing nodes")
}

const PALETTE: [&str; 8] = [
    "lightblue",
    "lightsalmon",
    "palegreen",
    "khaki",
    "plum",
    "lightgrey",
    "lightpink",
    "aquamarine",
];

/// DOT rendering attributes. The strongest band (highest threshold for
/// FEVD networks, smallest significance level for Granger networks) gets
/// `strong_attrs`, all other bands `weak_attrs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DotStyle {
    pub strong_attrs: String,
    pub weak_attrs: String,
    pub label_decimals: usize,
    pub palette: Vec<String>,
}

impl DotStyle {
    pub fn for_kind(kind: NetworkKind) -> Self {
        let palette = PALETTE.iter().map(|s| s.to_string()).collect();
        match kind {
            NetworkKind::Fevd => Self {
                strong_attrs: "style=bold, color=black".into(),
                weak_attrs: "style=solid, color=grey55".into(),
                label_decimals: 1,
                palette,
            },
            NetworkKind::Granger => Self {
                strong_attrs: "style=solid, color=black".into(),
                weak_attrs: "style=dashed, color=grey55".into(),
                label_decimals: 3,
                palette,
            },
        }
    }
}

fn band_rank(kind: NetworkKind, band: &str) -> f64 {
    let num: String = band
        .trim_start_matches('≥')
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    let v = num.parse::<f64>().unwrap_or(f64::NAN);
    match kind {
        NetworkKind::Fevd => v,
        NetworkKind::Granger => -v,
    }
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// DOT digraph, deterministic for a given graph and style.
pub fn to_dot(g: &NetworkGraph, style: &DotStyle) -> String {
    let mut groups: Vec<&str> = g.nodes.iter().map(|n| n.group.as_str()).collect();
    groups.sort_unstable();
    groups.dedup();
    let color_of = |group: &str| {
        let idx = groups.iter().position(|x| *x == group).unwrap_or(0);
        if style.palette.is_empty() {
            "white".to_string()
        } else {
            style.palette[idx % style.palette.len()].clone()
        }
    };
    let strongest = g
        .edges
        .iter()
        .map(|e| band_rank(g.kind, &e.band))
        .filter(|r| !r.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);

    let mut out = String::from("digraph G {\n");
    out.push_str(&format!("  // kind={}; weight={}\n", g.kind, g.kind.weight_semantics()));
    for n in &g.nodes {
        out.push_str(&format!(
            "  {} [group={}, style=filled, fillcolor={}];\n",
            dot_id(&n.name),
            dot_id(&n.group),
            dot_id(&color_of(&n.group))
        ));
    }
    for e in &g.edges {
        let attrs = if band_rank(g.kind, &e.band) == strongest {
            &style.strong_attrs
        } else {
            &style.weak_attrs
        };
        out.push_str(&format!(
            "  {} -> {} [label={}, band={}, {}];\n",
            dot_id(&e.source),
            dot_id(&e.target),
            dot_id(&format_rounded(e.weight, style.label_decimals)),
            dot_id(&e.band),
            attrs
        ));
    }
    out.push_str("}\n");
    out
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    id: String,
    group: String,
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    kind: NetworkKind,
    weight: String,
    nodes: Vec<JsonNode>,
    edges: Vec<Edge>,
}

/// Pretty-printed JSON with a trailing newline; weights at full precision.
pub fn to_json(g: &NetworkGraph) -> String {
    let doc = JsonGraph {
        kind: g.kind,
        weight: g.kind.weight_semantics().to_string(),
        nodes: g
            .nodes
            .iter()
            .map(|n| JsonNode {
                id: n.name.clone(),
                group: n.group.clone(),
            })
            .collect(),
        edges: g.edges.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<NetworkGraph, NetworkError> {
    let doc: JsonGraph = serde_json::from_str(text).map_err(|e| NetworkError::Json(e.to_string()))?;
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| Node {
            name: n.id,
            group: n.group,
        })
        .collect();
    NetworkGraph::new(doc.kind, nodes, doc.edges)
}
