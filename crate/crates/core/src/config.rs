//! Run configuration: a flat, line-oriented `key = value` file.
//!
//! ```text
//! # comment
//! input = prices_a.csv          # repeatable; relative to this file
//! input = prices_b.csv
//! input_kind = prices           # prices (default) | returns
//! missing = drop-row            # drop-row (default) | forward-fill
//! group.BTC = Cryptos           # one line per variable, in table order
//! group.SP500 = Others
//! column.SP500 = S&P 500        # CSV header when it differs from the name
//! lag = auto                    # auto (default) | fixed order >= 1
//! criterion = bic               # aic | bic (default) | hq
//! pmax = 10
//! horizons = 10, 1, 20          # first horizon drives the network
//! levels = 0.05, 0.10
//! thresholds = 5, 15
//! covariance = classical        # classical (default) | robust
//! adf_lag = auto                # auto (default) | fixed lag
//! fev_check_sims = 10000        # 0 disables the simulation cross-check
//! seed = 1
//! output_dir = out
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::diagnostics::AdfLag;
use crate::fevd::{DEFAULT_HORIZON, MIN_ORACLE_PATHS};
use crate::granger::SignificanceLevels;
use crate::ingest::{ColumnSpec, GroupPartition, MissingPolicy};
use crate::network::{NetworkError, Thresholds};
use crate::textio::format_full;
use crate::var::{CovarianceKind, Criterion};

pub const DEFAULT_PMAX: usize = 10;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_FEV_CHECK_SIMS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputKind {
    #[default]
    Prices,
    Returns,
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputKind::Prices => "prices",
            InputKind::Returns => "returns",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagPolicy {
    Fixed(usize),
    Auto { criterion: Criterion, pmax: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Input paths as written in the file.
    pub inputs_as_given: Vec<String>,
    /// Input paths resolved against the config file's directory.
    pub inputs: Vec<PathBuf>,
    pub input_kind: InputKind,
    pub missing: MissingPolicy,
    /// Variables in table order.
    pub variables: Vec<ColumnSpec>,
    pub lag: LagPolicy,
    pub horizons: Vec<usize>,
    pub levels: SignificanceLevels,
    pub thresholds: Thresholds,
    pub covariance: CovarianceKind,
    pub adf_lag: AdfLag,
    pub fev_check_sims: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn partition(&self) -> GroupPartition {
        GroupPartition::new(self.variables.iter().map(|c| (c.name.clone(), c.group.clone())))
            .expect("validated at parse time")
    }

    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|c| c.name.clone()).collect()
    }

    /// Network and headline horizon.
    pub fn primary_horizon(&self) -> usize {
        self.horizons[0]
    }

    /// Canonical text with every default spelled out. Input paths appear as
    /// written and the output directory is omitted, so the text depends
    /// only on the analysis settings.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format_full(*x)).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        for i in &self.inputs_as_given {
            out.push_str(&format!("input = {i}\n"));
        }
        out.push_str(&format!("input_kind = {}\n", self.input_kind));
        out.push_str(&format!("missing = {}\n", self.missing));
        for c in &self.variables {
            out.push_str(&format!("group.{} = {}\n", c.name, c.group));
            if c.column != c.name {
                out.push_str(&format!("column.{} = {}\n", c.name, c.column));
            }
        }
        match self.lag {
            LagPolicy::Fixed(p) => out.push_str(&format!("lag = {p}\n")),
            LagPolicy::Auto { criterion, pmax } => {
                out.push_str(&format!("lag = auto\ncriterion = {criterion}\npmax = {pmax}\n"));
            }
        }
        let horizons: Vec<String> = self.horizons.iter().map(|h| h.to_string()).collect();
        out.push_str(&format!("horizons = {}\n", horizons.join(", ")));
        out.push_str(&format!("levels = {}\n", list(self.levels.as_slice())));
        out.push_str(&format!("thresholds = {}\n", list(self.thresholds.as_slice())));
        out.push_str(&format!("covariance = {}\n", self.covariance));
        out.push_str(&format!("adf_lag = {}\n", self.adf_lag));
        out.push_str(&format!("fev_check_sims = {}\n", self.fev_check_sims));
        out.push_str(&format!("seed = {}\n", self.seed));
        out
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(|s| s.trim())
        .map(|s| s.parse::<T>().map_err(|_| format!("cannot parse {s:?}")))
        .collect()
}

/// Parses configuration text. `base` resolves relative paths.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig, Vec<ConfigError>> {
    let mut errors = Vec::new();
    let mut single: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut inputs = Vec::new();
    let mut groups: Vec<(usize, String, String)> = Vec::new();
    let mut columns: BTreeMap<String, (usize, String)> = BTreeMap::new();

    const KEYS: [&str; 14] = [
        "input_kind",
        "missing",
        "lag",
        "criterion",
        "pmax",
        "horizons",
        "levels",
        "thresholds",
        "covariance",
        "adf_lag",
        "fev_check_sims",
        "seed",
        "output_dir",
        "h",
    ];

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(ConfigError::at(
                line_no,
                format!("expected `key = value`, got {line:?}"),
            ));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            errors.push(ConfigError::at(line_no, format!("{key} has an empty value")));
            continue;
        }
        if key == "input" {
            inputs.push(value.to_string());
        } else if let Some(name) = key.strip_prefix("group.") {
            if name.is_empty() {
                errors.push(ConfigError::at(line_no, "group key needs a variable name"));
            } else if groups.iter().any(|(_, n, _)| n == name) {
                errors.push(ConfigError::at(line_no, format!("variable {name:?} declared twice")));
            } else {
                groups.push((line_no, name.to_string(), value.to_string()));
            }
        } else if let Some(name) = key.strip_prefix("column.") {
            if columns.insert(name.to_string(), (line_no, value.to_string())).is_some() {
                errors.push(ConfigError::at(line_no, format!("column for {name:?} given twice")));
            }
        } else if KEYS.contains(&key) {
            // `h` is accepted as a synonym for a single horizon
            let key = if key == "h" { "horizons" } else { key };
            if single.insert(key, (line_no, value)).is_some() {
                errors.push(ConfigError::at(line_no, format!("{key} given more than once")));
            }
        } else {
            errors.push(ConfigError::at(line_no, format!("unknown key {key:?}")));
        }
    }

    if inputs.is_empty() {
        errors.push(ConfigError::global("missing required key: input"));
    }
    if groups.is_empty() {
        errors.push(ConfigError::global("missing required key: group.<variable>"));
    }
    if !single.contains_key("output_dir") {
        errors.push(ConfigError::global("missing required key: output_dir"));
    }
    for (name, (line, _)) in &columns {
        if !groups.iter().any(|(_, n, _)| n == name) {
            errors.push(ConfigError::at(
                *line,
                format!("column.{name} refers to an undeclared variable"),
            ));
        }
    }

    // typed lookup with a default; parse failures are recorded
    macro_rules! get {
        ($key:expr, $default:expr, $parse:expr) => {{
            match single.get($key) {
                None => Some($default),
                Some(&(line, v)) => match $parse(v) {
                    Ok(x) => Some(x),
                    Err(e) => {
                        errors.push(ConfigError::at(line, format!("{}: {}", $key, e)));
                        None
                    }
                },
            }
        }};
    }

    let input_kind = get!("input_kind", InputKind::Prices, |v: &str| match v {
        "prices" => Ok(InputKind::Prices),
        "returns" => Ok(InputKind::Returns),
        _ => Err(format!("expected prices or returns, got {v:?}")),
    });
    let missing = get!("missing", MissingPolicy::DropRow, |v: &str| v.parse::<MissingPolicy>());
    let criterion = get!("criterion", Criterion::Bic, |v: &str| v
        .parse::<Criterion>()
        .map_err(|e| e.to_string()));
    let pmax = get!("pmax", DEFAULT_PMAX, |v: &str| match v.parse::<usize>() {
        Ok(p) if p >= 1 => Ok(p),
        _ => Err("pmax must be an integer >= 1".to_string()),
    });
    let fixed_lag = get!("lag", None, |v: &str| match v {
        "auto" => Ok(None),
        _ => match v.parse::<usize>() {
            Ok(p) if p >= 1 => Ok(Some(p)),
            _ => Err("lag must be `auto` or an integer >= 1".to_string()),
        },
    });
    let horizons = get!("horizons", vec![DEFAULT_HORIZON], |v: &str| {
        let hs: Vec<usize> = parse_list(v)?;
        if hs.contains(&0) {
            Err("horizons must be >= 1".to_string())
        } else {
            Ok(hs)
        }
    });
    let levels = get!("levels", SignificanceLevels::default(), |v: &str| {
        let ls: Vec<f64> = parse_list(v)?;
        SignificanceLevels::new(ls).map_err(|_| "significance levels must be in (0, 1) and increasing".to_string())
    });
    let thresholds = get!("thresholds", Thresholds::default(), |v: &str| {
        let ts: Vec<f64> = parse_list(v)?;
        Thresholds::new(ts).map_err(|e| match e {
            NetworkError::NotIncreasing => "thresholds must be increasing".to_string(),
            other => other.to_string(),
        })
    });
    let covariance = get!("covariance", CovarianceKind::Classical, |v: &str| v
        .parse::<CovarianceKind>()
        .map_err(|e| e.to_string()));
    let adf_lag = get!("adf_lag", AdfLag::Auto, |v: &str| v
        .parse::<AdfLag>()
        .map_err(|e| e.to_string()));
    let fev_check_sims = get!(
        "fev_check_sims",
        DEFAULT_FEV_CHECK_SIMS,
        |v: &str| match v.parse::<usize>() {
            Ok(0) => Ok(0),
            Ok(n) if n >= MIN_ORACLE_PATHS => Ok(n),
            _ => Err(format!("fev_check_sims must be 0 or >= {MIN_ORACLE_PATHS}")),
        }
    );
    let seed = get!("seed", DEFAULT_SEED, |v: &str| v
        .parse::<u64>()
        .map_err(|_| "seed must be a non-negative integer".to_string()));
    let output_dir = single.get("output_dir").map(|&(_, v)| base.join(v));

    if input_kind == Some(InputKind::Returns) && inputs.len() > 1 {
        errors.push(ConfigError::global("input_kind = returns takes exactly one input file"));
    }
    if let (Some(Some(_)), Some(&(line, _))) = (fixed_lag, single.get("criterion")) {
        errors.push(ConfigError::at(line, "criterion is only used with lag = auto"));
    }

    let variables: Vec<ColumnSpec> = groups
        .iter()
        .map(|(_, name, group)| {
            let column = columns.get(name).map(|(_, c)| c.as_str()).unwrap_or(name);
            ColumnSpec::new(column, name, group)
        })
        .collect();

    if !errors.is_empty() {
        errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        return Err(errors);
    }
    let lag = match fixed_lag.unwrap() {
        Some(p) => LagPolicy::Fixed(p),
        None => LagPolicy::Auto {
            criterion: criterion.unwrap(),
            pmax: pmax.unwrap(),
        },
    };
    Ok(RunConfig {
        inputs: inputs.iter().map(|i| base.join(i)).collect(),
        inputs_as_given: inputs,
        input_kind: input_kind.unwrap(),
        missing: missing.unwrap(),
        variables,
        lag,
        horizons: horizons.unwrap(),
        levels: levels.unwrap(),
        thresholds: thresholds.unwrap(),
        covariance: covariance.unwrap(),
        adf_lag: adf_lag.unwrap(),
        fev_check_sims: fev_check_sims.unwrap(),
        seed: seed.unwrap(),
        output_dir: output_dir.unwrap(),
    })
}

/// Reads and validates a configuration file, reporting every violation.
pub fn validate_config(path: &Path) -> Result<RunConfig, Vec<ConfigError>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![ConfigError::global(format!("cannot read {}: {e}", path.display()))])?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}
