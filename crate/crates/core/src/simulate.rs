//! Synthetic panels from fully specified VAR processes, and Monte Carlo
//! rejection-rate studies on top of them.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`; Gaussian draws use `rand_distr::StandardNormal`.
//! Replication `r` of a study with master seed `s` uses
//! [`derive_seed`]`(s, r)`, so results do not depend on thread count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::{adf_test, jarque_bera, AdfDecisions, AdfLag};
use crate::granger::wald_noncausality;
use crate::ingest::{GroupPartition, IngestError, ReturnPanel};
use crate::linalg::{max_asymmetry, spd_cholesky, Singular};
use crate::textio::{csv_line, format_full};
use crate::var::{fit_var, is_stable, VarModel};

pub const DEFAULT_BURN_IN: usize = 1000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unstable process (max companion modulus {0})")]
    Unstable(f64),
    #[error("shock covariance is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("invalid process specification: {0}")]
    Invalid(String),
    #[error("cannot parse process specification: {0}")]
    Parse(String),
    #[error("at least {min} replications required, got {got}")]
    TooFewReplications { min: usize, got: usize },
    #[error("unknown test descriptor {0:?}")]
    UnknownTest(String),
    #[error("level {0} is not supported by this test")]
    UnsupportedLevel(f64),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Shock distribution; all options have unit variance before scaling by
/// the Cholesky factor of `sigma_u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShockDist {
    Gaussian,
    /// Student-t with `nu > 2` degrees of freedom, scaled to unit variance.
    ScaledT {
        nu: f64,
    },
}

impl std::fmt::Display for ShockDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Gaussian => f.write_str("gaussian"),
            Self::ScaledT { nu } => write!(f, "t:{}", format_full(*nu)),
        }
    }
}

impl std::str::FromStr for ShockDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "gaussian" || s == "normal" {
            return Ok(Self::Gaussian);
        }
        if let Some(nu) = s.strip_prefix("t:") {
            let nu: f64 = nu
                .trim()
                .parse()
                .map_err(|_| format!("bad degrees of freedom in {s:?}"))?;
            if nu > 2.0 {
                return Ok(Self::ScaledT { nu });
            }
            return Err(format!("scaled-t shocks need nu > 2, got {nu}"));
        }
        Err(format!("unknown shock distribution {s:?}"))
    }
}

/// Draws `L z` with `L L' = sigma_u` and `z` i.i.d. unit-variance.
#[derive(Debug, Clone)]
pub(crate) struct ShockSampler {
    chol: DMatrix<f64>,
    dist: ShockDist,
}

impl ShockSampler {
    pub(crate) fn new(sigma_u: &DMatrix<f64>, dist: ShockDist) -> Result<Self, SimError> {
        if max_asymmetry(sigma_u) > 1e-10 * sigma_u.amax().max(1.0) {
            return Err(SimError::NotPositiveDefinite);
        }
        let chol = spd_cholesky(sigma_u).map_err(|Singular| SimError::NotPositiveDefinite)?;
        Ok(Self { chol: chol.l(), dist })
    }

    pub(crate) fn draw(&self, rng: &mut ChaCha20Rng) -> DVector<f64> {
        let k = self.chol.nrows();
        let z = match self.dist {
            ShockDist::Gaussian => DVector::from_fn(k, |_, _| StandardNormal.sample(rng)),
            ShockDist::ScaledT { nu } => {
                let t = StudentT::new(nu).expect("nu validated on construction");
                let scale = ((nu - 2.0) / nu).sqrt();
                DVector::from_fn(k, |_, _| t.sample(rng) * scale)
            }
        };
        &self.chol * z
    }
}

/// SplitMix64 finalizer applied to `master + index * golden-ratio`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A fully specified data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub intercept: DVector<f64>,
    pub lags: Vec<DMatrix<f64>>,
    pub sigma_u: DMatrix<f64>,
    pub shocks: ShockDist,
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub names: Vec<String>,
    pub groups: Vec<String>,
}

impl DgpSpec {
    /// Variables named `y1..yK`, all in group `all`, default burn-in.
    pub fn new(
        intercept: DVector<f64>,
        lags: Vec<DMatrix<f64>>,
        sigma_u: DMatrix<f64>,
        shocks: ShockDist,
        n: usize,
        seed: u64,
    ) -> Result<Self, SimError> {
        let k = intercept.len();
        let spec = Self {
            intercept,
            lags,
            sigma_u,
            shocks,
            n,
            burn_in: DEFAULT_BURN_IN,
            seed,
            names: (1..=k).map(|i| format!("y{i}")).collect(),
            groups: vec!["all".to_string(); k],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.intercept.len()
    }

    pub fn p(&self) -> usize {
        self.lags.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// The process as a population [`VarModel`].
    pub fn model(&self) -> Result<VarModel, SimError> {
        VarModel::population(
            self.names.clone(),
            self.intercept.clone(),
            self.lags.clone(),
            self.sigma_u.clone(),
        )
        .map_err(|e| SimError::Invalid(e.to_string()))
    }

    pub fn partition(&self) -> Result<GroupPartition, SimError> {
        Ok(GroupPartition::new(
            self.names.iter().cloned().zip(self.groups.iter().cloned()),
        )?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let k = self.k();
        if k == 0 || self.lags.is_empty() {
            return Err(SimError::Invalid("need at least one variable and one lag".into()));
        }
        if self.n == 0 {
            return Err(SimError::Invalid("sample length must be positive".into()));
        }
        if self.names.len() != k || self.groups.len() != k {
            return Err(SimError::Invalid("names/groups length differs from K".into()));
        }
        if let ShockDist::ScaledT { nu } = self.shocks {
            if nu.is_nan() || nu <= 2.0 {
                return Err(SimError::Invalid(format!("scaled-t shocks need nu > 2, got {nu}")));
            }
        }
        ShockSampler::new(&self.sigma_u, self.shocks)?;
        let stability = is_stable(&self.model()?);
        if !stability.stable {
            return Err(SimError::Unstable(stability.max_modulus));
        }
        self.partition()?;
        Ok(())
    }

    /// Parse the `key = value` text format; matrices are written row by row
    /// with `;` between rows and `,` between entries.
    ///
    /// ```text
    /// k = 2
    /// p = 1
    /// intercept = 0, 0
    /// lag1 = 0.5, 0; 0.4, 0.5
    /// sigma_u = 1, 0; 0, 1
    /// shocks = gaussian        # or t:5
    /// n = 2000
    /// burn_in = 1000
    /// seed = 7
    /// names = y1, y2
    /// groups = a, b
    /// ```
    pub fn from_text(text: &str) -> Result<Self, SimError> {
        let perr = |m: String| SimError::Parse(m);
        let mut kv = std::collections::HashMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("line {}: expected key = value", no + 1)))?;
            if kv.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
                return Err(perr(format!("duplicate key {:?}", key.trim())));
            }
        }
        let get = |key: &str| kv.get(key).ok_or_else(|| perr(format!("missing key {key:?}")));
        let count = |key: &str| -> Result<usize, SimError> {
            get(key)?.parse().map_err(|_| perr(format!("{key} must be a count")))
        };
        let k = count("k")?;
        let p = count("p")?;
        let intercept = match kv.get("intercept") {
            Some(v) => {
                let m = parse_matrix(v, 1, k).map_err(perr)?;
                DVector::from_iterator(k, m.iter().copied())
            }
            None => DVector::zeros(k),
        };
        let lags = (1..=p)
            .map(|l| parse_matrix(get(&format!("lag{l}"))?, k, k).map_err(perr))
            .collect::<Result<Vec<_>, _>>()?;
        let sigma_u = parse_matrix(get("sigma_u")?, k, k).map_err(perr)?;
        let shocks = match kv.get("shocks") {
            Some(s) => s.parse().map_err(perr)?,
            None => ShockDist::Gaussian,
        };
        let n = count("n")?;
        let burn_in = if kv.contains_key("burn_in") {
            count("burn_in")?
        } else {
            DEFAULT_BURN_IN
        };
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| perr("seed must be an unsigned integer".into()))?;
        let list = |key: &str, default: Vec<String>| -> Result<Vec<String>, SimError> {
            match kv.get(key) {
                Some(v) => {
                    let items: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                    if items.len() != k {
                        return Err(perr(format!("{key} needs {k} entries")));
                    }
                    Ok(items)
                }
                None => Ok(default),
            }
        };
        let names = list("names", (1..=k).map(|i| format!("y{i}")).collect())?;
        let groups = list("groups", vec!["all".to_string(); k])?;
        let spec = Self {
            intercept,
            lags,
            sigma_u,
            shocks,
            n,
            burn_in,
            seed,
            names,
            groups,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_matrix(text: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, String> {
    let parsed: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("bad number {:?}", v.trim()))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if parsed.len() != rows || parsed.iter().any(|r| r.len() != cols) {
        return Err(format!("expected a {rows}x{cols} matrix in {text:?}"));
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| parsed[r][c]))
}

/// Simulates `n` observations after discarding `burn_in` draws started
/// from a zero history.
pub fn simulate_var(spec: &DgpSpec) -> Result<ReturnPanel, SimError> {
    spec.validate()?;
    let (k, p) = (spec.k(), spec.p());
    let sampler = ShockSampler::new(&spec.sigma_u, spec.shocks)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    // ring buffer of the last p observations, most recent at `head`
    let mut history = vec![DVector::<f64>::zeros(k); p];
    let mut head = 0;
    let mut out = DMatrix::zeros(spec.n, k);
    for t in 0..(spec.burn_in + spec.n) {
        let mut y = spec.intercept.clone() + sampler.draw(&mut rng);
        for (l, a) in spec.lags.iter().enumerate() {
            let prev = &history[(head + p - l) % p];
            y.gemv(1.0, a, prev, 1.0);
        }
        head = (head + 1) % p;
        if t >= spec.burn_in {
            out.row_mut(t - spec.burn_in).copy_from(&y.transpose());
        }
        history[head] = y;
    }
    Ok(ReturnPanel::with_synthetic_dates(
        spec.names.clone(),
        out,
        spec.partition()?,
    )?)
}

/// Hypothesis test evaluated on every Monte Carlo replication.
#[derive(Debug, Clone, PartialEq)]
pub enum McTest {
    /// Wald noncausality test of `source -> target` in a VAR(p) with the
    /// process's own lag order.
    Granger {
        source: String,
        target: String,
    },
    JarqueBera {
        variable: String,
    },
    /// Rejects when the ADF statistic is below the tabulated critical value
    /// for the level (only 0.01, 0.05, 0.10). With `levels` the test runs on
    /// the cumulative sum of the series, which has a unit root.
    Adf {
        variable: String,
        lag: AdfLag,
        levels: bool,
    },
}

impl std::str::FromStr for McTest {
    type Err = SimError;

    /// `granger:SRC->TGT`, `jb:NAME`, `adf:NAME[:LAG]` or `adf-levels:NAME[:LAG]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::UnknownTest(s.to_string());
        let (kind, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        match kind {
            "granger" => {
                let (src, tgt) = rest.split_once("->").ok_or_else(bad)?;
                Ok(Self::Granger {
                    source: src.trim().to_string(),
                    target: tgt.trim().to_string(),
                })
            }
            "jb" => Ok(Self::JarqueBera {
                variable: rest.trim().to_string(),
            }),
            "adf" | "adf-levels" => {
                let (var, lag) = match rest.split_once(':') {
                    Some((v, l)) => (v, l.parse::<AdfLag>().map_err(|_| bad())?),
                    None => (rest, AdfLag::Auto),
                };
                Ok(Self::Adf {
                    variable: var.trim().to_string(),
                    lag,
                    levels: kind == "adf-levels",
                })
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for McTest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Granger { source, target } => write!(f, "granger:{source}->{target}"),
            Self::JarqueBera { variable } => write!(f, "jb:{variable}"),
            Self::Adf { variable, lag, levels } => {
                let kind = if *levels { "adf-levels" } else { "adf" };
                write!(f, "{kind}:{variable}:{lag}")
            }
        }
    }
}

impl McTest {
    fn check(&self, spec: &DgpSpec, level: f64) -> Result<(), SimError> {
        let known = |v: &String| {
            if spec.names.contains(v) {
                Ok(())
            } else {
                Err(SimError::UnknownTest(format!("{self} (no variable {v:?})")))
            }
        };
        match self {
            Self::Granger { source, target } => {
                known(source)?;
                known(target)
            }
            Self::JarqueBera { variable } => known(variable),
            Self::Adf { variable, .. } => {
                known(variable)?;
                AdfDecisions::from_stat(0.0)
                    .at(level)
                    .map(|_| ())
                    .ok_or(SimError::UnsupportedLevel(level))
            }
        }
    }

    fn rejects(&self, panel: &ReturnPanel, p: usize, level: f64) -> Result<bool, String> {
        let column = |name: &str| {
            let k = panel.names().iter().position(|n| n == name).expect("checked");
            panel.column(k)
        };
        match self {
            Self::Granger { source, target } => {
                let model = fit_var(panel, p).map_err(|e| e.to_string())?;
                let w = wald_noncausality(&model, source, target).map_err(|e| e.to_string())?;
                Ok(w.pvalue <= level)
            }
            Self::JarqueBera { variable } => {
                let jb = jarque_bera(&column(variable)).map_err(|e| e.to_string())?;
                Ok(jb.pvalue <= level)
            }
            Self::Adf { variable, lag, levels } => {
                let mut x = column(variable);
                if *levels {
                    let mut acc = 0.0;
                    for v in x.iter_mut() {
                        acc += *v;
                        *v = acc;
                    }
                }
                let adf = adf_test(&x, *lag).map_err(|e| e.to_string())?;
                Ok(adf.reject_at.at(level).expect("checked"))
            }
        }
    }
}

/// Outcome of a rejection-rate study. Failed replications are excluded from
/// `rate` and counted in `failures`.
#[derive(Debug, Clone, PartialEq)]
pub struct McOutcome {
    pub test: String,
    pub level: f64,
    pub reps: usize,
    pub rejections: usize,
    pub failures: usize,
    pub rate: f64,
}

impl McOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = csv_line(["test", "level", "reps", "valid", "failures", "rejections", "rate"]);
        out.push_str(&csv_line([
            self.test.clone(),
            format_full(self.level),
            self.reps.to_string(),
            (self.reps - self.failures).to_string(),
            self.failures.to_string(),
            self.rejections.to_string(),
            format_full(self.rate),
        ]));
        out
    }
}

pub const MIN_REPLICATIONS: usize = 100;

/// Fraction of `reps` simulated panels on which `test` rejects at `level`.
pub fn mc_rejection_rate(spec: &DgpSpec, test: &McTest, level: f64, reps: usize) -> Result<McOutcome, SimError> {
    if reps < MIN_REPLICATIONS {
        return Err(SimError::TooFewReplications {
            min: MIN_REPLICATIONS,
            got: reps,
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(SimError::UnsupportedLevel(level));
    }
    spec.validate()?;
    test.check(spec, level)?;
    let outcomes: Vec<Result<bool, String>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let panel = simulate_var(&spec.with_seed(derive_seed(spec.seed, r))).map_err(|e| e.to_string())?;
            test.rejects(&panel, spec.p(), level)
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    let rejections = outcomes.iter().filter(|o| matches!(o, Ok(true))).count();
    let valid = reps - failures;
    Ok(McOutcome {
        test: test.to_string(),
        level,
        reps,
        rejections,
        failures,
        rate: if valid == 0 {
            f64::NAN
        } else {
            rejections as f64 / valid as f64
        },
    })
}
