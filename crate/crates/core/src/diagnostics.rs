//! Per-series descriptive statistics, the Jarque-Bera normality test and the
//! augmented Dickey-Fuller unit-root test.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dist::chi_square_sf;
use crate::ingest::ReturnPanel;
use crate::linalg::{least_squares, Singular};
use crate::textio::{csv_line, format_full, format_rounded};

/// Minimum series length accepted by [`summary_stats`].
pub const MIN_SUMMARY_LEN: usize = 20;

/// Constant-only Dickey-Fuller critical values as `(level, value)`.
pub const ADF_CRITICAL_VALUES: [(f64, f64); 3] = [(0.01, -3.44), (0.05, -2.87), (0.10, -2.60)];

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("series too short: need at least {needed} observations, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("zero-variance input")]
    ZeroVariance,
    #[error("singular unit-root regression")]
    SingularRegression,
    #[error("series {name}: {source}")]
    Series {
        name: String,
        #[source]
        source: Box<DiagnosticsError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JarqueBera {
    pub stat: f64,
    pub pvalue: f64,
}

/// Jarque-Bera statistic `n (S^2/6 + (K-3)^2/24)` from the moment
/// (n-divisor) skewness and kurtosis, with a chi-square(2) p-value.
pub fn jarque_bera(x: &[f64]) -> Result<JarqueBera, DiagnosticsError> {
    let n = x.len();
    if n < 8 {
        return Err(DiagnosticsError::TooShort { needed: 8, have: n });
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(DiagnosticsError::ZeroVariance);
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Err(DiagnosticsError::ZeroVariance);
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let stat = nf * (skew * skew / 6.0 + (kurt - 3.0).powi(2) / 24.0);
    Ok(JarqueBera {
        stat,
        pvalue: chi_square_sf(stat, 2.0),
    })
}

/// Lag policy for the augmented Dickey-Fuller regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdfLag {
    Fixed(usize),
    /// AIC over `0..=floor(12 (n/100)^{1/4})`, capped so that `n >= lag + 20`.
    #[default]
    Auto,
}

impl std::str::FromStr for AdfLag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "auto" => Ok(Self::Auto),
            other => other
                .parse::<usize>()
                .map(Self::Fixed)
                .map_err(|_| format!("ADF lag must be \"auto\" or a count, got {other:?}")),
        }
    }
}

impl std::fmt::Display for AdfLag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fixed(l) => write!(f, "{l}"),
            Self::Auto => f.write_str("auto"),
        }
    }
}

/// Rejection of the unit-root null at the tabulated levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdfDecisions {
    pub at_1pct: bool,
    pub at_5pct: bool,
    pub at_10pct: bool,
}

impl AdfDecisions {
    pub fn from_stat(stat: f64) -> Self {
        Self {
            at_1pct: stat < ADF_CRITICAL_VALUES[0].1,
            at_5pct: stat < ADF_CRITICAL_VALUES[1].1,
            at_10pct: stat < ADF_CRITICAL_VALUES[2].1,
        }
    }

    /// Decision at one of the tabulated levels (0.01, 0.05, 0.10).
    pub fn at(&self, level: f64) -> Option<bool> {
        const EPS: f64 = 1e-12;
        if (level - 0.01).abs() < EPS {
            Some(self.at_1pct)
        } else if (level - 0.05).abs() < EPS {
            Some(self.at_5pct)
        } else if (level - 0.10).abs() < EPS {
            Some(self.at_10pct)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdfResult {
    /// t-ratio on the lagged level.
    pub stat: f64,
    pub lag_used: usize,
    pub nobs: usize,
    pub reject_at: AdfDecisions,
}

/// Schwert's rule of thumb `floor(12 (n/100)^{1/4})`.
pub fn schwert_max_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Regressors `[1, x_{t-1}, dx_{t-1}, .., dx_{t-lags}]` and regressand `dx_t`
/// for every usable `t` from `first` on (indices into the difference series).
fn adf_design(x: &[f64], lags: usize, first: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let rows = dx.len() - first;
    let cols = lags + 2;
    let mut design = DMatrix::zeros(rows, cols);
    let mut y = DMatrix::zeros(rows, 1);
    for (r, t) in (first..dx.len()).enumerate() {
        y[(r, 0)] = dx[t];
        design[(r, 0)] = 1.0;
        design[(r, 1)] = x[t];
        for l in 1..=lags {
            design[(r, 1 + l)] = dx[t - l];
        }
    }
    (design, y)
}

/// Augmented Dickey-Fuller test with intercept and no trend:
/// `dx_t = a + rho x_{t-1} + sum_i g_i dx_{t-i} + e_t`.
///
/// Automatic lag selection compares AIC on the common sample implied by the
/// largest candidate lag, then refits the chosen lag on its full sample.
pub fn adf_test(x: &[f64], max_lag: AdfLag) -> Result<AdfResult, DiagnosticsError> {
    let n = x.len();
    let lag = match max_lag {
        AdfLag::Fixed(l) => {
            if n < l + 20 {
                return Err(DiagnosticsError::TooShort {
                    needed: l + 20,
                    have: n,
                });
            }
            l
        }
        AdfLag::Auto => {
            if n < 20 {
                return Err(DiagnosticsError::TooShort { needed: 20, have: n });
            }
            let lmax = schwert_max_lag(n).min(n - 20);
            select_adf_lag(x, lmax)?
        }
    };
    let (design, y) = adf_design(x, lag, lag);
    let fit = least_squares(&design, &y).map_err(|Singular| DiagnosticsError::SingularRegression)?;
    let nobs = design.nrows();
    let dof = nobs - design.ncols();
    let s2 = fit.residuals.norm_squared() / dof as f64;
    let se = (s2 * fit.moment_inv[(1, 1)]).sqrt();
    let stat = fit.coef[(1, 0)] / se;
    if !stat.is_finite() {
        return Err(DiagnosticsError::SingularRegression);
    }
    Ok(AdfResult {
        stat,
        lag_used: lag,
        nobs,
        reject_at: AdfDecisions::from_stat(stat),
    })
}

fn select_adf_lag(x: &[f64], lmax: usize) -> Result<usize, DiagnosticsError> {
    let (design, y) = adf_design(x, lmax, lmax);
    let nobs = design.nrows() as f64;
    let mut best: Option<(f64, usize)> = None;
    for l in 0..=lmax {
        let sub = design.columns(0, l + 2).into_owned();
        let fit = least_squares(&sub, &y).map_err(|Singular| DiagnosticsError::SingularRegression)?;
        let rss = fit.residuals.norm_squared();
        let aic = nobs * (rss / nobs).ln() + 2.0 * (l + 2) as f64;
        if best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, l));
        }
    }
    Ok(best.map_or(0, |(_, l)| l))
}

/// One row of the summary-statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStats {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation (n-1 divisor).
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub jb_stat: f64,
    pub mean_over_std: f64,
    pub adf_stat: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn series_stats(name: &str, x: &[f64]) -> Result<SeriesStats, DiagnosticsError> {
    series_stats_with(name, x, AdfLag::Auto)
}

pub fn series_stats_with(name: &str, x: &[f64], adf_lag: AdfLag) -> Result<SeriesStats, DiagnosticsError> {
    let wrap = |e| DiagnosticsError::Series {
        name: name.to_string(),
        source: Box::new(e),
    };
    let n = x.len();
    if n < MIN_SUMMARY_LEN {
        return Err(wrap(DiagnosticsError::TooShort {
            needed: MIN_SUMMARY_LEN,
            have: n,
        }));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let jb = jarque_bera(x).map_err(wrap)?;
    let adf = adf_test(x, adf_lag).map_err(wrap)?;
    Ok(SeriesStats {
        name: name.to_string(),
        mean,
        std,
        min: sorted[0],
        median: median(&sorted),
        max: sorted[n - 1],
        jb_stat: jb.stat,
        mean_over_std: mean / std,
        adf_stat: adf.stat,
    })
}

/// One [`SeriesStats`] per panel column, in column order.
pub fn summary_stats(panel: &ReturnPanel) -> Result<Vec<SeriesStats>, DiagnosticsError> {
    summary_stats_with(panel, AdfLag::Auto)
}

pub fn summary_stats_with(panel: &ReturnPanel, adf_lag: AdfLag) -> Result<Vec<SeriesStats>, DiagnosticsError> {
    panel
        .names()
        .iter()
        .enumerate()
        .map(|(k, name)| series_stats_with(name, &panel.column(k), adf_lag))
        .collect()
}

pub const STATS_COLUMNS: [&str; 8] = [
    "Mean",
    "Std.",
    "Min",
    "Median",
    "Max",
    "JB Stat.",
    "Mean/Std.",
    "ADF Stat.",
];

/// Summary table as CSV; `decimals = None` writes full precision.
pub fn stats_to_csv(stats: &[SeriesStats], decimals: Option<usize>) -> String {
    let fmt = |v: f64| match decimals {
        Some(d) => format_rounded(v, d),
        None => format_full(v),
    };
    let mut out = csv_line(std::iter::once("").chain(STATS_COLUMNS));
    for s in stats {
        out.push_str(&csv_line(
            std::iter::once(s.name.clone()).chain(
                [
                    s.mean,
                    s.std,
                    s.min,
                    s.median,
                    s.max,
                    s.jb_stat,
                    s.mean_over_std,
                    s.adf_stat,
                ]
                .into_iter()
                .map(fmt),
            ),
        ));
    }
    out
}
