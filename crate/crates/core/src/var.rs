//! Least-squares estimation of `y_t = c + A_1 y_{t-1} + ... + A_p y_{t-p} + u_t`,
//! lag selection, moving-average coefficients and forecast-error variances.
//!
//! # Coefficient stacking
//!
//! Every equation shares the regressor vector
//! `z_t = (1, y_{t-1}', y_{t-2}', ..., y_{t-p}')'` of length `m = Kp + 1`.
//! The stacked coefficient vector is built from per-equation blocks: entry
//! `i * m + r` is the coefficient of regressor `r` in the equation of
//! variable `i`, where `r = 0` is the intercept and `r = 1 + (l - 1) K + j`
//! is lag `l` of variable `j`. Under this order the classical covariance is
//! `Sigma_u (x) (Z'Z)^{-1}`; see [`VarModel::coef_index`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ingest::{GroupPartition, IngestError, ReturnPanel};
use crate::linalg::{least_squares, ln_det_spd, max_asymmetry, symmetrize, Singular};
use crate::textio::format_full;

#[derive(Debug, Error)]
pub enum VarError {
    #[error("lag order must be >= 1")]
    ZeroLag,
    #[error("insufficient observations: {usable} usable rows for {params} parameters per equation")]
    InsufficientObservations { usable: usize, params: usize },
    #[error("singular regressor moment matrix")]
    SingularMoments,
    #[error("residual covariance is not positive definite")]
    SingularCovariance,
    #[error("horizon must be >= 1")]
    ZeroHorizon,
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("cannot parse model file: {0}")]
    Parse(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Information criterion used by [`select_lag`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    Aic,
    #[default]
    Bic,
    Hq,
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aic" => Ok(Self::Aic),
            "bic" | "sc" | "sic" => Ok(Self::Bic),
            "hq" | "hqic" => Ok(Self::Hq),
            other => Err(format!("unknown information criterion {other:?}")),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Aic => "aic",
            Self::Bic => "bic",
            Self::Hq => "hq",
        })
    }
}

/// Estimator behind [`VarModel::coef_cov`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceKind {
    /// `Sigma_u (x) (Z'Z)^{-1}`.
    #[default]
    Classical,
    /// White (HC0) sandwich, heteroskedasticity-consistent.
    Robust,
}

impl std::str::FromStr for CovarianceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "classical" => Ok(Self::Classical),
            "robust" | "hc0" => Ok(Self::Robust),
            other => Err(format!("unknown covariance estimator {other:?}")),
        }
    }
}

impl std::fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Classical => "classical",
            Self::Robust => "robust",
        })
    }
}

/// A VAR(p), either estimated by [`fit_var`] or specified directly with
/// [`VarModel::population`].
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    names: Vec<String>,
    partition: GroupPartition,
    intercept: DVector<f64>,
    lags: Vec<DMatrix<f64>>,
    sigma_u: DMatrix<f64>,
    residuals: DMatrix<f64>,
    coef_cov: Option<DMatrix<f64>>,
    covariance: CovarianceKind,
    nobs: usize,
}

impl VarModel {
    /// A model with known coefficients. It carries no residuals and no
    /// coefficient covariance, so it cannot be used for Wald tests.
    pub fn population(
        names: Vec<String>,
        intercept: DVector<f64>,
        lags: Vec<DMatrix<f64>>,
        sigma_u: DMatrix<f64>,
    ) -> Result<Self, VarError> {
        let partition = GroupPartition::uniform(&names, "all")?;
        let k = names.len();
        let model = Self {
            names,
            partition,
            intercept,
            lags,
            sigma_u,
            residuals: DMatrix::zeros(0, k),
            coef_cov: None,
            covariance: CovarianceKind::Classical,
            nobs: 0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Population model with variables named `y1..yK`.
    pub fn population_unnamed(
        intercept: DVector<f64>,
        lags: Vec<DMatrix<f64>>,
        sigma_u: DMatrix<f64>,
    ) -> Result<Self, VarError> {
        let names = (1..=intercept.len()).map(|i| format!("y{i}")).collect();
        Self::population(names, intercept, lags, sigma_u)
    }

    pub fn with_partition(mut self, partition: &GroupPartition) -> Result<Self, VarError> {
        self.partition = partition.restricted_to(&self.names)?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), VarError> {
        let k = self.names.len();
        if k == 0 {
            return Err(VarError::Invalid("no variables".into()));
        }
        if self.lags.is_empty() {
            return Err(VarError::ZeroLag);
        }
        if self.intercept.len() != k {
            return Err(VarError::Invalid(format!(
                "intercept has length {}, expected {k}",
                self.intercept.len()
            )));
        }
        for (l, a) in self.lags.iter().enumerate() {
            if a.shape() != (k, k) {
                return Err(VarError::Invalid(format!(
                    "lag {} matrix is {:?}, expected {k}x{k}",
                    l + 1,
                    a.shape()
                )));
            }
        }
        if self.sigma_u.shape() != (k, k) {
            return Err(VarError::Invalid("sigma_u has wrong shape".into()));
        }
        let scale = self.sigma_u.amax().max(1.0);
        if max_asymmetry(&self.sigma_u) > 1e-10 * scale {
            return Err(VarError::Invalid("sigma_u is not symmetric".into()));
        }
        if self.residuals.ncols() != k {
            return Err(VarError::Invalid("residuals have wrong width".into()));
        }
        if let Some(v) = &self.coef_cov {
            let n = k * self.regressor_count();
            if v.shape() != (n, n) {
                return Err(VarError::Invalid("coefficient covariance has wrong shape".into()));
            }
        }
        let all_finite = self.intercept.iter().all(|v| v.is_finite())
            && self.lags.iter().all(|a| a.iter().all(|v| v.is_finite()))
            && self.sigma_u.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(VarError::Invalid("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn p(&self) -> usize {
        self.lags.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    /// `A_1..A_p`.
    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.lags
    }

    pub fn sigma_u(&self) -> &DMatrix<f64> {
        &self.sigma_u
    }

    /// `(T - p) x K` residuals; empty for population models.
    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }

    /// Covariance of the stacked coefficients (see the module docs for the order).
    pub fn coef_cov(&self) -> Option<&DMatrix<f64>> {
        self.coef_cov.as_ref()
    }

    pub fn covariance_kind(&self) -> CovarianceKind {
        self.covariance
    }

    /// Effective sample size used in estimation.
    pub fn nobs(&self) -> usize {
        self.nobs
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Regressors per equation, `Kp + 1`.
    pub fn regressor_count(&self) -> usize {
        self.k() * self.p() + 1
    }

    /// Position in the stacked coefficient vector of lag `lag` (1-based) of
    /// variable `variable` in the equation of `equation`.
    pub fn coef_index(&self, equation: usize, lag: usize, variable: usize) -> usize {
        debug_assert!(lag >= 1 && lag <= self.p());
        equation * self.regressor_count() + 1 + (lag - 1) * self.k() + variable
    }

    /// Stacked coefficient vector in [`Self::coef_index`] order.
    pub fn stacked_coefficients(&self) -> DVector<f64> {
        let (k, m) = (self.k(), self.regressor_count());
        let mut beta = DVector::zeros(k * m);
        for i in 0..k {
            beta[i * m] = self.intercept[i];
            for (l, a) in self.lags.iter().enumerate() {
                for j in 0..k {
                    beta[self.coef_index(i, l + 1, j)] = a[(i, j)];
                }
            }
        }
        beta
    }

    /// `Kp x Kp` companion matrix of the VAR(1) embedding.
    pub fn companion(&self) -> DMatrix<f64> {
        let (k, p) = (self.k(), self.p());
        let mut c = DMatrix::zeros(k * p, k * p);
        for (l, a) in self.lags.iter().enumerate() {
            c.view_mut((0, l * k), (k, k)).copy_from(a);
        }
        for b in 1..p {
            for d in 0..k {
                c[(b * k + d, (b - 1) * k + d)] = 1.0;
            }
        }
        c
    }

    /// Serialize to the plain-text matrix format read by [`Self::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("spillnet-var-model 1\n");
        out.push_str(&format!("names\t{}\n", self.names.join("\t")));
        let groups: Vec<&str> = self
            .names
            .iter()
            .map(|n| self.partition.group_of(n).unwrap_or("all"))
            .collect();
        out.push_str(&format!("groups\t{}\n", groups.join("\t")));
        out.push_str(&format!("p\t{}\n", self.p()));
        out.push_str(&format!("nobs\t{}\n", self.nobs));
        out.push_str(&format!("covariance\t{}\n", self.covariance));
        write_matrix(
            &mut out,
            "intercept",
            &DMatrix::from_row_slice(1, self.k(), self.intercept.as_slice()),
        );
        for (l, a) in self.lags.iter().enumerate() {
            write_matrix(&mut out, &format!("lag{}", l + 1), a);
        }
        write_matrix(&mut out, "sigma_u", &self.sigma_u);
        write_matrix(&mut out, "residuals", &self.residuals);
        if let Some(v) = &self.coef_cov {
            write_matrix(&mut out, "coef_cov", v);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VarError> {
        let perr = |m: &str| VarError::Parse(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("spillnet-var-model 1") {
            return Err(perr("missing format header"));
        }
        let mut field = |key: &str| -> Result<Vec<String>, VarError> {
            let line = lines.next().ok_or_else(|| perr(&format!("missing {key}")))?;
            let mut parts = line.split('\t');
            if parts.next() != Some(key) {
                return Err(perr(&format!("expected {key} line, found {line:?}")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let names = field("names")?;
        let groups = field("groups")?;
        let single = |v: Vec<String>, key: &str| -> Result<String, VarError> {
            v.into_iter().next().ok_or_else(|| perr(&format!("empty {key}")))
        };
        let p: usize = single(field("p")?, "p")?.parse().map_err(|_| perr("bad p"))?;
        let nobs: usize = single(field("nobs")?, "nobs")?.parse().map_err(|_| perr("bad nobs"))?;
        let covariance: CovarianceKind = single(field("covariance")?, "covariance")?
            .parse()
            .map_err(|e: String| perr(&e))?;
        let rest: Vec<&str> = lines.collect();
        let mut blocks = parse_matrices(&rest)?;
        let mut take = |label: &str| {
            blocks
                .remove(label)
                .ok_or_else(|| perr(&format!("missing matrix {label}")))
        };
        let intercept = take("intercept")?;
        let lags = (1..=p)
            .map(|l| take(&format!("lag{l}")))
            .collect::<Result<Vec<_>, _>>()?;
        let sigma_u = take("sigma_u")?;
        let residuals = take("residuals")?;
        let coef_cov = take("coef_cov").ok();
        if names.len() != groups.len() {
            return Err(perr("names and groups differ in length"));
        }
        let partition = GroupPartition::new(names.iter().cloned().zip(groups))?;
        let model = Self {
            intercept: DVector::from_iterator(intercept.len(), intercept.iter().copied()),
            names,
            partition,
            lags,
            sigma_u,
            residuals,
            coef_cov,
            covariance,
            nobs,
        };
        model.validate()?;
        Ok(model)
    }
}

fn write_matrix(out: &mut String, label: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("matrix\t{label}\t{}\t{}\n", m.nrows(), m.ncols()));
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_full(m[(r, c)])).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
}

fn parse_matrices(lines: &[&str]) -> Result<std::collections::HashMap<String, DMatrix<f64>>, VarError> {
    let perr = |m: String| VarError::Parse(m);
    let mut out = std::collections::HashMap::new();
    let mut i = 0;
    while i < lines.len() {
        let head: Vec<&str> = lines[i].split('\t').collect();
        if head.len() != 4 || head[0] != "matrix" {
            return Err(perr(format!("expected matrix header, found {:?}", lines[i])));
        }
        let rows: usize = head[2]
            .parse()
            .map_err(|_| perr(format!("bad row count in {:?}", lines[i])))?;
        let cols: usize = head[3]
            .parse()
            .map_err(|_| perr(format!("bad column count in {:?}", lines[i])))?;
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let line = lines
                .get(i + 1 + r)
                .ok_or_else(|| perr(format!("matrix {} truncated", head[1])))?;
            let vals: Vec<f64> = line
                .split('\t')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| perr(format!("bad number in matrix {}", head[1])))?;
            if vals.len() != cols {
                return Err(perr(format!("matrix {} row {r} has {} entries", head[1], vals.len())));
            }
            for (c, v) in vals.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        out.insert(head[1].to_string(), m);
        i += 1 + rows;
    }
    Ok(out)
}

struct SampleFit {
    coef: DMatrix<f64>,
    moment_inv: DMatrix<f64>,
    residuals: DMatrix<f64>,
    design: DMatrix<f64>,
}

/// Regress rows `first..T` of `y` on an intercept and `p` lags.
fn fit_sample(y: &DMatrix<f64>, p: usize, first: usize) -> Result<SampleFit, VarError> {
    let (t_len, k) = y.shape();
    let m = k * p + 1;
    let n = t_len.saturating_sub(first);
    if n <= m {
        return Err(VarError::InsufficientObservations { usable: n, params: m });
    }
    let mut design = DMatrix::zeros(n, m);
    for r in 0..n {
        let t = first + r;
        design[(r, 0)] = 1.0;
        for l in 1..=p {
            for j in 0..k {
                design[(r, 1 + (l - 1) * k + j)] = y[(t - l, j)];
            }
        }
    }
    let regressand = y.rows(first, n).into_owned();
    let fit = least_squares(&design, &regressand).map_err(|Singular| VarError::SingularMoments)?;
    Ok(SampleFit {
        coef: fit.coef,
        moment_inv: fit.moment_inv,
        residuals: fit.residuals,
        design,
    })
}

/// Equation-by-equation least squares with common regressors
/// `(1, y_{t-1}, ..., y_{t-p})` and the classical coefficient covariance.
pub fn fit_var(panel: &ReturnPanel, p: usize) -> Result<VarModel, VarError> {
    fit_var_with(panel, p, CovarianceKind::Classical)
}

pub fn fit_var_with(panel: &ReturnPanel, p: usize, covariance: CovarianceKind) -> Result<VarModel, VarError> {
    if p == 0 {
        return Err(VarError::ZeroLag);
    }
    let y = panel.values();
    let k = y.ncols();
    let m = k * p + 1;
    if y.nrows() <= p + m {
        return Err(VarError::InsufficientObservations {
            usable: y.nrows().saturating_sub(p),
            params: m,
        });
    }
    let fit = fit_sample(y, p, p)?;
    let n = fit.residuals.nrows();
    let mut sigma_u = fit.residuals.tr_mul(&fit.residuals) / (n - m) as f64;
    symmetrize(&mut sigma_u);

    let intercept = DVector::from_iterator(k, (0..k).map(|i| fit.coef[(0, i)]));
    let lags = (0..p)
        .map(|l| DMatrix::from_fn(k, k, |i, j| fit.coef[(1 + l * k + j, i)]))
        .collect();
    let coef_cov = match covariance {
        CovarianceKind::Classical => sigma_u.kronecker(&fit.moment_inv),
        CovarianceKind::Robust => hc0_covariance(&fit.design, &fit.residuals, &fit.moment_inv),
    };
    let model = VarModel {
        names: panel.names().to_vec(),
        partition: panel.partition().clone(),
        intercept,
        lags,
        sigma_u,
        residuals: fit.residuals,
        coef_cov: Some(coef_cov),
        covariance,
        nobs: n,
    };
    model.validate()?;
    Ok(model)
}

/// Block `(i, i')` is `W (sum_t u_ti u_ti' z_t z_t') W` with `W = (Z'Z)^{-1}`.
fn hc0_covariance(design: &DMatrix<f64>, residuals: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = design.shape();
    let k = residuals.ncols();
    let mut cov = DMatrix::zeros(k * m, k * m);
    for i in 0..k {
        for i2 in i..k {
            let mut meat = DMatrix::zeros(m, m);
            for t in 0..n {
                let weight = residuals[(t, i)] * residuals[(t, i2)];
                let z = design.row(t);
                meat.ger(weight, &z.transpose(), &z.transpose(), 1.0);
            }
            let block = w * meat * w;
            cov.view_mut((i * m, i2 * m), (m, m)).copy_from(&block);
            if i2 != i {
                cov.view_mut((i2 * m, i * m), (m, m)).copy_from(&block.transpose());
            }
        }
    }
    cov
}

/// Information criteria for one candidate lag order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagCriteria {
    pub p: usize,
    pub aic: f64,
    pub bic: f64,
    pub hq: f64,
}

impl LagCriteria {
    pub fn get(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
            Criterion::Hq => self.hq,
        }
    }
}

/// AIC/BIC/HQ for `p = 1..=p_max`, all on the sample left after dropping the
/// first `p_max` observations, using the ML residual covariance.
pub fn lag_criteria(panel: &ReturnPanel, p_max: usize) -> Result<Vec<LagCriteria>, VarError> {
    if p_max == 0 {
        return Err(VarError::ZeroLag);
    }
    let y = panel.values();
    let k = y.ncols();
    (1..=p_max)
        .map(|p| {
            let fit = fit_sample(y, p, p_max)?;
            let n = fit.residuals.nrows() as f64;
            let sigma_ml = fit.residuals.tr_mul(&fit.residuals) / n;
            let ln_det = ln_det_spd(&sigma_ml).map_err(|Singular| VarError::SingularCovariance)?;
            let params = (k * (k * p + 1)) as f64;
            Ok(LagCriteria {
                p,
                aic: ln_det + 2.0 * params / n,
                bic: ln_det + params * n.ln() / n,
                hq: ln_det + 2.0 * params * n.ln().ln() / n,
            })
        })
        .collect()
}

/// Lag order minimizing `criterion` over `1..=p_max` (ties go to the smaller order).
pub fn select_lag(panel: &ReturnPanel, p_max: usize, criterion: Criterion) -> Result<usize, VarError> {
    let table = lag_criteria(panel, p_max)?;
    let mut best = table[0];
    for row in &table[1..] {
        if row.get(criterion) < best.get(criterion) {
            best = *row;
        }
    }
    Ok(best.p)
}

/// Moving-average coefficients `Theta_0 = I`, `Theta_l = sum_{m=1}^{min(l,p)} Theta_{l-m} A_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaCoefficients {
    pub theta: Vec<DMatrix<f64>>,
}

pub fn ma_coefficients(model: &VarModel, h: usize) -> Result<MaCoefficients, VarError> {
    if h == 0 {
        return Err(VarError::ZeroHorizon);
    }
    let k = model.k();
    let mut theta: Vec<DMatrix<f64>> = Vec::with_capacity(h);
    theta.push(DMatrix::identity(k, k));
    for l in 1..h {
        let mut next = DMatrix::zeros(k, k);
        for m in 1..=l.min(model.p()) {
            next += &theta[l - m] * &model.lags[m - 1];
        }
        theta.push(next);
    }
    Ok(MaCoefficients { theta })
}

/// `Var(h) = sum_{l<h} Theta_l Sigma_u Theta_l'`.
pub fn forecast_error_variance(model: &VarModel, h: usize) -> Result<DMatrix<f64>, VarError> {
    let ma = ma_coefficients(model, h)?;
    let k = model.k();
    let mut var = DMatrix::zeros(k, k);
    for t in &ma.theta {
        var += t * &model.sigma_u * t.transpose();
    }
    symmetrize(&mut var);
    Ok(var)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub stable: bool,
    pub max_modulus: f64,
}

/// Stable iff every companion eigenvalue lies strictly inside the unit circle.
pub fn is_stable(model: &VarModel) -> Stability {
    let eig = model.companion().complex_eigenvalues();
    let max_modulus = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Stability {
        stable: max_modulus < 1.0,
        max_modulus,
    }
}
