//! End-to-end run: ingest, diagnostics, fit, Granger network, connectedness
//! tables and network export, plus a manifest of inputs and outputs.
//!
//! Every artifact is rendered in memory first and written only once all
//! stages have succeeded, so a failing run leaves no partial outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::config::{InputKind, LagPolicy, RunConfig};
use crate::diagnostics::{stats_to_csv, summary_stats_with, AdfLag};
use crate::fevd::{connectedness_table, empirical_fev_oracle, gvd, sgvd, ConnectednessTable};
use crate::granger::{causal_network, pvalue_matrix, SignificanceLevels};
use crate::ingest::{align, csv_header, load_panel, load_returns, log_returns, PanelSchema, ReturnPanel};
use crate::network::{threshold_network, to_dot, to_json, DotStyle, NetworkKind, Thresholds};
use crate::textio::{csv_line, format_full};
use crate::var::{fit_var_with, forecast_error_variance, is_stable, lag_criteria, LagCriteria, VarModel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Pipeline stage, tagging failures with a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Align,
    Diagnostics,
    Fit,
    Granger,
    Fevd,
    Export,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 10,
            Stage::Ingest | Stage::Align | Stage::Diagnostics => 20,
            Stage::Fit => 30,
            Stage::Granger => 40,
            Stage::Fevd => 50,
            Stage::Export => 60,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Align => "align",
            Stage::Diagnostics => "diagnostics",
            Stage::Fit => "fit",
            Stage::Granger => "granger",
            Stage::Fevd => "fevd",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

/// A named output file held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    fn new(name: impl Into<String>, contents: String) -> Self {
        Self {
            name: name.into(),
            contents,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub written: Vec<PathBuf>,
    pub lag_order: usize,
    pub nobs: usize,
    pub notes: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads the configured inputs into a return panel in configuration order.
pub fn load_inputs(config: &RunConfig) -> Result<ReturnPanel, PipelineError> {
    let ingest = |e: &dyn fmt::Display| PipelineError::new(Stage::Ingest, e);
    let partition = config.partition();
    if config.input_kind == InputKind::Returns {
        let schema = PanelSchema {
            columns: config.variables.clone(),
            missing: config.missing,
        };
        return load_returns(&config.inputs[0], &schema).map_err(|e| ingest(&e));
    }

    let mut schemas: Vec<PanelSchema> = Vec::with_capacity(config.inputs.len());
    for path in &config.inputs {
        let header = csv_header(path).map_err(|e| ingest(&e))?;
        let columns = config
            .variables
            .iter()
            .filter(|c| header.contains(&c.column))
            .cloned()
            .collect::<Vec<_>>();
        if columns.is_empty() {
            return Err(ingest(&format!(
                "{} supplies none of the configured columns",
                path.display()
            )));
        }
        schemas.push(PanelSchema {
            columns,
            missing: config.missing,
        });
    }
    for var in &config.variables {
        let owners: Vec<&Path> = config
            .inputs
            .iter()
            .zip(&schemas)
            .filter(|(_, s)| s.columns.iter().any(|c| c.name == var.name))
            .map(|(p, _)| p.as_path())
            .collect();
        match owners.len() {
            1 => {}
            0 => return Err(ingest(&format!("column {:?} not found in any input", var.column))),
            _ => {
                return Err(ingest(&format!(
                    "column {:?} appears in several inputs: {}",
                    var.column,
                    owners
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                )))
            }
        }
    }
    let panels = config
        .inputs
        .iter()
        .zip(&schemas)
        .map(|(p, s)| load_panel(p, s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ingest(&e))?;
    let merged = align(&panels).map_err(|e| PipelineError::new(Stage::Align, e))?;
    let ordered = merged
        .select(&config.names())
        .map_err(|e| PipelineError::new(Stage::Align, e))?;
    log_returns(&ordered, &partition).map_err(|e| PipelineError::new(Stage::Align, e))
}

pub fn stats_artifacts(panel: &ReturnPanel, adf_lag: AdfLag) -> Result<Vec<Artifact>, PipelineError> {
    let stats = summary_stats_with(panel, adf_lag).map_err(|e| PipelineError::new(Stage::Diagnostics, e))?;
    Ok(vec![
        Artifact::new("stats.csv", stats_to_csv(&stats, None)),
        Artifact::new("stats_display.csv", stats_to_csv(&stats, Some(2))),
    ])
}

fn lag_table_csv(rows: &[LagCriteria]) -> String {
    let mut out = csv_line(["p", "aic", "bic", "hq"]);
    for r in rows {
        out.push_str(&csv_line([
            r.p.to_string(),
            format_full(r.aic),
            format_full(r.bic),
            format_full(r.hq),
        ]));
    }
    out
}

/// Coefficients with one row per equation: intercept, then `L<l>.<name>`.
pub fn coefficients_csv(model: &VarModel) -> String {
    let names = model.names();
    let mut header = vec![String::new(), "const".to_string()];
    for l in 1..=model.p() {
        header.extend(names.iter().map(|n| format!("L{l}.{n}")));
    }
    let mut out = csv_line(header);
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone(), format_full(model.intercept()[i])];
        for a in model.lags() {
            row.extend((0..model.k()).map(|j| format_full(a[(i, j)])));
        }
        out.push_str(&csv_line(row));
    }
    out
}

pub fn matrix_csv(names: &[String], m: &DMatrix<f64>) -> String {
    let mut out = csv_line(std::iter::once(String::new()).chain(names.iter().cloned()));
    for (i, name) in names.iter().enumerate() {
        out.push_str(&csv_line(
            std::iter::once(name.clone()).chain((0..m.ncols()).map(|j| format_full(m[(i, j)]))),
        ));
    }
    out
}

/// Fits the VAR per the lag policy; returns the model and any lag table.
pub fn fit_stage(panel: &ReturnPanel, config: &RunConfig) -> Result<(VarModel, Vec<Artifact>), PipelineError> {
    let fit_err = |e: &dyn fmt::Display| PipelineError::new(Stage::Fit, e);
    let mut artifacts = Vec::new();
    let p = match config.lag {
        LagPolicy::Fixed(p) => p,
        LagPolicy::Auto { criterion, pmax } => {
            let table = lag_criteria(panel, pmax).map_err(|e| fit_err(&e))?;
            artifacts.push(Artifact::new("lag_selection.csv", lag_table_csv(&table)));
            let mut best = table[0];
            for row in &table[1..] {
                if row.get(criterion) < best.get(criterion) {
                    best = *row;
                }
            }
            best.p
        }
    };
    let model = fit_var_with(panel, p, config.covariance).map_err(|e| fit_err(&e))?;
    artifacts.push(Artifact::new("model.txt", model.to_text()));
    artifacts.push(Artifact::new("var_coefficients.csv", coefficients_csv(&model)));
    artifacts.push(Artifact::new("sigma_u.csv", matrix_csv(model.names(), model.sigma_u())));
    Ok((model, artifacts))
}

pub fn granger_artifacts(model: &VarModel, levels: &SignificanceLevels) -> Result<Vec<Artifact>, PipelineError> {
    let pm = pvalue_matrix(model);
    if let Some(f) = pm.failures().first() {
        return Err(PipelineError::new(
            Stage::Granger,
            format!(
                "{} of {} tests failed; first: {}",
                pm.failures().len(),
                model.k() * (model.k() - 1),
                f.error
            ),
        ));
    }
    let g = causal_network(&pm, levels);
    Ok(vec![
        Artifact::new("granger_pvalues.csv", pm.to_csv(None)),
        Artifact::new("granger_pvalues_display.csv", pm.to_csv(Some(3))),
        Artifact::new("granger_edges.csv", g.edges_csv()),
        Artifact::new(
            "granger_network.dot",
            to_dot(&g, &DotStyle::for_kind(NetworkKind::Granger)),
        ),
        Artifact::new("granger_network.json", to_json(&g)),
    ])
}

pub fn connectedness(model: &VarModel, h: usize) -> Result<ConnectednessTable, PipelineError> {
    let fevd_err = |e: &dyn fmt::Display| PipelineError::new(Stage::Fevd, e);
    let s = sgvd(&gvd(model, h).map_err(|e| fevd_err(&e))?).map_err(|e| fevd_err(&e))?;
    connectedness_table(&s, model.partition()).map_err(|e| fevd_err(&e))
}

/// Connectedness tables for every horizon; the network uses the first.
pub fn fevd_artifacts(
    model: &VarModel,
    horizons: &[usize],
    thresholds: &Thresholds,
) -> Result<Vec<Artifact>, PipelineError> {
    let mut out = Vec::new();
    for (idx, &h) in horizons.iter().enumerate() {
        let table = connectedness(model, h)?;
        out.push(Artifact::new(format!("connectedness_h{h}.csv"), table.to_csv(None)));
        out.push(Artifact::new(
            format!("connectedness_h{h}_display.csv"),
            table.to_csv(Some(2)),
        ));
        if idx == 0 {
            let g = threshold_network(&table, thresholds);
            out.push(Artifact::new("fevd_edges.csv", g.edges_csv()));
            out.push(Artifact::new(
                "fevd_network.dot",
                to_dot(&g, &DotStyle::for_kind(NetworkKind::Fevd)),
            ));
            out.push(Artifact::new("fevd_network.json", to_json(&g)));
        }
    }
    Ok(out)
}

/// Closed-form forecast-error variances against simulated paths.
pub fn fev_check_csv(model: &VarModel, h: usize, nsims: usize, seed: u64) -> Result<String, PipelineError> {
    let fevd_err = |e: &dyn fmt::Display| PipelineError::new(Stage::Fevd, e);
    let analytic = forecast_error_variance(model, h).map_err(|e| fevd_err(&e))?;
    let simulated = empirical_fev_oracle(model, h, nsims, seed).map_err(|e| fevd_err(&e))?;
    let mut out = csv_line([
        "variable",
        "horizon",
        "paths",
        "analytic",
        "simulated",
        "relative_difference",
    ]);
    for (i, name) in model.names().iter().enumerate() {
        let a = analytic[(i, i)];
        out.push_str(&csv_line([
            name.clone(),
            h.to_string(),
            nsims.to_string(),
            format_full(a),
            format_full(simulated[i]),
            format_full((simulated[i] - a) / a),
        ]));
    }
    Ok(out)
}

fn manifest(config_text: &str, inputs: &[(String, String)], artifacts: &[Artifact]) -> String {
    let mut out = format!("spillnet-run-manifest 1\nversion = {VERSION}\n\n[config]\n");
    out.push_str(&format!("sha256 = {}\n", sha256_hex(config_text.as_bytes())));
    out.push_str(config_text);
    out.push_str("\n[inputs]\n");
    for (name, digest) in inputs {
        out.push_str(&format!("{digest}  {name}\n"));
    }
    out.push_str("\n[artifacts]\n");
    for a in artifacts {
        out.push_str(&format!("{}  {}\n", sha256_hex(a.contents.as_bytes()), a.name));
    }
    out
}

/// Computes every artifact of a run without touching the output directory.
pub fn build_artifacts(config: &RunConfig) -> Result<(Vec<Artifact>, RunSummary), PipelineError> {
    let mut inputs = Vec::new();
    for (given, path) in config.inputs_as_given.iter().zip(&config.inputs) {
        let bytes =
            fs::read(path).map_err(|e| PipelineError::new(Stage::Ingest, format!("{}: {e}", path.display())))?;
        inputs.push((given.clone(), sha256_hex(&bytes)));
    }
    let panel = load_inputs(config)?;
    let mut artifacts = vec![Artifact::new("returns.csv", panel.to_csv())];
    artifacts.extend(stats_artifacts(&panel, config.adf_lag)?);
    let (model, fitted) = fit_stage(&panel, config)?;
    artifacts.extend(fitted);
    artifacts.extend(granger_artifacts(&model, &config.levels)?);
    artifacts.extend(fevd_artifacts(&model, &config.horizons, &config.thresholds)?);

    let mut notes = Vec::new();
    if config.fev_check_sims > 0 {
        let stability = is_stable(&model);
        if stability.stable {
            let csv = fev_check_csv(&model, config.primary_horizon(), config.fev_check_sims, config.seed)?;
            artifacts.push(Artifact::new("fev_check.csv", csv));
        } else {
            notes.push(format!(
                "fitted VAR is not stable (max modulus {}); simulation check skipped",
                stability.max_modulus
            ));
        }
    }
    let config_text = config.to_text();
    let m = manifest(&config_text, &inputs, &artifacts);
    artifacts.push(Artifact::new("manifest.txt", m));
    let summary = RunSummary {
        written: Vec::new(),
        lag_order: model.p(),
        nobs: model.nobs(),
        notes,
    };
    Ok((artifacts, summary))
}

/// Writes artifacts into `dir`; on any failure already-written files are removed.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, PipelineError> {
    let export_err = |e: &dyn fmt::Display| PipelineError::new(Stage::Export, e);
    let created_dir = !dir.exists();
    fs::create_dir_all(dir).map_err(|e| export_err(&format!("{}: {e}", dir.display())))?;
    let mut written = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let path = dir.join(&a.name);
        if let Err(e) = fs::write(&path, a.contents.as_bytes()) {
            for w in &written {
                let _ = fs::remove_file(w);
            }
            if created_dir {
                let _ = fs::remove_dir(dir);
            }
            return Err(export_err(&format!("{}: {e}", path.display())));
        }
        written.push(path);
    }
    Ok(written)
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunSummary, PipelineError> {
    let (artifacts, mut summary) = build_artifacts(config)?;
    summary.written = write_artifacts(&config.output_dir, &artifacts)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::simulate::{simulate_var, DgpSpec, ShockDist};
    use nalgebra::DVector;

    fn prices_csv(seed: u64, n: usize, names: &[&str], skip_first: usize) -> String {
        let k = names.len();
        let a = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                0.3
            } else if j + 1 == i {
                0.2
            } else {
                0.0
            }
        });
        let spec = DgpSpec::new(
            DVector::zeros(k),
            vec![a],
            DMatrix::identity(k, k),
            ShockDist::Gaussian,
            n,
            seed,
        )
        .unwrap();
        let r = simulate_var(&spec).unwrap();
        let mut out = format!("date,{}\n", names.join(","));
        let mut level = vec![100.0; k];
        let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        for t in 0..n {
            for (j, l) in level.iter_mut().enumerate() {
                *l *= (r.values()[(t, j)] / 100.0).exp();
            }
            if t >= skip_first {
                let d = start + chrono::Days::new(t as u64);
                let row: Vec<String> = level.iter().map(|v| format!("{v}")).collect();
                out.push_str(&format!("{d},{}\n", row.join(",")));
            }
        }
        out
    }

    fn setup(extra: &str) -> (tempfile::TempDir, RunConfig) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), prices_csv(1, 400, &["x", "y"], 0)).unwrap();
        fs::write(dir.path().join("b.csv"), prices_csv(2, 400, &["z"], 10)).unwrap();
        let text = format!(
            "input = a.csv\ninput = b.csv\ngroup.x = G1\ngroup.y = G1\ngroup.z = G2\npmax = 4\nfev_check_sims = 2000\noutput_dir = out\n{extra}"
        );
        let cfg = parse_config(&text, dir.path()).unwrap();
        (dir, cfg)
    }

    #[test]
    fn smoke_run_writes_parseable_artifacts() {
        let (dir, cfg) = setup("");
        let summary = run_pipeline(&cfg).unwrap();
        assert!(summary.notes.is_empty());
        let out = dir.path().join("out");
        for name in [
            "stats.csv",
            "model.txt",
            "granger_pvalues.csv",
            "granger_edges.csv",
            "fevd_edges.csv",
            "connectedness_h10.csv",
            "granger_network.dot",
            "fevd_network.json",
            "fev_check.csv",
            "manifest.txt",
        ] {
            assert!(out.join(name).exists(), "{name}");
        }
        let model = VarModel::from_text(&fs::read_to_string(out.join("model.txt")).unwrap()).unwrap();
        assert_eq!(model.names(), ["x", "y", "z"]);
        // b.csv starts ten days later, so the aligned return panel has 389 rows
        let returns = fs::read_to_string(out.join("returns.csv")).unwrap();
        assert_eq!(returns.lines().count(), 390);
        crate::network::from_json(&fs::read_to_string(out.join("granger_network.json")).unwrap()).unwrap();
        for f in [
            "stats.csv",
            "connectedness_h10.csv",
            "granger_pvalues.csv",
            "fev_check.csv",
        ] {
            let text = fs::read_to_string(out.join(f)).unwrap();
            let mut r = csv::Reader::from_reader(text.as_bytes());
            assert!(r.records().all(|rec| rec.is_ok()));
        }
        let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("a.csv") && manifest.contains("stats.csv"));
    }

    #[test]
    fn empty_intersection_is_tagged_align() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "date,x\n2020-01-01,1\n2020-01-02,2\n").unwrap();
        fs::write(dir.path().join("b.csv"), "date,y\n2021-01-01,1\n2021-01-02,2\n").unwrap();
        let cfg = parse_config(
            "input = a.csv\ninput = b.csv\ngroup.x = G\ngroup.y = G\noutput_dir = out\n",
            dir.path(),
        )
        .unwrap();
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Align);
        assert_eq!(err.exit_code(), 20);
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn missing_column_is_ingest_error() {
        let (dir, _) = setup("");
        let cfg = parse_config(
            "input = a.csv\ngroup.x = G\ngroup.w = G\noutput_dir = out\n",
            dir.path(),
        )
        .unwrap();
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Ingest);
    }

    #[test]
    fn fit_failure_leaves_no_outputs() {
        let (dir, _) = setup("");
        let cfg = parse_config(
            "input = a.csv\ngroup.x = G\ngroup.y = G\nlag = 300\noutput_dir = out\n",
            dir.path(),
        )
        .unwrap();
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!((err.stage, err.exit_code()), (Stage::Fit, 30));
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn export_failure_removes_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out");
        // a directory named like an artifact makes its write fail midway
        fs::create_dir_all(target.join("b.txt")).unwrap();
        let arts = vec![Artifact::new("a.txt", "1".into()), Artifact::new("b.txt", "2".into())];
        let err = write_artifacts(&target, &arts).unwrap_err();
        assert_eq!(err.exit_code(), 60);
        assert!(!target.join("a.txt").exists());
    }

    #[test]
    fn repeated_runs_are_identical() {
        let (dir, cfg) = setup("horizons = 10, 1\n");
        run_pipeline(&cfg).unwrap();
        let first: Vec<(String, Vec<u8>)> = read_dir_sorted(&dir.path().join("out"));
        fs::remove_dir_all(dir.path().join("out")).unwrap();
        run_pipeline(&cfg).unwrap();
        assert_eq!(first, read_dir_sorted(&dir.path().join("out")));
        assert!(first.iter().any(|(n, _)| n == "connectedness_h1.csv"));
    }

    fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        v.sort();
        v
    }
}
