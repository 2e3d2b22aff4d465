use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spillnet::config::{validate_config, LagPolicy, RunConfig};
use spillnet::granger::SignificanceLevels;
use spillnet::network::{NetworkKind, Thresholds};
use spillnet::pipeline::{
    connectedness, fevd_artifacts, fit_stage, granger_artifacts, load_inputs, run_pipeline, stats_artifacts,
    write_artifacts, Artifact, PipelineError, Stage,
};
use spillnet::simulate::{mc_rejection_rate, simulate_var, DgpSpec, McTest};
use spillnet::var::{Criterion, VarModel};

/// Granger-causality and variance-decomposition connectedness for return panels.
#[derive(Parser)]
#[command(name = "spillnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summary statistics with Jarque-Bera and ADF statistics.
    Stats {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the lag order and fit the VAR; writes model.txt.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fixed lag order, overriding the config.
        #[arg(long)]
        lag: Option<usize>,
        /// Lag-selection criterion, overriding the config.
        #[arg(long)]
        criterion: Option<Criterion>,
    },
    /// Wald p-value matrix and Granger network from a fitted model.
    Granger {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Increasing significance levels, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.10])]
        levels: Vec<f64>,
    },
    /// Connectedness tables from a fitted model.
    Fevd {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Forecast horizons; the first drives the thresholded network.
        #[arg(long = "horizon", value_delimiter = ',', default_values_t = [10])]
        horizons: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [5.0, 15.0])]
        thresholds: Vec<f64>,
    },
    /// Write one network as DOT (and JSON next to it).
    Network {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        kind: NetworkKind,
        /// DOT output path; the JSON goes to the same path with a .json extension.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [5.0, 15.0])]
        thresholds: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.10])]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
    },
    /// Simulate a panel from a process specification file.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo rejection rate of a test under a simulated process.
    Mc {
        #[arg(long)]
        spec: PathBuf,
        /// granger:SRC->TGT, jb:NAME, adf:NAME[:LAG] or adf-levels:NAME[:LAG]
        #[arg(long)]
        test: McTest,
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Summary CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline from a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    validate_config(path).map_err(|errs| {
        let lines: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        PipelineError::new(
            Stage::Config,
            format!("invalid configuration:\n  {}", lines.join("\n  ")),
        )
    })
}

fn load_model(path: &Path) -> Result<VarModel, PipelineError> {
    let text =
        fs::read_to_string(path).map_err(|e| PipelineError::new(Stage::Ingest, format!("{}: {e}", path.display())))?;
    VarModel::from_text(&text).map_err(|e| PipelineError::new(Stage::Ingest, format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<DgpSpec, PipelineError> {
    let text =
        fs::read_to_string(path).map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
    let spec =
        DgpSpec::from_text(&text).map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
    Ok(match seed {
        Some(s) => spec.with_seed(s),
        None => spec,
    })
}

fn levels(v: Vec<f64>) -> Result<SignificanceLevels, PipelineError> {
    SignificanceLevels::new(v).map_err(|e| PipelineError::new(Stage::Config, e))
}

fn thresholds(v: Vec<f64>) -> Result<Thresholds, PipelineError> {
    Thresholds::new(v).map_err(|e| PipelineError::new(Stage::Config, e))
}

fn write(dir: &Path, artifacts: &[Artifact]) -> Result<(), PipelineError> {
    for p in write_artifacts(dir, artifacts)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Stats { config, out } => {
            let cfg = load_config(&config)?;
            let panel = load_inputs(&cfg)?;
            write(&out, &stats_artifacts(&panel, cfg.adf_lag)?)
        }
        Command::Fit {
            config,
            out,
            lag,
            criterion,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(p) = lag {
                cfg.lag = LagPolicy::Fixed(p);
            } else if let Some(c) = criterion {
                let pmax = match cfg.lag {
                    LagPolicy::Auto { pmax, .. } => pmax,
                    LagPolicy::Fixed(_) => spillnet::config::DEFAULT_PMAX,
                };
                cfg.lag = LagPolicy::Auto { criterion: c, pmax };
            }
            let panel = load_inputs(&cfg)?;
            let (model, artifacts) = fit_stage(&panel, &cfg)?;
            println!("VAR({}) on {} observations", model.p(), model.nobs());
            write(&out, &artifacts)
        }
        Command::Granger { model, out, levels: lv } => {
            let m = load_model(&model)?;
            write(&out, &granger_artifacts(&m, &levels(lv)?)?)
        }
        Command::Fevd {
            model,
            out,
            horizons,
            thresholds: th,
        } => {
            let m = load_model(&model)?;
            if horizons.is_empty() || horizons.contains(&0) {
                return Err(PipelineError::new(Stage::Config, "horizons must be >= 1"));
            }
            write(&out, &fevd_artifacts(&m, &horizons, &thresholds(th)?)?)
        }
        Command::Network {
            model,
            kind,
            out,
            thresholds: th,
            levels: lv,
            horizon,
        } => {
            let m = load_model(&model)?;
            let g = match kind {
                NetworkKind::Granger => {
                    let pm = spillnet::granger::pvalue_matrix(&m);
                    spillnet::granger::causal_network(&pm, &levels(lv)?)
                }
                NetworkKind::Fevd => {
                    let table = connectedness(&m, horizon)?;
                    spillnet::network::threshold_network(&table, &thresholds(th)?)
                }
            };
            let dot = spillnet::network::to_dot(&g, &spillnet::network::DotStyle::for_kind(kind));
            let json = spillnet::network::to_json(&g);
            let export = |p: &Path, text: &str| {
                fs::write(p, text).map_err(|e| PipelineError::new(Stage::Export, format!("{}: {e}", p.display())))
            };
            let json_path = out.with_extension("json");
            export(&out, &dot)?;
            export(&json_path, &json)?;
            println!("wrote {}\nwrote {}", out.display(), json_path.display());
            Ok(())
        }
        Command::Simulate { spec, out, seed } => {
            let s = load_spec(&spec, seed)?;
            let panel = simulate_var(&s).map_err(|e| PipelineError::new(Stage::Config, e))?;
            fs::write(&out, panel.to_csv())
                .map_err(|e| PipelineError::new(Stage::Export, format!("{}: {e}", out.display())))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Mc {
            spec,
            test,
            level,
            reps,
            seed,
            out,
        } => {
            let s = load_spec(&spec, seed)?;
            let outcome =
                mc_rejection_rate(&s, &test, level, reps).map_err(|e| PipelineError::new(Stage::Config, e))?;
            match out {
                Some(p) => {
                    fs::write(&p, outcome.to_csv())
                        .map_err(|e| PipelineError::new(Stage::Export, format!("{}: {e}", p.display())))?;
                    println!("wrote {}", p.display());
                }
                None => print!("{}", outcome.to_csv()),
            }
            Ok(())
        }
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let summary = run_pipeline(&cfg)?;
            for n in &summary.notes {
                eprintln!("note: {n}");
            }
            println!(
                "VAR({}) on {} observations; {} files in {}",
                summary.lag_order,
                summary.nobs,
                summary.written.len(),
                cfg.output_dir.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
