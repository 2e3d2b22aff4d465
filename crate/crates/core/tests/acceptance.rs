//! Acceptance suite: each criterion runs in isolation and prints one
//! PASS/FAIL line with its runtime; the process exits non-zero if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use spillnet::chi_square_sf;
use spillnet::diagnostics::{jarque_bera, AdfDecisions, AdfLag, ADF_CRITICAL_VALUES};
use spillnet::fevd::{empirical_fev_oracle, gvd, sgvd};
use spillnet::granger::PVALUE_CORNER;
use spillnet::ingest::{GroupPartition, ReturnPanel};
use spillnet::simulate::{mc_rejection_rate, simulate_var, DgpSpec, McTest, ShockDist};
use spillnet::var::{fit_var, forecast_error_variance, is_stable, VarModel};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn scale_to_modulus(lags: Vec<DMatrix<f64>>, sigma: &DMatrix<f64>, target: f64) -> Vec<DMatrix<f64>> {
    let k = sigma.nrows();
    let m = VarModel::population_unnamed(DVector::zeros(k), lags.clone(), sigma.clone()).unwrap();
    let s = target / is_stable(&m).max_modulus;
    lags.iter().enumerate().map(|(l, a)| a * s.powi(l as i32 + 1)).collect()
}

fn gaussian_spec(lags: Vec<DMatrix<f64>>, sigma: DMatrix<f64>, n: usize, seed: u64) -> DgpSpec {
    DgpSpec::new(DVector::zeros(sigma.nrows()), lags, sigma, ShockDist::Gaussian, n, seed).unwrap()
}

fn criterion_1() -> Outcome {
    let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, 0.1, 0.4, 0.2, 0.0, 0.3, 0.3]);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.5, 0.8]));
    let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.7, 0.6, 0.7, 1.0, 0.7, 0.6, 0.7, 1.0]);
    let sigma = &d * r * &d;
    let lags = scale_to_modulus(vec![a], &sigma, 0.8);
    let spec = gaussian_spec(lags.clone(), sigma.clone(), 50_000, 20240501);
    let model = fit_var(&simulate_var(&spec).unwrap(), 1).unwrap();
    let a_err = (&model.lags()[0] - &lags[0]).amax();
    let s_err = model
        .sigma_u()
        .iter()
        .zip(sigma.iter())
        .map(|(e, t)| ((e - t) / t).abs())
        .fold(0.0, f64::max);
    ensure(a_err <= 0.02, format!("max |A error| {a_err:.4} > 0.02"))?;
    ensure(s_err <= 0.02, format!("max relative Sigma error {s_err:.4} > 0.02"))?;
    Ok(format!("max |A err| {a_err:.4}, max rel Sigma err {s_err:.4}"))
}

fn criterion_2() -> Outcome {
    let m =
        VarModel::population_unnamed(DVector::zeros(4), vec![DMatrix::zeros(4, 4)], DMatrix::identity(4, 4)).unwrap();
    let mut worst: f64 = 0.0;
    for h in [1, 10, 20] {
        let s = sgvd(&gvd(&m, h).unwrap()).unwrap();
        worst = worst.max((s.values - DMatrix::<f64>::identity(4, 4) * 100.0).amax());
    }
    ensure(worst <= 1e-10, format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation from 100*I {worst:e}"))
}

fn random_stable_model(rng: &mut ChaCha20Rng) -> VarModel {
    let k = rng.random_range(1..=6);
    let p = rng.random_range(1..=3);
    let lags: Vec<DMatrix<f64>> = (0..p)
        .map(|_| DMatrix::from_fn(k, k, |_, _| rng.random_range(-0.5..0.5)))
        .collect();
    let f = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let sigma = &f * f.transpose() + DMatrix::identity(k, k) * 0.1;
    let target = rng.random_range(0.1..0.95);
    let lags = scale_to_modulus(lags, &sigma, target);
    VarModel::population_unnamed(DVector::zeros(k), lags, sigma).unwrap()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = random_stable_model(&mut rng);
        ensure(is_stable(&m).stable, "generated model not stable")?;
        let s = sgvd(&gvd(&m, 10).unwrap()).unwrap();
        for i in 0..m.k() {
            worst = worst.max((s.values.row(i).sum() - 100.0).abs());
        }
    }
    ensure(worst <= 1e-9, format!("max |row sum - 100| {worst:e}"))?;
    Ok(format!("100 models, max |row sum - 100| {worst:e}"))
}

fn criterion_4() -> Outcome {
    let a = DMatrix::from_row_slice(
        5,
        5,
        &[
            0.4, 0.1, 0.0, 0.0, 0.1, 0.2, 0.3, 0.1, 0.0, 0.0, 0.0, 0.2, 0.3, 0.1, 0.0, 0.1, 0.0, 0.2, 0.2, 0.1, 0.0,
            0.1, 0.0, 0.3, 0.3,
        ],
    );
    let f = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()));
    let sigma = &f * f.transpose();
    let panel = simulate_var(&gaussian_spec(vec![a], sigma, 2_000, 44)).unwrap();
    let base = gvd(&fit_var(&panel, 2).unwrap(), 10).unwrap().values;
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut order: Vec<usize> = (0..5).collect();
        for i in (1..5).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted = panel.permuted(&order).unwrap();
        let g = gvd(&fit_var(&permuted, 2).unwrap(), 10).unwrap().values;
        for r in 0..5 {
            for c in 0..5 {
                worst = worst.max((g[(r, c)] - base[(order[r], order[c])]).abs());
            }
        }
    }
    ensure(worst <= 1e-8, format!("max entrywise deviation {worst:e}"))?;
    Ok(format!("20 permutations, max deviation {worst:e}"))
}

fn criterion_5() -> Outcome {
    let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.2, 0.4, 0.1, 0.0, 0.2, 0.6]);
    let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.0]);
    let m = VarModel::population_unnamed(DVector::zeros(3), vec![a], sigma).unwrap();
    let analytic = forecast_error_variance(&m, 10).unwrap();
    let simulated = empirical_fev_oracle(&m, 10, 100_000, 5).unwrap();
    let worst = (0..3)
        .map(|i| (simulated[i] / analytic[(i, i)] - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 0.05, format!("max relative deviation {worst:.4}"))?;
    Ok(format!("max relative deviation {worst:.4}"))
}

fn criterion_6() -> Outcome {
    let diag = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]);
    let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
    let test = McTest::Granger {
        source: "y2".into(),
        target: "y1".into(),
    };
    let size = mc_rejection_rate(&gaussian_spec(vec![diag], sigma.clone(), 2_000, 6), &test, 0.05, 500).unwrap();
    let causal = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.0, 0.3]);
    let power = mc_rejection_rate(&gaussian_spec(vec![causal], sigma, 2_000, 7), &test, 0.05, 500).unwrap();
    ensure(size.failures == 0 && power.failures == 0, "replication failures")?;
    ensure((0.03..=0.07).contains(&size.rate), format!("size {}", size.rate))?;
    ensure(power.rate >= 0.99, format!("power {}", power.rate))?;
    Ok(format!("size {:.3}, power {:.3}", size.rate, power.rate))
}

fn criterion_7() -> Outcome {
    let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.35, 0.2]);
    let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.3, 0.7]));
    let m = VarModel::population_unnamed(DVector::zeros(2), vec![a], sigma).unwrap();
    let mut worst: f64 = 0.0;
    for h in [1, 10] {
        let g = gvd(&m, h).unwrap();
        worst = worst.max(g.values[(0, 1)].abs());
        ensure(g.values[(1, 0)] > 0.0 || h == 1, "causal direction unexpectedly zero")?;
    }
    ensure(worst <= 1e-14, format!("gvd(1,2) = {worst:e}"))?;
    Ok(format!("max |gvd(1,2)| {worst:e}"))
}

fn criterion_8() -> Outcome {
    let p = chi_square_sf(9.21, 2.0);
    ensure((p - 0.01).abs() <= 0.001, format!("p(9.21) = {p}"))?;
    let x: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64).powf(1.3)).collect();
    let jb = jarque_bera(&x).unwrap();
    ensure(
        (jb.pvalue - chi_square_sf(jb.stat, 2.0)).abs() < 1e-15,
        "JB p-value is not the chi2(2) tail",
    )?;

    let expected = [(0.01, -3.44), (0.05, -2.87), (0.10, -2.60)];
    ensure(ADF_CRITICAL_VALUES == expected, "ADF critical values differ")?;
    let d = AdfDecisions::from_stat(-2.9);
    ensure(
        d.at(0.01) == Some(false) && d.at(0.05) == Some(true) && d.at(0.10) == Some(true),
        "decisions at -2.9",
    )?;
    let edge = AdfDecisions::from_stat(-2.87);
    ensure(
        edge.at(0.05) == Some(false) && edge.at(0.10) == Some(true),
        "decision at the 5% value",
    )?;

    let white = gaussian_spec(vec![DMatrix::zeros(1, 1)], DMatrix::identity(1, 1), 2_000, 81);
    let jb_size = mc_rejection_rate(&white, &McTest::JarqueBera { variable: "y1".into() }, 0.05, 500).unwrap();
    let walk = gaussian_spec(vec![DMatrix::zeros(1, 1)], DMatrix::identity(1, 1), 1_000, 82);
    let adf = McTest::Adf {
        variable: "y1".into(),
        lag: AdfLag::Auto,
        levels: true,
    };
    let adf_size = mc_rejection_rate(&walk, &adf, 0.05, 500).unwrap();
    ensure(jb_size.failures == 0 && adf_size.failures == 0, "replication failures")?;
    ensure(
        (0.03..=0.07).contains(&jb_size.rate),
        format!("JB size {}", jb_size.rate),
    )?;
    ensure(
        (0.03..=0.07).contains(&adf_size.rate),
        format!("ADF size {}", adf_size.rate),
    )?;
    Ok(format!(
        "p(9.21) = {p:.5}, JB size {:.3}, ADF size {:.3}",
        jb_size.rate, adf_size.rate
    ))
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

fn thirteen_variable_panel() -> ReturnPanel {
    let k = 13;
    // variable c1 drives s1 (index 5) strongly; everything else is weakly linked
    let mut a = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.2
        } else if (i + 1) % k == j {
            0.05
        } else {
            0.0
        }
    });
    a[(5, 0)] = 0.5;
    let f = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else if i / 5 == j / 5 && i < 10 && j < 10 {
            0.3
        } else {
            0.0
        }
    });
    let sigma = &f * f.transpose();
    let names: Vec<String> = (0..k)
        .map(|i| {
            if i < 5 {
                format!("c{}", i + 1)
            } else {
                format!("s{}", i - 4)
            }
        })
        .collect();
    let mut spec = gaussian_spec(vec![a], sigma, 1_500, 9);
    spec.names = names.clone();
    spec.groups = (0..k)
        .map(|i| if i < 5 { "Cryptos".into() } else { "Others".into() })
        .collect();
    simulate_var(&spec).unwrap()
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let panel = thirteen_variable_panel();
    fs::write(dir.path().join("returns.csv"), panel.to_csv()).unwrap();
    let mut cfg =
        String::from("input = returns.csv\ninput_kind = returns\nlag = 1\nfev_check_sims = 0\noutput_dir = out\n");
    for (i, n) in panel.names().iter().enumerate() {
        cfg.push_str(&format!("group.{n} = {}\n", if i < 5 { "Cryptos" } else { "Others" }));
    }
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, cfg).unwrap();
    let config = spillnet::config::validate_config(&cfg_path).map_err(|e| format!("{e:?}"))?;
    spillnet::pipeline::run_pipeline(&config).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");

    let table = parse_csv(&fs::read_to_string(out.join("connectedness_h10.csv")).unwrap());
    ensure(table.len() == 1 + 13 + 2, format!("{} rows", table.len()))?;
    ensure(table.iter().all(|r| r.len() == 1 + 13 + 2), "ragged rows")?;
    ensure(
        table[0][14] == "From Cryptos" && table[0][15] == "From Others",
        "From columns",
    )?;
    ensure(table[14][0] == "To Cryptos" && table[15][0] == "To Others", "To rows")?;
    ensure(
        table[0][1..14]
            .iter()
            .map(String::as_str)
            .eq(panel.names().iter().map(String::as_str)),
        "column order",
    )?;
    let partition: &GroupPartition = panel.partition();
    let mut worst: f64 = 0.0;
    for i in 0..13 {
        let row = &table[1 + i];
        ensure(row[0] == panel.names()[i], "row order")?;
        let v: Vec<f64> = row[1..].iter().map(|s| s.parse().unwrap()).collect();
        let own_group = partition.group_of(&panel.names()[i]).unwrap();
        let (from_own, from_other) = if own_group == "Cryptos" {
            (v[13], v[14])
        } else {
            (v[14], v[13])
        };
        worst = worst.max((v[i] + from_own + from_other - 100.0).abs());
    }
    ensure(worst <= 1e-9, format!("identity violated by {worst:e}"))?;

    let pv = parse_csv(&fs::read_to_string(out.join("granger_pvalues.csv")).unwrap());
    ensure(pv[0][0] == PVALUE_CORNER, format!("corner {:?}", pv[0][0]))?;
    // row = receiving variable, column = causality source
    let p_c1_to_s1: f64 = pv[1 + 5][1].parse().unwrap();
    let p_s1_to_c1: f64 = pv[1][1 + 5].parse().unwrap();
    ensure(p_c1_to_s1 < 1e-6, format!("strong c1 -> s1 link has p = {p_c1_to_s1}"))?;
    ensure(p_s1_to_c1 > 1e-3, format!("reverse direction p = {p_s1_to_c1}"))?;
    ensure(pv[1][1].is_empty(), "diagonal not blank")?;
    Ok(format!("16x16 connectedness CSV, identity error {worst:e}"))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
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

fn criterion_10() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_spillnet");
    let dir = tempfile::tempdir().unwrap();
    let spec = "k = 3\np = 1\nlag1 = 0.4, 0.1, 0; 0.2, 0.3, 0; 0, 0.1, 0.5\nsigma_u = 1, 0.3, 0; 0.3, 1, 0.2; 0, 0.2, 1\nn = 600\nseed = 10\nnames = x, y, z\n";
    fs::write(dir.path().join("dgp.txt"), spec).unwrap();
    let sim = Command::new(exe)
        .args(["simulate", "--spec", "dgp.txt", "--out", "returns.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    ensure(sim.status.success(), String::from_utf8_lossy(&sim.stderr).to_string())?;
    let cfg = "input = returns.csv\ninput_kind = returns\ngroup.x = A\ngroup.y = A\ngroup.z = B\npmax = 4\nhorizons = 10, 1, 20\nfev_check_sims = 20000\nseed = 7\noutput_dir = out\n";
    fs::write(dir.path().join("run.cfg"), cfg).unwrap();

    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(dir.path().join("out"));
        let run = Command::new(exe)
            .args(["run", "--config", "run.cfg"])
            .current_dir(dir.path())
            .output()
            .unwrap();
        ensure(run.status.success(), String::from_utf8_lossy(&run.stderr).to_string())?;
        let mc = Command::new(exe)
            .args([
                "mc",
                "--spec",
                "dgp.txt",
                "--test",
                "granger:y->x",
                "--reps",
                "200",
                "--out",
                "out/mc.csv",
            ])
            .current_dir(dir.path())
            .output()
            .unwrap();
        ensure(mc.status.success(), String::from_utf8_lossy(&mc.stderr).to_string())?;
        runs.push(snapshot(&dir.path().join("out")));
    }
    ensure(
        runs[0].iter().any(|(n, _)| n == "fev_check.csv"),
        "fev_check.csv missing",
    )?;
    ensure(runs[0].len() == runs[1].len(), "different artifact sets")?;
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        ensure(a == b, format!("{} differs between runs", a.0))?;
    }
    Ok(format!("{} artifacts byte-identical", runs[0].len()))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "estimation recovery",
            budget: Duration::from_secs(10),
            run: criterion_1,
        },
        Criterion {
            id: 2,
            name: "white-noise FEVD identity",
            budget: Duration::from_secs(1),
            run: criterion_2,
        },
        Criterion {
            id: 3,
            name: "row normalization",
            budget: Duration::from_secs(30),
            run: criterion_3,
        },
        Criterion {
            id: 4,
            name: "order invariance",
            budget: Duration::from_secs(60),
            run: criterion_4,
        },
        Criterion {
            id: 5,
            name: "FEV vs simulation oracle",
            budget: Duration::from_secs(60),
            run: criterion_5,
        },
        Criterion {
            id: 6,
            name: "Wald size and power",
            budget: Duration::from_secs(300),
            run: criterion_6,
        },
        Criterion {
            id: 7,
            name: "noncausality gives zero GVD",
            budget: Duration::from_secs(1),
            run: criterion_7,
        },
        Criterion {
            id: 8,
            name: "diagnostics calibration",
            budget: Duration::from_secs(300),
            run: criterion_8,
        },
        Criterion {
            id: 9,
            name: "table-shape fidelity",
            budget: Duration::from_secs(30),
            run: criterion_9,
        },
        Criterion {
            id: 10,
            name: "determinism",
            budget: Duration::from_secs(120),
            run: criterion_10,
        },
    ];
    let mut failed = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".to_string()));
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > c.budget => Err(format!("runtime {elapsed:.2?} over budget {:?}", c.budget)),
            other => other,
        };
        match &result {
            Ok(detail) => println!("criterion {:>2} PASS  {} ({elapsed:.2?}): {detail}", c.id, c.name),
            Err(why) => {
                println!("criterion {:>2} FAIL  {} ({elapsed:.2?}): {why}", c.id, c.name);
                failed.push(c.id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
