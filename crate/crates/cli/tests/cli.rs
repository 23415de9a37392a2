use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_berksurv"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed");
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn simulate(dir: &Path, n: &str, workers: &str, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", p(dir), "-n", n, "--workers", workers, "--seed", "11"];
    args.extend_from_slice(extra);
    ok(&args);
}

const SHORT: [&str; 12] = [
    "--chains", "2", "--iterations", "300", "--burnin", "100", "--thin", "10", "--adapt-phases", "4",
    "--adapt-phase-len", "50",
];

fn fit(cohort: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["fit", "--cohort", p(cohort), "--out", p(out)];
    args.extend_from_slice(&SHORT);
    args.extend_from_slice(extra);
    ok(&args);
}

fn column(csv_path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(csv_path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[i].parse().unwrap()).collect()
}

#[test]
fn simulate_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    simulate(&a, "2", "80", &[]);
    simulate(&b, "2", "80", &[]);
    let fa = files(&a);
    assert!(fa.len() > 10);
    assert_eq!(fa, files(&b));
}

#[test]
fn simulate_writes_one_directory_per_replicate() {
    let t = tempfile::tempdir().unwrap();
    simulate(t.path(), "3", "40", &[]);
    for r in 0..3 {
        let d = t.path().join(format!("rep_{r:03}"));
        for f in ["workers.csv", "cells.csv", "truth.csv", "scenario.toml", "fit_registry.toml"] {
            assert!(d.join(f).is_file(), "{}", d.join(f).display());
        }
    }
    assert!(!t.path().join("rep_003").exists());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["replicates"], 3);
}

#[test]
fn missing_registry_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--out", p(t.path()), "--registry", "/no/such/registry.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("registry"));
}

#[test]
fn invalid_scenario_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--out", p(t.path()), "--misspecify", "no_such_flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_flag"));
    let out = run(&["simulate", "--out", p(t.path()), "--workers", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    simulate(&data, "1", "60", &[]);
    let cohort = data.join("rep_000");
    let (a, b) = (t.path().join("fa"), t.path().join("fb"));
    fit(&cohort, &a, &["--checkpoint-every", "100"]);
    fit(&cohort, &b, &[]);
    let fa = files(&a);
    assert_eq!(fa.len(), 3, "{:?}", fa.iter().map(|f| &f.0).collect::<Vec<_>>());
    let fb = files(&b);
    // manifests differ only in the checkpoint setting
    assert_eq!(fa[0], fb[0]);
    assert_eq!(fa[1], fb[1]);
}

#[test]
fn config_file_with_flag_overrides() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    let cfg = t.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[paths]\noutput = \"{}\"\n[scenario]\nn_workers = 50\nbeta_true = 0.6\n[simulate]\nreplicates = 2\n\
             [sampler]\nn_chains = 3\niterations = 200\nburnin = 50\nthin = 10\nn_adapt_phases = 2\n",
            data.display()
        ),
    )
    .unwrap();
    ok(&["simulate", "--config", p(&cfg)]);
    let sc = fs::read_to_string(data.join("rep_001/scenario.toml")).unwrap();
    assert!(sc.contains("beta_true = 0.6"), "{sc}");
    let out = t.path().join("fit");
    ok(&[
        "fit", "--config", p(&cfg), "--cohort", p(&data.join("rep_000")), "--out", p(&out), "--chains",
        "2", "--naive",
    ]);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["chains"].as_array().unwrap().len(), 2);
    assert_eq!(m["config"]["iterations"], 200);
    assert_eq!(m["mode"], "naive");
    assert_eq!(column(&out.join("chain_1.csv"), "beta").len(), 20);
}

#[test]
fn protocol_defaults_pool_4000_draws() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    simulate(&data, "1", "40", &[]);
    let out = t.path().join("fit");
    ok(&[
        "fit", "--cohort", p(&data.join("rep_000")), "--out", p(&out), "--naive", "--burnin", "0",
        "--adapt-phases", "0", "--checkpoint-every", "0",
    ]);
    ok(&["summarize", "--fit", p(&out)]);
    let n = column(&out.join("summary.csv"), "n_draws");
    assert!(n.iter().all(|&v| v == 4000.0), "{n:?}");
}

#[test]
fn naive_matches_corrected_on_error_free_data() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, "[scenario]\nerror_scale = 0.0\n").unwrap();
    ok(&["simulate", "--config", p(&cfg), "--out", p(&data), "-n", "1", "--workers", "300", "--seed", "3"]);
    let cohort = data.join("rep_000");
    let long = [
        "--chains", "2", "--iterations", "3000", "--burnin", "1000", "--thin", "10", "--adapt-phases", "10",
    ];
    let mean = |dir: &Path| {
        let mut all = column(&dir.join("chain_0.csv"), "beta");
        all.extend(column(&dir.join("chain_1.csv"), "beta"));
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let sd = (all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        (m, sd)
    };
    let (n, c, tr) = (t.path().join("n"), t.path().join("c"), t.path().join("t"));
    for (dir, flag) in [(&n, Some("--naive")), (&c, None), (&tr, Some("--true-exposure"))] {
        let mut args = vec!["fit", "--cohort", p(&cohort), "--out", p(dir)];
        args.extend_from_slice(&long);
        args.extend(flag);
        ok(&args);
    }
    let (mn, sn) = mean(&n);
    let (mc, _) = mean(&c);
    let (mt, _) = mean(&tr);
    // without error the observed exposures are the truth
    assert!((mn - mt).abs() < 0.5 * sn, "naive {mn} true {mt}");
    assert!((mn - mc).abs() < 1.5 * sn, "naive {mn} corrected {mc} sd {sn}");
}

#[test]
fn diagnose_summarize_and_plot_data() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    simulate(&data, "2", "60", &[]);
    for mode in [&[][..], &["--naive"][..], &["--true-exposure"][..]] {
        let mut args = vec!["fit", "--batch", p(&data)];
        args.extend_from_slice(&SHORT);
        args.extend_from_slice(mode);
        ok(&args);
    }
    let fit = data.join("rep_000/fit_corrected");
    let d = ok(&["diagnose", "--fit", p(&fit)]);
    assert!(String::from_utf8_lossy(&d.stdout).starts_with("beta"));
    assert!(column(&fit.join("diagnostics.csv"), "r_hat")[0] > 0.9);

    ok(&["summarize", "--fit", p(&fit)]);
    let lo = column(&fit.join("summary.csv"), "hdi_low");
    let hi = column(&fit.join("summary.csv"), "hdi_high");
    assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h));

    let s = ok(&["summarize", "--batch", p(&data)]);
    let text = String::from_utf8_lossy(&s.stdout);
    for m in ["naive", "corrected", "true"] {
        assert!(text.contains(m), "{text}");
    }
    let cov = column(&data.join("perf_report.csv"), "coverage");
    assert_eq!(cov.len(), 3);
    assert!(cov.iter().all(|c| (0.0..=1.0).contains(c)));

    let plots = t.path().join("plots");
    ok(&["plot-data", "--fit", p(&fit), "--parameter", "beta", "--parameter", "lambda_2", "--grid", "50", "--out", p(&plots)]);
    assert_eq!(column(&plots.join("violin.csv"), "density").len(), 100);
    assert_eq!(column(&plots.join("trace.csv"), "value").len(), 2 * 2 * 30);
}

#[test]
fn mismatched_chain_lengths_are_an_error() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    simulate(&data, "1", "40", &[]);
    let out = t.path().join("fit");
    fit(&data.join("rep_000"), &out, &["--naive"]);
    let chain = out.join("chain_1.csv");
    let text = fs::read_to_string(&chain).unwrap();
    let kept: Vec<&str> = text.lines().take(5).collect();
    fs::write(&chain, kept.join("\n") + "\n").unwrap();
    let d = run(&["diagnose", "--fit", p(&out)]);
    assert!(!d.status.success());
    assert!(String::from_utf8_lossy(&d.stderr).contains("equal length"));
    assert!(!run(&["summarize", "--fit", p(&out)]).status.success());
}

#[test]
fn empty_directories_are_usage_errors() {
    let t = tempfile::tempdir().unwrap();
    for args in [
        vec!["summarize", "--fit", p(t.path())],
        vec!["diagnose", "--fit", p(t.path())],
        vec!["summarize", "--batch", p(t.path())],
        vec!["fit", "--batch", p(t.path())],
        vec!["fit", "--cohort", "/no/such/cohort"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn true_mode_needs_a_truth_table() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    simulate(&data, "1", "30", &[]);
    let cohort = data.join("rep_000");
    fs::remove_file(cohort.join("truth.csv")).unwrap();
    let out = run(&["fit", "--cohort", p(&cohort), "--true-exposure", "--out", p(&t.path().join("f"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truth"));
}

#[test]
fn interrupted_fit_resumes_from_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    simulate(&data, "1", "300", &[]);
    let cohort = data.join("rep_000");
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let args = |out: &Path| {
        vec![
            "fit".to_string(), "--cohort".into(), p(&cohort).into(), "--out".into(), p(out).into(),
            "--chains".into(), "1".into(), "--iterations".into(), "4000".into(), "--burnin".into(),
            "500".into(), "--thin".into(), "10".into(), "--adapt-phases".into(), "4".into(),
            "--checkpoint-every".into(), "100".into(),
        ]
    };
    ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());

    let mut child = bin().args(args(&b)).spawn().unwrap();
    let cp = b.join("checkpoint_chain0.json");
    let t0 = std::time::Instant::now();
    while !cp.exists() && t0.elapsed().as_secs() < 60 {
        std::thread::sleep(std::time::Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(!b.join("manifest.json").exists(), "run finished before it was interrupted");
    assert!(cp.exists());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(fs::read(a.join("chain_0.csv")).unwrap(), fs::read(b.join("chain_0.csv")).unwrap());
    assert!(!cp.exists());
}
