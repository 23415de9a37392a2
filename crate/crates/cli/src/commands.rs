use berksurv::cohort::load_cohort;
use berksurv::diagnostics::{
    r_hat, score_replicates, summarize_chains, trace, violin, DiagnosticsError, PerfReport,
};
use berksurv::sampler::{run_chains, ExposureMode, FitProblem, RunManifest, SampleTable};
use berksurv::simgen::{generate, read_true_exposure, SimScenario, SCENARIO_TOML, TRUTH_CSV};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::config::{require_dir, require_file, RunConfig};
use crate::{CliError, Common, FitArgs, FitDirArgs, PlotArgs, SimulateArgs, SummarizeArgs};

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const MANIFEST_JSON: &str = "manifest.json";

fn load_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    if let Some(p) = &c.registry {
        cfg.paths.registry = Some(p.clone());
    }
    if let Some(p) = &c.schema {
        cfg.paths.schema = Some(p.clone());
    }
    if let Some(p) = &c.out {
        cfg.paths.output = Some(p.clone());
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn replicate_dir(root: &Path, r: u64) -> PathBuf {
    root.join(format!("rep_{r:03}"))
}

/// Sorted `rep_*` subdirectories of `root`.
fn replicate_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    require_dir(root, "batch")?;
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("rep_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Usage(format!("no rep_* directories in {}", root.display())));
    }
    Ok(dirs)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimManifest {
    pub scenario: SimScenario,
    pub replicates: u64,
    pub registry_hash: String,
    pub datasets: Vec<String>,
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    if let Some(s) = a.common.seed {
        cfg.scenario.seed = s;
    }
    if let Some(n) = a.replicates {
        cfg.simulate.replicates = n;
    }
    if let Some(b) = a.beta {
        cfg.scenario.beta_true = b;
    }
    if let Some(n) = a.workers {
        cfg.scenario.n_workers = n;
    }
    cfg.scenario.misspecification.extend(a.misspecify.iter().cloned());
    cfg.scenario
        .validate()
        .map_err(|e| CliError::Usage(format!("invalid scenario: {e}")))?;
    if cfg.simulate.replicates == 0 {
        return Err(CliError::Usage("replicates must be at least 1".into()));
    }
    let registry = cfg.registry_for(None)?;
    let schema = cfg.schema()?;
    let out = cfg.output()?.to_path_buf();
    std::fs::create_dir_all(&out)?;
    let scenario = cfg.scenario.clone();
    let n = cfg.simulate.replicates;
    cfg.thread_pool()?.install(|| {
        (0..n).into_par_iter().try_for_each(|r| -> Result<(), CliError> {
            let ds = generate(&scenario.replicate(r), &registry)?;
            ds.write(&replicate_dir(&out, r), &schema)?;
            Ok(())
        })
    })?;
    let manifest = SimManifest {
        scenario,
        replicates: n,
        registry_hash: registry.hash(),
        datasets: (0..n).map(|r| format!("rep_{r:03}")).collect(),
    };
    std::fs::write(out.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)?)?;
    eprintln!("wrote {n} replicate(s) to {}", out.display());
    Ok(())
}

fn mode_name(mode: ExposureMode) -> &'static str {
    match mode {
        ExposureMode::Corrected => "corrected",
        ExposureMode::Naive => "naive",
        ExposureMode::True => "true",
    }
}

pub fn chain_file(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{chain}.csv"))
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    let s = &mut cfg.sampler;
    if let Some(v) = a.common.seed {
        s.seed = v;
    }
    for (dst, src) in [
        (&mut s.n_chains, a.chains),
        (&mut s.iterations, a.iterations),
        (&mut s.burnin, a.burnin),
        (&mut s.thin, a.thin),
        (&mut s.n_adapt_phases, a.adapt_phases),
        (&mut s.adapt_phase_len, a.adapt_phase_len),
        (&mut s.checkpoint_every, a.checkpoint_every),
    ] {
        if let Some(v) = src {
            *dst = v;
        }
    }
    cfg.sampler.validate()?;
    if a.ehr {
        cfg.model.kind = berksurv::disease::HazardKind::Ehr;
    }
    let mode = if a.naive {
        ExposureMode::Naive
    } else if a.true_exposure {
        ExposureMode::True
    } else {
        ExposureMode::Corrected
    };
    if let Some(t) = &a.truth {
        cfg.paths.truth = Some(t.clone());
    }

    let dirs = if let Some(root) = &a.batch {
        replicate_dirs(root)?
    } else if !a.cohort.is_empty() {
        a.cohort.clone()
    } else if let Some(c) = &cfg.paths.cohort {
        vec![c.clone()]
    } else {
        return Err(CliError::Usage("no cohort given (--cohort, --batch or paths.cohort)".into()));
    };
    for d in &dirs {
        require_dir(d, "cohort")?;
    }
    let single = dirs.len() == 1;
    cfg.thread_pool()?.install(|| {
        dirs.par_iter()
            .try_for_each(|d| fit_one(&cfg, d, mode, single))
    })
}

fn fit_one(cfg: &RunConfig, dir: &Path, mode: ExposureMode, single: bool) -> Result<(), CliError> {
    let schema = cfg.schema()?;
    let cohort = load_cohort(dir, &schema)?;
    let registry = cfg.registry_for(Some(dir))?;
    let truth = if mode == ExposureMode::True {
        let path = match (&cfg.paths.truth, single) {
            (Some(p), true) => p.clone(),
            _ => dir.join(TRUTH_CSV),
        };
        require_file(&path, "truth")?;
        Some(read_true_exposure(&path, &cohort)?)
    } else {
        None
    };
    let problem = FitProblem::new(
        cohort,
        registry,
        cfg.model.kind,
        mode,
        cfg.model.exposure_unit,
        truth,
    )?;
    let out = match (&cfg.paths.output, single) {
        (Some(p), true) => p.clone(),
        _ => dir.join(format!("fit_{}", mode_name(mode))),
    };
    std::fs::create_dir_all(&out)?;
    let outputs = run_chains(&problem, &cfg.sampler, Some(&out))?;
    for o in &outputs {
        o.table.write_csv(&chain_file(&out, o.chain))?;
    }
    RunManifest::new(&problem, &cfg.sampler, &outputs).write_json(&out.join(MANIFEST_JSON))?;
    eprintln!("{}: {} chain(s) written to {}", dir.display(), outputs.len(), out.display());
    Ok(())
}

/// Manifest and chain tables of a finished fit.
pub fn read_fit(dir: &Path) -> Result<(RunManifest, Vec<SampleTable>), CliError> {
    require_dir(dir, "fit")?;
    let mpath = dir.join(MANIFEST_JSON);
    if !mpath.is_file() {
        return Err(CliError::Usage(format!("no fit manifest in {}", dir.display())));
    }
    let manifest = RunManifest::read_json(&mpath)?;
    let tables = manifest
        .chains
        .iter()
        .map(|c| SampleTable::read_csv(&chain_file(dir, c.chain)))
        .collect::<Result<Vec<_>, _>>()?;
    if tables.is_empty() {
        return Err(CliError::Usage(format!("fit in {} has no chains", dir.display())));
    }
    Ok((manifest, tables))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn diagnose(a: &FitDirArgs) -> Result<(), CliError> {
    let (_, tables) = read_fit(&a.fit)?;
    for (i, t) in tables.iter().enumerate() {
        if t.n_rows() != tables[0].n_rows() {
            return Err(DiagnosticsError::UnequalChains {
                chain: i,
                len: t.n_rows(),
                expected: tables[0].n_rows(),
            }
            .into());
        }
    }
    let mut w = csv::Writer::from_path(a.fit.join("diagnostics.csv"))?;
    w.write_record(["parameter", "r_hat", "converged"])?;
    let mut flagged = 0;
    for name in tables[0].columns.iter().filter(|c| *c != "iteration") {
        let chains: Vec<Vec<f64>> = tables
            .iter()
            .map(|t| t.column(name).unwrap_or_default())
            .collect();
        let r = match r_hat(&chains) {
            Ok(r) => Some(r),
            Err(DiagnosticsError::Degenerate) => None,
            Err(e) => return Err(e.into()),
        };
        let ok = r.is_none_or(|r| r < 1.05);
        if !ok {
            flagged += 1;
        }
        say!("{name:<24} {:>10}", r.map_or("-".into(), |r| format!("{r:.4}")));
        w.write_record([name.clone(), fmt_opt(r), (ok as u8).to_string()])?;
    }
    w.flush()?;
    if flagged > 0 {
        eprintln!("{flagged} parameter(s) with R-hat >= 1.05");
    }
    Ok(())
}

pub fn summarize(a: &SummarizeArgs) -> Result<(), CliError> {
    match (&a.fit, &a.batch) {
        (Some(dir), None) => summarize_fit(dir, a.out.as_deref()),
        (None, Some(root)) => summarize_batch(root, a.beta_true, a.out.as_deref()),
        _ => Err(CliError::Usage("give exactly one of --fit or --batch".into())),
    }
}

fn summarize_fit(dir: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (_, tables) = read_fit(dir)?;
    let reports = summarize_chains(&tables)?;
    let out = out.unwrap_or(dir);
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record(["parameter", "mean", "median", "hdi_low", "hdi_high", "n_draws", "r_hat"])?;
    say!(
        "{:<24} {:>11} {:>11} {:>11} {:>11} {:>8}",
        "parameter", "mean", "median", "hdi_low", "hdi_high", "r_hat"
    );
    for r in &reports {
        let s = &r.summary;
        w.write_record([
            s.parameter.clone(),
            s.mean.to_string(),
            s.median.to_string(),
            s.hdi_low.to_string(),
            s.hdi_high.to_string(),
            s.n_draws.to_string(),
            fmt_opt(r.r_hat),
        ])?;
        say!(
            "{:<24} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>8}",
            s.parameter,
            s.mean,
            s.median,
            s.hdi_low,
            s.hdi_high,
            r.r_hat.map_or("-".into(), |r| format!("{r:.3}"))
        );
    }
    w.flush()?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&reports)?)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchRow {
    pub mode: String,
    pub beta_true: f64,
    #[serde(flatten)]
    pub report: PerfReport,
}

fn beta_draws(tables: &[SampleTable], dir: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    tables
        .iter()
        .map(|t| {
            t.column("beta")
                .ok_or_else(|| CliError::Usage(format!("no beta column in {}", dir.display())))
        })
        .collect()
}

fn summarize_batch(root: &Path, beta_arg: Option<f64>, out: Option<&Path>) -> Result<(), CliError> {
    let reps = replicate_dirs(root)?;
    let beta_true = match beta_arg {
        Some(b) => b,
        None => {
            let mut values = Vec::new();
            for d in &reps {
                let p = d.join(SCENARIO_TOML);
                require_file(&p, "scenario")?;
                let sc = SimScenario::from_toml_str(&std::fs::read_to_string(&p)?)?;
                values.push(sc.beta_true);
            }
            if values.iter().any(|&b| b != values[0]) {
                return Err(CliError::Usage(
                    "replicates disagree on the true beta; pass --beta-true".into(),
                ));
            }
            values[0]
        }
    };
    let mut rows = Vec::new();
    for mode in [ExposureMode::Naive, ExposureMode::Corrected, ExposureMode::True] {
        let name = mode_name(mode);
        let mut fits = Vec::new();
        for d in &reps {
            let fd = d.join(format!("fit_{name}"));
            if fd.join(MANIFEST_JSON).is_file() {
                let (_, tables) = read_fit(&fd)?;
                fits.push(beta_draws(&tables, &fd)?);
            }
        }
        if fits.is_empty() {
            continue;
        }
        let report = score_replicates(&fits, beta_true)?;
        rows.push(BatchRow {
            mode: name.to_string(),
            beta_true,
            report,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("no fits found below {}", root.display())));
    }
    let out = out.unwrap_or(root);
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("perf_report.csv"))?;
    w.write_record([
        "mode",
        "beta_true",
        "n_datasets",
        "n_excluded",
        "bias",
        "bias_se",
        "relative_bias",
        "relative_bias_se",
        "mse",
        "mse_se",
        "coverage",
        "coverage_se",
    ])?;
    say!(
        "{:<10} {:>4} {:>18} {:>18} {:>20} {:>16}",
        "mode", "n", "bias", "rel. bias", "MSE", "coverage"
    );
    for row in &rows {
        let r = &row.report;
        w.write_record([
            row.mode.clone(),
            row.beta_true.to_string(),
            r.n_datasets.to_string(),
            r.n_excluded.to_string(),
            r.bias.to_string(),
            r.bias_se.to_string(),
            fmt_opt(r.relative_bias),
            fmt_opt(r.relative_bias_se),
            r.mse.to_string(),
            r.mse_se.to_string(),
            r.coverage.to_string(),
            r.coverage_se.to_string(),
        ])?;
        let rel = match (r.relative_bias, r.relative_bias_se) {
            (Some(v), Some(se)) => format!("{v:.3} ({se:.3})"),
            _ => "-".into(),
        };
        say!(
            "{:<10} {:>4} {:>18} {:>18} {:>20} {:>16}",
            row.mode,
            r.n_datasets,
            format!("{:.4} ({:.4})", r.bias, r.bias_se),
            rel,
            format!("{:.5} ({:.5})", r.mse, r.mse_se),
            format!("{:.2} ({:.2})", r.coverage, r.coverage_se),
        );
        if r.n_excluded > 0 {
            eprintln!("{}: {} replicate(s) excluded for non-finite draws", row.mode, r.n_excluded);
        }
    }
    w.flush()?;
    std::fs::write(out.join("perf_report.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

pub fn plot_data(a: &PlotArgs) -> Result<(), CliError> {
    let (_, tables) = read_fit(&a.fit)?;
    let params = if a.parameter.is_empty() {
        vec!["beta".to_string()]
    } else {
        a.parameter.clone()
    };
    let out = a.out.as_deref().unwrap_or(&a.fit);
    std::fs::create_dir_all(out)?;
    let mut wv = csv::Writer::from_path(out.join("violin.csv"))?;
    wv.write_record(["parameter", "x", "density"])?;
    let mut wt = csv::Writer::from_path(out.join("trace.csv"))?;
    wt.write_record(["parameter", "chain", "iteration", "value"])?;
    for p in &params {
        let tr = trace(&tables, p)?;
        let pooled: Vec<f64> = tr.iter().map(|t| t.value).collect();
        for v in violin(&pooled, a.grid)? {
            wv.write_record([p.clone(), v.x.to_string(), v.density.to_string()])?;
        }
        for t in tr {
            wt.write_record([
                p.clone(),
                t.chain.to_string(),
                t.iteration.to_string(),
                t.value.to_string(),
            ])?;
        }
    }
    wv.flush()?;
    wt.flush()?;
    Ok(())
}
