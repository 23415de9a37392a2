//! Three operations for the static page in `www/`: simulate a cohort, fit it
//! with and without correction, and summarise pasted draws.

use berksurv::diagnostics::{hdi, r_hat, violin, DiagnosticsError, ViolinPoint};
use berksurv::disease::HazardKind;
use berksurv::measurement::Registry;
use berksurv::sampler::{run_chain, ExposureMode, FitProblem, SamplerConfig, SamplerError};
use berksurv::simgen::{generate, SimDataset, SimError, SimScenario};
use serde::Serialize;
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("cannot parse `{0}` as a number")]
    Parse(String),
    #[error("{0}")]
    Input(String),
}

impl From<DemoError> for JsValue {
    fn from(e: DemoError) -> Self {
        JsValue::from_str(&e.to_string())
    }
}

const MAX_WORKERS: usize = 2000;

#[derive(Debug, Serialize)]
pub struct CohortStats {
    pub workers: usize,
    pub events: usize,
    pub exposed_years: usize,
    pub mean_observed_wlm: f64,
    pub mean_true_wlm: f64,
    /// `[model, cells]` per measurement model present.
    pub models: Vec<(String, usize)>,
}

fn dataset(workers: usize, beta: f64, seed: u64) -> Result<SimDataset, DemoError> {
    if workers == 0 || workers > MAX_WORKERS {
        return Err(DemoError::Input(format!("workers must be in 1..={MAX_WORKERS}")));
    }
    let sc = SimScenario {
        name: "demo".into(),
        beta_true: beta,
        n_workers: workers,
        seed,
        ..SimScenario::default()
    };
    sc.validate()?;
    Ok(generate(&sc, &Registry::default())?)
}

pub fn cohort_stats(workers: usize, beta: f64, seed: u64) -> Result<CohortStats, DemoError> {
    let ds = dataset(workers, beta, seed)?;
    let c = &ds.cohort;
    let per_worker = |annual: &[f64]| {
        c.workers.iter().map(|w| annual[w.cells.clone()].iter().sum::<f64>()).sum::<f64>()
            / c.workers.len() as f64
    };
    let mut models: Vec<(String, usize)> = Vec::new();
    for cell in &c.cells {
        let tag = cell.model.to_string();
        match models.iter_mut().find(|m| m.0 == tag) {
            Some(m) => m.1 += 1,
            None => models.push((tag, 1)),
        }
    }
    models.sort();
    Ok(CohortStats {
        workers: c.workers.len(),
        events: c.workers.iter().filter(|w| w.event).count(),
        exposed_years: c.n_cells(),
        mean_observed_wlm: per_worker(&c.observed_exposure()),
        mean_true_wlm: per_worker(&ds.truth.true_annual),
        models,
    })
}

#[derive(Debug, Serialize)]
pub struct ModeFit {
    pub mode: &'static str,
    pub mean: f64,
    pub hdi: (f64, f64),
    pub density: Vec<ViolinPoint>,
    pub trace: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub beta_true: f64,
    pub fits: Vec<ModeFit>,
}

/// Naive and corrected single-chain fits of one simulated cohort.
pub fn compare(workers: usize, beta: f64, seed: u64, iterations: usize) -> Result<Comparison, DemoError> {
    if !(100..=20_000).contains(&iterations) {
        return Err(DemoError::Input("iterations must be in 100..=20000".into()));
    }
    let ds = dataset(workers, beta, seed)?;
    let config = SamplerConfig {
        iterations,
        burnin: iterations / 2,
        thin: 5,
        n_adapt_phases: 10,
        adapt_phase_len: 50,
        n_chains: 1,
        seed,
        checkpoint_every: 0,
        ..SamplerConfig::default()
    };
    let mut fits = Vec::new();
    for (mode, name) in [(ExposureMode::Naive, "naive"), (ExposureMode::Corrected, "corrected")] {
        let p = FitProblem::new(ds.cohort.clone(), ds.fit_registry.clone(), HazardKind::Ph, mode, 100.0, None)?;
        let out = run_chain(&p, &config, 0, None)?;
        let draws = out.table.column("beta").expect("beta column");
        fits.push(ModeFit {
            mode: name,
            mean: draws.iter().sum::<f64>() / draws.len() as f64,
            hdi: hdi(&draws, 0.95)?,
            density: violin(&draws, 120)?,
            trace: draws,
        });
    }
    Ok(Comparison { beta_true: beta, fits })
}

#[derive(Debug, Serialize)]
pub struct DrawSummary {
    pub chains: usize,
    pub draws: usize,
    pub mean: f64,
    pub hdi: (f64, f64),
    pub r_hat: Option<f64>,
}

/// One chain per non-empty line; values separated by commas or whitespace.
pub fn summarize_text(text: &str, mass: f64) -> Result<DrawSummary, DemoError> {
    let chains: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| DemoError::Parse(s.into())))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let pooled = chains.concat();
    if pooled.is_empty() {
        return Err(DemoError::Input("no draws".into()));
    }
    let r = if chains.len() >= 2 { Some(r_hat(&chains)?) } else { None };
    Ok(DrawSummary {
        chains: chains.len(),
        draws: pooled.len(),
        mean: pooled.iter().sum::<f64>() / pooled.len() as f64,
        hdi: hdi(&pooled, mass)?,
        r_hat: r,
    })
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serialises")
}

#[wasm_bindgen]
pub fn simulate(workers: usize, beta: f64, seed: u32) -> Result<String, JsValue> {
    Ok(json(&cohort_stats(workers, beta, seed.into())?))
}

#[wasm_bindgen]
pub fn fit(workers: usize, beta: f64, seed: u32, iterations: usize) -> Result<String, JsValue> {
    Ok(json(&compare(workers, beta, seed.into(), iterations)?))
}

#[wasm_bindgen]
pub fn summarize(text: &str, mass: f64) -> Result<String, JsValue> {
    Ok(json(&summarize_text(text, mass)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_are_consistent() {
        let s = cohort_stats(60, 0.3, 4).unwrap();
        assert_eq!(s.workers, 60);
        assert_eq!(s.models.iter().map(|m| m.1).sum::<usize>(), s.exposed_years);
        assert!(s.mean_observed_wlm > 0.0 && s.mean_true_wlm > 0.0);
        assert!(cohort_stats(0, 0.3, 4).is_err());
    }

    #[test]
    fn compare_returns_both_modes() {
        let c = compare(60, 0.3, 2, 200).unwrap();
        assert_eq!(c.fits.len(), 2);
        for f in &c.fits {
            assert_eq!(f.trace.len(), 40);
            assert!(f.hdi.0 <= f.mean && f.mean <= f.hdi.1);
        }
        assert!(compare(60, 0.3, 2, 10).is_err());
    }

    #[test]
    fn summarize_parses_chains() {
        let s = summarize_text("1, 2 3 4\n\n5 6 7 8\n", 1.0).unwrap();
        assert_eq!((s.chains, s.draws), (2, 8));
        assert_eq!(s.hdi, (1.0, 8.0));
        assert!(s.r_hat.unwrap() > 1.0);
        assert!(matches!(summarize_text("1 x", 0.9), Err(DemoError::Parse(_))));
        assert!(summarize_text("  \n", 0.9).is_err());
    }
}
