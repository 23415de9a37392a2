//! Simulates one cohort and prints the β posterior of the true-exposure,
//! naive and corrected fits.
//!
//! cargo run --release -p berksurv --example compare -- [workers] [beta] [seed]

use berksurv::diagnostics::DatasetEstimate;
use berksurv::disease::HazardKind;
use berksurv::measurement::Registry;
use berksurv::sampler::{run_chains, ExposureMode, FitProblem, SamplerConfig};
use berksurv::simgen::{generate, SimScenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let workers = args.first().map_or(Ok(1000), |s| s.parse())?;
    let beta = args.get(1).map_or(Ok(0.3), |s| s.parse())?;
    let seed = args.get(2).map_or(Ok(1), |s| s.parse())?;
    let sc = SimScenario {
        n_workers: workers,
        beta_true: beta,
        seed,
        ..SimScenario::default()
    };
    let ds = generate(&sc, &Registry::default())?;
    let config = SamplerConfig {
        iterations: 3000,
        burnin: 1000,
        thin: 10,
        n_adapt_phases: 10,
        n_chains: 2,
        checkpoint_every: 0,
        ..SamplerConfig::default()
    };
    println!("true beta {beta}");
    for mode in [ExposureMode::True, ExposureMode::Naive, ExposureMode::Corrected] {
        let truth = (mode == ExposureMode::True).then(|| ds.truth.true_annual.clone());
        let p = FitProblem::new(ds.cohort.clone(), ds.fit_registry.clone(), HazardKind::Ph, mode, 100.0, truth)?;
        let out = run_chains(&p, &config, None)?;
        let chains: Vec<Vec<f64>> = out.iter().filter_map(|o| o.table.column("beta")).collect();
        match DatasetEstimate::from_chains(&chains)? {
            Some(e) => println!("{mode:?}: mean {:.3}, 95% HDI [{:.3}, {:.3}]", e.mean, e.hdi_low, e.hdi_high),
            None => println!("{mode:?}: non-finite draws"),
        }
    }
    Ok(())
}
