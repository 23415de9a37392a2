#![allow(dead_code)]

use berksurv::cohort::{
    build_cumulation, cumulate, Cohort, ExposureCell, ModelTag, ObservedInputs, PeriodIds,
    WorkerRecord,
};
use berksurv::disease::{BaselineHazard, DiseaseParams, HazardKind};
use berksurv::measurement::Registry;
use berksurv::sampler::{Chain, ExposureMode, FitProblem};
use berksurv::simgen::{generate, SimScenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bare_cell(worker_id: u64, year: i32) -> ExposureCell {
    ExposureCell {
        worker_id,
        year,
        object_id: 1,
        activity_id: 1,
        model: ModelTag::M0,
        time_fraction: 1.0,
        transfer_factor: 1.0,
        transferred: false,
        observed_exposure: 0.0,
        periods: PeriodIds::default(),
        observed: ObservedInputs::default(),
        aux: None,
    }
}

pub fn m2_cell(worker: u64, year: i32, object: u32, conc: f64) -> ExposureCell {
    let p = ((year - 1955) / 4) as u32 + 1;
    let mut c = bare_cell(worker, year);
    c.model = ModelTag::M2;
    c.object_id = object;
    c.time_fraction = 0.8;
    c.periods = PeriodIds {
        p_t: Some(p),
        p_to: Some(p * 10 + object),
        p_oj: Some(object),
    };
    c.observed = ObservedInputs {
        conc: Some(conc),
        phi: Some(0.7),
        omega: Some(1.0),
        gamma: Some(0.4),
        ..ObservedInputs::default()
    };
    c.observed_exposure = 12.0 * conc * 0.7 * 1.0 * 0.4 * 0.8;
    c
}

/// Random follow-up layout with gaps between working years; some workers
/// have no exposure at all and some exits fall between accruals.
pub fn random_cohort(rng: &mut ChaCha8Rng, max_workers: usize) -> Cohort {
    let n = rng.random_range(1..=max_workers);
    let mut workers = Vec::with_capacity(n);
    let mut cells = Vec::new();
    for i in 0..n {
        let id = i as u64 + 1;
        let birth = rng.random_range(1905.0..1950.0);
        let entry_age = rng.random_range(16.0..45.0);
        let exit_age: f64 = (entry_age + rng.random_range(0.5f64..70.0)).min(103.9);
        workers.push(WorkerRecord {
            worker_id: id,
            birth_year: birth,
            entry_age,
            exit_age,
            event: rng.random_bool(0.3),
            cells: 0..0,
        });
        let first = (birth + entry_age).ceil() as i32;
        let last = (birth + exit_age).floor() as i32;
        let mut y = first;
        let count = rng.random_range(0..25);
        for _ in 0..count {
            if y > last.min(1989) {
                break;
            }
            cells.push(bare_cell(id, y));
            y += rng.random_range(1..4);
        }
    }
    Cohort::new(workers, cells).expect("random layout is valid")
}

/// Running totals per worker, accumulated cell by cell.
pub fn naive_prefix(cohort: &Cohort, annual: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; annual.len()];
    for w in &cohort.workers {
        let mut acc = 0.0;
        for c in w.cells.clone() {
            acc += annual[c];
            out[c] = acc;
        }
    }
    out
}

/// Cohorts whose sparse cumulation differs bit-wise from the running totals,
/// out of `n` random cohorts.
pub fn cumulation_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let c = random_cohort(&mut rng, 60);
        let annual: Vec<f64> = (0..c.n_cells()).map(|_| rng.random_range(0.0..120.0)).collect();
        let plan = build_cumulation(&c.workers);
        if cumulate(&annual, &plan).unwrap() != naive_prefix(&c, &annual) {
            bad += 1;
        }
    }
    bad
}

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

fn baseline_rate(base: &BaselineHazard, age: f64) -> f64 {
    let k = base.breaks.windows(2).position(|w| age > w[0] && age <= w[1]).unwrap_or(0);
    base.rates[k]
}

/// Log-likelihood of one cohort by direct integration of the hazard over
/// follow-up. Cumulative exposure at age `a` is the sum of annual exposures
/// whose year ended before `a`.
pub fn quadrature_log_likelihood(
    cohort: &Cohort,
    annual: &[f64],
    params: &DiseaseParams,
    unit: f64,
) -> f64 {
    let base = &params.baseline;
    let mut ll = 0.0;
    for w in &cohort.workers {
        let accr: Vec<(f64, f64)> = w
            .cells
            .clone()
            .map(|c| (cohort.cells[c].year as f64 + 1.0 - w.birth_year, annual[c]))
            .collect();
        let x = |a: f64| accr.iter().filter(|(t, _)| *t < a).map(|(_, v)| v).sum::<f64>() / unit;
        let rel = |a: f64| match params.kind {
            HazardKind::Ph => (params.beta * x(a)).exp(),
            HazardKind::Ehr => 1.0 + params.beta * x(a),
        };
        let h = |a: f64| baseline_rate(base, a) * rel(a);
        let mut cuts: Vec<f64> = base
            .breaks
            .iter()
            .copied()
            .chain(accr.iter().map(|p| p.0))
            .filter(|&a| a > w.entry_age && a < w.exit_age)
            .collect();
        cuts.push(w.entry_age);
        cuts.push(w.exit_age);
        cuts.sort_by(f64::total_cmp);
        for s in cuts.windows(2) {
            let (lo, hi) = (s[0], s[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            ll -= half
                * GL_NODES
                    .iter()
                    .zip(GL_WEIGHTS)
                    .map(|(z, wt)| wt * h(mid + half * z))
                    .sum::<f64>();
        }
        if w.event {
            ll += h(w.exit_age).ln();
        }
    }
    ll
}

/// Worst relative gap between the sampler's cached log-likelihood and the
/// quadrature over `n` random small cohorts, alternating PH and EHR.
pub fn likelihood_vs_quadrature(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let c = random_cohort(&mut rng, 8);
        let annual: Vec<f64> = (0..c.n_cells()).map(|_| rng.random_range(0.0..80.0)).collect();
        let kind = if i % 2 == 0 { HazardKind::Ph } else { HazardKind::Ehr };
        let p = FitProblem::new(c.clone(), Registry::default(), kind, ExposureMode::True, 100.0, Some(annual.clone()))
            .unwrap();
        let mut st = berksurv::sampler::ChainState::init(&p).unwrap();
        st.disease.beta = rng.random_range(0.0..0.8);
        for r in st.disease.baseline.rates.iter_mut() {
            *r = rng.random_range(1e-4..0.08);
        }
        st.refresh(&p).unwrap();
        let q = quadrature_log_likelihood(&c, &annual, &st.disease, 100.0);
        worst = worst.max((st.log_lik - q).abs() / q.abs().max(1.0));
    }
    worst
}

/// Worst relative deviation of incrementally updated caches from a full
/// reconstruction over `moves` accepted factor-group moves.
pub fn rescale_vs_reconstruction(moves: usize, seed: u64) -> f64 {
    let sc = SimScenario {
        n_workers: 150,
        seed,
        ..SimScenario::default()
    };
    let ds = generate(&sc, &Registry::default()).unwrap();
    let p = FitProblem::new(ds.cohort, ds.fit_registry, HazardKind::Ph, ExposureMode::Corrected, 100.0, None)
        .unwrap();
    let mut ch = Chain::new(&p, seed, 0).unwrap();
    ch.state.disease.beta = 0.4;
    ch.state.refresh(&p).unwrap();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < moves {
        for k in 0..p.plans.len() {
            for g in 0..p.plans[k].group_workers.len() {
                if ch.update_block_group(k, g) {
                    n += 1;
                    worst = worst.max(ch.state.coherence_error(&p).unwrap());
                    let mut fresh = ch.state.clone();
                    fresh.refresh(&p).unwrap();
                    let d = (fresh.log_lik - ch.state.log_lik).abs() / fresh.log_lik.abs().max(1.0);
                    worst = worst.max(d);
                }
            }
        }
    }
    worst
}
