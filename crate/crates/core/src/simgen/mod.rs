//! Synthetic occupational cohorts with known true exposures.
//!
//! Workers are hired into one object and activity, work a random number of
//! years and are followed up to a fixed calendar year. Each (period, object)
//! is assessed with one measurement model drawn from the scenario mix. Factor
//! levels, classical errors and Berkson errors are drawn once per group of the
//! factor's domain and shared by every cell in that group.

mod survival;

pub use survival::{sample_exit, ExposureHistory};

use crate::cohort::{
    write_cohort, Cohort, CohortError, CohortSchema, ExposureCell, FactorDomain, M1aAux, ModelTag,
    ObservedInputs, PeriodIds, WorkerRecord,
};
use crate::disease::BaselineHazard;
use crate::dist::{moment_matched_lognormal, sample_truncated_normal_positive, DistSpec};
use crate::measurement::{
    reconstruct_exposure, ConcentrationFamily, ErrorForm, ErrorSpec, ExposureModel, FactorName,
    FactorSpec, MeasurementError, Registry, N_FACTORS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("empty domain: {0}")]
    EmptyDomain(String),
    #[error("unknown misspecification flag `{0}`")]
    UnknownFlag(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::ser::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Relative frequency of each measurement model among (period, object) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMix {
    pub m1a: f64,
    pub m2: f64,
    pub m2_expert: f64,
    pub m3: f64,
    pub m4: f64,
}

impl Default for ModelMix {
    fn default() -> Self {
        ModelMix {
            m1a: 0.1,
            m2: 0.4,
            m2_expert: 0.15,
            m3: 0.2,
            m4: 0.15,
        }
    }
}

impl ModelMix {
    fn entries(&self) -> [(ModelTag, f64); 5] {
        [
            (ModelTag::M1a, self.m1a),
            (ModelTag::M2, self.m2),
            (ModelTag::M2Expert, self.m2_expert),
            (ModelTag::M3, self.m3),
            (ModelTag::M4, self.m4),
        ]
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelTag {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (tag, w) in self.entries() {
            acc += w;
            if u < acc {
                return tag;
            }
        }
        ModelTag::M4
    }
}

pub const SWAP_NORMAL_LOGNORMAL: &str = "swap_normal_lognormal";
pub const FORCE_UNIFORM_BETA: &str = "force_uniform_beta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub name: String,
    pub beta_true: f64,
    pub n_workers: usize,
    pub mix: ModelMix,
    /// Probability that a working year carries no radon exposure (M0).
    pub unexposed_fraction: f64,
    pub first_year: i32,
    pub last_year: i32,
    pub period_length: i32,
    pub n_objects: u32,
    pub n_activities: u32,
    /// Hire age range.
    pub entry_age: [f64; 2],
    /// Inclusive range of employment durations in years.
    pub employment_years: [u32; 2],
    pub time_fraction: [f64; 2],
    /// Follow-up ends at the start of this calendar year.
    pub follow_up_end: f64,
    /// Shape (a, b) of scaled-beta factors at generation.
    pub generation_shape: [f64; 2],
    /// Multiplies every error sd of the generation registry.
    pub error_scale: f64,
    pub exposure_unit: f64,
    /// Fit-time registry changes; see [`apply_misspecification`].
    pub misspecification: Vec<String>,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            name: "S1".into(),
            beta_true: 0.3,
            n_workers: 1000,
            mix: ModelMix::default(),
            unexposed_fraction: 0.1,
            first_year: 1946,
            last_year: 1989,
            period_length: 4,
            n_objects: 6,
            n_activities: 3,
            entry_age: [18.0, 40.0],
            employment_years: [1, 20],
            time_fraction: [0.5, 1.0],
            follow_up_end: 2019.0,
            generation_shape: [3.0, 3.0],
            error_scale: 1.0,
            exposure_unit: 100.0,
            misspecification: Vec::new(),
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if self.n_workers == 0 {
            return bad("n_workers must be positive".into());
        }
        let w = self.mix.entries();
        if w.iter().any(|e| !(e.1 >= 0.0)) {
            return bad("mix weights must be non-negative".into());
        }
        let s: f64 = w.iter().map(|e| e.1).sum();
        if (s - 1.0).abs() > 1e-9 {
            return bad(format!("mix weights sum to {s}, not 1"));
        }
        if !(0.0..1.0).contains(&self.unexposed_fraction) {
            return bad("unexposed_fraction must lie in [0, 1)".into());
        }
        if self.first_year > self.last_year || self.period_length < 1 {
            return bad("empty calendar layout".into());
        }
        if self.n_objects == 0 || self.n_activities == 0 {
            return bad("n_objects and n_activities must be positive".into());
        }
        if !(self.entry_age[0] >= 0.0 && self.entry_age[0] <= self.entry_age[1]) {
            return bad("entry_age range invalid".into());
        }
        if self.employment_years[0] == 0 || self.employment_years[0] > self.employment_years[1] {
            return bad("employment_years range invalid".into());
        }
        if !(self.time_fraction[0] > 0.0 && self.time_fraction[0] <= self.time_fraction[1]) {
            return bad("time_fraction range invalid".into());
        }
        if self.follow_up_end <= f64::from(self.last_year) + 1.0 {
            return bad("follow-up must end after the last exposure year".into());
        }
        if !(self.error_scale >= 0.0 && self.exposure_unit > 0.0) {
            return bad("error_scale must be >= 0 and exposure_unit > 0".into());
        }
        if self.generation_shape.iter().any(|&v| !(v > 0.0)) {
            return bad("generation_shape must be positive".into());
        }
        if self.seed > i64::MAX as u64 {
            return bad("seed must be below 2^63".into());
        }
        for f in &self.misspecification {
            if f != SWAP_NORMAL_LOGNORMAL && f != FORCE_UNIFORM_BETA {
                return Err(SimError::UnknownFlag(f.clone()));
            }
        }
        Ok(())
    }

    /// Replicate `r` of this scenario with its own derived seed, kept below
    /// 2⁶³ so it stays a valid TOML integer.
    pub fn replicate(&self, r: u64) -> SimScenario {
        let mut s = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(r + 1);
        s.seed = rng.random::<u64>() >> 1;
        s
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let sc: SimScenario = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> Result<String, SimError> {
        Ok(toml::to_string(self)?)
    }
}

/// Scales every error sd of `registry` by `k`.
pub fn scale_errors(registry: &Registry, k: f64) -> Registry {
    let mut r = registry.clone();
    for f in r.factors.iter_mut() {
        f.classical.sd *= k;
        f.berkson.sd *= k;
    }
    r
}

/// Fit-time registry for the scenario's misspecification flags.
pub fn apply_misspecification(registry: &Registry, flags: &[String]) -> Result<Registry, SimError> {
    let mut r = registry.clone();
    for flag in flags {
        match flag.as_str() {
            SWAP_NORMAL_LOGNORMAL => {
                for f in r.factors.iter_mut() {
                    if let ExposureModel::YearlyConcentration { family, .. } = &mut f.exposure_model {
                        *family = match family {
                            ConcentrationFamily::TruncatedNormal => ConcentrationFamily::Lognormal,
                            ConcentrationFamily::Lognormal => ConcentrationFamily::TruncatedNormal,
                        };
                    }
                }
            }
            FORCE_UNIFORM_BETA => {
                for f in r.factors.iter_mut() {
                    if let ExposureModel::ScaledBeta { fixed_shape, .. } = &mut f.exposure_model {
                        *fixed_shape = Some([1.0, 1.0]);
                    }
                }
            }
            other => return Err(SimError::UnknownFlag(other.to_string())),
        }
    }
    Ok(r)
}

/// Draws of one factor block, keyed by the domain's group labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBlock {
    pub model: ModelTag,
    pub factor: FactorName,
    pub classical_keys: Vec<String>,
    pub levels: Vec<f64>,
    pub classical_errors: Vec<f64>,
    pub observed: Vec<f64>,
    pub berkson_keys: Vec<String>,
    pub berkson_parent: Vec<usize>,
    pub berkson_errors: Vec<f64>,
}

/// Everything drawn for one synthetic data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub blocks: Vec<TruthBlock>,
    /// Per cell of the emitted cohort (global order).
    pub true_annual: Vec<f64>,
    pub true_cumulative: Vec<f64>,
}

/// A generated data set.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub scenario: SimScenario,
    pub cohort: Cohort,
    pub truth: SimTruth,
    /// Registry the data were generated under.
    pub generation_registry: Registry,
    /// Registry the corrected model is fitted with.
    pub fit_registry: Registry,
}

fn unit_lognormal<R: Rng + ?Sized>(sd: f64, rng: &mut R) -> f64 {
    if sd == 0.0 {
        return 1.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    (sd * z - 0.5 * sd * sd).exp()
}

fn draw_level<R: Rng + ?Sized>(
    spec: &FactorSpec,
    shape: [f64; 2],
    rng: &mut R,
) -> Result<f64, SimError> {
    Ok(match &spec.exposure_model {
        ExposureModel::Fixed { dist } => dist.sample(rng),
        ExposureModel::YearlyConcentration {
            family,
            mu_prior,
            sigma_prior,
        } => {
            let (mu, sigma) = (mu_prior.mean(), sigma_prior.mean());
            match family {
                ConcentrationFamily::TruncatedNormal => sample_truncated_normal_positive(mu, sigma, rng),
                ConcentrationFamily::Lognormal => {
                    let (m, s) = moment_matched_lognormal(mu, sigma).ok_or_else(|| {
                        SimError::Scenario(format!("{}: no log-normal with mean {mu}", spec.name))
                    })?;
                    DistSpec::Lognormal { log_mean: m, log_sd: s }.sample(rng)
                }
            }
        }
        ExposureModel::ScaledBeta {
            lo, up, fixed_shape, ..
        } => {
            let [a, b] = fixed_shape.unwrap_or(shape);
            DistSpec::ScaledBeta { lo: *lo, up: *up, a, b }.sample(rng)
        }
    })
}

/// observed = level ⊕ classical error; additive draws are repeated until the
/// observed value is positive.
fn draw_observed<R: Rng + ?Sized>(err: &ErrorSpec, level: f64, rng: &mut R) -> (f64, f64) {
    match err.form {
        ErrorForm::None => (level, err.identity()),
        _ if err.sd == 0.0 => (level, err.identity()),
        ErrorForm::MultiplicativeLognormal => {
            let u = unit_lognormal(err.sd, rng);
            (level * u, u)
        }
        ErrorForm::AdditiveNormal => loop {
            let z: f64 = rng.sample(StandardNormal);
            let e = err.sd * z;
            if level + e > 0.0 {
                break (level + e, e);
            }
        },
    }
}

struct Plan {
    birth_year: f64,
    entry_age: f64,
    object: u32,
    activity: u32,
    years: Vec<(i32, bool)>,
}

fn set_observed(cell: &mut ExposureCell, f: FactorName, v: f64) {
    let o = &mut cell.observed;
    let slot = match f {
        FactorName::CRn | FactorName::CExp | FactorName::CRdp | FactorName::E => &mut o.conc,
        FactorName::B => &mut o.b,
        FactorName::TauE => &mut o.tau_e,
        FactorName::Varsigma => &mut o.varsigma,
        FactorName::Phi => &mut o.phi,
        FactorName::Omega => &mut o.omega,
        FactorName::Gamma => &mut o.gamma,
        FactorName::CRef => &mut o.conc_ref,
        FactorName::C1937 => &mut o.conc_1937,
    };
    *slot = Some(v);
}

/// Cohort structure, factor draws and observed/true annual exposures, before
/// survival times are known. Cells cover the whole planned employment.
pub fn generate_cohort(
    scenario: &SimScenario,
    registry: &Registry,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<WorkerRecord>, Vec<ExposureCell>, Vec<f64>, Vec<TruthBlock>), SimError> {
    scenario.validate()?;
    let sc = scenario;
    let n_periods = ((sc.last_year - sc.first_year) / sc.period_length + 1) as u32;
    let period_of = |y: i32| ((y - sc.first_year) / sc.period_length) as u32;
    let mut period_model = Vec::new();
    for _ in 0..n_periods {
        for _ in 0..sc.n_objects {
            period_model.push(sc.mix.draw(rng));
        }
    }
    let mut plans = Vec::with_capacity(sc.n_workers);
    for _ in 0..sc.n_workers {
        let hire = rng.random_range(sc.first_year..=sc.last_year);
        let entry_age = rng.random_range(sc.entry_age[0]..=sc.entry_age[1]);
        let frac: f64 = rng.random();
        let dur = rng.random_range(sc.employment_years[0]..=sc.employment_years[1]) as i32;
        let object = rng.random_range(1..=sc.n_objects);
        let activity = rng.random_range(1..=sc.n_activities);
        let years = (hire..(hire + dur).min(sc.last_year + 1))
            .map(|y| (y, rng.random::<f64>() >= sc.unexposed_fraction))
            .collect();
        plans.push(Plan {
            birth_year: f64::from(hire) + frac - entry_age,
            entry_age,
            object,
            activity,
            years,
        });
    }
    // Yearly M1a auxiliary series per (year, object).
    let n_years = (sc.last_year - sc.first_year + 1) as usize;
    let aux_series: Vec<(f64, f64)> = (0..n_years * sc.n_objects as usize)
        .map(|_| (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)))
        .collect();

    let mut workers = Vec::with_capacity(plans.len());
    let mut cells = Vec::new();
    let placeholder = ObservedInputs {
        conc: Some(1.0),
        phi: Some(1.0),
        omega: Some(1.0),
        gamma: Some(1.0),
        varsigma: Some(1.0),
        b: Some(1.0),
        tau_e: Some(1.0),
        conc_ref: Some(1.0),
        conc_1937: Some(1.0),
    };
    for (i, p) in plans.iter().enumerate() {
        let id = i as u64 + 1;
        let censor = (sc.follow_up_end - p.birth_year).min(104.0);
        workers.push(WorkerRecord {
            worker_id: id,
            birth_year: p.birth_year,
            entry_age: p.entry_age,
            exit_age: censor,
            event: false,
            cells: 0..0,
        });
        for &(year, exposed) in &p.years {
            let pt = period_of(year);
            let model = if exposed {
                period_model[(pt * sc.n_objects + p.object - 1) as usize]
            } else {
                ModelTag::M0
            };
            let yi = (year - sc.first_year) as usize * sc.n_objects as usize + p.object as usize - 1;
            cells.push(ExposureCell {
                worker_id: id,
                year,
                object_id: p.object,
                activity_id: p.activity,
                model,
                time_fraction: if model == ModelTag::M0 {
                    0.0
                } else {
                    rng.random_range(sc.time_fraction[0]..=sc.time_fraction[1])
                },
                transfer_factor: 1.0,
                transferred: false,
                observed_exposure: 0.0,
                periods: if model == ModelTag::M0 {
                    PeriodIds::default()
                } else {
                    PeriodIds {
                        p_t: Some(pt + 1),
                        p_to: Some(pt * sc.n_objects + p.object),
                        p_oj: Some((p.object - 1) * sc.n_activities + p.activity),
                    }
                },
                observed: if model == ModelTag::M0 {
                    ObservedInputs::default()
                } else {
                    placeholder
                },
                aux: (model == ModelTag::M1a).then(|| M1aAux {
                    ref_object: 1,
                    r: aux_series[yi].0,
                    a_to: aux_series[yi].1,
                    a_ref: 1.0,
                }),
            });
        }
    }
    let cohort = Cohort::new(workers, cells)?;

    let mut true_values = vec![[None; N_FACTORS]; cohort.n_cells()];
    let mut blocks = Vec::new();
    let mut cells = cohort.cells.clone();
    for tag in ModelTag::WITH_ERROR {
        let idx = cohort.cells_of(tag);
        if idx.is_empty() {
            continue;
        }
        for &name in registry.factors_of(tag) {
            let spec = registry.spec(name)?;
            let d = FactorDomain::build(&cohort, &idx, spec.classical_domain, spec.berkson_domain)?;
            if d.n_classical() == 0 {
                return Err(SimError::EmptyDomain(format!("{tag}.{name}")));
            }
            let mut levels = Vec::with_capacity(d.n_classical());
            let mut errors = Vec::with_capacity(d.n_classical());
            let mut observed = Vec::with_capacity(d.n_classical());
            for _ in 0..d.n_classical() {
                let level = draw_level(spec, sc.generation_shape, rng)?;
                let (obs, e) = draw_observed(&spec.classical, level, rng);
                levels.push(level);
                errors.push(e);
                observed.push(obs);
            }
            let berkson_errors: Vec<f64> = (0..d.n_berkson())
                .map(|b| {
                    let active = spec.berkson.form == ErrorForm::MultiplicativeLognormal
                        && (!spec.berkson_transferred_only || d.berkson_transferred[b]);
                    if active {
                        unit_lognormal(spec.berkson.sd, rng)
                    } else {
                        1.0
                    }
                })
                .collect();
            for (pos, &ci) in d.cells.iter().enumerate() {
                let b = d.cell_berkson[pos];
                let g = d.berkson_parent[b];
                true_values[ci][name.index()] = Some(levels[g] * berkson_errors[b]);
                set_observed(&mut cells[ci], name, observed[g]);
            }
            blocks.push(TruthBlock {
                model: tag,
                factor: name,
                classical_keys: d.classical_keys.iter().map(|k| k.to_string()).collect(),
                levels,
                classical_errors: errors,
                observed,
                berkson_keys: d.berkson_keys.iter().map(|k| k.to_string()).collect(),
                berkson_parent: d.berkson_parent.clone(),
                berkson_errors,
            });
        }
    }
    let mut true_annual = vec![0.0; cells.len()];
    for (ci, cell) in cells.iter_mut().enumerate() {
        if cell.model == ModelTag::M0 {
            continue;
        }
        let obs = crate::measurement::observed_values(cell, registry);
        cell.observed_exposure = reconstruct_exposure(cell.model, cell, &obs)?;
        true_annual[ci] = reconstruct_exposure(cell.model, cell, &true_values[ci])?;
    }
    Ok((cohort.workers, cells, true_annual, blocks))
}

/// Exit ages and event indicators under the PH model with the true exposures.
/// `cells` must be grouped by worker in `workers`' cell ranges.
pub fn generate_survival(
    beta_true: f64,
    exposure_unit: f64,
    baseline: &BaselineHazard,
    workers: &[WorkerRecord],
    cells: &[ExposureCell],
    true_annual: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, bool)> {
    workers
        .iter()
        .map(|w| {
            let mut acc = 0.0;
            let steps = w
                .cells
                .clone()
                .map(|c| {
                    acc += true_annual[c];
                    (w.accrual_age(cells[c].year), acc / exposure_unit)
                })
                .collect();
            let h = ExposureHistory {
                entry_age: w.entry_age,
                censor_age: w.exit_age,
                steps,
            };
            sample_exit(beta_true, baseline, &h, rng)
        })
        .collect()
}

/// Generates one complete data set: cohort, survival, truth and registries.
pub fn generate(scenario: &SimScenario, base_registry: &Registry) -> Result<SimDataset, SimError> {
    scenario.validate()?;
    let generation_registry = scale_errors(base_registry, scenario.error_scale);
    let fit_registry = apply_misspecification(base_registry, &scenario.misspecification)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let (mut workers, cells, true_annual, blocks) =
        generate_cohort(scenario, &generation_registry, &mut rng)?;
    let baseline = BaselineHazard::default();
    let exits = generate_survival(
        scenario.beta_true,
        scenario.exposure_unit,
        &baseline,
        &workers,
        &cells,
        &true_annual,
        &mut rng,
    );
    let mut kept_cells = Vec::with_capacity(cells.len());
    let mut kept_truth = Vec::with_capacity(cells.len());
    for (w, (exit, event)) in workers.iter_mut().zip(exits) {
        w.exit_age = exit;
        w.event = event;
        let last_year = (w.birth_year + exit).floor() as i32;
        for c in w.cells.clone() {
            if cells[c].year <= last_year {
                kept_cells.push(cells[c].clone());
                kept_truth.push(true_annual[c]);
            }
        }
    }
    let cohort = Cohort::new(workers, kept_cells)?;
    let cum = crate::cohort::cumulate(&kept_truth, &crate::cohort::build_cumulation(&cohort.workers))
        .expect("cumulation matches cells");
    Ok(SimDataset {
        scenario: scenario.clone(),
        cohort,
        truth: SimTruth {
            blocks,
            true_annual: kept_truth,
            true_cumulative: cum,
        },
        generation_registry,
        fit_registry,
    })
}

pub const TRUTH_CSV: &str = "truth.csv";
pub const TRUTH_JSON: &str = "truth.json";
pub const SCENARIO_TOML: &str = "scenario.toml";
pub const FIT_REGISTRY_TOML: &str = "fit_registry.toml";
pub const GENERATION_REGISTRY_TOML: &str = "generation_registry.toml";

impl SimDataset {
    /// Writes cohort files, truth files, the scenario and both registries.
    pub fn write(&self, dir: &Path, schema: &CohortSchema) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        write_cohort(&self.cohort, dir, schema)?;
        let mut w = csv::Writer::from_path(dir.join(TRUTH_CSV))?;
        w.write_record(["worker_id", "year", "true_exposure", "true_cumulative"])?;
        for (i, c) in self.cohort.cells.iter().enumerate() {
            w.write_record([
                c.worker_id.to_string(),
                c.year.to_string(),
                self.truth.true_annual[i].to_string(),
                self.truth.true_cumulative[i].to_string(),
            ])?;
        }
        w.flush()?;
        std::fs::write(dir.join(TRUTH_JSON), serde_json::to_string(&self.truth)?)?;
        std::fs::write(dir.join(SCENARIO_TOML), self.scenario.to_toml()?)?;
        std::fs::write(dir.join(FIT_REGISTRY_TOML), self.fit_registry.to_toml())?;
        std::fs::write(
            dir.join(GENERATION_REGISTRY_TOML),
            self.generation_registry.to_toml(),
        )?;
        Ok(())
    }
}

/// Reads the true annual exposure of every cell of `cohort` from a truth CSV.
pub fn read_true_exposure(path: &Path, cohort: &Cohort) -> Result<Vec<f64>, SimError> {
    let mut by_key = std::collections::HashMap::new();
    let mut r = csv::Reader::from_path(path)?;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |field: &str| {
            SimError::Scenario(format!(
                "{}: row {}: bad field `{field}`",
                path.display(),
                row + 2
            ))
        };
        let id: u64 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("worker_id"))?;
        let year: i32 = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("year"))?;
        let x: f64 = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("true_exposure"))?;
        by_key.insert((id, year), x);
    }
    cohort
        .cells
        .iter()
        .map(|c| {
            by_key.get(&(c.worker_id, c.year)).copied().ok_or_else(|| {
                SimError::Scenario(format!(
                    "{}: no true exposure for worker {} year {}",
                    path.display(),
                    c.worker_id,
                    c.year
                ))
            })
        })
        .collect()
}
