//! Component-wise Metropolis–Hastings sampler for the joint disease and
//! measurement-error posterior.
//!
//! One sweep updates β, λ_1..λ_4, then every classical group of every factor
//! block (models in [`ModelTag::WITH_ERROR`] order, factors in registry
//! order), then per-year concentration hyperparameters and finally the shared
//! scaled-beta shapes. In naive and true-exposure fits only the disease
//! parameters move.

mod table;

pub use table::SampleTable;

use crate::cohort::{build_cumulation, cumulate, Cohort, ModelTag, SparseBinaryMatrix};
use crate::disease::{
    log_prior, BaselineHazard, DiseaseError, DiseaseParams, HazardKind, LikelihoodTotals,
    SurvivalDesign, WorkerTerms, N_PIECES,
};
use crate::dist::{
    gamma_ln_pdf, ln_norm_cdf, normal_ln_pdf, sample_truncated_normal_positive,
};
use crate::measurement::{
    berkson_error_ln, classical_ln, concentration_ln_pdf, log_measurement_density,
    shape_hyper_ln, ErrorForm, ExposureModel, MeasurementError, MeasurementState, Registry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("non-finite posterior at initialization in {block}: {message}")]
    Init { block: String, message: String },
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("sample table: {0}")]
    Table(String),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Disease(#[from] DiseaseError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Sampling iterations after burnin.
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub n_adapt_phases: usize,
    pub adapt_phase_len: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    /// Write a resumable checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Recompute every cache from scratch every this many iterations.
    pub refresh_every: usize,
    /// Add per-year μ(t), σ(t) columns to the sample table.
    pub record_year_hypers: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 100_000,
            burnin: 50_000,
            thin: 200,
            n_adapt_phases: 100,
            adapt_phase_len: 50,
            n_chains: 8,
            seed: 1,
            target_acceptance: 0.44,
            checkpoint_every: 5_000,
            refresh_every: 1_000,
            record_year_hypers: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::Config(m.into()));
        if self.iterations == 0 || self.thin == 0 || self.n_chains == 0 {
            return bad("iterations, thin and n_chains must be positive");
        }
        if self.iterations % self.thin != 0 {
            return bad("thin must divide iterations");
        }
        if self.n_adapt_phases > 0 && self.adapt_phase_len == 0 {
            return bad("adapt_phase_len must be positive when adapting");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return bad("target_acceptance must lie in (0, 1)");
        }
        if self.refresh_every == 0 {
            return bad("refresh_every must be positive");
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.n_adapt_phases * self.adapt_phase_len + self.burnin + self.iterations
    }

    pub fn retained_per_chain(&self) -> usize {
        self.iterations / self.thin
    }
}

/// Where annual exposures come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureMode {
    /// Latent exposures reconstructed from the factor blocks.
    Corrected,
    /// The observed JEM exposures, no correction.
    Naive,
    /// Known true exposures (simulation reference fit).
    True,
}

/// Precomputed index for updating one factor block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    /// Berkson groups of each classical group.
    pub children: Vec<Vec<usize>>,
    /// Global cell indices of each Berkson group.
    pub berkson_cells: Vec<Vec<usize>>,
    /// Workers touched by each classical group, with the first local design
    /// step whose cumulative exposure changes.
    pub group_workers: Vec<Vec<Touch>>,
    /// Base log-scale step for the level and for Berkson errors.
    pub level_step: f64,
    pub berkson_step: f64,
    /// Whether the factor sits in the M1a additive bracket.
    pub bracket: bool,
}

/// Immutable inputs shared by every chain of a fit.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub cohort: Cohort,
    pub registry: Registry,
    pub kind: HazardKind,
    pub baseline: BaselineHazard,
    pub beta_prior_sd: f64,
    /// Cumulative exposure enters the hazard in multiples of this many WLM.
    pub exposure_unit: f64,
    pub mode: ExposureMode,
    pub design: SurvivalDesign,
    pub cumulation: SparseBinaryMatrix,
    pub owner: Vec<usize>,
    /// Step index (into the design) at which each cell's exposure takes effect.
    pub cell_step: Vec<usize>,
    /// Design steps with any time at risk.
    pub step_active: Vec<bool>,
    pub fixed_annual: Option<Vec<f64>>,
    pub measurement: MeasurementState,
    pub plans: Vec<BlockPlan>,
}

impl FitProblem {
    /// `true_annual` is required for [`ExposureMode::True`] and ignored otherwise.
    pub fn new(
        cohort: Cohort,
        registry: Registry,
        kind: HazardKind,
        mode: ExposureMode,
        exposure_unit: f64,
        true_annual: Option<Vec<f64>>,
    ) -> Result<Self, SamplerError> {
        if !(exposure_unit > 0.0) {
            return Err(SamplerError::Config("exposure_unit must be positive".into()));
        }
        let baseline = BaselineHazard::default();
        let design = SurvivalDesign::from_cohort(&cohort, &baseline)?;
        let cumulation = build_cumulation(&cohort.workers);
        let owner = cohort.cell_owner();
        let mut cell_step = vec![0; cohort.n_cells()];
        for (i, w) in cohort.workers.iter().enumerate() {
            for (j, c) in w.cells.clone().enumerate() {
                cell_step[c] = design.step_offset[i] + j + 1;
            }
        }
        let step_active = design
            .durations
            .iter()
            .map(|d| d.iter().any(|&v| v != 0.0))
            .collect();
        let fixed_annual = match mode {
            ExposureMode::Corrected => None,
            ExposureMode::Naive => Some(cohort.observed_exposure()),
            ExposureMode::True => {
                let v = true_annual.ok_or_else(|| {
                    SamplerError::Config("true-exposure fit needs true annual exposures".into())
                })?;
                if v.len() != cohort.n_cells() {
                    return Err(SamplerError::Config(format!(
                        "{} true exposures for {} cells",
                        v.len(),
                        cohort.n_cells()
                    )));
                }
                Some(v)
            }
        };
        let measurement = if mode == ExposureMode::Corrected {
            MeasurementState::build(&cohort, &registry)?
        } else {
            MeasurementState {
                blocks: Vec::new(),
                shapes: Vec::new(),
                bracket_links: vec![None; cohort.n_cells()],
            }
        };
        let plans = measurement
            .blocks
            .iter()
            .map(|b| {
                let d = &b.domain;
                let children = d.berkson_children();
                let berkson_cells: Vec<Vec<usize>> = d
                    .berkson_cell_positions()
                    .into_iter()
                    .map(|ps| ps.into_iter().map(|p| d.cells[p]).collect())
                    .collect();
                let group_workers = children
                    .iter()
                    .map(|ch| {
                        let mut ws: Vec<(usize, usize)> = ch
                            .iter()
                            .flat_map(|&bg| {
                                berkson_cells[bg].iter().map(|&c| {
                                    let w = owner[c];
                                    (w, cell_step[c] - design.step_offset[w])
                                })
                            })
                            .collect();
                        ws.sort_unstable();
                        let mut touches: Vec<Touch> = Vec::new();
                        for (w, step) in ws {
                            match touches.last_mut() {
                                Some(t) if t.worker == w => t.to = step,
                                _ => touches.push(Touch {
                                    worker: w,
                                    from: step,
                                    to: step,
                                }),
                            }
                        }
                        touches
                    })
                    .collect();
                let c = &b.spec.classical;
                let level_step = match c.form {
                    ErrorForm::MultiplicativeLognormal => c.sd,
                    ErrorForm::AdditiveNormal => {
                        let mean_obs =
                            b.observed.iter().map(|o| o.abs()).sum::<f64>() / b.observed.len() as f64;
                        (c.sd / mean_obs.max(1e-12)).clamp(0.005, 1.0)
                    }
                    ErrorForm::None => 0.1,
                };
                BlockPlan {
                    children,
                    berkson_cells,
                    group_workers,
                    level_step: level_step.min(1.0),
                    berkson_step: b.spec.berkson.sd,
                    bracket: b.model == ModelTag::M1a && b.factor.in_m1a_bracket(),
                }
            })
            .collect();
        Ok(FitProblem {
            cohort,
            registry,
            kind,
            baseline,
            beta_prior_sd: 100.0,
            exposure_unit,
            mode,
            design,
            cumulation,
            owner,
            cell_step,
            step_active,
            fixed_annual,
            measurement,
            plans,
        })
    }

    pub fn updates_exposure(&self) -> bool {
        self.mode == ExposureMode::Corrected
    }

    pub fn initial_disease(&self) -> DiseaseParams {
        let mut baseline = self.baseline.clone();
        baseline.rates = baseline.priors.map(|p| p.shape * p.scale);
        DiseaseParams {
            beta: 0.0,
            baseline,
            kind: self.kind,
            beta_prior_sd: self.beta_prior_sd,
        }
    }

    pub fn block_label(&self, k: usize) -> String {
        let b = &self.measurement.blocks[k];
        format!("{}.{}", b.model, b.factor)
    }
}

/// Chain-local mutable state with coherent likelihood caches.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub disease: DiseaseParams,
    pub meas: MeasurementState,
    /// Annual exposure per cell, WLM.
    pub annual: Vec<f64>,
    /// Cumulative exposure per design step, in exposure units.
    pub x_steps: Vec<f64>,
    /// Relative hazard per design step (0 on steps without time at risk).
    pub g_steps: Vec<f64>,
    pub terms: Vec<WorkerTerms>,
    pub totals: LikelihoodTotals,
    pub log_lik: f64,
}

fn prefix_worker(problem: &FitProblem, annual: &[f64], x_steps: &mut [f64], w: usize) {
    let worker = &problem.cohort.workers[w];
    let off = problem.design.step_offset[w];
    let mut acc = 0.0;
    x_steps[off] = 0.0;
    for (j, c) in worker.cells.clone().enumerate() {
        acc += annual[c];
        x_steps[off + j + 1] = acc / problem.exposure_unit;
    }
}

/// Worker whose local steps `from..=to` see changed annual exposure; later
/// steps shift by a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Touch {
    pub worker: usize,
    pub from: usize,
    pub to: usize,
}

/// Likelihood terms of worker `w` from scratch, filling its `g` steps.
fn full_terms(
    problem: &FitProblem,
    params: &DiseaseParams,
    x_steps: &[f64],
    g_steps: &mut [f64],
    w: usize,
) -> Result<WorkerTerms, DiseaseError> {
    let d = &problem.design;
    let mut exposure_time = [0.0; N_PIECES];
    for s in d.step_offset[w]..d.step_offset[w + 1] {
        if problem.step_active[s] {
            let g = params.kind.relative(params.beta, x_steps[s])?;
            g_steps[s] = g;
            for k in 0..N_PIECES {
                exposure_time[k] += g * d.durations[s][k];
            }
        } else {
            g_steps[s] = 0.0;
        }
    }
    let event_ln = match d.event_at[w] {
        Some((step, piece)) => Some((
            piece,
            params.kind.ln_relative(params.beta, x_steps[d.step_offset[w] + step])?,
        )),
        None => None,
    };
    Ok(WorkerTerms {
        exposure_time,
        event_ln,
    })
}

/// Updates a touched worker's terms, adjusting `g_steps` in place. `shift`
/// is the change in cumulative exposure past `touch.to`.
fn suffix_terms(
    problem: &FitProblem,
    params: &DiseaseParams,
    x_steps: &[f64],
    g_steps: &mut [f64],
    old: &WorkerTerms,
    touch: Touch,
    shift: f64,
) -> Result<WorkerTerms, DiseaseError> {
    let d = &problem.design;
    let w = touch.worker;
    let off = d.step_offset[w];
    let end = d.step_offset[w + 1];
    let mut exposure_time = old.exposure_time;
    let mid = (off + touch.to + 1).min(end);
    for s in off + touch.from..mid {
        if problem.step_active[s] {
            let g = params.kind.relative(params.beta, x_steps[s])?;
            let dg = g - g_steps[s];
            g_steps[s] = g;
            for k in 0..N_PIECES {
                exposure_time[k] += dg * d.durations[s][k];
            }
        }
    }
    if shift != 0.0 {
        match params.kind {
            HazardKind::Ph => {
                let f = (params.beta * shift).exp();
                for s in mid..end {
                    if problem.step_active[s] {
                        let g = g_steps[s];
                        let dg = g * f - g;
                        g_steps[s] = g * f;
                        for k in 0..N_PIECES {
                            exposure_time[k] += dg * d.durations[s][k];
                        }
                    }
                }
            }
            HazardKind::Ehr => {
                let dg = params.beta * shift;
                for s in mid..end {
                    if problem.step_active[s] {
                        let g = g_steps[s] + dg;
                        if g <= 0.0 {
                            return Err(DiseaseError::Positivity {
                                beta: params.beta,
                                x: x_steps[s],
                                value: g,
                            });
                        }
                        g_steps[s] = g;
                        for k in 0..N_PIECES {
                            exposure_time[k] += dg * d.durations[s][k];
                        }
                    }
                }
            }
        }
    }
    let event_ln = match d.event_at[w] {
        Some((step, piece)) if step >= touch.from => Some((
            piece,
            params.kind.ln_relative(params.beta, x_steps[off + step])?,
        )),
        other => other.map(|_| old.event_ln.expect("event term present")),
    };
    Ok(WorkerTerms {
        exposure_time,
        event_ln,
    })
}

impl ChainState {
    pub fn init(problem: &FitProblem) -> Result<Self, SamplerError> {
        let mut st = ChainState {
            disease: problem.initial_disease(),
            meas: problem.measurement.clone(),
            annual: Vec::new(),
            x_steps: vec![0.0; problem.design.durations.len()],
            g_steps: vec![0.0; problem.design.durations.len()],
            terms: Vec::new(),
            totals: LikelihoodTotals::default(),
            log_lik: 0.0,
        };
        for (k, b) in st.meas.blocks.iter().enumerate() {
            let lp = log_measurement_density(b, &st.meas.shapes);
            if !lp.is_finite() {
                return Err(SamplerError::Init {
                    block: problem.block_label(k),
                    message: format!("measurement log-density {lp}"),
                });
            }
        }
        st.refresh(problem).map_err(|e| SamplerError::Init {
            block: "disease model".into(),
            message: e.to_string(),
        })?;
        if !st.log_lik.is_finite() {
            return Err(SamplerError::Init {
                block: "disease model".into(),
                message: format!("log-likelihood {}", st.log_lik),
            });
        }
        Ok(st)
    }

    /// Recomputes annual and cumulative exposure and all likelihood terms.
    pub fn refresh(&mut self, problem: &FitProblem) -> Result<(), SamplerError> {
        self.annual = match &problem.fixed_annual {
            Some(v) => v.clone(),
            None => self.meas.reconstruct_all(&problem.cohort)?,
        };
        for w in 0..problem.cohort.workers.len() {
            prefix_worker(problem, &self.annual, &mut self.x_steps, w);
        }
        self.terms = (0..problem.design.n_workers())
            .map(|i| full_terms(problem, &self.disease, &self.x_steps, &mut self.g_steps, i))
            .collect::<Result<_, _>>()?;
        self.totals = LikelihoodTotals::default();
        for t in &self.terms {
            self.totals.add(t);
        }
        self.log_lik = self.totals.log_likelihood(&self.disease.baseline.rates);
        Ok(())
    }

    /// Largest relative deviation of the caches from a from-scratch
    /// recomputation (annual exposure via reconstruction, cumulative via the
    /// sparse cumulation matrix).
    pub fn coherence_error(&self, problem: &FitProblem) -> Result<f64, SamplerError> {
        let annual = match &problem.fixed_annual {
            Some(v) => v.clone(),
            None => self.meas.reconstruct_all(&problem.cohort)?,
        };
        let cum = cumulate(&annual, &problem.cumulation).expect("cumulation matches cells");
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300).max(a.abs()).max(1e-12);
        let mut worst: f64 = 0.0;
        for c in 0..annual.len() {
            worst = worst.max(rel(self.annual[c], annual[c]));
            let x = self.x_steps[problem.cell_step[c]] * problem.exposure_unit;
            worst = worst.max(rel(x, cum[c]));
        }
        Ok(worst)
    }

    pub fn log_posterior(&self, problem: &FitProblem) -> f64 {
        self.log_lik + log_prior(&self.disease) + self.meas.log_density(&problem.registry)
    }
}

/// Metropolis–Hastings acceptance in log space; NaN ratios reject.
pub fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Log proposal ratio q(x | x*) / q(x* | x) of the positive-truncated
/// Gaussian random walk with step `s`.
pub fn truncated_rw_log_ratio(x: f64, x_new: f64, s: f64) -> f64 {
    ln_norm_cdf(x / s) - ln_norm_cdf(x_new / s)
}

/// Named step sizes with acceptance counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub names: Vec<String>,
    pub scale: Vec<f64>,
    pub accepted: Vec<u64>,
    pub tried: Vec<u64>,
}

impl ProposalScales {
    fn push(&mut self, name: String, scale: f64) -> usize {
        self.names.push(name);
        self.scale.push(scale);
        self.accepted.push(0);
        self.tried.push(0);
        self.names.len() - 1
    }

    fn record(&mut self, i: usize, accepted: bool) {
        self.tried[i] += 1;
        if accepted {
            self.accepted[i] += 1;
        }
    }

    pub fn rate(&self, i: usize) -> f64 {
        if self.tried[i] == 0 {
            f64::NAN
        } else {
            self.accepted[i] as f64 / self.tried[i] as f64
        }
    }

    fn reset(&mut self) {
        self.accepted.iter_mut().for_each(|a| *a = 0);
        self.tried.iter_mut().for_each(|t| *t = 0);
    }

    /// Multiplies each scale by exp(gain · (rate − target)).
    fn adapt(&mut self, target: f64, phase: usize) {
        let gain = 3.0 / (1.0 + phase as f64 / 10.0).sqrt();
        for i in 0..self.scale.len() {
            if self.tried[i] > 0 {
                let r = self.rate(i);
                self.scale[i] = (self.scale[i] * (gain * (r - target)).exp()).clamp(1e-12, 1e12);
            }
        }
        self.reset();
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ScaleLayout {
    beta: usize,
    lambda: [usize; N_PIECES],
    block: Vec<usize>,
    mu: Vec<Option<usize>>,
    sigma: Vec<Option<usize>>,
    shape: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    terms: Vec<WorkerTerms>,
    ratio: Vec<f64>,
    new_level_err: Vec<(usize, f64)>,
    saved_annual: Vec<(usize, f64)>,
    saved_steps: Vec<f64>,
    saved_g: Vec<f64>,
    g: Vec<f64>,
    saved_terms: Vec<WorkerTerms>,
}

/// One running chain.
pub struct Chain<'a> {
    pub problem: &'a FitProblem,
    pub state: ChainState,
    pub scales: ProposalScales,
    layout: ScaleLayout,
    pub rng: ChaCha8Rng,
    scratch: Scratch,
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

impl<'a> Chain<'a> {
    pub fn new(problem: &'a FitProblem, seed: u64, chain: usize) -> Result<Self, SamplerError> {
        let state = ChainState::init(problem)?;
        let mut scales = ProposalScales {
            names: Vec::new(),
            scale: Vec::new(),
            accepted: Vec::new(),
            tried: Vec::new(),
        };
        let beta_scale = initial_beta_scale(problem, &state);
        let beta = scales.push("beta".into(), beta_scale);
        let mut lambda = [0; N_PIECES];
        for (k, l) in lambda.iter_mut().enumerate() {
            let p = problem.baseline.priors[k];
            let shape = p.shape + state.totals.events[k] as f64;
            let rate = 1.0 / p.scale + state.totals.exposure_time[k];
            *l = scales.push(format!("lambda_{}", k + 1), 2.38 * shape.sqrt() / rate);
        }
        let mut block = Vec::new();
        let mut mu = Vec::new();
        let mut sigma = Vec::new();
        for (k, b) in state.meas.blocks.iter().enumerate() {
            block.push(scales.push(format!("block.{}", problem.block_label(k)), 2.38));
            match (&b.spec.exposure_model, &b.year_hyper) {
                (
                    ExposureModel::YearlyConcentration {
                        mu_prior,
                        sigma_prior,
                        ..
                    },
                    Some(h),
                ) => {
                    let per_year = (b.domain.n_classical() as f64 / h.years.len() as f64).max(1.0);
                    let sd_of = |d: &crate::dist::DistSpec| match *d {
                        crate::dist::DistSpec::Normal { sd, .. }
                        | crate::dist::DistSpec::TruncatedNormalPositive { sd, .. } => sd,
                        _ => 1.0,
                    };
                    let s0 = h.sigma[0];
                    mu.push(Some(scales.push(
                        format!("mu.{}", problem.block_label(k)),
                        2.38 * sd_of(mu_prior).min(s0 / per_year.sqrt()),
                    )));
                    sigma.push(Some(scales.push(
                        format!("sigma.{}", problem.block_label(k)),
                        2.38 * sd_of(sigma_prior).min(s0 / (2.0 * per_year).sqrt()),
                    )));
                }
                _ => {
                    mu.push(None);
                    sigma.push(None);
                }
            }
        }
        let shape = state
            .meas
            .shapes
            .iter()
            .map(|s| {
                [
                    scales.push(format!("a_{}", s.factor), 1.0),
                    scales.push(format!("b_{}", s.factor), 1.0),
                ]
            })
            .collect();
        let n_workers = problem.cohort.workers.len();
        Ok(Chain {
            problem,
            state,
            scales,
            layout: ScaleLayout {
                beta,
                lambda,
                block,
                mu,
                sigma,
                shape,
            },
            rng: chain_rng(seed, chain),
            scratch: Scratch {
                terms: vec![WorkerTerms::default(); n_workers],
                ..Scratch::default()
            },
        })
    }

    /// Log acceptance ratio of moving β to `beta_new`, with the new per-worker
    /// terms left in the scratch buffer. `None` when the proposal is outside
    /// the EHR positivity region.
    fn beta_log_ratio(&mut self, beta_new: f64) -> Option<(f64, LikelihoodTotals)> {
        let p = self.problem;
        let mut params = self.state.disease.clone();
        params.beta = beta_new;
        let mut totals = LikelihoodTotals::default();
        self.scratch.g.resize(self.state.g_steps.len(), 0.0);
        for i in 0..p.design.n_workers() {
            match full_terms(p, &params, &self.state.x_steps, &mut self.scratch.g, i) {
                Ok(t) => {
                    totals.add(&t);
                    self.scratch.terms[i] = t;
                }
                Err(_) => return None,
            }
        }
        let ll = totals.log_likelihood(&params.baseline.rates);
        let sd = self.state.disease.beta_prior_sd;
        let d = ll - self.state.log_lik + normal_ln_pdf(beta_new, 0.0, sd)
            - normal_ln_pdf(self.state.disease.beta, 0.0, sd);
        Some((d, totals))
    }

    /// MH update of β with an explicit proposal.
    pub fn propose_beta(&mut self, beta_new: f64) -> bool {
        let Some((d, totals)) = self.beta_log_ratio(beta_new) else {
            return false;
        };
        let accept = mh_accept(d, &mut self.rng);
        if accept {
            self.state.disease.beta = beta_new;
            std::mem::swap(&mut self.state.terms, &mut self.scratch.terms);
            std::mem::swap(&mut self.state.g_steps, &mut self.scratch.g);
            self.state.totals = totals;
            self.state.log_lik = totals.log_likelihood(&self.state.disease.baseline.rates);
        }
        accept
    }

    pub fn update_beta(&mut self) -> bool {
        let i = self.layout.beta;
        let z: f64 = self.rng.sample(StandardNormal);
        let proposal = self.state.disease.beta + self.scales.scale[i] * z;
        let accepted = self.propose_beta(proposal);
        self.scales.record(i, accepted);
        accepted
    }

    /// MH update of λ_k (zero-based) with an explicit proposal and step.
    pub fn propose_lambda(&mut self, k: usize, value: f64, step: f64) -> bool {
        if !(value > 0.0) {
            return false;
        }
        let rates = &self.state.disease.baseline.rates;
        let mut new_rates = *rates;
        new_rates[k] = value;
        let prior = self.state.disease.baseline.priors[k];
        let ll = self.state.totals.log_likelihood(&new_rates);
        let d = ll - self.state.log_lik + gamma_ln_pdf(value, prior.shape, prior.scale)
            - gamma_ln_pdf(rates[k], prior.shape, prior.scale)
            + truncated_rw_log_ratio(rates[k], value, step);
        let accept = mh_accept(d, &mut self.rng);
        if accept {
            self.state.disease.baseline.rates = new_rates;
            self.state.log_lik = ll;
        }
        accept
    }

    pub fn update_lambda(&mut self, k: usize) -> bool {
        let i = self.layout.lambda[k];
        let s = self.scales.scale[i];
        let cur = self.state.disease.baseline.rates[k];
        let value = sample_truncated_normal_positive(cur, s, &mut self.rng);
        let accepted = self.propose_lambda(k, value, s);
        self.scales.record(i, accepted);
        accepted
    }

    /// Joint MH update of classical group `g` of block `k`: a log-normal
    /// random walk on the level and on each active Berkson error.
    pub fn update_block_group(&mut self, k: usize, g: usize) -> bool {
        let p = self.problem;
        let plan = &p.plans[k];
        let children = &plan.children[g];
        let block = &self.state.meas.blocks[k];
        let n_active = children.iter().filter(|&&b| block.berkson_active[b]).count();
        let s = self.scales.scale[self.layout.block[k]] / ((1 + n_active) as f64).sqrt();
        let z: f64 = self.rng.sample(StandardNormal);
        let level = block.level[g];
        let level_new = level * (s * plan.level_step * z).exp();
        self.scratch.new_level_err.clear();
        let mut log_q = (level_new / level).ln();
        let mut d_meas = classical_ln(&block.spec.classical, block.observed[g], level_new)
            - classical_ln(&block.spec.classical, block.observed[g], level)
            + block.exposure_ln(g, level_new, &self.state.meas.shapes)
            - block.exposure_ln(g, level, &self.state.meas.shapes);
        for &b in children {
            if block.berkson_active[b] {
                let z: f64 = self.rng.sample(StandardNormal);
                let u = block.berkson_error[b];
                let u_new = u * (s * plan.berkson_step * z).exp();
                log_q += (u_new / u).ln();
                d_meas += berkson_error_ln(&block.spec.berkson, u_new)
                    - berkson_error_ln(&block.spec.berkson, u);
                self.scratch.new_level_err.push((b, u_new));
            } else {
                self.scratch.new_level_err.push((b, 1.0));
            }
        }
        let pre = d_meas + log_q;
        if !pre.is_finite() {
            return false;
        }

        // Rescale annual exposure of the affected cells.
        self.scratch.saved_annual.clear();
        self.scratch.ratio.resize(block.domain.n_berkson(), 1.0);
        for &(b, u_new) in &self.scratch.new_level_err {
            self.scratch.ratio[b] = (level_new * u_new) / (level * block.berkson_error[b]);
        }
        for &(b, u_new) in &self.scratch.new_level_err {
            for &c in &plan.berkson_cells[b] {
                let old = self.state.annual[c];
                let new = if plan.bracket {
                    let br_old = self.state.meas.bracket_of(&p.cohort, c);
                    let br_new = bracket_with(&self.state.meas, p, c, k, b, level_new * u_new);
                    old * (br_new / br_old)
                } else {
                    old * self.scratch.ratio[b]
                };
                self.scratch.saved_annual.push((c, old));
                self.state.annual[c] = new;
            }
        }
        // Recompute the touched workers' likelihood terms.
        self.scratch.saved_steps.clear();
        self.scratch.saved_g.clear();
        self.scratch.saved_terms.clear();
        let mut totals = self.state.totals;
        let mut ok = true;
        for &t in &plan.group_workers[g] {
            let w = t.worker;
            let off = p.design.step_offset[w];
            let range = off + t.from..p.design.step_offset[w + 1];
            let at = self.scratch.saved_steps.len();
            self.scratch
                .saved_steps
                .extend_from_slice(&self.state.x_steps[range.clone()]);
            self.scratch
                .saved_g
                .extend_from_slice(&self.state.g_steps[range]);
            prefix_worker(p, &self.state.annual, &mut self.state.x_steps, w);
            let shift = self.state.x_steps[off + t.to] - self.scratch.saved_steps[at + t.to - t.from];
            let old = self.state.terms[w];
            self.scratch.saved_terms.push(old);
            match suffix_terms(
                p,
                &self.state.disease,
                &self.state.x_steps,
                &mut self.state.g_steps,
                &old,
                t,
                shift,
            ) {
                Ok(t) => {
                    totals.sub(&old);
                    totals.add(&t);
                    self.state.terms[w] = t;
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        let ll_new = totals.log_likelihood(&self.state.disease.baseline.rates);
        let accept = ok && mh_accept(pre + ll_new - self.state.log_lik, &mut self.rng);
        if accept {
            let block = &mut self.state.meas.blocks[k];
            block.level[g] = level_new;
            for &(b, u_new) in &self.scratch.new_level_err {
                block.berkson_error[b] = u_new;
            }
            self.state.totals = totals;
            self.state.log_lik = ll_new;
        } else {
            for &(c, old) in &self.scratch.saved_annual {
                self.state.annual[c] = old;
            }
            let mut at = 0;
            for (i, t) in plan.group_workers[g].iter().enumerate() {
                let w = t.worker;
                // workers past an early stop were never touched
                if i >= self.scratch.saved_terms.len() {
                    break;
                }
                let range = p.design.step_offset[w] + t.from..p.design.step_offset[w + 1];
                let len = range.len();
                self.state.x_steps[range.clone()]
                    .copy_from_slice(&self.scratch.saved_steps[at..at + len]);
                self.state.g_steps[range].copy_from_slice(&self.scratch.saved_g[at..at + len]);
                at += len;
                self.state.terms[w] = self.scratch.saved_terms[i];
            }
        }
        accept
    }

    pub fn update_block(&mut self, k: usize) {
        let i = self.layout.block[k];
        for g in 0..self.state.meas.blocks[k].domain.n_classical() {
            let accepted = self.update_block_group(k, g);
            self.scales.record(i, accepted);
        }
    }

    /// MH update of μ(t) (`sigma == false`) or σ(t) for year index `y` of
    /// block `k`, with an explicit proposal.
    pub fn propose_year_hyper(&mut self, k: usize, y: usize, sigma: bool, value: f64) -> bool {
        let block = &self.state.meas.blocks[k];
        let (family, mu_prior, sigma_prior) = match &block.spec.exposure_model {
            ExposureModel::YearlyConcentration {
                family,
                mu_prior,
                sigma_prior,
            } => (*family, mu_prior, sigma_prior),
            _ => return false,
        };
        let h = block.year_hyper.as_ref().expect("yearly block");
        let (mu, sd) = (h.mu[y], h.sigma[y]);
        let (mu_new, sd_new) = if sigma { (mu, value) } else { (value, sd) };
        if !(sd_new > 0.0) {
            return false;
        }
        let mut d = if sigma {
            sigma_prior.log_density(sd_new) - sigma_prior.log_density(sd)
        } else {
            mu_prior.log_density(mu_new) - mu_prior.log_density(mu)
        };
        for &g in &h.year_groups[y] {
            let l = block.level[g];
            d += concentration_ln_pdf(family, l, mu_new, sd_new)
                - concentration_ln_pdf(family, l, mu, sd);
        }
        let accept = mh_accept(d, &mut self.rng);
        if accept {
            let h = self.state.meas.blocks[k].year_hyper.as_mut().expect("yearly block");
            if sigma {
                h.sigma[y] = sd_new;
            } else {
                h.mu[y] = mu_new;
            }
        }
        accept
    }

    pub fn update_year_hypers(&mut self, k: usize) {
        let (Some(im), Some(is)) = (self.layout.mu[k], self.layout.sigma[k]) else {
            return;
        };
        let n_years = self.state.meas.blocks[k]
            .year_hyper
            .as_ref()
            .map_or(0, |h| h.years.len());
        for y in 0..n_years {
            for (sigma, i) in [(false, im), (true, is)] {
                let h = self.state.meas.blocks[k].year_hyper.as_ref().expect("yearly block");
                let cur = if sigma { h.sigma[y] } else { h.mu[y] };
                let z: f64 = self.rng.sample(StandardNormal);
                let accepted = self.propose_year_hyper(k, y, sigma, cur + self.scales.scale[i] * z);
                self.scales.record(i, accepted);
            }
        }
    }

    /// MH update of shape `a` (`which_b == false`) or `b` of shared shape `s`.
    pub fn propose_shape(&mut self, s: usize, which_b: bool, value: f64) -> bool {
        if !(value > 0.0) {
            return false;
        }
        let shapes = &self.state.meas.shapes;
        let cur = &shapes[s];
        let Ok(spec) = self.problem.registry.spec(cur.factor) else {
            return false;
        };
        let mut new = cur.clone();
        if which_b {
            new.b = value;
        } else {
            new.a = value;
        }
        let mut d = shape_hyper_ln(spec, &new) - shape_hyper_ln(spec, cur);
        let mut trial = shapes.clone();
        trial[s] = new.clone();
        for b in self.state.meas.blocks.iter().filter(|b| b.shape == Some(s)) {
            for g in 0..b.domain.n_classical() {
                d += b.exposure_ln(g, b.level[g], &trial) - b.exposure_ln(g, b.level[g], shapes);
            }
        }
        let accept = mh_accept(d, &mut self.rng);
        if accept {
            self.state.meas.shapes[s] = new;
        }
        accept
    }

    pub fn update_shapes(&mut self) {
        for s in 0..self.state.meas.shapes.len() {
            if self.state.meas.shapes[s].fixed {
                continue;
            }
            for (which_b, i) in [(false, self.layout.shape[s][0]), (true, self.layout.shape[s][1])] {
                let cur = if which_b {
                    self.state.meas.shapes[s].b
                } else {
                    self.state.meas.shapes[s].a
                };
                let z: f64 = self.rng.sample(StandardNormal);
                let accepted = self.propose_shape(s, which_b, cur + self.scales.scale[i] * z);
                self.scales.record(i, accepted);
            }
        }
    }

    /// One full sweep in the documented update order.
    pub fn sweep(&mut self) {
        self.update_beta();
        for k in 0..N_PIECES {
            self.update_lambda(k);
        }
        if self.problem.updates_exposure() {
            for k in 0..self.state.meas.blocks.len() {
                self.update_block(k);
            }
            for k in 0..self.state.meas.blocks.len() {
                self.update_year_hypers(k);
            }
            self.update_shapes();
        }
    }

    pub fn columns(&self, config: &SamplerConfig) -> Vec<String> {
        let mut cols: Vec<String> = ["iteration", "beta", "lambda_1", "lambda_2", "lambda_3", "lambda_4", "log_likelihood"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for s in &self.state.meas.shapes {
            cols.push(format!("a_{}", s.factor));
            cols.push(format!("b_{}", s.factor));
        }
        for k in 0..self.state.meas.blocks.len() {
            cols.push(format!("level_mean.{}", self.problem.block_label(k)));
        }
        if config.record_year_hypers {
            for (k, b) in self.state.meas.blocks.iter().enumerate() {
                if let Some(h) = &b.year_hyper {
                    for y in &h.years {
                        cols.push(format!("mu.{}.{y}", self.problem.block_label(k)));
                    }
                    for y in &h.years {
                        cols.push(format!("sigma.{}.{y}", self.problem.block_label(k)));
                    }
                }
            }
        }
        cols
    }

    pub fn row(&self, iteration: usize, config: &SamplerConfig) -> Vec<f64> {
        let d = &self.state.disease;
        let mut row = vec![iteration as f64, d.beta];
        row.extend_from_slice(&d.baseline.rates);
        row.push(self.state.log_lik);
        for s in &self.state.meas.shapes {
            row.push(s.a);
            row.push(s.b);
        }
        for b in &self.state.meas.blocks {
            row.push(b.level.iter().sum::<f64>() / b.level.len() as f64);
        }
        if config.record_year_hypers {
            for b in &self.state.meas.blocks {
                if let Some(h) = &b.year_hyper {
                    row.extend_from_slice(&h.mu);
                    row.extend_from_slice(&h.sigma);
                }
            }
        }
        row
    }

    pub fn acceptance(&self) -> Vec<(String, f64)> {
        (0..self.scales.names.len())
            .map(|i| (self.scales.names[i].clone(), self.scales.rate(i)))
            .collect()
    }
}

fn bracket_with(
    meas: &MeasurementState,
    p: &FitProblem,
    cell: usize,
    block: usize,
    berkson: usize,
    value: f64,
) -> f64 {
    let links = meas.bracket_links[cell].expect("M1a cell has bracket links");
    let v = |slot: usize| {
        let (bk, bg) = links[slot];
        if bk == block && bg == berkson {
            value
        } else {
            meas.blocks[bk].true_value(bg)
        }
    };
    let aux = p.cohort.cells[cell].aux.expect("M1a cell has auxiliary series");
    v(0) * v(2) + aux.r * (v(1) / aux.a_ref) * v(3) * aux.a_to
}

/// 2.38 / sqrt(observed information) at the initial state, by finite
/// differences of the log-likelihood in β.
fn initial_beta_scale(problem: &FitProblem, st: &ChainState) -> f64 {
    let h = 1e-4;
    let ll = |beta: f64| {
        let mut p = st.disease.clone();
        p.beta = beta;
        problem
            .design
            .log_likelihood(&p, &st.x_steps)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let b = st.disease.beta;
    let info = -(ll(b + h) - 2.0 * ll(b) + ll(b - h)) / (h * h);
    if info.is_finite() && info > 0.0 {
        2.38 / info.sqrt()
    } else {
        0.1
    }
}

/// Output of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain: usize,
    pub table: SampleTable,
    /// Acceptance rate per scale over the sampling phase (burnin included).
    pub acceptance: Vec<(String, f64)>,
    pub scales: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    fingerprint: String,
    next_iteration: usize,
    beta: f64,
    rates: [f64; N_PIECES],
    levels: Vec<Vec<f64>>,
    errors: Vec<Vec<f64>>,
    year_mu: Vec<Vec<f64>>,
    year_sigma: Vec<Vec<f64>>,
    shapes: Vec<[f64; 2]>,
    annual: Vec<f64>,
    x_steps: Vec<f64>,
    g_steps: Vec<f64>,
    terms: Vec<WorkerTerms>,
    totals: LikelihoodTotals,
    log_lik: f64,
    scales: ProposalScales,
    rng: ChaCha8Rng,
    table: SampleTable,
}

fn fingerprint(problem: &FitProblem, config: &SamplerConfig, chain: usize) -> String {
    format!(
        "{}|{}|{:?}|{:?}|{}|{}|{}",
        problem.registry.hash(),
        serde_json::to_string(config).unwrap_or_default(),
        problem.mode,
        problem.kind,
        problem.exposure_unit,
        problem.cohort.n_cells(),
        chain
    )
}

impl Chain<'_> {
    fn checkpoint(&self, next_iteration: usize, table: &SampleTable, fp: String) -> Checkpoint {
        let m = &self.state.meas;
        Checkpoint {
            fingerprint: fp,
            next_iteration,
            beta: self.state.disease.beta,
            rates: self.state.disease.baseline.rates,
            levels: m.blocks.iter().map(|b| b.level.clone()).collect(),
            errors: m.blocks.iter().map(|b| b.berkson_error.clone()).collect(),
            year_mu: m
                .blocks
                .iter()
                .map(|b| b.year_hyper.as_ref().map_or(Vec::new(), |h| h.mu.clone()))
                .collect(),
            year_sigma: m
                .blocks
                .iter()
                .map(|b| b.year_hyper.as_ref().map_or(Vec::new(), |h| h.sigma.clone()))
                .collect(),
            shapes: m.shapes.iter().map(|s| [s.a, s.b]).collect(),
            annual: self.state.annual.clone(),
            x_steps: self.state.x_steps.clone(),
            g_steps: self.state.g_steps.clone(),
            terms: self.state.terms.clone(),
            totals: self.state.totals,
            log_lik: self.state.log_lik,
            scales: self.scales.clone(),
            rng: self.rng.clone(),
            table: table.clone(),
        }
    }

    fn restore(&mut self, cp: Checkpoint) -> Result<SampleTable, SamplerError> {
        self.state.disease.beta = cp.beta;
        self.state.disease.baseline.rates = cp.rates;
        for (k, b) in self.state.meas.blocks.iter_mut().enumerate() {
            b.level = cp.levels[k].clone();
            b.berkson_error = cp.errors[k].clone();
            if let Some(h) = b.year_hyper.as_mut() {
                h.mu = cp.year_mu[k].clone();
                h.sigma = cp.year_sigma[k].clone();
            }
        }
        for (s, v) in self.state.meas.shapes.iter_mut().zip(&cp.shapes) {
            s.a = v[0];
            s.b = v[1];
        }
        let n_steps = self.problem.design.durations.len();
        if cp.annual.len() != self.problem.cohort.n_cells()
            || cp.x_steps.len() != n_steps
            || cp.g_steps.len() != n_steps
            || cp.terms.len() != self.problem.design.n_workers()
        {
            return Err(SamplerError::Config("checkpoint caches do not match the cohort".into()));
        }
        self.state.annual = cp.annual;
        self.state.x_steps = cp.x_steps;
        self.state.g_steps = cp.g_steps;
        self.state.terms = cp.terms;
        self.state.totals = cp.totals;
        self.state.log_lik = cp.log_lik;
        self.scales = cp.scales;
        self.rng = cp.rng;
        Ok(cp.table)
    }
}

/// Path of the checkpoint file of `chain` inside `dir`.
pub fn checkpoint_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("checkpoint_chain{chain}.json"))
}

/// Runs one chain: adaptive phases, burnin, then thinned sampling. With
/// `checkpoint_dir`, resumes from an existing checkpoint and writes a new one
/// every `checkpoint_every` iterations.
pub fn run_chain(
    problem: &FitProblem,
    config: &SamplerConfig,
    chain: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<ChainOutput, SamplerError> {
    config.validate()?;
    let mut c = Chain::new(problem, config.seed, chain)?;
    let mut table = SampleTable::new(c.columns(config));
    let fp = fingerprint(problem, config, chain);
    let adapt_end = config.n_adapt_phases * config.adapt_phase_len;
    let sample_start = adapt_end + config.burnin;
    let total = config.total_iterations();
    let mut start = 0;
    if let Some(dir) = checkpoint_dir {
        let path = checkpoint_path(dir, chain);
        if path.exists() {
            let bad = |message: String| SamplerError::Checkpoint {
                path: path.display().to_string(),
                message,
            };
            let cp: Checkpoint = serde_json::from_str(&std::fs::read_to_string(&path)?)
                .map_err(|e| bad(e.to_string()))?;
            if cp.fingerprint != fp {
                return Err(bad("written by a different configuration".into()));
            }
            start = cp.next_iteration;
            table = c.restore(cp)?;
        }
    }
    for it in start..total {
        c.sweep();
        let done = it + 1;
        if done <= adapt_end && done % config.adapt_phase_len == 0 {
            let phase = done / config.adapt_phase_len - 1;
            c.scales.adapt(config.target_acceptance, phase);
        }
        if done == adapt_end && adapt_end > 0 {
            c.scales.reset();
        }
        if it >= sample_start && (it - sample_start + 1) % config.thin == 0 {
            table.rows.push(c.row(it - sample_start + 1, config));
        }
        let checkpoint_now = config.checkpoint_every > 0
            && done % config.checkpoint_every == 0
            && checkpoint_dir.is_some()
            && done < total;
        if done % config.refresh_every == 0 {
            c.state.refresh(problem)?;
        }
        if checkpoint_now {
            let dir = checkpoint_dir.expect("checked above");
            let path = checkpoint_path(dir, chain);
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, serde_json::to_vec(&c.checkpoint(done, &table, fp.clone()))?)?;
            std::fs::rename(&tmp, &path)?;
        }
    }
    if let Some(dir) = checkpoint_dir {
        let path = checkpoint_path(dir, chain);
        if path.exists() {
            std::fs::remove_file(path)?;
        }
    }
    Ok(ChainOutput {
        chain,
        table,
        acceptance: c.acceptance(),
        scales: c
            .scales
            .names
            .iter()
            .cloned()
            .zip(c.scales.scale.iter().copied())
            .collect(),
    })
}

/// Runs `config.n_chains` chains concurrently.
pub fn run_chains(
    problem: &FitProblem,
    config: &SamplerConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<ChainOutput>, SamplerError> {
    (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(problem, config, c, checkpoint_dir))
        .collect()
}

/// Record of one fit: configuration, provenance and per-chain acceptance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SamplerConfig,
    pub mode: ExposureMode,
    pub kind: HazardKind,
    pub exposure_unit: f64,
    pub registry_hash: String,
    pub n_workers: usize,
    pub n_cells: usize,
    pub n_events: usize,
    pub chains: Vec<ChainSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub retained: usize,
    pub acceptance: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(problem: &FitProblem, config: &SamplerConfig, outputs: &[ChainOutput]) -> Self {
        RunManifest {
            config: config.clone(),
            mode: problem.mode,
            kind: problem.kind,
            exposure_unit: problem.exposure_unit,
            registry_hash: problem.registry.hash(),
            n_workers: problem.cohort.workers.len(),
            n_cells: problem.cohort.n_cells(),
            n_events: problem.cohort.workers.iter().filter(|w| w.event).count(),
            chains: outputs
                .iter()
                .map(|o| ChainSummary {
                    chain: o.chain,
                    retained: o.table.n_rows(),
                    acceptance: o.acceptance.clone(),
                })
                .collect(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), SamplerError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, SamplerError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
