//! Survival model with a piecewise-constant baseline and cumulative exposure
//! entering either proportionally (PH) or as an excess hazard ratio (EHR).

use crate::cohort::Cohort;
use crate::dist::{gamma_ln_pdf, normal_ln_pdf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_PIECES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiseaseError {
    #[error("excess hazard ratio 1 + beta*x = {value} is not positive (beta {beta}, x {x})")]
    Positivity { beta: f64, x: f64, value: f64 },
    #[error("age {age} lies outside the baseline support (0, {max}]")]
    AgeOutOfRange { age: f64, max: f64 },
    #[error("invalid baseline: {0}")]
    Baseline(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HazardKind {
    #[serde(rename = "PH")]
    Ph,
    #[serde(rename = "EHR")]
    Ehr,
}

impl HazardKind {
    /// Relative hazard g(u) for u = beta * x.
    pub fn relative(self, beta: f64, x: f64) -> Result<f64, DiseaseError> {
        match self {
            HazardKind::Ph => Ok((beta * x).exp()),
            HazardKind::Ehr => {
                let value = 1.0 + beta * x;
                if value > 0.0 {
                    Ok(value)
                } else {
                    Err(DiseaseError::Positivity { beta, x, value })
                }
            }
        }
    }

    pub fn ln_relative(self, beta: f64, x: f64) -> Result<f64, DiseaseError> {
        match self {
            HazardKind::Ph => Ok(beta * x),
            HazardKind::Ehr => self.relative(beta, x).map(f64::ln),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    /// s_0 < s_1 < ... < s_4 in years of age.
    pub breaks: [f64; N_PIECES + 1],
    /// λ_k per year on (s_{k-1}, s_k].
    pub rates: [f64; N_PIECES],
    pub priors: [GammaPrior; N_PIECES],
}

impl Default for BaselineHazard {
    fn default() -> Self {
        let priors = [
            GammaPrior { shape: 600.0, scale: 1e-7 },
            GammaPrior { shape: 12000.0, scale: 1e-6 },
            GammaPrior { shape: 46000.0, scale: 1e-6 },
            GammaPrior { shape: 1000.0, scale: 1e-5 },
        ];
        BaselineHazard {
            breaks: [0.0, 40.0, 55.0, 75.0, 104.0],
            rates: priors.map(|p| p.shape * p.scale),
            priors,
        }
    }
}

impl BaselineHazard {
    pub fn validate(&self) -> Result<(), DiseaseError> {
        if self.breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DiseaseError::Baseline("breakpoints must be strictly increasing".into()));
        }
        if self.rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(DiseaseError::Baseline("rates must be positive".into()));
        }
        Ok(())
    }

    pub fn max_age(&self) -> f64 {
        self.breaks[N_PIECES]
    }

    /// k with age in (s_{k-1}, s_k], zero-based. Age 0 maps to the first piece.
    pub fn piece(&self, age: f64) -> Result<usize, DiseaseError> {
        if !(age >= self.breaks[0] && age <= self.max_age()) {
            return Err(DiseaseError::AgeOutOfRange {
                age,
                max: self.max_age(),
            });
        }
        Ok((1..=N_PIECES)
            .find(|&k| age <= self.breaks[k])
            .map_or(N_PIECES - 1, |k| k - 1))
    }

    /// Length of (a, b] falling into each piece.
    pub fn overlap(&self, a: f64, b: f64) -> [f64; N_PIECES] {
        let mut out = [0.0; N_PIECES];
        for (k, o) in out.iter_mut().enumerate() {
            let lo = a.max(self.breaks[k]);
            let hi = b.min(self.breaks[k + 1]);
            if hi > lo {
                *o = hi - lo;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseParams {
    pub beta: f64,
    pub baseline: BaselineHazard,
    pub kind: HazardKind,
    pub beta_prior_sd: f64,
}

impl DiseaseParams {
    pub fn new(kind: HazardKind) -> Self {
        DiseaseParams {
            beta: 0.0,
            baseline: BaselineHazard::default(),
            kind,
            beta_prior_sd: 100.0,
        }
    }
}

pub fn hazard(params: &DiseaseParams, age: f64, xcum: f64) -> Result<f64, DiseaseError> {
    let k = params.baseline.piece(age)?;
    Ok(params.baseline.rates[k] * params.kind.relative(params.beta, xcum)?)
}

/// Normal prior on beta plus gamma priors on the baseline rates.
pub fn log_prior(params: &DiseaseParams) -> f64 {
    let mut lp = normal_ln_pdf(params.beta, 0.0, params.beta_prior_sd);
    for (r, p) in params.baseline.rates.iter().zip(&params.baseline.priors) {
        lp += gamma_ln_pdf(*r, p.shape, p.scale);
    }
    lp
}

/// One worker's follow-up with a step function for cumulative exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalPath {
    pub entry_age: f64,
    pub exit_age: f64,
    pub event: bool,
    /// `(age, x)`: from `age` onwards (exclusive) cumulative exposure is `x`.
    /// Ages ascending; exposure is 0 before the first step.
    pub steps: Vec<(f64, f64)>,
}

impl SurvivalPath {
    /// Cumulative exposure in effect at `age` (left-continuous).
    pub fn exposure_at(&self, age: f64) -> f64 {
        self.steps
            .iter()
            .take_while(|(a, _)| *a < age)
            .last()
            .map_or(0.0, |s| s.1)
    }
}

fn path_log_likelihood(params: &DiseaseParams, path: &SurvivalPath) -> Result<f64, DiseaseError> {
    let base = &params.baseline;
    if path.exit_age > base.max_age() {
        return Err(DiseaseError::AgeOutOfRange {
            age: path.exit_age,
            max: base.max_age(),
        });
    }
    let mut ll = 0.0;
    if path.event {
        ll += hazard(params, path.exit_age, path.exposure_at(path.exit_age))?.ln();
    }
    let mut start = path.entry_age;
    let mut x = path.exposure_at(start);
    let mut cuts: Vec<(f64, f64)> = path
        .steps
        .iter()
        .copied()
        .filter(|(a, _)| *a > path.entry_age && *a < path.exit_age)
        .collect();
    cuts.push((path.exit_age, f64::NAN));
    for (end, next_x) in cuts {
        let g = params.kind.relative(params.beta, x)?;
        let d = base.overlap(start, end);
        for k in 0..N_PIECES {
            ll -= base.rates[k] * g * d[k];
        }
        start = end;
        x = next_x;
    }
    Ok(ll)
}

/// Left-truncated, right-censored log-likelihood summed over paths.
pub fn log_likelihood(params: &DiseaseParams, paths: &[SurvivalPath]) -> Result<f64, DiseaseError> {
    paths.iter().map(|p| path_log_likelihood(params, p)).sum()
}

/// Precomputed at-risk time per (exposure step, baseline piece) for every
/// worker of a cohort, so the likelihood reduces to weighted sums.
///
/// Worker `i` with `n` cells has `n + 1` steps: step 0 is before the first
/// accrual, step `j >= 1` carries the cumulative exposure after cell `j - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDesign {
    /// Offset of each worker's step 0 in `durations`; length n_workers + 1.
    pub step_offset: Vec<usize>,
    pub durations: Vec<[f64; N_PIECES]>,
    /// Per worker: `(step, piece)` of the event, if any.
    pub event_at: Vec<Option<(usize, usize)>>,
}

impl SurvivalDesign {
    pub fn from_cohort(cohort: &Cohort, baseline: &BaselineHazard) -> Result<Self, DiseaseError> {
        let mut step_offset = Vec::with_capacity(cohort.workers.len() + 1);
        let mut durations = Vec::with_capacity(cohort.n_cells() + cohort.workers.len());
        let mut event_at = Vec::with_capacity(cohort.workers.len());
        for w in &cohort.workers {
            if w.exit_age > baseline.max_age() {
                return Err(DiseaseError::AgeOutOfRange {
                    age: w.exit_age,
                    max: baseline.max_age(),
                });
            }
            step_offset.push(durations.len());
            let accruals: Vec<f64> = cohort.cells[w.cells.clone()]
                .iter()
                .map(|c| w.accrual_age(c.year))
                .collect();
            let mut start = f64::NEG_INFINITY;
            for j in 0..=accruals.len() {
                let end = accruals.get(j).copied().unwrap_or(f64::INFINITY);
                let lo = start.max(w.entry_age);
                let hi = end.min(w.exit_age);
                durations.push(if hi > lo { baseline.overlap(lo, hi) } else { [0.0; N_PIECES] });
                start = end;
            }
            event_at.push(if w.event {
                let step = accruals.iter().filter(|&&a| a < w.exit_age).count();
                Some((step, baseline.piece(w.exit_age)?))
            } else {
                None
            });
        }
        step_offset.push(durations.len());
        Ok(SurvivalDesign {
            step_offset,
            durations,
            event_at,
        })
    }

    pub fn n_workers(&self) -> usize {
        self.event_at.len()
    }

    /// Cumulative exposure per global step from cumulative exposure per cell.
    pub fn step_exposure(&self, cohort: &Cohort, xcum_cells: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.durations.len()];
        for (i, w) in cohort.workers.iter().enumerate() {
            let off = self.step_offset[i];
            for (j, c) in w.cells.clone().enumerate() {
                out[off + j + 1] = xcum_cells[c];
            }
        }
        out
    }

    /// Worker `i`'s contribution given its step exposures
    /// (`x_steps[step_offset[i]..step_offset[i+1]]`).
    pub fn worker_terms(
        &self,
        params: &DiseaseParams,
        i: usize,
        x_steps: &[f64],
    ) -> Result<WorkerTerms, DiseaseError> {
        let range = self.step_offset[i]..self.step_offset[i + 1];
        let mut exposure_time = [0.0; N_PIECES];
        for (d, &x) in self.durations[range.clone()].iter().zip(&x_steps[range]) {
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            let g = params.kind.relative(params.beta, x)?;
            for k in 0..N_PIECES {
                exposure_time[k] += g * d[k];
            }
        }
        let event_ln = match self.event_at[i] {
            Some((step, piece)) => Some((
                piece,
                params
                    .kind
                    .ln_relative(params.beta, x_steps[self.step_offset[i] + step])?,
            )),
            None => None,
        };
        Ok(WorkerTerms {
            exposure_time,
            event_ln,
        })
    }

    pub fn log_likelihood(&self, params: &DiseaseParams, x_steps: &[f64]) -> Result<f64, DiseaseError> {
        let mut totals = LikelihoodTotals::default();
        for i in 0..self.n_workers() {
            totals.add(&self.worker_terms(params, i, x_steps)?);
        }
        Ok(totals.log_likelihood(&params.baseline.rates))
    }
}

/// Sufficient pieces of one worker's likelihood contribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerTerms {
    /// Σ_j g(βX_j)·D_jk per baseline piece k.
    pub exposure_time: [f64; N_PIECES],
    /// `(piece, ln g(βX))` at the event.
    pub event_ln: Option<(usize, f64)>,
}

/// Cohort totals of [`WorkerTerms`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodTotals {
    pub exposure_time: [f64; N_PIECES],
    pub events: [u64; N_PIECES],
    pub event_ln_sum: f64,
}

impl LikelihoodTotals {
    pub fn add(&mut self, t: &WorkerTerms) {
        for k in 0..N_PIECES {
            self.exposure_time[k] += t.exposure_time[k];
        }
        if let Some((k, v)) = t.event_ln {
            self.events[k] += 1;
            self.event_ln_sum += v;
        }
    }

    pub fn sub(&mut self, t: &WorkerTerms) {
        for k in 0..N_PIECES {
            self.exposure_time[k] -= t.exposure_time[k];
        }
        if let Some((k, v)) = t.event_ln {
            self.events[k] -= 1;
            self.event_ln_sum -= v;
        }
    }

    pub fn log_likelihood(&self, rates: &[f64; N_PIECES]) -> f64 {
        let mut ll = self.event_ln_sum;
        for k in 0..N_PIECES {
            if self.events[k] > 0 {
                ll += self.events[k] as f64 * rates[k].ln();
            }
            ll -= rates[k] * self.exposure_time[k];
        }
        ll
    }
}

/// Survival paths of a cohort given cumulative exposure per cell.
pub fn paths_from_cohort(cohort: &Cohort, xcum_cells: &[f64]) -> Vec<SurvivalPath> {
    cohort
        .workers
        .iter()
        .map(|w| SurvivalPath {
            entry_age: w.entry_age,
            exit_age: w.exit_age,
            event: w.event,
            steps: w
                .cells
                .clone()
                .map(|c| (w.accrual_age(cohort.cells[c].year), xcum_cells[c]))
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn flat(c: f64, kind: HazardKind, beta: f64) -> DiseaseParams {
        let mut p = DiseaseParams::new(kind);
        p.baseline.rates = [c; 4];
        p.beta = beta;
        p
    }

    #[test]
    fn hazard_examples() {
        let mut p = DiseaseParams::new(HazardKind::Ph);
        p.baseline.rates = [1e-4, 2e-3, 3e-2, 4e-2];
        assert_eq!(hazard(&p, 30.0, 123.0).unwrap(), 1e-4);
        assert_eq!(hazard(&p, 40.0, 0.0).unwrap(), 1e-4);
        p.kind = HazardKind::Ehr;
        p.beta = 0.3;
        assert_relative_eq!(hazard(&p, 60.0, 2.0).unwrap(), 3e-2 * 1.6, max_relative = 1e-15);
        p.beta = -0.5;
        assert!(matches!(hazard(&p, 60.0, 3.0), Err(DiseaseError::Positivity { .. })));
        assert!(hazard(&p, 104.5, 0.0).is_err());
    }

    #[test]
    fn constant_hazard_closed_forms() {
        let p = flat(0.02, HazardKind::Ph, 0.0);
        let path = |event| SurvivalPath {
            entry_age: 20.0,
            exit_age: 30.0,
            event,
            steps: vec![],
        };
        assert_relative_eq!(
            log_likelihood(&p, &[path(true)]).unwrap(),
            0.02f64.ln() - 10.0 * 0.02,
            max_relative = 1e-14
        );
        assert_relative_eq!(log_likelihood(&p, &[path(false)]).unwrap(), -0.2, max_relative = 1e-14);
    }

    #[test]
    fn prior_terms() {
        let p = DiseaseParams::new(HazardKind::Ph);
        let beta_term = -0.5 * (2.0 * std::f64::consts::PI * 100.0f64.powi(2)).ln();
        let mut expected = beta_term;
        for (r, g) in p.baseline.rates.iter().zip(&p.baseline.priors) {
            let spec = crate::dist::DistSpec::gamma(g.shape, g.scale).unwrap();
            expected += spec.log_density(*r);
        }
        assert_relative_eq!(log_prior(&p), expected, max_relative = 1e-14);
        assert_relative_eq!(normal_ln_pdf(0.0, 0.0, 100.0), beta_term, max_relative = 1e-15);
        let mut q = p.clone();
        q.baseline.rates[2] = 0.0;
        assert_eq!(log_prior(&q), f64::NEG_INFINITY);
    }

    fn arb_path() -> impl Strategy<Value = SurvivalPath> {
        (
            0.0f64..60.0,
            0.5f64..40.0,
            any::<bool>(),
            proptest::collection::vec(0.0f64..5.0, 0..15),
            0.0f64..1.0,
        )
            .prop_map(|(entry, len, event, incs, first)| {
                let exit = (entry + len).min(104.0);
                let mut x = 0.0;
                let mut age = (entry - 5.0 + first * 10.0).max(0.5).floor() + first;
                let steps = incs
                    .into_iter()
                    .map(|d| {
                        x += d;
                        age += 1.0;
                        (age, x)
                    })
                    .collect();
                SurvivalPath {
                    entry_age: entry,
                    exit_age: exit,
                    event,
                    steps,
                }
            })
    }

    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, eps, 60)
    }

    /// Quadrature of the hazard as an independent check of the exact sum.
    fn quadrature_log_likelihood(p: &DiseaseParams, path: &SurvivalPath) -> f64 {
        let h = |t: f64| hazard(p, t, path.exposure_at(t)).unwrap();
        let integral = adaptive_simpson(&h, path.entry_age, path.exit_age, 1e-13);
        let event = if path.event { h(path.exit_age).ln() } else { 0.0 };
        event - integral
    }

    fn score(p: &DiseaseParams, paths: &[SurvivalPath]) -> f64 {
        // analytic d/dβ, used only to test against finite differences
        let mut s = 0.0;
        for path in paths {
            let xs = |t: f64| path.exposure_at(t);
            let dg = |x: f64| match p.kind {
                HazardKind::Ph => x * (p.beta * x).exp(),
                HazardKind::Ehr => x,
            };
            if path.event {
                let x = xs(path.exit_age);
                s += dg(x) / p.kind.relative(p.beta, x).unwrap();
            }
            let mut pts: Vec<f64> = path
                .steps
                .iter()
                .map(|s| s.0)
                .filter(|&a| a > path.entry_age && a < path.exit_age)
                .collect();
            pts.insert(0, path.entry_age);
            pts.push(path.exit_age);
            for w in pts.windows(2) {
                let d = p.baseline.overlap(w[0], w[1]);
                let x = xs(0.5 * (w[0] + w[1]));
                for k in 0..N_PIECES {
                    s -= p.baseline.rates[k] * dg(x) * d[k];
                }
            }
        }
        s
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn exact_sum_matches_quadrature(path in arb_path(), beta in -0.05f64..0.3, ehr in any::<bool>()) {
            let mut p = DiseaseParams::new(if ehr { HazardKind::Ehr } else { HazardKind::Ph });
            p.beta = beta;
            p.baseline.rates = [0.003, 0.012, 0.046, 0.09];
            let max_x = path.steps.iter().map(|s| s.1).fold(0.0, f64::max);
            prop_assume!(!ehr || 1.0 + beta * max_x > 1e-3);
            let exact = log_likelihood(&p, std::slice::from_ref(&path)).unwrap();
            let quad = quadrature_log_likelihood(&p, &path);
            prop_assert!((exact - quad).abs() <= 1e-8 * exact.abs().max(1.0), "{exact} vs {quad}");
        }

        #[test]
        fn ph_and_ehr_agree_at_zero_beta(path in arb_path()) {
            let a = log_likelihood(&flat(0.01, HazardKind::Ph, 0.0), std::slice::from_ref(&path)).unwrap();
            let b = log_likelihood(&flat(0.01, HazardKind::Ehr, 0.0), std::slice::from_ref(&path)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn refinement_invariance(path in arb_path(), frac in 0.01f64..0.99, beta in -0.1f64..0.3) {
            let p = flat(0.02, HazardKind::Ph, beta);
            let mut refined = path.clone();
            let cut = path.entry_age + frac * (path.exit_age - path.entry_age);
            let x = path.exposure_at(cut);
            refined.steps.push((cut, x));
            refined.steps.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let a = log_likelihood(&p, &[path]).unwrap();
            let b = log_likelihood(&p, &[refined]).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn score_matches_central_differences(
            paths in proptest::collection::vec(arb_path(), 1..6),
            beta in 0.0f64..0.2,
            ehr in any::<bool>(),
        ) {
            let mut p = DiseaseParams::new(if ehr { HazardKind::Ehr } else { HazardKind::Ph });
            p.baseline.rates = [0.003, 0.012, 0.046, 0.09];
            p.beta = beta;
            let h = 1e-6;
            let mut up = p.clone();
            up.beta += h;
            let mut dn = p.clone();
            dn.beta -= h;
            let fd = (log_likelihood(&up, &paths).unwrap() - log_likelihood(&dn, &paths).unwrap()) / (2.0 * h);
            let an = score(&p, &paths);
            prop_assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    #[test]
    fn design_matches_path_likelihood() {
        let c = crate::cohort::test_support::layout(&[5, 2, 3, 0]);
        let xcum: Vec<f64> = (0..c.n_cells()).map(|i| 1.5 * i as f64).collect();
        let mut p = flat(0.01, HazardKind::Ph, 0.02);
        p.baseline.rates = [1e-4, 1e-3, 1e-2, 5e-2];
        let design = SurvivalDesign::from_cohort(&c, &p.baseline).unwrap();
        let steps = design.step_exposure(&c, &xcum);
        let a = design.log_likelihood(&p, &steps).unwrap();
        let b = log_likelihood(&p, &paths_from_cohort(&c, &xcum)).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }
}
