//! Measurement models: factor registry, latent factor blocks, exposure
//! reconstruction and the measurement/exposure-model log-densities.

use crate::cohort::{
    BerksonDomainKind, ClassicalDomainKind, Cohort, CohortError, ExposureCell, FactorDomain,
    ModelTag,
};
use crate::dist::{
    lognormal_ln_pdf, moment_matched_lognormal, normal_ln_pdf, scaled_beta_ln_pdf,
    truncated_normal_positive_ln_pdf, DistError, DistSpec,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("model {tag} requires factor {factor}")]
    MissingFactor { tag: ModelTag, factor: FactorName },
    #[error("model {tag} produced a negative exposure {value}")]
    NegativeExposure { tag: ModelTag, value: f64 },
    #[error("factor {0} has no classical error component")]
    NoClassicalError(FactorName),
    #[error("factor {0} is not in the registry")]
    UnknownFactor(FactorName),
    #[error("registry: {0}")]
    Registry(String),
    #[error("{factor} in model {model}: classical group {group} carries differing observed values {a} and {b}")]
    InconsistentObserved {
        model: ModelTag,
        factor: FactorName,
        group: String,
        a: f64,
        b: f64,
    },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uncertain factors across all measurement models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorName {
    #[serde(rename = "C_Rn")]
    CRn,
    #[serde(rename = "C_Exp")]
    CExp,
    #[serde(rename = "C_RDP")]
    CRdp,
    E,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "tau_e")]
    TauE,
    #[serde(rename = "varsigma")]
    Varsigma,
    #[serde(rename = "phi")]
    Phi,
    #[serde(rename = "omega")]
    Omega,
    #[serde(rename = "gamma")]
    Gamma,
    /// Radon concentration of the reference object in its reference year.
    #[serde(rename = "C_ref")]
    CRef,
    /// Radon concentration of 1937/38 in object 003.
    #[serde(rename = "C_1937")]
    C1937,
}

pub const N_FACTORS: usize = 12;

impl FactorName {
    pub const ALL: [FactorName; N_FACTORS] = [
        FactorName::CRn,
        FactorName::CExp,
        FactorName::CRdp,
        FactorName::E,
        FactorName::B,
        FactorName::TauE,
        FactorName::Varsigma,
        FactorName::Phi,
        FactorName::Omega,
        FactorName::Gamma,
        FactorName::CRef,
        FactorName::C1937,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FactorName::CRn => "C_Rn",
            FactorName::CExp => "C_Exp",
            FactorName::CRdp => "C_RDP",
            FactorName::E => "E",
            FactorName::B => "b",
            FactorName::TauE => "tau_e",
            FactorName::Varsigma => "varsigma",
            FactorName::Phi => "phi",
            FactorName::Omega => "omega",
            FactorName::Gamma => "gamma",
            FactorName::CRef => "C_ref",
            FactorName::C1937 => "C_1937",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The cell's observed (error-prone) value of this factor.
    pub fn observed(self, cell: &ExposureCell) -> Option<f64> {
        let o = &cell.observed;
        match self {
            FactorName::CRn | FactorName::CExp | FactorName::CRdp | FactorName::E => o.conc,
            FactorName::B => o.b,
            FactorName::TauE => o.tau_e,
            FactorName::Varsigma => o.varsigma,
            FactorName::Phi => o.phi,
            FactorName::Omega => o.omega,
            FactorName::Gamma => o.gamma,
            FactorName::CRef => o.conc_ref,
            FactorName::C1937 => o.conc_1937,
        }
    }

    /// Factors entering the additive bracket of M1a rather than the product.
    pub fn in_m1a_bracket(self) -> bool {
        matches!(
            self,
            FactorName::C1937 | FactorName::CRef | FactorName::B | FactorName::TauE
        )
    }
}

impl fmt::Display for FactorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorForm {
    None,
    AdditiveNormal,
    MultiplicativeLognormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub form: ErrorForm,
    #[serde(default)]
    pub sd: f64,
}

impl ErrorSpec {
    pub const NONE: ErrorSpec = ErrorSpec {
        form: ErrorForm::None,
        sd: 0.0,
    };

    pub fn additive(sd: f64) -> Self {
        ErrorSpec {
            form: ErrorForm::AdditiveNormal,
            sd,
        }
    }

    pub fn multiplicative(sd: f64) -> Self {
        ErrorSpec {
            form: ErrorForm::MultiplicativeLognormal,
            sd,
        }
    }

    pub fn is_none(&self) -> bool {
        self.form == ErrorForm::None
    }

    /// Distribution of the error term itself: N(0, sd²) or the unit-mean
    /// log-normal.
    pub fn error_dist(&self) -> Option<DistSpec> {
        match self.form {
            ErrorForm::None => None,
            ErrorForm::AdditiveNormal => DistSpec::normal(0.0, self.sd).ok(),
            ErrorForm::MultiplicativeLognormal => DistSpec::unit_mean_lognormal(self.sd).ok(),
        }
    }

    /// Identity element of the error: 0 for additive, 1 for multiplicative.
    pub fn identity(&self) -> f64 {
        match self.form {
            ErrorForm::AdditiveNormal => 0.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcentrationFamily {
    TruncatedNormal,
    /// Log-normal matched to the mean and sd of the hyperparameters.
    Lognormal,
}

/// Distribution of the latent level values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExposureModel {
    Fixed {
        dist: DistSpec,
    },
    /// One (μ(t), σ(t)) pair per calendar year, each with its own prior.
    YearlyConcentration {
        family: ConcentrationFamily,
        mu_prior: DistSpec,
        sigma_prior: DistSpec,
    },
    ScaledBeta {
        lo: f64,
        up: f64,
        a_prior: DistSpec,
        b_prior: DistSpec,
        /// Pins (a, b); shape hyperparameters are then not updated.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixed_shape: Option<[f64; 2]>,
    },
}

impl ExposureModel {
    pub fn support(&self) -> (f64, f64) {
        match self {
            ExposureModel::Fixed { dist } => dist.support(),
            ExposureModel::YearlyConcentration { .. } => (0.0, f64::INFINITY),
            ExposureModel::ScaledBeta { lo, up, .. } => (*lo, *up),
        }
    }
}

/// Log-density of a concentration level under the yearly model.
pub fn concentration_ln_pdf(family: ConcentrationFamily, x: f64, mu: f64, sigma: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    match family {
        ConcentrationFamily::TruncatedNormal => truncated_normal_positive_ln_pdf(x, mu, sigma),
        ConcentrationFamily::Lognormal => match moment_matched_lognormal(mu, sigma) {
            Some((m, s)) => lognormal_ln_pdf(x, m, s),
            None => f64::NEG_INFINITY,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: FactorName,
    pub classical: ErrorSpec,
    pub berkson: ErrorSpec,
    /// Berkson error only for groups whose values were transferred.
    #[serde(default)]
    pub berkson_transferred_only: bool,
    pub classical_domain: ClassicalDomainKind,
    pub berkson_domain: BerksonDomainKind,
    pub exposure_model: ExposureModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModelDef {
    pub tag: ModelTag,
    pub factors: Vec<FactorName>,
}

/// All factor specifications and the factor list of each measurement model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub factors: Vec<FactorSpec>,
    pub models: Vec<MeasurementModelDef>,
}

fn tn(mean: f64, sd: f64) -> DistSpec {
    DistSpec::TruncatedNormalPositive { mean, sd }
}

fn normal(mean: f64, sd: f64) -> DistSpec {
    DistSpec::Normal { mean, sd }
}

fn scaled_beta(lo: f64, up: f64) -> ExposureModel {
    ExposureModel::ScaledBeta {
        lo,
        up,
        a_prior: tn(3.0, 2.0),
        b_prior: tn(3.0, 2.0),
        fixed_shape: None,
    }
}

fn yearly(mu: (f64, f64), sigma: (f64, f64)) -> ExposureModel {
    ExposureModel::YearlyConcentration {
        family: ConcentrationFamily::TruncatedNormal,
        mu_prior: normal(mu.0, mu.1),
        sigma_prior: tn(sigma.0, sigma.1),
    }
}

impl Default for Registry {
    fn default() -> Self {
        use BerksonDomainKind as Bd;
        use ClassicalDomainKind as Cd;
        let f = |name, classical, berkson, cd, bd, exposure_model| FactorSpec {
            name,
            classical,
            berkson,
            berkson_transferred_only: false,
            classical_domain: cd,
            berkson_domain: bd,
            exposure_model,
        };
        let mut factors = vec![
            f(
                FactorName::CRn,
                ErrorSpec::multiplicative(0.59),
                ErrorSpec::multiplicative(0.33),
                Cd::PeriodObject,
                Bd::YearObject,
                yearly((6.0, 5.0), (8.0, 0.5)),
            ),
            f(
                FactorName::CExp,
                ErrorSpec::additive(0.936),
                ErrorSpec::NONE,
                Cd::PeriodObject,
                Bd::None,
                yearly((1.78, 3.0), (0.79, 2.0)),
            ),
            f(
                FactorName::CRdp,
                ErrorSpec::additive(0.03),
                ErrorSpec::multiplicative(0.13),
                Cd::PeriodObject,
                Bd::YearObject,
                yearly((0.15, 0.03), (0.2, 0.03)),
            ),
            f(
                FactorName::E,
                ErrorSpec::multiplicative(0.936),
                ErrorSpec::multiplicative(0.18),
                Cd::PeriodObject,
                Bd::YearObject,
                yearly((2.0, 3.0), (0.8, 2.0)),
            ),
            f(
                FactorName::B,
                ErrorSpec::multiplicative(0.33),
                ErrorSpec::multiplicative(0.69),
                Cd::Object,
                Bd::YearObject,
                ExposureModel::Fixed {
                    dist: DistSpec::ScaledBeta { lo: 0.15, up: 1.1, a: 1.0, b: 1.0 },
                },
            ),
            f(
                FactorName::TauE,
                ErrorSpec::multiplicative(0.37),
                ErrorSpec::multiplicative(0.33),
                Cd::Object,
                Bd::YearObject,
                ExposureModel::Fixed {
                    dist: DistSpec::ScaledBeta { lo: 0.3, up: 1.0, a: 1.0, b: 1.0 },
                },
            ),
            f(
                FactorName::Varsigma,
                ErrorSpec::multiplicative(0.33),
                ErrorSpec::multiplicative(1.45),
                Cd::Object,
                Bd::YearObject,
                scaled_beta(1.0, 1.7),
            ),
            f(
                FactorName::Phi,
                ErrorSpec::multiplicative(0.33),
                ErrorSpec::multiplicative(0.69),
                Cd::ObjectActivity,
                Bd::YearObjectActivity,
                scaled_beta(0.0, 1.3),
            ),
            f(
                FactorName::Omega,
                ErrorSpec::multiplicative(0.04),
                ErrorSpec::multiplicative(0.12),
                Cd::Period,
                Bd::YearObject,
                scaled_beta(0.6, 1.5),
            ),
            f(
                FactorName::Gamma,
                ErrorSpec::multiplicative(0.23),
                ErrorSpec::multiplicative(0.69),
                Cd::PeriodObject,
                Bd::YearObject,
                scaled_beta(0.05, 0.8),
            ),
            f(
                FactorName::CRef,
                ErrorSpec::additive(5.29),
                ErrorSpec::NONE,
                Cd::ReferenceObject,
                Bd::None,
                ExposureModel::Fixed { dist: tn(22.5, 4.0) },
            ),
            f(
                FactorName::C1937,
                ErrorSpec::additive(6.56),
                ErrorSpec::NONE,
                Cd::Global,
                Bd::None,
                ExposureModel::Fixed { dist: tn(34.09, 10.0) },
            ),
        ];
        factors[0].berkson_transferred_only = true;
        use FactorName as F;
        let models = vec![
            MeasurementModelDef {
                tag: ModelTag::M1a,
                factors: vec![F::C1937, F::CRef, F::B, F::TauE, F::Gamma, F::Omega, F::Phi],
            },
            MeasurementModelDef {
                tag: ModelTag::M2,
                factors: vec![F::CRn, F::Phi, F::Omega, F::Gamma],
            },
            MeasurementModelDef {
                tag: ModelTag::M2Expert,
                factors: vec![F::CExp, F::Phi, F::Omega, F::Gamma],
            },
            MeasurementModelDef {
                tag: ModelTag::M3,
                factors: vec![F::CRdp, F::Varsigma, F::Omega, F::Phi],
            },
            MeasurementModelDef {
                tag: ModelTag::M4,
                factors: vec![F::E, F::Phi],
            },
        ];
        Registry { factors, models }
    }
}

impl Registry {
    pub fn spec(&self, name: FactorName) -> Result<&FactorSpec, MeasurementError> {
        self.factors
            .iter()
            .find(|f| f.name == name)
            .ok_or(MeasurementError::UnknownFactor(name))
    }

    pub fn spec_mut(&mut self, name: FactorName) -> Result<&mut FactorSpec, MeasurementError> {
        self.factors
            .iter_mut()
            .find(|f| f.name == name)
            .ok_or(MeasurementError::UnknownFactor(name))
    }

    pub fn factors_of(&self, tag: ModelTag) -> &[FactorName] {
        self.models
            .iter()
            .find(|m| m.tag == tag)
            .map_or(&[], |m| m.factors.as_slice())
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        for f in &self.factors {
            for e in [&f.classical, &f.berkson] {
                if !e.is_none() && !(e.sd > 0.0 && e.sd.is_finite()) {
                    return Err(MeasurementError::Registry(format!(
                        "{}: error sd must be positive, got {}",
                        f.name, e.sd
                    )));
                }
            }
            if f.berkson.form == ErrorForm::AdditiveNormal {
                return Err(MeasurementError::Registry(format!(
                    "{}: Berkson errors must be multiplicative",
                    f.name
                )));
            }
            if f.berkson.is_none() != (f.berkson_domain == BerksonDomainKind::None) {
                return Err(MeasurementError::Registry(format!(
                    "{}: Berkson domain must be `none` exactly when there is no Berkson error",
                    f.name
                )));
            }
            if let ExposureModel::ScaledBeta { lo, up, .. } = f.exposure_model {
                DistSpec::scaled_beta(lo, up, 1.0, 1.0)?;
            }
            if self.factors.iter().filter(|g| g.name == f.name).count() > 1 {
                return Err(MeasurementError::Registry(format!("{} listed twice", f.name)));
            }
        }
        for m in &self.models {
            if m.tag == ModelTag::M0 {
                return Err(MeasurementError::Registry("M0 carries no factors".into()));
            }
            for &name in &m.factors {
                self.spec(name)?;
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, MeasurementError> {
        let r: Registry = toml::from_str(s).map_err(|e| MeasurementError::Registry(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn from_file(path: &Path) -> Result<Self, MeasurementError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("registry serializes")
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// observed = level + error, or level · error.
pub fn apply_classical(spec: &FactorSpec, level: f64, error: f64) -> Result<f64, MeasurementError> {
    match spec.classical.form {
        ErrorForm::None => Err(MeasurementError::NoClassicalError(spec.name)),
        ErrorForm::AdditiveNormal => Ok(level + error),
        ErrorForm::MultiplicativeLognormal => Ok(level * error),
    }
}

/// true = level · error · τ.
pub fn apply_berkson(_spec: &FactorSpec, level: f64, error: f64, transfer: f64) -> f64 {
    level * error * transfer
}

/// Log-density of an observed value given its level.
pub fn classical_ln(err: &ErrorSpec, observed: f64, level: f64) -> f64 {
    match err.form {
        ErrorForm::None => 0.0,
        ErrorForm::AdditiveNormal => normal_ln_pdf(observed, level, err.sd),
        ErrorForm::MultiplicativeLognormal => {
            if level > 0.0 {
                lognormal_ln_pdf(observed, level.ln() - 0.5 * err.sd * err.sd, err.sd)
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

/// Log-density of a multiplicative Berkson error term.
pub fn berkson_error_ln(err: &ErrorSpec, u: f64) -> f64 {
    match err.form {
        ErrorForm::MultiplicativeLognormal => lognormal_ln_pdf(u, -0.5 * err.sd * err.sd, err.sd),
        _ => 0.0,
    }
}

/// Per-factor values at one cell, indexed by [`FactorName::index`].
pub type FactorValues = [Option<f64>; N_FACTORS];

fn need(tag: ModelTag, v: &FactorValues, f: FactorName) -> Result<f64, MeasurementError> {
    v[f.index()].ok_or(MeasurementError::MissingFactor { tag, factor: f })
}

/// The additive term of M1a: C37·b′ + r·(C_ref/A_ref)·τ_e′·A.
pub fn m1a_bracket(cell: &ExposureCell, v: &FactorValues) -> Result<f64, MeasurementError> {
    let tag = ModelTag::M1a;
    let aux = cell.aux.ok_or(MeasurementError::Registry(
        "M1a cell without auxiliary series".into(),
    ))?;
    Ok(need(tag, v, FactorName::C1937)? * need(tag, v, FactorName::B)?
        + aux.r * (need(tag, v, FactorName::CRef)? / aux.a_ref)
            * need(tag, v, FactorName::TauE)?
            * aux.a_to)
}

/// Annual exposure (WLM) of a cell from factor values. Values exclude the
/// transfer factor, which is applied once here.
pub fn reconstruct_exposure(
    tag: ModelTag,
    cell: &ExposureCell,
    v: &FactorValues,
) -> Result<f64, MeasurementError> {
    use FactorName as F;
    let l = cell.time_fraction;
    let tau = cell.transfer_factor;
    let x = match tag {
        ModelTag::M0 => return Ok(0.0),
        ModelTag::M1a => {
            m1a_bracket(cell, v)?
                * need(tag, v, F::Gamma)?
                * need(tag, v, F::Omega)?
                * need(tag, v, F::Phi)?
                * 12.0
                * l
                * tau
        }
        ModelTag::M2 => {
            12.0 * need(tag, v, F::CRn)?
                * need(tag, v, F::Phi)?
                * need(tag, v, F::Omega)?
                * need(tag, v, F::Gamma)?
                * l
                * tau
        }
        ModelTag::M2Expert => {
            need(tag, v, F::CExp)?
                * 12.0
                * need(tag, v, F::Phi)?
                * need(tag, v, F::Omega)?
                * need(tag, v, F::Gamma)?
                * l
                * tau
        }
        ModelTag::M3 => {
            need(tag, v, F::CRdp)?
                * 12.0
                * need(tag, v, F::Varsigma)?
                * need(tag, v, F::Omega)?
                * need(tag, v, F::Phi)?
                * l
                * tau
        }
        ModelTag::M4 => need(tag, v, F::E)? * need(tag, v, F::Phi)? * l * tau,
    };
    if x < 0.0 || x.is_nan() {
        return Err(MeasurementError::NegativeExposure { tag, value: x });
    }
    Ok(x)
}

/// Factor values read from the cell's observed inputs.
pub fn observed_values(cell: &ExposureCell, registry: &Registry) -> FactorValues {
    let mut v = [None; N_FACTORS];
    for &f in registry.factors_of(cell.model) {
        v[f.index()] = f.observed(cell);
    }
    v
}

/// Per-calendar-year hyperparameters of a concentration block.
#[derive(Debug, Clone, PartialEq)]
pub struct YearHyper {
    pub years: Vec<i32>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Index into `years` of each classical group.
    pub group_year: Vec<usize>,
    /// Classical groups using each year.
    pub year_groups: Vec<Vec<usize>>,
}

/// Scaled-beta shape parameters, shared by every block of one factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeHyper {
    pub factor: FactorName,
    pub a: f64,
    pub b: f64,
    pub fixed: bool,
}

/// Latent state of one factor within one measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBlock {
    pub model: ModelTag,
    pub factor: FactorName,
    pub spec: FactorSpec,
    pub domain: FactorDomain,
    /// Observed value per classical group.
    pub observed: Vec<f64>,
    /// Latent level per classical group.
    pub level: Vec<f64>,
    /// Berkson error per Berkson group; 1 where inactive.
    pub berkson_error: Vec<f64>,
    pub berkson_active: Vec<bool>,
    pub year_hyper: Option<YearHyper>,
    /// Index into [`MeasurementState::shapes`].
    pub shape: Option<usize>,
}

impl FactorBlock {
    /// True value (without τ) of Berkson group `b`.
    pub fn true_value(&self, b: usize) -> f64 {
        self.level[self.domain.berkson_parent[b]] * self.berkson_error[b]
    }

    pub fn true_values(&self) -> Vec<f64> {
        (0..self.domain.n_berkson()).map(|b| self.true_value(b)).collect()
    }

    /// Log exposure-model density of `level` for classical group `g`.
    pub fn exposure_ln(&self, g: usize, level: f64, shapes: &[ShapeHyper]) -> f64 {
        match &self.spec.exposure_model {
            ExposureModel::Fixed { dist } => dist.log_density(level),
            ExposureModel::YearlyConcentration { family, .. } => {
                let h = self.year_hyper.as_ref().expect("yearly block has hyperparameters");
                let y = h.group_year[g];
                concentration_ln_pdf(*family, level, h.mu[y], h.sigma[y])
            }
            ExposureModel::ScaledBeta { lo, up, .. } => {
                let s = &shapes[self.shape.expect("scaled-beta block has a shape")];
                scaled_beta_ln_pdf(level, *lo, *up, s.a, s.b)
            }
        }
    }

    /// Log-prior of this block's own yearly hyperparameters.
    pub fn year_hyper_ln(&self) -> f64 {
        match (&self.spec.exposure_model, &self.year_hyper) {
            (
                ExposureModel::YearlyConcentration {
                    mu_prior,
                    sigma_prior,
                    ..
                },
                Some(h),
            ) => {
                h.mu.iter().map(|&m| mu_prior.log_density(m)).sum::<f64>()
                    + h.sigma.iter().map(|&s| sigma_prior.log_density(s)).sum::<f64>()
            }
            _ => 0.0,
        }
    }
}

/// Log-prior of one shared scale-beta shape pair.
pub fn shape_hyper_ln(spec: &FactorSpec, s: &ShapeHyper) -> f64 {
    match &spec.exposure_model {
        ExposureModel::ScaledBeta {
            a_prior, b_prior, ..
        } if !s.fixed => a_prior.log_density(s.a) + b_prior.log_density(s.b),
        _ => 0.0,
    }
}

/// Classical plus Berkson plus exposure-model log-density of a block, with
/// Berkson terms as densities of the true values given their levels, plus
/// the block's yearly hyperpriors. Shared shape hyperpriors are not included;
/// see [`MeasurementState::log_density`].
pub fn log_measurement_density(block: &FactorBlock, shapes: &[ShapeHyper]) -> f64 {
    let mut lp = 0.0;
    for g in 0..block.domain.n_classical() {
        lp += classical_ln(&block.spec.classical, block.observed[g], block.level[g]);
        lp += block.exposure_ln(g, block.level[g], shapes);
    }
    let sd = block.spec.berkson.sd;
    for b in 0..block.domain.n_berkson() {
        if block.berkson_active[b] {
            let level = block.level[block.domain.berkson_parent[b]];
            lp += lognormal_ln_pdf(block.true_value(b), level.ln() - 0.5 * sd * sd, sd);
        }
    }
    lp + block.year_hyper_ln()
}

/// Locations of one M1a cell's bracket factors: `(block, berkson group)` for
/// C37, C_ref, b and τ_e.
pub type BracketLinks = [(usize, usize); 4];

/// All factor blocks of a cohort plus shared shape hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementState {
    pub blocks: Vec<FactorBlock>,
    pub shapes: Vec<ShapeHyper>,
    /// Per cell: M1a bracket links, if the cell is M1a.
    pub bracket_links: Vec<Option<BracketLinks>>,
}

fn clamp_into(level: f64, support: (f64, f64)) -> f64 {
    let (lo, up) = support;
    let width = if up.is_finite() { up - lo } else { level.abs().max(1.0) };
    let eps = 1e-6 * width;
    level.clamp(lo + eps, if up.is_finite() { up - eps } else { f64::MAX })
}

impl MeasurementState {
    /// Blocks for every (model, factor) present in the cohort. Levels start
    /// at their observed values (clamped into support), Berkson errors at 1,
    /// hyperparameters at their prior means.
    pub fn build(cohort: &Cohort, registry: &Registry) -> Result<Self, MeasurementError> {
        registry.validate()?;
        let mut blocks = Vec::new();
        let mut shapes: Vec<ShapeHyper> = Vec::new();
        for tag in ModelTag::WITH_ERROR {
            let cells = cohort.cells_of(tag);
            if cells.is_empty() {
                continue;
            }
            for &name in registry.factors_of(tag) {
                let spec = registry.spec(name)?.clone();
                let domain = FactorDomain::build(
                    cohort,
                    &cells,
                    spec.classical_domain,
                    spec.berkson_domain,
                )?;
                let mut observed = vec![f64::NAN; domain.n_classical()];
                for (pos, &ci) in domain.cells.iter().enumerate() {
                    let g = domain.berkson_parent[domain.cell_berkson[pos]];
                    let v = name.observed(&cohort.cells[ci]).ok_or(
                        MeasurementError::MissingFactor { tag, factor: name },
                    )?;
                    if observed[g].is_nan() {
                        observed[g] = v;
                    } else if observed[g].to_bits() != v.to_bits() {
                        return Err(MeasurementError::InconsistentObserved {
                            model: tag,
                            factor: name,
                            group: domain.classical_keys[g].to_string(),
                            a: observed[g],
                            b: v,
                        });
                    }
                }
                let support = spec.exposure_model.support();
                let level = observed.iter().map(|&o| clamp_into(o, support)).collect();
                let berkson_active: Vec<bool> = (0..domain.n_berkson())
                    .map(|b| {
                        !spec.berkson.is_none()
                            && (!spec.berkson_transferred_only || domain.berkson_transferred[b])
                    })
                    .collect();
                let year_hyper = match &spec.exposure_model {
                    ExposureModel::YearlyConcentration {
                        mu_prior,
                        sigma_prior,
                        ..
                    } => {
                        let mut years = domain.classical_first_year.clone();
                        years.sort_unstable();
                        years.dedup();
                        let group_year: Vec<usize> = domain
                            .classical_first_year
                            .iter()
                            .map(|y| years.binary_search(y).expect("year present"))
                            .collect();
                        let mut year_groups = vec![Vec::new(); years.len()];
                        for (g, &y) in group_year.iter().enumerate() {
                            year_groups[y].push(g);
                        }
                        Some(YearHyper {
                            mu: vec![mu_prior.mean(); years.len()],
                            sigma: vec![sigma_prior.mean(); years.len()],
                            years,
                            group_year,
                            year_groups,
                        })
                    }
                    _ => None,
                };
                let shape = match &spec.exposure_model {
                    ExposureModel::ScaledBeta {
                        a_prior,
                        b_prior,
                        fixed_shape,
                        ..
                    } => Some(match shapes.iter().position(|s| s.factor == name) {
                        Some(i) => i,
                        None => {
                            let (a, b, fixed) = match fixed_shape {
                                Some([a, b]) => (*a, *b, true),
                                None => (a_prior.mean(), b_prior.mean(), false),
                            };
                            shapes.push(ShapeHyper {
                                factor: name,
                                a,
                                b,
                                fixed,
                            });
                            shapes.len() - 1
                        }
                    }),
                    _ => None,
                };
                blocks.push(FactorBlock {
                    model: tag,
                    factor: name,
                    berkson_error: vec![1.0; domain.n_berkson()],
                    berkson_active,
                    spec,
                    domain,
                    observed,
                    level,
                    year_hyper,
                    shape,
                });
            }
        }
        let mut bracket_links = vec![None; cohort.n_cells()];
        let bracket = [FactorName::C1937, FactorName::CRef, FactorName::B, FactorName::TauE];
        let mut partial: Vec<[Option<(usize, usize)>; 4]> = vec![[None; 4]; cohort.n_cells()];
        for (bi, block) in blocks.iter().enumerate() {
            if block.model != ModelTag::M1a {
                continue;
            }
            if let Some(slot) = bracket.iter().position(|&f| f == block.factor) {
                for (pos, &ci) in block.domain.cells.iter().enumerate() {
                    partial[ci][slot] = Some((bi, block.domain.cell_berkson[pos]));
                }
            }
        }
        for (ci, p) in partial.iter().enumerate() {
            if cohort.cells[ci].model == ModelTag::M1a {
                if let [Some(a), Some(b), Some(c), Some(d)] = *p {
                    bracket_links[ci] = Some([a, b, c, d]);
                }
            }
        }
        Ok(MeasurementState {
            blocks,
            shapes,
            bracket_links,
        })
    }

    /// Current true factor values at every cell.
    pub fn cell_values(&self, n_cells: usize) -> Vec<FactorValues> {
        let mut out = vec![[None; N_FACTORS]; n_cells];
        for block in &self.blocks {
            let idx = block.factor.index();
            for (pos, &ci) in block.domain.cells.iter().enumerate() {
                out[ci][idx] = Some(block.true_value(block.domain.cell_berkson[pos]));
            }
        }
        out
    }

    /// Annual exposure of every cell from the current true values.
    pub fn reconstruct_all(&self, cohort: &Cohort) -> Result<Vec<f64>, MeasurementError> {
        let values = self.cell_values(cohort.n_cells());
        cohort
            .cells
            .iter()
            .zip(&values)
            .map(|(c, v)| reconstruct_exposure(c.model, c, v))
            .collect()
    }

    /// M1a bracket of cell `ci` from the current state.
    pub fn bracket_of(&self, cohort: &Cohort, ci: usize) -> f64 {
        let links = self.bracket_links[ci].expect("M1a cell has bracket links");
        let v = |k: usize| self.blocks[links[k].0].true_value(links[k].1);
        let aux = cohort.cells[ci].aux.expect("M1a cell has auxiliary series");
        v(0) * v(2) + aux.r * (v(1) / aux.a_ref) * v(3) * aux.a_to
    }

    /// Total measurement-side log-density, hyperpriors included.
    pub fn log_density(&self, registry: &Registry) -> f64 {
        let mut lp: f64 = self
            .blocks
            .iter()
            .map(|b| log_measurement_density(b, &self.shapes))
            .sum();
        for s in &self.shapes {
            if let Ok(spec) = registry.spec(s.factor) {
                lp += shape_hyper_ln(spec, s);
            }
        }
        lp
    }
}
