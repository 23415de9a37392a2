//! Cohort data model: exposure cells, worker histories, domain indexing and the
//! sparse mapping / cumulation structures shared by every sampler update.
//!
//! Cells are ordered worker-major, year-minor once at load time. Every vector
//! the sampler keeps over cells uses this ordering.

mod domain;
mod io;
mod sparse;

pub use domain::{
    build_mapping, BerksonDomainKind, ClassicalDomainKind, DomainKey, FactorDomain, MappingLevel,
};
pub use io::{load_cohort, write_cohort, CohortSchema};
pub use sparse::{SparseBinaryMatrix, SparseError};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("{file}: row {row}: field `{field}`: {message}")]
    Malformed {
        file: String,
        row: usize,
        field: String,
        message: String,
    },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("worker {worker}: {rule}")]
    Invariant { worker: u64, rule: String },
    #[error("cell {cell} (worker {worker}, year {year}): {rule}")]
    CellInvariant {
        cell: usize,
        worker: u64,
        year: i32,
        rule: String,
    },
    #[error("cell {cell} is not covered by any {level} group")]
    Uncovered { cell: usize, level: String },
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("schema file: {0}")]
    Schema(String),
}

/// Measurement model governing how a cell's annual exposure was assessed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelTag {
    M0,
    M1a,
    M2,
    #[serde(rename = "M2_Expert")]
    M2Expert,
    M3,
    M4,
}

impl ModelTag {
    pub const ALL: [ModelTag; 6] = [
        ModelTag::M0,
        ModelTag::M1a,
        ModelTag::M2,
        ModelTag::M2Expert,
        ModelTag::M3,
        ModelTag::M4,
    ];

    /// Models carrying uncertain factors, in sampler update order.
    pub const WITH_ERROR: [ModelTag; 5] = [
        ModelTag::M1a,
        ModelTag::M2,
        ModelTag::M2Expert,
        ModelTag::M3,
        ModelTag::M4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::M0 => "M0",
            ModelTag::M1a => "M1a",
            ModelTag::M2 => "M2",
            ModelTag::M2Expert => "M2_Expert",
            ModelTag::M3 => "M3",
            ModelTag::M4 => "M4",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelTag::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown model tag `{s}`"))
    }
}

/// Observed (JEM / expert) values of the uncertain factors at one cell. Which
/// entries are required depends on the cell's model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObservedInputs {
    /// Concentration-type input: C_Rn (M2), C_Exp (M2_Expert), C_RDP (M3), E (M4).
    pub conc: Option<f64>,
    pub phi: Option<f64>,
    pub omega: Option<f64>,
    pub gamma: Option<f64>,
    pub varsigma: Option<f64>,
    pub b: Option<f64>,
    pub tau_e: Option<f64>,
    /// Radon concentration of the reference object in its reference year (M1a).
    pub conc_ref: Option<f64>,
    /// Radon concentration of object 003 in 1937/38 (M1a).
    pub conc_1937: Option<f64>,
}

/// Known, error-free series used by M1a cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct M1aAux {
    pub ref_object: u32,
    /// r(t,o)
    pub r: f64,
    /// A(t,o)
    pub a_to: f64,
    /// A(t0(o0), o0) of the linked reference object.
    pub a_ref: f64,
}

/// Shared-value groups of the classical error structure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeriodIds {
    /// p_t
    pub p_t: Option<u32>,
    /// p_{t,o}
    pub p_to: Option<u32>,
    /// p_{o,j}
    pub p_oj: Option<u32>,
}

/// One worker-year-object-activity record.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureCell {
    pub worker_id: u64,
    pub year: i32,
    pub object_id: u32,
    pub activity_id: u32,
    pub model: ModelTag,
    pub time_fraction: f64,
    pub transfer_factor: f64,
    /// Concentration values were extrapolated from other years/objects.
    pub transferred: bool,
    /// JEM annual exposure in WLM.
    pub observed_exposure: f64,
    pub periods: PeriodIds,
    pub observed: ObservedInputs,
    pub aux: Option<M1aAux>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerRecord {
    pub worker_id: u64,
    /// Calendar birth year (fractional); calendar time `c` maps to age `c - birth_year`.
    pub birth_year: f64,
    pub entry_age: f64,
    pub exit_age: f64,
    pub event: bool,
    /// Range into [`Cohort::cells`].
    pub cells: Range<usize>,
}

impl WorkerRecord {
    /// Age at which exposure of calendar year `year` is added to the cumulative
    /// total. Exposure accrues at the end of each working year.
    pub fn accrual_age(&self, year: i32) -> f64 {
        f64::from(year) + 1.0 - self.birth_year
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }
}

/// Validated cohort with cells in worker-major, year-minor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub workers: Vec<WorkerRecord>,
    pub cells: Vec<ExposureCell>,
}

impl ModelTag {
    /// Observed inputs a cell of this model must carry.
    pub fn required_inputs(self) -> &'static [&'static str] {
        match self {
            ModelTag::M0 => &[],
            ModelTag::M1a => &[
                "conc_ref", "conc_1937", "b", "tau_e", "gamma", "omega", "phi", "p_t", "p_to",
                "p_oj", "aux",
            ],
            ModelTag::M2 | ModelTag::M2Expert => {
                &["conc", "gamma", "omega", "phi", "p_t", "p_to", "p_oj"]
            }
            ModelTag::M3 => &["conc", "varsigma", "omega", "phi", "p_t", "p_to", "p_oj"],
            ModelTag::M4 => &["conc", "phi", "p_to", "p_oj"],
        }
    }
}

impl ExposureCell {
    fn has_input(&self, name: &str) -> bool {
        let o = &self.observed;
        match name {
            "conc" => o.conc.is_some(),
            "phi" => o.phi.is_some(),
            "omega" => o.omega.is_some(),
            "gamma" => o.gamma.is_some(),
            "varsigma" => o.varsigma.is_some(),
            "b" => o.b.is_some(),
            "tau_e" => o.tau_e.is_some(),
            "conc_ref" => o.conc_ref.is_some(),
            "conc_1937" => o.conc_1937.is_some(),
            "p_t" => self.periods.p_t.is_some(),
            "p_to" => self.periods.p_to.is_some(),
            "p_oj" => self.periods.p_oj.is_some(),
            "aux" => self.aux.is_some(),
            _ => false,
        }
    }

    /// First required input absent from this cell, if any.
    pub fn missing_input(&self) -> Option<&'static str> {
        self.model
            .required_inputs()
            .iter()
            .copied()
            .find(|n| !self.has_input(n))
    }
}

impl Cohort {
    /// Orders workers by id and cells by (worker, year), links cell ranges, and
    /// checks every type invariant.
    pub fn new(
        mut workers: Vec<WorkerRecord>,
        mut cells: Vec<ExposureCell>,
    ) -> Result<Self, CohortError> {
        workers.sort_by_key(|w| w.worker_id);
        for pair in workers.windows(2) {
            if pair[0].worker_id == pair[1].worker_id {
                return Err(CohortError::Invariant {
                    worker: pair[0].worker_id,
                    rule: "duplicate worker id".into(),
                });
            }
        }
        // stable: equal (worker, year) pairs keep file order and are rejected below
        cells.sort_by_key(|c| (c.worker_id, c.year));

        let mut start = 0usize;
        for w in workers.iter_mut() {
            let mut end = start;
            while end < cells.len() && cells[end].worker_id == w.worker_id {
                end += 1;
            }
            if start < cells.len() && cells[start].worker_id < w.worker_id {
                let c = &cells[start];
                return Err(CohortError::CellInvariant {
                    cell: start,
                    worker: c.worker_id,
                    year: c.year,
                    rule: "worker id has no entry in the worker table".into(),
                });
            }
            w.cells = start..end;
            start = end;
        }
        if start < cells.len() {
            let c = &cells[start];
            return Err(CohortError::CellInvariant {
                cell: start,
                worker: c.worker_id,
                year: c.year,
                rule: "worker id has no entry in the worker table".into(),
            });
        }
        let cohort = Cohort { workers, cells };
        cohort.validate()?;
        Ok(cohort)
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        for w in &self.workers {
            let bad = |rule: &str| CohortError::Invariant {
                worker: w.worker_id,
                rule: rule.to_string(),
            };
            if !(w.entry_age.is_finite() && w.exit_age.is_finite() && w.birth_year.is_finite()) {
                return Err(bad("ages and birth year must be finite"));
            }
            if w.entry_age < 0.0 {
                return Err(bad("entry_age must be non-negative"));
            }
            if w.entry_age >= w.exit_age {
                return Err(bad("entry_age must be strictly less than exit_age"));
            }
            let first_year = (w.birth_year + w.entry_age).floor() as i32;
            let last_year = (w.birth_year + w.exit_age).floor() as i32;
            let cells = &self.cells[w.cells.clone()];
            for pair in cells.windows(2) {
                if pair[1].year <= pair[0].year {
                    return Err(bad(&format!(
                        "exposure years must be strictly increasing (year {} repeats or decreases)",
                        pair[1].year
                    )));
                }
            }
            for c in cells {
                if c.year < first_year || c.year > last_year {
                    return Err(bad(&format!(
                        "exposure year {} outside follow-up calendar years [{first_year}, {last_year}]",
                        c.year
                    )));
                }
            }
        }
        for (i, c) in self.cells.iter().enumerate() {
            let bad = |rule: String| CohortError::CellInvariant {
                cell: i,
                worker: c.worker_id,
                year: c.year,
                rule,
            };
            if !(c.time_fraction >= 0.0 && c.time_fraction.is_finite()) {
                return Err(bad("time_fraction must be >= 0".into()));
            }
            if !(c.transfer_factor > 0.0 && c.transfer_factor.is_finite()) {
                return Err(bad("transfer_factor must be > 0".into()));
            }
            if !(c.observed_exposure >= 0.0 && c.observed_exposure.is_finite()) {
                return Err(bad("observed_exposure must be a finite non-negative WLM".into()));
            }
            if c.model == ModelTag::M0 && c.observed_exposure != 0.0 {
                return Err(bad("M0 cells must have observed_exposure = 0".into()));
            }
            if let Some(name) = c.missing_input() {
                return Err(bad(format!("model {} requires input `{name}`", c.model)));
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Indices of the cells belonging to `model`, in global order.
    pub fn cells_of(&self, model: ModelTag) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i].model == model)
            .collect()
    }

    /// Worker index owning each cell.
    pub fn cell_owner(&self) -> Vec<usize> {
        let mut owner = vec![0usize; self.cells.len()];
        for (wi, w) in self.workers.iter().enumerate() {
            for c in w.cells.clone() {
                owner[c] = wi;
            }
        }
        owner
    }

    pub fn observed_exposure(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.observed_exposure).collect()
    }
}

/// Block lower-triangular matrix turning annual exposures into per-worker
/// running totals. Worker `i` with `n_i` cells contributes `n_i (n_i + 1) / 2`
/// ones.
pub fn build_cumulation(workers: &[WorkerRecord]) -> SparseBinaryMatrix {
    let n: usize = workers.iter().map(|w| w.cells.end).max().unwrap_or(0);
    let mut coords = Vec::new();
    for w in workers {
        for row in w.cells.clone() {
            for col in w.cells.start..=row {
                coords.push((row, col));
            }
        }
    }
    SparseBinaryMatrix::from_coords(n, n, coords).expect("cell ranges are disjoint and in bounds")
}

/// Per-worker cumulative exposure `X_i^cum(t)` from annual exposures.
pub fn cumulate(annual: &[f64], plan: &SparseBinaryMatrix) -> Result<Vec<f64>, SparseError> {
    plan.mul_vec(annual)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

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

    /// Workers with the given numbers of consecutive exposure years from 1955.
    pub fn layout(counts: &[usize]) -> Cohort {
        let mut workers = Vec::new();
        let mut cells = Vec::new();
        for (i, &n) in counts.iter().enumerate() {
            let id = i as u64 + 1;
            workers.push(WorkerRecord {
                worker_id: id,
                birth_year: 1930.0,
                entry_age: 25.0,
                exit_age: 70.0,
                event: i % 2 == 0,
                cells: 0..0,
            });
            for y in 0..n {
                cells.push(bare_cell(id, 1955 + y as i32));
            }
        }
        Cohort::new(workers, cells).unwrap()
    }
}
