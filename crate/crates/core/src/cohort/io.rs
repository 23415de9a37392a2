use super::{
    Cohort, CohortError, ExposureCell, M1aAux, ModelTag, ObservedInputs, PeriodIds, WorkerRecord,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    /// `int`, `real`, `bool`, `model` or `text`.
    pub kind: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub description: String,
}

/// Layout of a cohort directory: a cell table and a worker table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSchema {
    pub cells_file: String,
    pub workers_file: String,
    pub cells: Vec<ColumnSpec>,
    pub workers: Vec<ColumnSpec>,
}

fn col(name: &str, kind: &str, required: bool, unit: &str, description: &str) -> ColumnSpec {
    ColumnSpec {
        name: name.into(),
        kind: kind.into(),
        required,
        unit: unit.into(),
        description: description.into(),
    }
}

impl Default for CohortSchema {
    fn default() -> Self {
        let cells = vec![
            col("worker_id", "int", true, "", "worker identifier"),
            col("year", "int", true, "calendar year", "exposure year t"),
            col("object_id", "int", true, "", "mining object o"),
            col("activity_id", "int", true, "", "job activity j"),
            col("model", "model", true, "", "M0, M1a, M2, M2_Expert, M3 or M4"),
            col("time_fraction", "real", true, "", "fraction of the working year l"),
            col("transfer_factor", "real", true, "", "transfer factor tau, 1 if none"),
            col("transferred", "bool", true, "", "1 if concentration values were transferred"),
            col("observed_exposure", "real", true, "WLM", "JEM annual exposure"),
            col("p_t", "int", false, "", "working-time period"),
            col("p_to", "int", false, "", "period-object group"),
            col("p_oj", "int", false, "", "object-activity group"),
            col("conc_obs", "real", false, "", "observed concentration-type input (C_Rn, C_Exp, C_RDP or E)"),
            col("phi_obs", "real", false, "", "observed activity weighting factor"),
            col("omega_obs", "real", false, "", "observed working time factor"),
            col("gamma_obs", "real", false, "", "observed equilibrium factor"),
            col("varsigma_obs", "real", false, "", "observed ventilation correction factor"),
            col("b_obs", "real", false, "", "observed M1a b factor"),
            col("tau_e_obs", "real", false, "", "observed M1a tau_e factor"),
            col("conc_ref_obs", "real", false, "Bq/m3", "reference-object radon concentration"),
            col("conc_1937_obs", "real", false, "Bq/m3", "1937/38 radon concentration"),
            col("ref_object", "int", false, "", "linked reference object (M1a)"),
            col("r", "real", false, "", "known series r(t,o) (M1a)"),
            col("a_to", "real", false, "", "known series A(t,o) (M1a)"),
            col("a_ref", "real", false, "", "A of the linked reference object in its reference year (M1a)"),
        ];
        let workers = vec![
            col("worker_id", "int", true, "", "worker identifier"),
            col("birth_year", "real", true, "calendar year", "age = calendar time - birth_year"),
            col("entry_age", "real", true, "years", "left-truncation age"),
            col("exit_age", "real", true, "years", "event or censoring age"),
            col("event", "bool", true, "", "1 if the disease event occurred at exit_age"),
        ];
        CohortSchema {
            cells_file: "cells.csv".into(),
            workers_file: "workers.csv".into(),
            cells,
            workers,
        }
    }
}

impl CohortSchema {
    pub fn from_toml_str(s: &str) -> Result<Self, CohortError> {
        let schema: CohortSchema = toml::from_str(s).map_err(|e| CohortError::Schema(e.to_string()))?;
        let default = CohortSchema::default();
        for (have, want, file) in [
            (&schema.cells, &default.cells, "cells"),
            (&schema.workers, &default.workers, "workers"),
        ] {
            for w in want {
                if !have.iter().any(|c| c.name == w.name) {
                    return Err(CohortError::Schema(format!(
                        "{file} table does not declare column `{}`",
                        w.name
                    )));
                }
            }
        }
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self, CohortError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("schema serializes")
    }
}

struct Row<'a> {
    file: &'a str,
    row: usize,
    record: &'a csv::StringRecord,
    index: &'a HashMap<String, usize>,
}

impl Row<'_> {
    fn raw(&self, field: &str) -> &str {
        self.index
            .get(field)
            .and_then(|&i| self.record.get(i))
            .unwrap_or("")
            .trim()
    }

    fn bad(&self, field: &str, message: String) -> CohortError {
        CohortError::Malformed {
            file: self.file.into(),
            row: self.row,
            field: field.into(),
            message,
        }
    }

    fn opt<T: FromStr>(&self, field: &str) -> Result<Option<T>, CohortError>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.raw(field);
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<T>()
            .map(Some)
            .map_err(|e| self.bad(field, format!("cannot parse `{s}`: {e}")))
    }

    fn req<T: FromStr>(&self, field: &str) -> Result<T, CohortError>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(field)?
            .ok_or_else(|| self.bad(field, "value is required".into()))
    }

    fn flag(&self, field: &str) -> Result<bool, CohortError> {
        match self.raw(field) {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            s => Err(self.bad(field, format!("expected 0/1, got `{s}`"))),
        }
    }
}

fn header_index(
    file: &str,
    headers: &csv::StringRecord,
    columns: &[ColumnSpec],
) -> Result<HashMap<String, usize>, CohortError> {
    let index: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    for c in columns.iter().filter(|c| c.required) {
        if !index.contains_key(&c.name) {
            return Err(CohortError::MissingColumn {
                file: file.into(),
                column: c.name.clone(),
            });
        }
    }
    Ok(index)
}

fn parse_cell(r: &Row) -> Result<ExposureCell, CohortError> {
    let model: ModelTag = r.req("model")?;
    let ref_object: Option<u32> = r.opt("ref_object")?;
    let aux = match ref_object {
        Some(ref_object) => Some(M1aAux {
            ref_object,
            r: r.req("r")?,
            a_to: r.req("a_to")?,
            a_ref: r.req("a_ref")?,
        }),
        None => None,
    };
    Ok(ExposureCell {
        worker_id: r.req("worker_id")?,
        year: r.req("year")?,
        object_id: r.req("object_id")?,
        activity_id: r.req("activity_id")?,
        model,
        time_fraction: r.req("time_fraction")?,
        transfer_factor: r.req("transfer_factor")?,
        transferred: r.flag("transferred")?,
        observed_exposure: r.req("observed_exposure")?,
        periods: PeriodIds {
            p_t: r.opt("p_t")?,
            p_to: r.opt("p_to")?,
            p_oj: r.opt("p_oj")?,
        },
        observed: ObservedInputs {
            conc: r.opt("conc_obs")?,
            phi: r.opt("phi_obs")?,
            omega: r.opt("omega_obs")?,
            gamma: r.opt("gamma_obs")?,
            varsigma: r.opt("varsigma_obs")?,
            b: r.opt("b_obs")?,
            tau_e: r.opt("tau_e_obs")?,
            conc_ref: r.opt("conc_ref_obs")?,
            conc_1937: r.opt("conc_1937_obs")?,
        },
        aux,
    })
}

fn parse_worker(r: &Row) -> Result<WorkerRecord, CohortError> {
    Ok(WorkerRecord {
        worker_id: r.req("worker_id")?,
        birth_year: r.req("birth_year")?,
        entry_age: r.req("entry_age")?,
        exit_age: r.req("exit_age")?,
        event: r.flag("event")?,
        cells: 0..0,
    })
}

fn read_table<T>(
    path: &Path,
    columns: &[ColumnSpec],
    parse: impl Fn(&Row) -> Result<T, CohortError>,
) -> Result<Vec<T>, CohortError> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let index = header_index(&file, reader.headers()?, columns)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let record = rec?;
        // row numbers count the header as row 1
        let row = Row {
            file: &file,
            row: i + 2,
            record: &record,
            index: &index,
        };
        out.push(parse(&row)?);
    }
    Ok(out)
}

/// Reads `workers_file` and `cells_file` from `dir` and validates the result.
pub fn load_cohort(dir: &Path, schema: &CohortSchema) -> Result<Cohort, CohortError> {
    let workers = read_table(&dir.join(&schema.workers_file), &schema.workers, parse_worker)?;
    let cells = read_table(&dir.join(&schema.cells_file), &schema.cells, parse_cell)?;
    Cohort::new(workers, cells)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

/// Writes the cohort in the layout `load_cohort` reads. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_cohort(cohort: &Cohort, dir: &Path, schema: &CohortSchema) -> Result<(), CohortError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(&schema.workers_file))?;
    w.write_record(["worker_id", "birth_year", "entry_age", "exit_age", "event"])?;
    for wr in &cohort.workers {
        w.write_record([
            wr.worker_id.to_string(),
            wr.birth_year.to_string(),
            wr.entry_age.to_string(),
            wr.exit_age.to_string(),
            flag(wr.event),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(&schema.cells_file))?;
    let default = CohortSchema::default();
    w.write_record(default.cells.iter().map(|c| c.name.as_str()))?;
    for c in &cohort.cells {
        let o = &c.observed;
        w.write_record([
            c.worker_id.to_string(),
            c.year.to_string(),
            c.object_id.to_string(),
            c.activity_id.to_string(),
            c.model.to_string(),
            c.time_fraction.to_string(),
            c.transfer_factor.to_string(),
            flag(c.transferred),
            c.observed_exposure.to_string(),
            fmt_opt(c.periods.p_t),
            fmt_opt(c.periods.p_to),
            fmt_opt(c.periods.p_oj),
            fmt_opt(o.conc),
            fmt_opt(o.phi),
            fmt_opt(o.omega),
            fmt_opt(o.gamma),
            fmt_opt(o.varsigma),
            fmt_opt(o.b),
            fmt_opt(o.tau_e),
            fmt_opt(o.conc_ref),
            fmt_opt(o.conc_1937),
            fmt_opt(c.aux.map(|a| a.ref_object)),
            fmt_opt(c.aux.map(|a| a.r)),
            fmt_opt(c.aux.map(|a| a.a_to)),
            fmt_opt(c.aux.map(|a| a.a_ref)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
