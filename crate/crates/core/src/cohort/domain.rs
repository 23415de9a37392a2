use super::{Cohort, CohortError, ExposureCell, SparseBinaryMatrix};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Grouping over which one classical error (one level value) is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalDomainKind {
    /// p_t
    Period,
    /// p_{t,o}
    PeriodObject,
    /// p_{o,j}
    ObjectActivity,
    /// o
    Object,
    /// o_0(o), the reference object linked to an M1a object
    ReferenceObject,
    /// a single value for every cell
    Global,
}

/// Grouping over which one Berkson error is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BerksonDomainKind {
    /// (t, o)
    YearObject,
    /// (t, o, j)
    YearObjectActivity,
    /// No Berkson component: one "Berkson" group per classical group.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainKey {
    Period(u32),
    PeriodObject(u32),
    ObjectActivity(u32),
    Object(u32),
    ReferenceObject(u32),
    Global,
    YearObject(i32, u32),
    YearObjectActivity(i32, u32, u32),
}

impl fmt::Display for DomainKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DomainKey::Period(p) => write!(f, "p_t={p}"),
            DomainKey::PeriodObject(p) => write!(f, "p_to={p}"),
            DomainKey::ObjectActivity(p) => write!(f, "p_oj={p}"),
            DomainKey::Object(o) => write!(f, "o={o}"),
            DomainKey::ReferenceObject(o) => write!(f, "o0={o}"),
            DomainKey::Global => write!(f, "global"),
            DomainKey::YearObject(t, o) => write!(f, "(t={t}, o={o})"),
            DomainKey::YearObjectActivity(t, o, j) => write!(f, "(t={t}, o={o}, j={j})"),
        }
    }
}

impl ClassicalDomainKind {
    pub fn key(self, cell: &ExposureCell) -> Option<DomainKey> {
        match self {
            ClassicalDomainKind::Period => cell.periods.p_t.map(DomainKey::Period),
            ClassicalDomainKind::PeriodObject => cell.periods.p_to.map(DomainKey::PeriodObject),
            ClassicalDomainKind::ObjectActivity => {
                cell.periods.p_oj.map(DomainKey::ObjectActivity)
            }
            ClassicalDomainKind::Object => Some(DomainKey::Object(cell.object_id)),
            ClassicalDomainKind::ReferenceObject => {
                cell.aux.map(|a| DomainKey::ReferenceObject(a.ref_object))
            }
            ClassicalDomainKind::Global => Some(DomainKey::Global),
        }
    }
}

impl BerksonDomainKind {
    pub fn key(self, cell: &ExposureCell) -> Option<DomainKey> {
        match self {
            BerksonDomainKind::YearObject => Some(DomainKey::YearObject(cell.year, cell.object_id)),
            BerksonDomainKind::YearObjectActivity => Some(DomainKey::YearObjectActivity(
                cell.year,
                cell.object_id,
                cell.activity_id,
            )),
            BerksonDomainKind::None => None,
        }
    }
}

/// Domain index of one uncertain factor: classical groups, the Berkson groups
/// nested inside them, and the cells inside those.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDomain {
    pub classical_kind: ClassicalDomainKind,
    pub berkson_kind: BerksonDomainKind,
    /// Participating cells (global indices, ascending).
    pub cells: Vec<usize>,
    pub classical_keys: Vec<DomainKey>,
    /// Earliest calendar year among each classical group's cells.
    pub classical_first_year: Vec<i32>,
    pub berkson_keys: Vec<DomainKey>,
    /// Classical group of each Berkson group.
    pub berkson_parent: Vec<usize>,
    /// Any cell of the Berkson group carries transferred concentration values.
    pub berkson_transferred: Vec<bool>,
    /// Berkson group of each participating cell (parallel to `cells`).
    pub cell_berkson: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingLevel {
    Classical,
    Berkson,
    Cells,
}

impl FactorDomain {
    /// Indexes `cells` (global indices) of `cohort`. Fails if a cell lacks a
    /// classical key or a Berkson group straddles two classical groups.
    pub fn build(
        cohort: &Cohort,
        cells: &[usize],
        classical_kind: ClassicalDomainKind,
        berkson_kind: BerksonDomainKind,
    ) -> Result<Self, CohortError> {
        let mut cells = cells.to_vec();
        cells.sort_unstable();
        cells.dedup();

        let mut classical: BTreeMap<DomainKey, i32> = BTreeMap::new();
        let mut cell_classical_key = Vec::with_capacity(cells.len());
        for &ci in &cells {
            let cell = &cohort.cells[ci];
            let key = classical_kind.key(cell).ok_or_else(|| CohortError::Uncovered {
                cell: ci,
                level: format!("{classical_kind:?} classical"),
            })?;
            classical
                .entry(key)
                .and_modify(|y| *y = (*y).min(cell.year))
                .or_insert(cell.year);
            cell_classical_key.push(key);
        }
        let classical_keys: Vec<DomainKey> = classical.keys().copied().collect();
        let classical_first_year: Vec<i32> = classical.values().copied().collect();
        let classical_pos = |k: &DomainKey| classical_keys.binary_search(k).expect("indexed key");

        // Berkson key -> (parent classical index, transferred)
        let mut berkson: BTreeMap<DomainKey, (usize, bool)> = BTreeMap::new();
        let mut cell_berkson_key = Vec::with_capacity(cells.len());
        for (pos, &ci) in cells.iter().enumerate() {
            let cell = &cohort.cells[ci];
            let parent = classical_pos(&cell_classical_key[pos]);
            let key = berkson_kind.key(cell).unwrap_or(cell_classical_key[pos]);
            match berkson.get_mut(&key) {
                Some((p, transferred)) => {
                    if *p != parent {
                        return Err(CohortError::CellInvariant {
                            cell: ci,
                            worker: cell.worker_id,
                            year: cell.year,
                            rule: format!(
                                "Berkson group {key} spans classical groups {} and {}",
                                classical_keys[*p], classical_keys[parent]
                            ),
                        });
                    }
                    *transferred |= cell.transferred;
                }
                None => {
                    berkson.insert(key, (parent, cell.transferred));
                }
            }
            cell_berkson_key.push(key);
        }
        let berkson_keys: Vec<DomainKey> = berkson.keys().copied().collect();
        let berkson_parent = berkson.values().map(|v| v.0).collect();
        let berkson_transferred = berkson.values().map(|v| v.1).collect();
        let cell_berkson = cell_berkson_key
            .iter()
            .map(|k| berkson_keys.binary_search(k).expect("indexed key"))
            .collect();

        Ok(FactorDomain {
            classical_kind,
            berkson_kind,
            cells,
            classical_keys,
            classical_first_year,
            berkson_keys,
            berkson_parent,
            berkson_transferred,
            cell_berkson,
        })
    }

    pub fn n_classical(&self) -> usize {
        self.classical_keys.len()
    }

    pub fn n_berkson(&self) -> usize {
        self.berkson_keys.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Berkson groups of each classical group.
    pub fn berkson_children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classical()];
        for (b, &p) in self.berkson_parent.iter().enumerate() {
            out[p].push(b);
        }
        out
    }

    /// Positions (into `cells`) of each Berkson group's cells.
    pub fn berkson_cell_positions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_berkson()];
        for (pos, &b) in self.cell_berkson.iter().enumerate() {
            out[b].push(pos);
        }
        out
    }
}

/// Mapping matrix expanding values from a coarser level to a finer one.
///
/// Supported: classical→Berkson, Berkson→cells, classical→cells. Rows are the
/// finer level in index order; each row has exactly one 1.
pub fn build_mapping(
    index: &FactorDomain,
    from: MappingLevel,
    to: MappingLevel,
) -> Result<SparseBinaryMatrix, CohortError> {
    let m = match (from, to) {
        (MappingLevel::Classical, MappingLevel::Berkson) => {
            SparseBinaryMatrix::from_parents(index.n_classical(), &index.berkson_parent)?
        }
        (MappingLevel::Berkson, MappingLevel::Cells) => {
            SparseBinaryMatrix::from_parents(index.n_berkson(), &index.cell_berkson)?
        }
        (MappingLevel::Classical, MappingLevel::Cells) => {
            let parents: Vec<usize> = index
                .cell_berkson
                .iter()
                .map(|&b| index.berkson_parent[b])
                .collect();
            SparseBinaryMatrix::from_parents(index.n_classical(), &parents)?
        }
        _ => {
            return Err(CohortError::Schema(format!(
                "levels do not nest: {from:?} -> {to:?}"
            )))
        }
    };
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::bare_cell;
    use super::super::{ModelTag, WorkerRecord};
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Ten (t, o) pairs over three working-time periods.
    fn working_time_example() -> Cohort {
        let pairs = [
            (1955, 1, 1),
            (1955, 2, 1),
            (1956, 1, 1),
            (1957, 1, 1),
            (1958, 1, 1),
            (1959, 1, 2),
            (1959, 2, 2),
            (1967, 1, 3),
            (1968, 1, 3),
            (1968, 2, 3),
        ];
        let mut workers = Vec::new();
        let mut cells = Vec::new();
        for (i, &(t, o, p)) in pairs.iter().enumerate() {
            let id = i as u64 + 1;
            workers.push(WorkerRecord {
                worker_id: id,
                birth_year: 1920.0,
                entry_age: 30.0,
                exit_age: 80.0,
                event: false,
                cells: 0..0,
            });
            let mut c = bare_cell(id, t);
            c.object_id = o;
            c.model = ModelTag::M2;
            c.periods.p_t = Some(p);
            cells.push(c);
        }
        // fill the remaining inputs M2 requires
        for c in &mut cells {
            c.periods.p_to = Some(1);
            c.periods.p_oj = Some(1);
            c.observed.conc = Some(1.0);
            c.observed.phi = Some(1.0);
            c.observed.omega = Some(1.0);
            c.observed.gamma = Some(1.0);
            c.observed_exposure = 12.0;
        }
        Cohort::new(workers, cells).unwrap()
    }

    #[test]
    fn working_time_mapping_reproduces_printed_matrix() {
        let cohort = working_time_example();
        let all: Vec<usize> = (0..cohort.n_cells()).collect();
        let idx = FactorDomain::build(
            &cohort,
            &all,
            ClassicalDomainKind::Period,
            BerksonDomainKind::YearObject,
        )
        .unwrap();
        assert_eq!(idx.n_classical(), 3);
        assert_eq!(idx.n_berkson(), 10);
        let m = build_mapping(&idx, MappingLevel::Classical, MappingLevel::Berkson).unwrap();
        let expected: Vec<Vec<u8>> = [0, 0, 0, 0, 0, 1, 1, 2, 2, 2]
            .iter()
            .map(|&c| (0..3).map(|k| u8::from(k == c)).collect())
            .collect();
        assert_eq!(m.to_dense(), expected);
        let v = m.mul_vec(&[0.9, 1.1, 1.3]).unwrap();
        assert_eq!(v, vec![0.9, 0.9, 0.9, 0.9, 0.9, 1.1, 1.1, 1.3, 1.3, 1.3]);
    }

    #[test]
    fn global_group_maps_to_a_column_of_ones() {
        let cohort = working_time_example();
        let all: Vec<usize> = (0..cohort.n_cells()).collect();
        let idx = FactorDomain::build(
            &cohort,
            &all,
            ClassicalDomainKind::Global,
            BerksonDomainKind::None,
        )
        .unwrap();
        let m = build_mapping(&idx, MappingLevel::Classical, MappingLevel::Cells).unwrap();
        assert_eq!(m.cols(), 1);
        assert!(m.to_dense().iter().all(|r| r == &vec![1u8]));
    }

    #[test]
    fn uncovered_cell_is_named() {
        let mut cohort = working_time_example();
        cohort.cells[3].periods.p_t = None;
        let all: Vec<usize> = (0..cohort.n_cells()).collect();
        let err = FactorDomain::build(
            &cohort,
            &all,
            ClassicalDomainKind::Period,
            BerksonDomainKind::YearObject,
        )
        .unwrap_err();
        assert!(matches!(err, CohortError::Uncovered { cell: 3, .. }), "{err}");
    }

    #[test]
    fn straddling_berkson_group_is_rejected() {
        let mut cohort = working_time_example();
        // (1955, 2) now claims period 2 while (1955, 1) stays in period 1: still
        // nested. Put (1959, 2) into period 1 so (1959, *) splits.
        cohort.cells[6].periods.p_t = Some(1);
        let all: Vec<usize> = (0..cohort.n_cells()).collect();
        let ok = FactorDomain::build(
            &cohort,
            &all,
            ClassicalDomainKind::Period,
            BerksonDomainKind::YearObject,
        );
        assert!(ok.is_ok(), "distinct (t,o) keys never straddle");
        let err = FactorDomain::build(
            &cohort,
            &all,
            ClassicalDomainKind::Period,
            BerksonDomainKind::YearObjectActivity,
        );
        assert!(err.is_ok());
        // two cells sharing a (t,o) key but different periods
        cohort.cells[1].year = 1955;
        cohort.cells[1].object_id = 1;
        cohort.cells[1].periods.p_t = Some(2);
        let err = FactorDomain::build(
            &cohort,
            &all,
            ClassicalDomainKind::Period,
            BerksonDomainKind::YearObject,
        )
        .unwrap_err();
        assert!(err.to_string().contains("spans classical groups"), "{err}");
    }

    fn nested_cohort(periods: &[u32], objects: &[u32]) -> Cohort {
        let mut workers = Vec::new();
        let mut cells = Vec::new();
        for (i, (&p, &o)) in periods.iter().zip(objects).enumerate() {
            let id = i as u64 + 1;
            workers.push(WorkerRecord {
                worker_id: id,
                birth_year: 1900.0,
                entry_age: 20.0,
                exit_age: 100.0,
                event: false,
                cells: 0..0,
            });
            let mut c = bare_cell(id, 1930 + p as i32);
            c.object_id = o;
            c.periods.p_t = Some(p / 3);
            cells.push(c);
        }
        Cohort::new(workers, cells).unwrap()
    }

    proptest! {
        #[test]
        fn mapped_vector_equals_lookup_and_composition_holds(
            spec in proptest::collection::vec((0u32..20, 0u32..4), 1..80),
            seed in any::<u64>(),
        ) {
            let (years, objects): (Vec<u32>, Vec<u32>) = spec.into_iter().unzip();
            let cohort = nested_cohort(&years, &objects);
            let all: Vec<usize> = (0..cohort.n_cells()).collect();
            let idx = FactorDomain::build(
                &cohort, &all, ClassicalDomainKind::Period, BerksonDomainKind::YearObject,
            ).unwrap();
            let levels: Vec<f64> = (0..idx.n_classical())
                .map(|i| (seed.wrapping_add(i as u64) % 997) as f64 / 7.0)
                .collect();
            // dictionary lookup oracle keyed by p_t
            let lookup: HashMap<u32, f64> = idx.classical_keys.iter().zip(&levels)
                .map(|(k, &v)| match k { DomainKey::Period(p) => (*p, v), _ => unreachable!() })
                .collect();
            let to_cells = build_mapping(&idx, MappingLevel::Classical, MappingLevel::Cells).unwrap();
            let mapped = to_cells.mul_vec(&levels).unwrap();
            for (pos, &ci) in idx.cells.iter().enumerate() {
                let p = cohort.cells[ci].periods.p_t.unwrap();
                prop_assert_eq!(mapped[pos], lookup[&p]);
            }
            let cb = build_mapping(&idx, MappingLevel::Classical, MappingLevel::Berkson).unwrap();
            let bc = build_mapping(&idx, MappingLevel::Berkson, MappingLevel::Cells).unwrap();
            prop_assert_eq!(bc.matmul(&cb).unwrap(), to_cells);
        }
    }
}
