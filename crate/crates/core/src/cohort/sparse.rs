use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("vector length {got} does not match matrix column count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("inner dimensions differ: {left_cols} columns vs {right_rows} rows")]
    DimensionMismatch { left_cols: usize, right_rows: usize },
    #[error("entry ({row}, {col}) lies outside a {rows}x{cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("duplicate entry at ({row}, {col})")]
    Duplicate { row: usize, col: usize },
    #[error("product entry ({row}, {col}) equals {count}; result is not binary")]
    NotBinary { row: usize, col: usize, count: usize },
}

/// Binary incidence matrix in row-compressed form.
///
/// Every stored entry is 1, so products reduce to gather sums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseBinaryMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparseBinaryMatrix {
    /// Builds from `(row, col)` coordinates of the 1-entries, in any order.
    pub fn from_coords(
        rows: usize,
        cols: usize,
        mut coords: Vec<(usize, usize)>,
    ) -> Result<Self, SparseError> {
        coords.sort_unstable();
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(coords.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c) in &coords {
            if r >= rows || c >= cols {
                return Err(SparseError::OutOfBounds {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            if prev == Some((r, c)) {
                return Err(SparseError::Duplicate { row: r, col: c });
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseBinaryMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
        })
    }

    /// Mapping matrix: row `i` has its single 1 in column `parent[i]`.
    pub fn from_parents(cols: usize, parent: &[usize]) -> Result<Self, SparseError> {
        let coords = parent.iter().enumerate().map(|(r, &c)| (r, c)).collect();
        Self::from_coords(parent.len(), cols, coords)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    /// Sorted `(row, col)` coordinates of the 1-entries.
    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c)))
    }

    /// True when every row holds exactly one entry.
    pub fn is_mapping(&self) -> bool {
        (0..self.rows).all(|r| self.row_ptr[r + 1] - self.row_ptr[r] == 1)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out)?;
        Ok(out)
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), SparseError> {
        if x.len() != self.cols {
            return Err(SparseError::LengthMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        if out.len() != self.rows {
            return Err(SparseError::LengthMismatch {
                expected: self.rows,
                got: out.len(),
            });
        }
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &c in self.row(r) {
                acc += x[c];
            }
            *o = acc;
        }
        Ok(())
    }

    /// Boolean product `self · rhs`; fails if any entry of the integer product
    /// exceeds one.
    pub fn matmul(&self, rhs: &SparseBinaryMatrix) -> Result<SparseBinaryMatrix, SparseError> {
        if self.cols != rhs.rows {
            return Err(SparseError::DimensionMismatch {
                left_cols: self.cols,
                right_rows: rhs.rows,
            });
        }
        let mut coords = Vec::new();
        let mut counts = vec![0usize; rhs.cols];
        let mut touched = Vec::new();
        for r in 0..self.rows {
            for &k in self.row(r) {
                for &c in rhs.row(k) {
                    if counts[c] == 0 {
                        touched.push(c);
                    }
                    counts[c] += 1;
                }
            }
            for &c in &touched {
                if counts[c] > 1 {
                    return Err(SparseError::NotBinary {
                        row: r,
                        col: c,
                        count: counts[c],
                    });
                }
                coords.push((r, c));
                counts[c] = 0;
            }
            touched.clear();
        }
        Self::from_coords(self.rows, rhs.cols, coords)
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut out = vec![vec![0u8; self.cols]; self.rows];
        for (r, c) in self.coords() {
            out[r][c] = 1;
        }
        out
    }
}
