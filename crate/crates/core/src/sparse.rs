//! Compressed sparse column storage assembled pattern first.
//!
//! The sparsity pattern is derived from the patches (elements or faces) that
//! couple unknowns, then values are scattered into the fixed pattern. This
//! avoids materializing triplet lists and makes the result independent of the
//! order in which contributions arrive, up to floating-point summation order
//! which is fixed by the patch order.

use std::io::Write;

use crate::error::{Error, Result};

/// CSC matrix with `u32` indices. Row indices within a column are sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<u32>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
    /// Only the lower triangle of a symmetric matrix is stored.
    lower: bool,
}

/// Which part of the pattern to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Storage {
    Full,
    Lower,
}

impl CscMatrix {
    /// Builds the pattern coupling `rows(p) × cols(p)` for every patch `p`.
    /// Entries equal to [`crate::spaces::NO_DOF`] are skipped.
    pub fn from_patches<'a, F>(
        nrows: usize,
        ncols: usize,
        n_patches: usize,
        patch: F,
        storage: Storage,
    ) -> Result<Self>
    where
        F: Fn(usize) -> (&'a [usize], &'a [usize]),
    {
        let skip = crate::spaces::NO_DOF;
        // column -> patches incidence
        let mut count = vec![0usize; ncols + 1];
        for p in 0..n_patches {
            for &c in patch(p).1 {
                if c != skip {
                    count[c + 1] += 1;
                }
            }
        }
        for c in 0..ncols {
            count[c + 1] += count[c];
        }
        let mut fill = count.clone();
        let mut incidence = vec![0u32; count[ncols]];
        for p in 0..n_patches {
            for &c in patch(p).1 {
                if c != skip {
                    incidence[fill[c]] = p as u32;
                    fill[c] += 1;
                }
            }
        }
        drop(fill);

        let mut col_ptr = Vec::with_capacity(ncols + 1);
        col_ptr.push(0u32);
        let mut row_idx: Vec<u32> = Vec::new();
        let mut marker = vec![usize::MAX; nrows];
        let mut rows_here: Vec<u32> = Vec::new();
        for c in 0..ncols {
            rows_here.clear();
            for &p in &incidence[count[c]..count[c + 1]] {
                for &r in patch(p as usize).0 {
                    if r == skip || marker[r] == c {
                        continue;
                    }
                    if storage == Storage::Lower && r < c {
                        continue;
                    }
                    marker[r] = c;
                    rows_here.push(r as u32);
                }
            }
            rows_here.sort_unstable();
            row_idx.extend_from_slice(&rows_here);
            if row_idx.len() > u32::MAX as usize {
                return Err(Error::Capability(
                    "sparse matrix exceeds 2^32 stored entries".into(),
                ));
            }
            col_ptr.push(row_idx.len() as u32);
        }
        let nnz = row_idx.len();
        Ok(CscMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values: vec![0.0; nnz],
            lower: storage == Storage::Lower,
        })
    }

    /// Square matrix from a dense array, keeping entries with nonzero value.
    pub fn from_dense(a: &[Vec<f64>], storage: Storage) -> Self {
        let nrows = a.len();
        let ncols = if nrows == 0 { 0 } else { a[0].len() };
        let mut col_ptr = vec![0u32];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for c in 0..ncols {
            for (r, row) in a.iter().enumerate() {
                if storage == Storage::Lower && r < c {
                    continue;
                }
                if row[c] != 0.0 {
                    row_idx.push(r as u32);
                    values.push(row[c]);
                }
            }
            col_ptr.push(row_idx.len() as u32);
        }
        CscMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
            lower: storage == Storage::Lower,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn is_lower(&self) -> bool {
        self.lower
    }

    pub fn col_ptr(&self) -> &[u32] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[u32] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (r, c) = if self.lower && r < c { (c, r) } else { (r, c) };
        let start = self.col_ptr[c] as usize;
        let end = self.col_ptr[c + 1] as usize;
        self.row_idx[start..end]
            .binary_search(&(r as u32))
            .ok()
            .map(|p| start + p)
    }

    /// Adds `v` at `(r, c)`. For lower storage the upper-triangle mirror is
    /// ignored, so callers may scatter full symmetric element matrices.
    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        if self.lower && r < c {
            return;
        }
        let p = self
            .position(r, c)
            .unwrap_or_else(|| panic!("entry ({r}, {c}) is outside the sparsity pattern"));
        self.values[p] += v;
    }

    /// Entry `(r, c)`, read through the symmetric mirror for lower storage.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |p| self.values[p])
    }

    /// Scatters a dense local block `local[i][j]` to `(rows[i], cols[j])`,
    /// skipping [`crate::spaces::NO_DOF`].
    pub fn scatter(&mut self, rows: &[usize], cols: &[usize], local: &[f64]) {
        let skip = crate::spaces::NO_DOF;
        let nc = cols.len();
        for (j, &c) in cols.iter().enumerate() {
            if c == skip {
                continue;
            }
            let start = self.col_ptr[c] as usize;
            let end = self.col_ptr[c + 1] as usize;
            let col_rows = &self.row_idx[start..end];
            for (i, &r) in rows.iter().enumerate() {
                if r == skip || (self.lower && r < c) {
                    continue;
                }
                let v = local[i * nc + j];
                if v == 0.0 {
                    continue;
                }
                let p = col_rows
                    .binary_search(&(r as u32))
                    .unwrap_or_else(|_| panic!("entry ({r}, {c}) is outside the sparsity pattern"));
                self.values[start + p] += v;
            }
        }
    }

    /// `y = M x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for c in 0..self.ncols {
            let xc = x[c];
            for p in self.col_ptr[c] as usize..self.col_ptr[c + 1] as usize {
                let r = self.row_idx[p] as usize;
                y[r] += self.values[p] * xc;
                if self.lower && r != c {
                    y[c] += self.values[p] * x[r];
                }
            }
        }
        y
    }

    /// `y = Mᵀ x` for full storage.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        if self.lower {
            return self.matvec(x);
        }
        let mut y = vec![0.0; self.ncols];
        for (c, yc) in y.iter_mut().enumerate() {
            for p in self.col_ptr[c] as usize..self.col_ptr[c + 1] as usize {
                *yc += self.values[p] * x[self.row_idx[p] as usize];
            }
        }
        y
    }

    /// `xᵀ M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for c in 0..self.ncols {
            for p in self.col_ptr[c] as usize..self.col_ptr[c + 1] as usize {
                let r = self.row_idx[p] as usize;
                d[r][c] += self.values[p];
                if self.lower && r != c {
                    d[c][r] += self.values[p];
                }
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |M − Mᵀ|` for full square storage (zero for lower storage).
    pub fn asymmetry(&self) -> f64 {
        if self.lower {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for c in 0..self.ncols {
            for p in self.col_ptr[c] as usize..self.col_ptr[c + 1] as usize {
                let r = self.row_idx[p] as usize;
                worst = worst.max((self.values[p] - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Symmetric lower-triangle copy of a full square matrix.
    pub fn to_lower(&self) -> Self {
        assert_eq!(self.nrows, self.ncols);
        if self.lower {
            return self.clone();
        }
        let mut col_ptr = vec![0u32];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for c in 0..self.ncols {
            for p in self.col_ptr[c] as usize..self.col_ptr[c + 1] as usize {
                if self.row_idx[p] as usize >= c {
                    row_idx.push(self.row_idx[p]);
                    values.push(self.values[p]);
                }
            }
            col_ptr.push(row_idx.len() as u32);
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
            lower: true,
        }
    }

    /// Matrix Market coordinate dump (`symmetric` for lower storage).
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let kind = if self.lower { "symmetric" } else { "general" };
        writeln!(out, "%%MatrixMarket matrix coordinate real {kind}")?;
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for c in 0..self.ncols {
            for p in self.col_ptr[c] as usize..self.col_ptr[c + 1] as usize {
                writeln!(out, "{} {} {:.17e}", self.row_idx[p] + 1, c + 1, self.values[p])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patches_define_pattern() {
        let patches: Vec<Vec<usize>> = vec![vec![0, 1], vec![1, 2]];
        let m = CscMatrix::from_patches(3, 3, 2, |p| (&patches[p][..], &patches[p][..]), Storage::Full)
            .unwrap();
        assert_eq!(m.nnz(), 7);
        let l = CscMatrix::from_patches(3, 3, 2, |p| (&patches[p][..], &patches[p][..]), Storage::Lower)
            .unwrap();
        assert_eq!(l.nnz(), 5);
    }

    #[test]
    fn scatter_and_matvec_agree_with_dense() {
        let patches: Vec<Vec<usize>> = vec![vec![0, 1], vec![2, 1]];
        let mut full =
            CscMatrix::from_patches(3, 3, 2, |p| (&patches[p][..], &patches[p][..]), Storage::Full)
                .unwrap();
        let mut low =
            CscMatrix::from_patches(3, 3, 2, |p| (&patches[p][..], &patches[p][..]), Storage::Lower)
                .unwrap();
        let local = [2.0, -1.0, -1.0, 3.0];
        for p in &patches {
            full.scatter(p, p, &local);
            low.scatter(p, p, &local);
        }
        let x = [1.0, 2.0, 3.0];
        assert_eq!(full.matvec(&x), low.matvec(&x));
        assert_eq!(full.to_dense(), low.to_dense());
        assert_eq!(full.get(1, 1), 6.0);
        assert_eq!(full.asymmetry(), 0.0);
        assert_eq!(full.to_lower(), low);
    }

    #[test]
    fn matrix_market_header() {
        let m = CscMatrix::from_dense(&[vec![1.0, 0.0], vec![2.0, 3.0]], Storage::Lower);
        let mut buf = Vec::new();
        m.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n"));
    }
}
