//! Sparse direct solves of the symmetric saddle-point systems.
//!
//! The lower triangle is symmetrically equilibrated, ordered with AMD or
//! nested dissection (whichever predicts less fill) and factorized as `LDLᵀ` by faer's supernodal kernel, followed by iterative
//! refinement against the unscaled matrix. If the pivot-free `LDLᵀ` cannot
//! meet the residual target, a sparse LU with partial pivoting is tried.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::linalg::cholesky::llt::factor::LltRegularization;
use faer::prelude::*;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, supernodal::SupernodalLdltRef, CholeskySymbolicParams,
    SymbolicCholesky, SymbolicCholeskyRaw, SymmetricOrdering,
};
use faer::perm::PermRef;
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, Par, Side};

use crate::error::{Error, Result};
use crate::ordering::nested_dissection;
use crate::sparse::{CscMatrix, Storage};

/// Relative residual required of every solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// `LDLᵀ` pivots below this fraction of the largest pivot mark the equilibrated
/// matrix as numerically singular.
pub const PIVOT_TOLERANCE: f64 = 1e-13;

const MAX_REFINEMENT_STEPS: usize = 20;

/// Symmetric saddle-point system `[[A, Bᵀ], [B, −C]] x = b` (lower storage).
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub matrix: CscMatrix,
    pub rhs: Vec<f64>,
    /// Number of stress unknowns (leading block).
    pub n_sigma: usize,
    /// Number of displacement unknowns (trailing block).
    pub n_u: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factorization {
    Ldlt,
    Lu,
}

#[derive(Clone, Debug)]
pub struct SolveStats {
    pub residual: f64,
    pub refinement_steps: usize,
    pub factorization: Factorization,
    pub factor_nnz: usize,
    /// Smallest `|d_i| / max |d|` of the `LDLᵀ` pivots of the equilibrated matrix.
    pub min_pivot_ratio: f64,
}

impl BlockSystem {
    pub fn new(matrix: CscMatrix, rhs: Vec<f64>, n_sigma: usize, n_u: usize) -> Result<Self> {
        if !matrix.is_lower() || matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidInput(
                "block system needs a square matrix in lower storage".into(),
            ));
        }
        if matrix.nrows() != n_sigma + n_u || rhs.len() != n_sigma + n_u {
            return Err(Error::InvalidInput(format!(
                "block sizes {n_sigma} + {n_u} do not match matrix order {} / rhs length {}",
                matrix.nrows(),
                rhs.len()
            )));
        }
        Ok(BlockSystem {
            matrix,
            rhs,
            n_sigma,
            n_u,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_sigma + self.n_u
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖Mx − b‖ / ‖b‖`, or the absolute residual when `b = 0`.
pub fn residual(system: &BlockSystem, x: &[f64]) -> f64 {
    let r = residual_vector(system, x);
    let nb = norm(&system.rhs);
    let nr = norm(&r);
    if nb == 0.0 {
        nr
    } else {
        nr / nb
    }
}

fn residual_vector(system: &BlockSystem, x: &[f64]) -> Vec<f64> {
    let mx = system.matrix.matvec(x);
    system.rhs.iter().zip(mx).map(|(b, m)| b - m).collect()
}

/// Symmetric scaling `s_i = 1/√(max_j |m_ij|)`.
fn equilibration(m: &CscMatrix) -> Vec<f64> {
    let n = m.nrows();
    let mut colmax = vec![0.0f64; n];
    let (cp, ri, v) = (m.col_ptr(), m.row_idx(), m.values());
    for c in 0..n {
        for p in cp[c] as usize..cp[c + 1] as usize {
            let r = ri[p] as usize;
            let a = v[p].abs();
            colmax[c] = colmax[c].max(a);
            colmax[r] = colmax[r].max(a);
        }
    }
    colmax
        .into_iter()
        .map(|m| if m > 0.0 { 1.0 / m.sqrt() } else { 1.0 })
        .collect()
}

fn scaled_values(m: &CscMatrix, s: &[f64]) -> Vec<f64> {
    let (cp, ri, v) = (m.col_ptr(), m.row_idx(), m.values());
    let mut out = v.to_vec();
    for c in 0..m.ncols() {
        for p in cp[c] as usize..cp[c + 1] as usize {
            out[p] *= s[c] * s[ri[p] as usize];
        }
    }
    out
}

trait Correction {
    /// Overwrites `r` (scaled residual) with the scaled correction.
    fn apply(&self, r: &mut [f64]);
}

struct LdltFactor {
    symbolic: SymbolicCholesky<u32>,
    values: Vec<f64>,
}

impl Correction for LdltFactor {
    fn apply(&self, r: &mut [f64]) {
        let ldlt = faer::sparse::linalg::cholesky::LdltRef::new(&self.symbolic, &self.values);
        let n = r.len();
        let req = self
            .symbolic
            .solve_in_place_scratch::<f64>(1, Par::Seq);
        let mut buf = MemBuffer::new(req);
        let stack = MemStack::new(&mut buf);
        let rhs = MatMut::from_column_major_slice_mut(r, n, 1);
        ldlt.solve_in_place_with_conj(Conj::No, rhs, Par::Seq, stack);
    }
}

struct LuFactor {
    lu: faer::sparse::linalg::solvers::Lu<u32, f64>,
}

impl Correction for LuFactor {
    fn apply(&self, r: &mut [f64]) {
        let n = r.len();
        let rhs = MatMut::from_column_major_slice_mut(r, n, 1);
        self.lu.solve_in_place(rhs);
    }
}

fn symbolic_lower(m: &CscMatrix) -> SymbolicSparseColMatRef<'_, u32> {
    SymbolicSparseColMatRef::new_checked(m.nrows(), m.ncols(), m.col_ptr(), None, m.row_idx())
}

/// Symbolic factorization under the ordering with the smaller factor.
fn analyze(
    m: &CscMatrix,
    params: CholeskySymbolicParams<'_>,
) -> std::result::Result<SymbolicCholesky<u32>, faer::sparse::FaerError> {
    let sym = symbolic_lower(m);
    let amd = factorize_symbolic_cholesky(sym, Side::Lower, SymmetricOrdering::Amd, params)?;
    let Some((fwd, inv)) = nested_dissection(m) else {
        return Ok(amd);
    };
    let perm = PermRef::new_checked(&fwd, &inv, m.nrows());
    match factorize_symbolic_cholesky(sym, Side::Lower, SymmetricOrdering::Custom(perm), params) {
        Ok(nd) if nd.len_val() < amd.len_val() => Ok(nd),
        _ => Ok(amd),
    }
}

/// `LDLᵀ` of the scaled lower triangle. Returns the factor and the smallest
/// pivot ratio together with its original index.
fn factor_ldlt(m: &CscMatrix, scaled: &[f64]) -> Result<(LdltFactor, f64, usize)> {
    let sym = symbolic_lower(m);
    let params = CholeskySymbolicParams {
        supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
        ..Default::default()
    };
    let symbolic = analyze(m, params)
        .map_err(|e| Error::Capability(format!("symbolic factorization failed: {e:?}")))?;
    let mut values = vec![0.0f64; symbolic.len_val()];
    let req = symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default());
    let mut buf = MemBuffer::new(req);
    let stack = MemStack::new(&mut buf);
    let a = SparseColMatRef::new(sym, scaled);
    let result = symbolic.factorize_numeric_ldlt(
        &mut values,
        a,
        Side::Lower,
        LdltRegularization::default(),
        Par::Seq,
        stack,
        Default::default(),
    );
    let perm_fwd: Option<Vec<usize>> = symbolic
        .perm()
        .map(|p| p.arrays().0.iter().map(|&i| i as usize).collect());
    let original = |i: usize| perm_fwd.as_ref().map_or(i, |p| p[i]);
    if let Err(faer::linalg::cholesky::ldlt::factor::LdltError::ZeroPivot { index }) = result {
        return Err(Error::Singular {
            pivot: original(permuted_pivot(&symbolic, index)),
        });
    }
    let (mut dmax, mut dmin, mut imin) = (0.0f64, f64::INFINITY, 0usize);
    for (j, d) in factor_diagonal(&symbolic, &values).into_iter().enumerate() {
        let a = if d.is_finite() { d.abs() } else { 0.0 };
        dmax = dmax.max(a);
        if a < dmin {
            dmin = a;
            imin = j;
        }
    }
    let ratio = if dmax > 0.0 { dmin / dmax } else { 0.0 };
    Ok((LdltFactor { symbolic, values }, ratio, original(imin)))
}

/// The simplicial kernels report failed pivots one past their position.
fn permuted_pivot(symbolic: &SymbolicCholesky<u32>, index: usize) -> usize {
    match symbolic.raw() {
        SymbolicCholeskyRaw::Simplicial(_) => index.saturating_sub(1),
        SymbolicCholeskyRaw::Supernodal(_) => index,
    }
    .min(symbolic.nrows().saturating_sub(1))
}

/// Diagonal of a numeric factor in the permuted ordering: `D` for `LDLᵀ`,
/// `diag L` for `LLᵀ`.
fn factor_diagonal(symbolic: &SymbolicCholesky<u32>, values: &[f64]) -> Vec<f64> {
    match symbolic.raw() {
        SymbolicCholeskyRaw::Supernodal(sn) => {
            let f = SupernodalLdltRef::new(sn, values);
            let mut out = Vec::with_capacity(symbolic.nrows());
            for s in 0..sn.n_supernodes() {
                let val = f.supernode(s).val();
                out.extend((0..val.ncols()).map(|j| val[(j, j)]));
            }
            out
        }
        SymbolicCholeskyRaw::Simplicial(sp) => {
            let cp = sp.col_ptr();
            (0..symbolic.nrows()).map(|j| values[cp[j] as usize]).collect()
        }
    }
}

fn full_from_lower(m: &CscMatrix, scaled: &[f64]) -> (Vec<u32>, Vec<u32>, Vec<f64>) {
    let n = m.ncols();
    let (cp, ri) = (m.col_ptr(), m.row_idx());
    let mut count = vec![0usize; n + 1];
    for c in 0..n {
        for p in cp[c] as usize..cp[c + 1] as usize {
            let r = ri[p] as usize;
            count[c + 1] += 1;
            if r != c {
                count[r + 1] += 1;
            }
        }
    }
    for c in 0..n {
        count[c + 1] += count[c];
    }
    let mut fill = count.clone();
    let nnz = count[n];
    let mut rows = vec![0u32; nnz];
    let mut vals = vec![0.0; nnz];
    // column c receives (r, c) for r >= c from its own column and (r, c) for
    // r < c from the mirrored entries; visiting columns in order keeps rows sorted
    for c in 0..n {
        for p in cp[c] as usize..cp[c + 1] as usize {
            let r = ri[p] as usize;
            if r != c {
                rows[fill[r]] = c as u32;
                vals[fill[r]] = scaled[p];
                fill[r] += 1;
            }
        }
    }
    for c in 0..n {
        for p in cp[c] as usize..cp[c + 1] as usize {
            rows[fill[c]] = ri[p];
            vals[fill[c]] = scaled[p];
            fill[c] += 1;
        }
    }
    (count.into_iter().map(|c| c as u32).collect(), rows, vals)
}

fn factor_lu(m: &CscMatrix, scaled: &[f64]) -> Result<LuFactor> {
    let (cp, ri, v) = full_from_lower(m, scaled);
    let n = m.nrows();
    let sym = SymbolicSparseColMatRef::new_checked(n, n, &cp, None, &ri);
    let a = SparseColMatRef::new(sym, &v);
    let lu = a.sp_lu().map_err(|e| match e {
        faer::sparse::linalg::LuError::SymbolicSingular { index } => Error::Singular { pivot: index },
        other => Error::Capability(format!("sparse LU failed: {other:?}")),
    })?;
    Ok(LuFactor { lu })
}

fn refine(
    system: &BlockSystem,
    scale: &[f64],
    factor: &dyn Correction,
) -> (Vec<f64>, f64, usize) {
    let n = system.dim();
    let nb = norm(&system.rhs);
    let mut x = vec![0.0; n];
    let mut r = system.rhs.clone();
    let mut best = (x.clone(), f64::INFINITY);
    let mut steps = 0;
    for step in 0..MAX_REFINEMENT_STEPS {
        let mut d: Vec<f64> = r.iter().zip(scale).map(|(ri, si)| ri * si).collect();
        factor.apply(&mut d);
        for i in 0..n {
            x[i] += d[i] * scale[i];
        }
        r = residual_vector(system, &x);
        let res = if nb == 0.0 { norm(&r) } else { norm(&r) / nb };
        steps = step + 1;
        if !res.is_finite() {
            break;
        }
        if res < best.1 {
            let improvement = best.1 / res;
            best = (x.clone(), res);
            if res <= RESIDUAL_TOLERANCE * 1e-2 || (res <= RESIDUAL_TOLERANCE && improvement < 2.0) {
                break;
            }
        } else {
            break;
        }
    }
    (best.0, best.1, steps)
}

/// Solves the system; see the module documentation for the strategy.
pub fn solve(system: &BlockSystem) -> Result<(Vec<f64>, SolveStats)> {
    let n = system.dim();
    if n == 0 {
        return Ok((
            Vec::new(),
            SolveStats {
                residual: 0.0,
                refinement_steps: 0,
                factorization: Factorization::Ldlt,
                factor_nnz: 0,
                min_pivot_ratio: 1.0,
            },
        ));
    }
    if norm(&system.rhs) == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                residual: 0.0,
                refinement_steps: 0,
                factorization: Factorization::Ldlt,
                factor_nnz: 0,
                min_pivot_ratio: 1.0,
            },
        ));
    }
    let m = &system.matrix;
    let scale = equilibration(m);
    let scaled = scaled_values(m, &scale);

    let mut singular_hint: Option<usize> = None;
    let mut last_residual = f64::INFINITY;
    let mut ratio = 0.0;
    match factor_ldlt(m, &scaled) {
        Ok((factor, r, imin)) => {
            ratio = r;
            if r > PIVOT_TOLERANCE {
                let (x, res, steps) = refine(system, &scale, &factor);
                last_residual = res;
                if res <= RESIDUAL_TOLERANCE {
                    return Ok((
                        x,
                        SolveStats {
                            residual: res,
                            refinement_steps: steps,
                            factorization: Factorization::Ldlt,
                            factor_nnz: factor.values.len(),
                            min_pivot_ratio: r,
                        },
                    ));
                }
            } else {
                singular_hint = Some(imin);
            }
        }
        Err(Error::Singular { pivot }) => singular_hint = Some(pivot),
        Err(e) => return Err(e),
    }

    match factor_lu(m, &scaled) {
        Ok(lu) => {
            let (x, res, steps) = refine(system, &scale, &lu);
            if res <= RESIDUAL_TOLERANCE && singular_hint.is_none() {
                return Ok((
                    x,
                    SolveStats {
                        residual: res,
                        refinement_steps: steps,
                        factorization: Factorization::Lu,
                        factor_nnz: 0,
                        min_pivot_ratio: ratio,
                    },
                ));
            }
            if res.is_finite() {
                last_residual = last_residual.min(res);
            }
        }
        Err(Error::Singular { pivot }) => {
            singular_hint.get_or_insert(pivot);
        }
        Err(e) => return Err(e),
    }
    match singular_hint {
        Some(pivot) => Err(Error::Singular { pivot }),
        None => Err(Error::NotConverged {
            residual: last_residual,
        }),
    }
}

/// Attempts a sparse Cholesky factorization of a symmetric matrix given in
/// lower storage; on failure returns the original index of the offending pivot.
pub fn check_positive_definite(m: &CscMatrix) -> std::result::Result<(), usize> {
    assert!(m.is_lower());
    if m.nrows() == 0 {
        return Ok(());
    }
    let scale = equilibration(m);
    let scaled = scaled_values(m, &scale);
    let sym = symbolic_lower(m);
    let symbolic = analyze(m, CholeskySymbolicParams::default()).map_err(|_| 0usize)?;
    let mut values = vec![0.0f64; symbolic.len_val()];
    let req = symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default());
    let mut buf = MemBuffer::new(req);
    let stack = MemStack::new(&mut buf);
    let a = SparseColMatRef::new(sym, &scaled);
    // a relative threshold catches rank deficiency that rounding turns into
    // tiny positive pivots
    let reg = LltRegularization {
        dynamic_regularization_delta: 0.0,
        dynamic_regularization_epsilon: 0.0,
    };
    let original = |i: usize| {
        symbolic
            .perm()
            .map_or(i, |p| p.arrays().0[i] as usize)
    };
    match symbolic.factorize_numeric_llt(&mut values, a, Side::Lower, reg, Par::Seq, stack, Default::default()) {
        Err(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index }) => {
            return Err(original(permuted_pivot(&symbolic, index)));
        }
        Ok(_) => {}
    }
    let mut dmax = 0.0f64;
    let mut worst = (f64::INFINITY, 0usize);
    for (j, l) in factor_diagonal(&symbolic, &values).into_iter().enumerate() {
        let d = l * l;
        dmax = dmax.max(d);
        if d < worst.0 {
            worst = (d, j);
        }
    }
    if worst.0 <= PIVOT_TOLERANCE * dmax {
        return Err(original(worst.1));
    }
    Ok(())
}

/// Dense-input convenience used in tests and small examples.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let m = CscMatrix::from_dense(a, Storage::Lower);
    let n = b.len();
    let system = BlockSystem::new(m, b.to_vec(), n, 0)?;
    Ok(solve(&system)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let x = solve_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 0.0]).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
    }

    #[test]
    fn small_indefinite_system() {
        let x = solve_dense(&[vec![1.0, 1.0], vec![1.0, 0.0]], &[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && x[1].abs() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let m = CscMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, -3.0]], Storage::Lower);
        let s = BlockSystem::new(m, vec![0.0, 0.0], 1, 1).unwrap();
        let (x, stats) = solve(&s).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(stats.residual, 0.0);
        assert_eq!(residual(&s, &x), 0.0);
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let err = solve_dense(
            &[vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            &[1.0, 2.0, 1.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Singular { pivot } if pivot < 2), "{err:?}");
    }

    #[test]
    fn positive_definite_check() {
        let spd = CscMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]], Storage::Lower);
        assert!(check_positive_definite(&spd).is_ok());
        let psd = CscMatrix::from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]], Storage::Lower);
        assert!(check_positive_definite(&psd).is_err());
    }

    #[test]
    fn residual_of_exact_and_perturbed_solution() {
        let m = CscMatrix::from_dense(&[vec![4.0, 1.0], vec![1.0, -2.0]], Storage::Lower);
        let s = BlockSystem::new(m, vec![5.0, -1.0], 1, 1).unwrap();
        assert!(residual(&s, &[1.0, 1.0]) < 1e-15);
        // ‖(5,-1) - M(0,0)‖ / ‖b‖ = 1
        assert!((residual(&s, &[0.0, 0.0]) - 1.0).abs() < 1e-15);
        let (x, stats) = solve(&s).unwrap();
        assert!(stats.residual <= RESIDUAL_TOLERANCE);
        assert!((x[0] - 1.0).abs() < 1e-14);
    }
}
