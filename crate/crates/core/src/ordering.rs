//! Nested-dissection fill-reducing ordering through METIS.

use std::os::raw::c_int;

use metis_sys::{idx_t, METIS_NodeND, METIS_SetDefaultOptions, METIS_NOPTIONS};

use crate::sparse::CscMatrix;

/// Forward and inverse permutations of a symmetric matrix in lower storage,
/// `fwd[new] = old`. `None` when METIS rejects the graph.
pub(crate) fn nested_dissection(m: &CscMatrix) -> Option<(Vec<u32>, Vec<u32>)> {
    assert!(m.is_lower());
    let n = m.nrows();
    if n == 0 || n > idx_t::MAX as usize {
        return None;
    }
    let (cp, ri) = (m.col_ptr(), m.row_idx());
    let mut degree = vec![0usize; n];
    for j in 0..n {
        for &i in &ri[cp[j] as usize..cp[j + 1] as usize] {
            let i = i as usize;
            if i != j {
                degree[i] += 1;
                degree[j] += 1;
            }
        }
    }
    let mut xadj = Vec::with_capacity(n + 1);
    xadj.push(0 as idx_t);
    for d in &degree {
        let next = *xadj.last().unwrap() as usize + d;
        if next > idx_t::MAX as usize {
            return None;
        }
        xadj.push(next as idx_t);
    }
    let mut fill: Vec<usize> = xadj[..n].iter().map(|&x| x as usize).collect();
    let mut adjncy = vec![0 as idx_t; xadj[n] as usize];
    for j in 0..n {
        for &i in &ri[cp[j] as usize..cp[j + 1] as usize] {
            let i = i as usize;
            if i != j {
                adjncy[fill[i]] = j as idx_t;
                fill[i] += 1;
                adjncy[fill[j]] = i as idx_t;
                fill[j] += 1;
            }
        }
    }

    let mut nvtxs = n as idx_t;
    let mut options = [0 as idx_t; METIS_NOPTIONS as usize];
    let mut perm = vec![0 as idx_t; n];
    let mut iperm = vec![0 as idx_t; n];
    // SAFETY: the graph arrays are consistent CSR of length n + 1 and
    // xadj[n]; METIS only reads them and writes n entries to perm and iperm.
    let status: c_int = unsafe {
        METIS_SetDefaultOptions(options.as_mut_ptr());
        METIS_NodeND(
            &mut nvtxs,
            xadj.as_mut_ptr(),
            adjncy.as_mut_ptr(),
            std::ptr::null_mut(),
            options.as_mut_ptr(),
            perm.as_mut_ptr(),
            iperm.as_mut_ptr(),
        )
    };
    if status != metis_sys::rstatus_et_METIS_OK as c_int {
        return None;
    }
    Some((
        perm.into_iter().map(|p| p as u32).collect(),
        iperm.into_iter().map(|p| p as u32).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Storage;

    #[test]
    fn permutation_of_a_path_graph() {
        let n = 9;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 2.0;
            if i + 1 < n {
                a[i + 1][i] = -1.0;
            }
        }
        let m = CscMatrix::from_dense(&a, Storage::Lower);
        let (fwd, inv) = nested_dissection(&m).unwrap();
        for (new, &old) in fwd.iter().enumerate() {
            assert_eq!(inv[old as usize] as usize, new);
        }
        // a middle vertex separates the path and is eliminated last
        let last = fwd[n - 1] as usize;
        assert!(last > 0 && last < n - 1);
    }
}
