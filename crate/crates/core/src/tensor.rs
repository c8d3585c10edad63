//! Small dense tensor helpers shared by the element code.
//!
//! Points, vectors and tensors are stored in 3D containers for both space
//! dimensions; in 2D the third row/column is identically zero.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Number of independent components of a symmetric `dim × dim` tensor.
pub fn sym_dim(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Index pairs `(i, j)`, `i <= j`, of the symmetric components in storage order:
/// diagonal entries first, then the upper off-diagonal entries row by row.
pub fn sym_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..dim).map(|i| (i, i)).collect();
    for i in 0..dim {
        for j in i + 1..dim {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Basis tensor of a symmetric component: `e_i e_iᵀ` on the diagonal and
/// `e_i e_jᵀ + e_j e_iᵀ` off it, so that coefficients are the tensor entries.
pub fn sym_basis_tensor(i: usize, j: usize) -> Mat3 {
    let mut m = Mat3::zeros();
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    m
}

pub fn sym_basis(dim: usize) -> Vec<Mat3> {
    sym_pairs(dim)
        .into_iter()
        .map(|(i, j)| sym_basis_tensor(i, j))
        .collect()
}

/// Coefficient vector of a symmetric tensor with respect to [`sym_basis`].
pub fn sym_components(dim: usize, t: &Mat3) -> Vec<f64> {
    sym_pairs(dim).into_iter().map(|(i, j)| t[(i, j)]).collect()
}

/// Frobenius product `A : B`.
pub fn ddot(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

pub fn identity(dim: usize) -> Mat3 {
    let mut m = Mat3::zeros();
    for i in 0..dim {
        m[(i, i)] = 1.0;
    }
    m
}

pub fn vec3(x: &[f64]) -> Vec3 {
    let mut v = Vec3::zeros();
    for (i, xi) in x.iter().take(3).enumerate() {
        v[i] = *xi;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_reconstructs_tensor() {
        let t = Mat3::new(1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0);
        let c = sym_components(3, &t);
        let back: Mat3 = sym_basis(3)
            .iter()
            .zip(&c)
            .map(|(b, ci)| b * *ci)
            .sum();
        assert_eq!(back, t);
        assert_eq!(sym_dim(2), 3);
        assert_eq!(sym_pairs(2), vec![(0, 0), (1, 1), (0, 1)]);
    }
}
