//! Barycentric polynomials and simplex quadrature.

pub mod poly;
pub mod quadrature;

pub use poly::{
    barycentric_moment, complete_indices, homogeneous_indices, lagrange_shape, BarycentricPoly,
    MultiIndex,
};
pub use quadrature::{
    collapsed_rule, gauss_jacobi, integrate_element, integrate_face, integrate_simplex,
    quadrature_rule, simplex_measure, QuadratureRule, MAX_DEGREE,
};

/// Volume rule degree making every bilinear form exact for stress degree `k_max`.
pub fn default_volume_degree(k_max: usize) -> usize {
    2 * k_max + 2
}

/// Face rule degree for products of two traces of degree `k_max`.
pub fn default_face_degree(k_max: usize) -> usize {
    2 * k_max
}
