//! Quadrature on the reference simplices of dimension 1–3.
//!
//! Rules are Stroud conical products: Gauss–Jacobi nodes on the collapsed
//! coordinates, built by the Golub–Welsch eigenvalue method. The public
//! [`quadrature_rule`] additionally averages over all vertex permutations so
//! the result is symmetric; [`collapsed_rule`] skips that step and has
//! `(n + 1)!` times fewer points.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, Point};

/// Highest supported exactness degree.
pub const MAX_DEGREE: usize = 40;

/// Quadrature rule on a reference simplex, with points in barycentric coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<[f64; 4]>,
    /// Weights summing to the reference measure `1/n!`.
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference measure `1/n!`.
    pub fn reference_measure(&self) -> f64 {
        1.0 / (1..=self.dim).map(|m| m as f64).product::<f64>()
    }

    /// Weights normalized to sum to one, so `Σ w_q f(λ_q) ≈ (1/|K|) ∫_K f`.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let s = 1.0 / self.reference_measure();
        self.weights.iter().map(|w| w * s).collect()
    }
}

/// Gauss–Jacobi rule with `m` points for the weight `(1 − s)^a` on `[0, 1]`.
/// Returns nodes in ascending order.
pub fn gauss_jacobi(m: usize, a: f64) -> (Vec<f64>, Vec<f64>) {
    // Jacobi matrix for (1 − x)^a (1 + x)^0 on [−1, 1]
    let b = 0.0f64;
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for n in 0..m {
        let nf = n as f64;
        let s = 2.0 * nf + a + b;
        jac[(n, n)] = if n == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
        if n + 1 < m {
            let k = nf + 1.0;
            let s = 2.0 * k + a + b;
            let off = (4.0 * k * (k + a) * (k + b) * (k + a + b) / (s * s * (s + 1.0) * (s - 1.0)))
                .sqrt();
            jac[(n, n + 1)] = off;
            jac[(n + 1, n)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    // ∫_{−1}^{1} (1 − x)^a dx = 2^{a+1}/(a+1); mapped to [0, 1] this becomes 1/(a+1)
    let mu0 = 1.0 / (a + 1.0);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            ((1.0 + x) / 2.0, mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs.into_iter().unzip()
}

fn check_request(dim: usize, q: usize) -> Result<()> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidInput(format!("simplex dimension {dim} not in 1..=3")));
    }
    if q > MAX_DEGREE {
        return Err(Error::Capability(format!(
            "quadrature degree {q} exceeds the supported maximum {MAX_DEGREE}"
        )));
    }
    Ok(())
}

/// Conical-product rule exact for total degree `q` (not permutation symmetric).
pub fn collapsed_rule(dim: usize, q: usize) -> Result<QuadratureRule> {
    check_request(dim, q)?;
    let m = q / 2 + 1;
    let (x0, w0) = gauss_jacobi(m, 0.0);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match dim {
        1 => {
            for (s, w) in x0.iter().zip(&w0) {
                points.push([1.0 - s, *s, 0.0, 0.0]);
                weights.push(*w);
            }
        }
        2 => {
            let (x1, w1) = gauss_jacobi(m, 1.0);
            for (s, ws) in x1.iter().zip(&w1) {
                for (t, wt) in x0.iter().zip(&w0) {
                    let x = *s;
                    let y = t * (1.0 - s);
                    points.push([1.0 - x - y, x, y, 0.0]);
                    weights.push(ws * wt);
                }
            }
        }
        _ => {
            let (x2, w2) = gauss_jacobi(m, 2.0);
            let (x1, w1) = gauss_jacobi(m, 1.0);
            for (s, ws) in x2.iter().zip(&w2) {
                for (t, wt) in x1.iter().zip(&w1) {
                    for (r, wr) in x0.iter().zip(&w0) {
                        let x = *s;
                        let y = t * (1.0 - s);
                        let z = r * (1.0 - s) * (1.0 - t);
                        points.push([1.0 - x - y - z, x, y, z]);
                        weights.push(ws * wt * wr);
                    }
                }
            }
        }
    }
    Ok(QuadratureRule {
        dim,
        points,
        weights,
        exact_degree: q,
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Rule exact for total degree `q` whose point set is closed under vertex
/// permutations of the reference simplex.
pub fn quadrature_rule(dim: usize, q: usize) -> Result<QuadratureRule> {
    if dim == 0 {
        return Ok(QuadratureRule {
            dim,
            points: vec![[1.0, 0.0, 0.0, 0.0]],
            weights: vec![1.0],
            exact_degree: q,
        });
    }
    let base = collapsed_rule(dim, q)?;
    let perms = permutations(dim + 1);
    let share = 1.0 / perms.len() as f64;
    let mut index: BTreeMap<[i64; 4], usize> = BTreeMap::new();
    let mut points: Vec<[f64; 4]> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (p, w) in base.points.iter().zip(&base.weights) {
        for perm in &perms {
            let mut x = [0.0; 4];
            for (i, &j) in perm.iter().enumerate() {
                x[i] = p[j];
            }
            let key = x.map(|v| (v * 1e11).round() as i64);
            match index.get(&key) {
                Some(&id) => weights[id] += w * share,
                None => {
                    index.insert(key, points.len());
                    points.push(x);
                    weights.push(w * share);
                }
            }
        }
    }
    Ok(QuadratureRule {
        dim,
        points,
        weights,
        exact_degree: q,
    })
}

/// `∫_K f` for a function of Cartesian position.
pub fn integrate_element<F: Fn(&Point) -> f64>(f: F, geom: &ElementGeometry, rule: &QuadratureRule) -> f64 {
    assert_eq!(rule.dim, geom.dim, "rule dimension must match the element");
    let scale = geom.volume / rule.reference_measure();
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(lam, w)| w * f(&geom.point(lam)))
        .sum::<f64>()
        * scale
}

/// `m`-dimensional measure of the simplex spanned by `m + 1` points in 3D space.
pub fn simplex_measure(vertices: &[Point]) -> f64 {
    let m = vertices.len() - 1;
    if m == 0 {
        return 1.0;
    }
    let edges: Vec<[f64; 3]> = (1..=m)
        .map(|i| {
            let mut e = [0.0; 3];
            for d in 0..3 {
                e[d] = vertices[i][d] - vertices[0][d];
            }
            e
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            gram[(i, j)] = (0..3).map(|d| edges[i][d] * edges[j][d]).sum();
        }
    }
    let fact: f64 = (1..=m).map(|v| v as f64).product();
    gram.determinant().max(0.0).sqrt() / fact
}

/// `∫_S f` over the simplex `S` spanned by `vertices` (`rule.dim + 1` points).
pub fn integrate_simplex<F: Fn(&Point) -> f64>(f: F, vertices: &[Point], rule: &QuadratureRule) -> f64 {
    assert_eq!(vertices.len(), rule.dim + 1);
    let scale = simplex_measure(vertices) / rule.reference_measure();
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(lam, w)| {
            let mut x = [0.0; 3];
            for (i, v) in vertices.iter().enumerate() {
                for d in 0..3 {
                    x[d] += lam[i] * v[d];
                }
            }
            w * f(&x)
        })
        .sum::<f64>()
        * scale
}

/// `∫_F f` over a mesh face; the rule must have dimension `mesh.dim() − 1`.
pub fn integrate_face<F: Fn(&Point) -> f64>(
    f: F,
    mesh: &crate::mesh::Mesh,
    face: usize,
    rule: &QuadratureRule,
) -> f64 {
    let verts: Vec<Point> = mesh.faces()[face]
        .vertices
        .iter()
        .map(|&v| mesh.vertices()[v])
        .collect();
    integrate_simplex(f, &verts, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyquad::poly::{barycentric_moment, homogeneous_indices};

    #[test]
    fn gauss_legendre_two_points() {
        let (x, w) = gauss_jacobi(2, 0.0);
        let r = 0.5 / 3f64.sqrt();
        assert!((x[0] - (0.5 - r)).abs() < 1e-15 && (x[1] - (0.5 + r)).abs() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rules_integrate_barycentric_monomials() {
        for dim in 1..=3 {
            for q in 0..=12 {
                for rule in [quadrature_rule(dim, q).unwrap(), collapsed_rule(dim, q).unwrap()] {
                    assert!(rule.weights.iter().all(|&w| w > 0.0));
                    for d in 0..=q as u32 {
                        for a in homogeneous_indices(dim, d) {
                            let approx: f64 = rule
                                .points
                                .iter()
                                .zip(rule.normalized_weights())
                                .map(|(p, w)| {
                                    w * (0..=dim).map(|i| p[i].powi(a[i] as i32)).product::<f64>()
                                })
                                .sum();
                            let exact = barycentric_moment(dim, &a);
                            assert!(
                                ((approx - exact) / exact).abs() < 1e-12,
                                "dim {dim} q {q} alpha {a:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reference_values() {
        let r = quadrature_rule(2, 2).unwrap();
        let v: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0] * p[1]).sum();
        assert!((v - 1.0 / 24.0).abs() < 1e-15);
        let r = quadrature_rule(1, 0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.weights[0], 1.0);
        assert!((r.points[0][0] - 0.5).abs() < 1e-15);
        let r = quadrature_rule(3, 1).unwrap();
        assert!((r.weights.iter().sum::<f64>() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_rule_is_closed_under_permutation() {
        let r = quadrature_rule(3, 5).unwrap();
        for (p, w) in r.points.iter().zip(&r.weights) {
            let swapped = [p[1], p[0], p[3], p[2]];
            let j = r
                .points
                .iter()
                .position(|x| (0..4).all(|i| (x[i] - swapped[i]).abs() < 1e-12))
                .expect("permuted point present");
            assert!((r.weights[j] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn too_high_degree_is_a_capability_error() {
        assert!(matches!(quadrature_rule(2, MAX_DEGREE + 1), Err(Error::Capability(_))));
    }

    #[test]
    fn element_and_segment_integrals() {
        let g = ElementGeometry::from_vertices(2, &[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            .unwrap();
        let rule = quadrature_rule(2, 3).unwrap();
        assert!((integrate_element(|_| 1.0, &g, &rule) - 0.5).abs() < 1e-15);
        let l = |x: &Point| {
            let b = g.barycentric(x);
            b[0] * b[1] * b[2]
        };
        assert!((integrate_element(l, &g, &rule) - 1.0 / 120.0).abs() < 1e-16);
        let seg = quadrature_rule(1, 2).unwrap();
        let v = integrate_simplex(|x| x[0] * x[0], &[[0.0; 3], [1.0, 0.0, 0.0]], &seg);
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}
