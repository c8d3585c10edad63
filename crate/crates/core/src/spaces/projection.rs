//! Interpolation and projection onto the discrete spaces.

use nalgebra::{DMatrix, DVector};

use super::{bubble_scalars, orthonormal_scalars, Factor, FeSpace, SpaceKind, NO_DOF};
use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, Mesh, Point};
use crate::polyquad::{collapsed_rule, BarycentricPoly};
use crate::tensor::{ddot, sym_basis, Mat3, Vec3};

/// `L²(K)`-orthonormal basis of `P_m(K; 𝕊)` as `(scalar, tensor)` pairs; the
/// scalar is orthonormal for the mean and the caller divides by `√|K|`.
fn moment_basis(dim: usize, m: u32) -> (Vec<BarycentricPoly>, Vec<Mat3>) {
    let tensors = sym_basis(dim).into_iter().map(|t| t / t.norm()).collect();
    (orthonormal_scalars(dim, m), tensors)
}

struct BubbleMoments {
    /// `G[(a, c), l] = ∫_K φ_l T_l : (q_a Ê_c) / √|K|`, square.
    gram: DMatrix<f64>,
    /// `∫_K φ_l φ_m T_l : T_m`.
    mass: DMatrix<f64>,
}

fn bubble_moments(geom: &ElementGeometry, k: u32) -> BubbleMoments {
    let dim = geom.dim;
    let bubbles = bubble_scalars(dim, k);
    let (q, tensors) = moment_basis(dim, k - 2);
    let nb = bubbles.len();
    let mut gram = DMatrix::zeros(q.len() * tensors.len(), nb);
    let edge: Vec<Mat3> = bubbles.iter().map(|((i, j), _, _)| geom.edge_tensor(*i, *j)).collect();
    let root = geom.volume.sqrt();
    for (l, (_, _, phi)) in bubbles.iter().enumerate() {
        for (a, qa) in q.iter().enumerate() {
            let m = phi.mul(qa).mean();
            for (c, e) in tensors.iter().enumerate() {
                gram[(a * tensors.len() + c, l)] = root * m * ddot(&edge[l], e);
            }
        }
    }
    let mass = DMatrix::from_fn(nb, nb, |l, m| {
        geom.volume * bubbles[l].2.mul(&bubbles[m].2).mean() * ddot(&edge[l], &edge[m])
    });
    BubbleMoments { gram, mass }
}

/// Elementwise bubble interpolation: on every element the returned field in
/// `B_{K,k}` has the same moments against `P_{k−2}(K; 𝕊)` as `tau`.
///
/// Coefficients follow the numbering of `build_bubble_space(mesh, k)`.
pub fn bubble_interpolate<F: Fn(&Point) -> Mat3>(tau: F, mesh: &Mesh, k: u32) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidInput("bubble interpolation needs k ≥ 2".into()));
    }
    let dim = mesh.dim();
    let (q, tensors) = moment_basis(dim, k - 2);
    let rule = collapsed_rule(dim, (2 * k + 4) as usize)?;
    let w = rule.normalized_weights();
    let table: Vec<Vec<f64>> = q.iter().map(|p| rule.points.iter().map(|x| p.eval(x)).collect()).collect();
    let nb = bubble_scalars(dim, k).len();
    let mut out = Vec::with_capacity(mesh.n_elements() * nb);
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let bm = bubble_moments(&geom, k);
        let mut rhs = DVector::zeros(q.len() * tensors.len());
        let root = geom.volume.sqrt();
        for (p, lam) in rule.points.iter().enumerate() {
            let t = tau(&geom.point(lam));
            for a in 0..q.len() {
                for (c, s) in tensors.iter().enumerate() {
                    rhs[a * tensors.len() + c] += w[p] * root * table[a][p] * ddot(&t, s);
                }
            }
        }
        let c = bm.gram.lu().solve(&rhs).ok_or_else(|| Error::Structural {
            message: "bubble moment system is singular".into(),
            elements: vec![e],
        })?;
        out.extend(c.iter());
    }
    Ok(out)
}

/// Largest `sup_τ ‖I^b τ‖_{0,K} / ‖τ‖_{0,K}` over the elements of the mesh.
///
/// Only the `P_{k−2}(K; 𝕊)` projection of `τ` enters the interpolant, so the
/// supremum is `√λ_max(G^{−T} M G^{−1})` with `G` the moment matrix in an
/// orthonormal moment basis and `M` the bubble mass matrix.
pub fn bubble_boundedness_constant(mesh: &Mesh, k: u32) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidInput("bubble interpolation needs k ≥ 2".into()));
    }
    let mut worst: f64 = 0.0;
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let bm = bubble_moments(&geom, k);
        let ginv = bm.gram.try_inverse().ok_or_else(|| Error::Structural {
            message: "bubble moment system is singular".into(),
            elements: vec![e],
        })?;
        let op = ginv.transpose() * bm.mass * ginv;
        let op = (&op + op.transpose()) * 0.5;
        let lmax = op.symmetric_eigenvalues().max();
        worst = worst.max(lmax.max(0.0).sqrt());
    }
    Ok(worst)
}

/// `L²` projection onto a discontinuous vector space; the orthonormal basis
/// makes it a list of moments.
pub fn l2_project<F: Fn(&Point) -> Vec3>(v: F, space: &FeSpace, mesh: &Mesh, degree: usize) -> Result<Vec<f64>> {
    if space.kind() != SpaceKind::DiscVector {
        return Err(Error::InvalidInput("L² projection targets a discontinuous vector space".into()));
    }
    let rule = collapsed_rule(mesh.dim(), degree)?;
    let w = rule.normalized_weights();
    let table = space.tabulate(&rule);
    let mut out = vec![0.0; space.total_dofs()];
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let dofs = space.element_dofs(e);
        for (p, lam) in rule.points.iter().enumerate() {
            let val = v(&geom.point(lam));
            for (l, b) in space.local().iter().enumerate() {
                let Factor::VectorComponent(d) = b.factor else { unreachable!() };
                out[dofs[l]] += w[p] * geom.volume * val[d] * table.value(b.scalar, p) * space.vector_factor(&geom, l)[d];
            }
        }
    }
    Ok(out)
}

/// Nodal interpolant in a continuous vector Lagrange space; constrained
/// boundary nodes are skipped.
pub fn interpolate_vector<F: Fn(&Point) -> Vec3>(v: F, space: &FeSpace) -> Result<Vec<f64>> {
    if space.kind() != SpaceKind::ContVectorDirichlet {
        return Err(Error::InvalidInput("nodal interpolation needs a continuous vector space".into()));
    }
    let nodes = space.nodes().expect("continuous spaces keep their nodes");
    let mut out = vec![0.0; space.total_dofs()];
    for e in 0..space.n_elements() {
        for (l, &d) in space.element_dofs(e).iter().enumerate() {
            if d == NO_DOF {
                continue;
            }
            let b = space.local()[l];
            let Factor::VectorComponent(c) = b.factor else { unreachable!() };
            out[d] = v(&nodes.points[nodes.element(e)[b.scalar]])[c];
        }
    }
    Ok(out)
}

/// Nodal interpolant of a tensor field in the continuous block of a tensor
/// space; bubble coefficients are left at zero.
pub fn interpolate_tensor<F: Fn(&Point) -> Mat3>(tau: F, space: &FeSpace) -> Result<Vec<f64>> {
    let nodes = match (space.is_tensor(), space.nodes()) {
        (true, Some(n)) => n,
        _ => {
            return Err(Error::InvalidInput(
                "nodal interpolation needs a continuous tensor space".into(),
            ))
        }
    };
    let pairs = crate::tensor::sym_pairs(space.dim());
    let mut out = vec![0.0; space.total_dofs()];
    for e in 0..space.n_elements() {
        for (l, &d) in space.element_dofs(e).iter().enumerate() {
            let b = space.local()[l];
            if d == NO_DOF || b.bubble {
                continue;
            }
            let Factor::SymComponent(c) = b.factor else { unreachable!() };
            let (i, j) = pairs[c];
            out[d] = tau(&nodes.points[nodes.element(e)[b.scalar]])[(i, j)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_uniform_mesh, BoxDomain};
    use crate::spaces::{build_bubble_space, build_disc_vector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interpolation_reproduces_bubbles() {
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 1.0).unwrap();
        for k in 2..=3 {
            let space = build_bubble_space(&mesh, k).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let c: Vec<f64> = (0..space.total_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let field = |x: &Point| {
                let e = (0..mesh.n_elements())
                    .find(|&e| {
                        let g = mesh.element_geometry(e).unwrap();
                        g.barycentric(x).iter().take(3).all(|l| *l > -1e-12)
                    })
                    .unwrap();
                let g = mesh.element_geometry(e).unwrap();
                let lam = g.barycentric(x);
                let mut t = Mat3::zeros();
                for (l, &d) in space.element_dofs(e).iter().enumerate() {
                    t += space.eval_tensor(&g, l, &lam) * c[d];
                }
                t
            };
            let got = bubble_interpolate(field, &mesh, k).unwrap();
            for (a, b) in got.iter().zip(&c) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn boundedness_constant_is_mesh_independent() {
        let mut prev: Option<f64> = None;
        for h in [0.5, 0.25, 0.125] {
            let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, h).unwrap();
            let c = bubble_boundedness_constant(&mesh, 2).unwrap();
            if let Some(p) = prev {
                assert!(((c - p) / p).abs() < 1e-10);
            }
            prev = Some(c);
        }
    }

    #[test]
    fn projection_onto_constants_is_the_mean() {
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 1.0).unwrap();
        let v = build_disc_vector(&mesh, 0).unwrap();
        let f = |x: &Point| Vec3::new(x[0] * x[0], x[1], 0.0);
        let c = l2_project(f, &v, &mesh, 4).unwrap();
        let rule = collapsed_rule(2, 4).unwrap();
        for e in 0..mesh.n_elements() {
            let g = mesh.element_geometry(e).unwrap();
            let mean = crate::polyquad::integrate_element(|x| f(x)[0], &g, &rule) / g.volume;
            assert!((c[2 * e] / g.volume.sqrt() - mean).abs() < 1e-14);
        }
        // idempotence on a P1 field
        let v1 = build_disc_vector(&mesh, 1).unwrap();
        let lin = |x: &Point| Vec3::new(1.0 + 2.0 * x[0] - x[1], 3.0 * x[1], 0.0);
        let c1 = l2_project(lin, &v1, &mesh, 4).unwrap();
        for e in 0..mesh.n_elements() {
            let g = mesh.element_geometry(e).unwrap();
            let lam = [0.2, 0.3, 0.5, 0.0];
            let x = g.point(&lam);
            let mut val = Vec3::zeros();
            for (l, &d) in v1.element_dofs(e).iter().enumerate() {
                val += v1.eval_vector(&g, l, &lam) * c1[d];
            }
            assert!((val - lin(&x)).norm() < 1e-13);
        }
    }
}
