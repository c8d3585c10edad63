//! Numerical checks of the structural properties of the stress spaces.

use nalgebra::{DMatrix, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bubble_scalars, orthonormal_scalars, FeSpace, NO_DOF};
use crate::error::{Error, Result};
use crate::forms::{stress_gram, Material};
use crate::mesh::{ElementGeometry, Mesh, Point};
use crate::polyquad::{homogeneous_indices, quadrature_rule, BarycentricPoly, MultiIndex};
use crate::solver::check_positive_definite;
use crate::tensor::{ddot, sym_basis, sym_dim, Mat3, Vec3};

/// `v(x) = t + W (x − c)` with `W` skew-symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidMotion {
    pub translation: Vec3,
    pub rotation: Mat3,
    pub center: Vec3,
}

impl RigidMotion {
    pub fn eval(&self, x: &Point) -> Vec3 {
        self.translation + self.rotation * (Vec3::new(x[0], x[1], x[2]) - self.center)
    }

    /// `ε(v)`, which vanishes for every rigid motion.
    pub fn strain(&self) -> Mat3 {
        (self.rotation + self.rotation.transpose()) * 0.5
    }
}

/// Basis of `R(K)`: translations followed by rotations about the centroid.
#[derive(Clone, Debug)]
pub struct RigidMotionBasis {
    pub dim: usize,
    members: Vec<RigidMotion>,
}

impl RigidMotionBasis {
    pub fn members(&self) -> &[RigidMotion] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn rigid_motion_basis(geom: &ElementGeometry) -> RigidMotionBasis {
    let dim = geom.dim;
    let mut center = Vec3::zeros();
    for v in &geom.vertices[..=dim] {
        center += Vec3::new(v[0], v[1], v[2]);
    }
    center /= (dim + 1) as f64;
    let mut members = Vec::new();
    for d in 0..dim {
        let mut t = Vec3::zeros();
        t[d] = 1.0;
        members.push(RigidMotion {
            translation: t,
            rotation: Mat3::zeros(),
            center,
        });
    }
    for i in 0..dim {
        for j in i + 1..dim {
            let mut w = Mat3::zeros();
            w[(i, j)] = -1.0;
            w[(j, i)] = 1.0;
            members.push(RigidMotion {
                translation: Vec3::zeros(),
                rotation: w,
                center,
            });
        }
    }
    RigidMotionBasis { dim, members }
}

/// Outcome of comparing `div B_{K,k}` with `R^⊥(K)` inside `P_{k−1}(K; ℝⁿ)`.
#[derive(Clone, Debug)]
pub struct DivBubbleReport {
    pub k: u32,
    pub dim_div: usize,
    pub dim_complement: usize,
    /// Relative size of the rigid-motion component of `div B`.
    pub residual_div_in_complement: f64,
    /// Distance of `R^⊥` from `div B`.
    pub residual_complement_in_div: f64,
}

impl DivBubbleReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.dim_div == self.dim_complement
            && self.residual_div_in_complement < tol
            && self.residual_complement_in_div < tol
    }
}

fn numerical_rank(svd: &SVD<f64, nalgebra::Dyn, nalgebra::Dyn>) -> usize {
    let max = svd.singular_values.iter().fold(0.0f64, |m, v| m.max(*v));
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-9 * max)
        .count()
}

/// Orthonormal basis (columns) of the column span of `m`.
fn column_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = SVD::new(m.clone(), true, false);
    let r = numerical_rank(&svd);
    let u = svd.u.expect("left singular vectors requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    DMatrix::from_fn(m.nrows(), r, |i, j| u[(i, idx[j])])
}

/// Verifies `div B_{K,k} = R^⊥(K)` on one element.
///
/// Both spans are expressed in an `L²(K)`-orthonormal basis of
/// `P_{k−1}(K; ℝⁿ)`, where `L²` orthogonality is Euclidean orthogonality of
/// coefficient vectors.
pub fn check_div_bubble_identity(geom: &ElementGeometry, k: u32) -> Result<DivBubbleReport> {
    if k < 2 {
        return Err(Error::InvalidInput("the bubble space is trivial for k < 2".into()));
    }
    let dim = geom.dim;
    let q = orthonormal_scalars(dim, k - 1);
    let nq = q.len();
    let n_basis = nq * dim;
    let rule = quadrature_rule(dim, 2 * k as usize)?;
    let w = rule.normalized_weights();
    let scale = geom.volume.sqrt();
    // coefficient of a vector field against q_a e_d / √|K|
    let coefficients = |field: &dyn Fn(&[f64; 4]) -> Vec3| -> Vec<f64> {
        let mut c = vec![0.0; n_basis];
        for (p, lam) in rule.points.iter().enumerate() {
            let v = field(lam);
            for a in 0..nq {
                let qa = q[a].eval(lam);
                for d in 0..dim {
                    c[a * dim + d] += w[p] * geom.volume * v[d] * qa / scale;
                }
            }
        }
        c
    };
    let bubbles = bubble_scalars(dim, k);
    let mut div_cols = Vec::new();
    for ((i, j), _, phi) in &bubbles {
        let t = geom.edge_tensor(*i, *j);
        let grads: Vec<BarycentricPoly> = (0..=dim).map(|m| phi.derivative(m)).collect();
        div_cols.push(coefficients(&|lam| {
            let mut g = Vec3::zeros();
            for m in 0..=dim {
                g += geom.grad_lambda[m] * grads[m].eval(lam);
            }
            t * g
        }));
    }
    let rigid = rigid_motion_basis(geom);
    let rigid_cols: Vec<Vec<f64>> = rigid
        .members()
        .iter()
        .map(|r| coefficients(&|lam| r.eval(&geom.point(lam))))
        .collect();
    let dmat = DMatrix::from_fn(n_basis, div_cols.len(), |r, c| div_cols[c][r]);
    let rmat = DMatrix::from_fn(n_basis, rigid_cols.len(), |r, c| rigid_cols[c][r]);
    let qd = column_basis(&dmat);
    let qr = column_basis(&rmat);
    let dim_complement = n_basis - qr.ncols();
    let dnorm = dmat.norm().max(f64::MIN_POSITIVE);
    let residual_div = (qr.transpose() * &dmat).norm() / dnorm;
    let eye = DMatrix::<f64>::identity(n_basis, n_basis);
    let perp = &eye - &qr * qr.transpose();
    let residual_complement =
        ((&eye - &qd * qd.transpose()) * perp).norm() / (dim_complement.max(1) as f64).sqrt();
    Ok(DivBubbleReport {
        k,
        dim_div: qd.ncols(),
        dim_complement,
        residual_div_in_complement: residual_div,
        residual_complement_in_div: residual_complement,
    })
}

/// Outcome of the unisolvence check of the local stress degrees of freedom.
#[derive(Clone, Debug)]
pub struct UnisolvenceReport {
    pub n: usize,
    pub k: u32,
    pub functionals: usize,
    pub dimension: usize,
    pub simplices: usize,
    /// Smallest `σ_min / σ_max` of the row-normalized functional matrix.
    pub min_reciprocal_condition: f64,
}

impl UnisolvenceReport {
    pub fn passed(&self) -> bool {
        self.functionals == self.dimension && self.min_reciprocal_condition > 1e-10
    }
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, size, &mut Vec::new(), &mut out);
    out
}

/// Orthonormal tangents and normals of the sub-simplex through `verts`.
fn tangent_normal_frame(geom: &ElementGeometry, verts: &[usize]) -> (Vec<Vec3>, Vec<Vec3>) {
    let dim = geom.dim;
    let mut tangents = Vec::new();
    let mut ortho: Vec<Vec3> = Vec::new();
    for &v in &verts[1..] {
        let t = geom.tangent(verts[0], v);
        tangents.push(t);
        let mut u = t;
        for o in &ortho {
            u -= o * o.dot(&u);
        }
        ortho.push(u.normalize());
    }
    let mut normals = Vec::new();
    for d in 0..dim {
        let mut u = Vec3::zeros();
        u[d] = 1.0;
        for o in ortho.iter().chain(&normals) {
            u -= o * o.dot(&u);
        }
        if u.norm() > 1e-8 {
            normals.push(u.normalize());
        }
        if normals.len() == dim - tangents.len() {
            break;
        }
    }
    (tangents, normals)
}

fn functional_matrix(geom: &ElementGeometry, k: u32) -> Result<DMatrix<f64>> {
    let n = geom.dim;
    let monomials = homogeneous_indices(n, k);
    let tensors = sym_basis(n);
    let basis: Vec<(MultiIndex, Mat3)> = monomials
        .iter()
        .flat_map(|a| tensors.iter().map(move |t| (*a, *t)))
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for ell in 0..n {
        if (k as usize) < ell + 1 {
            continue;
        }
        let m = k - ell as u32 - 1;
        let tests = homogeneous_indices(ell, m);
        let rule = quadrature_rule(ell, (k + m) as usize)?;
        let w = rule.normalized_weights();
        for verts in subsets(n + 1, ell + 1) {
            let (tangents, normals) = tangent_normal_frame(geom, &verts);
            let mut pairs: Vec<(Vec3, Vec3)> = Vec::new();
            for t in &tangents {
                for nu in &normals {
                    pairs.push((*t, *nu));
                }
            }
            for i in 0..normals.len() {
                for j in i..normals.len() {
                    pairs.push((normals[i], normals[j]));
                }
            }
            // element barycentrics of the sub-simplex quadrature points
            let points: Vec<[f64; 4]> = rule
                .points
                .iter()
                .map(|mu| {
                    let mut lam = [0.0; 4];
                    for (t, &v) in verts.iter().enumerate() {
                        lam[v] = mu[t];
                    }
                    lam
                })
                .collect();
            for (a, b) in &pairs {
                for beta in &tests {
                    let test = BarycentricPoly::monomial(ell, *beta, 1.0);
                    let row = basis
                        .iter()
                        .map(|(alpha, tensor)| {
                            let phi = BarycentricPoly::monomial(n, *alpha, 1.0);
                            let s: f64 = (0..rule.len())
                                .map(|p| w[p] * phi.eval(&points[p]) * test.eval(&rule.points[p]))
                                .sum();
                            s * a.dot(&(tensor * b))
                        })
                        .collect();
                    rows.push(row);
                }
            }
        }
    }
    if k >= 2 {
        for beta in homogeneous_indices(n, k - 2) {
            let test = BarycentricPoly::monomial(n, beta, 1.0);
            for s in &tensors {
                let row = basis
                    .iter()
                    .map(|(alpha, tensor)| {
                        BarycentricPoly::monomial(n, *alpha, 1.0).mul(&test).mean() * ddot(tensor, s)
                    })
                    .collect();
                rows.push(row);
            }
        }
    }
    Ok(DMatrix::from_fn(rows.len(), basis.len(), |r, c| rows[r][c]))
}

/// Builds the functional-by-basis matrix of the local stress degrees of
/// freedom on the reference simplex and on 20 random perturbations of it.
pub fn check_dof_unisolvence(n: usize, k: u32, seed: u64) -> Result<UnisolvenceReport> {
    if n != 2 && n != 3 {
        return Err(Error::InvalidInput(format!("dimension {n} is not 2 or 3")));
    }
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidInput(format!("degree {k} outside 1..=3")));
    }
    let mut reference = vec![[0.0; 3]; n + 1];
    for d in 0..n {
        reference[d + 1][d] = 1.0;
    }
    let ref_volume = 1.0 / (1..=n).product::<usize>() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut simplices = vec![reference.clone()];
    while simplices.len() < 21 {
        let verts: Vec<Point> = reference
            .iter()
            .map(|v| {
                let mut p = *v;
                for c in p.iter_mut().take(n) {
                    *c += rng.random_range(-0.25..0.25);
                }
                p
            })
            .collect();
        if let Ok(g) = ElementGeometry::from_vertices(n, &verts) {
            if g.volume > 0.2 * ref_volume {
                simplices.push(verts);
            }
        }
    }
    let dimension = homogeneous_indices(n, k).len() * sym_dim(n);
    let mut functionals = 0;
    let mut worst = f64::INFINITY;
    for verts in &simplices {
        let geom = ElementGeometry::from_vertices(n, verts).map_err(|v| Error::DegenerateElement {
            element: 0,
            volume: v,
        })?;
        let mut m = functional_matrix(&geom, k)?;
        functionals = m.nrows();
        for mut row in m.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
        }
        let sv = m.singular_values();
        let max = sv.max();
        let min = if m.nrows() == m.ncols() { sv.min() } else { 0.0 };
        worst = worst.min(if max > 0.0 { min / max } else { 0.0 });
    }
    Ok(UnisolvenceReport {
        n,
        k,
        functionals,
        dimension,
        simplices: simplices.len(),
        min_reciprocal_condition: worst,
    })
}

/// Certifies that the stress basis is linearly independent by factorizing
/// the Gram matrix of `a(·,·) + (div ·, div ·)` with a sparse Cholesky.
pub fn check_stress_rank(mesh: &Mesh, space: &FeSpace) -> Result<()> {
    let material = Material::paper_default(mesh.dim());
    let gram = stress_gram(space, mesh, &material)?;
    check_positive_definite(&gram).map_err(|pivot| {
        let elements = (0..mesh.n_elements())
            .filter(|&e| space.element_dofs(e).contains(&pivot))
            .collect();
        Error::Structural {
            message: format!(
                "stress basis is numerically rank deficient (Gram pivot at unknown {pivot})"
            ),
            elements,
        }
    })
}

/// Largest `‖τν‖ / ‖τ‖_∞-scale` over the faces of every element, for all
/// bubble functions of a tensor space.
pub fn max_bubble_normal_trace(mesh: &Mesh, space: &FeSpace) -> Result<f64> {
    let dim = mesh.dim();
    let rule = quadrature_rule(dim - 1, 2 * space.degree() as usize)?;
    let mut worst: f64 = 0.0;
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        for face in 0..=dim {
            let nu = geom.outward_normal(face);
            let others: Vec<usize> = (0..=dim).filter(|&v| v != face).collect();
            for mu in &rule.points {
                let mut lam = [0.0; 4];
                for (t, &v) in others.iter().enumerate() {
                    lam[v] = mu[t];
                }
                for (l, b) in space.local().iter().enumerate() {
                    if !b.bubble {
                        continue;
                    }
                    let scale = space.tensor_factor(&geom, l).norm();
                    let tn = space.eval_tensor(&geom, l, &lam) * nu;
                    worst = worst.max(tn.norm() / scale);
                }
            }
        }
    }
    Ok(worst)
}

/// Largest disagreement of the two traces of a continuous space on interior
/// faces, relative to the largest basis value.
pub fn max_trace_jump(mesh: &Mesh, space: &FeSpace, coeffs: &[f64]) -> Result<f64> {
    let dim = mesh.dim();
    let rule = quadrature_rule(dim - 1, 2 * space.degree() as usize)?;
    let mut worst: f64 = 0.0;
    let value = |e: usize, geom: &ElementGeometry, lam: &[f64; 4]| -> Mat3 {
        let mut v = Mat3::zeros();
        for (l, &d) in space.element_dofs(e).iter().enumerate() {
            if d == NO_DOF {
                continue;
            }
            v += if space.is_tensor() {
                space.eval_tensor(geom, l, lam)
            } else {
                let u = space.eval_vector(geom, l, lam);
                Mat3::from_columns(&[u, Vec3::zeros(), Vec3::zeros()])
            } * coeffs[d];
        }
        v
    };
    for f in mesh.faces() {
        if f.adjacent.len() != 2 {
            continue;
        }
        let sides: Vec<(usize, ElementGeometry, Vec<usize>)> = f
            .adjacent
            .iter()
            .map(|&(e, _)| {
                let verts = mesh.element(e);
                let pos = f
                    .vertices
                    .iter()
                    .map(|v| verts.iter().position(|w| w == v).expect("face vertex"))
                    .collect();
                Ok((e, mesh.element_geometry(e)?, pos))
            })
            .collect::<Result<_>>()?;
        for mu in &rule.points {
            let mut vals = Vec::new();
            for (e, geom, pos) in &sides {
                let mut lam = [0.0; 4];
                for (t, &p) in pos.iter().enumerate() {
                    lam[p] = mu[t];
                }
                vals.push(value(*e, geom, &lam));
            }
            worst = worst.max((vals[0] - vals[1]).norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_uniform_mesh, BoxDomain};
    use crate::spaces::{build_bubble_space, build_sym_lagrange};

    #[test]
    fn rigid_motions() {
        let m = generate_uniform_mesh(&BoxDomain::unit_cube(), 3, 1.0).unwrap();
        let g = m.element_geometry(0).unwrap();
        let b = rigid_motion_basis(&g);
        assert_eq!(b.len(), 6);
        assert!(b.members().iter().all(|r| r.strain() == Mat3::zeros()));
        let m2 = generate_uniform_mesh(&BoxDomain::square(), 2, 1.0).unwrap();
        let b2 = rigid_motion_basis(&m2.element_geometry(0).unwrap());
        assert_eq!(b2.len(), 3);
        // the rotation is (−x₂, x₁) up to a translation
        let r = &b2.members()[2];
        let d = r.eval(&[1.0, 0.0, 0.0]) - r.eval(&[0.0, 0.0, 0.0]);
        assert!((d - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn div_bubble_identity_dimensions() {
        let m = generate_uniform_mesh(&BoxDomain::square(), 2, 0.5).unwrap();
        let r = check_div_bubble_identity(&m.element_geometry(0).unwrap(), 2).unwrap();
        assert_eq!((r.dim_div, r.dim_complement), (3, 3));
        assert!(r.passed(1e-10), "{r:?}");
        let c = generate_uniform_mesh(&BoxDomain::unit_cube(), 3, 1.0).unwrap();
        let r3 = check_div_bubble_identity(&c.element_geometry(2).unwrap(), 2).unwrap();
        assert_eq!((r3.dim_div, r3.dim_complement), (6, 6));
        assert!(r3.passed(1e-10), "{r3:?}");
    }

    #[test]
    fn unisolvence_counts() {
        let r = check_dof_unisolvence(2, 2, 1).unwrap();
        assert_eq!((r.functionals, r.dimension), (18, 18));
        assert!(r.passed(), "{r:?}");
        let r1 = check_dof_unisolvence(2, 1, 1).unwrap();
        assert_eq!(r1.functionals, 9);
        assert!(r1.passed());
        assert!(check_dof_unisolvence(4, 1, 1).is_err());
    }

    #[test]
    fn bubble_traces_vanish_and_lagrange_traces_match() {
        let m = generate_uniform_mesh(&BoxDomain::square(), 2, 0.5).unwrap();
        for k in 2..=3 {
            let b = build_bubble_space(&m, k).unwrap();
            assert!(max_bubble_normal_trace(&m, &b).unwrap() <= 1e-10);
        }
        let s = build_sym_lagrange(&m, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..s.total_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(max_trace_jump(&m, &s, &x).unwrap() <= 1e-10);
    }
}
