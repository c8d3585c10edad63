//! Finite element spaces and their local-to-global numbering.
//!
//! Every local basis function is a scalar barycentric polynomial times a
//! factor that is constant on the element: a symmetric basis tensor, an edge
//! tensor `T_{i,j}` or a unit vector. Scalar polynomials are element
//! independent, which lets assembly work from reference tables.

mod lagrange;
pub mod projection;
pub mod verify;

use std::collections::HashSet;

use nalgebra::DMatrix;

pub use lagrange::LagrangeNodes;
pub use projection::{
    bubble_boundedness_constant, bubble_interpolate, interpolate_tensor, interpolate_vector, l2_project,
};
pub use verify::{
    check_div_bubble_identity, check_dof_unisolvence, check_stress_rank, max_bubble_normal_trace,
    max_trace_jump, rigid_motion_basis,
    DivBubbleReport, RigidMotion, RigidMotionBasis, UnisolvenceReport,
};

use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, Mesh};
use crate::polyquad::{
    complete_indices, homogeneous_indices, lagrange_shape, BarycentricPoly, MultiIndex,
    QuadratureRule,
};
use crate::tensor::{sym_basis_tensor, sym_dim, sym_pairs, Mat3, Vec3};

/// Marks a local basis function without a global unknown (Dirichlet node or
/// a bubble already contained in the continuous part).
pub const NO_DOF: usize = usize::MAX;

/// Stress spaces with more unknowns than this skip the global rank check in
/// [`RankCheck::Auto`] mode; the saddle-point factorization still reports
/// any remaining singularity.
pub const RANK_CHECK_LIMIT: usize = 60_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceKind {
    SymLagrange,
    Bubble,
    SumStress,
    DiscVector,
    ContVectorDirichlet,
}

/// Which sum of continuous tensors and bubbles forms the stress space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StressVariant {
    /// `Σ̃_k + B_k`
    SumK,
    /// `Σ̃_k + B_{k+1}`
    StarK,
    /// `Σ̃_{k+1} + B_{k+1}`
    SumKPlus1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankCheck {
    Always,
    Auto,
    Never,
}

/// Element-constant factor of a local basis function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    /// Symmetric basis tensor with index into [`sym_pairs`].
    SymComponent(usize),
    /// Edge tensor `T_{i,j} = t_{i,j} t_{i,j}ᵀ` of local vertices `i < j`.
    EdgeTensor(usize, usize),
    /// Unit vector `e_d`.
    VectorComponent(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalBasis {
    pub scalar: usize,
    pub factor: Factor,
    pub bubble: bool,
}

/// Scalar shape values and barycentric derivatives at the points of a rule.
#[derive(Clone, Debug)]
pub struct ShapeTable {
    pub n_points: usize,
    pub n_scalars: usize,
    pub n_lambda: usize,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl ShapeTable {
    #[inline]
    pub fn value(&self, scalar: usize, q: usize) -> f64 {
        self.values[scalar * self.n_points + q]
    }

    /// `∂φ/∂λ_i` at point `q`.
    #[inline]
    pub fn grad(&self, scalar: usize, i: usize, q: usize) -> f64 {
        self.grads[(scalar * self.n_lambda + i) * self.n_points + q]
    }
}

#[derive(Clone, Debug)]
pub struct FeSpace {
    kind: SpaceKind,
    dim: usize,
    degree: u32,
    lagrange_degree: Option<u32>,
    bubble_degree: Option<u32>,
    scalars: Vec<BarycentricPoly>,
    scalar_grads: Vec<Vec<BarycentricPoly>>,
    local: Vec<LocalBasis>,
    dof_map: Vec<usize>,
    total_dofs: usize,
    n_continuous: usize,
    volume_scaled: bool,
    nodes: Option<LagrangeNodes>,
}

impl FeSpace {
    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Highest polynomial degree of the basis functions.
    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn lagrange_degree(&self) -> Option<u32> {
        self.lagrange_degree
    }

    pub fn bubble_degree(&self) -> Option<u32> {
        self.bubble_degree
    }

    /// `n(n+1)/2` for tensor spaces and `n` for vector spaces.
    pub fn value_dim(&self) -> usize {
        if self.is_tensor() {
            sym_dim(self.dim)
        } else {
            self.dim
        }
    }

    pub fn is_tensor(&self) -> bool {
        matches!(
            self.kind,
            SpaceKind::SymLagrange | SpaceKind::Bubble | SpaceKind::SumStress
        )
    }

    pub fn total_dofs(&self) -> usize {
        self.total_dofs
    }

    /// Unknowns of the continuous block; bubble unknowns follow them.
    pub fn n_continuous(&self) -> usize {
        self.n_continuous
    }

    pub fn n_bubbles(&self) -> usize {
        self.total_dofs - self.n_continuous
    }

    pub fn n_local(&self) -> usize {
        self.local.len()
    }

    pub fn local(&self) -> &[LocalBasis] {
        &self.local
    }

    pub fn scalars(&self) -> &[BarycentricPoly] {
        &self.scalars
    }

    pub fn nodes(&self) -> Option<&LagrangeNodes> {
        self.nodes.as_ref()
    }

    pub fn n_elements(&self) -> usize {
        if self.local.is_empty() {
            0
        } else {
            self.dof_map.len() / self.local.len()
        }
    }

    /// Global unknowns of element `e`, [`NO_DOF`] for suppressed functions.
    pub fn element_dofs(&self, e: usize) -> &[usize] {
        let n = self.local.len();
        &self.dof_map[e * n..(e + 1) * n]
    }

    /// Constant tensor factor of local function `l` on the element.
    pub fn tensor_factor(&self, geom: &ElementGeometry, l: usize) -> Mat3 {
        match self.local[l].factor {
            Factor::SymComponent(c) => {
                let (i, j) = sym_pairs(self.dim)[c];
                sym_basis_tensor(i, j)
            }
            Factor::EdgeTensor(i, j) => geom.edge_tensor(i, j),
            Factor::VectorComponent(_) => panic!("vector space has no tensor factor"),
        }
    }

    /// Constant vector factor of local function `l`, including the
    /// `1/√|K|` scaling of the orthonormal discontinuous basis.
    pub fn vector_factor(&self, geom: &ElementGeometry, l: usize) -> Vec3 {
        match self.local[l].factor {
            Factor::VectorComponent(d) => {
                let mut v = Vec3::zeros();
                v[d] = if self.volume_scaled {
                    1.0 / geom.volume.sqrt()
                } else {
                    1.0
                };
                v
            }
            _ => panic!("tensor space has no vector factor"),
        }
    }

    /// Values and barycentric derivatives of all scalars at the rule points.
    pub fn tabulate(&self, rule: &QuadratureRule) -> ShapeTable {
        let n_points = rule.len();
        let n_lambda = self.dim + 1;
        let mut values = Vec::with_capacity(self.scalars.len() * n_points);
        let mut grads = Vec::with_capacity(self.scalars.len() * n_lambda * n_points);
        for p in &self.scalars {
            for x in &rule.points {
                values.push(p.eval(x));
            }
        }
        for g in &self.scalar_grads {
            for gi in g {
                for x in &rule.points {
                    grads.push(gi.eval(x));
                }
            }
        }
        ShapeTable {
            n_points,
            n_scalars: self.scalars.len(),
            n_lambda,
            values,
            grads,
        }
    }

    /// Value of tensor basis function `l` at barycentric point `lambda`.
    pub fn eval_tensor(&self, geom: &ElementGeometry, l: usize, lambda: &[f64]) -> Mat3 {
        self.tensor_factor(geom, l) * self.scalars[self.local[l].scalar].eval(lambda)
    }

    /// Row-wise divergence of tensor basis function `l`.
    pub fn eval_div(&self, geom: &ElementGeometry, l: usize, lambda: &[f64]) -> Vec3 {
        let s = self.tensor_factor(geom, l);
        let g = &self.scalar_grads[self.local[l].scalar];
        let mut grad = Vec3::zeros();
        for i in 0..=self.dim {
            grad += geom.grad_lambda[i] * g[i].eval(lambda);
        }
        s * grad
    }

    /// Value of vector basis function `l` at barycentric point `lambda`.
    pub fn eval_vector(&self, geom: &ElementGeometry, l: usize, lambda: &[f64]) -> Vec3 {
        self.vector_factor(geom, l) * self.scalars[self.local[l].scalar].eval(lambda)
    }

    /// Cartesian gradient of the scalar of local function `l`.
    pub fn scalar_gradient(&self, geom: &ElementGeometry, l: usize, lambda: &[f64]) -> Vec3 {
        let g = &self.scalar_grads[self.local[l].scalar];
        let mut grad = Vec3::zeros();
        for i in 0..=self.dim {
            grad += geom.grad_lambda[i] * g[i].eval(lambda);
        }
        grad
    }

    fn new(
        kind: SpaceKind,
        dim: usize,
        scalars: Vec<BarycentricPoly>,
        local: Vec<LocalBasis>,
        dof_map: Vec<usize>,
        total_dofs: usize,
        n_continuous: usize,
    ) -> Self {
        let scalar_grads = scalars
            .iter()
            .map(|p| (0..=dim).map(|i| p.derivative(i)).collect())
            .collect();
        let degree = scalars.iter().map(|p| p.degree()).max().unwrap_or(0);
        FeSpace {
            kind,
            dim,
            degree,
            lagrange_degree: None,
            bubble_degree: None,
            scalars,
            scalar_grads,
            local,
            dof_map,
            total_dofs,
            n_continuous,
            volume_scaled: false,
            nodes: None,
        }
    }
}

fn check_dim(mesh: &Mesh) -> Result<usize> {
    match mesh.dim() {
        d @ (2 | 3) => Ok(d),
        d => Err(Error::InvalidInput(format!("dimension {d} is not 2 or 3"))),
    }
}

fn lagrange_scalars(dim: usize, k: u32) -> Vec<BarycentricPoly> {
    homogeneous_indices(dim, k)
        .iter()
        .map(|a| lagrange_shape(dim, k, a))
        .collect()
}

/// Continuous symmetric-tensor Lagrange space `Σ̃_k`.
pub fn build_sym_lagrange(mesh: &Mesh, k: u32) -> Result<FeSpace> {
    let dim = check_dim(mesh)?;
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidInput(format!(
            "continuous tensor degree {k} not supported (1 ≤ k ≤ 3)"
        )));
    }
    let nodes = LagrangeNodes::build(mesh, k);
    let ncomp = sym_dim(dim);
    let mut local = Vec::new();
    for a in 0..nodes.n_local() {
        for c in 0..ncomp {
            local.push(LocalBasis {
                scalar: a,
                factor: Factor::SymComponent(c),
                bubble: false,
            });
        }
    }
    let mut dof_map = Vec::with_capacity(mesh.n_elements() * local.len());
    for e in 0..mesh.n_elements() {
        for &node in nodes.element(e) {
            for c in 0..ncomp {
                dof_map.push(node * ncomp + c);
            }
        }
    }
    let total = nodes.n_nodes() * ncomp;
    let mut space = FeSpace::new(
        SpaceKind::SymLagrange,
        dim,
        lagrange_scalars(dim, k),
        local,
        dof_map,
        total,
        total,
    );
    space.lagrange_degree = Some(k);
    space.nodes = Some(nodes);
    Ok(space)
}

/// Local bubble functions `λ_i λ_j λ^γ T_{i,j}`, `|γ| = k − 2`, edges in
/// lexicographic order. Returns scalars and `(edge, monomial)` labels.
fn bubble_scalars(dim: usize, k: u32) -> Vec<((usize, usize), MultiIndex, BarycentricPoly)> {
    let mut out = Vec::new();
    if k < 2 {
        return out;
    }
    for i in 0..=dim {
        for j in i + 1..=dim {
            for g in homogeneous_indices(dim, k - 2) {
                let mut beta = g;
                beta[i] += 1;
                beta[j] += 1;
                out.push(((i, j), beta, BarycentricPoly::monomial(dim, beta, 1.0)));
            }
        }
    }
    out
}

/// Element-local `H(div)` bubble space `B_k`; empty for `k = 1`.
pub fn build_bubble_space(mesh: &Mesh, k: u32) -> Result<FeSpace> {
    let dim = check_dim(mesh)?;
    if k == 0 || k > 4 {
        return Err(Error::InvalidInput(format!(
            "bubble degree {k} not supported (1 ≤ k ≤ 4)"
        )));
    }
    let bubbles = bubble_scalars(dim, k);
    let local: Vec<LocalBasis> = bubbles
        .iter()
        .enumerate()
        .map(|(s, ((i, j), _, _))| LocalBasis {
            scalar: s,
            factor: Factor::EdgeTensor(*i, *j),
            bubble: true,
        })
        .collect();
    let n = local.len();
    let dof_map: Vec<usize> = (0..mesh.n_elements() * n).collect();
    let total = dof_map.len();
    let mut space = FeSpace::new(
        SpaceKind::Bubble,
        dim,
        bubbles.into_iter().map(|b| b.2).collect(),
        local,
        dof_map,
        total,
        0,
    );
    space.bubble_degree = Some(k);
    Ok(space)
}

fn multinomial(parts: &[u32]) -> f64 {
    let total: u32 = parts.iter().sum();
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    fact(total) / parts.iter().map(|&p| fact(p)).product::<f64>()
}

/// Decides which local bubbles of a sum space get a global unknown.
///
/// For a sub-simplex `s` and an edge `ij` of `s`, the sum over all elements
/// containing `s` of `λ^α T_{i,j}` (`α` supported exactly on `s`, degree equal
/// to the continuous degree) is continuous, so it already lies in the
/// continuous part. Each such patch sum is one linear dependency; it is
/// removed by suppressing one bubble in the first element of the patch.
/// Eliminating in element order keeps the remaining set independent.
fn prune_bubbles(
    mesh: &Mesh,
    lagrange_degree: u32,
    bubble_degree: u32,
    labels: &[((usize, usize), MultiIndex)],
) -> Vec<bool> {
    let dim = mesh.dim();
    let nb = labels.len();
    let mut keep = vec![true; mesh.n_elements() * nb];
    if lagrange_degree < 2 || bubble_degree < lagrange_degree || nb == 0 {
        return keep;
    }
    let extra = bubble_degree - lagrange_degree;
    let mut seen: HashSet<(usize, usize, Vec<(usize, u32)>)> = HashSet::new();
    for e in 0..mesh.n_elements() {
        let verts = mesh.element(e);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for i in 0..=dim {
            for j in i + 1..=dim {
                for alpha in homogeneous_indices(dim, lagrange_degree) {
                    if alpha[i] == 0 || alpha[j] == 0 {
                        continue;
                    }
                    let mut support: Vec<(usize, u32)> = (0..=dim)
                        .filter(|&m| alpha[m] > 0)
                        .map(|m| (verts[m], alpha[m]))
                        .collect();
                    support.sort_unstable();
                    let (a, b) = (verts[i].min(verts[j]), verts[i].max(verts[j]));
                    if !seen.insert((a, b, support)) {
                        continue;
                    }
                    // λ^α (Σ λ)^extra expanded over the bubble monomials of edge ij
                    let row: Vec<f64> = labels
                        .iter()
                        .map(|(edge, beta)| {
                            if *edge != (i, j) || (0..=dim).any(|m| beta[m] < alpha[m]) {
                                return 0.0;
                            }
                            let parts: Vec<u32> = (0..=dim).map(|m| beta[m] - alpha[m]).collect();
                            if parts.iter().sum::<u32>() != extra {
                                0.0
                            } else {
                                multinomial(&parts)
                            }
                        })
                        .collect();
                    rows.push(row);
                }
            }
        }
        // Gaussian elimination with column pivoting; pivot columns are dropped
        let mut pivots: Vec<(usize, Vec<f64>)> = Vec::new();
        for mut row in rows {
            for (col, prow) in &pivots {
                let f = row[*col] / prow[*col];
                if f != 0.0 {
                    for (r, p) in row.iter_mut().zip(prow) {
                        *r -= f * p;
                    }
                }
            }
            let (col, val) = row
                .iter()
                .enumerate()
                .filter(|(c, _)| keep[e * nb + c])
                .map(|(c, v)| (c, v.abs()))
                .fold((usize::MAX, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if col != usize::MAX && val > 1e-10 {
                keep[e * nb + col] = false;
                pivots.push((col, row));
            }
        }
    }
    keep
}

/// Stress space `Σ̃ + B` for the requested variant, with the default rank check.
pub fn build_stress_space(mesh: &Mesh, k: u32, variant: StressVariant) -> Result<FeSpace> {
    build_stress_space_with(mesh, k, variant, RankCheck::Auto)
}

/// Stress space with explicit control over the global rank check.
///
/// The continuous block is numbered first and bubbles second. Bubbles whose
/// span is already covered by the continuous block are suppressed, then the
/// Gram matrix of `a(·,·) + (div ·, div ·)` is factorized to certify linear
/// independence when `check` asks for it.
pub fn build_stress_space_with(
    mesh: &Mesh,
    k: u32,
    variant: StressVariant,
    check: RankCheck,
) -> Result<FeSpace> {
    let (kl, kb) = match variant {
        StressVariant::SumK => (k, k),
        StressVariant::StarK => (k, k + 1),
        StressVariant::SumKPlus1 => (k + 1, k + 1),
    };
    if k == 0 {
        return Err(Error::InvalidInput("stress degree k must be at least 1".into()));
    }
    let cont = build_sym_lagrange(mesh, kl)?;
    let dim = cont.dim;
    if kb > 4 {
        return Err(Error::InvalidInput(format!("bubble degree {kb} not supported")));
    }
    let bubbles = bubble_scalars(dim, kb);
    let labels: Vec<((usize, usize), MultiIndex)> = bubbles.iter().map(|b| (b.0, b.1)).collect();
    let keep = prune_bubbles(mesh, kl, kb, &labels);

    let n_cont_local = cont.local.len();
    let n_scalar_cont = cont.scalars.len();
    let mut scalars = cont.scalars.clone();
    let mut local = cont.local.clone();
    for (s, ((i, j), _, p)) in bubbles.into_iter().enumerate() {
        scalars.push(p);
        local.push(LocalBasis {
            scalar: n_scalar_cont + s,
            factor: Factor::EdgeTensor(i, j),
            bubble: true,
        });
    }
    let nb = labels.len();
    let n_cont = cont.total_dofs;
    let mut next = n_cont;
    let mut dof_map = Vec::with_capacity(mesh.n_elements() * local.len());
    for e in 0..mesh.n_elements() {
        dof_map.extend_from_slice(&cont.dof_map[e * n_cont_local..(e + 1) * n_cont_local]);
        for b in 0..nb {
            if keep[e * nb + b] {
                dof_map.push(next);
                next += 1;
            } else {
                dof_map.push(NO_DOF);
            }
        }
    }
    let mut space = FeSpace::new(
        SpaceKind::SumStress,
        dim,
        scalars,
        local,
        dof_map,
        next,
        n_cont,
    );
    space.lagrange_degree = Some(kl);
    space.bubble_degree = Some(kb);
    space.nodes = cont.nodes;
    let run = match check {
        RankCheck::Always => true,
        RankCheck::Auto => space.total_dofs <= RANK_CHECK_LIMIT,
        RankCheck::Never => false,
    };
    if run && space.n_bubbles() > 0 {
        check_stress_rank(mesh, &space)?;
    }
    Ok(space)
}

/// Orthonormal basis of `P_m` with respect to `(1/|K|) ∫_K`.
pub(crate) fn orthonormal_scalars(dim: usize, m: u32) -> Vec<BarycentricPoly> {
    let mono: Vec<BarycentricPoly> = complete_indices(dim, m)
        .into_iter()
        .map(|a| BarycentricPoly::monomial(dim, a, 1.0))
        .collect();
    let n = mono.len();
    let gram = DMatrix::from_fn(n, n, |i, j| mono[i].mul(&mono[j]).mean());
    let chol = gram.cholesky().expect("monomial Gram matrix is SPD");
    let linv = chol
        .l()
        .try_inverse()
        .expect("Cholesky factor is invertible");
    (0..n)
        .map(|i| {
            (0..=i).fold(BarycentricPoly::zero(dim), |acc, j| {
                acc.add(&mono[j].scale(linv[(i, j)]))
            })
        })
        .collect()
}

/// Discontinuous vector space `V_degree` with an `L²(K)`-orthonormal basis.
pub fn build_disc_vector(mesh: &Mesh, degree: u32) -> Result<FeSpace> {
    let dim = check_dim(mesh)?;
    if degree > 4 {
        return Err(Error::InvalidInput(format!(
            "discontinuous degree {degree} not supported (≤ 4)"
        )));
    }
    let scalars = orthonormal_scalars(dim, degree);
    let mut local = Vec::new();
    for a in 0..scalars.len() {
        for d in 0..dim {
            local.push(LocalBasis {
                scalar: a,
                factor: Factor::VectorComponent(d),
                bubble: false,
            });
        }
    }
    let total = mesh.n_elements() * local.len();
    let mut space = FeSpace::new(
        SpaceKind::DiscVector,
        dim,
        scalars,
        local,
        (0..total).collect(),
        total,
        total,
    );
    space.volume_scaled = true;
    Ok(space)
}

/// Continuous vector Lagrange space of degree `k` with zero boundary trace.
pub fn build_cont_vector_dirichlet(mesh: &Mesh, k: u32) -> Result<FeSpace> {
    let dim = check_dim(mesh)?;
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidInput(format!(
            "continuous vector degree {k} not supported (1 ≤ k ≤ 3)"
        )));
    }
    let nodes = LagrangeNodes::build(mesh, k);
    let mut free = vec![NO_DOF; nodes.n_nodes()];
    let mut n_free = 0;
    for (n, b) in nodes.on_boundary.iter().enumerate() {
        if !b {
            free[n] = n_free;
            n_free += 1;
        }
    }
    let mut local = Vec::new();
    for a in 0..nodes.n_local() {
        for d in 0..dim {
            local.push(LocalBasis {
                scalar: a,
                factor: Factor::VectorComponent(d),
                bubble: false,
            });
        }
    }
    let mut dof_map = Vec::with_capacity(mesh.n_elements() * local.len());
    for e in 0..mesh.n_elements() {
        for &node in nodes.element(e) {
            for d in 0..dim {
                dof_map.push(if free[node] == NO_DOF {
                    NO_DOF
                } else {
                    free[node] * dim + d
                });
            }
        }
    }
    let total = n_free * dim;
    let mut space = FeSpace::new(
        SpaceKind::ContVectorDirichlet,
        dim,
        lagrange_scalars(dim, k),
        local,
        dof_map,
        total,
        total,
    );
    space.lagrange_degree = Some(k);
    space.nodes = Some(nodes);
    Ok(space)
}

/// Dimension of `Σ_k` predicted by the unisolvent degrees of freedom:
/// sub-simplex moments are shared and interior moments are local.
pub fn sum_space_dimension(mesh: &Mesh, k: u32) -> usize {
    let n = mesh.dim();
    let dim_p = |m: i64, d: usize| -> usize {
        if m < 0 {
            0
        } else {
            homogeneous_indices(d, m as u32).len()
        }
    };
    let counts = [
        mesh.n_vertices(),
        mesh.n_edges(),
        if n == 3 { mesh.faces().len() } else { 0 },
    ];
    let mut total = 0;
    for (l, &count) in counts.iter().enumerate().take(n) {
        let q = l * (n - l) + (n - l) * (n - l + 1) / 2;
        total += count * q * dim_p(k as i64 - l as i64 - 1, l);
    }
    total + mesh.n_elements() * sym_dim(n) * dim_p(k as i64 - 2, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_uniform_mesh, BoxDomain};

    fn square(h: f64) -> Mesh {
        generate_uniform_mesh(&BoxDomain::square(), 2, h).unwrap()
    }

    #[test]
    fn lagrange_counts() {
        let m = square(0.5);
        let s = build_sym_lagrange(&m, 1).unwrap();
        assert_eq!(s.total_dofs(), 3 * m.n_vertices());
        let single = Mesh::from_parts(
            2,
            BoxDomain::unit_square(),
            1.0,
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2, 0]],
        )
        .unwrap();
        assert_eq!(build_sym_lagrange(&single, 2).unwrap().n_local(), 18);
        assert!(build_sym_lagrange(&m, 4).is_err());
    }

    #[test]
    fn bubble_counts() {
        let m = square(1.0);
        assert_eq!(build_bubble_space(&m, 1).unwrap().total_dofs(), 0);
        assert_eq!(build_bubble_space(&m, 2).unwrap().n_local(), 3);
        let c = generate_uniform_mesh(&BoxDomain::unit_cube(), 3, 1.0).unwrap();
        assert_eq!(build_bubble_space(&c, 2).unwrap().n_local(), 6);
        assert_eq!(build_bubble_space(&c, 3).unwrap().n_local(), 24);
    }

    #[test]
    fn star_one_has_no_redundant_bubbles() {
        let m = square(0.5);
        let s = build_stress_space(&m, 1, StressVariant::StarK).unwrap();
        assert_eq!(s.total_dofs(), 3 * m.n_vertices() + 3 * m.n_elements());
        let s1 = build_stress_space(&m, 1, StressVariant::SumK).unwrap();
        assert_eq!(s1.n_bubbles(), 0);
        assert_eq!(s1.total_dofs(), 3 * m.n_vertices());
    }

    #[test]
    fn sum_space_matches_degree_of_freedom_count() {
        for h in [1.0, 0.5] {
            let m = square(h);
            for k in 2..=3 {
                let s = build_stress_space_with(&m, k, StressVariant::SumK, RankCheck::Always)
                    .unwrap();
                assert_eq!(s.total_dofs(), sum_space_dimension(&m, k), "k = {k}");
            }
        }
        let c = generate_uniform_mesh(&BoxDomain::unit_cube(), 3, 0.5).unwrap();
        for k in 2..=3 {
            let s = build_stress_space_with(&c, k, StressVariant::SumK, RankCheck::Always).unwrap();
            assert_eq!(s.total_dofs(), sum_space_dimension(&c, k), "3D k = {k}");
        }
    }

    #[test]
    fn unpruned_sum_is_rank_deficient() {
        // P2 tensors plus all quadratic bubbles: the edge-patch sums repeat
        let m = square(1.0);
        let cont = build_sym_lagrange(&m, 2).unwrap();
        let b = build_bubble_space(&m, 2).unwrap();
        let spanning = cont.total_dofs() + b.total_dofs();
        assert_eq!(spanning - sum_space_dimension(&m, 2), m.n_edges());
    }

    #[test]
    fn disc_and_dirichlet_counts() {
        let m = square(1.0);
        assert_eq!(build_disc_vector(&m, 0).unwrap().total_dofs(), 2 * m.n_elements());
        let c = generate_uniform_mesh(&BoxDomain::unit_cube(), 3, 1.0).unwrap();
        assert_eq!(build_disc_vector(&c, 1).unwrap().n_local(), 12);
        assert_eq!(build_cont_vector_dirichlet(&m, 1).unwrap().total_dofs(), 2);
    }

    #[test]
    fn orthonormal_basis_is_orthonormal() {
        for dim in 2..=3 {
            let b = orthonormal_scalars(dim, 2);
            for i in 0..b.len() {
                for j in 0..b.len() {
                    let v = b[i].mul(&b[j]).mean();
                    assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }
}
