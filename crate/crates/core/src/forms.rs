//! Bilinear forms, load functionals and the assembled saddle-point systems.
//!
//! Volume forms are integrated exactly from reference tables of barycentric
//! moments: with `φ_s` element-independent scalars and `S` an element-constant
//! tensor, `∫_K φ_s φ_t S:𝒜S' = |K| ⟨φ_s φ_t⟩ S:𝒜S'` and the gradient terms
//! pick up `∇λ_i` factors. Loads and face terms use quadrature.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, Mesh, Point};
use crate::polyquad::{collapsed_rule, quadrature_rule, simplex_measure, BarycentricPoly, QuadratureRule};
use crate::problems::ManufacturedProblem;
use crate::solver::BlockSystem;
use crate::spaces::{
    build_cont_vector_dirichlet, build_disc_vector, build_stress_space_with, Factor, FeSpace,
    RankCheck, ShapeTable, StressVariant, NO_DOF,
};
use crate::sparse::{CscMatrix, Storage};
use crate::tensor::{ddot, identity, Mat3, Vec3};

/// Isotropic material given by its Lamé constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub lambda: f64,
    pub mu: f64,
    pub dim: usize,
}

impl Material {
    pub fn new(lambda: f64, mu: f64, dim: usize) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) || !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "Lamé constants need μ > 0 and λ ≥ 0 (got λ = {lambda}, μ = {mu})"
            )));
        }
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidInput(format!("dimension {dim} is not 2 or 3")));
        }
        Ok(Material { lambda, mu, dim })
    }

    /// `λ = 0.3`, `μ = 0.35`, used by all convergence tables.
    pub fn paper_default(dim: usize) -> Self {
        Material {
            lambda: 0.3,
            mu: 0.35,
            dim,
        }
    }

    /// `𝒜σ = (σ − λ/(nλ + 2μ) tr σ δ) / 2μ`.
    pub fn compliance(&self, sigma: &Mat3) -> Mat3 {
        let n = self.dim as f64;
        let c = self.lambda / (n * self.lambda + 2.0 * self.mu);
        (sigma - identity(self.dim) * (c * sigma.trace())) / (2.0 * self.mu)
    }

    /// Inverse of the compliance: `2μ ε + λ tr ε δ`.
    pub fn stiffness(&self, strain: &Mat3) -> Mat3 {
        strain * (2.0 * self.mu) + identity(self.dim) * (self.lambda * strain.trace())
    }
}

pub fn apply_compliance(material: &Material, sigma: &Mat3) -> Mat3 {
    material.compliance(sigma)
}

/// The three discretizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// `Σ_k × V_{k−1}` with jump stabilization of the displacement.
    StabDiv,
    /// `Σ*_k × W_k` with the div–div augmented stress form.
    BubbleCont,
    /// `Σ_{k+1} × W_k` with the div–div augmented stress form.
    HoodTaylor,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::StabDiv => "stab-div",
            Method::BubbleCont => "bubble-cont",
            Method::HoodTaylor => "hood-taylor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "stab-div" => Ok(Method::StabDiv),
            "bubble-cont" => Ok(Method::BubbleCont),
            "hood-taylor" => Ok(Method::HoodTaylor),
            _ => Err(Error::InvalidInput(format!(
                "unknown method '{s}' (expected stab-div, bubble-cont or hood-taylor)"
            ))),
        }
    }

    /// Whether the displacement is discontinuous and jump-penalized.
    pub fn has_jump_term(self) -> bool {
        self == Method::StabDiv
    }

    /// Checks the `(method, k, dim)` combination.
    pub fn validate(self, k: u32, dim: usize) -> Result<()> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidInput(format!("dimension {dim} is not 2 or 3")));
        }
        match self {
            Method::StabDiv | Method::BubbleCont => {
                if k < 1 || k as usize > dim {
                    return Err(Error::InvalidInput(format!(
                        "{} requires 1 ≤ k ≤ n (got k = {k}, n = {dim})",
                        self.name()
                    )));
                }
            }
            Method::HoodTaylor => {
                if k < 1 {
                    return Err(Error::InvalidInput("hood-taylor requires k ≥ 1".into()));
                }
                if k > 2 {
                    return Err(Error::Capability(format!(
                        "hood-taylor with k = {k} needs degree-{} continuous tensors (at most 3 supported)",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stress and displacement spaces of the method.
    pub fn spaces(self, mesh: &Mesh, k: u32, check: RankCheck) -> Result<(FeSpace, FeSpace)> {
        self.validate(k, mesh.dim())?;
        Ok(match self {
            Method::StabDiv => (
                build_stress_space_with(mesh, k, StressVariant::SumK, check)?,
                build_disc_vector(mesh, k - 1)?,
            ),
            Method::BubbleCont => (
                build_stress_space_with(mesh, k, StressVariant::StarK, check)?,
                build_cont_vector_dirichlet(mesh, k)?,
            ),
            Method::HoodTaylor => (
                build_stress_space_with(mesh, k, StressVariant::SumKPlus1, check)?,
                build_cont_vector_dirichlet(mesh, k)?,
            ),
        })
    }
}

/// Which space indexes the rows or columns of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockSpace {
    Stress,
    Displacement,
}

#[derive(Clone, Debug)]
pub struct SparseBlock {
    pub rows: BlockSpace,
    pub cols: BlockSpace,
    pub matrix: CscMatrix,
}

impl SparseBlock {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// `max |M − Mᵀ| / max |M|` (zero for an empty block).
    pub fn relative_asymmetry(&self) -> f64 {
        let m = self.matrix.max_abs();
        if m == 0.0 {
            0.0
        } else {
            self.matrix.asymmetry() / m
        }
    }
}

fn derivatives(dim: usize, scalars: &[BarycentricPoly]) -> Vec<Vec<BarycentricPoly>> {
    scalars
        .iter()
        .map(|p| (0..=dim).map(|i| p.derivative(i)).collect())
        .collect()
}

/// Exact element-independent moments of a tensor space, plus the mixed
/// moments against a vector space when one is given.
struct StressKernel<'a> {
    space: &'a FeSpace,
    dim: usize,
    ns: usize,
    /// `⟨φ_s φ_t⟩`
    mass: Vec<f64>,
    /// `⟨∂_i φ_s ∂_j φ_t⟩` at `((i·(n+1) + j)·ns + s)·ns + t`
    stiff: Vec<f64>,
    /// First local function of every distinct tensor factor.
    factor_rep: Vec<usize>,
    factor_of: Vec<usize>,
}

impl<'a> StressKernel<'a> {
    fn new(space: &'a FeSpace, with_div: bool) -> Self {
        let dim = space.dim();
        let nl = dim + 1;
        let scalars = space.scalars();
        let ns = scalars.len();
        let mut mass = vec![0.0; ns * ns];
        for s in 0..ns {
            for t in s..ns {
                let v = scalars[s].mul(&scalars[t]).mean();
                mass[s * ns + t] = v;
                mass[t * ns + s] = v;
            }
        }
        let mut stiff = Vec::new();
        if with_div {
            let grads = derivatives(dim, scalars);
            stiff = vec![0.0; nl * nl * ns * ns];
            for i in 0..nl {
                for j in 0..nl {
                    for s in 0..ns {
                        for t in 0..ns {
                            stiff[((i * nl + j) * ns + s) * ns + t] =
                                grads[s][i].mul(&grads[t][j]).mean();
                        }
                    }
                }
            }
        }
        let mut factors: Vec<Factor> = Vec::new();
        let mut factor_rep = Vec::new();
        let mut factor_of = Vec::new();
        for (l, b) in space.local().iter().enumerate() {
            match factors.iter().position(|f| *f == b.factor) {
                Some(p) => factor_of.push(p),
                None => {
                    factors.push(b.factor);
                    factor_rep.push(l);
                    factor_of.push(factors.len() - 1);
                }
            }
        }
        StressKernel {
            space,
            dim,
            ns,
            mass,
            stiff,
            factor_rep,
            factor_of,
        }
    }

    fn tensors(&self, geom: &ElementGeometry) -> Vec<Mat3> {
        self.factor_rep
            .iter()
            .map(|&l| self.space.tensor_factor(geom, l))
            .collect()
    }

    /// `S_f ∇λ_i` at `f·(n+1) + i`.
    fn tensor_grads(&self, geom: &ElementGeometry, tensors: &[Mat3]) -> Vec<Vec3> {
        let nl = self.dim + 1;
        let mut out = Vec::with_capacity(tensors.len() * nl);
        for t in tensors {
            for i in 0..nl {
                out.push(t * geom.grad_lambda[i]);
            }
        }
        out
    }

    /// Dense local `a(·,·)` (+ `(div ·, div ·)`) block, row-major.
    fn matrix(&self, geom: &ElementGeometry, material: &Material, a: bool, divdiv: bool) -> Vec<f64> {
        let n = self.space.n_local();
        let nl = self.dim + 1;
        let ns = self.ns;
        let tensors = self.tensors(geom);
        let nf = tensors.len();
        let mut sa = vec![0.0; nf * nf];
        if a {
            let comp: Vec<Mat3> = tensors.iter().map(|t| material.compliance(t)).collect();
            for f in 0..nf {
                for g in 0..nf {
                    sa[f * nf + g] = ddot(&tensors[f], &comp[g]);
                }
            }
        }
        let mut pp = Vec::new();
        if divdiv {
            let sg = self.tensor_grads(geom, &tensors);
            pp = vec![0.0; nf * nl * nf * nl];
            for fi in 0..nf * nl {
                for gj in 0..nf * nl {
                    pp[fi * nf * nl + gj] = sg[fi].dot(&sg[gj]);
                }
            }
        }
        let vol = geom.volume;
        let local = self.space.local();
        let mut out = vec![0.0; n * n];
        for l in 0..n {
            let (s, f) = (local[l].scalar, self.factor_of[l]);
            for m in l..n {
                let (t, g) = (local[m].scalar, self.factor_of[m]);
                let mut v = 0.0;
                if a {
                    v += self.mass[s * ns + t] * sa[f * nf + g];
                }
                if divdiv {
                    for i in 0..nl {
                        for j in 0..nl {
                            let k = self.stiff[((i * nl + j) * ns + s) * ns + t];
                            if k != 0.0 {
                                v += k * pp[(f * nl + i) * nf * nl + g * nl + j];
                            }
                        }
                    }
                }
                v *= vol;
                out[l * n + m] = v;
                out[m * n + l] = v;
            }
        }
        out
    }
}

/// Mixed moments `⟨∂_i φ_s χ_a⟩` between stress scalars and displacement scalars.
struct MixedKernel {
    nv: usize,
    ns: usize,
    grad_mass: Vec<f64>,
}

impl MixedKernel {
    fn new(stress: &FeSpace, disp: &FeSpace) -> Self {
        let dim = stress.dim();
        let grads = derivatives(dim, stress.scalars());
        let vs = disp.scalars();
        let (ns, nv) = (grads.len(), vs.len());
        let mut grad_mass = vec![0.0; (dim + 1) * ns * nv];
        for i in 0..=dim {
            for s in 0..ns {
                for a in 0..nv {
                    grad_mass[(i * ns + s) * nv + a] = grads[s][i].mul(&vs[a]).mean();
                }
            }
        }
        MixedKernel { nv, ns, grad_mass }
    }

    /// Dense local `b(τ, v) = ∫ div τ · v`, rows displacement, columns stress.
    fn matrix(&self, stress: &StressKernel, disp: &FeSpace, geom: &ElementGeometry) -> Vec<f64> {
        let dim = stress.dim;
        let nl = dim + 1;
        let tensors = stress.tensors(geom);
        let sg = stress.tensor_grads(geom, &tensors);
        let n_s = stress.space.n_local();
        let n_u = disp.n_local();
        let slocal = stress.space.local();
        let mut out = vec![0.0; n_u * n_s];
        for (r, vb) in disp.local().iter().enumerate() {
            let Factor::VectorComponent(d) = vb.factor else {
                unreachable!("displacement spaces carry vector factors")
            };
            let c = disp.vector_factor(geom, r)[d] * geom.volume;
            let a = vb.scalar;
            for (l, sb) in slocal.iter().enumerate() {
                let f = stress.factor_of[l];
                let mut v = 0.0;
                for i in 0..nl {
                    v += self.grad_mass[(i * self.ns + sb.scalar) * self.nv + a] * sg[f * nl + i][d];
                }
                out[r * n_s + l] = c * v;
            }
        }
        out
    }
}

/// Volume quadrature with the shape tables of one space.
struct LoadRule {
    rule: QuadratureRule,
    weights: Vec<f64>,
    table: ShapeTable,
}

impl LoadRule {
    fn new(space: &FeSpace, degree: usize) -> Result<Self> {
        let rule = collapsed_rule(space.dim(), degree)?;
        let weights = rule.normalized_weights();
        let table = space.tabulate(&rule);
        Ok(LoadRule {
            rule,
            weights,
            table,
        })
    }
}

/// `∫_K f · v_r` for the local displacement functions.
fn local_load<F: Fn(&Point) -> Vec3>(disp: &FeSpace, geom: &ElementGeometry, f: &F, lr: &LoadRule) -> Vec<f64> {
    let mut out = vec![0.0; disp.n_local()];
    let factors: Vec<(usize, f64)> = (0..disp.n_local())
        .map(|r| match disp.local()[r].factor {
            Factor::VectorComponent(d) => (d, disp.vector_factor(geom, r)[d]),
            _ => unreachable!("displacement spaces carry vector factors"),
        })
        .collect();
    for (q, lam) in lr.rule.points.iter().enumerate() {
        let fv = f(&geom.point(lam));
        let w = lr.weights[q] * geom.volume;
        for (r, b) in disp.local().iter().enumerate() {
            let (d, c) = factors[r];
            out[r] += w * fv[d] * c * lr.table.value(b.scalar, q);
        }
    }
    out
}

/// `∫_K f · div τ_l` for the local stress functions.
fn local_div_load<F: Fn(&Point) -> Vec3>(
    kernel: &StressKernel,
    geom: &ElementGeometry,
    f: &F,
    lr: &LoadRule,
) -> Vec<f64> {
    let space = kernel.space;
    let nl = kernel.dim + 1;
    let tensors = kernel.tensors(geom);
    let mut out = vec![0.0; space.n_local()];
    let mut grads = vec![Vec3::zeros(); kernel.ns];
    for (q, lam) in lr.rule.points.iter().enumerate() {
        let fv = f(&geom.point(lam));
        let w = lr.weights[q] * geom.volume;
        for (s, g) in grads.iter_mut().enumerate() {
            *g = Vec3::zeros();
            for i in 0..nl {
                *g += geom.grad_lambda[i] * lr.table.grad(s, i, q);
            }
        }
        for (l, b) in space.local().iter().enumerate() {
            let div = tensors[kernel.factor_of[l]] * grads[b.scalar];
            out[l] += w * fv.dot(&div);
        }
    }
    out
}

/// Local positions of the face vertices inside an adjacent element.
fn face_positions(mesh: &Mesh, face: usize, element: usize) -> Vec<usize> {
    let verts = mesh.element(element);
    mesh.faces()[face]
        .vertices
        .iter()
        .map(|v| verts.iter().position(|w| w == v).expect("face vertex belongs to element"))
        .collect()
}

/// Traces of a vector field on a face: for each adjacent side, the element,
/// its geometry and the element barycentrics of every face quadrature point.
struct FaceTrace {
    element: usize,
    geom: ElementGeometry,
    points: Vec<[f64; 4]>,
}

fn face_traces(mesh: &Mesh, face: usize, rule: &QuadratureRule) -> Result<Vec<FaceTrace>> {
    mesh.faces()[face]
        .adjacent
        .iter()
        .map(|&(e, _)| {
            let pos = face_positions(mesh, face, e);
            let points = rule
                .points
                .iter()
                .map(|mu| {
                    let mut lam = [0.0; 4];
                    for (t, &p) in pos.iter().enumerate() {
                        lam[p] = mu[t];
                    }
                    lam
                })
                .collect();
            Ok(FaceTrace {
                element: e,
                geom: mesh.element_geometry(e)?,
                points,
            })
        })
        .collect()
}

/// `h_F |F|` with the face size `h_F = |F|^{1/(n-1)}`.
fn face_weight(mesh: &Mesh, face: usize) -> f64 {
    let measure = face_measure(mesh, face);
    let n = mesh.dim() as f64;
    measure.powf(1.0 / (n - 1.0)) * measure
}

fn face_measure(mesh: &Mesh, face: usize) -> f64 {
    let pts: Vec<Point> = mesh.faces()[face]
        .vertices
        .iter()
        .map(|&v| mesh.vertices()[v])
        .collect();
    simplex_measure(&pts)
}

fn face_rule(space: &FeSpace) -> Result<QuadratureRule> {
    quadrature_rule(space.dim() - 1, 2 * space.degree() as usize)
}

/// Local jump matrix `h_F ∫_F ⟦φ_p⟧:⟦φ_q⟧` on one face with the global
/// unknowns of the adjacent elements concatenated.
fn local_jump(mesh: &Mesh, space: &FeSpace, face: usize, rule: &QuadratureRule) -> Result<(Vec<usize>, Vec<f64>)> {
    let f = &mesh.faces()[face];
    let nu = f.normal;
    let traces = face_traces(mesh, face, rule)?;
    let nloc = space.n_local();
    let m = nloc * traces.len();
    let mut dofs = Vec::with_capacity(m);
    for t in &traces {
        dofs.extend_from_slice(space.element_dofs(t.element));
    }
    let scale = face_weight(mesh, face);
    let weights = rule.normalized_weights();
    let mut vals = vec![Vec3::zeros(); m];
    let mut out = vec![0.0; m * m];
    for q in 0..rule.len() {
        for (side, t) in traces.iter().enumerate() {
            let sign = if side == 0 { 1.0 } else { -1.0 };
            for r in 0..nloc {
                vals[side * nloc + r] = space.eval_vector(&t.geom, r, &t.points[q]) * sign;
            }
        }
        let w = 0.5 * scale * weights[q];
        for p in 0..m {
            let (a, an) = (vals[p], vals[p].dot(&nu));
            if a == Vec3::zeros() {
                continue;
            }
            for s in p..m {
                let v = w * (a.dot(&vals[s]) + an * vals[s].dot(&nu));
                out[p * m + s] += v;
                if s != p {
                    out[s * m + p] += v;
                }
            }
        }
    }
    Ok((dofs, out))
}

/// Default load quadrature degree: exact for a polynomial load of the
/// problem paired with test functions of degree `space_degree`.
pub fn load_degree(problem: &ManufacturedProblem, space_degree: u32) -> usize {
    problem.displacement_degree().saturating_sub(2) + space_degree as usize
}

fn element_patch_block<F>(mesh: &Mesh, rows: &FeSpace, cols: &FeSpace, storage: Storage, local: F) -> Result<CscMatrix>
where
    F: Fn(usize, &ElementGeometry) -> Vec<f64>,
{
    let mut m = CscMatrix::from_patches(
        rows.total_dofs(),
        cols.total_dofs(),
        mesh.n_elements(),
        |e| (rows.element_dofs(e), cols.element_dofs(e)),
        storage,
    )?;
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let loc = local(e, &geom);
        m.scatter(rows.element_dofs(e), cols.element_dofs(e), &loc);
    }
    Ok(m)
}

/// `a(σ, τ) = ∫ 𝒜σ : τ`.
pub fn assemble_a(stress: &FeSpace, mesh: &Mesh, material: &Material) -> Result<SparseBlock> {
    let k = StressKernel::new(stress, false);
    let matrix = element_patch_block(mesh, stress, stress, Storage::Full, |_, g| {
        k.matrix(g, material, true, false)
    })?;
    Ok(SparseBlock {
        rows: BlockSpace::Stress,
        cols: BlockSpace::Stress,
        matrix,
    })
}

/// `∫ div σ · div τ`.
pub fn assemble_divdiv(stress: &FeSpace, mesh: &Mesh) -> Result<SparseBlock> {
    let k = StressKernel::new(stress, true);
    let material = Material::paper_default(stress.dim());
    let matrix = element_patch_block(mesh, stress, stress, Storage::Full, |_, g| {
        k.matrix(g, &material, false, true)
    })?;
    Ok(SparseBlock {
        rows: BlockSpace::Stress,
        cols: BlockSpace::Stress,
        matrix,
    })
}

/// `b(τ, v) = ∫ div τ · v`; rows are displacement unknowns, columns stress unknowns.
pub fn assemble_b(stress: &FeSpace, disp: &FeSpace, mesh: &Mesh) -> Result<SparseBlock> {
    let sk = StressKernel::new(stress, false);
    let mk = MixedKernel::new(stress, disp);
    let matrix = element_patch_block(mesh, disp, stress, Storage::Full, |_, g| mk.matrix(&sk, disp, g))?;
    Ok(SparseBlock {
        rows: BlockSpace::Displacement,
        cols: BlockSpace::Stress,
        matrix,
    })
}

/// `c(u, v) = Σ_F h_F ∫_F ⟦u⟧:⟦v⟧` over interior and boundary faces.
pub fn assemble_c(disp: &FeSpace, mesh: &Mesh) -> Result<SparseBlock> {
    let rule = face_rule(disp)?;
    let mut locals = Vec::with_capacity(mesh.faces().len());
    for f in 0..mesh.faces().len() {
        locals.push(local_jump(mesh, disp, f, &rule)?);
    }
    let n = disp.total_dofs();
    let mut matrix = CscMatrix::from_patches(n, n, locals.len(), |p| (&locals[p].0[..], &locals[p].0[..]), Storage::Full)?;
    for (dofs, loc) in &locals {
        matrix.scatter(dofs, dofs, loc);
    }
    Ok(SparseBlock {
        rows: BlockSpace::Displacement,
        cols: BlockSpace::Displacement,
        matrix,
    })
}

/// `c(v, v)` evaluated from pointwise jumps, so continuous fields give
/// exactly-cancelling differences rather than a rounded quadratic form.
pub fn jump_energy(space: &FeSpace, mesh: &Mesh, coeffs: &[f64]) -> Result<f64> {
    let rule = face_rule(space)?;
    let weights = rule.normalized_weights();
    let mut total = 0.0;
    for (fi, f) in mesh.faces().iter().enumerate() {
        let traces = face_traces(mesh, fi, &rule)?;
        let scale = face_weight(mesh, fi);
        for q in 0..rule.len() {
            let mut jump = Vec3::zeros();
            for (side, t) in traces.iter().enumerate() {
                let sign = if side == 0 { 1.0 } else { -1.0 };
                let dofs = space.element_dofs(t.element);
                for (r, &d) in dofs.iter().enumerate() {
                    if d != NO_DOF && coeffs[d] != 0.0 {
                        jump += space.eval_vector(&t.geom, r, &t.points[q]) * (sign * coeffs[d]);
                    }
                }
            }
            let jn = jump.dot(&f.normal);
            total += 0.5 * scale * weights[q] * (jump.norm_squared() + jn * jn);
        }
    }
    Ok(total)
}

fn scatter_vector(out: &mut [f64], dofs: &[usize], local: &[f64]) {
    for (&d, v) in dofs.iter().zip(local) {
        if d != NO_DOF {
            out[d] += v;
        }
    }
}

/// `∫ f · v` for every displacement unknown.
pub fn assemble_load<F: Fn(&Point) -> Vec3>(f: F, disp: &FeSpace, mesh: &Mesh, degree: usize) -> Result<Vec<f64>> {
    let lr = LoadRule::new(disp, degree)?;
    let mut out = vec![0.0; disp.total_dofs()];
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let loc = local_load(disp, &geom, &f, &lr);
        scatter_vector(&mut out, disp.element_dofs(e), &loc);
    }
    Ok(out)
}

/// `∫ f · div τ` for every stress unknown.
pub fn assemble_load_div<F: Fn(&Point) -> Vec3>(f: F, stress: &FeSpace, mesh: &Mesh, degree: usize) -> Result<Vec<f64>> {
    let k = StressKernel::new(stress, false);
    let lr = LoadRule::new(stress, degree)?;
    let mut out = vec![0.0; stress.total_dofs()];
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let loc = local_div_load(&k, &geom, &f, &lr);
        scatter_vector(&mut out, stress.element_dofs(e), &loc);
    }
    Ok(out)
}

/// Lower triangle of `a(·,·) + (div ·, div ·)` on a stress space.
pub(crate) fn stress_gram(stress: &FeSpace, mesh: &Mesh, material: &Material) -> Result<CscMatrix> {
    let k = StressKernel::new(stress, true);
    element_patch_block(mesh, stress, stress, Storage::Lower, |_, g| k.matrix(g, material, true, true))
}

#[derive(Clone, Copy, Debug)]
pub struct AssemblyOptions {
    /// Eliminate the element-local bubble unknowns before the global solve.
    pub condense: bool,
    pub rank_check: RankCheck,
    /// Load quadrature degree; derived from the problem when `None`.
    pub load_degree: Option<usize>,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            condense: true,
            rank_check: RankCheck::Auto,
            load_degree: None,
        }
    }
}

/// Data to recover the bubble coefficients of one element.
#[derive(Clone, Debug)]
struct CondensedElement {
    /// Global stress unknowns of the kept bubbles.
    bubbles: Vec<usize>,
    /// Reduced-system unknowns the bubbles couple to.
    rest: Vec<usize>,
    bubble_factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    coupling: DMatrix<f64>,
    rhs: DVector<f64>,
}

/// Assembled discrete problem of one method on one mesh.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub method: Method,
    pub k: u32,
    pub stress: FeSpace,
    pub displacement: FeSpace,
    pub system: BlockSystem,
    condensed: Option<Vec<CondensedElement>>,
}

impl Discretization {
    /// Whether bubble unknowns were eliminated from [`Self::system`].
    pub fn is_condensed(&self) -> bool {
        self.condensed.is_some()
    }

    /// Splits a solution of the (possibly reduced) system into full stress and
    /// displacement coefficient vectors.
    pub fn expand(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ns = self.system.n_sigma;
        let mut sigma = vec![0.0; self.stress.total_dofs()];
        sigma[..ns].copy_from_slice(&x[..ns]);
        let u = x[ns..].to_vec();
        if let Some(elements) = &self.condensed {
            for c in elements {
                let xr = DVector::from_iterator(c.rest.len(), c.rest.iter().map(|&i| x[i]));
                let xb = c.bubble_factor.solve(&(&c.rhs - &c.coupling * xr));
                for (&d, v) in c.bubbles.iter().zip(xb.iter()) {
                    sigma[d] = *v;
                }
            }
        }
        (sigma, u)
    }
}

/// Assembles the symmetrized saddle-point system of `method`:
///
/// * stab-div: `[[A, Bᵀ], [B, −C]] [σ; u] = [0; −F]`
/// * bubble-cont, hood-taylor: `[[A + D, Bᵀ], [B, 0]] [σ; u] = [−G; −F]`
///
/// with `F = ∫ f·v` and `G = ∫ f·div τ`.
pub fn build_system(
    method: Method,
    k: u32,
    mesh: &Mesh,
    material: &Material,
    problem: &ManufacturedProblem,
    options: AssemblyOptions,
) -> Result<Discretization> {
    if material.dim != mesh.dim() || problem.dim != mesh.dim() {
        return Err(Error::InvalidInput(format!(
            "material / problem dimension does not match the {}D mesh",
            mesh.dim()
        )));
    }
    let (stress, disp) = method.spaces(mesh, k, options.rank_check)?;
    let divdiv = !method.has_jump_term();
    let sk = StressKernel::new(&stress, divdiv);
    let mk = MixedKernel::new(&stress, &disp);
    let degree = options
        .load_degree
        .unwrap_or_else(|| load_degree(problem, stress.degree().max(disp.degree())));
    let u_rule = LoadRule::new(&disp, degree)?;
    let s_rule = if divdiv {
        Some(LoadRule::new(&stress, degree)?)
    } else {
        None
    };
    let f = |x: &Point| problem.f(x);

    let condense = options.condense && stress.n_bubbles() > 0;
    let n_sigma = if condense {
        stress.n_continuous()
    } else {
        stress.total_dofs()
    };
    let n_u = disp.total_dofs();
    let n = n_sigma + n_u;
    let map_sigma = |d: usize| if d == NO_DOF || d >= n_sigma { NO_DOF } else { d };
    let map_u = |d: usize| if d == NO_DOF { NO_DOF } else { n_sigma + d };

    // reduced global indices per element: stress part then displacement part
    let n_s_loc = stress.n_local();
    let mut patches: Vec<Vec<usize>> = Vec::with_capacity(mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let mut p: Vec<usize> = stress.element_dofs(e).iter().map(|&d| map_sigma(d)).collect();
        p.extend(disp.element_dofs(e).iter().map(|&d| map_u(d)));
        patches.push(p);
    }
    let mut face_locals = Vec::new();
    if method.has_jump_term() {
        let rule = face_rule(&disp)?;
        for fi in 0..mesh.faces().len() {
            let (dofs, loc) = local_jump(mesh, &disp, fi, &rule)?;
            let dofs: Vec<usize> = dofs.into_iter().map(map_u).collect();
            patches.push(dofs.clone());
            face_locals.push((dofs, loc));
        }
    }
    let mut matrix = CscMatrix::from_patches(n, n, patches.len(), |p| (&patches[p][..], &patches[p][..]), Storage::Lower)?;
    let mut rhs = vec![0.0; n];
    let mut condensed = Vec::new();

    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let s_loc = sk.matrix(&geom, material, true, divdiv);
        let b_loc = mk.matrix(&sk, &disp, &geom);
        let mut r_loc = vec![0.0; n_s_loc + disp.n_local()];
        if let Some(lr) = &s_rule {
            let g = local_div_load(&sk, &geom, &f, lr);
            for (r, v) in r_loc.iter_mut().zip(g) {
                *r = -v;
            }
        }
        let fl = local_load(&disp, &geom, &f, &u_rule);
        for (r, v) in r_loc[n_s_loc..].iter_mut().zip(fl) {
            *r = -v;
        }
        let m = r_loc.len();
        let n_u_loc = disp.n_local();
        let mut k_loc = vec![0.0; m * m];
        for i in 0..n_s_loc {
            k_loc[i * m..i * m + n_s_loc].copy_from_slice(&s_loc[i * n_s_loc..(i + 1) * n_s_loc]);
        }
        for r in 0..n_u_loc {
            for l in 0..n_s_loc {
                let v = b_loc[r * n_s_loc + l];
                k_loc[(n_s_loc + r) * m + l] = v;
                k_loc[l * m + n_s_loc + r] = v;
            }
        }
        let sdofs = stress.element_dofs(e);
        let globals = &patches[e];
        if !condense {
            matrix.scatter(globals, globals, &k_loc);
            scatter_vector(&mut rhs, globals, &r_loc);
            continue;
        }
        let bub: Vec<usize> = (0..n_s_loc)
            .filter(|&l| stress.local()[l].bubble && sdofs[l] != NO_DOF)
            .collect();
        let rest: Vec<usize> = (0..m)
            .filter(|&l| globals[l] != NO_DOF)
            .collect();
        let (nb, nr) = (bub.len(), rest.len());
        let kbb = DMatrix::from_fn(nb, nb, |i, j| k_loc[bub[i] * m + bub[j]]);
        let kbr = DMatrix::from_fn(nb, nr, |i, j| k_loc[bub[i] * m + rest[j]]);
        let krr = DMatrix::from_fn(nr, nr, |i, j| k_loc[rest[i] * m + rest[j]]);
        let rb = DVector::from_fn(nb, |i, _| r_loc[bub[i]]);
        let rr = DVector::from_fn(nr, |i, _| r_loc[rest[i]]);
        let chol = kbb.cholesky().ok_or_else(|| Error::Structural {
            message: "bubble block of the stress form is not positive definite".into(),
            elements: vec![e],
        })?;
        let x = chol.solve(&kbr);
        let reduced = krr - kbr.transpose() * &x;
        let reduced_rhs = rr - kbr.transpose() * chol.solve(&rb);
        let rg: Vec<usize> = rest.iter().map(|&l| globals[l]).collect();
        // nalgebra is column-major; the Schur complement is symmetric
        matrix.scatter(&rg, &rg, reduced.as_slice());
        scatter_vector(&mut rhs, &rg, reduced_rhs.as_slice());
        condensed.push(CondensedElement {
            bubbles: bub.iter().map(|&l| sdofs[l]).collect(),
            rest: rg,
            bubble_factor: chol,
            coupling: kbr,
            rhs: rb,
        });
    }
    for (dofs, loc) in &face_locals {
        let neg: Vec<f64> = loc.iter().map(|v| -v).collect();
        matrix.scatter(dofs, dofs, &neg);
    }
    let system = BlockSystem::new(matrix, rhs, n_sigma, n_u)?;
    Ok(Discretization {
        method,
        k,
        stress,
        displacement: disp,
        system,
        condensed: condense.then_some(condensed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_uniform_mesh, BoxDomain};
    use crate::polyquad::integrate_element;
    use crate::spaces::{build_bubble_space, build_sym_lagrange, interpolate_vector, rigid_motion_basis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_triangle() -> Mesh {
        Mesh::from_parts(
            2,
            BoxDomain::unit_square(),
            1.0,
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2, 0]],
        )
        .unwrap()
    }

    #[test]
    fn compliance_examples() {
        let m = Material::paper_default(2);
        let d = m.compliance(&identity(2));
        assert!((d[(0, 0)] - 1.0 / 1.3).abs() < 1e-15 && (d[(1, 1)] - 1.0 / 1.3).abs() < 1e-15);
        let dev = Mat3::new(1.0, 2.0, 0.0, 2.0, -1.0, 0.0, 0.0, 0.0, 0.0);
        assert!((m.compliance(&dev) - dev / 0.7).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in [2, 3] {
            let m = Material::paper_default(dim);
            for _ in 0..1000 {
                let mut s = Mat3::zeros();
                for i in 0..dim {
                    for j in i..dim {
                        let v: f64 = rng.random_range(-1.0..1.0);
                        s[(i, j)] = v;
                        s[(j, i)] = v;
                    }
                }
                assert!(ddot(&s, &m.compliance(&s)) > 0.0);
                assert!((m.stiffness(&m.compliance(&s)) - s).norm() < 1e-13);
            }
        }
        assert!(Material::new(0.3, 0.0, 2).is_err());
        assert!(Material::new(-1.0, 1.0, 2).is_err());
    }

    #[test]
    fn a_of_identity_on_one_element() {
        let mesh = reference_triangle();
        let s = build_sym_lagrange(&mesh, 1).unwrap();
        let mat = Material::paper_default(2);
        let a = assemble_a(&s, &mesh, &mat).unwrap();
        // δ = Σ_nodes φ_node (e_00 + e_11)
        let mut x = vec![0.0; s.total_dofs()];
        for node in 0..3 {
            x[node * 3] = 1.0;
            x[node * 3 + 1] = 1.0;
        }
        let v = a.matrix.bilinear(&x, &x);
        assert!((v - 0.5 * 2.0 / 1.3).abs() < 1e-14, "{v}");
        assert!(a.relative_asymmetry() <= 1e-12);
    }

    #[test]
    fn b_entry_on_reference_triangle() {
        let mesh = reference_triangle();
        let s = build_sym_lagrange(&mesh, 1).unwrap();
        let v = crate::spaces::build_disc_vector(&mesh, 0).unwrap();
        let b = assemble_b(&s, &v, &mesh).unwrap();
        // τ = λ_0 δ, v = (1, 0) → |K| (∇λ_0)_1 = −1/2; the orthonormal P0
        // function is 1/√|K|, so scale by √|K|
        let mut tau = vec![0.0; s.total_dofs()];
        tau[0] = 1.0;
        tau[1] = 1.0;
        let bt = b.matrix.matvec(&tau);
        let got = bt[0] * 0.5f64.sqrt();
        assert!((got + 0.5).abs() < 1e-14, "{got}");
        // constant tensors have no divergence
        let mut c = vec![0.0; s.total_dofs()];
        for node in 0..3 {
            c[node * 3 + 2] = 1.0;
        }
        assert!(b.matrix.matvec(&c).iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn divdiv_of_edge_tensor_field() {
        let mesh = reference_triangle();
        let bub = build_bubble_space(&mesh, 2).unwrap();
        let d = assemble_divdiv(&bub, &mesh).unwrap();
        let geom = mesh.element_geometry(0).unwrap();
        // oracle: quadrature of |div τ|² with τ = λ_0 λ_1 T_01
        let rule = quadrature_rule(2, 4).unwrap();
        let want = integrate_element(
            |x| {
                let lam = geom.barycentric(x);
                bub.eval_div(&geom, 0, &lam).norm_squared()
            },
            &geom,
            &rule,
        );
        assert!((d.matrix.get(0, 0) - want).abs() < 1e-13);
        // τ = λ_0 T_01 = λ_0 e_1 e_1ᵀ on the reference triangle: |K| ‖T_01 ∇λ_0‖² = 1/2
        let lag = build_sym_lagrange(&mesh, 1).unwrap();
        let dl = assemble_divdiv(&lag, &mesh).unwrap();
        let t = geom.edge_tensor(0, 1) * geom.grad_lambda[0];
        assert!((dl.matrix.get(0, 0) - geom.volume * t.norm_squared()).abs() < 1e-15);
        assert!((dl.matrix.get(0, 0) - 0.5).abs() < 1e-15);
        // constant tensors contribute nothing
        let mut c = vec![0.0; lag.total_dofs()];
        for node in 0..3 {
            c[node * 3 + 2] = 1.0;
        }
        assert!(dl.matrix.bilinear(&c, &c).abs() < 1e-15);
    }

    #[test]
    fn bubbles_are_orthogonal_to_rigid_motions() {
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 1.0).unwrap();
        for k in 2..=3 {
            let bub = build_bubble_space(&mesh, k).unwrap();
            let geom = mesh.element_geometry(3).unwrap();
            let rule = quadrature_rule(2, 2 * k as usize).unwrap();
            for rm in rigid_motion_basis(&geom).members() {
                for l in 0..bub.n_local() {
                    let v = integrate_element(
                        |x| bub.eval_div(&geom, l, &geom.barycentric(x)).dot(&rm.eval(x)),
                        &geom,
                        &rule,
                    );
                    assert!(v.abs() < 1e-13, "{v}");
                }
            }
        }
    }

    #[test]
    fn c_examples() {
        // unit square split into two triangles, v ≡ e_1 as a P0 field
        let mesh = generate_uniform_mesh(&BoxDomain::unit_square(), 2, 1.0).unwrap();
        let v = crate::spaces::build_disc_vector(&mesh, 0).unwrap();
        let mut x = vec![0.0; v.total_dofs()];
        for e in 0..mesh.n_elements() {
            x[e * 2] = mesh.element_geometry(e).unwrap().volume.sqrt();
        }
        let c = assemble_c(&v, &mesh).unwrap();
        let got = c.matrix.bilinear(&x, &x);
        // boundary faces: h_F |F| ½ (1 + (e_1·ν)²); two faces with ν = ±e_1 and two with ν = ±e_2
        let want = 2.0 * 0.5 * 2.0 + 2.0 * 0.5 * 1.0;
        assert!((got - want).abs() < 1e-13, "{got}");
        assert!((jump_energy(&v, &mesh, &x).unwrap() - want).abs() < 1e-13);
        assert!(c.relative_asymmetry() < 1e-14);

        // no nonzero P0 field has zero jumps on a 2×2 grid
        let m2 = generate_uniform_mesh(&BoxDomain::square(), 2, 1.0).unwrap();
        let v2 = crate::spaces::build_disc_vector(&m2, 0).unwrap();
        let c2 = assemble_c(&v2, &m2).unwrap();
        let dense = DMatrix::from_fn(c2.nrows(), c2.ncols(), |i, j| c2.matrix.get(i, j));
        let eig = dense.symmetric_eigenvalues();
        assert!(eig.min() > 1e-8);
    }

    #[test]
    fn continuous_fields_have_no_jumps() {
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 0.5).unwrap();
        let w = build_cont_vector_dirichlet(&mesh, 2).unwrap();
        let g = |x: &Point| Vec3::new((1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]), x[0] * (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]), 0.0);
        let coeffs = interpolate_vector(&g, &w).unwrap();
        assert!(jump_energy(&w, &mesh, &coeffs).unwrap() <= 1e-20);
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        for method in [Method::StabDiv, Method::BubbleCont, Method::HoodTaylor] {
            let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 0.5).unwrap();
            let p = crate::problems::zero_problem(2);
            let d = build_system(method, 1, &mesh, &p.material, &p, AssemblyOptions::default()).unwrap();
            assert!(d.system.rhs.iter().all(|v| *v == 0.0));
            let (x, stats) = crate::solver::solve(&d.system).unwrap();
            assert!(x.iter().all(|v| *v == 0.0));
            assert!(stats.residual <= 1e-10);
        }
    }

    #[test]
    fn stab_div_one_unknown_count() {
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 0.5).unwrap();
        let p = crate::problems::problem_2d();
        let d = build_system(Method::StabDiv, 1, &mesh, &p.material, &p, AssemblyOptions::default()).unwrap();
        assert_eq!(d.system.dim(), 3 * mesh.n_vertices() + 2 * mesh.n_elements());
    }

    #[test]
    fn condensation_matches_full_solve() {
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 0.5).unwrap();
        let p = crate::problems::problem_2d();
        for (method, k) in [(Method::StabDiv, 2), (Method::BubbleCont, 1), (Method::HoodTaylor, 1)] {
            let full = build_system(method, k, &mesh, &p.material, &p, AssemblyOptions { condense: false, ..Default::default() }).unwrap();
            let red = build_system(method, k, &mesh, &p.material, &p, AssemblyOptions::default()).unwrap();
            assert!(red.is_condensed() && red.system.dim() < full.system.dim());
            let (xf, _) = crate::solver::solve(&full.system).unwrap();
            let (xr, _) = crate::solver::solve(&red.system).unwrap();
            let (sf, uf) = full.expand(&xf);
            let (sr, ur) = red.expand(&xr);
            let diff = sf.iter().zip(&sr).chain(uf.iter().zip(&ur)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = sf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff <= 1e-9 * scale, "{method:?}: {diff:e}");
        }
    }

    #[test]
    fn div_load_matches_divdiv_of_exact_stress() {
        // −∫ f·div τ = ∫ div σ · div τ since f = −div σ
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 0.5).unwrap();
        let p = crate::problems::problem_2d();
        let s = crate::spaces::build_stress_space(&mesh, 1, StressVariant::StarK).unwrap();
        let g = assemble_load_div(|x| p.f(x), &s, &mesh, 8).unwrap();
        let h = assemble_load_div(|x| -p.div_sigma(x), &s, &mesh, 8).unwrap();
        for (a, b) in g.iter().zip(&h) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
        assert!(assemble_load_div(|_| Vec3::zeros(), &s, &mesh, 4).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_load_on_p0() {
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 1.0).unwrap();
        let v = crate::spaces::build_disc_vector(&mesh, 0).unwrap();
        let f = assemble_load(|_| Vec3::new(2.0, -1.0, 0.0), &v, &mesh, 0).unwrap();
        // orthonormal P0 basis 1/√|K|: entry f_d |K| / √|K|
        let s = 0.5f64.sqrt();
        for e in 0..mesh.n_elements() {
            assert!((f[2 * e] - 2.0 * s).abs() < 1e-14 && (f[2 * e + 1] + s).abs() < 1e-14);
        }
    }

    #[test]
    fn method_validation() {
        assert!(Method::StabDiv.validate(3, 2).is_err());
        assert!(Method::BubbleCont.validate(0, 3).is_err());
        assert!(Method::HoodTaylor.validate(2, 3).is_ok());
        assert!(matches!(Method::HoodTaylor.validate(3, 3), Err(Error::Capability(_))));
        assert_eq!(Method::parse("hood_taylor").unwrap(), Method::HoodTaylor);
        assert!(Method::parse("nope").is_err());
    }
}
