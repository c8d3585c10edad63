//! Structural property checks run before any convergence study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::forms::{build_system, jump_energy, AssemblyOptions, Material, Method};
use crate::mesh::{generate_uniform_mesh, BoxDomain, Mesh, Point};
use crate::polyquad::{homogeneous_indices, quadrature_rule, BarycentricPoly};
use crate::problems::{problem_2d, zero_problem, ManufacturedProblem};
use crate::solver::{residual, solve, BlockSystem};
use crate::spaces::{
    bubble_boundedness_constant, bubble_interpolate, build_bubble_space, build_cont_vector_dirichlet,
    check_div_bubble_identity, check_dof_unisolvence, interpolate_vector, max_bubble_normal_trace,
};
use crate::tensor::{ddot, sym_basis, Mat3, Vec3};

#[derive(Clone, Debug)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl PropertyCheck {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        PropertyCheck {
            name: name.into(),
            passed,
            detail,
        }
    }
}

pub const DIV_IDENTITY_TOLERANCE: f64 = 1e-10;
pub const NORMAL_TRACE_TOLERANCE: f64 = 1e-10;
pub const MOMENT_TOLERANCE: f64 = 1e-12;
/// Allowed spread `(max − min) / min` of the boundedness constant.
pub const BOUNDEDNESS_VARIATION: f64 = 0.2;
pub const JUMP_TOLERANCE: f64 = 1e-20;
pub const LOAD_TOLERANCE: f64 = 1e-10;

fn square_mesh(h: f64) -> Result<Mesh> {
    generate_uniform_mesh(&BoxDomain::square(), 2, h)
}

fn cube_mesh(h: f64) -> Result<Mesh> {
    generate_uniform_mesh(&BoxDomain::unit_cube(), 3, h)
}

/// The two meshes on which the element-wise identities are checked.
fn identity_meshes() -> Result<Vec<Mesh>> {
    Ok(vec![square_mesh(0.25)?, cube_mesh(0.5)?])
}

pub fn check_unisolvence(seed: u64) -> Result<Vec<PropertyCheck>> {
    let mut out = Vec::new();
    for n in [2, 3] {
        for k in 1..=3 {
            let r = check_dof_unisolvence(n, k, seed)?;
            out.push(PropertyCheck::new(
                format!("unisolvence n={n} k={k}"),
                r.passed(),
                format!(
                    "{} functionals, dim {}, {} simplices, min rcond {:.3e}",
                    r.functionals, r.dimension, r.simplices, r.min_reciprocal_condition
                ),
            ));
        }
    }
    Ok(out)
}

pub fn check_div_identity() -> Result<Vec<PropertyCheck>> {
    let mut out = Vec::new();
    for mesh in identity_meshes()? {
        for k in [2, 3] {
            let mut worst: f64 = 0.0;
            let mut dims_ok = true;
            for e in 0..mesh.n_elements() {
                let r = check_div_bubble_identity(&mesh.element_geometry(e)?, k)?;
                dims_ok &= r.dim_div == r.dim_complement;
                worst = worst.max(r.residual_div_in_complement).max(r.residual_complement_in_div);
            }
            out.push(PropertyCheck::new(
                format!("div B = R^⊥ {}D k={k}", mesh.dim()),
                dims_ok && worst < DIV_IDENTITY_TOLERANCE,
                format!("{} elements, worst residual {worst:.3e}", mesh.n_elements()),
            ));
        }
    }
    Ok(out)
}

pub fn check_normal_traces() -> Result<Vec<PropertyCheck>> {
    let mut out = Vec::new();
    for mesh in identity_meshes()? {
        for k in [2, 3] {
            let worst = max_bubble_normal_trace(&mesh, &build_bubble_space(&mesh, k)?)?;
            out.push(PropertyCheck::new(
                format!("bubble normal traces {}D k={k}", mesh.dim()),
                worst <= NORMAL_TRACE_TOLERANCE,
                format!("max |τν| {worst:.3e}"),
            ));
        }
    }
    Ok(out)
}

/// Largest mismatch of the `P_{k−2}(K; 𝕊)` moments of `τ` and of its bubble
/// interpolant, relative to the largest moment of `τ`. Moments are taken
/// against monomials with a symmetric rule independent of the interpolation.
pub fn bubble_moment_mismatch<F: Fn(&Point) -> Mat3>(tau: F, mesh: &Mesh, k: u32, coeffs: &[f64]) -> Result<f64> {
    let dim = mesh.dim();
    let space = build_bubble_space(mesh, k)?;
    let rule = quadrature_rule(dim, 2 * k as usize + 8)?;
    let w = rule.normalized_weights();
    let monomials: Vec<BarycentricPoly> = homogeneous_indices(dim, k - 2)
        .into_iter()
        .map(|a| BarycentricPoly::monomial(dim, a, 1.0))
        .collect();
    let tensors = sym_basis(dim);
    let (mut scale, mut worst) = (0.0f64, 0.0f64);
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let dofs = space.element_dofs(e);
        let n = monomials.len() * tensors.len();
        let (mut m_tau, mut m_int) = (vec![0.0; n], vec![0.0; n]);
        for (q, lam) in rule.points.iter().enumerate() {
            let t = tau(&geom.point(lam));
            let mut ib = Mat3::zeros();
            for (l, &d) in dofs.iter().enumerate() {
                ib += space.eval_tensor(&geom, l, lam) * coeffs[d];
            }
            for (a, p) in monomials.iter().enumerate() {
                let pw = w[q] * geom.volume * p.eval(lam);
                for (c, s) in tensors.iter().enumerate() {
                    m_tau[a * tensors.len() + c] += pw * ddot(&t, s);
                    m_int[a * tensors.len() + c] += pw * ddot(&ib, s);
                }
            }
        }
        for (a, b) in m_tau.iter().zip(&m_int) {
            scale = scale.max(a.abs());
            worst = worst.max((a - b).abs());
        }
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

pub fn check_bubble_interpolation() -> Result<Vec<PropertyCheck>> {
    let problem = problem_2d();
    let tau = |x: &Point| problem.sigma(x);
    let mut out = Vec::new();
    for k in [2, 3] {
        let mesh = square_mesh(0.25)?;
        let c = bubble_interpolate(tau, &mesh, k)?;
        let mismatch = bubble_moment_mismatch(tau, &mesh, k, &c)?;
        out.push(PropertyCheck::new(
            format!("I^b moment matching 2D k={k}"),
            mismatch <= MOMENT_TOLERANCE,
            format!("relative moment mismatch {mismatch:.3e}"),
        ));
    }
    for (dim, hs) in [(2, [0.5, 0.25, 0.125]), (3, [1.0, 0.5, 0.25])] {
        for k in [2, 3] {
            let mut constants = Vec::new();
            for h in hs {
                let mesh = if dim == 2 { square_mesh(h)? } else { cube_mesh(h)? };
                constants.push(bubble_boundedness_constant(&mesh, k)?);
            }
            let (lo, hi) = constants
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &c| (lo.min(c), hi.max(c)));
            let variation = (hi - lo) / lo;
            out.push(PropertyCheck::new(
                format!("I^b boundedness {dim}D k={k}"),
                variation < BOUNDEDNESS_VARIATION,
                format!("constants {constants:.4?}, variation {variation:.2e}"),
            ));
        }
    }
    Ok(out)
}

/// Smooth field that vanishes on the boundary of the given box.
fn boundary_vanishing_field(domain: BoxDomain, dim: usize) -> impl Fn(&Point) -> Vec3 {
    move |x: &Point| {
        let mut b = 1.0;
        for d in 0..dim {
            b *= (x[d] - domain.lower[d]) * (domain.upper[d] - x[d]);
        }
        let mut v = Vec3::zeros();
        for d in 0..dim {
            v[d] = b * (1.0 + x[(d + 1) % dim]).exp() * (d as f64 + 1.0);
        }
        v
    }
}

pub fn check_continuous_jumps() -> Result<Vec<PropertyCheck>> {
    let mut out = Vec::new();
    for (mesh, domain) in [(square_mesh(0.25)?, BoxDomain::square()), (cube_mesh(0.5)?, BoxDomain::unit_cube())] {
        let field = boundary_vanishing_field(domain, mesh.dim());
        for k in [1, 2] {
            let w = build_cont_vector_dirichlet(&mesh, k)?;
            let c = interpolate_vector(&field, &w)?;
            let energy = jump_energy(&w, &mesh, &c)?;
            out.push(PropertyCheck::new(
                format!("c(v,v) of continuous fields {}D k={k}", mesh.dim()),
                energy <= JUMP_TOLERANCE,
                format!("c(v,v) = {energy:.3e}"),
            ));
        }
    }
    Ok(out)
}

/// `f ≡ 0` must give the zero solution; a seeded random right-hand side on
/// the same matrix shows the zero is not an artefact of a singular system.
pub fn check_zero_load(seed: u64) -> Result<Vec<PropertyCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for dim in [2, 3] {
        let mesh = if dim == 2 { square_mesh(0.5)? } else { cube_mesh(0.5)? };
        let problem = zero_problem(dim);
        let material = Material::paper_default(dim);
        for method in [Method::StabDiv, Method::BubbleCont, Method::HoodTaylor] {
            let disc = build_system(method, 1, &mesh, &material, &problem, AssemblyOptions::default())?;
            let (x, stats) = solve(&disc.system)?;
            let zero = x.iter().all(|v| *v == 0.0);
            let rhs: Vec<f64> = (0..disc.system.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let probe = BlockSystem::new(disc.system.matrix.clone(), rhs, disc.system.n_sigma, disc.system.n_u)?;
            let (y, _) = solve(&probe)?;
            let res = residual(&probe, &y);
            out.push(PropertyCheck::new(
                format!("zero load {} {dim}D k=1", method.name()),
                zero && stats.residual <= LOAD_TOLERANCE && res <= LOAD_TOLERANCE,
                format!("max |x| = {:.1e}, random-load residual {res:.2e}", x.iter().fold(0.0f64, |m, v| m.max(v.abs()))),
            ));
        }
    }
    Ok(out)
}

/// Largest `|f(x) + div σ(x)| / |f(x)|` over random points; points where `f`
/// is below `1e−3 · max |f|` are measured against that floor instead.
pub fn printed_load_error(problem: &ManufacturedProblem, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Point> = (0..points)
        .map(|_| {
            let mut x = [0.0; 3];
            for d in 0..problem.dim {
                x[d] = rng.random_range(problem.domain.lower[d]..problem.domain.upper[d]);
            }
            x
        })
        .collect();
    let fmax = xs.iter().map(|x| problem.f(x).norm()).fold(0.0f64, f64::max);
    xs.iter()
        .map(|x| {
            let f = problem.f(x);
            (f + problem.div_sigma(x)).norm() / f.norm().max(1e-3 * fmax)
        })
        .fold(0.0, f64::max)
}

pub fn check_printed_load(seed: u64) -> Vec<PropertyCheck> {
    let err = printed_load_error(&problem_2d(), 1000, seed);
    vec![PropertyCheck::new(
        "printed 2D load = −div σ",
        err <= LOAD_TOLERANCE,
        format!("max relative difference {err:.3e} over 1000 points"),
    )]
}

/// Every check of the suite, in a fixed order.
pub fn property_suite(seed: u64) -> Result<Vec<PropertyCheck>> {
    let mut out = check_unisolvence(seed)?;
    out.extend(check_div_identity()?);
    out.extend(check_normal_traces()?);
    out.extend(check_bubble_interpolation()?);
    out.extend(check_continuous_jumps()?);
    out.extend(check_zero_load(seed)?);
    out.extend(check_printed_load(seed));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let checks = property_suite(7).unwrap();
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert!(checks.len() > 20);
    }

    #[test]
    fn moment_mismatch_detects_a_wrong_interpolant() {
        let mesh = square_mesh(0.5).unwrap();
        let p = problem_2d();
        let tau = |x: &Point| p.sigma(x);
        let mut c = bubble_interpolate(tau, &mesh, 2).unwrap();
        c[0] += 1e-3;
        assert!(bubble_moment_mismatch(tau, &mesh, 2, &c).unwrap() > 1e-8);
    }
}
