//! Manufactured solutions with homogeneous Dirichlet data.
//!
//! Displacements are sums of separable polynomial terms, so the stress and
//! its divergence follow exactly from first and second derivatives of the
//! one-dimensional factors.

use crate::forms::Material;
use crate::mesh::{BoxDomain, Point};
use crate::tensor::{Mat3, Vec3};

/// Polynomial in one variable, coefficients in ascending order.
#[derive(Clone, Debug, PartialEq)]
struct Poly1(Vec<f64>);

impl Poly1 {
    fn eval(&self, s: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }

    fn derivative(&self) -> Poly1 {
        Poly1(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * i as f64)
                .collect(),
        )
    }

    fn degree(&self) -> usize {
        self.0.iter().rposition(|c| *c != 0.0).unwrap_or(0)
    }
}

/// `coef · Π_d q_d(x_d)` with the first two derivatives of each factor cached.
#[derive(Clone, Debug)]
struct Term {
    coef: f64,
    factors: Vec<[Poly1; 3]>,
}

impl Term {
    fn new(coef: f64, factors: Vec<Poly1>) -> Self {
        let factors = factors
            .into_iter()
            .map(|q| {
                let d1 = q.derivative();
                let d2 = d1.derivative();
                [q, d1, d2]
            })
            .collect();
        Term { coef, factors }
    }

    /// Mixed derivative with `orders[d]` derivatives in direction `d`.
    fn eval(&self, x: &Point, orders: [usize; 3]) -> f64 {
        self.factors
            .iter()
            .enumerate()
            .map(|(d, q)| q[orders[d]].eval(x[d]))
            .product::<f64>()
            * self.coef
    }

    fn degree(&self) -> usize {
        self.factors.iter().map(|q| q[0].degree()).sum()
    }
}

type LoadFn = fn(&Point) -> Vec3;

/// Exact displacement, stress and load of a test problem.
#[derive(Clone, Debug)]
pub struct ManufacturedProblem {
    pub name: &'static str,
    pub dim: usize,
    pub domain: BoxDomain,
    pub material: Material,
    components: Vec<Vec<Term>>,
    printed_load: Option<LoadFn>,
}

fn g() -> Poly1 {
    // s (1 − s²)
    Poly1(vec![0.0, 1.0, 0.0, -1.0])
}

fn p() -> Poly1 {
    // (1 − s²)²
    Poly1(vec![1.0, 0.0, -2.0, 0.0, 1.0])
}

fn bump() -> Poly1 {
    // s (1 − s)
    Poly1(vec![0.0, 1.0, -1.0])
}

/// Load printed alongside the square problem for `λ = 0.3`, `μ = 0.35`.
pub fn printed_load_2d(x: &Point) -> Vec3 {
    let (x1, x2) = (x[0], x[1]);
    let r2 = x1 * x1 + x2 * x2;
    let q = x1 * x1 * x2 * x2;
    let f1 = -8.0
        * (x1 + x2)
        * ((3.0 * x1 * x2 - 2.0) * r2 + 5.0 * (x1 * x2 - 1.0).powi(2) - 2.0 * q);
    let f2 = -8.0
        * (x1 - x2)
        * ((3.0 * x1 * x2 + 2.0) * r2 - 5.0 * (x1 * x2 + 1.0).powi(2) + 2.0 * q);
    Vec3::new(f1, f2, 0.0)
}

/// Square problem on `(−1, 1)²` with the default material.
pub fn problem_2d() -> ManufacturedProblem {
    problem_2d_with(Material::paper_default(2))
}

/// Square problem with a custom material. The printed load is used only for
/// the material it was computed for; otherwise `f = −div σ` is evaluated.
pub fn problem_2d_with(material: Material) -> ManufacturedProblem {
    let a = 80.0 / 7.0;
    let one = Poly1(vec![1.0]);
    let components = vec![
        vec![
            Term::new(-a, vec![p(), g(), one.clone()]),
            Term::new(-4.0, vec![g(), p(), one.clone()]),
        ],
        vec![
            Term::new(a, vec![g(), p(), one.clone()]),
            Term::new(-4.0, vec![p(), g(), one]),
        ],
    ];
    let default = Material::paper_default(2);
    ManufacturedProblem {
        name: "square",
        dim: 2,
        domain: BoxDomain::square(),
        printed_load: (material.lambda == default.lambda && material.mu == default.mu)
            .then_some(printed_load_2d as LoadFn),
        material,
        components,
    }
}

/// Cube problem on `(0, 1)³` with the default material.
pub fn problem_3d() -> ManufacturedProblem {
    problem_3d_with(Material::paper_default(3))
}

pub fn problem_3d_with(material: Material) -> ManufacturedProblem {
    let components = [16.0, 32.0, 64.0]
        .iter()
        .map(|&c| vec![Term::new(c, vec![bump(), bump(), bump()])])
        .collect();
    ManufacturedProblem {
        name: "cube",
        dim: 3,
        domain: BoxDomain::unit_cube(),
        material,
        components,
        printed_load: None,
    }
}

/// `u ≡ 0`, `f ≡ 0` on the problem domain of the given dimension.
pub fn zero_problem(dim: usize) -> ManufacturedProblem {
    let (domain, name) = if dim == 2 {
        (BoxDomain::square(), "zero-square")
    } else {
        (BoxDomain::unit_cube(), "zero-cube")
    };
    ManufacturedProblem {
        name,
        dim,
        domain,
        material: Material::paper_default(dim),
        components: vec![Vec::new(); dim],
        printed_load: None,
    }
}

impl ManufacturedProblem {
    fn derivative(&self, i: usize, x: &Point, orders: [usize; 3]) -> f64 {
        self.components[i].iter().map(|t| t.eval(x, orders)).sum()
    }

    /// Total polynomial degree of the displacement.
    pub fn displacement_degree(&self) -> usize {
        self.components
            .iter()
            .flatten()
            .map(Term::degree)
            .max()
            .unwrap_or(0)
    }

    pub fn u(&self, x: &Point) -> Vec3 {
        let mut u = Vec3::zeros();
        for i in 0..self.dim {
            u[i] = self.derivative(i, x, [0; 3]);
        }
        u
    }

    /// `∇u` with entries `∂u_i/∂x_j` at `(i, j)`.
    pub fn grad_u(&self, x: &Point) -> Mat3 {
        let mut g = Mat3::zeros();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut o = [0; 3];
                o[j] = 1;
                g[(i, j)] = self.derivative(i, x, o);
            }
        }
        g
    }

    pub fn strain(&self, x: &Point) -> Mat3 {
        let g = self.grad_u(x);
        (g + g.transpose()) * 0.5
    }

    /// `σ = 2μ ε(u) + λ tr ε(u) δ`.
    pub fn sigma(&self, x: &Point) -> Mat3 {
        self.material.stiffness(&self.strain(x))
    }

    /// `div σ = μ Δu + (λ + μ) ∇ div u`.
    pub fn div_sigma(&self, x: &Point) -> Vec3 {
        let (lambda, mu) = (self.material.lambda, self.material.mu);
        let second = |i: usize, a: usize, b: usize| {
            let mut o = [0; 3];
            o[a] += 1;
            o[b] += 1;
            self.derivative(i, x, o)
        };
        let mut out = Vec3::zeros();
        for i in 0..self.dim {
            let lap: f64 = (0..self.dim).map(|j| second(i, j, j)).sum();
            let grad_div: f64 = (0..self.dim).map(|j| second(j, i, j)).sum();
            out[i] = mu * lap + (lambda + mu) * grad_div;
        }
        out
    }

    /// Load `f`; the printed closed form when one is available.
    pub fn f(&self, x: &Point) -> Vec3 {
        match self.printed_load {
            Some(load) => load(x),
            None => -self.div_sigma(x),
        }
    }

    pub fn has_printed_load(&self) -> bool {
        self.printed_load.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, p: &ManufacturedProblem) -> Point {
        let mut x = [0.0; 3];
        for d in 0..p.dim {
            x[d] = rng.random_range(p.domain.lower[d]..p.domain.upper[d]);
        }
        x
    }

    /// Central differences of a vector field along direction `d`.
    fn fd<F: Fn(&Point) -> Vec3>(f: F, x: &Point, d: usize, step: f64) -> Vec3 {
        let (mut a, mut b) = (*x, *x);
        a[d] += step;
        b[d] -= step;
        (f(&a) - f(&b)) / (2.0 * step)
    }

    #[test]
    fn square_displacement_vanishes_on_boundary() {
        let p = problem_2d();
        for t in [-1.0, -0.3, 0.0, 0.55, 1.0] {
            for x in [[1.0, t, 0.0], [-1.0, t, 0.0], [t, 1.0, 0.0], [t, -1.0, 0.0]] {
                assert!(p.u(&x).norm() < 1e-14);
            }
        }
        assert_eq!(p.u(&[0.0; 3]), Vec3::zeros());
        assert_eq!(p.displacement_degree(), 7);
    }

    #[test]
    fn cube_values() {
        let p = problem_3d();
        // (1/4)³ · (16, 32, 64)
        let u = p.u(&[0.5, 0.5, 0.5]);
        assert!((u - Vec3::new(0.25, 0.5, 1.0)).norm() < 1e-14);
        for t in [0.0, 0.3, 1.0] {
            assert!(p.u(&[0.0, t, 0.7]).norm() < 1e-14);
            assert!(p.u(&[0.2, 1.0, t]).norm() < 1e-14);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_point(&mut rng, &p);
            let s = p.sigma(&x);
            assert!((s - s.transpose()).norm() == 0.0);
        }
    }

    #[test]
    fn printed_load_matches_divergence_of_stress() {
        let p = problem_2d();
        assert!(p.has_printed_load());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x = random_point(&mut rng, &p);
            let printed = printed_load_2d(&x);
            let derived = -p.div_sigma(&x);
            let scale = printed.norm().max(1.0);
            worst = worst.max((printed - derived).norm() / scale);
        }
        assert!(worst <= 1e-10, "{worst:e}");
    }

    #[test]
    fn finite_difference_oracle() {
        for p in [problem_2d(), problem_3d()] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mat = p.material;
            for _ in 0..50 {
                let x = random_point(&mut rng, &p);
                // σ from a finite-difference displacement gradient
                let mut g = Mat3::zeros();
                for d in 0..p.dim {
                    let col = fd(|y| p.u(y), &x, d, 1e-5);
                    for i in 0..p.dim {
                        g[(i, d)] = col[i];
                    }
                }
                let sigma_fd = mat.stiffness(&((g + g.transpose()) * 0.5));
                let s = p.sigma(&x);
                assert!((s - sigma_fd).norm() <= 1e-8 * s.norm().max(1.0));
                // div σ by differencing the closed-form stress
                let mut div = Vec3::zeros();
                for d in 0..p.dim {
                    let col = fd(
                        |y| {
                            let s = p.sigma(y);
                            Vec3::new(s[(0, d)], s[(1, d)], s[(2, d)])
                        },
                        &x,
                        d,
                        1e-5,
                    );
                    div += col;
                }
                let exact = p.div_sigma(&x);
                assert!((exact - div).norm() <= 1e-8 * exact.norm().max(1.0));
                assert!((p.f(&x) + exact).norm() <= 1e-10 * exact.norm().max(1.0));
            }
        }
    }

    #[test]
    fn custom_material_uses_derived_load() {
        let m = Material::new(1.0, 2.0, 2).unwrap();
        let p = problem_2d_with(m);
        assert!(!p.has_printed_load());
        let x = [0.3, -0.2, 0.0];
        assert_eq!(p.f(&x), -p.div_sigma(&x));
    }

    #[test]
    fn zero_problem_is_zero() {
        let p = zero_problem(3);
        let x = [0.1, 0.2, 0.3];
        assert_eq!(p.u(&x), Vec3::zeros());
        assert_eq!(p.f(&x), Vec3::zeros());
        assert_eq!(p.sigma(&x), Mat3::zeros());
    }
}
