//! Error norms and convergence studies.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::forms::{build_system, jump_energy, AssemblyOptions, Material, Method};
use crate::mesh::{generate_uniform_mesh, Mesh};
use crate::polyquad::{collapsed_rule, QuadratureRule};
use crate::problems::{problem_2d_with, problem_3d_with, ManufacturedProblem};
use crate::solver::{solve, SolveStats};
use crate::spaces::{FeSpace, NO_DOF};
use crate::tensor::{ddot, Mat3, Vec3};

/// Quadrature degree used for error integrals: twice the larger of the
/// exact-solution degree and the discrete degree, so `|u − u_h|²` is exact.
pub fn error_degree(problem: &ManufacturedProblem, space_degree: u32) -> usize {
    2 * problem.displacement_degree().max(space_degree as usize)
}

/// `√(a(e, e) + ‖div e‖₀²)` with `e = σ − σ_h`, evaluated pointwise.
pub fn error_hdiv_a(
    stress: &FeSpace,
    sigma_h: &[f64],
    mesh: &Mesh,
    problem: &ManufacturedProblem,
    material: &Material,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_len(stress, sigma_h)?;
    let table = stress.tabulate(rule);
    let w = rule.normalized_weights();
    let dim = mesh.dim();
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let dofs = stress.element_dofs(e);
        let active: Vec<(usize, f64, Mat3)> = dofs
            .iter()
            .enumerate()
            .filter(|(_, &d)| d != NO_DOF && sigma_h[d] != 0.0)
            .map(|(l, &d)| (l, sigma_h[d], stress.tensor_factor(&geom, l)))
            .collect();
        let mut local = 0.0;
        for (q, lam) in rule.points.iter().enumerate() {
            let x = geom.point(lam);
            let mut s = problem.sigma(&x);
            let mut d = problem.div_sigma(&x);
            for (l, c, t) in &active {
                let b = stress.local()[*l].scalar;
                let mut grad = Vec3::zeros();
                for i in 0..=dim {
                    grad += geom.grad_lambda[i] * table.grad(b, i, q);
                }
                s -= t * (c * table.value(b, q));
                d -= t * grad * *c;
            }
            local += w[q] * (ddot(&material.compliance(&s), &s) + d.norm_squared());
        }
        total += local * geom.volume;
    }
    Ok(total.max(0.0).sqrt())
}

/// `‖u − u_h‖₀`.
pub fn error_l2_u(disp: &FeSpace, u_h: &[f64], mesh: &Mesh, problem: &ManufacturedProblem, rule: &QuadratureRule) -> Result<f64> {
    check_len(disp, u_h)?;
    let table = disp.tabulate(rule);
    let w = rule.normalized_weights();
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e)?;
        let active: Vec<(usize, f64, Vec3)> = disp
            .element_dofs(e)
            .iter()
            .enumerate()
            .filter(|(_, &d)| d != NO_DOF && u_h[d] != 0.0)
            .map(|(l, &d)| (disp.local()[l].scalar, u_h[d], disp.vector_factor(&geom, l)))
            .collect();
        let mut local = 0.0;
        for (q, lam) in rule.points.iter().enumerate() {
            let mut v = problem.u(&geom.point(lam));
            for (b, c, f) in &active {
                v -= f * (c * table.value(*b, q));
            }
            local += w[q] * v.norm_squared();
        }
        total += local * geom.volume;
    }
    Ok(total.sqrt())
}

/// `‖v‖_c = c(v, v)^{1/2}`.
pub fn jump_seminorm(disp: &FeSpace, mesh: &Mesh, coeffs: &[f64]) -> Result<f64> {
    check_len(disp, coeffs)?;
    Ok(jump_energy(disp, mesh, coeffs)?.max(0.0).sqrt())
}

fn check_len(space: &FeSpace, coeffs: &[f64]) -> Result<()> {
    if coeffs.len() != space.total_dofs() {
        return Err(Error::InvalidInput(format!(
            "coefficient vector has length {} but the space has {} unknowns",
            coeffs.len(),
            space.total_dofs()
        )));
    }
    Ok(())
}

/// One refinement level of a study.
#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub level: i32,
    pub h: f64,
    pub e_sigma: f64,
    pub order_sigma: Option<f64>,
    /// `‖u_h‖_c`, reported for the jump-stabilized method only.
    pub e_u_c: Option<f64>,
    pub order_u_c: Option<f64>,
    pub e_u_l2: f64,
    pub order_u_l2: Option<f64>,
    pub n_unknowns: usize,
    pub solve: SolveStats,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub method: Method,
    pub k: u32,
    pub dim: usize,
    pub material: Material,
    /// Sorted by decreasing `h`.
    pub rows: Vec<ConvergenceRow>,
}

/// `log₂(e_{2h}/e_h)` generalised to arbitrary mesh ratios.
pub fn estimated_order(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> f64 {
    (e_coarse / e_fine).ln() / (h_coarse / h_fine).ln()
}

pub const CSV_HEADER: &str = "h,e_sigma,order_sigma,e_u_c,order_u_c,e_u_l2,order_u_l2";

impl ConvergenceReport {
    fn from_rows(method: Method, k: u32, dim: usize, material: Material, mut rows: Vec<ConvergenceRow>) -> Self {
        rows.sort_by(|a, b| b.h.total_cmp(&a.h));
        for i in 1..rows.len() {
            let (hc, hf) = (rows[i - 1].h, rows[i].h);
            rows[i].order_sigma = Some(estimated_order(rows[i - 1].e_sigma, rows[i].e_sigma, hc, hf));
            rows[i].order_u_l2 = Some(estimated_order(rows[i - 1].e_u_l2, rows[i].e_u_l2, hc, hf));
            rows[i].order_u_c = match (rows[i - 1].e_u_c, rows[i].e_u_c) {
                (Some(a), Some(b)) => Some(estimated_order(a, b, hc, hf)),
                _ => None,
            };
        }
        ConvergenceReport {
            method,
            k,
            dim,
            material,
            rows,
        }
    }

    pub fn finest(&self) -> Option<&ConvergenceRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:e},{:e},{},{},{},{:e},{}",
                r.h,
                r.e_sigma,
                opt(r.order_sigma),
                opt(r.e_u_c),
                opt(r.order_u_c),
                r.e_u_l2,
                opt(r.order_u_l2)
            );
        }
        out
    }

    /// Table with the layout of the published error tables.
    pub fn to_markdown(&self) -> String {
        let jump = self.rows.iter().any(|r| r.e_u_c.is_some());
        let mut out = format!(
            "{} k={} ({}D, λ={}, μ={})\n\n| h | ‖σ−σ_h‖_H(div,A) | order |",
            self.method.name(),
            self.k,
            self.dim,
            self.material.lambda,
            self.material.mu
        );
        if jump {
            out.push_str(" ‖u_h‖_c | order |");
        }
        out.push_str(" ‖u−u_h‖_0 | order |\n|---|---|---|");
        if jump {
            out.push_str("---|---|");
        }
        out.push_str("---|---|\n");
        let ord = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            let h = if r.level == 0 { "1".to_string() } else { format!("2^{}", -r.level) };
            let _ = write!(out, "| {h} | {} | {} |", sci(r.e_sigma), ord(r.order_sigma));
            if jump {
                let e = r.e_u_c.map(sci).unwrap_or_else(|| "-".into());
                let _ = write!(out, " {} | {} |", e, ord(r.order_u_c));
            }
            let _ = writeln!(out, " {} | {} |", sci(r.e_u_l2), ord(r.order_u_l2));
        }
        out
    }
}

/// `5.7982E+00` style.
pub fn sci(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.4E}");
    }
    let s = format!("{x:.4E}");
    let (mant, exp) = s.split_once('E').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mant}E{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub method: Method,
    pub k: u32,
    pub dim: usize,
    /// Levels `ℓ`, mesh size `h = 2^{−ℓ}`.
    pub levels: Vec<i32>,
    pub material: Material,
    pub assembly: AssemblyOptions,
    /// Number of levels solved concurrently.
    pub threads: usize,
}

impl StudyConfig {
    pub fn new(method: Method, k: u32, dim: usize, levels: std::ops::RangeInclusive<i32>) -> Self {
        StudyConfig {
            method,
            k,
            dim,
            levels: levels.collect(),
            material: Material::paper_default(dim),
            assembly: AssemblyOptions::default(),
            threads: 1,
        }
    }

    pub fn problem(&self) -> ManufacturedProblem {
        if self.dim == 2 {
            problem_2d_with(self.material)
        } else {
            problem_3d_with(self.material)
        }
    }
}

/// Solves and measures one level.
pub fn run_level(config: &StudyConfig, problem: &ManufacturedProblem, level: i32) -> Result<ConvergenceRow> {
    let start = Instant::now();
    let h = 2f64.powi(-level);
    let mesh = generate_uniform_mesh(&problem.domain, config.dim, h)?;
    let disc = build_system(config.method, config.k, &mesh, &config.material, problem, config.assembly)?;
    let (x, stats) = solve(&disc.system)?;
    let (sigma, u) = disc.expand(&x);
    let degree = error_degree(problem, disc.stress.degree().max(disc.displacement.degree()));
    let rule = collapsed_rule(config.dim, degree)?;
    let e_sigma = error_hdiv_a(&disc.stress, &sigma, &mesh, problem, &config.material, &rule)?;
    let e_u_l2 = error_l2_u(&disc.displacement, &u, &mesh, problem, &rule)?;
    let e_u_c = if config.method.has_jump_term() {
        Some(jump_seminorm(&disc.displacement, &mesh, &u)?)
    } else {
        None
    };
    Ok(ConvergenceRow {
        level,
        h,
        e_sigma,
        order_sigma: None,
        e_u_c,
        order_u_c: None,
        e_u_l2,
        order_u_l2: None,
        n_unknowns: disc.system.dim(),
        solve: stats,
        elapsed: start.elapsed(),
    })
}

/// Runs all levels of a study; levels are distributed over `config.threads`
/// workers and the report is ordered by `h` regardless of scheduling.
pub fn run_convergence_study(config: &StudyConfig) -> Result<ConvergenceReport> {
    config.method.validate(config.k, config.dim)?;
    if config.material.dim != config.dim {
        return Err(Error::InvalidInput("material dimension does not match the study".into()));
    }
    if config.levels.is_empty() {
        return Err(Error::InvalidInput("a study needs at least one level".into()));
    }
    let problem = config.problem();
    let threads = config.threads.clamp(1, config.levels.len());
    let results: Vec<Result<ConvergenceRow>> = if threads == 1 {
        config.levels.iter().map(|&l| run_level(config, &problem, l)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<ConvergenceRow>>>> =
            Mutex::new((0..config.levels.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= config.levels.len() {
                        break;
                    }
                    let r = run_level(config, &problem, config.levels[i]);
                    slots.lock().expect("no worker panicked")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("no worker panicked")
            .into_iter()
            .map(|r| r.expect("every level was run"))
            .collect()
    };
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport::from_rows(config.method, config.k, config.dim, config.material, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoxDomain;
    use crate::problems::zero_problem;
    use crate::spaces::{build_disc_vector, build_stress_space, StressVariant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scientific_format() {
        assert_eq!(sci(5.7982), "5.7982E+00");
        assert_eq!(sci(0.0034746), "3.4746E-03");
        assert_eq!(sci(123456.0), "1.2346E+05");
    }

    #[test]
    fn orders_of_power_laws() {
        assert!((estimated_order(1.0, 0.25, 0.5, 0.25) - 2.0).abs() < 1e-14);
        assert!((estimated_order(3.0, 1.0, 0.3, 0.1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn norms_are_homogeneous() {
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 0.5).unwrap();
        let zero = zero_problem(2);
        let material = Material::paper_default(2);
        let stress = build_stress_space(&mesh, 2, StressVariant::SumK).unwrap();
        let disp = build_disc_vector(&mesh, 1).unwrap();
        let rule = collapsed_rule(2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..stress.total_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..disp.total_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = [
            error_hdiv_a(&stress, &s, &mesh, &zero, &material, &rule).unwrap(),
            error_l2_u(&disp, &u, &mesh, &zero, &rule).unwrap(),
            jump_seminorm(&disp, &mesh, &u).unwrap(),
        ];
        assert!(base.iter().all(|&b| b > 0.0));
        for f in [-3.0, 0.5, 2.0] {
            let ss: Vec<f64> = s.iter().map(|v| v * f).collect();
            let us: Vec<f64> = u.iter().map(|v| v * f).collect();
            let scaled = [
                error_hdiv_a(&stress, &ss, &mesh, &zero, &material, &rule).unwrap(),
                error_l2_u(&disp, &us, &mesh, &zero, &rule).unwrap(),
                jump_seminorm(&disp, &mesh, &us).unwrap(),
            ];
            for (a, b) in scaled.iter().zip(&base) {
                assert!((a - f64::abs(f) * b).abs() <= 1e-12 * b);
            }
        }
        let zs = vec![0.0; stress.total_dofs()];
        assert_eq!(error_hdiv_a(&stress, &zs, &mesh, &zero, &material, &rule).unwrap(), 0.0);
    }

    #[test]
    fn l2_error_of_a_constant_field() {
        // ‖(1, 0)‖₀ on (−1, 1)² is 2
        let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 1.0).unwrap();
        let disp = build_disc_vector(&mesh, 0).unwrap();
        let mut u = vec![0.0; disp.total_dofs()];
        for e in 0..mesh.n_elements() {
            u[2 * e] = mesh.element_geometry(e).unwrap().volume.sqrt();
        }
        let rule = collapsed_rule(2, 2).unwrap();
        let e = error_l2_u(&disp, &u, &mesh, &zero_problem(2), &rule).unwrap();
        assert!((e - 2.0).abs() < 1e-14);
    }

    #[test]
    fn small_study_converges_and_reports() {
        let config = StudyConfig::new(Method::StabDiv, 1, 2, 1..=3);
        let report = run_convergence_study(&config).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows.windows(2).all(|w| w[0].h > w[1].h));
        assert!(report.rows[0].order_sigma.is_none());
        for r in &report.rows[1..] {
            assert!(r.order_sigma.unwrap() > 0.5, "{r:?}");
            assert!(r.e_u_c.is_some() && r.order_u_c.is_some());
        }
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 7);
        assert_eq!(first[2], "");
        assert!(report.to_markdown().contains("| 2^-3 |"));

        let mut parallel = config.clone();
        parallel.threads = 2;
        assert_eq!(run_convergence_study(&parallel).unwrap().to_csv(), csv);
    }

    #[test]
    fn methods_without_jumps_leave_the_column_empty() {
        let config = StudyConfig::new(Method::HoodTaylor, 1, 2, 0..=1);
        let report = run_convergence_study(&config).unwrap();
        let csv = report.to_csv();
        let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
        assert_eq!((row[3], row[4]), ("", ""));
        assert!(!row[2].is_empty());
    }
}
