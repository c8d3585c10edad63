//! End-to-end runs on coarse meshes against the published first rows.

use mixfem::analysis::{run_convergence_study, StudyConfig};
use mixfem::forms::{build_system, AssemblyOptions, Material, Method};
use mixfem::mesh::{generate_uniform_mesh, BoxDomain};
use mixfem::problems::{problem_2d, problem_3d};
use mixfem::solver::solve;
use mixfem::Error;

fn close(got: f64, want: f64) -> bool {
    // published entries carry five significant digits
    (got - want).abs() <= 6e-5 * want
}

#[test]
fn coarse_rows_match_published_tables() {
    // (method, k, levels, first-row σ error, first-row u error)
    let cases = [
        (Method::StabDiv, 1, 1..=2, 1.9436E+01, 2.8981E+00),
        (Method::StabDiv, 2, 0..=1, 1.1868E+01, 2.4374E+00),
        (Method::BubbleCont, 1, 1..=2, 1.3570E+01, 5.9057E+00),
        (Method::HoodTaylor, 1, 0..=1, 1.0966E+01, 6.0260E+00),
    ];
    for (method, k, levels, s, u) in cases {
        let report = run_convergence_study(&StudyConfig::new(method, k, 2, levels)).unwrap();
        let r = &report.rows[0];
        assert!(close(r.e_sigma, s), "{} σ {} vs {s}", method.name(), r.e_sigma);
        assert!(close(r.e_u_l2, u), "{} u {} vs {u}", method.name(), r.e_u_l2);
    }
}

#[test]
fn coarse_3d_row_matches_published_table() {
    let report = run_convergence_study(&StudyConfig::new(Method::StabDiv, 1, 3, 1..=1)).unwrap();
    let r = &report.rows[0];
    assert!(close(r.e_sigma, 4.1723E+00), "{}", r.e_sigma);
    assert!(close(r.e_u_c.unwrap(), 4.0747E-01), "{:?}", r.e_u_c);
    assert!(close(r.e_u_l2, 2.4720E-01), "{}", r.e_u_l2);
}

#[test]
fn condensed_and_full_systems_agree() {
    let mesh = generate_uniform_mesh(&BoxDomain::unit_cube(), 3, 0.5).unwrap();
    let material = Material::paper_default(3);
    let problem = problem_3d();
    for (method, k) in [(Method::StabDiv, 2), (Method::BubbleCont, 1), (Method::HoodTaylor, 1)] {
        let mut solutions = Vec::new();
        for condense in [true, false] {
            let options = AssemblyOptions {
                condense,
                ..Default::default()
            };
            let disc = build_system(method, k, &mesh, &material, &problem, options).unwrap();
            assert_eq!(disc.is_condensed(), condense);
            let (x, stats) = solve(&disc.system).unwrap();
            assert!(stats.residual <= 1e-10);
            solutions.push(disc.expand(&x));
        }
        let scale = solutions[1].0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in solutions[0].0.iter().zip(&solutions[1].0) {
            assert!((a - b).abs() <= 1e-8 * scale, "{}: {a} vs {b}", method.name());
        }
    }
}

#[test]
fn unsupported_configurations_are_reported() {
    let mesh = generate_uniform_mesh(&BoxDomain::square(), 2, 1.0).unwrap();
    let material = Material::paper_default(2);
    let problem = problem_2d();
    let opts = AssemblyOptions::default();
    assert!(matches!(
        build_system(Method::StabDiv, 3, &mesh, &material, &problem, opts),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        build_system(Method::HoodTaylor, 3, &mesh, &material, &problem, opts),
        Err(Error::Capability(_))
    ));
    let wrong = Material::paper_default(3);
    assert!(build_system(Method::StabDiv, 1, &mesh, &wrong, &problem, opts).is_err());
}

#[test]
fn material_parameters_change_the_solution() {
    let base = StudyConfig::new(Method::StabDiv, 1, 2, 1..=1);
    let mut stiff = base.clone();
    stiff.material = Material::new(3.0, 1.0, 2).unwrap();
    let a = run_convergence_study(&base).unwrap().rows[0].e_u_l2;
    let b = run_convergence_study(&stiff).unwrap().rows[0].e_u_l2;
    assert!((a - b).abs() > 1e-3 * a);
}
