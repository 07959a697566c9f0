//! Randomized invariants on convex polygons and random data.

use std::f64::consts::PI;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector, Point2, SymmetricEigen, Vector2};
use proptest::prelude::*;

use hrvem::eigenstudy::{generalized_eig, study_element};
use hrvem::geometry::{hourglass_sequence, reference_triangle, subtriangulate, triangle_area, unit_square};
use hrvem::hrspace::{edge_gram, HrLocalSpace, Stabilization};
use hrvem::interp::{div_projection_error, interp_errors, interpolate, AnalyticStress, Displacement};
use hrvem::localsolver::{matrix_b, FemConfig, Gauge, LocalSolver};
use hrvem::polybasis::poly::VectorPoly;
use hrvem::polybasis::quadrature::{edge_quadrature, element_quadrature, triangle_quadrature};
use hrvem::{Material, Point, Polygon, SymTensor};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

/// Convex polygon inscribed in an ellipse, with a bounded ratio between
/// consecutive angular gaps.
fn convex_polygon() -> impl Strategy<Value = Polygon> {
    (3usize..=7)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(1.0f64..3.0, n),
                0.0f64..(2.0 * PI),
                0.5f64..2.0,
                0.6f64..1.0,
                (-3.0f64..3.0, -3.0f64..3.0),
            )
        })
        .prop_map(|(gaps, start, radius, aspect, (cx, cy))| {
            let total: f64 = gaps.iter().sum();
            let mut angle = start;
            let mut coords = Vec::with_capacity(gaps.len());
            for g in &gaps {
                coords.push((cx + radius * angle.cos(), cy + aspect * radius * angle.sin()));
                angle += 2.0 * PI * g / total;
            }
            Polygon::from_coords(&coords).unwrap()
        })
}

fn material() -> impl Strategy<Value = Material> {
    (0.0f64..1e3, 0.1f64..10.0).prop_map(|(l, m)| Material::new(l, m).unwrap())
}

fn sym_tensor() -> impl Strategy<Value = SymTensor> {
    (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b, c)| SymTensor::new(a, b, c))
}

fn edge_lengths(p: &Polygon) -> Vec<f64> {
    p.edges().iter().map(|e| e.length).collect()
}

fn eig_ratio(m: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    ev.min() / ev.max()
}

fn rel_spectrum_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// `int_T x^a y^b` through the divergence theorem with edge integrals
/// expanded in closed form.
fn exact_monomial_integral(t: &[Point; 3], a: usize, b: usize) -> f64 {
    let binom = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let mut total = 0.0;
    for i in 0..3 {
        let p0 = t[i];
        let p1 = t[(i + 1) % 3];
        let d = p1 - p0;
        // int_0^1 (x0 + s dx)^(a+1) (y0 + s dy)^b ds
        let mut line = 0.0;
        for i1 in 0..=a + 1 {
            for j1 in 0..=b {
                line += binom(a + 1, i1)
                    * binom(b, j1)
                    * p0.x.powi((a + 1 - i1) as i32)
                    * d.x.powi(i1 as i32)
                    * p0.y.powi((b - j1) as i32)
                    * d.y.powi(j1 as i32)
                    / (i1 + j1 + 1) as f64;
            }
        }
        // n_x ds = dy dt on a counterclockwise boundary
        total += line * d.y / (a + 1) as f64;
    }
    total
}

fn random_tp(space: &HrLocalSpace, coeffs: &[f64]) -> hrvem::polybasis::poly::TensorPoly {
    let members = &space.tensor_basis().basis.members;
    let mut tau = members[0].scale(0.0);
    for (m, c) in members.iter().zip(coeffs.iter().cycle()) {
        tau.axpy(*c, m);
    }
    tau
}

fn energy_d(space: &HrLocalSpace, tau: &hrvem::polybasis::poly::TensorPoly) -> f64 {
    let m = space.material();
    space.quadrature().integrate(|x| {
        let t = tau.eval(x);
        m.d_apply(t).ddot(t)
    })
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn rigid_motions_preserve_measures(poly in convex_polygon(), dx in -10.0f64..10.0, dy in -10.0f64..10.0, angle in 0.0f64..(2.0 * PI)) {
        for moved in [poly.translated(Vector2::new(dx, dy)), poly.rotated(angle)] {
            assert_relative_eq!(moved.area(), poly.area(), max_relative = 1e-12);
            assert_relative_eq!(moved.diameter(), poly.diameter(), max_relative = 1e-12);
            for (a, b) in edge_lengths(&moved).iter().zip(edge_lengths(&poly)) {
                assert_relative_eq!(*a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn scaling_multiplies_measures(poly in convex_polygon(), s in 0.01f64..100.0) {
        let scaled = poly.scaled(s);
        assert_relative_eq!(scaled.area(), s * s * poly.area(), max_relative = 1e-12);
        assert_relative_eq!(scaled.diameter(), s * poly.diameter(), max_relative = 1e-12);
        for (a, b) in edge_lengths(&scaled).iter().zip(edge_lengths(&poly)) {
            assert_relative_eq!(*a, s * b, max_relative = 1e-12);
        }
    }

    #[test]
    fn text_format_round_trips(poly in convex_polygon()) {
        let back = Polygon::parse(&poly.to_text()).unwrap();
        for (a, b) in back.vertices().iter().zip(poly.vertices()) {
            prop_assert!((a - b).norm() <= 1e-14 * (1.0 + b.coords.norm()));
        }
    }

    #[test]
    fn subtriangulation_partitions_area(poly in convex_polygon(), nref in 0usize..3) {
        let sub = subtriangulate(&poly, nref).unwrap();
        prop_assert_eq!(sub.triangles.len(), poly.num_edges() << (2 * nref));
        prop_assert!(sub.triangles.iter().all(|t| triangle_area(t) > 0.0));
        assert_relative_eq!(sub.total_area(), poly.area(), max_relative = 1e-12);
    }

    #[test]
    fn triangle_rule_is_exact(
        a in (-2.0f64..2.0, -2.0f64..2.0),
        u in (0.3f64..2.0, -1.0f64..1.0),
        v in (-1.0f64..1.0, 0.3f64..2.0),
        degree in 0usize..=14,
        pick in any::<prop::sample::Index>(),
    ) {
        let p0 = Point2::new(a.0, a.1);
        let tri = [p0, p0 + Vector2::new(u.0, u.1), p0 + Vector2::new(v.0, v.1)];
        prop_assume!(triangle_area(&tri) > 0.05);
        let rule = triangle_quadrature(&tri, degree).unwrap();
        assert_relative_eq!(rule.weights.iter().sum::<f64>(), triangle_area(&tri), max_relative = 1e-12);
        let exps: Vec<(usize, usize)> = (0..=degree).flat_map(|n| (0..=n).map(move |i| (n - i, i))).collect();
        let (ea, eb) = exps[pick.index(exps.len())];
        let got = rule.integrate(|x| x.x.powi(ea as i32) * x.y.powi(eb as i32));
        let scale = rule.integrate(|x| (x.x.powi(ea as i32) * x.y.powi(eb as i32)).abs());
        let want = exact_monomial_integral(&tri, ea, eb);
        prop_assert!((got - want).abs() <= 1e-12 * scale.max(1e-300), "x^{ea} y^{eb}: {got} vs {want}");
    }

    #[test]
    fn polygon_and_edge_weights(poly in convex_polygon(), degree in 0usize..=20) {
        let rule = element_quadrature(&poly, degree).unwrap();
        assert_relative_eq!(rule.weights.iter().sum::<f64>(), poly.area(), max_relative = 1e-12);
        for e in poly.edges() {
            let er = edge_quadrature(e, degree).unwrap();
            assert_relative_eq!(er.weights.iter().sum::<f64>(), e.length, max_relative = 1e-12);
            prop_assert_eq!(er.points.len(), (degree + 2) / 2);
        }
    }

    #[test]
    fn compliance_inverts_elasticity(m in material(), tau in sym_tensor()) {
        let back = m.d_apply(m.c_apply(tau));
        prop_assert!((back - tau).norm() <= 1e-12 * tau.norm().max(1.0));
        let lower = tau.dev().ddot(tau.dev()) / (2.0 * m.mu());
        prop_assert!(m.d_apply(tau).ddot(tau) >= lower - 1e-12 * tau.ddot(tau));
        let c = m.c_matrix();
        let d = m.d_matrix();
        prop_assert!((c * d - nalgebra::Matrix3::identity()).amax() < 1e-10);
        prop_assert!((c - c.transpose()).amax() == 0.0 && (d - d.transpose()).amax() == 0.0);
        prop_assert!(c.cholesky().is_some() && d.cholesky().is_some());
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn dofs_reconstruct_tp_members(
        poly in convex_polygon(),
        p in 1usize..=3,
        m in material(),
        coeffs in prop::collection::vec(-1.0f64..1.0, 1..8),
    ) {
        let space = HrLocalSpace::new(&poly, p, &m).unwrap();
        prop_assert_eq!(space.ndof(), poly.num_edges() * 2 * (p + 1) + (p + 1) * (p + 2) - 3);
        let tau = random_tp(&space, &coeffs);
        let dofs = space.dofs_of_polynomial(&tau).unwrap();
        let quad = space.quadrature();
        let scale = quad.points.iter().fold(0.0f64, |s, x| s.max(tau.eval(x).norm()));
        for (e, edge) in poly.edges().iter().enumerate() {
            let t = space.traction_from_dofs(&dofs, e).unwrap();
            for i in 0..=6 {
                let s = -1.0 + i as f64 / 3.0;
                let exact = tau.eval(&edge.point_at(s)).apply(edge.normal);
                prop_assert!((t.eval(s) - exact).norm() <= 1e-10 * scale);
            }
        }
        let div = space.div_from_dofs(&dofs).unwrap();
        let exact_div = tau.div();
        for x in &quad.points {
            prop_assert!((div.eval(x) - exact_div.eval(x)).norm() <= 1e-10 * scale / space.frame().h);
        }
        let back = space.project(&dofs).unwrap();
        for x in &quad.points {
            prop_assert!((back.eval(x) - tau.eval(x)).norm() <= 1e-10 * scale);
        }
        let field = interpolate(&space, &AnalyticStress::raw(
            { let t = tau.clone(); move |x: &Point| t.eval(x) },
            { let d = exact_div.clone(); move |x: &Point| d.eval(x) },
        ), 2 * p + 4).unwrap();
        prop_assert!((&field - &dofs).amax() <= 1e-10 * dofs.amax());
    }

    #[test]
    fn projector_is_idempotent(poly in convex_polygon(), p in 1usize..=3, m in material()) {
        let space = HrLocalSpace::new(&poly, p, &m).unwrap();
        let pi = space.pi_dof();
        prop_assert!((&pi * &pi - &pi).amax() <= 1e-10 * pi.amax());
    }

    #[test]
    fn stabilizations_are_spd_and_equivalent(poly in convex_polygon(), p in 1usize..=4, m in material()) {
        let space = HrLocalSpace::new(&poly, p, &m).unwrap();
        let s = space.stab_matrix(Stabilization::PROJECTION);
        let st = space.stab_matrix(Stabilization::Dofi);
        prop_assert!(eig_ratio(&s) > 0.0);
        prop_assert!(eig_ratio(&st) > 0.0);
        let pencil = generalized_eig(&st, &s).unwrap();
        prop_assert_eq!(pencil.dropped(), 0);
        prop_assert!(pencil.values[0] > 0.0 && pencil.max().is_finite());
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn spectrum_invariant_under_similarity(
        poly in convex_polygon(),
        s in 0.1f64..10.0,
        dx in -5.0f64..5.0,
        angle in 0.0f64..(2.0 * PI),
    ) {
        let m = Material::compressible();
        let fem = FemConfig::new(None, 1);
        let spec = |q: &Polygon| {
            let space = HrLocalSpace::new(q, 1, &m).unwrap();
            let b = matrix_b(&space, &fem).unwrap();
            generalized_eig(&space.local_a_matrix(Stabilization::PROJECTION), &b).unwrap().values
        };
        let base = spec(&poly);
        prop_assert!(rel_spectrum_gap(&spec(&poly.scaled(s)), &base) < 1e-8);
        prop_assert!(rel_spectrum_gap(&spec(&poly.translated(Vector2::new(dx, -dx))), &base) < 1e-10);
        prop_assert!(rel_spectrum_gap(&spec(&poly.rotated(angle)), &base) < 1e-8);
    }

    #[test]
    fn surrogate_energy_matrix(
        poly in convex_polygon(),
        p in 1usize..=2,
        coeffs in prop::collection::vec(-1.0f64..1.0, 1..8),
    ) {
        let m = Material::compressible();
        let space = HrLocalSpace::new(&poly, p, &m).unwrap();
        let fem = FemConfig::new(None, 2);
        let vol = LocalSolver::new(&space, &fem, Gauge::Volumetric).unwrap().basis(&space).unwrap().b;
        let bnd = LocalSolver::new(&space, &fem, Gauge::BoundaryMoments).unwrap().basis(&space).unwrap().b;
        prop_assert!((&vol - vol.transpose()).amax() == 0.0);
        prop_assert!((&vol - &bnd).norm() <= 1e-8 * vol.norm());
        prop_assert!(eig_ratio(&vol) > 0.0);
        let tau = random_tp(&space, &coeffs);
        let dofs = space.dofs_of_polynomial(&tau).unwrap();
        let got = (dofs.transpose() * &vol * &dofs)[0];
        let want = energy_d(&space, &tau);
        prop_assert!((got - want).abs() <= 1e-6 * want, "{got} vs {want}");
    }

    #[test]
    fn div_error_two_ways(poly in convex_polygon(), p in 1usize..=2) {
        let m = Material::compressible();
        let space = HrLocalSpace::new(&poly, p, &m).unwrap();
        let sigma = AnalyticStress::from_displacement(Displacement::Mixed, &m);
        let degree = hrvem::interp::default_quad_degree(p);
        let via_dofs = interp_errors(&space, &sigma, &FemConfig::new(None, 0), false).unwrap().e_div;
        let direct = div_projection_error(&space, &sigma, degree).unwrap();
        prop_assert!((via_dofs - direct).abs() <= 1e-10 * direct.max(1e-300) + 1e-13, "{via_dofs} vs {direct}");
    }
}

#[test]
fn basis_grams_are_well_conditioned() {
    let m = Material::compressible();
    for p in 1..=6 {
        let space = HrLocalSpace::new(&reference_triangle(), p, &m).unwrap();
        for gram in [space.rm_gram(), space.perp_gram(), space.consistency_gram()] {
            assert!(eig_ratio(gram) > 1e-10, "p={p}: {}", eig_ratio(gram));
        }
        assert!(eig_ratio(&edge_gram(p)) > 1e-10);
    }
}

#[test]
fn rm_and_rm_perp_span_vector_polynomials() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let m = Material::compressible();
    for poly in [reference_triangle(), unit_square(), hourglass_sequence(3).unwrap()] {
        for p in 1..=3 {
            let space = HrLocalSpace::new(&poly, p, &m).unwrap();
            let basis: Vec<&VectorPoly> = space.rm().members.iter().chain(&space.rm_perp().members).collect();
            let dim = (p + 1) * (p + 2);
            assert_eq!(basis.len(), dim);
            let quad = element_quadrature(&poly, 2 * p).unwrap();
            let gram = DMatrix::from_fn(dim, dim, |i, j| quad.integrate(|x| basis[i].eval(x).dot(&basis[j].eval(x))));
            let chol = gram.clone().cholesky().expect("independent members");
            for _ in 0..20 {
                let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let target = VectorPoly::from_coeffs(space.frame(), p, &c);
                let rhs = DVector::from_fn(dim, |i, _| quad.integrate(|x| basis[i].eval(x).dot(&target.eval(x))));
                let y = chol.solve(&rhs);
                let norm = quad.integrate(|x| target.eval(x).norm_squared()).sqrt();
                let res = quad
                    .integrate(|x| {
                        let mut v = target.eval(x);
                        for (b, yi) in basis.iter().zip(y.iter()) {
                            v -= b.eval(x) * *yi;
                        }
                        v.norm_squared()
                    })
                    .max(0.0)
                    .sqrt();
                assert!(res < 1e-10 * norm, "p={p}: {res}");
            }
        }
    }
}

/// Nested refinements enlarge the Neumann trial space, so the surrogate
/// energy of every DOF vector can only grow, and the increments shrink.
#[test]
fn surrogate_converges_monotonically() {
    let m = Material::compressible();
    for poly in [reference_triangle(), hourglass_sequence(2).unwrap()] {
        let space = HrLocalSpace::new(&poly, 1, &m).unwrap();
        let bs: Vec<DMatrix<f64>> = (0..=3).map(|r| matrix_b(&space, &FemConfig::new(None, r)).unwrap()).collect();
        let v = DVector::from_fn(space.ndof(), |i, _| ((i * 7 + 3) % 5) as f64 - 2.0);
        let energies: Vec<f64> = bs.iter().map(|b| (v.transpose() * b * &v)[0]).collect();
        for w in energies.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-12), "{energies:?}");
        }
        let steps: Vec<f64> = bs.windows(2).map(|w| (&w[1] - &w[0]).norm() / w[1].norm()).collect();
        assert!(steps[1] < steps[0] && steps[2] < steps[1], "{steps:?}");
    }
}

#[test]
fn triangle_spectrum_is_stable_in_refinement() {
    let m = Material::compressible();
    let tri = reference_triangle();
    let stabs = [Stabilization::PROJECTION, Stabilization::Dofi];
    for p in 2..=4 {
        let coarse = study_element(&tri, "triangle", None, p, &m, &stabs, &FemConfig::new(None, 2)).unwrap();
        let fine = study_element(&tri, "triangle", None, p, &m, &stabs, &FemConfig::new(None, 3)).unwrap();
        for (c, f) in coarse.iter().zip(&fine) {
            assert!(((c.gmin - f.gmin) / f.gmin).abs() < 0.01, "p={p} {c:?} {f:?}");
            assert!(((c.gmax - f.gmax) / f.gmax).abs() < 0.01, "p={p} {c:?} {f:?}");
        }
    }
}

#[test]
fn compressible_hourglass_spectra_are_positive() {
    let m = Material::compressible();
    for k in 0..=5 {
        let poly = hourglass_sequence(k).unwrap();
        let recs = study_element(&poly, "hourglass", Some(k), 2, &m, &[Stabilization::PROJECTION, Stabilization::Dofi], &FemConfig::new(None, 2)).unwrap();
        for r in recs {
            assert!(r.gmin > 0.0 && r.dropped == 0, "{r:?}");
        }
    }
}
