//! Self-contained invariant suite behind `hrvem check`. Every check reports the
//! measured quantity against its tolerance; the suite is deterministic for a
//! given seed.

use std::fmt;

use nalgebra::{DMatrix, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigenstudy::{generalized_eig, par_map};
use crate::elasticity::Material;
use crate::error::Result;
use crate::geometry::{hourglass_sequence, reference_triangle, trapezoid_sequence, unit_square, Point, Polygon};
use crate::hrspace::{symmetrize, HrLocalSpace, Stabilization};
use crate::interp::{default_quad_degree, div_commutes_residual, AnalyticStress, Displacement};
use crate::localsolver::{bulk_basis_data, face_basis_data, matrix_b, unisolvence_check, FemConfig, Gauge, LocalSolver};
use crate::polybasis::poly::TensorPoly;
use crate::polybasis::quadrature::{element_quadrature, gauss_legendre};
use crate::polybasis::element_frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn below(name: &str, value: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed: value.is_finite() && value < tol,
        detail: format!("{value:.3e} < {tol:.0e}"),
    }
}

/// Elements every check runs on.
pub fn test_elements() -> Result<Vec<(String, Polygon)>> {
    let pentagon: Vec<(f64, f64)> = (0..5)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 5.0 + 0.3;
            (t.cos(), 0.8 * t.sin())
        })
        .collect();
    Ok(vec![
        ("triangle".into(), reference_triangle()),
        ("square".into(), unit_square()),
        ("pentagon".into(), Polygon::from_coords(&pentagon)?),
        ("hourglass-0".into(), hourglass_sequence(0)?),
        ("hourglass-3".into(), hourglass_sequence(3)?),
        ("trapezoid-2".into(), trapezoid_sequence(2)?),
    ])
}

/// `int_K xi^a eta^b` in the element frame through the divergence theorem.
fn green_moment(poly: &Polygon, a: usize, b: usize) -> f64 {
    let frame = element_frame(poly);
    let (s, w) = gauss_legendre((a + b).div_ceil(2) + 1);
    poly.edges()
        .iter()
        .map(|e| {
            let sum: f64 = s
                .iter()
                .zip(&w)
                .map(|(t, wt)| {
                    let (xi, eta) = frame.local(&e.point_at(*t));
                    wt * xi.powi(a as i32 + 1) * eta.powi(b as i32)
                })
                .sum();
            0.5 * e.length * sum * e.normal.x * frame.h / (a + 1) as f64
        })
        .sum()
}

fn quadrature_exactness(elements: &[(String, Polygon)]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (_, poly) in elements {
        let frame = element_frame(poly);
        for degree in [0, 3, 8, 14, 20] {
            let quad = element_quadrature(poly, degree)?;
            for a in 0..=degree {
                let b = degree - a;
                let f = |x: &Point| {
                    let (xi, eta) = frame.local(x);
                    xi.powi(a as i32) * eta.powi(b as i32)
                };
                let scale = quad.integrate(|x| f(x).abs()).max(f64::MIN_POSITIVE);
                worst = worst.max((quad.integrate(f) - green_moment(poly, a, b)).abs() / scale);
            }
        }
    }
    Ok(worst)
}

fn random_tp_member(space: &HrLocalSpace, rng: &mut ChaCha8Rng) -> TensorPoly {
    let members = &space.tensor_basis().basis.members;
    let mut tau = members[0].scale(0.0);
    for m in members {
        tau.axpy(rng.random_range(-1.0..1.0), m);
    }
    tau
}

/// Worst relative errors of traction and divergence reconstruction.
fn reconstruction(space: &HrLocalSpace, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let tau = random_tp_member(space, rng);
    let div = tau.div();
    let dofs = space.dofs_of_polynomial(&tau)?;
    let quad = space.quadrature();
    let tau_max = quad.points.iter().fold(0.0f64, |m, x| m.max(tau.eval(x).norm()));
    let mut trac: f64 = 0.0;
    for (e, edge) in space.polygon().edges().iter().enumerate() {
        let t = space.traction_from_dofs(&dofs, e)?;
        for i in 0..=8 {
            let s = -1.0 + 0.25 * i as f64;
            let exact = tau.eval(&edge.point_at(s)).apply(edge.normal);
            trac = trac.max((t.eval(s) - exact).norm() / tau_max);
        }
    }
    let d = space.div_from_dofs(&dofs)?;
    let scale = tau_max / space.frame().h;
    let dv = quad
        .points
        .iter()
        .fold(0.0f64, |m, x| m.max((d.eval(x) - div.eval(x)).norm() / scale));
    Ok((trac, dv))
}

/// Idempotence defect of the DOF-space projector and `T_p` reproduction error.
fn projector(space: &HrLocalSpace, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let p = space.pi_dof();
    let idem = (&p * &p - &p).amax() / p.amax();
    let tau = random_tp_member(space, rng);
    let back = space.project(&space.dofs_of_polynomial(&tau)?)?;
    let quad = space.quadrature();
    let scale = quad.points.iter().fold(0.0f64, |m, x| m.max(tau.eval(x).norm()));
    let rep = quad
        .points
        .iter()
        .fold(0.0f64, |m, x| m.max((back.eval(x) - tau.eval(x)).norm() / scale));
    Ok((idem, rep))
}

fn min_rel_eig(m: &DMatrix<f64>) -> f64 {
    let ev = symmetrize(m.clone()).symmetric_eigenvalues();
    let max = ev.amax();
    ev.min() / max
}

fn spectrum(poly: &Polygon, p: usize, material: &Material, stab: Stabilization, fem: &FemConfig) -> Result<Vec<f64>> {
    let space = HrLocalSpace::new(poly, p, material)?;
    let b = matrix_b(&space, fem)?;
    Ok(generalized_eig(&space.local_a_matrix(stab), &b)?.values)
}

fn spectrum_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1e-300))
        .fold(0.0, f64::max)
}

fn b_gauge_defect(space: &HrLocalSpace, fem: &FemConfig) -> Result<f64> {
    let b1 = LocalSolver::new(space, fem, Gauge::Volumetric)?.basis(space)?.b;
    let b2 = LocalSolver::new(space, fem, Gauge::BoundaryMoments)?.basis(space)?.b;
    Ok((&b1 - &b2).norm() / b1.norm())
}

fn compatibility(space: &HrLocalSpace) -> Result<f64> {
    let p = space.degree();
    let mut worst: f64 = 0.0;
    for e in 0..space.polygon().num_edges() {
        for m in 0..2 * (p + 1) {
            worst = worst.max(face_basis_data(space, e, m)?.compatibility_residual(space));
        }
    }
    for m in 0..space.rm_perp().len() {
        worst = worst.max(bulk_basis_data(space, m)?.compatibility_residual(space));
    }
    Ok(worst)
}

/// Runs the whole suite. Only construction failures produce `Err`; violated
/// invariants are reported as failing outcomes.
pub fn run_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elements = test_elements()?;
    let material = Material::compressible();
    let fem = FemConfig::default();
    let mut out = Vec::new();

    out.push(below("quadrature exactness", quadrature_exactness(&elements)?, 1e-12));

    let mut spaces = Vec::new();
    for (name, poly) in &elements {
        for p in 1..=3 {
            spaces.push((name.clone(), p, HrLocalSpace::new(poly, p, &material)?));
        }
    }

    let (mut trac, mut div, mut idem, mut rep, mut compat) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (_, _, space) in &spaces {
        let (t, d) = reconstruction(space, &mut rng)?;
        let (i, r) = projector(space, &mut rng)?;
        trac = trac.max(t);
        div = div.max(d);
        idem = idem.max(i);
        rep = rep.max(r);
        compat = compat.max(compatibility(space)?);
    }
    out.push(below("traction reconstruction on T_p", trac, 1e-10));
    out.push(below("divergence reconstruction on T_p", div, 1e-10));
    out.push(below("projector idempotence", idem, 1e-10));
    out.push(below("projector reproduces T_p", rep, 1e-10));
    out.push(below("compatibility of local problems", compat, 1e-10));

    let mut commute: f64 = 0.0;
    for i in 0..20 {
        let w = Displacement::random_waves(&mut rng, 2);
        let sigma = AnalyticStress::from_displacement(w, &material);
        let (_, _, space) = &spaces[(7 * i) % spaces.len()];
        commute = commute.max(div_commutes_residual(space, &sigma, default_quad_degree(space.degree()))?);
    }
    out.push(below("commuting divergence identity (20 random stresses)", commute, 1e-9));

    // Definiteness of S, S~, A and B, and positivity of the (S~, S) pencil.
    let spd = par_map(&spaces, |(name, p, space)| -> Result<(String, f64, f64)> {
        let s = space.stab_matrix(Stabilization::PROJECTION);
        let st = space.stab_matrix(Stabilization::Dofi);
        let a = space.local_a_matrix(Stabilization::PROJECTION);
        let at = space.local_a_matrix(Stabilization::Dofi);
        let b = matrix_b(space, &fem)?;
        let worst = [&s, &st, &a, &at, &b].iter().map(|m| min_rel_eig(m)).fold(f64::INFINITY, f64::min);
        let pencil = generalized_eig(&st, &s)?;
        let pmin = if pencil.b_dropped > 0 { 0.0 } else { pencil.values[0] };
        Ok((format!("{name} p={p}"), worst, pmin))
    });
    let mut spd_worst = (String::new(), f64::INFINITY);
    let mut pencil_worst = (String::new(), f64::INFINITY);
    for r in spd {
        let (label, w, pm) = r?;
        if w < spd_worst.1 {
            spd_worst = (label.clone(), w);
        }
        if pm < pencil_worst.1 {
            pencil_worst = (label, pm);
        }
    }
    out.push(CheckOutcome {
        name: "S, S~, A, B positive definite (p <= 3)".into(),
        passed: spd_worst.1 > 1e-14,
        detail: format!("min relative eigenvalue {:.3e} ({})", spd_worst.1, spd_worst.0),
    });
    out.push(CheckOutcome {
        name: "pencil (S~, S) strictly positive".into(),
        passed: pencil_worst.1 > 0.0,
        detail: format!("min eigenvalue {:.3e} ({})", pencil_worst.1, pencil_worst.0),
    });

    let mut gauge: f64 = 0.0;
    for (name, p, space) in &spaces {
        if *p <= 2 && (name == "square" || name == "hourglass-3") {
            gauge = gauge.max(b_gauge_defect(space, &fem)?);
        }
    }
    out.push(below("B gauge invariance", gauge, 1e-8));

    let (mut scale_d, mut trans_d, mut rot_d) = (0.0f64, 0.0f64, 0.0f64);
    let shift = Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    for (_, poly) in elements.iter().filter(|(n, _)| n == "pentagon" || n == "hourglass-3") {
        for p in 1..=2 {
            let base = spectrum(poly, p, &material, Stabilization::PROJECTION, &fem)?;
            scale_d = scale_d.max(spectrum_distance(
                &base,
                &spectrum(&poly.scaled(0.01), p, &material, Stabilization::PROJECTION, &fem)?,
            ));
            trans_d = trans_d.max(spectrum_distance(
                &base,
                &spectrum(&poly.translated(shift), p, &material, Stabilization::PROJECTION, &fem)?,
            ));
            rot_d = rot_d.max(spectrum_distance(
                &base,
                &spectrum(&poly.rotated(0.7), p, &material, Stabilization::PROJECTION, &fem)?,
            ));
        }
    }
    out.push(below("spectrum invariance under scaling", scale_d, 1e-8));
    out.push(below("spectrum invariance under translation", trans_d, 1e-10));
    out.push(below("spectrum invariance under rotation", rot_d, 1e-8));

    let mut uni_ok = true;
    let mut uni_detail = Vec::new();
    for (_, poly) in elements.iter().filter(|(n, _)| n == "triangle" || n == "pentagon") {
        let space = HrLocalSpace::new(poly, 1, &material)?;
        let devs: Vec<f64> = (1..=3)
            .map(|nref| unisolvence_check(&space, &FemConfig::new(None, nref)))
            .collect::<Result<_>>()?;
        uni_ok &= devs.windows(2).all(|w| w[1] < w[0]);
        uni_detail.push(format!("{:.2e} > {:.2e} > {:.2e}", devs[0], devs[1], devs[2]));
    }
    out.push(CheckOutcome {
        name: "unisolvence deviation decreases with refinement".into(),
        passed: uni_ok,
        detail: uni_detail.join("; "),
    });
    Ok(out)
}

/// Convenience for callers that only need the verdict.
pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn green_moments_match_closed_form() {
        // Reference triangle about its centroid: int xi^2 with h = sqrt(2).
        let t = reference_triangle();
        let v = green_moment(&t, 0, 0);
        assert_relative_eq!(v, 0.5, max_relative = 1e-14);
        let ixx = 1.0 / 12.0 - 0.5 / 9.0; // int x^2 - |K| cx^2
        assert_relative_eq!(green_moment(&t, 2, 0), ixx / 2.0, max_relative = 1e-13);
    }

    #[test]
    fn reconstruction_and_projector_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Material::compressible();
        let space = HrLocalSpace::new(&hourglass_sequence(2).unwrap(), 2, &m).unwrap();
        let (t, d) = reconstruction(&space, &mut rng).unwrap();
        let (i, r) = projector(&space, &mut rng).unwrap();
        assert!(t < 1e-10 && d < 1e-10 && i < 1e-10 && r < 1e-10, "{t} {d} {i} {r}");
    }
}
