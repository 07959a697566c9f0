//! Browser bindings for a few local-element computations. Every entry point
//! returns a JSON string; the page in `www/` renders it.

use hrvem::eigenstudy::study_element;
use hrvem::geometry::{hourglass_sequence, reference_triangle, subtriangulate, trapezoid_sequence, unit_square};
use hrvem::hrspace::{DofKind, HrLocalSpace, Stabilization};
use hrvem::interp::{default_quad_degree, div_commutes_residual, interp_errors, AnalyticStress, Displacement};
use hrvem::localsolver::FemConfig;
use hrvem::{Material, Polygon};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Refinement used by the page; coarse enough to stay interactive.
const DEMO_NREF: usize = 2;

fn element(name: &str, k: usize, custom: &str) -> hrvem::Result<Polygon> {
    match name {
        "triangle" => Ok(reference_triangle()),
        "square" => Ok(unit_square()),
        "hourglass" => hourglass_sequence(k),
        "trapezoid" => trapezoid_sequence(k),
        _ => Polygon::parse(custom),
    }
}

#[derive(Serialize)]
struct Shape {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[[f64; 2]; 3]>,
    ndof: usize,
    edge_dofs: usize,
    interior_dofs: usize,
    area: f64,
    diameter: f64,
}

#[derive(Serialize)]
struct Row {
    stab: &'static str,
    gmin: f64,
    gmax: f64,
    dropped: usize,
    cond_a: f64,
    cond_b: f64,
}

#[derive(Serialize)]
struct Interp {
    commuting_residual: f64,
    e_div: f64,
    e_l2: f64,
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

/// Outline, surrogate sub-triangulation and DOF counts of an element.
pub fn shape_json(name: &str, k: usize, custom: &str, p: usize) -> hrvem::Result<String> {
    let poly = element(name, k, custom)?;
    let space = HrLocalSpace::new(&poly, p, &Material::compressible())?;
    let sub = subtriangulate(&poly, 1)?;
    let edge_dofs = space.dofs().iter().filter(|d| matches!(d.kind, DofKind::EdgeTraction { .. })).count();
    Ok(to_json(&Shape {
        vertices: poly.vertices().iter().map(|v| [v.x, v.y]).collect(),
        triangles: sub.triangles.iter().map(|t| t.map(|v| [v.x, v.y])).collect(),
        ndof: space.ndof(),
        edge_dofs,
        interior_dofs: space.ndof() - edge_dofs,
        area: poly.area(),
        diameter: poly.diameter(),
    }))
}

/// Extreme eigenvalues of `(A, B)` for both stabilizations.
pub fn stability_json(name: &str, k: usize, custom: &str, p: usize, lambda: f64, mu: f64) -> hrvem::Result<String> {
    let poly = element(name, k, custom)?;
    let material = Material::new(lambda, mu)?;
    let stabs = [Stabilization::PROJECTION, Stabilization::Dofi];
    let records = study_element(&poly, name, None, p, &material, &stabs, &FemConfig::new(None, DEMO_NREF))?;
    let rows: Vec<Row> = records
        .iter()
        .map(|r| Row {
            stab: r.stab.label(),
            gmin: r.gmin,
            gmax: r.gmax,
            dropped: r.dropped,
            cond_a: r.cond_a,
            cond_b: r.cond_b,
        })
        .collect();
    Ok(to_json(&rows))
}

/// Interpolation errors of the stress generated by a preset displacement.
pub fn interp_json(name: &str, k: usize, custom: &str, p: usize, w: &str) -> hrvem::Result<String> {
    let poly = element(name, k, custom)?;
    let material = Material::compressible();
    let space = HrLocalSpace::new(&poly, p, &material)?;
    let sigma = AnalyticStress::from_displacement(Displacement::parse(w)?, &material);
    let errors = interp_errors(&space, &sigma, &FemConfig::new(None, DEMO_NREF), false)?;
    Ok(to_json(&Interp {
        commuting_residual: div_commutes_residual(&space, &sigma, default_quad_degree(p))?,
        e_div: errors.e_div,
        e_l2: errors.e_l2,
    }))
}

fn js(r: hrvem::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn shape(name: &str, k: usize, custom: &str, p: usize) -> Result<String, JsError> {
    js(shape_json(name, k, custom, p))
}

#[wasm_bindgen]
pub fn stability(name: &str, k: usize, custom: &str, p: usize, lambda: f64, mu: f64) -> Result<String, JsError> {
    js(stability_json(name, k, custom, p, lambda, mu))
}

#[wasm_bindgen]
pub fn interpolation(name: &str, k: usize, custom: &str, p: usize, w: &str) -> Result<String, JsError> {
    js(interp_json(name, k, custom, p, w))
}
