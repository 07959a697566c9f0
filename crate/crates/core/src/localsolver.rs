//! Displacement finite element surrogate for the virtual basis stresses.
//!
//! Each basis stress `phi_j` is represented as `C grad_S z_j`, where `z_j`
//! solves a pure traction elasticity problem on the element with load
//! `div phi_j` and boundary traction `phi_j n`. The problems are discretized
//! with Lagrange elements of degree `k` on the refined centroid fan; rigid
//! motions are removed by three scalar constraints.

use std::collections::HashMap;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::elasticity::{Material, SymTensor};
use crate::error::{Error, Result};
use crate::geometry::{subtriangulate, triangle_area, Point, Polygon};
use crate::hrspace::{symmetrize, HrLocalSpace, LocalMatrix};
use crate::polybasis::poly::{self, EdgeVectorPoly, Frame, Poly, VectorPoly};
use crate::polybasis::quadrature::{gauss_legendre, triangle_quadrature};

/// Divergence term is under-integrated from this value of lambda on.
pub const LOCKING_THRESHOLD: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FemConfig {
    /// Lagrange degree; `None` means `p + 1`.
    pub degree: Option<usize>,
    pub nref: usize,
}

impl Default for FemConfig {
    fn default() -> Self {
        FemConfig { degree: None, nref: 3 }
    }
}

impl FemConfig {
    pub fn new(degree: Option<usize>, nref: usize) -> Self {
        FemConfig { degree, nref }
    }

    pub fn degree_for(&self, p: usize) -> usize {
        self.degree.unwrap_or(p + 1).max(1)
    }

    pub fn refined(&self) -> Self {
        FemConfig {
            degree: self.degree,
            nref: self.nref + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    /// `int_K z . rho = 0` for all rigid motions.
    Volumetric,
    /// `int_dK z . rho = int_dK u . rho` with `u` in `P_p` whose moments
    /// against the scaled monomials all equal one.
    BoundaryMoments,
}

#[derive(Debug, Clone)]
pub struct FemTriangle {
    pub corners: [Point; 3],
    /// Global node of each local multi-index.
    pub nodes: Vec<usize>,
    pub fan: usize,
}

/// Part of a polygon edge covered by one side of a sub-triangle.
#[derive(Debug, Clone)]
pub struct BoundarySegment {
    pub edge: usize,
    pub triangle: usize,
    /// Nodes ordered along the edge direction.
    pub nodes: Vec<usize>,
    /// Edge parameters of the segment ends.
    pub s0: f64,
    pub s1: f64,
}

struct ReferenceData {
    /// Barycentric multi-indices of the local nodes.
    multi: Vec<[usize; 3]>,
    /// Quadrature on the reference triangle as barycentric coordinates.
    bary: Vec<[f64; 3]>,
    weights: Vec<f64>,
    phi: Vec<Vec<f64>>,
    /// Derivatives with respect to the three barycentric coordinates.
    dphi: Vec<Vec<[f64; 3]>>,
}

/// Lagrange space of degree `k` on the refined centroid fan.
pub struct FemSpace {
    k: usize,
    nref: usize,
    polygon: Polygon,
    nodes: Vec<Point>,
    triangles: Vec<FemTriangle>,
    boundary: Vec<BoundarySegment>,
    reference: ReferenceData,
}

fn silvester(k: usize, n: usize, l: f64) -> (f64, f64) {
    let kf = k as f64;
    let mut val = 1.0;
    let mut der = 0.0;
    for s in 0..n {
        let f = (kf * l - s as f64) / (s as f64 + 1.0);
        let df = kf / (s as f64 + 1.0);
        der = der * f + val * df;
        val *= f;
    }
    (val, der)
}

fn lagrange_1d(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|m| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != m)
                .map(|(_, &xi)| (x - xi) / (nodes[m] - xi))
                .product()
        })
        .collect()
}

impl ReferenceData {
    fn new(k: usize, degree: usize) -> Result<Self> {
        let mut multi = Vec::new();
        for a0 in (0..=k).rev() {
            for a1 in (0..=k - a0).rev() {
                multi.push([a0, a1, k - a0 - a1]);
            }
        }
        let tri = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        let q = triangle_quadrature(&tri, degree)?;
        let bary: Vec<[f64; 3]> = q.points.iter().map(|p| [1.0 - p.x - p.y, p.x, p.y]).collect();
        let mut phi = Vec::with_capacity(bary.len());
        let mut dphi = Vec::with_capacity(bary.len());
        for l in &bary {
            let mut v = Vec::with_capacity(multi.len());
            let mut d = Vec::with_capacity(multi.len());
            for m in &multi {
                let r: Vec<(f64, f64)> = (0..3).map(|i| silvester(k, m[i], l[i])).collect();
                v.push(r[0].0 * r[1].0 * r[2].0);
                d.push([r[0].1 * r[1].0 * r[2].0, r[0].0 * r[1].1 * r[2].0, r[0].0 * r[1].0 * r[2].1]);
            }
            phi.push(v);
            dphi.push(d);
        }
        // weights of the unit reference triangle sum to 1/2; store them relative to area
        let weights = q.weights.iter().map(|w| 2.0 * w).collect();
        Ok(ReferenceData {
            multi,
            bary,
            weights,
            phi,
            dphi,
        })
    }
}

/// Gradients of the barycentric coordinates of a triangle.
fn bary_gradients(c: &[Point; 3]) -> [Vector2<f64>; 3] {
    let e1 = c[1] - c[0];
    let e2 = c[2] - c[0];
    let det = e1.x * e2.y - e1.y * e2.x;
    let g1 = Vector2::new(e2.y, -e2.x) / det;
    let g2 = Vector2::new(-e1.y, e1.x) / det;
    [-g1 - g2, g1, g2]
}

impl FemSpace {
    pub fn new(polygon: &Polygon, k: usize, nref: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::OutOfRange {
                what: "fem degree",
                value: 0,
                allowed: ">= 1".into(),
            });
        }
        subtriangulate(polygon, 0)?;
        let n = polygon.num_edges();
        let r = 1usize << nref;
        let big = k * r;
        let centroid = polygon.centroid();
        let verts = polygon.vertices();
        let reference = ReferenceData::new(k, 2 * k + 8)?;

        let mut index: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
        let mut nodes: Vec<Point> = Vec::new();
        let mut triangles = Vec::new();
        let mut boundary = Vec::new();

        for e in 0..n {
            let ids = [n, e, (e + 1) % n];
            let pts = [centroid, verts[e], verts[(e + 1) % n]];
            let mut node_at = |i: usize, j: usize| -> usize {
                let w = [big - i - j, i, j];
                let mut key: Vec<(usize, usize)> = (0..3).filter(|&t| w[t] > 0).map(|t| (ids[t], w[t])).collect();
                key.sort_unstable();
                *index.entry(key).or_insert_with(|| {
                    let f = |t: usize| w[t] as f64 / big as f64;
                    let p = Point::from(pts[0].coords * f(0) + pts[1].coords * f(1) + pts[2].coords * f(2));
                    nodes.push(p);
                    nodes.len() - 1
                })
            };
            let lattice = |q: (usize, usize)| pts[0].coords
                + (pts[1] - pts[0]) * (q.0 as f64 / r as f64)
                + (pts[2] - pts[0]) * (q.1 as f64 / r as f64);
            for i in 0..r {
                for j in 0..r - i {
                    let mut shapes = vec![[(i, j), (i + 1, j), (i, j + 1)]];
                    if i + j + 1 < r {
                        shapes.push([(i + 1, j), (i + 1, j + 1), (i, j + 1)]);
                    }
                    for (si, q) in shapes.iter().enumerate() {
                        let local: Vec<usize> = reference
                            .multi
                            .iter()
                            .map(|m| {
                                let fi = m[0] * q[0].0 + m[1] * q[1].0 + m[2] * q[2].0;
                                let fj = m[0] * q[0].1 + m[1] * q[1].1 + m[2] * q[2].1;
                                node_at(fi, fj)
                            })
                            .collect();
                        let corners = [
                            Point::from(lattice(q[0])),
                            Point::from(lattice(q[1])),
                            Point::from(lattice(q[2])),
                        ];
                        triangles.push(FemTriangle {
                            corners,
                            nodes: local,
                            fan: e,
                        });
                        if si == 0 && i + j + 1 == r {
                            // side (i+1, j) -> (i, j+1) lies on the polygon edge
                            let seg: Vec<usize> = (0..=k).map(|m| node_at(k * (i + 1) - m, k * j + m)).collect();
                            boundary.push(BoundarySegment {
                                edge: e,
                                triangle: triangles.len() - 1,
                                nodes: seg,
                                s0: 2.0 * j as f64 / r as f64 - 1.0,
                                s1: 2.0 * (j + 1) as f64 / r as f64 - 1.0,
                            });
                        }
                    }
                }
            }
        }
        Ok(FemSpace {
            k,
            nref,
            polygon: polygon.clone(),
            nodes,
            triangles,
            boundary,
            reference,
        })
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn nref(&self) -> usize {
        self.nref
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[FemTriangle] {
        &self.triangles
    }

    pub fn boundary(&self) -> &[BoundarySegment] {
        &self.boundary
    }

    /// Number of scalar unknowns (two per node).
    pub fn ndof(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Visits every quadrature point of every triangle with the physical
    /// point, weight, shape values and physical shape gradients.
    fn for_each_qp(&self, mut f: impl FnMut(usize, usize, &Point, f64, &[f64], &[Vector2<f64>])) {
        let r = &self.reference;
        let mut grads = vec![Vector2::zeros(); r.multi.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let g = bary_gradients(&tri.corners);
            let area = triangle_area(&tri.corners);
            for (q, l) in r.bary.iter().enumerate() {
                let x = Point::from(tri.corners[0].coords * l[0] + tri.corners[1].coords * l[1] + tri.corners[2].coords * l[2]);
                for (a, d) in r.dphi[q].iter().enumerate() {
                    grads[a] = g[0] * d[0] + g[1] * d[1] + g[2] * d[2];
                }
                f(t, q, &x, r.weights[q] * area, &r.phi[q], &grads);
            }
        }
    }

    /// Visits every boundary quadrature point with edge parameter, point,
    /// weight and the trace shape values on the segment nodes.
    fn for_each_boundary_qp(&self, degree: usize, mut f: impl FnMut(&BoundarySegment, f64, &Point, f64, &[f64])) {
        let (gs, gw) = gauss_legendre(degree / 2 + 1);
        for seg in &self.boundary {
            let edge = &self.polygon.edges()[seg.edge];
            let snodes: Vec<f64> = (0..=self.k)
                .map(|m| seg.s0 + (seg.s1 - seg.s0) * m as f64 / self.k as f64)
                .collect();
            let half = 0.5 * (seg.s1 - seg.s0);
            for (g, w) in gs.iter().zip(&gw) {
                let s = seg.s0 + half * (g + 1.0);
                let x = edge.point_at(s);
                let vals = lagrange_1d(&snodes, s);
                f(seg, s, &x, w * half * 0.5 * edge.length, &vals);
            }
        }
    }

    /// Stiffness entries as merged triplets.
    pub fn stiffness(&self, material: &Material) -> Vec<(usize, usize, f64)> {
        let nloc = self.reference.multi.len();
        let (mu, lambda) = (material.mu(), material.lambda());
        let reduced = lambda >= LOCKING_THRESHOLD;
        let mut local = vec![DMatrix::<f64>::zeros(2 * nloc, 2 * nloc); self.triangles.len()];
        // divergence moments against P_m per triangle for the reduced term
        let m_deg = self.k.saturating_sub(2);
        let np = poly::dim(m_deg);
        let mut pmass = vec![DMatrix::<f64>::zeros(np, np); if reduced { self.triangles.len() } else { 0 }];
        let mut pdiv = vec![DMatrix::<f64>::zeros(np, 2 * nloc); if reduced { self.triangles.len() } else { 0 }];
        let bary = &self.reference.bary;
        self.for_each_qp(|t, q, _, w, _, g| {
            let ke = &mut local[t];
            for a in 0..nloc {
                for b in 0..nloc {
                    let gg = g[a].dot(&g[b]);
                    for c in 0..2 {
                        for d in 0..2 {
                            let mut v = mu * g[a][d] * g[b][c];
                            if c == d {
                                v += mu * gg;
                            }
                            if !reduced {
                                v += lambda * g[a][c] * g[b][d];
                            }
                            ke[(2 * a + c, 2 * b + d)] += w * v;
                        }
                    }
                }
            }
            if reduced {
                let l = bary[q];
                let psi = poly::monomial_values(m_deg, l[1], l[2]);
                for i in 0..np {
                    for j in 0..np {
                        pmass[t][(i, j)] += w * psi[i] * psi[j];
                    }
                    for a in 0..nloc {
                        for c in 0..2 {
                            pdiv[t][(i, 2 * a + c)] += w * psi[i] * g[a][c];
                        }
                    }
                }
            }
        });
        let mut trip = Vec::with_capacity(self.triangles.len() * 4 * nloc * nloc);
        for (t, tri) in self.triangles.iter().enumerate() {
            let mut ke = std::mem::replace(&mut local[t], DMatrix::zeros(0, 0));
            if reduced {
                let x = pmass[t].clone().cholesky().expect("triangle mass").solve(&pdiv[t]);
                ke += lambda * pdiv[t].transpose() * x;
            }
            for a in 0..nloc {
                for b in 0..nloc {
                    for c in 0..2 {
                        for d in 0..2 {
                            let v = ke[(2 * a + c, 2 * b + d)];
                            if v != 0.0 {
                                trip.push((2 * tri.nodes[a] + c, 2 * tri.nodes[b] + d, v));
                            }
                        }
                    }
                }
            }
        }
        merge_triplets(trip)
    }

    /// `int_K psi_(a,c) m_alpha` for monomials of degree `p` in `frame`,
    /// columns ordered `[x-component monomials; y-component monomials]`.
    pub fn body_load_matrix(&self, frame: Frame, p: usize) -> DMatrix<f64> {
        let md = poly::dim(p);
        let mut out = DMatrix::zeros(self.ndof(), 2 * md);
        self.for_each_qp(|t, _, x, w, phi, _| {
            let m = frame.monomials(p, x);
            for (a, &node) in self.triangles[t].nodes.iter().enumerate() {
                for (al, mv) in m.iter().enumerate() {
                    let v = w * phi[a] * mv;
                    out[(2 * node, al)] += v;
                    out[(2 * node + 1, md + al)] += v;
                }
            }
        });
        out
    }

    /// `int_e psi_(a,c) s^i`, columns `[x powers; y powers]` for `i = 0..=p`.
    pub fn edge_load_matrix(&self, edge: usize, p: usize) -> DMatrix<f64> {
        let b = p + 1;
        let mut out = DMatrix::zeros(self.ndof(), 2 * b);
        self.for_each_boundary_qp(self.k + p + 2, |seg, s, _, w, vals| {
            if seg.edge != edge {
                return;
            }
            for (m, &node) in seg.nodes.iter().enumerate() {
                let mut sp = 1.0;
                for i in 0..b {
                    let v = w * vals[m] * sp;
                    out[(2 * node, i)] += v;
                    out[(2 * node + 1, b + i)] += v;
                    sp *= s;
                }
            }
        });
        out
    }

    /// Rows `int psi . rho_i` over the element or its boundary.
    fn gauge_rows(&self, rm: &[VectorPoly], gauge: Gauge) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(rm.len(), self.ndof());
        match gauge {
            Gauge::Volumetric => self.for_each_qp(|t, _, x, w, phi, _| {
                for (i, r) in rm.iter().enumerate() {
                    let v = r.eval(x);
                    for (a, &node) in self.triangles[t].nodes.iter().enumerate() {
                        c[(i, 2 * node)] += w * phi[a] * v.x;
                        c[(i, 2 * node + 1)] += w * phi[a] * v.y;
                    }
                }
            }),
            Gauge::BoundaryMoments => self.for_each_boundary_qp(self.k + 3, |seg, _, x, w, vals| {
                for (i, r) in rm.iter().enumerate() {
                    let v = r.eval(x);
                    for (m, &node) in seg.nodes.iter().enumerate() {
                        c[(i, 2 * node)] += w * vals[m] * v.x;
                        c[(i, 2 * node + 1)] += w * vals[m] * v.y;
                    }
                }
            }),
        }
        c
    }

    /// Symmetric gradient of the field with nodal values `z` at every
    /// quadrature point, passed with the point and weight.
    pub fn for_each_strain(&self, z: &[f64], mut f: impl FnMut(&Point, f64, SymTensor)) {
        self.for_each_qp(|t, _, x, w, _, g| {
            let mut e = SymTensor::default();
            for (a, &node) in self.triangles[t].nodes.iter().enumerate() {
                let (ux, uy) = (z[2 * node], z[2 * node + 1]);
                e.xx += ux * g[a].x;
                e.yy += uy * g[a].y;
                e.xy += 0.5 * (ux * g[a].y + uy * g[a].x);
            }
            f(x, w, e);
        });
    }

    /// Stress `C grad_S z` on each boundary quadrature point, taken from the
    /// sub-triangle adjacent to the segment.
    fn for_each_boundary_stress(
        &self,
        material: &Material,
        z: &[f64],
        degree: usize,
        mut f: impl FnMut(usize, f64, f64, SymTensor),
    ) {
        let r = &self.reference;
        self.for_each_boundary_qp(degree, |seg, s, x, w, _| {
            let tri = &self.triangles[seg.triangle];
            let g = bary_gradients(&tri.corners);
            let l = barycentric(&tri.corners, x);
            let mut e = SymTensor::default();
            for (a, m) in r.multi.iter().enumerate() {
                let rv: Vec<(f64, f64)> = (0..3).map(|i| silvester(self.k, m[i], l[i])).collect();
                let d = [rv[0].1 * rv[1].0 * rv[2].0, rv[0].0 * rv[1].1 * rv[2].0, rv[0].0 * rv[1].0 * rv[2].1];
                let grad = g[0] * d[0] + g[1] * d[1] + g[2] * d[2];
                let node = tri.nodes[a];
                let (ux, uy) = (z[2 * node], z[2 * node + 1]);
                e.xx += ux * grad.x;
                e.yy += uy * grad.y;
                e.xy += 0.5 * (ux * grad.y + uy * grad.x);
            }
            f(seg.edge, s, w, material.c_apply(e));
        });
    }
}

fn barycentric(c: &[Point; 3], x: &Point) -> [f64; 3] {
    let a = triangle_area(c);
    let l1 = triangle_area(&[c[0], *x, c[2]]) / a;
    let l2 = triangle_area(&[c[0], c[1], *x]) / a;
    [1.0 - l1 - l2, l1, l2]
}

fn merge_triplets(mut t: Vec<(usize, usize, f64)>) -> Vec<(usize, usize, f64)> {
    t.sort_unstable_by_key(|&(i, j, _)| (j, i));
    let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len() / 4);
    for (i, j, v) in t {
        match out.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += v,
            _ => out.push((i, j, v)),
        }
    }
    out
}

/// Data of one traction problem `-div(C grad_S z) = f`, `C grad_S z n = g`.
#[derive(Debug, Clone)]
pub struct LocalProblemData {
    pub body_force: VectorPoly,
    /// Traction per polygon edge, in powers of the edge parameter.
    pub traction: Vec<Option<EdgeVectorPoly>>,
    pub gauge: Gauge,
}

impl LocalProblemData {
    /// `max_rho |int_K f . rho + int_dK g . rho|`, relative to the load size.
    pub fn compatibility_residual(&self, space: &HrLocalSpace) -> f64 {
        let quad = space.quadrature();
        let mut worst: f64 = 0.0;
        for rho in &space.rm().members {
            let body = quad.integrate(|x| self.body_force.eval(x).dot(&rho.eval(x)));
            let body_abs = quad.integrate(|x| self.body_force.eval(x).norm() * rho.eval(x).norm());
            let mut bnd = 0.0;
            let mut bnd_abs = 0.0;
            for (e, t) in self.traction.iter().enumerate() {
                if let Some(t) = t {
                    let rule = &space.edge_data()[e].rule;
                    bnd += rule.integrate(|s, x| t.eval(s).dot(&rho.eval(x)));
                    bnd_abs += rule.integrate(|s, x| t.eval(s).norm() * rho.eval(x).norm());
                }
            }
            let scale = (body_abs + bnd_abs).max(f64::MIN_POSITIVE);
            worst = worst.max((body + bnd).abs() / scale);
        }
        worst
    }
}

/// Problem for the member `e_c s^j` of the edge basis on one edge, with the
/// compatible rigid-motion load.
pub fn face_basis_data(space: &HrLocalSpace, edge: usize, member: usize) -> Result<LocalProblemData> {
    let p = space.degree();
    if edge >= space.polygon().num_edges() || member >= 2 * (p + 1) {
        return Err(Error::OutOfRange {
            what: "edge member",
            value: member as i64,
            allowed: format!("edge < {}, member < {}", space.polygon().num_edges(), 2 * (p + 1)),
        });
    }
    let mut t = EdgeVectorPoly::zero(p);
    if member <= p {
        t.x.coeffs[member] = 1.0;
    } else {
        t.y.coeffs[member - p - 1] = 1.0;
    }
    let rule = &space.edge_data()[edge].rule;
    let rhs = DVector::from_iterator(
        3,
        space.rm().members.iter().map(|rho| rule.integrate(|s, x| t.eval(s).dot(&rho.eval(x)))),
    );
    let c = space
        .rm_gram()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("rigid-motion Gram".into()))?
        .solve(&rhs);
    let mut body = VectorPoly::zero(space.frame(), p);
    for (ci, rho) in c.iter().zip(&space.rm().members) {
        body.axpy(-ci, rho);
    }
    let mut traction = vec![None; space.polygon().num_edges()];
    traction[edge] = Some(t);
    Ok(LocalProblemData {
        body_force: body,
        traction,
        gauge: Gauge::Volumetric,
    })
}

/// Problem for the `RM_perp` member with index `member`: load `-q`, no traction.
pub fn bulk_basis_data(space: &HrLocalSpace, member: usize) -> Result<LocalProblemData> {
    let q = space.rm_perp().members.get(member).ok_or_else(|| Error::OutOfRange {
        what: "bulk member",
        value: member as i64,
        allowed: format!("0..{}", space.rm_perp().len()),
    })?;
    Ok(LocalProblemData {
        body_force: q.scale(-1.0).raised(space.degree()),
        traction: vec![None; space.polygon().num_edges()],
        gauge: Gauge::Volumetric,
    })
}

/// Factorized traction problem on one element.
pub struct LocalSolver {
    fem: FemSpace,
    material: Material,
    gauge: Gauge,
    stiffness: Vec<(usize, usize, f64)>,
    constraints: DMatrix<f64>,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl LocalSolver {
    pub fn new(space: &HrLocalSpace, config: &FemConfig, gauge: Gauge) -> Result<Self> {
        let fem = FemSpace::new(space.polygon(), config.degree_for(space.degree()), config.nref)?;
        let material = *space.material();
        let stiffness = fem.stiffness(&material);
        let constraints = fem.gauge_rows(&space.rm().members, gauge);
        let n = fem.ndof();
        let nc = constraints.nrows();
        let mut trip: Vec<Triplet<usize, usize, f64>> = stiffness.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        // Scale the constraint rows to the stiffness magnitude for pivoting.
        let kscale = stiffness.iter().fold(0.0f64, |m, t| m.max(t.2.abs()));
        let cscale = kscale / constraints.amax().max(f64::MIN_POSITIVE);
        for i in 0..nc {
            for j in 0..n {
                let v = constraints[(i, j)] * cscale;
                if v != 0.0 {
                    trip.push(Triplet::new(n + i, j, v));
                    trip.push(Triplet::new(j, n + i, v));
                }
            }
        }
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n + nc, n + nc, &trip)
            .map_err(|e| Error::Singular(format!("sparse assembly: {e:?}")))?;
        let lu = mat.sp_lu().map_err(|e| Error::Singular(format!("saddle-point system: {e:?}")))?;
        let constraints = constraints * cscale;
        Ok(LocalSolver {
            fem,
            material,
            gauge,
            stiffness,
            constraints,
            lu,
        })
    }

    pub fn fem(&self) -> &FemSpace {
        &self.fem
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    /// Solves for every column of `load`, with constraint values `gauge_rhs`
    /// (scaled rows; zero for the volumetric gauge).
    fn solve_columns(&self, load: &DMatrix<f64>, gauge_rhs: Option<&DVector<f64>>) -> Result<DMatrix<f64>> {
        let n = self.fem.ndof();
        let nc = self.constraints.nrows();
        let rhs = faer::Mat::<f64>::from_fn(n + nc, load.ncols(), |i, j| {
            if i < n {
                load[(i, j)]
            } else {
                gauge_rhs.map_or(0.0, |g| g[i - n])
            }
        });
        let mut x = self.lu.solve(&rhs);
        // Two steps of iterative refinement against the assembled system.
        for _ in 0..2 {
            let mut r = rhs.clone();
            for &(i, j, v) in &self.stiffness {
                for c in 0..r.ncols() {
                    r[(i, c)] -= v * x[(j, c)];
                }
            }
            for k in 0..nc {
                for j in 0..n {
                    let v = self.constraints[(k, j)];
                    if v != 0.0 {
                        for c in 0..r.ncols() {
                            r[(j, c)] -= v * x[(n + k, c)];
                            r[(n + k, c)] -= v * x[(j, c)];
                        }
                    }
                }
            }
            x += self.lu.solve(&r);
        }
        let out = DMatrix::from_fn(n, load.ncols(), |i, j| x[(i, j)]);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("saddle-point solve produced non-finite values".into()));
        }
        Ok(out)
    }

    fn gauge_rhs(&self, space: &HrLocalSpace) -> Result<Option<DVector<f64>>> {
        match self.gauge {
            Gauge::Volumetric => Ok(None),
            Gauge::BoundaryMoments => {
                let u = unit_moment_field(space)?;
                let nodal = DVector::from_iterator(
                    self.fem.ndof(),
                    self.fem.nodes().iter().flat_map(|x| {
                        let v = u.eval(x);
                        [v.x, v.y]
                    }),
                );
                // u is in P_p, contained in the Lagrange space for k >= p.
                Ok(Some(&self.constraints * nodal))
            }
        }
    }

    /// Load vectors `-int psi . div phi_j + sum_e int_e psi . phi_j n` of the
    /// basis dual to the DOFs, one column per DOF.
    pub fn dual_basis_loads(&self, space: &HrLocalSpace) -> DMatrix<f64> {
        let p = space.degree();
        let mut l = -(self.fem.body_load_matrix(space.frame(), p) * space.div_map());
        for e in 0..space.polygon().num_edges() {
            l += self.fem.edge_load_matrix(e, p) * space.traction_map(e);
        }
        l
    }

    pub fn load_vector(&self, space: &HrLocalSpace, data: &LocalProblemData) -> DVector<f64> {
        let p = data.body_force.degree();
        let body = self.fem.body_load_matrix(space.frame(), p) * data.body_force.coeffs();
        let mut l = body;
        for (e, t) in data.traction.iter().enumerate() {
            if let Some(t) = t {
                let c = DVector::from_iterator(2 * t.x.coeffs.len(), t.x.coeffs.iter().chain(&t.y.coeffs).copied());
                l += self.fem.edge_load_matrix(e, t.x.coeffs.len() - 1) * c;
            }
        }
        l
    }

    /// Nodal displacement solving one traction problem.
    pub fn solve_local(&self, space: &HrLocalSpace, data: &LocalProblemData) -> Result<DVector<f64>> {
        let res = data.compatibility_residual(space);
        if res > 1e-8 {
            return Err(Error::Incompatible(res));
        }
        let l = self.load_vector(space, data);
        let g = self.gauge_rhs(space)?;
        let z = self.solve_columns(&DMatrix::from_column_slice(l.len(), 1, l.as_slice()), g.as_ref())?;
        Ok(z.column(0).into_owned())
    }

    /// `K z` for nodal vectors stored as columns.
    pub fn apply_stiffness(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(z.nrows(), z.ncols());
        for &(i, j, v) in &self.stiffness {
            for c in 0..z.ncols() {
                out[(i, c)] += v * z[(j, c)];
            }
        }
        out
    }

    pub fn energy(&self, z: &DVector<f64>) -> f64 {
        let zm = DMatrix::from_column_slice(z.len(), 1, z.as_slice());
        z.dot(&self.apply_stiffness(&zm).column(0))
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    /// Surrogate displacements of the whole dual basis.
    pub fn basis(&self, space: &HrLocalSpace) -> Result<LocalBasis> {
        let l = self.dual_basis_loads(space);
        let g = self.gauge_rhs(space)?;
        let z = self.solve_columns(&l, g.as_ref())?;
        // Z^T L equals Z^T K Z but does not amplify the rounding in a large
        // rigid component of Z by the norm of K.
        let b = symmetrize(z.transpose() * &l);
        Ok(LocalBasis { z, b })
    }
}

/// `u` in vector `P_p` with `(u, e_c m_alpha)_K = 1` for all scaled monomials.
fn unit_moment_field(space: &HrLocalSpace) -> Result<VectorPoly> {
    let p = space.degree();
    let mass = crate::polybasis::monomial_mass(space.polygon(), p)?;
    let ones = DVector::from_element(poly::dim(p), 1.0);
    let c = mass
        .lu()
        .solve(&ones)
        .ok_or_else(|| Error::Singular("monomial mass".into()))?;
    let x = Poly::from_coeffs(p, c.iter().copied().collect());
    Ok(VectorPoly::new(space.frame(), x.clone(), x))
}

/// Surrogate representation of the dual basis: nodal displacements `Z`
/// (one column per DOF) and `B = Z^T K Z`, evaluated as `Z^T L`.
pub struct LocalBasis {
    pub z: DMatrix<f64>,
    pub b: LocalMatrix,
}

impl LocalBasis {
    /// Nodal displacement of the stress with DOF vector `dofs`.
    pub fn displacement(&self, dofs: &DVector<f64>) -> DVector<f64> {
        &self.z * dofs
    }
}

/// `B_ij = (C grad_S z_j, grad_S z_i)_K`.
pub fn matrix_b(space: &HrLocalSpace, config: &FemConfig) -> Result<LocalMatrix> {
    let solver = LocalSolver::new(space, config, Gauge::Volumetric)?;
    let basis = solver.basis(space)?;
    Ok(basis.b)
}

/// Max deviation of the DOF matrix of the surrogate basis from the identity.
/// Edge moments use the pointwise surrogate stress; interior moments use
/// `int div sigma . q = -int sigma : grad_S q + int_dK sigma n . q`.
pub fn unisolvence_check(space: &HrLocalSpace, config: &FemConfig) -> Result<f64> {
    let solver = LocalSolver::new(space, config, Gauge::Volumetric)?;
    let basis = solver.basis(space)?;
    let n = space.ndof();
    let p = space.degree();
    let b = p + 1;
    let fem = solver.fem();
    let material = solver.material();
    let lengths: Vec<f64> = space.polygon().edges().iter().map(|e| e.length).collect();
    let scale = space.frame().h / space.polygon().area();
    let perp_strain: Vec<_> = space.rm_perp().members.iter().map(|q| q.sym_grad()).collect();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let z: Vec<f64> = basis.z.column(j).iter().copied().collect();
        let mut dofs = DVector::zeros(n);
        fem.for_each_boundary_stress(material, &z, 2 * (fem.degree() + p), |e, s, w, sigma| {
            let t = sigma.apply(space.polygon().edges()[e].normal);
            let off = space.edge_offset(e);
            let mut sp = 1.0;
            for i in 0..b {
                dofs[off + i] += w * sp * t.x / lengths[e];
                dofs[off + b + i] += w * sp * t.y / lengths[e];
                sp *= s;
            }
        });
        let off = space.interior_offset();
        fem.for_each_strain(&z, |x, w, eps| {
            let sigma = material.c_apply(eps);
            let m = space.frame().monomials(p, x);
            for (a, g) in perp_strain.iter().enumerate() {
                dofs[off + a] -= scale * w * sigma.ddot(g.eval_with(&m));
            }
        });
        // boundary term with the imposed traction data
        let mut unit = DVector::zeros(n);
        unit[j] = 1.0;
        for e in 0..space.polygon().num_edges() {
            let t = space.traction_from_dofs(&unit, e)?;
            let rule = &space.edge_data()[e].rule;
            for (a, q) in space.rm_perp().members.iter().enumerate() {
                dofs[off + a] += scale * rule.integrate(|s, x| t.eval(s).dot(&q.eval(x)));
            }
        }
        dofs[j] -= 1.0;
        worst = worst.max(dofs.amax());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{hourglass_sequence, reference_triangle, unit_square};
    use crate::polybasis::poly::TensorPoly;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fem_space_counts_and_conformity() {
        let sq = unit_square();
        for (k, nref) in [(1, 0), (2, 1), (3, 2)] {
            let fem = FemSpace::new(&sq, k, nref).unwrap();
            assert_eq!(fem.triangles().len(), 4 * 4usize.pow(nref as u32));
            // nodes of a conforming P_k mesh: V + (k-1) E + (k-1)(k-2)/2 T
            let t = fem.triangles().len();
            let e = (3 * t + 4 * (1 << nref)) / 2;
            let v = e + 1 - t;
            assert_eq!(fem.nodes().len(), v + (k - 1) * e + (k - 1) * (k.saturating_sub(2)) / 2 * t);
            let area: f64 = fem.triangles().iter().map(|t| triangle_area(&t.corners)).sum();
            assert_relative_eq!(area, 1.0, max_relative = 1e-13);
            assert_eq!(fem.boundary().len(), 4 * (1 << nref));
            for seg in fem.boundary() {
                let edge = &sq.edges()[seg.edge];
                for (m, &node) in seg.nodes.iter().enumerate() {
                    let s = seg.s0 + (seg.s1 - seg.s0) * m as f64 / k as f64;
                    assert!((fem.nodes()[node] - edge.point_at(s)).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn reference_shape_functions() {
        let r = ReferenceData::new(3, 6).unwrap();
        for (q, phi) in r.phi.iter().enumerate() {
            assert_relative_eq!(phi.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
            for c in 0..3 {
                let s: f64 = r.dphi[q].iter().map(|d| d[c]).sum();
                // derivatives of a partition of unity sum to a constant along each direction
                let s0: f64 = r.dphi[0].iter().map(|d| d[c]).sum();
                assert_relative_eq!(s, s0, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn stiffness_kernel_is_rigid_motions() {
        let poly = hourglass_sequence(0).unwrap();
        let fem = FemSpace::new(&poly, 2, 1).unwrap();
        let k = fem.stiffness(&Material::compressible());
        let rm: [fn(&Point) -> Vector2<f64>; 3] = [
            |_| Vector2::new(1.0, 0.0),
            |_| Vector2::new(0.0, 1.0),
            |p| Vector2::new(-p.y, p.x),
        ];
        for f in rm {
            let z: Vec<f64> = fem.nodes().iter().flat_map(|x| {
                let v = f(x);
                [v.x, v.y]
            }).collect();
            let mut kz = vec![0.0; z.len()];
            for &(i, j, v) in &k {
                kz[i] += v * z[j];
            }
            assert!(kz.iter().all(|v| v.abs() < 1e-11));
        }
    }

    #[test]
    fn compatibility_of_basis_data() {
        let m = Material::compressible();
        let sq = unit_square();
        let s = HrLocalSpace::new(&sq, 1, &m).unwrap();
        // constant traction (1, 0) on the bottom edge
        let d = face_basis_data(&s, 0, 0).unwrap();
        let int_r: f64 = s.quadrature().integrate(|x| -d.body_force.eval(x).x);
        assert_relative_eq!(int_r, 1.0, max_relative = 1e-12);
        let hg = hourglass_sequence(0).unwrap();
        let s = HrLocalSpace::new(&hg, 2, &m).unwrap();
        for e in 0..hg.num_edges() {
            for mem in 0..6 {
                assert!(face_basis_data(&s, e, mem).unwrap().compatibility_residual(&s) < 1e-12);
            }
        }
        let t = HrLocalSpace::new(&reference_triangle(), 1, &m).unwrap();
        assert_eq!(t.rm_perp().len(), 3);
        for a in 0..3 {
            let d = bulk_basis_data(&t, a).unwrap();
            assert!(d.compatibility_residual(&t) < 1e-12);
            assert!(d.traction.iter().all(|t| t.is_none()));
        }
        assert!(face_basis_data(&t, 5, 0).is_err());
    }

    #[test]
    fn polynomial_stress_recovered() {
        // Data from q in T_p is reproduced exactly by the P_{p+1} space.
        let m = Material::compressible();
        let t = reference_triangle();
        let s = HrLocalSpace::new(&t, 2, &m).unwrap();
        let solver = LocalSolver::new(&s, &FemConfig::new(None, 1), Gauge::Volumetric).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DVector::from_fn(s.tensor_basis().basis.len(), |_, _| rng.random_range(-1.0..1.0));
        let mut tau = TensorPoly::new(s.frame(), Poly::zero(2), Poly::zero(2), Poly::zero(2));
        for (c, mem) in x.iter().zip(&s.tensor_basis().basis.members) {
            tau.axpy(*c, mem);
        }
        let dofs = s.dofs_of_polynomial(&tau).unwrap();
        let basis = solver.basis(&s).unwrap();
        let z: Vec<f64> = basis.displacement(&dofs).iter().copied().collect();
        let mut err: f64 = 0.0;
        let mut norm: f64 = 0.0;
        solver.fem().for_each_strain(&z, |x, w, e| {
            let d = m.c_apply(e) - tau.eval(x);
            err += w * d.ddot(d);
            norm += w * tau.eval(x).ddot(tau.eval(x));
        });
        assert!((err / norm).sqrt() < 1e-9, "{}", (err / norm).sqrt());
        // energy identity
        let exact: f64 = s.quadrature().integrate(|x| {
            let v = tau.eval(x);
            m.d_apply(v).ddot(v)
        });
        assert_relative_eq!(dofs.dot(&(&basis.b * &dofs)), exact, max_relative = 1e-9);
    }

    #[test]
    fn zero_data_and_energy_identity() {
        let m = Material::compressible();
        let hg = hourglass_sequence(1).unwrap();
        let s = HrLocalSpace::new(&hg, 1, &m).unwrap();
        let solver = LocalSolver::new(&s, &FemConfig::new(None, 1), Gauge::Volumetric).unwrap();
        let mut zero = face_basis_data(&s, 0, 0).unwrap();
        zero.body_force = VectorPoly::zero(s.frame(), 1);
        zero.traction = vec![None; 6];
        let z = solver.solve_local(&s, &zero).unwrap();
        assert!(z.amax() < 1e-14);
        let data = face_basis_data(&s, 2, 3).unwrap();
        let z = solver.solve_local(&s, &data).unwrap();
        let l = solver.load_vector(&s, &data);
        assert_relative_eq!(solver.energy(&z), l.dot(&z), max_relative = 1e-9);
        let mut bad = data.clone();
        bad.body_force = VectorPoly::zero(s.frame(), 1);
        assert!(matches!(solver.solve_local(&s, &bad), Err(Error::Incompatible(_))));
    }

    #[test]
    fn b_symmetric_spd_and_gauge_invariant() {
        let m = Material::compressible();
        let t = reference_triangle();
        let s = HrLocalSpace::new(&t, 1, &m).unwrap();
        let cfg = FemConfig::new(None, 2);
        let b1 = LocalSolver::new(&s, &cfg, Gauge::Volumetric).unwrap().basis(&s).unwrap().b;
        let b2 = LocalSolver::new(&s, &cfg, Gauge::BoundaryMoments).unwrap().basis(&s).unwrap().b;
        assert_eq!(b1.nrows(), 15);
        assert!(crate::hrspace::symmetry_defect(&b1) < 1e-12);
        assert!(b1.clone().symmetric_eigenvalues().min() > 0.0);
        assert!((&b1 - &b2).norm() < 1e-8 * b1.norm());
    }

    #[test]
    fn unisolvence_improves_with_refinement() {
        let s = HrLocalSpace::new(&reference_triangle(), 1, &Material::compressible()).unwrap();
        let d2 = unisolvence_check(&s, &FemConfig::new(Some(2), 2)).unwrap();
        let d3 = unisolvence_check(&s, &FemConfig::new(Some(2), 3)).unwrap();
        assert!(d3 < d2, "{d2} {d3}");
        assert!(d3 < 1e-1, "{d3}");
    }

    #[test]
    fn reduced_integration_kernel() {
        let poly = unit_square();
        let fem = FemSpace::new(&poly, 2, 0).unwrap();
        let k = fem.stiffness(&Material::incompressible());
        // rigid rotation stays in the kernel
        let z: Vec<f64> = fem.nodes().iter().flat_map(|x| [-(x.y - 0.5), x.x - 0.5]).collect();
        let mut kz = vec![0.0; z.len()];
        for &(i, j, v) in &k {
            kz[i] += v * z[j];
        }
        assert!(kz.iter().all(|v| v.abs() < 1e-6));
    }
}
