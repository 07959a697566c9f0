//! Scaled monomial bases on elements and edges, rigid body motions, their
//! L²-orthogonal complement and the stress space `T_p = C grad_S(P_{p+1})`.
//!
//! Every basis member is sup-normalized by sampling: boundary points (50 per
//! edge) plus interior quadrature nodes.

pub mod poly;
pub mod quadrature;

use nalgebra::{DMatrix, Vector2};

use crate::elasticity::Material;
use crate::error::Result;
use crate::geometry::{Edge, Point, Polygon};
pub use poly::{EdgePoly, EdgeVectorPoly, Frame, Poly, ScalarPoly, TensorPoly, VectorPoly};
pub use quadrature::{edge_quadrature, element_quadrature, EdgeRule, QuadratureRule};

pub const EDGE_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    ScalarOnElement,
    VectorOnElement,
    VectorOnEdge,
    RigidBody,
    RmPerp,
    TensorT,
}

#[derive(Debug, Clone)]
pub struct ScaledBasis<M> {
    pub kind: BasisKind,
    pub degree: usize,
    pub members: Vec<M>,
    /// Factor each raw member was multiplied by to reach unit sup-norm.
    pub normalization: Vec<f64>,
}

impl<M> ScaledBasis<M> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// The scaling frame `(x_K, h_K)` of an element.
pub fn element_frame(polygon: &Polygon) -> Frame {
    Frame::new(polygon.centroid(), polygon.diameter())
}

/// Sample points for sup-norm estimates on an element.
pub fn sample_points(polygon: &Polygon, degree: usize) -> Result<Vec<Point>> {
    let mut pts: Vec<Point> = polygon
        .edges()
        .iter()
        .flat_map(|e| {
            (0..EDGE_SAMPLES).map(move |i| {
                let t = i as f64 / EDGE_SAMPLES as f64;
                e.start + (e.end - e.start) * t
            })
        })
        .collect();
    pts.extend(element_quadrature(polygon, (2 * degree + 2).min(quadrature::MAX_DEGREE))?.points);
    Ok(pts)
}

fn sup_over(points: &[Point], f: impl Fn(&Point) -> f64) -> f64 {
    points.iter().map(f).fold(0.0, f64::max)
}

/// `((x - x_K)/h_K)^alpha`, sup-normalized.
pub fn scalar_monomials(polygon: &Polygon, p: usize) -> Result<ScaledBasis<ScalarPoly>> {
    let frame = element_frame(polygon);
    let samples = sample_points(polygon, p)?;
    let mut members = Vec::new();
    let mut normalization = Vec::new();
    for (i, j) in poly::exponents(p) {
        let m = ScalarPoly {
            frame,
            poly: Poly::monomial(p, i, j),
        };
        let s = 1.0 / sup_over(&samples, |x| m.eval(x).abs());
        members.push(ScalarPoly {
            frame,
            poly: m.poly.scale(s),
        });
        normalization.push(s);
    }
    Ok(ScaledBasis {
        kind: BasisKind::ScalarOnElement,
        degree: p,
        members,
        normalization,
    })
}

/// Unit Cartesian vectors times `s^j`, `s` in [-1, 1] the scaled arclength
/// from the midpoint; ordered component-major (`x` powers, then `y` powers).
pub fn edge_vector_monomials(edge: &Edge, p: usize) -> ScaledBasis<EdgeVectorPoly> {
    let _ = edge;
    let mut members = Vec::with_capacity(2 * (p + 1));
    let mut normalization = Vec::with_capacity(2 * (p + 1));
    for c in 0..2 {
        for j in 0..=p {
            let mut m = EdgeVectorPoly::zero(p);
            let target = if c == 0 { &mut m.x } else { &mut m.y };
            target.coeffs[j] = 1.0;
            let sup = (0..=EDGE_SAMPLES)
                .map(|i| -1.0 + 2.0 * i as f64 / EDGE_SAMPLES as f64)
                .map(|s| m.eval(s).norm())
                .fold(0.0, f64::max);
            let s = 1.0 / sup;
            let target = if c == 0 { &mut m.x } else { &mut m.y };
            target.coeffs[j] = s;
            members.push(m);
            normalization.push(s);
        }
    }
    ScaledBasis {
        kind: BasisKind::VectorOnEdge,
        degree: p,
        members,
        normalization,
    }
}

/// Monomial mass matrix `(m_a, m_b)_{0,K}` of scalar monomials up to `degree`.
pub fn monomial_mass(polygon: &Polygon, degree: usize) -> Result<DMatrix<f64>> {
    let frame = element_frame(polygon);
    let quad = element_quadrature(polygon, 2 * degree)?;
    let n = poly::dim(degree);
    let mut m = DMatrix::zeros(n, n);
    for (p, w) in quad.points.iter().zip(&quad.weights) {
        let v = frame.monomials(degree, p);
        for a in 0..n {
            let wa = w * v[a];
            for b in 0..=a {
                m[(a, b)] += wa * v[b];
            }
        }
    }
    m.fill_upper_triangle_with_lower_triangle();
    Ok(m)
}

/// L² inner products of vector polynomials through coefficient vectors.
pub struct VectorMass {
    degree: usize,
    scalar: DMatrix<f64>,
}

impl VectorMass {
    pub fn new(polygon: &Polygon, degree: usize) -> Result<Self> {
        Ok(VectorMass {
            degree,
            scalar: monomial_mass(polygon, degree)?,
        })
    }

    pub fn inner(&self, u: &VectorPoly, v: &VectorPoly) -> f64 {
        let u = u.raised(self.degree);
        let v = v.raised(self.degree);
        let (ux, uy) = (nalgebra::DVector::from_column_slice(u.x.coeffs()), nalgebra::DVector::from_column_slice(u.y.coeffs()));
        let (vx, vy) = (nalgebra::DVector::from_column_slice(v.x.coeffs()), nalgebra::DVector::from_column_slice(v.y.coeffs()));
        ux.dot(&(&self.scalar * vx)) + uy.dot(&(&self.scalar * vy))
    }

    pub fn gram(&self, basis: &[VectorPoly]) -> DMatrix<f64> {
        let n = basis.len();
        let mut g = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..=a {
                let v = self.inner(&basis[a], &basis[b]);
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }
}

fn normalize_vector(samples: &[Point], v: &VectorPoly) -> (VectorPoly, f64) {
    let s = 1.0 / sup_over(samples, |x| v.eval(x).norm());
    (v.scale(s), s)
}

/// Rigid body motions `(1,0)`, `(0,1)`, `(-(y - y_K), x - x_K)/h_K`, sup-normalized.
pub fn rm_basis(polygon: &Polygon) -> Result<ScaledBasis<VectorPoly>> {
    let frame = element_frame(polygon);
    let samples = sample_points(polygon, 1)?;
    let raw = rigid_motions(frame);
    let (members, normalization) = raw.iter().map(|v| normalize_vector(&samples, v)).unzip();
    Ok(ScaledBasis {
        kind: BasisKind::RigidBody,
        degree: 1,
        members,
        normalization,
    })
}

fn rigid_motions(frame: Frame) -> [VectorPoly; 3] {
    [
        VectorPoly::unit_monomial(frame, 1, 0, 0, 0),
        VectorPoly::unit_monomial(frame, 1, 1, 0, 0),
        VectorPoly::new(frame, Poly::monomial(1, 0, 1).scale(-1.0), Poly::monomial(1, 1, 0)),
    ]
}

/// Vector monomials of degree at most `degree` with their rigid-motion
/// component removed (classical Gram–Schmidt, one reorthogonalization pass).
/// A candidate is skipped when it is dependent on rigid motions and the
/// candidates already accepted.
fn rm_complement(polygon: &Polygon, degree: usize) -> Result<Vec<VectorPoly>> {
    let frame = element_frame(polygon);
    let mass = VectorMass::new(polygon, degree)?;

    let orthogonalize = |v: &mut VectorPoly, against: &[VectorPoly]| {
        for _ in 0..2 {
            let coefs: Vec<f64> = against.iter().map(|q| mass.inner(v, q)).collect();
            for (c, q) in coefs.iter().zip(against) {
                v.axpy(-c, q);
            }
        }
    };

    let mut onb: Vec<VectorPoly> = Vec::new();
    for r in rigid_motions(frame) {
        let mut v = r.raised(degree);
        orthogonalize(&mut v, &onb);
        let n = mass.inner(&v, &v).sqrt();
        onb.push(v.scale(1.0 / n));
    }
    let n_rm = onb.len();

    let mut out = Vec::new();
    for &(i, j) in poly::exponents(degree).iter().skip(1) {
        for c in 0..2 {
            let raw = VectorPoly::unit_monomial(frame, degree, c, i, j);
            let raw_norm = mass.inner(&raw, &raw).sqrt();
            let mut full = raw.clone();
            orthogonalize(&mut full, &onb);
            let n = mass.inner(&full, &full).sqrt();
            if n < 1e-6 * raw_norm {
                continue;
            }
            onb.push(full.scale(1.0 / n));
            let mut v = raw;
            orthogonalize(&mut v, &onb[..n_rm]);
            out.push(v);
        }
    }
    debug_assert_eq!(out.len(), 2 * poly::dim(degree) - 3);
    Ok(out)
}

/// Basis of vector polynomials of degree `p` that are L²(K)-orthogonal to
/// rigid motions; dimension `(p+1)(p+2) - 3`.
pub fn rm_perp_basis(polygon: &Polygon, p: usize) -> Result<ScaledBasis<VectorPoly>> {
    if p == 0 {
        return Ok(ScaledBasis {
            kind: BasisKind::RmPerp,
            degree: 0,
            members: Vec::new(),
            normalization: Vec::new(),
        });
    }
    let samples = sample_points(polygon, p)?;
    let (members, normalization) = rm_complement(polygon, p)?
        .iter()
        .map(|v| normalize_vector(&samples, v))
        .unzip();
    Ok(ScaledBasis {
        kind: BasisKind::RmPerp,
        degree: p,
        members,
        normalization,
    })
}

/// `T_p(K)` together with the displacements that generate it.
#[derive(Debug, Clone)]
pub struct TensorTBasis {
    pub basis: ScaledBasis<TensorPoly>,
    /// `basis.members[a] == C grad_S generators[a]`.
    pub generators: Vec<VectorPoly>,
}

/// `C grad_S q` for `q` ranging over `P_{p+1}` modulo rigid motions.
pub fn tensor_t_basis(polygon: &Polygon, p: usize, material: &Material) -> Result<TensorTBasis> {
    let samples = sample_points(polygon, p + 1)?;
    let mut members = Vec::new();
    let mut generators = Vec::new();
    let mut normalization = Vec::new();
    for q in rm_complement(polygon, p + 1)? {
        let t = q.sym_grad().apply_c(material);
        let s = 1.0 / sup_over(&samples, |x| t.eval(x).norm());
        members.push(t.scale(s));
        generators.push(q.scale(s));
        normalization.push(s);
    }
    Ok(TensorTBasis {
        basis: ScaledBasis {
            kind: BasisKind::TensorT,
            degree: p,
            members,
            normalization,
        },
        generators,
    })
}

/// `sup |v|` over the sample set (used by tests and diagnostics).
pub fn sampled_sup(polygon: &Polygon, degree: usize, f: impl Fn(&Point) -> Vector2<f64>) -> Result<f64> {
    Ok(sup_over(&sample_points(polygon, degree)?, |x| f(x).norm()))
}
