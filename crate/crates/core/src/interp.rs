//! Interpolation of smooth stresses onto the local space, the commuting
//! divergence identity, and interpolation-error convergence studies.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DVector, Matrix2, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eigenstudy::par_map;
use crate::elasticity::{Material, SymTensor};
use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon};
use crate::hrspace::HrLocalSpace;
use crate::localsolver::{FemConfig, Gauge, LocalSolver};
use crate::polybasis::poly::{self, VectorPoly};
use crate::polybasis::{element_frame, element_quadrature, monomial_mass};

/// Value, gradient (`grad[(c, j)] = d_j w_c`) and Hessians of a displacement.
#[derive(Debug, Clone, Copy)]
pub struct Jet {
    pub value: Vector2<f64>,
    pub grad: Matrix2<f64>,
    pub hess: [Matrix2<f64>; 2],
}

/// One plane wave `amp * sin(k . x + phase)` in a single component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub component: usize,
    pub amp: f64,
    pub k: [f64; 2],
    pub phase: f64,
}

/// Smooth manufactured displacements with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Displacement {
    /// `(sin pi x sin pi y, cos pi x cos pi y)`
    Trig,
    /// `(sin pi x sin pi y, x^2 y^3)`
    Mixed,
    /// `((1 + x + 2y)^n, (1 - 2x + y)^n)`
    Polynomial(usize),
    Waves(Vec<Wave>),
}

fn linear_power(n: usize, a: f64, b: f64, x: &Point) -> (f64, Vector2<f64>, Matrix2<f64>) {
    let l = 1.0 + a * x.x + b * x.y;
    let nf = n as f64;
    let pw = |m: usize| if n >= m { l.powi((n - m) as i32) } else { 0.0 };
    let d = Vector2::new(a, b);
    (pw(0), nf * pw(1) * d, nf * (nf - 1.0) * pw(2) * d * d.transpose())
}

impl Displacement {
    pub fn jet(&self, x: &Point) -> Jet {
        let mut jet = Jet {
            value: Vector2::zeros(),
            grad: Matrix2::zeros(),
            hess: [Matrix2::zeros(); 2],
        };
        let (sx, cx) = (PI * x.x).sin_cos();
        let (sy, cy) = (PI * x.y).sin_cos();
        let pp = PI * PI;
        let first_trig = |jet: &mut Jet| {
            jet.value.x = sx * sy;
            jet.grad[(0, 0)] = PI * cx * sy;
            jet.grad[(0, 1)] = PI * sx * cy;
            jet.hess[0] = Matrix2::new(-pp * sx * sy, pp * cx * cy, pp * cx * cy, -pp * sx * sy);
        };
        match self {
            Displacement::Trig => {
                first_trig(&mut jet);
                jet.value.y = cx * cy;
                jet.grad[(1, 0)] = -PI * sx * cy;
                jet.grad[(1, 1)] = -PI * cx * sy;
                jet.hess[1] = Matrix2::new(-pp * cx * cy, pp * sx * sy, pp * sx * sy, -pp * cx * cy);
            }
            Displacement::Mixed => {
                first_trig(&mut jet);
                let (x, y) = (x.x, x.y);
                jet.value.y = x * x * y.powi(3);
                jet.grad[(1, 0)] = 2.0 * x * y.powi(3);
                jet.grad[(1, 1)] = 3.0 * x * x * y * y;
                let mxy = 6.0 * x * y * y;
                jet.hess[1] = Matrix2::new(2.0 * y.powi(3), mxy, mxy, 6.0 * x * x * y);
            }
            Displacement::Polynomial(n) => {
                for (c, (a, b)) in [(1.0, 2.0), (-2.0, 1.0)].into_iter().enumerate() {
                    let (v, g, h) = linear_power(*n, a, b, x);
                    jet.value[c] = v;
                    jet.grad.set_row(c, &g.transpose());
                    jet.hess[c] = h;
                }
            }
            Displacement::Waves(waves) => {
                for w in waves {
                    let k = Vector2::new(w.k[0], w.k[1]);
                    let (s, c) = (k.x * x.x + k.y * x.y + w.phase).sin_cos();
                    jet.value[w.component] += w.amp * s;
                    let g = w.amp * c * k;
                    jet.grad[(w.component, 0)] += g.x;
                    jet.grad[(w.component, 1)] += g.y;
                    jet.hess[w.component] -= w.amp * s * k * k.transpose();
                }
            }
        }
        jet
    }

    /// `count` waves per component with random unit-order wavenumbers.
    pub fn random_waves(rng: &mut impl Rng, count: usize) -> Self {
        let mut waves = Vec::with_capacity(2 * count);
        for component in 0..2 {
            for _ in 0..count {
                waves.push(Wave {
                    component,
                    amp: rng.random_range(-1.0..1.0),
                    k: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                    phase: rng.random_range(0.0..2.0 * PI),
                });
            }
        }
        Displacement::Waves(waves)
    }

    /// Parses `preset:trig`, `preset:mixed` or `poly:<n>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let body = s.strip_prefix("preset:").unwrap_or(s);
        match body {
            "trig" => Ok(Displacement::Trig),
            "mixed" => Ok(Displacement::Mixed),
            _ => match body.strip_prefix("poly:") {
                Some(n) => n
                    .parse()
                    .map(Displacement::Polynomial)
                    .map_err(|_| Error::Parse(format!("bad polynomial degree in '{s}'"))),
                None => Err(Error::Parse(format!(
                    "unknown displacement '{s}' (expected preset:trig, preset:mixed or poly:<n>)"
                ))),
            },
        }
    }
}

impl fmt::Display for Displacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Displacement::Trig => write!(f, "preset:trig"),
            Displacement::Mixed => write!(f, "preset:mixed"),
            Displacement::Polynomial(n) => write!(f, "poly:{n}"),
            Displacement::Waves(w) => write!(f, "waves:{}", w.len()),
        }
    }
}

type TensorField = Arc<dyn Fn(&Point) -> SymTensor + Send + Sync>;
type VectorField = Arc<dyn Fn(&Point) -> Vector2<f64> + Send + Sync>;

/// A stress field known pointwise together with its divergence.
#[derive(Clone)]
pub struct AnalyticStress {
    sigma: TensorField,
    div: VectorField,
}

impl AnalyticStress {
    /// Stress and divergence supplied directly.
    pub fn raw(
        sigma: impl Fn(&Point) -> SymTensor + Send + Sync + 'static,
        div: impl Fn(&Point) -> Vector2<f64> + Send + Sync + 'static,
    ) -> Self {
        AnalyticStress {
            sigma: Arc::new(sigma),
            div: Arc::new(div),
        }
    }

    /// `sigma = C grad_S w`.
    pub fn from_displacement(w: Displacement, material: &Material) -> Self {
        let (lambda, mu) = (material.lambda(), material.mu());
        let m = *material;
        let w2 = w.clone();
        let sigma = move |x: &Point| {
            let g = w.jet(x).grad;
            m.c_apply(SymTensor::new(g[(0, 0)], g[(1, 1)], 0.5 * (g[(0, 1)] + g[(1, 0)])))
        };
        // div C grad_S w = mu lap w + (lambda + mu) grad div w
        let div = move |x: &Point| {
            let h = w2.jet(x).hess;
            Vector2::from_fn(|i, _| {
                let lap = h[i][(0, 0)] + h[i][(1, 1)];
                let grad_div = h[0][(i, 0)] + h[1][(i, 1)];
                mu * lap + (lambda + mu) * grad_div
            })
        };
        AnalyticStress::raw(sigma, div)
    }

    pub fn sigma(&self, x: &Point) -> SymTensor {
        (self.sigma)(x)
    }

    pub fn div(&self, x: &Point) -> Vector2<f64> {
        (self.div)(x)
    }
}

impl fmt::Debug for AnalyticStress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AnalyticStress")
    }
}

/// Exactness used for interpolation moments. Transcendental stresses need
/// far more than `2p + 6` to push quadrature error below 1e-9.
pub fn default_quad_degree(p: usize) -> usize {
    (2 * p + 6).max(20)
}

/// DOF vector of the interpolant.
pub fn interpolate(space: &HrLocalSpace, sigma: &AnalyticStress, degree: usize) -> Result<DVector<f64>> {
    space.dofs_of_field(|x| sigma.sigma(x), |x| sigma.div(x), degree)
}

/// Full `L^2` projection of `f` onto vector polynomials of degree `p`.
pub fn l2_projection(
    polygon: &Polygon,
    p: usize,
    f: impl Fn(&Point) -> Vector2<f64>,
    degree: usize,
) -> Result<VectorPoly> {
    let frame = element_frame(polygon);
    let mass = monomial_mass(polygon, p)?;
    let chol = mass
        .cholesky()
        .ok_or_else(|| Error::Singular("monomial mass".into()))?;
    let quad = element_quadrature(polygon, degree)?;
    let n = poly::dim(p);
    let mut rhs = nalgebra::DMatrix::<f64>::zeros(n, 2);
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let v = f(x);
        for (a, m) in frame.monomials(p, x).iter().enumerate() {
            rhs[(a, 0)] += w * m * v.x;
            rhs[(a, 1)] += w * m * v.y;
        }
    }
    let c = chol.solve(&rhs);
    let coeffs: Vec<f64> = c.column(0).iter().chain(c.column(1).iter()).copied().collect();
    Ok(VectorPoly::from_coeffs(frame, p, &coeffs))
}

fn l2_distance(polygon: &Polygon, degree: usize, f: impl Fn(&Point) -> Vector2<f64>) -> Result<f64> {
    let quad = element_quadrature(polygon, degree)?;
    Ok(quad.integrate(|x| f(x).norm_squared()).max(0.0).sqrt())
}

/// `|| div sigma_I - P_p div sigma ||_K`, zero up to quadrature error.
pub fn div_commutes_residual(space: &HrLocalSpace, sigma: &AnalyticStress, degree: usize) -> Result<f64> {
    let dofs = interpolate(space, sigma, degree)?;
    let div_i = space.div_from_dofs(&dofs)?;
    let proj = l2_projection(space.polygon(), space.degree(), |x| sigma.div(x), degree)?;
    l2_distance(space.polygon(), 2 * space.degree(), |x| div_i.eval(x) - proj.eval(x))
}

/// `|| (I - P_p) div sigma ||_K` through the projection alone.
pub fn div_projection_error(space: &HrLocalSpace, sigma: &AnalyticStress, degree: usize) -> Result<f64> {
    let proj = l2_projection(space.polygon(), space.degree(), |x| sigma.div(x), degree)?;
    l2_distance(space.polygon(), degree, |x| sigma.div(x) - proj.eval(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpErrors {
    /// `|| div sigma - div sigma_I ||_K`
    pub e_div: f64,
    /// `|| sigma - sigma_I ||_K` with the surrogate interpolant.
    pub e_l2: f64,
    /// `|e_l2(nref) - e_l2(nref + 1)|`, when requested.
    pub surrogate: Option<f64>,
}

fn surrogate_l2_error(space: &HrLocalSpace, sigma: &AnalyticStress, dofs: &DVector<f64>, fem: &FemConfig) -> Result<f64> {
    let solver = LocalSolver::new(space, fem, Gauge::Volumetric)?;
    let basis = solver.basis(space)?;
    let z = basis.displacement(dofs);
    let material = space.material();
    let mut acc = 0.0;
    solver.fem().for_each_strain(z.as_slice(), |x, w, eps| {
        let d = sigma.sigma(x) - material.c_apply(eps);
        acc += w * d.ddot(d);
    });
    Ok(acc.max(0.0).sqrt())
}

/// Interpolation errors on one element. `estimate` adds the surrogate
/// self-estimate from one extra refinement.
pub fn interp_errors(space: &HrLocalSpace, sigma: &AnalyticStress, fem: &FemConfig, estimate: bool) -> Result<InterpErrors> {
    let degree = default_quad_degree(space.degree());
    let dofs = interpolate(space, sigma, degree)?;
    let div_i = space.div_from_dofs(&dofs)?;
    let e_div = l2_distance(space.polygon(), degree, |x| sigma.div(x) - div_i.eval(x))?;
    let e_l2 = surrogate_l2_error(space, sigma, &dofs, fem)?;
    let surrogate = if estimate {
        Some((surrogate_l2_error(space, sigma, &dofs, &fem.refined())? - e_l2).abs())
    } else {
        None
    };
    Ok(InterpErrors { e_div, e_l2, surrogate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshFamily {
    SquareGrid,
    TriangleGrid,
    TrapezoidGrid,
}

impl MeshFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "square-grid" => Ok(MeshFamily::SquareGrid),
            "triangle-grid" => Ok(MeshFamily::TriangleGrid),
            "trapezoid-grid" => Ok(MeshFamily::TrapezoidGrid),
            other => Err(Error::Parse(format!(
                "unknown mesh family '{other}' (expected square-grid, triangle-grid or trapezoid-grid)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MeshFamily::SquareGrid => "square-grid",
            MeshFamily::TriangleGrid => "triangle-grid",
            MeshFamily::TrapezoidGrid => "trapezoid-grid",
        }
    }

    /// Elements of the unit square mesh with `n x n` cells.
    pub fn mesh(&self, n: usize) -> Result<Vec<Polygon>> {
        let h = 1.0 / n as f64;
        let mut out = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let (x0, y0) = (i as f64 * h, j as f64 * h);
                let (x1, y1) = (x0 + h, y0 + h);
                match self {
                    MeshFamily::SquareGrid => {
                        out.push(Polygon::from_coords(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)])?);
                    }
                    MeshFamily::TriangleGrid => {
                        out.push(Polygon::from_coords(&[(x0, y0), (x1, y0), (x1, y1)])?);
                        out.push(Polygon::from_coords(&[(x0, y0), (x1, y1), (x0, y1)])?);
                    }
                    MeshFamily::TrapezoidGrid => {
                        let (a, b) = (x0 + 0.4 * h, x0 + 0.6 * h);
                        out.push(Polygon::from_coords(&[(x0, y0), (a, y0), (b, y1), (x0, y1)])?);
                        out.push(Polygon::from_coords(&[(a, y0), (x1, y0), (x1, y1), (b, y1)])?);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub h: f64,
    pub e_div: f64,
    pub e_l2: f64,
    /// `None` on the coarsest level.
    pub rate_div: Option<f64>,
    pub rate_l2: Option<f64>,
}

/// Global errors `sqrt(sum_K e_K^2)` on meshes with `2, 4, ..., 2^levels`
/// cells per side, with observed orders between consecutive levels.
pub fn convergence_study(
    family: MeshFamily,
    levels: usize,
    p: usize,
    sigma: &AnalyticStress,
    material: &Material,
    fem: &FemConfig,
) -> Result<Vec<RateRow>> {
    let mut rows: Vec<RateRow> = Vec::with_capacity(levels);
    for level in 1..=levels {
        let n = 1usize << level;
        let elements = family.mesh(n)?;
        let per_element = par_map(&elements, |poly| {
            let space = HrLocalSpace::new(poly, p, material)?;
            interp_errors(&space, sigma, fem, false)
        });
        let (mut sd, mut sl) = (0.0, 0.0);
        for e in per_element {
            let e = e?;
            sd += e.e_div * e.e_div;
            sl += e.e_l2 * e.e_l2;
        }
        let (e_div, e_l2) = (sd.sqrt(), sl.sqrt());
        let rate = |prev: f64, cur: f64| (prev / cur).log2();
        let (rate_div, rate_l2) = match rows.last() {
            Some(prev) => (Some(rate(prev.e_div, e_div)), Some(rate(prev.e_l2, e_l2))),
            None => (None, None),
        };
        log::debug!("{} n={n}: e_div={e_div:e} e_l2={e_l2:e}", family.name());
        rows.push(RateRow {
            h: 1.0 / n as f64,
            e_div,
            e_l2,
            rate_div,
            rate_l2,
        });
    }
    Ok(rows)
}
