//! Bivariate polynomials in scaled, shifted monomials `((x - xc)/h)^i ((y - yc)/h)^j`.

use nalgebra::{DVector, Vector2};

use crate::elasticity::{Material, SymTensor};
use crate::geometry::Point;

/// Number of bivariate monomials of total degree at most `n`.
pub fn dim(n: usize) -> usize {
    (n + 1) * (n + 2) / 2
}

/// Exponents `(i, j)` ordered by total degree, then by increasing `j`.
pub fn exponents(n: usize) -> Vec<(usize, usize)> {
    (0..=n)
        .flat_map(|d| (0..=d).map(move |j| (d - j, j)))
        .collect()
}

pub fn index(i: usize, j: usize) -> usize {
    let d = i + j;
    d * (d + 1) / 2 + j
}

/// Values of all monomials of degree at most `n` at `(xi, eta)`.
pub fn monomial_values(n: usize, xi: f64, eta: f64) -> Vec<f64> {
    let mut px = vec![1.0; n + 1];
    let mut py = vec![1.0; n + 1];
    for k in 1..=n {
        px[k] = px[k - 1] * xi;
        py[k] = py[k - 1] * eta;
    }
    let mut out = Vec::with_capacity(dim(n));
    for d in 0..=n {
        for j in 0..=d {
            out.push(px[d - j] * py[j]);
        }
    }
    out
}

/// Shift and scale of a local coordinate system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub center: Point,
    pub h: f64,
}

impl Frame {
    pub fn new(center: Point, h: f64) -> Self {
        Frame { center, h }
    }

    pub fn local(&self, p: &Point) -> (f64, f64) {
        ((p.x - self.center.x) / self.h, (p.y - self.center.y) / self.h)
    }

    pub fn monomials(&self, n: usize, p: &Point) -> Vec<f64> {
        let (xi, eta) = self.local(p);
        monomial_values(n, xi, eta)
    }
}

/// Coefficients with respect to [`exponents`]; frame-free.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    degree: usize,
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn zero(degree: usize) -> Self {
        Poly {
            degree,
            coeffs: vec![0.0; dim(degree)],
        }
    }

    pub fn monomial(degree: usize, i: usize, j: usize) -> Self {
        assert!(i + j <= degree);
        let mut p = Poly::zero(degree);
        p.coeffs[index(i, j)] = 1.0;
        p
    }

    pub fn from_coeffs(degree: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), dim(degree));
        Poly { degree, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, xi: f64, eta: f64) -> f64 {
        monomial_values(self.degree, xi, eta)
            .iter()
            .zip(&self.coeffs)
            .map(|(m, c)| m * c)
            .sum()
    }

    /// Dot product with precomputed monomial values (at least as many as coefficients).
    pub fn eval_with(&self, monomials: &[f64]) -> f64 {
        self.coeffs.iter().zip(monomials).map(|(c, m)| c * m).sum()
    }

    /// Same polynomial stored with a larger degree bound.
    pub fn raised(&self, degree: usize) -> Self {
        assert!(degree >= self.degree);
        let mut c = self.coeffs.clone();
        c.resize(dim(degree), 0.0);
        Poly { degree, coeffs: c }
    }

    pub fn d_xi(&self) -> Self {
        self.derivative(0)
    }

    pub fn d_eta(&self) -> Self {
        self.derivative(1)
    }

    fn derivative(&self, var: usize) -> Self {
        let n = self.degree.saturating_sub(1);
        let mut out = Poly::zero(n);
        if self.degree == 0 {
            return out;
        }
        for (k, &(i, j)) in exponents(self.degree).iter().enumerate() {
            let c = self.coeffs[k];
            if c == 0.0 {
                continue;
            }
            match var {
                0 if i > 0 => out.coeffs[index(i - 1, j)] += c * i as f64,
                1 if j > 0 => out.coeffs[index(i, j - 1)] += c * j as f64,
                _ => {}
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Poly {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &Poly) -> Self {
        let n = self.degree.max(other.degree);
        let mut a = self.raised(n);
        for (x, y) in a.coeffs.iter_mut().zip(&other.coeffs) {
            *x += y;
        }
        a
    }

    pub fn axpy(&mut self, a: f64, other: &Poly) {
        if other.degree > self.degree {
            *self = self.raised(other.degree);
        }
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPoly {
    pub frame: Frame,
    pub poly: Poly,
}

impl ScalarPoly {
    pub fn eval(&self, p: &Point) -> f64 {
        let (xi, eta) = self.frame.local(p);
        self.poly.eval(xi, eta)
    }
}

/// Vector polynomial on a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPoly {
    pub frame: Frame,
    pub x: Poly,
    pub y: Poly,
}

impl VectorPoly {
    pub fn zero(frame: Frame, degree: usize) -> Self {
        VectorPoly {
            frame,
            x: Poly::zero(degree),
            y: Poly::zero(degree),
        }
    }

    pub fn new(frame: Frame, x: Poly, y: Poly) -> Self {
        let n = x.degree().max(y.degree());
        VectorPoly {
            frame,
            x: x.raised(n),
            y: y.raised(n),
        }
    }

    /// `e_component * m_(i,j)`.
    pub fn unit_monomial(frame: Frame, degree: usize, component: usize, i: usize, j: usize) -> Self {
        let m = Poly::monomial(degree, i, j);
        let z = Poly::zero(degree);
        if component == 0 {
            VectorPoly::new(frame, m, z)
        } else {
            VectorPoly::new(frame, z, m)
        }
    }

    pub fn degree(&self) -> usize {
        self.x.degree()
    }

    pub fn eval(&self, p: &Point) -> Vector2<f64> {
        let m = self.frame.monomials(self.degree(), p);
        Vector2::new(self.x.eval_with(&m), self.y.eval_with(&m))
    }

    pub fn eval_with(&self, monomials: &[f64]) -> Vector2<f64> {
        Vector2::new(self.x.eval_with(monomials), self.y.eval_with(monomials))
    }

    /// Coefficients `[x..., y...]` at the stored degree.
    pub fn coeffs(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * dim(self.degree()),
            self.x.coeffs().iter().chain(self.y.coeffs()).copied(),
        )
    }

    pub fn from_coeffs(frame: Frame, degree: usize, c: &[f64]) -> Self {
        let m = dim(degree);
        assert_eq!(c.len(), 2 * m);
        VectorPoly {
            frame,
            x: Poly::from_coeffs(degree, c[..m].to_vec()),
            y: Poly::from_coeffs(degree, c[m..].to_vec()),
        }
    }

    pub fn raised(&self, degree: usize) -> Self {
        VectorPoly {
            frame: self.frame,
            x: self.x.raised(degree),
            y: self.y.raised(degree),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        VectorPoly {
            frame: self.frame,
            x: self.x.scale(s),
            y: self.y.scale(s),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &VectorPoly) {
        self.x.axpy(a, &other.x);
        self.y.axpy(a, &other.y);
    }

    /// Symmetric gradient in physical coordinates.
    pub fn sym_grad(&self) -> TensorPoly {
        let s = 1.0 / self.frame.h;
        let xx = self.x.d_xi().scale(s);
        let yy = self.y.d_eta().scale(s);
        let xy = self.x.d_eta().add(&self.y.d_xi()).scale(0.5 * s);
        TensorPoly::new(self.frame, xx, yy, xy)
    }
}

/// Symmetric-tensor-valued polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorPoly {
    pub frame: Frame,
    pub xx: Poly,
    pub yy: Poly,
    pub xy: Poly,
}

impl TensorPoly {
    pub fn new(frame: Frame, xx: Poly, yy: Poly, xy: Poly) -> Self {
        let n = xx.degree().max(yy.degree()).max(xy.degree());
        TensorPoly {
            frame,
            xx: xx.raised(n),
            yy: yy.raised(n),
            xy: xy.raised(n),
        }
    }

    pub fn degree(&self) -> usize {
        self.xx.degree()
    }

    pub fn eval(&self, p: &Point) -> SymTensor {
        let m = self.frame.monomials(self.degree(), p);
        self.eval_with(&m)
    }

    pub fn eval_with(&self, m: &[f64]) -> SymTensor {
        SymTensor::new(self.xx.eval_with(m), self.yy.eval_with(m), self.xy.eval_with(m))
    }

    pub fn div(&self) -> VectorPoly {
        let s = 1.0 / self.frame.h;
        let x = self.xx.d_xi().add(&self.xy.d_eta()).scale(s);
        let y = self.xy.d_xi().add(&self.yy.d_eta()).scale(s);
        VectorPoly::new(self.frame, x, y)
    }

    /// Pointwise application of a constant material law.
    pub fn map_material(&self, f: impl Fn(SymTensor) -> SymTensor) -> TensorPoly {
        let n = dim(self.degree());
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let base = [f(SymTensor::new(1.0, 0.0, 0.0)), f(SymTensor::new(0.0, 1.0, 0.0)), f(SymTensor::new(0.0, 0.0, 1.0))];
        for k in 0..n {
            let src = [self.xx.coeffs()[k], self.yy.coeffs()[k], self.xy.coeffs()[k]];
            for (s, b) in src.iter().zip(&base) {
                out[0][k] += s * b.xx;
                out[1][k] += s * b.yy;
                out[2][k] += s * b.xy;
            }
        }
        let [xx, yy, xy] = out;
        let d = self.degree();
        TensorPoly::new(self.frame, Poly::from_coeffs(d, xx), Poly::from_coeffs(d, yy), Poly::from_coeffs(d, xy))
    }

    pub fn apply_c(&self, material: &Material) -> TensorPoly {
        self.map_material(|t| material.c_apply(t))
    }

    pub fn scale(&self, s: f64) -> Self {
        TensorPoly::new(self.frame, self.xx.scale(s), self.yy.scale(s), self.xy.scale(s))
    }

    pub fn axpy(&mut self, a: f64, other: &TensorPoly) {
        self.xx.axpy(a, &other.xx);
        self.yy.axpy(a, &other.yy);
        self.xy.axpy(a, &other.xy);
    }
}

/// Polynomial in the scaled edge coordinate `s` in [-1, 1], as power coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePoly {
    pub coeffs: Vec<f64>,
}

impl EdgePoly {
    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

/// Vector polynomial along an edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVectorPoly {
    pub x: EdgePoly,
    pub y: EdgePoly,
}

impl EdgeVectorPoly {
    pub fn eval(&self, s: f64) -> Vector2<f64> {
        Vector2::new(self.x.eval(s), self.y.eval(s))
    }

    pub fn zero(degree: usize) -> Self {
        EdgeVectorPoly {
            x: EdgePoly { coeffs: vec![0.0; degree + 1] },
            y: EdgePoly { coeffs: vec![0.0; degree + 1] },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponent_layout() {
        let e = exponents(2);
        assert_eq!(e, vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]);
        for (k, &(i, j)) in exponents(6).iter().enumerate() {
            assert_eq!(index(i, j), k);
        }
        assert_eq!(dim(6), 28);
    }

    #[test]
    fn derivatives() {
        // 3 xi^2 eta + eta^3
        let mut p = Poly::zero(3);
        p.axpy(3.0, &Poly::monomial(3, 2, 1));
        p.axpy(1.0, &Poly::monomial(3, 0, 3));
        let (x, y) = (0.3, -0.7);
        assert_relative_eq!(p.d_xi().eval(x, y), 6.0 * x * y, epsilon = 1e-15);
        assert_relative_eq!(p.d_eta().eval(x, y), 3.0 * x * x + 3.0 * y * y, epsilon = 1e-15);
    }

    #[test]
    fn divergence_of_known_tensor() {
        // unscaled tau = [[6x, 0], [0, 2x]] has div (6, 0)
        let frame = Frame::new(Point::origin(), 1.0);
        let t = TensorPoly::new(
            frame,
            Poly::monomial(1, 1, 0).scale(6.0),
            Poly::monomial(1, 1, 0).scale(2.0),
            Poly::zero(1),
        );
        let d = t.div();
        let v = d.eval(&Point::new(0.4, 0.9));
        assert_relative_eq!(v, Vector2::new(6.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn sym_grad_of_rigid_motion_vanishes() {
        let frame = Frame::new(Point::new(0.2, 0.1), 0.7);
        let rot = VectorPoly::new(frame, Poly::monomial(1, 0, 1).scale(-1.0), Poly::monomial(1, 1, 0));
        let e = rot.sym_grad();
        for c in [&e.xx, &e.yy, &e.xy] {
            assert!(c.coeffs().iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn frame_scaling_in_derivatives() {
        let frame = Frame::new(Point::new(1.0, 2.0), 0.5);
        // u = (xi^2, 0) = ((x-1)/0.5)^2 -> du/dx = 2 (x-1)/0.25
        let u = VectorPoly::unit_monomial(frame, 2, 0, 2, 0);
        let p = Point::new(1.3, 2.2);
        assert_relative_eq!(u.sym_grad().eval(&p).xx, 2.0 * 0.3 / 0.25, epsilon = 1e-14);
    }
}
