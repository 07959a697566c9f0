//! Gauss–Legendre edge rules and collapsed-coordinate triangle rules mapped
//! over the centroid fan.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{subtriangulate, Edge, Point, Polygon};

pub const MAX_DEGREE: usize = 30;

/// Gauss–Legendre nodes and weights on [-1, 1] (Golub–Welsch), ascending nodes.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut jac = DMatrix::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        jac[(k, k - 1)] = b;
        jac[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize to remove eigen-solver noise.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn append_triangle(&mut self, tri: &[Point; 3], rule: &CollapsedRule) {
        let CollapsedRule { su, wu, sv, wv } = rule;
        let e1 = tri[1] - tri[0];
        let e2 = tri[2] - tri[0];
        let jac = e1.x * e2.y - e1.y * e2.x;
        for (a, wa) in su.iter().zip(wu) {
            let u = 0.5 * (1.0 + a);
            for (b, wb) in sv.iter().zip(wv) {
                let v = 0.5 * (1.0 + b);
                let l1 = u;
                let l2 = (1.0 - u) * v;
                self.points.push(tri[0] + e1 * l1 + e2 * l2);
                self.weights.push(0.25 * wa * wb * jac * (1.0 - u));
            }
        }
    }
}

struct CollapsedRule {
    su: Vec<f64>,
    wu: Vec<f64>,
    sv: Vec<f64>,
    wv: Vec<f64>,
}

impl CollapsedRule {
    fn new(degree: usize) -> Self {
        // The collapsed direction carries one extra power from the Jacobian.
        let (su, wu) = gauss_legendre((degree + 3) / 2);
        let (sv, wv) = gauss_legendre(degree / 2 + 1);
        CollapsedRule { su, wu, sv, wv }
    }
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_DEGREE {
        return Err(Error::UnsupportedQuadratureDegree(degree));
    }
    Ok(())
}

/// Rule exact for polynomials of total degree `degree` on one triangle.
pub fn triangle_quadrature(tri: &[Point; 3], degree: usize) -> Result<QuadratureRule> {
    check_degree(degree)?;
    let mut rule = QuadratureRule {
        points: Vec::new(),
        weights: Vec::new(),
        degree,
    };
    rule.append_triangle(tri, &CollapsedRule::new(degree));
    Ok(rule)
}

/// Rule exact for polynomials of total degree `degree` on a polygon that is
/// star-shaped with respect to its centroid.
pub fn element_quadrature(polygon: &Polygon, degree: usize) -> Result<QuadratureRule> {
    check_degree(degree)?;
    let fan = subtriangulate(polygon, 0)?;
    let mut rule = QuadratureRule {
        points: Vec::new(),
        weights: Vec::new(),
        degree,
    };
    let collapsed = CollapsedRule::new(degree);
    for t in &fan.triangles {
        rule.append_triangle(t, &collapsed);
    }
    Ok(rule)
}

/// Gauss–Legendre rule on an edge.
#[derive(Debug, Clone)]
pub struct EdgeRule {
    /// Scaled edge coordinates in [-1, 1].
    pub params: Vec<f64>,
    pub points: Vec<Point>,
    /// Physical weights; they sum to the edge length.
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl EdgeRule {
    pub fn integrate(&self, f: impl Fn(f64, &Point) -> f64) -> f64 {
        self.params
            .iter()
            .zip(&self.points)
            .zip(&self.weights)
            .map(|((s, p), w)| w * f(*s, p))
            .sum()
    }
}

pub fn edge_quadrature(edge: &Edge, degree: usize) -> Result<EdgeRule> {
    check_degree(degree)?;
    let (s, w) = gauss_legendre(degree / 2 + 1);
    Ok(EdgeRule {
        points: s.iter().map(|&t| edge.point_at(t)).collect(),
        weights: w.iter().map(|wi| 0.5 * edge.length * wi).collect(),
        params: s,
        degree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_triangle, unit_square};
    use approx::assert_relative_eq;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..=16 {
            let (x, w) = gauss_legendre(n);
            for k in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
                assert!((q - exact).abs() < 1e-14, "n={n} k={k} q={q}");
            }
        }
    }

    #[test]
    fn reference_triangle_examples() {
        let t = reference_triangle();
        let q = element_quadrature(&t, 2).unwrap();
        assert_relative_eq!(q.integrate(|_| 1.0), 0.5, max_relative = 1e-14);
        assert_relative_eq!(q.integrate(|p| p.x), 1.0 / 6.0, max_relative = 1e-14);
    }

    #[test]
    fn unit_square_example() {
        let q = element_quadrature(&unit_square(), 4).unwrap();
        assert_relative_eq!(q.integrate(|p| p.x * p.x * p.y * p.y), 1.0 / 9.0, max_relative = 1e-13);
    }

    #[test]
    fn triangle_monomial_exactness() {
        // int_T x^a y^b over the reference triangle = a! b! / (a + b + 2)!
        let t = reference_triangle();
        for degree in [0, 1, 5, 12, 20, 30] {
            let q = element_quadrature(&t, degree).unwrap();
            assert_relative_eq!(q.weights.iter().sum::<f64>(), 0.5, max_relative = 1e-12);
            for a in 0..=degree {
                for b in 0..=degree - a {
                    let exact = factorial(a as u32) * factorial(b as u32) / factorial((a + b + 2) as u32);
                    let v = q.integrate(|p| p.x.powi(a as i32) * p.y.powi(b as i32));
                    assert!(((v - exact) / exact).abs() < 1e-12, "deg={degree} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn edge_rule_weights() {
        let sq = unit_square();
        for e in sq.edges() {
            let r = edge_quadrature(e, 7).unwrap();
            assert_relative_eq!(r.weights.iter().sum::<f64>(), e.length, max_relative = 1e-14);
            // int_{-1}^{1} s^6 ds * len/2
            assert_relative_eq!(r.integrate(|s, _| s.powi(6)), e.length / 7.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn degree_limit() {
        assert!(matches!(
            element_quadrature(&unit_square(), 31),
            Err(Error::UnsupportedQuadratureDegree(31))
        ));
    }
}
