//! Isotropic material law in plane strain, `C tau = 2 mu dev(tau) + ((2 mu + d lambda)/d) tr(tau) I`
//! with `d = 2`, and its inverse compliance `D`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DIM: f64 = 2.0;

/// Symmetric 2x2 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl SymTensor {
    pub const IDENTITY: SymTensor = SymTensor {
        xx: 1.0,
        yy: 1.0,
        xy: 0.0,
    };

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        SymTensor { xx, yy, xy }
    }

    pub fn from_matrix(m: &Matrix2<f64>) -> Result<Self> {
        let skew = (m[(0, 1)] - m[(1, 0)]).abs();
        if skew > 1e-12 * m.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::NotSymmetric(skew));
        }
        Ok(SymTensor::new(m[(0, 0)], m[(1, 1)], 0.5 * (m[(0, 1)] + m[(1, 0)])))
    }

    pub fn to_matrix(self) -> Matrix2<f64> {
        Matrix2::new(self.xx, self.xy, self.xy, self.yy)
    }

    pub fn trace(self) -> f64 {
        self.xx + self.yy
    }

    pub fn dev(self) -> Self {
        let m = 0.5 * self.trace();
        SymTensor::new(self.xx - m, self.yy - m, self.xy)
    }

    /// Frobenius inner product.
    pub fn ddot(self, other: Self) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    pub fn norm(self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn apply(self, n: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.xx * n.x + self.xy * n.y, self.xy * n.x + self.yy * n.y)
    }

    /// Coordinates `(t11, t22, sqrt(2) t12)`; their dot product is the Frobenius product.
    pub fn to_voigt(self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.xx, self.yy, std::f64::consts::SQRT_2 * self.xy)
    }

    pub fn from_voigt(v: &nalgebra::Vector3<f64>) -> Self {
        SymTensor::new(v[0], v[1], v[2] / std::f64::consts::SQRT_2)
    }
}

impl Add for SymTensor {
    type Output = SymTensor;
    fn add(self, o: Self) -> Self {
        SymTensor::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy)
    }
}

impl Sub for SymTensor {
    type Output = SymTensor;
    fn sub(self, o: Self) -> Self {
        SymTensor::new(self.xx - o.xx, self.yy - o.yy, self.xy - o.xy)
    }
}

impl Mul<SymTensor> for f64 {
    type Output = SymTensor;
    fn mul(self, t: SymTensor) -> SymTensor {
        SymTensor::new(self * t.xx, self * t.yy, self * t.xy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    lambda: f64,
    mu: f64,
}

impl Material {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidMaterial(format!("mu must be positive, got {mu}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidMaterial(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        Ok(Material { lambda, mu })
    }

    /// `lambda = mu = 1`.
    pub fn compressible() -> Self {
        Material { lambda: 1.0, mu: 1.0 }
    }

    /// `lambda = 1e5, mu = 1`.
    pub fn incompressible() -> Self {
        Material {
            lambda: 1e5,
            mu: 1.0,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn bulk_factor(&self) -> f64 {
        (2.0 * self.mu + DIM * self.lambda) / DIM
    }

    pub fn c_apply(&self, tau: SymTensor) -> SymTensor {
        let dev = tau.dev();
        let sph = self.bulk_factor() * tau.trace();
        SymTensor::new(2.0 * self.mu * dev.xx + sph, 2.0 * self.mu * dev.yy + sph, 2.0 * self.mu * dev.xy)
    }

    pub fn d_apply(&self, tau: SymTensor) -> SymTensor {
        let dev = tau.dev();
        let sph = tau.trace() / (DIM * (2.0 * self.mu + DIM * self.lambda));
        let s = 1.0 / (2.0 * self.mu);
        SymTensor::new(s * dev.xx + sph, s * dev.yy + sph, s * dev.xy)
    }

    /// `c_apply` on a general matrix, rejecting non-symmetric input.
    pub fn c_apply_matrix(&self, tau: &Matrix2<f64>) -> Result<Matrix2<f64>> {
        Ok(self.c_apply(SymTensor::from_matrix(tau)?).to_matrix())
    }

    pub fn d_apply_matrix(&self, tau: &Matrix2<f64>) -> Result<Matrix2<f64>> {
        Ok(self.d_apply(SymTensor::from_matrix(tau)?).to_matrix())
    }

    fn voigt_matrix(&self, f: impl Fn(SymTensor) -> SymTensor) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for j in 0..3 {
            let mut e = nalgebra::Vector3::zeros();
            e[j] = 1.0;
            m.set_column(j, &f(SymTensor::from_voigt(&e)).to_voigt());
        }
        m
    }

    /// Stiffness in `(t11, t22, sqrt(2) t12)` coordinates.
    pub fn c_matrix(&self) -> Matrix3<f64> {
        self.voigt_matrix(|t| self.c_apply(t))
    }

    pub fn d_matrix(&self) -> Matrix3<f64> {
        self.voigt_matrix(|t| self.d_apply(t))
    }

    /// Trace of the compliance on symmetric tensors.
    pub fn trace_d(&self) -> f64 {
        self.d_matrix().trace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng) -> SymTensor {
        SymTensor::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    }

    #[test]
    fn c_examples() {
        let m = Material::compressible();
        assert_eq!(m.c_apply(SymTensor::IDENTITY), 4.0 * SymTensor::IDENTITY);
        let traceless = SymTensor::new(0.3, -0.3, 0.7);
        let m2 = Material::new(3.0, 2.5).unwrap();
        let c = m2.c_apply(traceless);
        assert_relative_eq!(c.xx, 5.0 * traceless.xx, epsilon = 1e-15);
        assert_relative_eq!(c.yy, 5.0 * traceless.yy, epsilon = 1e-15);
        assert_relative_eq!(c.xy, 5.0 * traceless.xy, epsilon = 1e-15);
        let inc = Material::incompressible();
        let c = inc.c_apply(SymTensor::IDENTITY);
        assert_relative_eq!(c.xx, 2.0 + 2e5, max_relative = 1e-15);
        assert_relative_eq!(c.yy, 2.0 + 2e5, max_relative = 1e-15);
        assert_eq!(c.xy, 0.0);
    }

    #[test]
    fn c_matches_lame_form() {
        let m = Material::new(1.7, 0.4).unwrap();
        let t = SymTensor::new(0.2, -1.1, 0.5);
        let lame = 2.0 * m.mu() * t + m.lambda() * t.trace() * SymTensor::IDENTITY;
        let c = m.c_apply(t);
        assert_relative_eq!((c - lame).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn d_examples() {
        let m = Material::compressible();
        let d = m.d_apply(SymTensor::IDENTITY);
        assert_relative_eq!((d - 0.25 * SymTensor::IDENTITY).norm(), 0.0, epsilon = 1e-16);
        let traceless = SymTensor::new(1.0, -1.0, 0.25);
        let m2 = Material::new(5.0, 2.0).unwrap();
        assert_relative_eq!((m2.d_apply(traceless) - 0.25 * traceless).norm(), 0.0, epsilon = 1e-16);
    }

    #[test]
    fn d_inverts_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (m, tol) in [
            (Material::compressible(), 1e-13),
            (Material::new(0.0, 3.0).unwrap(), 1e-13),
            (Material::incompressible(), 1e-10),
        ] {
            for _ in 0..100 {
                let t = random_tensor(&mut rng);
                let back = m.d_apply(m.c_apply(t));
                assert!((back - t).norm() <= tol * t.norm());
            }
        }
    }

    #[test]
    fn voigt_matrices_spd_and_inverse() {
        for m in [Material::compressible(), Material::incompressible(), Material::new(0.0, 0.1).unwrap()] {
            let c = m.c_matrix();
            let d = m.d_matrix();
            assert_relative_eq!(c, c.transpose(), epsilon = 1e-10 * c.amax());
            assert!(c.symmetric_eigenvalues().min() > 0.0);
            assert!(d.symmetric_eigenvalues().min() > 0.0);
            assert_relative_eq!(c * d, Matrix3::identity(), epsilon = 1e-10);
        }
    }

    #[test]
    fn trace_d_value() {
        assert_relative_eq!(Material::compressible().trace_d(), 1.25, max_relative = 1e-14);
        let m = Material::new(2.0, 0.5).unwrap();
        let expected = 2.0 / (2.0 * 0.5) + 2.0 / (2.0 * (2.0 * 0.5 + 2.0 * 2.0));
        assert_relative_eq!(m.trace_d(), expected, max_relative = 1e-14);
    }

    #[test]
    fn compliance_bounds_deviatoric_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [Material::compressible(), Material::incompressible()] {
            for _ in 0..200 {
                let t = random_tensor(&mut rng);
                let lhs = m.d_apply(t).ddot(t);
                let rhs = t.dev().ddot(t.dev()) / (2.0 * m.mu());
                assert!(lhs >= rhs - 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Material::new(1.0, 0.0).is_err());
        assert!(Material::new(-1.0, 1.0).is_err());
        let m = Material::compressible();
        let asym = Matrix2::new(1.0, 2.0, 0.0, 1.0);
        assert!(matches!(m.c_apply_matrix(&asym), Err(Error::NotSymmetric(_))));
        assert!(m.d_apply_matrix(&asym).is_err());
        let sym = Matrix2::new(1.0, 0.5, 0.5, 2.0);
        assert!(m.c_apply_matrix(&sym).is_ok());
    }
}
