//! The local stress space on one polygon: degrees of freedom, closed-form
//! divergence and traction reconstruction, the projector onto `T_p`, the
//! projection-based and dofi-dofi stabilizations and the local matrix `A`.
//!
//! Degrees of freedom of a stress `tau` are, edge by edge,
//! `(1/h_e) int_e (tau n)_c s^j` for `c` in {x, y} and `j = 0..=p`, followed by
//! `(h_K/|K|) int_K div tau . q_a` for the members `q_a` of the `RM_perp` basis.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::elasticity::{Material, SymTensor};
use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon};
use crate::polybasis::poly::{self, EdgePoly, EdgeVectorPoly, Frame, TensorPoly, VectorPoly};
use crate::polybasis::{
    edge_quadrature, element_frame, element_quadrature, rm_basis, rm_perp_basis, tensor_t_basis, EdgeRule,
    QuadratureRule, ScaledBasis, TensorTBasis, VectorMass,
};

/// Dense matrix indexed by local degrees of freedom.
pub type LocalMatrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofKind {
    EdgeTraction { edge: usize, component: usize, power: usize },
    InteriorDivergence { member: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofDescriptor {
    pub kind: DofKind,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabWeight {
    InvMu,
    TraceD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stabilization {
    /// Traction and divergence norms.
    Projection { weight: StabWeight, reduced: bool },
    /// Euclidean product of DOF vectors.
    Dofi,
}

impl Stabilization {
    pub const PROJECTION: Stabilization = Stabilization::Projection {
        weight: StabWeight::InvMu,
        reduced: false,
    };

    pub fn label(&self) -> &'static str {
        match self {
            Stabilization::Projection {
                weight: StabWeight::InvMu,
                reduced: false,
            } => "projection",
            Stabilization::Projection {
                weight: StabWeight::TraceD,
                reduced: false,
            } => "projection-trace",
            Stabilization::Projection {
                weight: StabWeight::InvMu,
                reduced: true,
            } => "projection-reduced",
            Stabilization::Projection {
                weight: StabWeight::TraceD,
                reduced: true,
            } => "projection-trace-reduced",
            Stabilization::Dofi => "dofi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let all = [
            Stabilization::PROJECTION,
            Stabilization::Projection {
                weight: StabWeight::TraceD,
                reduced: false,
            },
            Stabilization::Projection {
                weight: StabWeight::InvMu,
                reduced: true,
            },
            Stabilization::Projection {
                weight: StabWeight::TraceD,
                reduced: true,
            },
            Stabilization::Dofi,
        ];
        all.into_iter()
            .find(|st| st.label() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown stabilization '{s}'")))
    }

    /// Same kind with the divergence term dropped (no effect on dofi).
    pub fn reduced(self) -> Self {
        match self {
            Stabilization::Projection { weight, .. } => Stabilization::Projection { weight, reduced: true },
            Stabilization::Dofi => Stabilization::Dofi,
        }
    }
}

/// Per-edge data: quadrature and the Gram matrix `M_ij = (1/2) int_{-1}^{1} s^(i+j) ds`.
#[derive(Debug, Clone)]
pub struct EdgeData {
    pub rule: EdgeRule,
    pub gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
}

pub fn edge_gram(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p + 1, p + 1, |i, j| if (i + j) % 2 == 0 { 1.0 / (i + j + 1) as f64 } else { 0.0 })
}

#[derive(Debug, Clone)]
pub struct HrLocalSpace {
    polygon: Polygon,
    p: usize,
    material: Material,
    frame: Frame,
    dofs: Vec<DofDescriptor>,
    edges: Vec<EdgeData>,
    quad: QuadratureRule,
    rm: ScaledBasis<VectorPoly>,
    perp: ScaledBasis<VectorPoly>,
    tensor: TensorTBasis,
    g_rm: DMatrix<f64>,
    g_perp: DMatrix<f64>,
    /// Rigid-motion coefficients of `div tau`, 3 x ndof.
    rm_map: DMatrix<f64>,
    /// `RM_perp` coefficients of `div tau`, nperp x ndof.
    perp_map: DMatrix<f64>,
    /// Monomial coefficients `[x; y]` of `div tau` at degree p.
    div_map: DMatrix<f64>,
    /// `D`-weighted Gram matrix of `T_p`.
    g_d: DMatrix<f64>,
    /// DOFs to `T_p` coefficients.
    pi_t: DMatrix<f64>,
    /// DOFs of the `T_p` members, ndof x nT.
    d_t: DMatrix<f64>,
}

impl HrLocalSpace {
    pub fn new(polygon: &Polygon, p: usize, material: &Material) -> Result<Self> {
        if p == 0 {
            return Err(Error::OutOfRange {
                what: "p",
                value: 0,
                allowed: "1..=6 (p = 0 is not supported)".into(),
            });
        }
        let qdeg = 2 * p + 4;
        let frame = element_frame(polygon);
        let quad = element_quadrature(polygon, qdeg)?;
        let rm = rm_basis(polygon)?;
        let perp = rm_perp_basis(polygon, p)?;
        let tensor = tensor_t_basis(polygon, p, material)?;

        let gram = edge_gram(p);
        let gram_inv = gram.clone().try_inverse().ok_or_else(|| Error::Singular("edge Gram".into()))?;
        let edges = polygon
            .edges()
            .iter()
            .map(|e| {
                Ok(EdgeData {
                    rule: edge_quadrature(e, qdeg)?,
                    gram: gram.clone(),
                    gram_inv: gram_inv.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut dofs = Vec::new();
        for e in 0..polygon.num_edges() {
            for c in 0..2 {
                for j in 0..=p {
                    dofs.push(DofDescriptor {
                        kind: DofKind::EdgeTraction {
                            edge: e,
                            component: c,
                            power: j,
                        },
                        index: dofs.len(),
                    });
                }
            }
        }
        for a in 0..perp.len() {
            dofs.push(DofDescriptor {
                kind: DofKind::InteriorDivergence { member: a },
                index: dofs.len(),
            });
        }

        let mass = VectorMass::new(polygon, p + 1)?;
        let g_rm = mass.gram(&rm.members);
        let g_perp = mass.gram(&perp.members);

        let mut space = HrLocalSpace {
            polygon: polygon.clone(),
            p,
            material: *material,
            frame,
            dofs,
            edges,
            quad,
            rm,
            perp,
            tensor,
            g_rm,
            g_perp,
            rm_map: DMatrix::zeros(0, 0),
            perp_map: DMatrix::zeros(0, 0),
            div_map: DMatrix::zeros(0, 0),
            g_d: DMatrix::zeros(0, 0),
            pi_t: DMatrix::zeros(0, 0),
            d_t: DMatrix::zeros(0, 0),
        };
        space.build_div_maps()?;
        space.build_projector()?;
        Ok(space)
    }

    pub fn polygon(&self) -> &Polygon {
        &self.polygon
    }

    pub fn degree(&self) -> usize {
        self.p
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn dofs(&self) -> &[DofDescriptor] {
        &self.dofs
    }

    pub fn ndof(&self) -> usize {
        self.dofs.len()
    }

    pub fn edge_data(&self) -> &[EdgeData] {
        &self.edges
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    pub fn rm(&self) -> &ScaledBasis<VectorPoly> {
        &self.rm
    }

    pub fn rm_perp(&self) -> &ScaledBasis<VectorPoly> {
        &self.perp
    }

    pub fn tensor_basis(&self) -> &TensorTBasis {
        &self.tensor
    }

    pub fn rm_gram(&self) -> &DMatrix<f64> {
        &self.g_rm
    }

    pub fn perp_gram(&self) -> &DMatrix<f64> {
        &self.g_perp
    }

    /// Number of DOFs per edge, `2(p+1)`.
    pub fn edge_block(&self) -> usize {
        2 * (self.p + 1)
    }

    pub fn edge_offset(&self, edge: usize) -> usize {
        edge * self.edge_block()
    }

    pub fn interior_offset(&self) -> usize {
        self.polygon.num_edges() * self.edge_block()
    }

    /// Expected DOF count `sum_e 2(p+1) + (p+1)(p+2) - 3`.
    pub fn dof_count(n_edges: usize, p: usize) -> usize {
        n_edges * 2 * (p + 1) + (p + 1) * (p + 2) - 3
    }

    fn check_len(&self, dofs: &DVector<f64>) -> Result<()> {
        if dofs.len() != self.ndof() {
            return Err(Error::DimensionMismatch {
                expected: self.ndof(),
                got: dofs.len(),
            });
        }
        Ok(())
    }

    /// Traction coefficients `[a_x; a_y]` in powers of `s`, as a
    /// `2(p+1) x ndof` matrix acting on DOF vectors.
    pub fn traction_map(&self, edge: usize) -> DMatrix<f64> {
        let b = self.p + 1;
        let off = self.edge_offset(edge);
        let inv = &self.edges[edge].gram_inv;
        let mut t = DMatrix::zeros(2 * b, self.ndof());
        for c in 0..2 {
            t.view_mut((c * b, off + c * b), (b, b)).copy_from(inv);
        }
        t
    }

    pub fn traction_from_dofs(&self, dofs: &DVector<f64>, edge: usize) -> Result<EdgeVectorPoly> {
        self.check_len(dofs)?;
        if edge >= self.polygon.num_edges() {
            return Err(Error::OutOfRange {
                what: "edge",
                value: edge as i64,
                allowed: format!("0..{}", self.polygon.num_edges()),
            });
        }
        let a = self.traction_map(edge) * dofs;
        let b = self.p + 1;
        Ok(EdgeVectorPoly {
            x: EdgePoly {
                coeffs: a.rows(0, b).iter().copied().collect(),
            },
            y: EdgePoly {
                coeffs: a.rows(b, b).iter().copied().collect(),
            },
        })
    }

    fn build_div_maps(&mut self) -> Result<()> {
        let n = self.ndof();
        let b = self.p + 1;
        // (r, rho_a)_K = sum_e int_e t . rho_a
        let mut rhs = DMatrix::zeros(3, n);
        for (e, data) in self.edges.iter().enumerate() {
            let mut r_e = DMatrix::<f64>::zeros(3, 2 * b);
            for (k, (s, x)) in data.rule.params.iter().zip(&data.rule.points).enumerate() {
                let w = data.rule.weights[k];
                for (a, rho) in self.rm.members.iter().enumerate() {
                    let v = rho.eval(x);
                    let mut sp = 1.0;
                    for i in 0..b {
                        r_e[(a, i)] += w * sp * v.x;
                        r_e[(a, b + i)] += w * sp * v.y;
                        sp *= s;
                    }
                }
            }
            rhs += r_e * self.traction_map(e);
        }
        self.rm_map = solve_spd(&self.g_rm, &rhs, "rigid-motion Gram")?;

        let nperp = self.perp.len();
        let mut sel = DMatrix::zeros(nperp, n);
        let off = self.interior_offset();
        for a in 0..nperp {
            sel[(a, off + a)] = self.polygon.area() / self.frame.h;
        }
        self.perp_map = solve_spd(&self.g_perp, &sel, "RM_perp Gram")?;

        let m = 2 * poly::dim(self.p);
        let mut div_map = DMatrix::zeros(m, n);
        for (a, rho) in self.rm.members.iter().enumerate() {
            let c = rho.raised(self.p).coeffs();
            div_map += &c * self.rm_map.row(a);
        }
        for (a, q) in self.perp.members.iter().enumerate() {
            let c = q.raised(self.p).coeffs();
            div_map += &c * self.perp_map.row(a);
        }
        self.div_map = div_map;
        Ok(())
    }

    /// `DOFs -> [x; y]` monomial coefficients of the divergence.
    pub fn div_map(&self) -> &DMatrix<f64> {
        &self.div_map
    }

    /// `DOFs -> RM_perp` coefficients of the divergence.
    pub fn perp_map(&self) -> &DMatrix<f64> {
        &self.perp_map
    }

    pub fn rm_map(&self) -> &DMatrix<f64> {
        &self.rm_map
    }

    pub fn div_from_dofs(&self, dofs: &DVector<f64>) -> Result<VectorPoly> {
        self.check_len(dofs)?;
        let c = &self.div_map * dofs;
        Ok(VectorPoly::from_coeffs(self.frame, self.p, c.as_slice()))
    }

    /// DOFs of a stress field given pointwise together with its divergence.
    /// `degree` is the quadrature exactness used for every moment.
    pub fn dofs_of_field(
        &self,
        sigma: impl Fn(&Point) -> SymTensor,
        div: impl Fn(&Point) -> Vector2<f64>,
        degree: usize,
    ) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.ndof());
        let b = self.p + 1;
        for (e, edge) in self.polygon.edges().iter().enumerate() {
            let rule = edge_quadrature(edge, degree)?;
            let off = self.edge_offset(e);
            for ((s, x), w) in rule.params.iter().zip(&rule.points).zip(&rule.weights) {
                let t = sigma(x).apply(edge.normal);
                let w = w / edge.length;
                let mut sp = 1.0;
                for j in 0..b {
                    out[off + j] += w * sp * t.x;
                    out[off + b + j] += w * sp * t.y;
                    sp *= s;
                }
            }
        }
        let quad = element_quadrature(&self.polygon, degree)?;
        let off = self.interior_offset();
        let scale = self.frame.h / self.polygon.area();
        for (x, w) in quad.points.iter().zip(&quad.weights) {
            let d = div(x);
            let m = self.frame.monomials(self.p, x);
            for (a, q) in self.perp.members.iter().enumerate() {
                out[off + a] += scale * w * d.dot(&q.eval_with(&m));
            }
        }
        Ok(out)
    }

    /// DOFs of a polynomial stress (exact quadrature).
    pub fn dofs_of_polynomial(&self, tau: &TensorPoly) -> Result<DVector<f64>> {
        let div = tau.div();
        let deg = (tau.degree() + self.p).max(2 * self.p);
        self.dofs_of_field(|x| tau.eval(x), |x| div.eval(x), deg)
    }

    fn build_projector(&mut self) -> Result<()> {
        let n = self.ndof();
        let nt = self.tensor.basis.len();
        let gens = &self.tensor.generators;
        let members = &self.tensor.basis.members;
        let deg = self.p + 1;

        // G_D[a, b] = (T_a, grad_S q_b)
        let strains: Vec<TensorPoly> = gens.iter().map(|q| q.sym_grad()).collect();
        let mut g_d = DMatrix::<f64>::zeros(nt, nt);
        let mut vq = DMatrix::<f64>::zeros(nt, 2 * poly::dim(self.p));
        let md = poly::dim(self.p);
        for (x, w) in self.quad.points.iter().zip(&self.quad.weights) {
            let m = self.frame.monomials(deg, x);
            let tv: Vec<SymTensor> = members.iter().map(|t| t.eval_with(&m)).collect();
            let ev: Vec<SymTensor> = strains.iter().map(|t| t.eval_with(&m)).collect();
            let qv: Vec<Vector2<f64>> = gens.iter().map(|q| q.eval_with(&m)).collect();
            for a in 0..nt {
                for b in 0..nt {
                    g_d[(a, b)] += w * tv[a].ddot(ev[b]);
                }
                for k in 0..md {
                    vq[(a, k)] += w * m[k] * qv[a].x;
                    vq[(a, md + k)] += w * m[k] * qv[a].y;
                }
            }
        }
        let g_d = 0.5 * (&g_d + g_d.transpose());

        let b = self.p + 1;
        let mut rhs = -(&vq * &self.div_map);
        for (e, data) in self.edges.iter().enumerate() {
            let mut wq = DMatrix::<f64>::zeros(nt, 2 * b);
            for ((s, x), w) in data.rule.params.iter().zip(&data.rule.points).zip(&data.rule.weights) {
                for (a, q) in gens.iter().enumerate() {
                    let v = q.eval(x);
                    let mut sp = 1.0;
                    for i in 0..b {
                        wq[(a, i)] += w * sp * v.x;
                        wq[(a, b + i)] += w * sp * v.y;
                        sp *= s;
                    }
                }
            }
            rhs += wq * self.traction_map(e);
        }

        let ev = g_d.clone().symmetric_eigenvalues();
        let cond = ev.max() / ev.min();
        if !(cond < 1e12) {
            log::warn!("projector Gram is ill-conditioned: cond = {cond:.3e}");
        }
        self.pi_t = solve_spd(&g_d, &rhs, "projector Gram")?;
        self.g_d = g_d;

        let mut d_t = DMatrix::zeros(n, nt);
        for (a, t) in members.iter().enumerate() {
            d_t.set_column(a, &self.dofs_of_polynomial(t)?);
        }
        self.d_t = d_t;
        Ok(())
    }

    /// DOFs to coefficients in the `T_p` basis.
    pub fn pi_t_matrix(&self) -> &DMatrix<f64> {
        &self.pi_t
    }

    /// `(D T_a, T_b)_K`.
    pub fn consistency_gram(&self) -> &DMatrix<f64> {
        &self.g_d
    }

    /// DOF vectors of the `T_p` members as columns.
    pub fn tensor_dofs(&self) -> &DMatrix<f64> {
        &self.d_t
    }

    /// The projector in DOF coordinates.
    pub fn pi_dof(&self) -> DMatrix<f64> {
        &self.d_t * &self.pi_t
    }

    /// Projected tensor as a polynomial.
    pub fn project(&self, dofs: &DVector<f64>) -> Result<TensorPoly> {
        self.check_len(dofs)?;
        let x = &self.pi_t * dofs;
        let mut out = TensorPoly::new(
            self.frame,
            poly::Poly::zero(self.p),
            poly::Poly::zero(self.p),
            poly::Poly::zero(self.p),
        );
        for (c, t) in x.iter().zip(&self.tensor.basis.members) {
            out.axpy(*c, t);
        }
        Ok(out)
    }

    pub fn stab_weight(&self, weight: StabWeight) -> f64 {
        match weight {
            StabWeight::InvMu => 1.0 / self.material.mu(),
            StabWeight::TraceD => self.material.trace_d(),
        }
    }

    /// `w [ h_K sum_e ||tau n||_e^2 + h_K^2 ||Pi_perp div tau||_K^2 ]`; `reduced`
    /// keeps only the boundary term.
    pub fn stab_projection_matrix(&self, weight: StabWeight, reduced: bool) -> LocalMatrix {
        let n = self.ndof();
        let b = self.p + 1;
        let h = self.frame.h;
        let mut s = DMatrix::zeros(n, n);
        for (e, data) in self.edges.iter().enumerate() {
            let he = self.polygon.edges()[e].length;
            let mut m2 = DMatrix::<f64>::zeros(2 * b, 2 * b);
            for c in 0..2 {
                m2.view_mut((c * b, c * b), (b, b)).copy_from(&(&data.gram * he));
            }
            let t = self.traction_map(e);
            s += h * t.transpose() * m2 * t;
        }
        if !reduced {
            s += h * h * self.perp_map.transpose() * &self.g_perp * &self.perp_map;
        }
        s *= self.stab_weight(weight);
        symmetrize(s)
    }

    /// `mu^-1 h_K^2 I`.
    pub fn stab_dofi_matrix(&self) -> LocalMatrix {
        let h = self.frame.h;
        DMatrix::identity(self.ndof(), self.ndof()) * (h * h / self.material.mu())
    }

    pub fn stab_matrix(&self, stab: Stabilization) -> LocalMatrix {
        match stab {
            Stabilization::Projection { weight, reduced } => self.stab_projection_matrix(weight, reduced),
            Stabilization::Dofi => self.stab_dofi_matrix(),
        }
    }

    /// `Pi^T G_D Pi + (I - Pi)^T S (I - Pi)`.
    pub fn local_a_matrix(&self, stab: Stabilization) -> LocalMatrix {
        let s = self.stab_matrix(stab);
        let n = self.ndof();
        let consistency = self.pi_t.transpose() * &self.g_d * &self.pi_t;
        let k = DMatrix::identity(n, n) - self.pi_dof();
        symmetrize(consistency + k.transpose() * s * k)
    }
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (&m + m.transpose())
}

/// `max |M - M^T| / max |M|`.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax() / m.amax().max(f64::MIN_POSITIVE)
}

fn solve_spd(g: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(ch) = g.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    g.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular(what.to_string()))
}
