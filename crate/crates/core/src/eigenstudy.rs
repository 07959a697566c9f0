//! Generalized eigenvalues of the pencil `(A, B)` and the batch studies over
//! element sequences and polynomial degrees.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::elasticity::Material;
use crate::error::{Error, Result};
use crate::geometry::{hourglass_sequence, trapezoid_sequence, Polygon};
use crate::hrspace::{symmetrize, HrLocalSpace, Stabilization};
use crate::localsolver::{matrix_b, FemConfig};

/// Relative threshold below which eigenvalues count as numerically zero.
pub const DROP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedSpectrum {
    /// Ascending, including the dropped near-zero values.
    pub values: Vec<f64>,
    /// Modes removed because `B` was singular on them.
    pub b_dropped: usize,
}

impl GeneralizedSpectrum {
    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    /// Number of eigenvalues below `DROP_TOL * max`, plus singular `B` modes.
    pub fn dropped(&self) -> usize {
        let cut = DROP_TOL * self.max().abs();
        self.b_dropped + self.values.iter().filter(|v| **v < cut).count()
    }

    /// Smallest eigenvalue above the drop threshold.
    pub fn min(&self) -> f64 {
        let cut = DROP_TOL * self.max().abs();
        self.values.iter().copied().find(|v| *v >= cut).unwrap_or(f64::NAN)
    }
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// Solves `A v = gamma B v` for symmetric `A` and symmetric positive
/// (semi)definite `B`.
pub fn generalized_eig(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GeneralizedSpectrum> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let a = symmetrize(a.clone());
    let b = symmetrize(b.clone());
    if let Some(ch) = b.clone().cholesky() {
        let l = ch.l();
        let linv_a = l
            .solve_lower_triangular(&a)
            .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
        let c = l
            .solve_lower_triangular(&linv_a.transpose())
            .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
        let (values, _) = sorted_eigen(symmetrize(c));
        return Ok(GeneralizedSpectrum { values, b_dropped: 0 });
    }
    let (bv, bvec) = sorted_eigen(b);
    let bmax = bv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let keep: Vec<usize> = (0..bv.len()).filter(|&i| bv[i] > DROP_TOL * bmax).collect();
    if keep.is_empty() {
        return Err(Error::Singular("B has no positive modes".into()));
    }
    let w = DMatrix::from_fn(a.nrows(), keep.len(), |r, c| bvec[(r, keep[c])] / bv[keep[c]].sqrt());
    let (values, _) = sorted_eigen(symmetrize(w.transpose() * a * &w));
    Ok(GeneralizedSpectrum {
        values,
        b_dropped: bv.len() - keep.len(),
    })
}

/// Spectral condition number of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = symmetrize(m.clone()).symmetric_eigenvalues();
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    hi / lo
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigRecord {
    pub element: String,
    /// Position in a sequence, if any.
    pub k: Option<usize>,
    pub p: usize,
    pub stab: Stabilization,
    pub gmin: f64,
    pub gmax: f64,
    pub dropped: usize,
    pub cond_a: f64,
    pub cond_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sequence {
    Hourglass,
    Trapezoid,
}

impl Sequence {
    pub fn element(&self, k: usize) -> Result<Polygon> {
        match self {
            Sequence::Hourglass => hourglass_sequence(k),
            Sequence::Trapezoid => trapezoid_sequence(k),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Sequence::Hourglass => "hourglass",
            Sequence::Trapezoid => "trapezoid",
        }
    }
}

/// Records for one element and degree, one per stabilization; `B` is
/// computed once and shared.
pub fn study_element(
    polygon: &Polygon,
    label: &str,
    k: Option<usize>,
    p: usize,
    material: &Material,
    stabs: &[Stabilization],
    fem: &FemConfig,
) -> Result<Vec<EigRecord>> {
    let space = HrLocalSpace::new(polygon, p, material)?;
    let b = matrix_b(&space, fem)?;
    let cond_b = condition_number(&b);
    stabs
        .iter()
        .map(|&stab| {
            let a = space.local_a_matrix(stab);
            let spec = generalized_eig(&a, &b)?;
            log::debug!("{label} k={k:?} p={p} {}: spectrum {:?}", stab.label(), spec.values);
            Ok(EigRecord {
                element: label.to_string(),
                k,
                p,
                stab,
                gmin: spec.min(),
                gmax: spec.max(),
                dropped: spec.dropped(),
                cond_a: condition_number(&a),
                cond_b,
            })
        })
        .collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Records over the members `ks` of an element sequence, ordered by `k`
/// then by stabilization.
pub fn run_sequence_study(
    sequence: Sequence,
    ks: &[usize],
    p: usize,
    material: &Material,
    stabs: &[Stabilization],
    fem: &FemConfig,
) -> Result<Vec<EigRecord>> {
    let per_k = par_map(ks, |&k| {
        let poly = sequence.element(k)?;
        study_element(&poly, sequence.name(), Some(k), p, material, stabs, fem)
    });
    Ok(per_k.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

/// Records for each degree in `ps` on a fixed element.
pub fn run_degree_study(
    polygon: &Polygon,
    label: &str,
    ps: &[usize],
    material: &Material,
    stabs: &[Stabilization],
    fem: &FemConfig,
) -> Result<Vec<EigRecord>> {
    if let Some(&bad) = ps.iter().find(|&&p| !(1..=6).contains(&p)) {
        return Err(Error::OutOfRange {
            what: "p",
            value: bad as i64,
            allowed: "1..=6".into(),
        });
    }
    let per_p = par_map(ps, |&p| study_element(polygon, label, None, p, material, stabs, fem));
    Ok(per_p.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}
