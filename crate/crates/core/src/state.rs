//! Orbital sets `γ = Σ n_j |w_j⟩⟨w_j|`, their densities and Gram matrices,
//! and symmetric (Löwdin) orthonormalization.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{ComplexField, Grid};

/// Smallest admissible Gram eigenvalue for [`loewdin`].
pub const RANK_DEFICIENCY_TOL: f64 = 1e-12;

/// A finite family of orbitals on one grid with occupation numbers in `(0, 1]`.
#[derive(Clone, Debug)]
pub struct OrbitalSet {
    grid: Grid,
    orbitals: Vec<ComplexField>,
    occupations: Vec<f64>,
}

impl OrbitalSet {
    /// Orbitals with unit occupations.
    pub fn new(orbitals: Vec<ComplexField>) -> Result<Self> {
        let occ = vec![1.0; orbitals.len()];
        Self::with_occupations(orbitals, occ)
    }

    pub fn with_occupations(orbitals: Vec<ComplexField>, occupations: Vec<f64>) -> Result<Self> {
        let first = orbitals
            .first()
            .ok_or_else(|| Error::InvalidArgument("orbital set must not be empty".into()))?;
        let grid = first.grid().clone();
        if orbitals.iter().any(|w| !w.grid().same_as(&grid)) {
            return Err(Error::GridMismatch);
        }
        if occupations.len() != orbitals.len() {
            return Err(Error::InvalidArgument(format!(
                "{} occupations for {} orbitals",
                occupations.len(),
                orbitals.len()
            )));
        }
        if occupations.iter().any(|&n| !(n > 0.0 && n <= 1.0)) {
            return Err(Error::InvalidArgument("occupations must lie in (0, 1]".into()));
        }
        Ok(OrbitalSet {
            grid,
            orbitals,
            occupations,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.orbitals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbitals.is_empty()
    }

    pub fn orbitals(&self) -> &[ComplexField] {
        &self.orbitals
    }

    pub fn orbital(&self, i: usize) -> &ComplexField {
        &self.orbitals[i]
    }

    pub fn occupations(&self) -> &[f64] {
        &self.occupations
    }

    pub fn has_unit_occupations(&self) -> bool {
        self.occupations.iter().all(|&n| n == 1.0)
    }

    pub fn into_orbitals(self) -> Vec<ComplexField> {
        self.orbitals
    }

    /// `max_ij |G_ij - δ_ij|`
    pub fn gram_deviation(&self) -> f64 {
        let g = gram(self);
        let n = self.len();
        let mut dev = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((g.entries()[(i, j)] - target).norm());
            }
        }
        dev
    }

    /// Orbital mixing `w'_j = Σ_i w_i U_ij`; occupations are kept.
    pub fn mixed(&self, u: &DMatrix<Complex64>) -> Result<OrbitalSet> {
        let n = self.len();
        if u.nrows() != n {
            return Err(Error::InvalidArgument("mixing matrix has wrong row count".into()));
        }
        let orbitals = combine(&self.orbitals, u);
        let occupations = if u.ncols() == n {
            self.occupations.clone()
        } else {
            vec![1.0; u.ncols()]
        };
        OrbitalSet::with_occupations(orbitals, occupations)
    }

    /// Same orbitals on another grid (used by dilations).
    pub fn map_orbitals(
        &self,
        f: impl Fn(&ComplexField) -> Result<ComplexField>,
    ) -> Result<OrbitalSet> {
        let orbitals = self.orbitals.iter().map(f).collect::<Result<Vec<_>>>()?;
        OrbitalSet::with_occupations(orbitals, self.occupations.clone())
    }
}

/// `out_j = Σ_i fields_i · coeffs_ij`
pub fn combine(fields: &[ComplexField], coeffs: &DMatrix<Complex64>) -> Vec<ComplexField> {
    (0..coeffs.ncols())
        .map(|j| {
            let mut out = ComplexField::zeros(fields[0].grid());
            for (i, f) in fields.iter().enumerate() {
                let c = coeffs[(i, j)];
                if c != Complex64::new(0.0, 0.0) {
                    out.axpy(c, f).expect("fields share a grid");
                }
            }
            out
        })
        .collect()
}

/// Real nonnegative field on a grid.
#[derive(Clone, Debug)]
pub struct Density {
    grid: Grid,
    values: Vec<f64>,
}

impl Density {
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument("density has wrong length".into()));
        }
        Ok(Density {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `∫ ρ^p`
    pub fn lp_integral(&self, p: f64) -> f64 {
        self.values.iter().map(|&r| r.max(0.0).powf(p)).sum::<f64>() * self.grid.cell_volume()
    }

    /// `ρ^{1/3}` pointwise, with `0^{1/3} = 0`.
    pub fn cube_root(&self) -> Vec<f64> {
        self.values.iter().map(|&r| r.max(0.0).cbrt()).collect()
    }

    pub fn max_abs_diff(&self, other: &Density) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `∫ |ρ - other|`
    pub fn l1_distance(&self, other: &Density) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    /// Periodic centroid: per axis, the argument of `∫ ρ e^{2πi x/L}`.
    pub fn centroid(&self) -> [f64; 3] {
        let l = self.grid.box_length();
        let mut acc = [Complex64::new(0.0, 0.0); 3];
        for (idx, &r) in self.values.iter().enumerate() {
            let x = self.grid.position(idx);
            for d in 0..3 {
                acc[d] += Complex64::from_polar(r, 2.0 * std::f64::consts::PI * x[d] / l);
            }
        }
        acc.map(|c| c.arg() * l / (2.0 * std::f64::consts::PI))
    }

    /// Density translated so that its periodic centroid sits at the origin.
    pub fn centered(&self) -> Density {
        let c = self.centroid();
        let field = ComplexField::from_values(
            &self.grid,
            self.values.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
        )
        .expect("same grid");
        let shifted = field.translated([-c[0], -c[1], -c[2]]);
        Density {
            grid: self.grid.clone(),
            values: shifted.values().iter().map(|v| v.re).collect(),
        }
    }
}

/// `ρ(x) = Σ_j n_j |w_j(x)|²`
pub fn density(set: &OrbitalSet) -> Density {
    let mut values = vec![0.0; set.grid().len()];
    for (w, &n) in set.orbitals().iter().zip(set.occupations()) {
        for (r, v) in values.iter_mut().zip(w.values()) {
            *r += n * v.norm_sqr();
        }
    }
    Density {
        grid: set.grid().clone(),
        values,
    }
}

/// Hermitian Gram matrix `G_ij = ⟨w_i, w_j⟩`.
#[derive(Clone, Debug)]
pub struct GramMatrix(DMatrix<Complex64>);

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    /// Ascending eigenvalues and the matching eigenvectors (as columns).
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<Complex64>) {
        hermitian_eigen(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().0[0]
    }

    /// `G^{-1/2}`; fails when the Gram matrix is numerically singular.
    pub fn inverse_sqrt(&self) -> Result<DMatrix<Complex64>> {
        let (vals, vecs) = self.eigen();
        if vals[0] <= RANK_DEFICIENCY_TOL {
            return Err(Error::NearRankDeficient {
                min_eigenvalue: vals[0],
            });
        }
        let n = vals.len();
        let mut scaled = vecs.clone();
        for j in 0..n {
            let s = 1.0 / vals[j].sqrt();
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        Ok(&scaled * vecs.adjoint())
    }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted ascending.
pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        vecs.set_column(new, &eig.eigenvectors.column(old));
    }
    (vals, vecs)
}

pub fn gram(set: &OrbitalSet) -> GramMatrix {
    gram_of(set.orbitals())
}

pub fn gram_of(fields: &[ComplexField]) -> GramMatrix {
    let n = fields.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = fields[i].inner(&fields[j]).expect("fields share a grid");
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    GramMatrix(g)
}

/// Symmetric orthonormalization `(w̃) = (w) G^{-1/2}`.
pub fn loewdin(set: &OrbitalSet) -> Result<OrbitalSet> {
    let inv_sqrt = gram(set).inverse_sqrt()?;
    OrbitalSet::with_occupations(combine(set.orbitals(), &inv_sqrt), set.occupations().to_vec())
}

/// Doubles an orthonormal set with copies translated by `separation` along
/// `axis`, then Löwdin-orthonormalizes the `2N` orbitals jointly.
pub fn translated_pair(base: &OrbitalSet, separation: f64, axis: [f64; 3]) -> Result<OrbitalSet> {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument("translation axis must be nonzero".into()));
    }
    let l = base.grid().box_length();
    if !(separation.abs() < 0.5 * l) {
        return Err(Error::InvalidArgument(format!(
            "separation {separation} does not fit in half the box ({})",
            0.5 * l
        )));
    }
    let shift = axis.map(|a| a * separation / norm);
    let mut orbitals: Vec<ComplexField> = base.orbitals().to_vec();
    orbitals.extend(base.orbitals().iter().map(|w| w.translated(shift)));
    let mut occ = base.occupations().to_vec();
    occ.extend_from_slice(base.occupations());
    loewdin(&OrbitalSet::with_occupations(orbitals, occ)?)
}
