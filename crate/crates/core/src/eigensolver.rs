//! Lowest eigenpairs of the linearized operators
//! `H = S + V` with `S` the kinetic symbol and `V = -c ρ^{1/3}`, computed
//! matrix-free by block LOBPCG, and a self-consistent field loop built on it.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{energy, EnergyBreakdown};
use crate::spectral::{ComplexField, Grid, MultiplierKind, MultiplierSpectrum, SpectralBand};
use crate::state::{combine, density, gram_of, hermitian_eigen, Density, OrbitalSet};

/// Gaps `μ₂ - μ₁` below this are flagged as possibly degenerate.
pub const GAP_FLAG: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    symbol: MultiplierSpectrum,
    potential: Vec<f64>,
    shift: f64,
    band: Option<SpectralBand>,
}

impl LinearizedOperator {
    /// `symbol(k) + potential(x) + shift`, acting on the whole grid.
    pub fn new(symbol: MultiplierSpectrum, potential: Vec<f64>, shift: f64) -> Result<Self> {
        if potential.len() != symbol.grid().len() {
            return Err(Error::GridMismatch);
        }
        if !shift.is_finite() || potential.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("operator entries must be finite".into()));
        }
        Ok(LinearizedOperator {
            symbol,
            potential,
            shift,
            band: None,
        })
    }

    /// `√(-Δ+m²) - m - (4a/3) ρ^{1/3}` of an `E_a` critical point.
    pub fn massive(rho: &Density, a: f64, m: f64) -> Result<Self> {
        let symbol = MultiplierSpectrum::kinetic(rho.grid(), m)?;
        let c = 4.0 * a / 3.0;
        Self::new(symbol, rho.cube_root().into_iter().map(|r| -c * r).collect(), 0.0)
    }

    /// `√-Δ - (4/3) D̂ ρ^{1/3}` of a quotient optimizer.
    pub fn massless(rho: &Density, d_hat: f64) -> Result<Self> {
        let symbol = MultiplierSpectrum::new(rho.grid(), MultiplierKind::Massless)?;
        let c = 4.0 * d_hat / 3.0;
        Self::new(symbol, rho.cube_root().into_iter().map(|r| -c * r).collect(), 0.0)
    }

    /// Compression `P H P` onto the modes of `band`.
    pub fn restricted_to(mut self, band: SpectralBand) -> Self {
        self.band = Some(band);
        self
    }

    pub fn grid(&self) -> &Grid {
        self.symbol.grid()
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn band(&self) -> Option<&SpectralBand> {
        self.band.as_ref()
    }

    fn project(&self, u: &ComplexField) -> ComplexField {
        match &self.band {
            Some(b) => b.project(u),
            None => u.clone(),
        }
    }

    /// `H u`
    pub fn apply(&self, u: &ComplexField) -> Result<ComplexField> {
        if !u.grid().same_as(self.grid()) {
            return Err(Error::GridMismatch);
        }
        let mut c = u.spectrum();
        if let Some(b) = &self.band {
            b.restrict(&mut c);
        }
        let inside = ComplexField::from_spectrum(self.grid(), &c)?;
        c.iter_mut()
            .zip(self.symbol.values())
            .for_each(|(c, s)| *c *= s + self.shift);
        let mut out = ComplexField::from_spectrum(self.grid(), &c)?;
        out.values_mut()
            .iter_mut()
            .zip(inside.values())
            .zip(&self.potential)
            .for_each(|((o, w), v)| *o += w * v);
        Ok(self.project(&out))
    }
}

/// `H u` for a linearized operator.
pub fn apply_h(op: &LinearizedOperator, u: &ComplexField) -> Result<ComplexField> {
    op.apply(u)
}

#[derive(Clone, Debug)]
pub struct EigenReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub vectors: OrbitalSet,
    /// `‖H v - μ v‖₂`
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EigenReport {
    /// `μ₂ - μ₁`, if at least two pairs were computed.
    pub fn gap(&self) -> Option<f64> {
        (self.eigenvalues.len() >= 2).then(|| self.eigenvalues[1] - self.eigenvalues[0])
    }

    /// True when the lowest gap is too small to call the second level simple.
    pub fn gap_flagged(&self) -> bool {
        self.gap().is_some_and(|g| g < GAP_FLAG)
    }

    /// Sign of each eigenvalue relative to the window `(-tol, 0)` that the box
    /// cannot resolve from the continuum edge.
    pub fn classify(&self, tol: f64) -> Vec<SpectralSign> {
        self.eigenvalues
            .iter()
            .map(|&mu| {
                if mu <= -tol {
                    SpectralSign::Negative
                } else if mu < 0.0 {
                    SpectralSign::Indeterminate
                } else {
                    SpectralSign::Nonnegative
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralSign {
    Negative,
    Indeterminate,
    Nonnegative,
}

/// Smooth deterministic start vectors inside the operator's band.
fn start_vectors(op: &LinearizedOperator, count: usize, seed: u64) -> Vec<ComplexField> {
    let grid = op.grid();
    let k0 = grid.k_min();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let coeffs: Vec<Complex64> = grid
                .k_norm()
                .iter()
                .map(|&k| {
                    let w = 1.0 / (1.0 + (k / (4.0 * k0)).powi(2));
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * w
                })
                .collect();
            op.project(&ComplexField::from_spectrum(grid, &coeffs).expect("same grid"))
        })
        .collect()
}

/// Orthonormal basis of the span of `fields` via the Gram eigenbasis; directions
/// with relative weight below `drop` are discarded.
fn stable_basis(fields: &[ComplexField], drop: f64) -> DMatrix<Complex64> {
    let g = gram_of(fields);
    let (vals, vecs) = hermitian_eigen(g.entries());
    let top = vals.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > drop * top).collect();
    DMatrix::from_fn(fields.len(), keep.len(), |r, c| {
        vecs[(r, keep[c])] / vals[keep[c]].sqrt()
    })
}

fn inner_matrix(xs: &[ComplexField], ys: &[ComplexField]) -> DMatrix<Complex64> {
    DMatrix::from_fn(xs.len(), ys.len(), |i, j| xs[i].inner(&ys[j]).expect("same grid"))
}

fn axpy(x: &ComplexField, alpha: f64, y: &ComplexField) -> ComplexField {
    let mut out = x.clone();
    out.axpy(Complex64::new(alpha, 0.0), y).expect("same grid");
    out
}

/// The `k` lowest eigenpairs of `op` from seeded smooth start vectors.
pub fn lowest_eigenpairs(
    op: &LinearizedOperator,
    k: usize,
    tol: f64,
    max_iters: usize,
) -> Result<EigenReport> {
    if !(1..=4).contains(&k) {
        return Err(Error::InvalidArgument(format!("k must lie in 1..=4, got {k}")));
    }
    lowest_eigenpairs_from(op, &start_vectors(op, k, 0), tol, max_iters)
}

/// Block LOBPCG started from `guess`, one vector per wanted pair.
///
/// Converged pairs stay in the Rayleigh–Ritz basis but stop contributing
/// search directions. A run that reaches `max_iters` returns its partial
/// report with `converged = false`.
pub fn lowest_eigenpairs_from(
    op: &LinearizedOperator,
    guess: &[ComplexField],
    tol: f64,
    max_iters: usize,
) -> Result<EigenReport> {
    let k = guess.len();
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one start vector".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let grid = op.grid().clone();
    for g in guess {
        if !g.grid().same_as(&grid) {
            return Err(Error::GridMismatch);
        }
    }
    let projected: Vec<ComplexField> = guess.iter().map(|g| op.project(g)).collect();
    let b = stable_basis(&projected, 1e-12);
    if b.ncols() < k {
        return Err(Error::NearRankDeficient { min_eigenvalue: 0.0 });
    }
    let mut x = combine(&projected, &b);
    let mut hx = x.iter().map(|v| op.apply(v)).collect::<Result<Vec<_>>>()?;
    let mut p: Vec<ComplexField> = Vec::new();
    let mut hp: Vec<ComplexField> = Vec::new();

    let (theta, y) = hermitian_eigen(&inner_matrix(&x, &hx));
    x = combine(&x, &y);
    hx = combine(&hx, &y);
    let mut theta = theta;

    let kappa = grid.k_min().max(theta.iter().map(|t| t.abs()).fold(0.0, f64::max));
    let precond: Vec<f64> = grid
        .k_norm()
        .iter()
        .map(|&kk| 1.0 / (1.0 + kk / kappa))
        .collect();

    let mut iterations = 0;
    let mut residuals;
    loop {
        let r: Vec<ComplexField> = (0..k).map(|i| axpy(&hx[i], -theta[i], &x[i])).collect();
        residuals = r.iter().map(|v| v.norm()).collect::<Vec<f64>>();
        let active: Vec<usize> = (0..k)
            .filter(|&i| residuals[i] > tol * theta[i].abs().max(1.0))
            .collect();
        if active.is_empty() || iterations >= max_iters {
            break;
        }
        iterations += 1;

        let w: Vec<ComplexField> = active
            .iter()
            .map(|&i| {
                let mut c = r[i].spectrum();
                c.iter_mut().zip(&precond).for_each(|(c, p)| *c *= p);
                op.project(&ComplexField::from_spectrum(&grid, &c).expect("same grid"))
            })
            .collect();
        let hw = w.iter().map(|v| op.apply(v)).collect::<Result<Vec<_>>>()?;

        // near convergence W and P are tiny next to X, so they are taken
        // orthogonal to X and normalized before the basis is formed
        let mut basis: Vec<ComplexField> = x.clone();
        let mut hbasis: Vec<ComplexField> = hx.clone();
        for (v, hv) in w.iter().zip(&hw).chain(p.iter().zip(&hp)) {
            let c = inner_matrix(&x, std::slice::from_ref(v));
            let mut v = v.clone();
            let mut hv = hv.clone();
            for i in 0..k {
                v.axpy(-c[(i, 0)], &x[i]).expect("same grid");
                hv.axpy(-c[(i, 0)], &hx[i]).expect("same grid");
            }
            let norm = v.norm();
            if norm > 0.0 {
                basis.push(v.scaled(Complex64::new(1.0 / norm, 0.0)));
                hbasis.push(hv.scaled(Complex64::new(1.0 / norm, 0.0)));
            }
        }

        let b = stable_basis(&basis, 1e-12);
        let reduced = b.adjoint() * inner_matrix(&basis, &hbasis) * &b;
        let (vals, vecs) = hermitian_eigen(&reduced);
        if vecs.ncols() < k {
            return Err(Error::NearRankDeficient { min_eigenvalue: 0.0 });
        }
        let c = &b * vecs.columns(0, k);
        // new search directions are the parts outside the old block
        let mut c_rest = c.clone();
        for i in 0..k {
            for j in 0..k {
                c_rest[(i, j)] = ZERO;
            }
        }
        x = combine(&basis, &c);
        hx = combine(&hbasis, &c);
        p = combine(&basis, &c_rest);
        hp = combine(&hbasis, &c_rest);
        theta = vals[..k].to_vec();
    }

    let converged = (0..k).all(|i| residuals[i] <= tol * theta[i].abs().max(1.0));
    Ok(EigenReport {
        eigenvalues: theta,
        vectors: OrbitalSet::new(x)?,
        residuals,
        iterations,
        converged,
    })
}

/// Principal angles in radians between the spans of two orthonormal sets of
/// equal size, ascending.
pub fn principal_angles(a: &OrbitalSet, b: &OrbitalSet) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("sets differ in size".into()));
    }
    let m = inner_matrix(a.orbitals(), b.orbitals());
    let svd = m.svd(false, false);
    let mut angles: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Multiplies `v` by the unit phase that makes its largest entry real and
/// positive.
pub fn phase_aligned(v: &ComplexField) -> ComplexField {
    let peak = v
        .values()
        .iter()
        .copied()
        .max_by(|x, y| x.norm_sqr().total_cmp(&y.norm_sqr()))
        .unwrap_or(ZERO);
    if peak.norm() == 0.0 {
        return v.clone();
    }
    v.scaled(peak.conj() / peak.norm())
}

/// `-min Re v / max |v|` after phase alignment; nonpositive for a positive field.
pub fn positivity_defect(v: &ComplexField) -> f64 {
    let aligned = phase_aligned(v);
    let max = aligned.values().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let min = aligned.values().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        -min / max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScfConfig {
    /// Initial density mixing `α`.
    pub mixing: f64,
    /// Stop when `‖ρ - ρ_new‖₁ / N` falls below this.
    pub tol: f64,
    pub max_iters: usize,
    pub eig_tol: f64,
    pub eig_max_iters: usize,
    /// Orbitals live in the band of the same name in the minimizer.
    pub band_fraction: f64,
    /// Also admit `k = 0`.
    pub zero_mode: bool,
    /// Halving below this mixing gives up with an oscillation error.
    pub min_mixing: f64,
}

impl Default for ScfConfig {
    fn default() -> Self {
        ScfConfig {
            mixing: 0.3,
            tol: 1e-8,
            max_iters: 500,
            eig_tol: 1e-9,
            eig_max_iters: 400,
            band_fraction: crate::minimizer::DEFAULT_BAND_FRACTION,
            zero_mode: false,
            min_mixing: 1e-3,
        }
    }
}

impl ScfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.mixing > 0.0 && self.mixing <= 1.0) {
            return bad("mixing must lie in (0,1]");
        }
        if !(self.tol > 0.0 && self.eig_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_iters == 0 || self.eig_max_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.band_fraction > 0.0 && self.band_fraction <= 1.0) {
            return bad("band_fraction must lie in (0,1]");
        }
        if !(self.min_mixing > 0.0 && self.min_mixing <= self.mixing) {
            return bad("min_mixing must lie in (0, mixing]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ScfReport {
    /// Eigenvectors of the final `H_ρ`; also `eigen.vectors`.
    pub set: OrbitalSet,
    pub eigen: EigenReport,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub converged: bool,
    /// Mixing in effect at the end, after any halvings.
    pub mixing: f64,
    /// Last `‖ρ - ρ_new‖₁ / N`.
    pub density_change: f64,
}

/// Consecutive iterations without a 1% drop in the density change before the
/// mixing is halved.
const STALL_WINDOW: usize = 6;

fn mix(rho: &Density, new: &Density, alpha: f64) -> Density {
    let values = rho
        .values()
        .iter()
        .zip(new.values())
        .map(|(r, n)| (1.0 - alpha) * r + alpha * n)
        .collect();
    Density::from_values(rho.grid(), values).expect("same grid")
}

/// Fixed-point iteration `ρ ← (1-α) ρ + α ρ_new`, with `ρ_new` built from the
/// `N` lowest eigenvectors of `H_ρ`. The orbital count and starting density
/// come from `init`.
pub fn scf_solve(init: &OrbitalSet, a: f64, m: f64, cfg: &ScfConfig) -> Result<ScfReport> {
    cfg.validate()?;
    let n = init.len();
    let band = SpectralBand::new(init.grid(), cfg.band_fraction).with_zero_mode(cfg.zero_mode);
    let mut rho = density(init);
    let mut vectors: Vec<ComplexField> = init.orbitals().to_vec();
    let mut alpha = cfg.mixing;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut iterations = 0;
    loop {
        let op = LinearizedOperator::massive(&rho, a, m)?.restricted_to(band.clone());
        let eig = lowest_eigenpairs_from(&op, &vectors, cfg.eig_tol, cfg.eig_max_iters)?;
        let fresh = density(&eig.vectors);
        let change = rho.l1_distance(&fresh) / n as f64;
        vectors = eig.vectors.orbitals().to_vec();
        let done = change <= cfg.tol;
        if done || iterations >= cfg.max_iters {
            let set = eig.vectors.clone();
            return Ok(ScfReport {
                energy: energy(&set, a, m)?,
                set,
                eigen: eig,
                iterations,
                converged: done,
                mixing: alpha,
                density_change: change,
            });
        }
        if change < 0.99 * best {
            best = change;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= STALL_WINDOW {
                alpha *= 0.5;
                stalled = 0;
                best = change;
                if alpha < cfg.min_mixing {
                    return Err(Error::OscillationDetected { mixing: alpha });
                }
            }
        }
        rho = mix(&rho, &fresh, alpha);
        iterations += 1;
    }
}
