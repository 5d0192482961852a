//! Scalar objectives on orbital sets and their first variations.
//!
//! Gradients follow the real-gradient convention for complex fields: for a
//! real functional `F(w)` the gradient `g` satisfies
//! `dF(w + εh)/dε |_{ε=0} = Re⟨g, h⟩`, which for `F = ⟨w, A w⟩` gives `g = 2 A w`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{ComplexField, Grid, MultiplierKind, MultiplierSpectrum};
use crate::state::{density, Density, OrbitalSet};

/// Orthonormality tolerance required by every objective.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Below this massless kinetic trace a set counts as a constant field.
pub const DEGENERATE_KINETIC: f64 = 1e-14;

/// Regularized lattice sum `-Σ'_{n∈ℤ³} |n|^{-1}` of the simple cubic lattice.
/// Sets the leading discretization bias of `1/|k|` sums with the zero mode dropped.
pub const CUBIC_LATTICE_INVERSE_SUM: f64 = 2.837_297_479_480_6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `Σ ⟨w_i, (√(-Δ+m²) - m) w_i⟩`
    pub kinetic_massive: f64,
    /// `a ∫ ρ^{4/3}`
    pub interaction: f64,
    pub total: f64,
    pub a: f64,
    pub m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuotientReport {
    /// `tr(√-Δ γ)`
    pub massless_kinetic: f64,
    /// `∫ ρ^{4/3}`
    pub lp_interaction: f64,
    pub quotient: f64,
    pub n: usize,
    pub box_length: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DstarReport {
    /// `tr(√-Δ γ) · tr(γ/√-Δ)`, zero mode dropped from the second trace.
    pub product: f64,
    pub massless_kinetic: f64,
    pub inverse_trace: f64,
    /// Leading-order estimate of how much the dropped zero mode and the
    /// lattice sum underestimate `tr(γ/√-Δ)`.
    pub dc_bias: f64,
}

impl DstarReport {
    /// Product with the estimated zero-mode bias added back.
    pub fn corrected_product(&self) -> f64 {
        self.massless_kinetic * (self.inverse_trace + self.dc_bias)
    }

    /// Bias of the product relative to its value.
    pub fn relative_bias(&self) -> f64 {
        self.massless_kinetic * self.dc_bias / self.product
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirialReport {
    /// `T - (3/2) D̂ ∫ρ^{4/3}`
    pub lhs: f64,
    /// `(3/2) Σ μ_j ‖w_j‖²`
    pub rhs: f64,
    pub residual: f64,
    pub applicable: bool,
    pub note: Option<String>,
}

pub(crate) fn require_orthonormal(set: &OrbitalSet) -> Result<()> {
    let deviation = set.gram_deviation();
    if deviation > ORTHONORMAL_TOL || !deviation.is_finite() {
        return Err(Error::NotOrthonormal { deviation });
    }
    Ok(())
}

/// Spectral coefficients of every orbital plus the density; shared by the
/// objective, gradient and diagnostics so each orbital is transformed once.
pub(crate) struct Evaluated {
    pub spectra: Vec<Vec<Complex64>>,
    pub density: Density,
}

impl Evaluated {
    pub fn new(set: &OrbitalSet) -> Self {
        Evaluated {
            spectra: set.orbitals().iter().map(|w| w.spectrum()).collect(),
            density: density(set),
        }
    }

    pub fn form(&self, set: &OrbitalSet, s: &MultiplierSpectrum) -> f64 {
        self.spectra
            .iter()
            .zip(set.occupations())
            .map(|(c, n)| n * s.form_from_spectrum(c))
            .sum()
    }
}

fn massless(set: &OrbitalSet) -> MultiplierSpectrum {
    MultiplierSpectrum::new(set.grid(), MultiplierKind::Massless).expect("valid kind")
}

pub(crate) fn energy_from(
    set: &OrbitalSet,
    ev: &Evaluated,
    kinetic: &MultiplierSpectrum,
    a: f64,
    m: f64,
) -> EnergyBreakdown {
    let kinetic_massive = ev.form(set, kinetic);
    let interaction = a * ev.density.lp_integral(4.0 / 3.0);
    EnergyBreakdown {
        kinetic_massive,
        interaction,
        total: kinetic_massive - interaction,
        a,
        m,
    }
}

fn check_params(a: f64, m: f64) -> Result<()> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::InvalidArgument(format!("coupling must be >= 0, got {a}")));
    }
    if !(m.is_finite() && m >= 0.0) {
        return Err(Error::InvalidArgument(format!("mass must be >= 0, got {m}")));
    }
    Ok(())
}

/// `E_a(γ) = tr((√(-Δ+m²) - m) γ) - a ∫ ρ^{4/3}`.
pub fn energy(set: &OrbitalSet, a: f64, m: f64) -> Result<EnergyBreakdown> {
    check_params(a, m)?;
    require_orthonormal(set)?;
    let kinetic = MultiplierSpectrum::kinetic(set.grid(), m)?;
    Ok(energy_from(set, &Evaluated::new(set), &kinetic, a, m))
}

/// `g_i = 2 n_i [(√(-Δ+m²) - m) w_i - (4a/3) ρ^{1/3} w_i]`
pub fn energy_gradient(set: &OrbitalSet, a: f64, m: f64) -> Result<Vec<ComplexField>> {
    check_params(a, m)?;
    require_orthonormal(set)?;
    let kinetic = MultiplierSpectrum::kinetic(set.grid(), m)?;
    let ev = Evaluated::new(set);
    let potential: Vec<f64> = ev
        .density
        .cube_root()
        .into_iter()
        .map(|r| -4.0 * a / 3.0 * r)
        .collect();
    Ok(apply_linearized(set, &ev, &kinetic, &potential, 2.0))
}

/// `scale · n_i (S w_i + V w_i)` for every orbital, reusing cached spectra.
pub(crate) fn apply_linearized(
    set: &OrbitalSet,
    ev: &Evaluated,
    symbol: &MultiplierSpectrum,
    potential: &[f64],
    scale: f64,
) -> Vec<ComplexField> {
    let grid = set.grid();
    set.orbitals()
        .iter()
        .zip(&ev.spectra)
        .zip(set.occupations())
        .map(|((w, c), &n)| {
            let weighted: Vec<Complex64> = c
                .iter()
                .zip(symbol.values())
                .map(|(c, s)| c * s)
                .collect();
            let mut out = ComplexField::from_spectrum(grid, &weighted).expect("same grid");
            out.values_mut()
                .iter_mut()
                .zip(w.values())
                .zip(potential)
                .for_each(|((o, w), v)| *o = scale * n * (*o + w * v));
            out
        })
        .collect()
}

fn require_quotient_set(set: &OrbitalSet) -> Result<()> {
    if !set.has_unit_occupations() {
        return Err(Error::InvalidArgument(
            "the quotient is implemented for unit occupations only".into(),
        ));
    }
    require_orthonormal(set)
}

pub(crate) fn quotient_from(set: &OrbitalSet, ev: &Evaluated) -> Result<QuotientReport> {
    let t = ev.form(set, &massless(set));
    if t <= DEGENERATE_KINETIC {
        return Err(Error::DegenerateField { kinetic: t });
    }
    let p = ev.density.lp_integral(4.0 / 3.0);
    Ok(QuotientReport {
        massless_kinetic: t,
        lp_interaction: p,
        quotient: t / p,
        n: set.grid().n(),
        box_length: set.grid().box_length(),
    })
}

/// `tr(√-Δ γ) / ∫ ρ^{4/3}` for a unit-occupation orthonormal set.
pub fn lt_quotient(set: &OrbitalSet) -> Result<QuotientReport> {
    require_quotient_set(set)?;
    quotient_from(set, &Evaluated::new(set))
}

/// `g_i = (2/P) [√-Δ w_i - (4/3) Q ρ^{1/3} w_i]` with `P = ∫ρ^{4/3}`, `Q` the quotient.
pub fn quotient_gradient(set: &OrbitalSet) -> Result<Vec<ComplexField>> {
    require_quotient_set(set)?;
    let ev = Evaluated::new(set);
    let q = quotient_from(set, &ev)?;
    let potential: Vec<f64> = ev
        .density
        .cube_root()
        .into_iter()
        .map(|r| -4.0 / 3.0 * q.quotient * r)
        .collect();
    Ok(apply_linearized(set, &ev, &massless(set), &potential, 2.0 / q.lp_interaction))
}

/// `|c_0|²`, or for an orbital without zero mode the mean of `|c_k|²` over
/// the innermost shell `|k| = k_min`, which approximates the continuum
/// weight the box cannot represent.
fn zero_mode_weight(grid: &Grid, coeffs: &[Complex64]) -> f64 {
    let c0 = coeffs[0].norm_sqr();
    let total: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
    if c0 > 1e-20 * total {
        return c0;
    }
    let kmin = grid.k_min();
    let (sum, count) = grid
        .k_norm()
        .iter()
        .zip(coeffs)
        .filter(|(k, _)| (**k - kmin).abs() <= 1e-9 * kmin)
        .fold((0.0, 0usize), |(s, n), (_, c)| (s + c.norm_sqr(), n + 1));
    if count == 0 { 0.0 } else { sum / count as f64 }
}

/// Scale-invariant product `tr(√-Δ γ) · tr(γ/√-Δ)`.
pub fn dstar_product(set: &OrbitalSet) -> Result<DstarReport> {
    require_quotient_set(set)?;
    let ev = Evaluated::new(set);
    let t = ev.form(set, &massless(set));
    if t <= DEGENERATE_KINETIC {
        return Err(Error::DegenerateField { kinetic: t });
    }
    let inv = MultiplierSpectrum::new(set.grid(), MultiplierKind::InverseMassless)?;
    let inverse_trace = ev.form(set, &inv);
    let dc_weight: f64 = ev.spectra.iter().map(|c| zero_mode_weight(set.grid(), c)).sum();
    let dc_bias = CUBIC_LATTICE_INVERSE_SUM * dc_weight / set.grid().k_min();
    Ok(DstarReport {
        product: t * inverse_trace,
        massless_kinetic: t,
        inverse_trace,
        dc_bias,
    })
}

/// Pohozaev-type balance for a massless optimizer candidate:
/// `T - (3/2) D̂ ∫ρ^{4/3}` against `(3/2) Σ μ_j ‖w_j‖²`.
pub fn virial_residual(set: &OrbitalSet, d_hat: f64, mus: &[f64]) -> Result<VirialReport> {
    if mus.len() != set.len() {
        return Err(Error::InvalidArgument(format!(
            "{} multipliers for {} orbitals",
            mus.len(),
            set.len()
        )));
    }
    let ev = Evaluated::new(set);
    let t = ev.form(set, &massless(set));
    let p = ev.density.lp_integral(4.0 / 3.0);
    let lhs = t - 1.5 * d_hat * p;
    let rhs = 1.5
        * mus
            .iter()
            .zip(set.orbitals())
            .map(|(mu, w)| mu * w.norm_sqr())
            .sum::<f64>();
    let residual = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
    Ok(VirialReport {
        lhs,
        rhs,
        residual,
        applicable: true,
        note: None,
    })
}

/// The virial balance above holds for the massless problem only; massive
/// minimizers get a flagged report with no numbers.
pub fn virial_residual_massive(_set: &OrbitalSet) -> VirialReport {
    VirialReport {
        lhs: 0.0,
        rhs: 0.0,
        residual: 0.0,
        applicable: false,
        note: Some("massless-only identity".into()),
    }
}

/// `(1 - a/D̂) tr(√-Δ γ) - m tr γ`, a lower bound for `E_a(γ)` whenever `D̂`
/// does not exceed the true constant.
pub fn energy_lower_bound(set: &OrbitalSet, a: f64, m: f64, d_hat: f64) -> f64 {
    let t = Evaluated::new(set).form(set, &massless(set));
    let trace: f64 = set
        .orbitals()
        .iter()
        .zip(set.occupations())
        .map(|(w, n)| n * w.norm_sqr())
        .sum();
    (1.0 - a / d_hat) * t - m * trace
}

/// `tr(√-Δ γ)`
pub fn massless_kinetic(set: &OrbitalSet) -> f64 {
    Evaluated::new(set).form(set, &massless(set))
}
