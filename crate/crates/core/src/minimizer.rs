//! Descent on the manifold of orthonormal frames.
//!
//! Each iteration projects the gradient onto the tangent space, applies the
//! `1/(1 + |k|/κ)` preconditioner, takes a Barzilai–Borwein trial step with
//! monotone Armijo backtracking and retracts by Löwdin orthonormalization.
//!
//! Frames are confined to a spectral band that excludes `k = 0`. On a
//! periodic box the constant field carries no kinetic energy but a finite
//! share `V^{-1/3}` of `∫ρ^{4/3}`, a zero mode with no counterpart on the
//! whole space that a second orbital would otherwise occupy.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{
    apply_linearized, energy_from, quotient_from, require_orthonormal, Evaluated,
};
use crate::spectral::{
    dilate_box, ComplexField, Grid, MultiplierKind, MultiplierSpectrum, SpectralBand,
};
use crate::state::{combine, hermitian_eigen, loewdin, OrbitalSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    None,
    /// Report the final set relabelled so that `tr(√-Δ γ) = 1`.
    UnitMasslessKinetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeConfig {
    pub max_iters: usize,
    /// Convergence threshold on the projected-gradient measure of the report.
    pub grad_tol: f64,
    pub step_init: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub normalize_mode: NormalizeMode,
    pub seed: u64,
    /// Orbitals keep only modes with `0 < |k| ≤ band_fraction · k_Nyquist`.
    pub band_fraction: f64,
    /// Also admit `k = 0`. Safe for massive energies away from the
    /// threshold; the massless quotient then leaks into a flat background.
    #[serde(default)]
    pub zero_mode: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace_path: Option<PathBuf>,
}

/// Keeps the whole sphere inscribed in the Nyquist cube.
pub const DEFAULT_BAND_FRACTION: f64 = 1.0;

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            max_iters: 4000,
            grad_tol: 1e-6,
            step_init: 0.1,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            normalize_mode: NormalizeMode::None,
            seed: 0,
            band_fraction: DEFAULT_BAND_FRACTION,
            zero_mode: false,
            trace_path: None,
        }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return bad("step_init must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0,1)");
        }
        if !(self.band_fraction > 0.0 && self.band_fraction <= 1.0) {
            return bad("band_fraction must lie in (0,1]");
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return bad("armijo_shrink must lie in (0,1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
    /// `tr(√-Δ γ)` of the iterate.
    pub massless_kinetic: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizeReport {
    /// Orbitals rotated to diagonalize `⟨w_i, H w_j⟩`, ordered by multiplier.
    pub final_set: OrbitalSet,
    pub objective: f64,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Eigenvalues of `⟨w_i, H w_j⟩`, ascending.
    pub multipliers: Vec<f64>,
    /// `‖H w_i - μ_i w_i‖₂` per orbital of `final_set`, divided by
    /// `tr(√-Δ γ)` for the quotient.
    pub residuals: Vec<f64>,
    pub history: Vec<IterationRecord>,
}

/// Scalar objective together with its linearized operator applied to the frame.
pub(crate) struct Evaluation {
    pub value: f64,
    pub massless_kinetic: f64,
    /// `H w_i`
    pub applied: Vec<ComplexField>,
    /// Euclidean gradient is `grad_scale · H w_i`.
    pub grad_scale: f64,
    /// Divides the Euler–Lagrange residual to give the convergence measure.
    pub residual_scale: f64,
}

pub(crate) trait Objective {
    fn evaluate(&self, set: &OrbitalSet) -> Result<Evaluation>;
    fn guard(&self, n_orbitals: usize) -> Option<f64>;
}

pub(crate) struct EnergyObjective {
    pub a: f64,
    pub m: f64,
    kinetic: MultiplierSpectrum,
    massless: MultiplierSpectrum,
}

impl EnergyObjective {
    pub fn new(grid: &Grid, a: f64, m: f64) -> Result<Self> {
        if !(a.is_finite() && a >= 0.0 && m.is_finite() && m >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need a >= 0 and m >= 0, got a={a}, m={m}"
            )));
        }
        Ok(EnergyObjective {
            a,
            m,
            kinetic: MultiplierSpectrum::kinetic(grid, m)?,
            massless: MultiplierSpectrum::new(grid, MultiplierKind::Massless)?,
        })
    }
}

impl Objective for EnergyObjective {
    fn evaluate(&self, set: &OrbitalSet) -> Result<Evaluation> {
        let ev = Evaluated::new(set);
        let e = energy_from(set, &ev, &self.kinetic, self.a, self.m);
        let c = 4.0 * self.a / 3.0;
        let potential: Vec<f64> = ev.density.cube_root().into_iter().map(|r| -c * r).collect();
        let applied = apply_linearized(set, &ev, &self.kinetic, &potential, 1.0);
        Ok(Evaluation {
            value: e.total,
            massless_kinetic: ev.form(set, &self.massless),
            applied,
            grad_scale: 2.0,
            residual_scale: 1.0,
        })
    }

    fn guard(&self, n_orbitals: usize) -> Option<f64> {
        (self.m > 0.0).then(|| -10.0 * self.m * n_orbitals as f64)
    }
}

pub(crate) struct QuotientObjective {
    massless: MultiplierSpectrum,
}

impl QuotientObjective {
    pub fn new(grid: &Grid) -> Result<Self> {
        Ok(QuotientObjective {
            massless: MultiplierSpectrum::new(grid, MultiplierKind::Massless)?,
        })
    }
}

impl Objective for QuotientObjective {
    fn evaluate(&self, set: &OrbitalSet) -> Result<Evaluation> {
        let ev = Evaluated::new(set);
        let q = quotient_from(set, &ev)?;
        let c = 4.0 / 3.0 * q.quotient;
        let potential: Vec<f64> = ev.density.cube_root().into_iter().map(|r| -c * r).collect();
        Ok(Evaluation {
            value: q.quotient,
            massless_kinetic: q.massless_kinetic,
            applied: apply_linearized(set, &ev, &self.massless, &potential, 1.0),
            grad_scale: 2.0 / q.lp_interaction,
            // residual of a dilated frame scales like its kinetic trace
            residual_scale: q.massless_kinetic,
        })
    }

    fn guard(&self, _n_orbitals: usize) -> Option<f64> {
        None
    }
}

/// `B_ji = ⟨w_j, v_i⟩`
fn overlap(ws: &[ComplexField], vs: &[ComplexField]) -> DMatrix<Complex64> {
    DMatrix::from_fn(ws.len(), vs.len(), |j, i| {
        ws[j].inner(&vs[i]).expect("fields share a grid")
    })
}

fn hermitian_part(b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (b + b.adjoint()).scale(0.5)
}

/// `d_i = g_i - Σ_j w_j sym(⟨w_j, g_i⟩)`, the orthogonal projection (for the
/// real inner product `Re⟨·,·⟩`) onto the tangent space at an orthonormal frame.
pub fn project_tangent(set: &OrbitalSet, grads: &[ComplexField]) -> Result<Vec<ComplexField>> {
    if grads.len() != set.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} orbitals",
            grads.len(),
            set.len()
        )));
    }
    for g in grads {
        g.check_same_grid(set.orbital(0))?;
    }
    Ok(project_unchecked(set.orbitals(), grads))
}

fn project_unchecked(ws: &[ComplexField], grads: &[ComplexField]) -> Vec<ComplexField> {
    let sym = hermitian_part(&overlap(ws, grads));
    let correction = combine(ws, &sym);
    grads
        .iter()
        .zip(correction)
        .map(|(g, c)| {
            let mut d = g.clone();
            d.axpy(Complex64::new(-1.0, 0.0), &c).expect("same grid");
            d
        })
        .collect()
}

fn real_inner(xs: &[ComplexField], ys: &[ComplexField]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| x.inner(y).expect("same grid").re)
        .sum()
}

struct Preconditioner {
    band: SpectralBand,
    weights: Vec<f64>,
}

impl Preconditioner {
    /// `1/(1 + |k|/κ)` on the band, with `κ` the mean momentum of the start.
    fn new(grid: &Grid, band: SpectralBand, kappa: f64) -> Self {
        let kappa = if kappa.is_finite() && kappa > 0.0 { kappa } else { grid.k_min() };
        Preconditioner {
            weights: grid.k_norm().iter().map(|&k| 1.0 / (1.0 + k / kappa)).collect(),
            band,
        }
    }

    /// Band-restricted preconditioned field and the norm of the band part of `d`.
    fn apply(&self, grid: &Grid, d: &ComplexField) -> (ComplexField, f64) {
        let mut c = d.spectrum();
        self.band.restrict(&mut c);
        let norm = c.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        c.iter_mut().zip(&self.weights).for_each(|(c, w)| *c *= w);
        (ComplexField::from_spectrum(grid, &c).expect("same grid"), norm)
    }
}

struct Point {
    set: OrbitalSet,
    eval: Evaluation,
    /// Riemannian gradient.
    direction: Vec<ComplexField>,
    /// Projected preconditioned gradient.
    search: Vec<ComplexField>,
    residual: f64,
}

fn make_point(
    objective: &dyn Objective,
    set: OrbitalSet,
    precond: &Preconditioner,
) -> Result<Point> {
    let eval = objective.evaluate(&set)?;
    let ws = set.orbitals();
    let direction: Vec<ComplexField> = project_unchecked(ws, &eval.applied)
        .iter()
        .map(|r| r.scaled(Complex64::new(eval.grad_scale, 0.0)))
        .collect();
    let grid = set.grid().clone();
    let (pre, norms): (Vec<ComplexField>, Vec<f64>) =
        direction.iter().map(|d| precond.apply(&grid, d)).unzip();
    let residual = norms.iter().map(|n| n * n).sum::<f64>().sqrt()
        / (eval.grad_scale * eval.residual_scale);
    let search = project_unchecked(ws, &pre);
    Ok(Point { set, eval, direction, search, residual })
}

/// Projects every orbital onto the band and re-orthonormalizes.
pub fn band_limited_frame(set: &OrbitalSet, band: &SpectralBand) -> Result<OrbitalSet> {
    loewdin(&set.map_orbitals(|w| Ok(band.project(w)))?)
}

fn retract(set: &OrbitalSet, search: &[ComplexField], step: f64) -> Result<OrbitalSet> {
    let moved: Vec<ComplexField> = set
        .orbitals()
        .iter()
        .zip(search)
        .map(|(w, p)| {
            let mut x = w.clone();
            x.axpy(Complex64::new(-step, 0.0), p).expect("same grid");
            x
        })
        .collect();
    loewdin(&OrbitalSet::with_occupations(moved, set.occupations().to_vec())?)
}

struct TraceWriter(Option<BufWriter<File>>);

impl TraceWriter {
    fn open(cfg: &MinimizeConfig) -> Result<Self> {
        match &cfg.trace_path {
            None => Ok(TraceWriter(None)),
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "iteration,objective,grad_norm,step,massless_kinetic")?;
                Ok(TraceWriter(Some(w)))
            }
        }
    }

    fn row(&mut self, it: usize, r: &IterationRecord) -> Result<()> {
        if let Some(w) = &mut self.0 {
            writeln!(
                w,
                "{it},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.objective, r.grad_norm, r.step, r.massless_kinetic
            )?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(w) = &mut self.0 {
            w.flush()?;
        }
        Ok(())
    }
}

const MAX_BACKTRACKS: usize = 60;
const STALL_BACKTRACKS: usize = 25;

pub(crate) fn run(
    objective: &dyn Objective,
    init: &OrbitalSet,
    cfg: &MinimizeConfig,
) -> Result<MinimizeReport> {
    cfg.validate()?;
    if !init.has_unit_occupations() {
        return Err(Error::InvalidArgument("minimization needs unit occupations".into()));
    }
    let grid = init.grid().clone();
    let band = SpectralBand::new(&grid, cfg.band_fraction).with_zero_mode(cfg.zero_mode);
    let start = band_limited_frame(init, &band)?;
    require_orthonormal(&start)?;
    let n_orb = start.len();
    let kappa = crate::functionals::massless_kinetic(&start) / n_orb as f64;
    let precond = Preconditioner::new(&grid, band.clone(), kappa);
    let guard = objective.guard(n_orb);
    let mut trace = TraceWriter::open(cfg)?;

    let mut cur = make_point(objective, start, &precond)?;
    let mut history = vec![IterationRecord {
        objective: cur.eval.value,
        grad_norm: cur.residual,
        step: 0.0,
        massless_kinetic: cur.eval.massless_kinetic,
    }];
    trace.row(0, &history[0])?;
    let mut step = cfg.step_init;
    let mut iterations = 0;
    let mut converged = cur.residual <= cfg.grad_tol;

    while !converged && iterations < cfg.max_iters {
        let slope = real_inner(&cur.direction, &cur.search);
        if !(slope > 0.0) {
            break;
        }
        let mut alpha = step;
        let mut accepted = None;
        let mut backtracks = 0;
        for _ in 0..MAX_BACKTRACKS {
            let trial = retract(&cur.set, &cur.search, alpha)?;
            let next = match make_point(objective, trial, &precond) {
                Ok(p) => p,
                Err(Error::DegenerateField { .. }) => {
                    alpha *= cfg.armijo_shrink;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if next.eval.value <= cur.eval.value - cfg.armijo_c * alpha * slope {
                accepted = Some(next);
                break;
            }
            alpha *= cfg.armijo_shrink;
            backtracks += 1;
        }
        let Some(next) = accepted else { break };
        // a step this short only moves within rounding noise of the objective
        let stalled = backtracks >= STALL_BACKTRACKS;
        iterations += 1;
        if let Some(g) = guard {
            if next.eval.value < g {
                trace.finish()?;
                return Err(Error::DivergingObjective { value: next.eval.value, guard: g });
            }
        }

        // Barzilai–Borwein length from the frame and search differences
        let s: Vec<ComplexField> = diff(next.set.orbitals(), cur.set.orbitals());
        let y: Vec<ComplexField> = diff(&next.search, &cur.search);
        let sy = real_inner(&s, &y);
        let ss = real_inner(&s, &s);
        step = if sy > 0.0 && ss > 0.0 {
            (ss / sy).min(1e3 * alpha.max(cfg.step_init))
        } else {
            2.0 * alpha
        };

        let record = IterationRecord {
            objective: next.eval.value,
            grad_norm: next.residual,
            step: alpha,
            massless_kinetic: next.eval.massless_kinetic,
        };
        trace.row(iterations, &record)?;
        history.push(record);
        cur = next;
        converged = cur.residual <= cfg.grad_tol;
        if stalled {
            break;
        }
    }
    trace.finish()?;
    finish(cur, &band, iterations, converged, history, cfg)
}

fn diff(a: &[ComplexField], b: &[ComplexField]) -> Vec<ComplexField> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut d = x.clone();
            d.axpy(Complex64::new(-1.0, 0.0), y).expect("same grid");
            d
        })
        .collect()
}

fn finish(
    cur: Point,
    band: &SpectralBand,
    iterations: usize,
    converged: bool,
    history: Vec<IterationRecord>,
    cfg: &MinimizeConfig,
) -> Result<MinimizeReport> {
    let (value, applied) = (cur.eval.value, &cur.eval.applied);
    let ws = cur.set.orbitals();
    let a = hermitian_part(&overlap(ws, applied));
    let (multipliers, u) = hermitian_eigen(&a);
    let final_set = cur.set.mixed(&u)?;
    let applied = combine(applied, &u);
    let residuals: Vec<f64> = applied
        .iter()
        .zip(final_set.orbitals())
        .zip(&multipliers)
        .map(|((hw, w), mu)| {
            let mut r = hw.clone();
            r.axpy(Complex64::new(-mu, 0.0), w).expect("same grid");
            band.projected_norm(&r) / cur.eval.residual_scale
        })
        .collect();
    let mut report = MinimizeReport {
        final_set,
        objective: value,
        projected_grad_norm: cur.residual,
        iterations,
        converged,
        multipliers,
        residuals,
        history,
    };
    if cfg.normalize_mode == NormalizeMode::UnitMasslessKinetic {
        report = normalized(report, cur.eval.massless_kinetic)?;
    }
    Ok(report)
}

/// Relabels the box so the final set has `tr(√-Δ γ) = 1`; multipliers scale
/// with the momentum.
fn normalized(mut report: MinimizeReport, kinetic: f64) -> Result<MinimizeReport> {
    let t = 1.0 / kinetic;
    report.final_set = report.final_set.map_orbitals(|w| dilate_box(w, t))?;
    report.multipliers.iter_mut().for_each(|mu| *mu *= t);
    Ok(report)
}

/// Minimizes `E_a` over orthonormal frames with the size of `init`.
/// A run that stops early returns a report with `converged = false`.
pub fn minimize_energy(
    init: &OrbitalSet,
    a: f64,
    m: f64,
    cfg: &MinimizeConfig,
) -> Result<MinimizeReport> {
    let objective = EnergyObjective::new(init.grid(), a, m)?;
    run(&objective, init, cfg)
}

/// Minimizes the kinetic-to-interaction quotient. Without the zero mode the
/// box quotient grows both when a profile approaches the box size and when it
/// approaches the grid spacing, so the optimizer settles at a scale set by the
/// discretization. Residuals are divided by `tr(√-Δ γ)` and are therefore
/// dilation invariant.
pub fn minimize_quotient(init: &OrbitalSet, cfg: &MinimizeConfig) -> Result<MinimizeReport> {
    run(&QuotientObjective::new(init.grid())?, init, cfg)
}

/// Deterministic start: an isotropic Gaussian of width `L/8` times
/// `1, x₁, x₂, x₃` for up to four orbitals, Löwdin-orthonormalized.
/// Nonzero seeds randomize widths, centers and add complex low-order terms.
pub fn initial_set(grid: &Grid, n_orbitals: usize, seed: u64) -> Result<OrbitalSet> {
    initial_set_with_width(grid, n_orbitals, seed, grid.box_length() / 8.0)
}

/// As [`initial_set`] with a chosen Gaussian width.
pub fn initial_set_with_width(
    grid: &Grid,
    n_orbitals: usize,
    seed: u64,
    base_width: f64,
) -> Result<OrbitalSet> {
    if !(base_width.is_finite() && base_width > 0.0) {
        return Err(Error::InvalidArgument(format!("width must be positive, got {base_width}")));
    }
    if !(1..=4).contains(&n_orbitals) {
        return Err(Error::InvalidArgument(format!(
            "initial sets have 1 to 4 orbitals, got {n_orbitals}"
        )));
    }
    let l = grid.box_length();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orbitals = (0..n_orbitals)
        .map(|j| {
            let (width, center, mix) = if seed == 0 {
                (base_width, [0.0; 3], [Complex64::new(0.0, 0.0); 4])
            } else {
                let width = base_width * rng.random_range(0.6..1.4);
                let center = [0; 3].map(|_| rng.random_range(-0.05..0.05) * l);
                let mix = [0; 4].map(|_| {
                    Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))
                });
                (width, center, mix)
            };
            ComplexField::from_fn(grid, |x| {
                let y = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
                let r2: f64 = y.iter().map(|v| v * v).sum();
                let env = (-r2 / (2.0 * width * width)).exp();
                let poly = if j == 0 { 1.0 } else { y[j - 1] / width };
                let extra = mix[0] + (mix[1] * y[0] + mix[2] * y[1] + mix[3] * y[2]) / width;
                (Complex64::new(poly, 0.0) + extra) * env
            })
        })
        .collect();
    loewdin(&OrbitalSet::new(orbitals)?)
}
