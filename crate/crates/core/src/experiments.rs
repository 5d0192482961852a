//! Estimates of the constants `D̂_N` and `d̂_*`, and the experiments built on
//! them: binding, splitting into translated copies, collapse above the
//! threshold, the sweep `a ↗ D̂₂` with its scaling fits, and tail decay.
//!
//! Energy runs use a box fitted to the minimizer: with `T = tr(√-Δ γ)` the box
//! is chosen so that `h T / N` matches a target, which keeps the profile at
//! the resolution of the quotient optimizers it converges to.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{
    dstar_product, energy, energy_lower_bound, lt_quotient, massless_kinetic, EnergyBreakdown,
};
use crate::minimizer::{
    initial_set_with_width, minimize_energy, minimize_quotient, MinimizeConfig, MinimizeReport,
    NormalizeMode,
};
use crate::spectral::{dilate_box, dilate_pow2, make_grid, pad_box, DilationDirection};
use crate::state::{density, gram_of, loewdin, translated_pair, OrbitalSet};

/// Order of magnitude of `d_*` used only to guess starting sizes.
const DSTAR_GUESS: f64 = 4.4;

/// Runs `f` over `items` on up to `workers` threads; results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no poisoned lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantConfig {
    pub n: usize,
    pub box_length: f64,
    /// Number of starts; start `i` uses seed `seed + i`, and seed 0 is the
    /// deterministic Gaussian start.
    pub starts: usize,
    pub seed: u64,
    /// Gaussian start width relative to the box.
    pub start_width: f64,
    /// Repeat the best start on the grid refined by `dilate_pow2` up.
    pub refine: bool,
    pub workers: usize,
    pub solver: MinimizeConfig,
}

impl Default for ConstantConfig {
    fn default() -> Self {
        ConstantConfig {
            n: 48,
            box_length: 48.0,
            starts: 5,
            seed: 0,
            start_width: 1.0 / 8.0,
            refine: true,
            workers: 1,
            solver: MinimizeConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StartOutcome {
    pub seed: u64,
    pub quotient: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: f64,
    pub multipliers: Vec<f64>,
    /// Normalized to `tr(√-Δ γ) = 1`.
    pub optimizer: OrbitalSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub n: usize,
    pub d_hat: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `|D̂(2n) - D̂(n)| / D̂(n)`
    pub relative_delta: f64,
}

#[derive(Clone, Debug)]
pub struct ConstantEstimate {
    pub n_orbitals: usize,
    pub n: usize,
    pub d_hat: f64,
    /// Index into `starts` of the best run.
    pub best: usize,
    pub starts: Vec<StartOutcome>,
    /// `(max - min) / min` over converged starts.
    pub spread: f64,
    pub refinement: Option<Refinement>,
}

impl ConstantEstimate {
    pub fn optimizer(&self) -> &OrbitalSet {
        &self.starts[self.best].optimizer
    }

    pub fn best_start(&self) -> &StartOutcome {
        &self.starts[self.best]
    }

    /// Absolute uncertainty of `D̂` from grid refinement, if it was run.
    pub fn uncertainty(&self) -> Option<f64> {
        self.refinement.as_ref().map(|r| r.relative_delta * self.d_hat)
    }
}

fn validate_orbitals(n_orbitals: usize) -> Result<()> {
    if !(1..=3).contains(&n_orbitals) {
        return Err(Error::InvalidArgument(format!("N must be 1..3, got {n_orbitals}")));
    }
    Ok(())
}

/// Best quotient over a set of seeded starts. Larger `N` than 2 is exploratory.
pub fn estimate_d(n_orbitals: usize, cfg: &ConstantConfig) -> Result<ConstantEstimate> {
    validate_orbitals(n_orbitals)?;
    if cfg.starts == 0 {
        return Err(Error::InvalidArgument("need at least one start".into()));
    }
    let grid = make_grid(cfg.n, cfg.box_length)?;
    let solver = MinimizeConfig {
        normalize_mode: NormalizeMode::UnitMasslessKinetic,
        ..cfg.solver.clone()
    };
    let seeds: Vec<u64> = (0..cfg.starts as u64).map(|i| cfg.seed + i).collect();
    let runs = parallel_map(&seeds, cfg.workers, |&seed| -> Result<StartOutcome> {
        let init =
            initial_set_with_width(&grid, n_orbitals, seed, cfg.start_width * cfg.box_length)?;
        let r = minimize_quotient(&init, &MinimizeConfig { seed, ..solver.clone() })?;
        Ok(StartOutcome {
            seed,
            quotient: r.objective,
            converged: r.converged,
            iterations: r.iterations,
            max_residual: r.residuals.iter().cloned().fold(0.0, f64::max),
            multipliers: r.multipliers,
            optimizer: r.final_set,
        })
    });
    let starts = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let best = (0..starts.len())
        .min_by(|&i, &j| starts[i].quotient.total_cmp(&starts[j].quotient))
        .expect("at least one start");
    let converged: Vec<f64> =
        starts.iter().filter(|s| s.converged).map(|s| s.quotient).collect();
    let spread = if converged.is_empty() {
        f64::NAN
    } else {
        let lo = converged.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = converged.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / lo
    };
    let d_hat = starts[best].quotient;
    let refinement = if cfg.refine {
        let fine = starts[best]
            .optimizer
            .map_orbitals(|w| dilate_pow2(w, DilationDirection::Up))?;
        let r = minimize_quotient(&fine, &solver)?;
        Some(Refinement {
            n: 2 * cfg.n,
            d_hat: r.objective,
            converged: r.converged,
            iterations: r.iterations,
            relative_delta: (r.objective - d_hat).abs() / d_hat,
        })
    } else {
        None
    };
    Ok(ConstantEstimate {
        n_orbitals,
        n: cfg.n,
        d_hat,
        best,
        starts,
        spread,
        refinement,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DstarEstimate {
    pub d_star: f64,
    /// Product for every start whose quotient is within `1e-3` of `D̂`.
    pub products: Vec<f64>,
    pub relative_bias: f64,
    /// Relative bias after embedding the optimizer in a box of twice the side.
    pub padded_relative_bias: f64,
    pub corrected: f64,
}

/// Cauchy–Schwarz floor `(tr γ)² = 4` for two orbitals.
pub const DSTAR_FLOOR: f64 = 4.0;

/// Minimum of `tr(√-Δ γ) · tr(γ/√-Δ)` over the optimizers of a two-orbital
/// estimate.
pub fn estimate_dstar(estimate: &ConstantEstimate) -> Result<DstarEstimate> {
    if estimate.n_orbitals != 2 {
        return Err(Error::InvalidArgument("d_* is defined for two orbitals".into()));
    }
    let near: Vec<&StartOutcome> = estimate
        .starts
        .iter()
        .filter(|s| s.quotient <= estimate.d_hat * (1.0 + 1e-3))
        .collect();
    let reports = near
        .iter()
        .map(|s| dstar_product(&s.optimizer))
        .collect::<Result<Vec<_>>>()?;
    let (i, best) = reports
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.product.total_cmp(&b.1.product))
        .expect("the best start qualifies");
    let padded = loewdin(&near[i].optimizer.map_orbitals(|w| Ok(pad_box(w)?.without_mean()))?)?;
    let padded_report = dstar_product(&padded)?;
    Ok(DstarEstimate {
        d_star: best.product,
        products: reports.iter().map(|r| r.product).collect(),
        relative_bias: best.relative_bias(),
        padded_relative_bias: padded_report.relative_bias(),
        corrected: best.corrected_product(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRunConfig {
    pub n: usize,
    /// Target `h T / N`, the grid spacing in units of the profile size.
    pub resolution: f64,
    /// Relative mismatch of `h T / N` that triggers another fit.
    pub ratio_tol: f64,
    pub max_refits: usize,
    pub solver: MinimizeConfig,
}

impl Default for EnergyRunConfig {
    fn default() -> Self {
        EnergyRunConfig {
            n: 48,
            resolution: 0.75,
            ratio_tol: 0.15,
            max_refits: 4,
            solver: MinimizeConfig::default(),
        }
    }
}

impl EnergyRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.ratio_tol > 0.0) {
            return Err(Error::InvalidArgument("resolution and tolerance must be positive".into()));
        }
        make_grid(self.n, 1.0)?;
        self.solver.validate()
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub report: MinimizeReport,
    pub energy: EnergyBreakdown,
    pub box_length: f64,
    /// `h T / N` of the final set.
    pub resolution: f64,
    /// Minimizations run, including refits.
    pub runs: usize,
    /// Every iterate satisfied `E ≥ (1 - a/D̂) T - m N`, if a `D̂` was given.
    pub lower_bound_held: Option<bool>,
}

/// `h T / N`
pub fn resolution_of(set: &OrbitalSet) -> f64 {
    set.grid().spacing() * massless_kinetic(set) / set.len() as f64
}

/// Heuristic size: the near-threshold law `[2(D-a)/(D m² d_*)]^{1/2}` plus
/// the nonrelativistic size `4/(a m)` damped by `1 - a/D`, so the guess is
/// continuous in `a` and tends to the former as `a ↑ D`.
pub fn size_guess(a: f64, m: f64, d_hat: f64) -> f64 {
    let gap = (1.0 - a / d_hat).max(1e-6);
    let near = (2.0 * gap / (m * m * DSTAR_GUESS)).sqrt();
    near + 4.0 * gap / (a * m).max(1e-12)
}

/// Ground state of `E_a(N)` on an `n`-point grid whose box follows the
/// minimizer. `init` supplies node values; its box is relabeled until the
/// final set has `h T / N` within `ratio_tol` of the target.
pub fn ground_state(
    init: &OrbitalSet,
    a: f64,
    m: f64,
    d_hat: Option<f64>,
    cfg: &EnergyRunConfig,
) -> Result<GroundState> {
    cfg.validate()?;
    if init.grid().n() != cfg.n {
        return Err(Error::InvalidArgument(format!(
            "start has n = {}, configuration n = {}",
            init.grid().n(),
            cfg.n
        )));
    }
    let n_orb = init.len() as f64;
    let mut set = init.clone();
    let mut runs = 0;
    let mut held = d_hat.map(|_| true);
    loop {
        let r = minimize_energy(&set, a, m, &cfg.solver)?;
        runs += 1;
        if let (Some(d), Some(ok)) = (d_hat, held.as_mut()) {
            *ok &= r.history.iter().all(|h| {
                h.objective >= (1.0 - a / d) * h.massless_kinetic - m * n_orb - 1e-10
            });
        }
        let l = r.final_set.grid().box_length();
        let resolution = resolution_of(&r.final_set);
        let off = (resolution / cfg.resolution - 1.0).abs();
        if off <= cfg.ratio_tol || runs > cfg.max_refits {
            let e = energy(&r.final_set, a, m)?;
            return Ok(GroundState {
                energy: e,
                box_length: l,
                resolution,
                runs,
                lower_bound_held: held,
                report: r,
            });
        }
        // a relabel keeps h T; the next minimization restores the physical
        // size, so shrinking the box by t moves h T / N by the factor 1/t
        let t = resolution / cfg.resolution;
        set = r.final_set.map_orbitals(|w| dilate_box(w, t))?;
    }
}

/// Seeded Gaussian start on a box sized for coupling `a`.
pub fn energy_start(
    n_orbitals: usize,
    a: f64,
    m: f64,
    d_hat: f64,
    cfg: &EnergyRunConfig,
    seed: u64,
) -> Result<OrbitalSet> {
    validate_orbitals(n_orbitals)?;
    let eps = size_guess(a, m, d_hat);
    // a Gaussian of width σ has T ≈ 1.13/σ per orbital
    let width = eps;
    let l = cfg.resolution * cfg.n as f64 * width / 1.13;
    let grid = make_grid(cfg.n, l)?;
    initial_set_with_width(&grid, n_orbitals, seed, width)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BindingReport {
    pub a: f64,
    pub m: f64,
    pub e1: f64,
    pub e2: f64,
    /// `2 E₁ - E₂`
    pub margin: f64,
    pub strict: bool,
    pub solver_tol: f64,
    pub converged: bool,
}

/// `E_a(2) < 2 E_a(1)` with a margin above the solver tolerance.
pub fn binding_check(a: f64, m: f64, d_hat: f64, cfg: &EnergyRunConfig) -> Result<BindingReport> {
    if !(a > 0.0 && a < d_hat) {
        return Err(Error::InvalidArgument(format!("need 0 < a < D̂ = {d_hat}, got {a}")));
    }
    let one = ground_state(&energy_start(1, a, m, d_hat, cfg, 0)?, a, m, Some(d_hat), cfg)?;
    let two = ground_state(&energy_start(2, a, m, d_hat, cfg, 0)?, a, m, Some(d_hat), cfg)?;
    let (e1, e2) = (one.energy.total, two.energy.total);
    let margin = 2.0 * e1 - e2;
    let solver_tol = cfg.solver.grad_tol;
    Ok(BindingReport {
        a,
        m,
        e1,
        e2,
        margin,
        strict: e2 < 2.0 * e1 - solver_tol,
        solver_tol,
        converged: one.report.converged && two.report.converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub separation: f64,
    pub quotient: f64,
    /// Largest off-diagonal Gram entry before orthonormalization.
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub d_hat_one: f64,
    pub rows: Vec<SplitRow>,
    /// Quotient at the largest separation is below `D̂₁`.
    pub below_at_largest: bool,
    /// `|Q(R) - D̂₁|` decreases along increasing `R`.
    pub monotone_approach: bool,
    /// Log-log slope of the overlap against `R`, if at least two rows are positive.
    pub overlap_slope: Option<LinearFit>,
}

/// Quotients of two translated copies of a one-orbital optimizer.
pub fn rank_splitting_check(base: &OrbitalSet, d_hat_one: f64, separations: &[f64]) -> Result<SplitReport> {
    if base.len() != 1 {
        return Err(Error::InvalidArgument("base must be a one-orbital optimizer".into()));
    }
    let mut sorted = separations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let axis = [1.0, 0.0, 0.0];
    let rows = sorted
        .iter()
        .map(|&r| {
            let shifted = base.orbital(0).translated([r, 0.0, 0.0]);
            let overlap = gram_of(&[base.orbital(0).clone(), shifted])
                .entries()[(0, 1)]
                .norm();
            let pair = translated_pair(base, r, axis)?;
            Ok(SplitRow {
                separation: r,
                quotient: lt_quotient(&pair)?.quotient,
                overlap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let below_at_largest = rows.last().is_some_and(|r| r.quotient < d_hat_one);
    let monotone_approach = rows
        .windows(2)
        .all(|w| (w[1].quotient - d_hat_one).abs() <= (w[0].quotient - d_hat_one).abs());
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.overlap > 0.0)
        .map(|r| (r.separation.ln(), r.overlap.ln()))
        .unzip();
    let overlap_slope = (xs.len() >= 2).then(|| linear_fit(&xs, &ys));
    Ok(SplitReport {
        d_hat_one,
        rows,
        below_at_largest,
        monotone_approach,
        overlap_slope,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub t: f64,
    pub energy: f64,
    pub massless_kinetic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub a: f64,
    pub m: f64,
    pub d_hat: f64,
    pub rows: Vec<CollapseRow>,
    /// Least-squares `dE/dt` over the upper half of the ladder.
    pub fitted_slope: f64,
    /// `(1 - a/D̂) T` of the undilated set.
    pub predicted_slope: f64,
}

impl CollapseReport {
    pub fn slope_error(&self) -> f64 {
        (self.fitted_slope - self.predicted_slope).abs() / self.predicted_slope.abs().max(1e-300)
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].energy < w[0].energy)
    }
}

/// Energies of `γ_t(x, y) = t³ γ(tx, ty)` for `t = 2^j`, `j = 0..=steps`.
pub fn collapse_probe(base: &OrbitalSet, a: f64, m: f64, d_hat: f64, steps: usize) -> Result<CollapseReport> {
    if steps < 2 {
        return Err(Error::InvalidArgument("need at least two dilation steps".into()));
    }
    let rows = (0..=steps)
        .map(|j| {
            let t = 2f64.powi(j as i32);
            let set = base.map_orbitals(|w| dilate_box(w, t))?;
            Ok(CollapseRow {
                t,
                energy: energy(&set, a, m)?.total,
                massless_kinetic: massless_kinetic(&set),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let upper = &rows[rows.len() / 2..];
    let xs: Vec<f64> = upper.iter().map(|r| r.t).collect();
    let ys: Vec<f64> = upper.iter().map(|r| r.energy).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(CollapseReport {
        a,
        m,
        d_hat,
        predicted_slope: (1.0 - a / d_hat) * rows[0].massless_kinetic,
        fitted_slope: fit.slope,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub ratio: f64,
    pub a: f64,
    pub d_minus_a: f64,
    pub energy: f64,
    pub energy_plus_2m: f64,
    /// `1 / tr(√-Δ γ)`
    pub eps: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n: usize,
    pub box_length: f64,
    /// `h T / N`; above one the profile spans less than a cell per unit scale.
    pub resolution: f64,
    pub resolved: bool,
    /// Every iterate satisfied `E ≥ (1 - a/D̂) T - 2m`.
    pub lower_bound_held: bool,
    /// `½ Σ|p - q|` between this and the previous centered node density,
    /// each normalized to unit mass.
    pub profile_change: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub m: f64,
    pub run: EnergyRunConfig,
    /// Records with `h T / N` above this are flagged unresolved.
    pub max_resolution: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            m: 1.0,
            run: EnergyRunConfig::default(),
            max_resolution: 1.0,
        }
    }
}

/// Two-orbital ground states for `a = ratio · D̂₂`, ratios ascending, each
/// warm-started from the previous minimizer relabeled by the predicted change
/// of `ε`; the first starts from `base`, the quotient optimizer, whose
/// resolution replaces the one in `cfg.run`.
pub fn sweep_a(
    ratios: &[f64],
    d_hat: f64,
    base: &OrbitalSet,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRecord>> {
    if ratios.is_empty() {
        return Err(Error::InvalidArgument("no ratios given".into()));
    }
    if ratios.windows(2).any(|w| w[1] <= w[0]) || ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return Err(Error::InvalidArgument("ratios must be ascending inside (0,1)".into()));
    }
    if base.len() != 2 || base.grid().n() != cfg.run.n {
        return Err(Error::InvalidArgument("base must be a two-orbital set on the sweep grid".into()));
    }
    let m = cfg.m;
    let run = EnergyRunConfig { resolution: resolution_of(base), ..cfg.run.clone() };
    let mut records: Vec<SweepRecord> = Vec::with_capacity(ratios.len());
    let mut prev: Option<(OrbitalSet, f64)> = None;
    let mut prev_density: Option<Vec<f64>> = None;
    for &ratio in ratios {
        let a = ratio * d_hat;
        let guess = size_guess(a, m, d_hat);
        let start = match &prev {
            None => {
                // base has T = 1 on its box; relabel so that T = 1/ε
                let t = 1.0 / (guess * massless_kinetic(base));
                base.map_orbitals(|w| dilate_box(w, t))?
            }
            Some((set, prev_a)) => {
                let t = size_guess(*prev_a, m, d_hat) / guess;
                set.map_orbitals(|w| dilate_box(w, t))?
            }
        };
        let gs = ground_state(&start, a, m, Some(d_hat), &run)?;
        let set = &gs.report.final_set;
        let t_kin = massless_kinetic(set);
        let eps = 1.0 / t_kin;
        let resolution = resolution_of(set);
        let rho = density(set).centered();
        let mass: f64 = rho.values().iter().sum();
        let profile: Vec<f64> = rho.values().iter().map(|v| v / mass).collect();
        let profile_change = prev_density.as_ref().map(|p| {
            0.5 * p.iter().zip(&profile).map(|(x, y)| (x - y).abs()).sum::<f64>()
        });
        let mus = &gs.report.multipliers;
        records.push(SweepRecord {
            ratio,
            a,
            d_minus_a: d_hat - a,
            energy: gs.energy.total,
            energy_plus_2m: gs.energy.total + 2.0 * m,
            eps,
            mu1: mus[0],
            mu2: mus[1],
            grad_norm: gs.report.projected_grad_norm,
            iterations: gs.report.iterations,
            converged: gs.report.converged,
            n: set.grid().n(),
            box_length: gs.box_length,
            resolution,
            resolved: resolution <= cfg.max_resolution,
            lower_bound_held: gs.lower_bound_held == Some(true),
            profile_change,
        });
        prev = Some((set.clone(), a));
        prev_density = Some(profile);
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope · x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 0.0 };
    LinearFit { slope, intercept, r_squared }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingTarget {
    /// `ε` against `D̂ - a`.
    EpsLaw,
    /// `E + 2m` against `D̂ - a`.
    EnergyLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub target: ScalingTarget,
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    /// `(a_min, a_max)` of the records used.
    pub window: (f64, f64),
    pub records_used: usize,
    /// `(E+2m)² D̂ / (2 m² (D̂-a))` at the smallest `D̂ - a` used.
    pub d_implied: Option<f64>,
}

/// Records at least `floor` below `D̂`, resolved, with positive targets.
pub fn fit_window(records: &[SweepRecord], floor: f64) -> Vec<&SweepRecord> {
    records
        .iter()
        .filter(|r| r.d_minus_a > floor && r.resolved && r.energy_plus_2m > 0.0 && r.eps > 0.0)
        .collect()
}

/// Log-log fit of the chosen quantity against `D̂ - a` over the records
/// farther than `floor` from `D̂`; `floor` is meant to be three times the
/// uncertainty of `D̂`.
pub fn fit_scaling(
    records: &[SweepRecord],
    target: ScalingTarget,
    d_hat: f64,
    m: f64,
    floor: f64,
) -> Result<ScalingFit> {
    let used = fit_window(records, floor);
    if used.len() < 4 {
        return Err(Error::InsufficientRecords { needed: 4, got: used.len() });
    }
    let xs: Vec<f64> = used.iter().map(|r| r.d_minus_a.ln()).collect();
    let ys: Vec<f64> = used
        .iter()
        .map(|r| match target {
            ScalingTarget::EpsLaw => r.eps.ln(),
            ScalingTarget::EnergyLaw => r.energy_plus_2m.ln(),
        })
        .collect();
    let fit = linear_fit(&xs, &ys);
    let a_min = used.iter().map(|r| r.a).fold(f64::INFINITY, f64::min);
    let a_max = used.iter().map(|r| r.a).fold(f64::NEG_INFINITY, f64::max);
    let d_implied = (target == ScalingTarget::EnergyLaw).then(|| {
        let r = used
            .iter()
            .min_by(|x, y| x.d_minus_a.total_cmp(&y.d_minus_a))
            .expect("nonempty window");
        r.energy_plus_2m.powi(2) * d_hat / (2.0 * m * m * r.d_minus_a)
    });
    Ok(ScalingFit {
        target,
        exponent: fit.slope,
        prefactor: fit.intercept.exp(),
        r_squared: fit.r_squared,
        window: (a_min, a_max),
        records_used: used.len(),
        d_implied,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailModel {
    /// `log|w|` against `log r`.
    Algebraic,
    /// `log|w|` against `r`; the rate is minus the slope.
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub model: TailModel,
    /// One fit per orbital.
    pub fits: Vec<LinearFit>,
    pub window: (f64, f64),
}

impl TailFit {
    pub fn acceptable(&self, min_r_squared: f64) -> bool {
        self.fits.iter().all(|f| f.r_squared >= min_r_squared)
    }
}

/// Radial decay of each orbital about the density centroid, from the shell
/// averages of `|w|²` over bins of width `h` inside `window`.
pub fn tail_fit(set: &OrbitalSet, window: (f64, f64), model: TailModel) -> Result<TailFit> {
    let grid = set.grid();
    let l = grid.box_length();
    let (r0, r1) = window;
    if !(r0 > 0.0 && r0 < r1 && r1 <= 0.5 * l) {
        return Err(Error::InvalidArgument(format!(
            "tail window ({r0}, {r1}) must lie inside (0, L/2]"
        )));
    }
    let center = density(set).centroid();
    let h = grid.spacing();
    let bins = ((r1 - r0) / h).ceil().max(1.0) as usize;
    let fits = set
        .orbitals()
        .iter()
        .map(|w| {
            let mut sum = vec![0.0; bins];
            let mut count = vec![0usize; bins];
            for (idx, v) in w.values().iter().enumerate() {
                let x = grid.position(idx);
                let r = (0..3)
                    .map(|d| {
                        let mut y = x[d] - center[d];
                        y -= l * (y / l).round();
                        y * y
                    })
                    .sum::<f64>()
                    .sqrt();
                if r >= r0 && r < r1 {
                    let b = (((r - r0) / h) as usize).min(bins - 1);
                    sum[b] += v.norm_sqr();
                    count[b] += 1;
                }
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = (0..bins)
                .filter(|&b| count[b] > 0 && sum[b] > 0.0)
                .map(|b| {
                    let r = r0 + (b as f64 + 0.5) * h;
                    let amp = (sum[b] / count[b] as f64).sqrt().ln();
                    let x = match model {
                        TailModel::Algebraic => r.ln(),
                        TailModel::Exponential => r,
                    };
                    (x, amp)
                })
                .unzip();
            linear_fit(&xs, &ys)
        })
        .collect();
    Ok(TailFit { model, fits, window })
}

/// `θ₁ = √(m² - (m + μ₁)²)` when `m + μ₁ > 0`.
pub fn decay_rate(m: f64, mu1: f64) -> Option<f64> {
    let s = m + mu1;
    (s > 0.0 && s < m).then(|| (m * m - s * s).sqrt())
}

/// Energy lower bound check `E ≥ (1 - a/D̂) T - m N` on a single set.
pub fn lower_bound_gap(set: &OrbitalSet, a: f64, m: f64, d_hat: f64) -> Result<f64> {
    Ok(energy(set, a, m)?.total - energy_lower_bound(set, a, m, d_hat))
}
