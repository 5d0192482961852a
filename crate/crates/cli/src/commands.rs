//! One function per subcommand. Each returns the outputs for the result
//! document plus any side files; the driver in `main` persists them.

use std::path::Path;

use relfermi_core::checkpoint;
use relfermi_core::experiments::{
    binding_check, collapse_probe, decay_rate, energy_start, estimate_d, estimate_dstar,
    fit_scaling, ground_state, rank_splitting_check, sweep_a, tail_fit, ConstantEstimate,
    DSTAR_FLOOR,
};
use relfermi_core::functionals::{energy_lower_bound, lt_quotient, massless_kinetic, virial_residual};
use relfermi_core::state::OrbitalSet;
use relfermi_core::Error;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::output::{read_sweep_csv, sweep_csv};

/// Exit status classes.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1.
    Usage(String),
    /// Exit 2.
    NotConverged(String),
    /// Exit 3.
    Invariant(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::NotConverged(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::NotConverged(m) | Failure::Invariant(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidArgument(_) | Error::InvalidGrid(_) | Error::Checkpoint(_) | Error::Io(_) => {
                Failure::Usage(msg)
            }
            Error::InsufficientRecords { .. }
            | Error::DivergingObjective { .. }
            | Error::OscillationDetected { .. } => Failure::NotConverged(msg),
            _ => Failure::Invariant(msg),
        }
    }
}

pub struct Outcome {
    pub outputs: Value,
    /// Every solve converged.
    pub converged: bool,
    pub summary: String,
    pub files: Vec<(String, Vec<u8>)>,
}

type Run = Result<Outcome, Failure>;

fn checkpoint_bytes(set: &OrbitalSet) -> Result<Vec<u8>, Failure> {
    let mut bytes = Vec::new();
    checkpoint::write_to(set, &mut bytes)?;
    Ok(bytes)
}

fn load_base(path: &Path) -> Result<OrbitalSet, Failure> {
    checkpoint::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn estimate_json(est: &ConstantEstimate) -> Value {
    json!({
        "N": est.n_orbitals,
        "n": est.n,
        "d_hat": est.d_hat,
        "spread": est.spread,
        "best_seed": est.best_start().seed,
        "multipliers": est.best_start().multipliers,
        "starts": est.starts.iter().map(|s| json!({
            "seed": s.seed,
            "quotient": s.quotient,
            "converged": s.converged,
            "iterations": s.iterations,
            "max_residual": s.max_residual,
        })).collect::<Vec<_>>(),
        "refinement": est.refinement,
    })
}

fn estimate_converged(est: &ConstantEstimate) -> bool {
    est.best_start().converged && est.refinement.as_ref().is_none_or(|r| r.converged)
}

/// `D̂₂` and the two-orbital optimizer: from the configuration if given,
/// otherwise estimated.
struct Threshold {
    d_hat: f64,
    base: Option<OrbitalSet>,
    estimate: Option<ConstantEstimate>,
}

impl Threshold {
    fn resolve(cfg: &RunConfig, need_base: bool) -> Result<Self, Failure> {
        let base = cfg.base.as_deref().map(load_base).transpose()?;
        if let Some(d_hat) = cfg.d_hat {
            if need_base && base.is_none() {
                return Err(Failure::Usage("d_hat given without a base checkpoint".into()));
            }
            return Ok(Threshold { d_hat, base, estimate: None });
        }
        if base.is_some() {
            return Err(Failure::Usage("base checkpoint given without d_hat".into()));
        }
        let est = estimate_d(2, &cfg.constant())?;
        Ok(Threshold {
            d_hat: est.d_hat,
            base: Some(est.optimizer().clone()),
            estimate: Some(est),
        })
    }

    fn json(&self) -> Value {
        json!({
            "d_hat": self.d_hat,
            "estimate": self.estimate.as_ref().map(estimate_json),
        })
    }

    fn converged(&self) -> bool {
        self.estimate.as_ref().is_none_or(estimate_converged)
    }

    fn coupling(&self, cfg: &RunConfig, default_ratio: Option<f64>) -> Result<f64, Failure> {
        match (cfg.a, cfg.ratio.or(default_ratio)) {
            (Some(a), _) => Ok(a),
            (None, Some(r)) => Ok(r * self.d_hat),
            (None, None) => Err(Failure::Usage("give a or ratio".into())),
        }
    }
}

pub fn constant(cfg: &RunConfig) -> Run {
    let est = estimate_d(cfg.orbitals, &cfg.constant())?;
    let best = est.best_start();
    let virial = virial_residual(&best.optimizer, est.d_hat, &best.multipliers)?;
    let mut outputs = estimate_json(&est);
    outputs["virial"] = serde_json::to_value(&virial).expect("serializable");
    let delta = est.refinement.as_ref().map(|r| r.relative_delta);
    let summary = match delta {
        Some(d) => format!("D_hat = {:.12} (N = {}), grid-doubling delta = {d:.3e}", est.d_hat, est.n_orbitals),
        None => format!("D_hat = {:.12} (N = {})", est.d_hat, est.n_orbitals),
    };
    Ok(Outcome {
        outputs,
        converged: estimate_converged(&est),
        summary,
        files: vec![("optimizer.fvf".into(), checkpoint_bytes(est.optimizer())?)],
    })
}

pub fn dstar(cfg: &RunConfig) -> Run {
    let est = estimate_d(2, &cfg.constant())?;
    let d = estimate_dstar(&est)?;
    if d.d_star < DSTAR_FLOOR * (1.0 - 1e-6) {
        return Err(Failure::Invariant(format!("d_* = {} below the floor 4", d.d_star)));
    }
    Ok(Outcome {
        outputs: json!({ "constant": estimate_json(&est), "dstar": d }),
        converged: estimate_converged(&est),
        summary: format!("d_star = {:.10}, D_hat_2 = {:.12}", d.d_star, est.d_hat),
        files: vec![("optimizer.fvf".into(), checkpoint_bytes(est.optimizer())?)],
    })
}

pub fn minimize(cfg: &RunConfig) -> Run {
    let run = cfg.energy_run();
    let (a, d_hat) = match (cfg.a, cfg.ratio, cfg.d_hat) {
        (Some(a), _, d) => (a, d),
        (None, Some(r), Some(d)) => (r * d, Some(d)),
        (None, Some(_), None) => return Err(Failure::Usage("ratio needs d_hat".into())),
        (None, None, _) => return Err(Failure::Usage("give a or ratio".into())),
    };
    let init = match &cfg.base {
        Some(p) => load_base(p)?,
        // without a threshold, size the start like a weakly bound state
        None => energy_start(cfg.orbitals, a, cfg.m, d_hat.unwrap_or(2.0 * a), &run, cfg.seed)?,
    };
    let gs = ground_state(&init, a, cfg.m, d_hat, &run)?;
    let r = &gs.report;
    let lower = d_hat.map(|d| energy_lower_bound(&r.final_set, a, cfg.m, d));
    Ok(Outcome {
        outputs: json!({
            "a": a,
            "energy": gs.energy,
            "multipliers": r.multipliers,
            "residuals": r.residuals,
            "grad_norm": r.projected_grad_norm,
            "iterations": r.iterations,
            "converged": r.converged,
            "box_length": gs.box_length,
            "resolution": gs.resolution,
            "runs": gs.runs,
            "eps": 1.0 / massless_kinetic(&r.final_set),
            "lower_bound": lower,
            "lower_bound_held": gs.lower_bound_held,
        }),
        converged: r.converged,
        summary: format!("E = {:.12} at a = {a}", gs.energy.total),
        files: vec![("minimizer.fvf".into(), checkpoint_bytes(&r.final_set)?)],
    })
}

pub fn binding(cfg: &RunConfig) -> Run {
    let th = Threshold::resolve(cfg, false)?;
    let a = th.coupling(cfg, None)?;
    let b = binding_check(a, cfg.m, th.d_hat, &cfg.energy_run())?;
    Ok(Outcome {
        summary: format!("E2 = {:.10}, 2 E1 = {:.10}, strict = {}", b.e2, 2.0 * b.e1, b.strict),
        converged: b.converged && th.converged(),
        outputs: json!({ "threshold": th.json(), "binding": b }),
        files: vec![],
    })
}

pub fn collapse(cfg: &RunConfig) -> Run {
    let th = Threshold::resolve(cfg, true)?;
    let a = th.coupling(cfg, Some(1.1))?;
    let base = th.base.as_ref().expect("base resolved");
    let r = collapse_probe(base, a, cfg.m, th.d_hat, cfg.steps)?;
    Ok(Outcome {
        summary: format!(
            "slope {:.6} vs predicted {:.6}, decreasing = {}",
            r.fitted_slope,
            r.predicted_slope,
            r.strictly_decreasing()
        ),
        converged: th.converged(),
        outputs: json!({
            "threshold": th.json(),
            "collapse": r,
            "slope_error": r.slope_error(),
            "strictly_decreasing": r.strictly_decreasing(),
        }),
        files: vec![],
    })
}

pub fn split(cfg: &RunConfig) -> Run {
    let (d1, base, est) = match (&cfg.base, cfg.d_hat) {
        (Some(p), Some(d)) => (d, load_base(p)?, None),
        (None, None) => {
            let est = estimate_d(1, &cfg.constant())?;
            (est.d_hat, est.optimizer().clone(), Some(est))
        }
        _ => return Err(Failure::Usage("give both base and d_hat, or neither".into())),
    };
    let l = base.grid().box_length();
    let separations = if cfg.separations.is_empty() {
        (1..=6).map(|k| l * k as f64 / 16.0).collect()
    } else {
        cfg.separations.clone()
    };
    let r = rank_splitting_check(&base, d1, &separations)?;
    Ok(Outcome {
        summary: format!(
            "largest R: Q = {:.10} vs D_hat_1 = {d1:.10}",
            r.rows.last().map_or(f64::NAN, |x| x.quotient)
        ),
        converged: est.as_ref().is_none_or(estimate_converged),
        outputs: json!({ "estimate": est.as_ref().map(estimate_json), "split": r }),
        files: vec![],
    })
}

pub fn sweep(cfg: &RunConfig) -> Run {
    let th = Threshold::resolve(cfg, true)?;
    let base = th.base.as_ref().expect("base resolved");
    let records = sweep_a(&cfg.ratios, th.d_hat, base, &cfg.sweep())?;
    let csv = sweep_csv(&records).map_err(|e| Failure::Invariant(e.to_string()))?;
    let converged = records.iter().all(|r| r.converged) && th.converged();
    let uncertainty = cfg
        .d_hat_uncertainty
        .or_else(|| th.estimate.as_ref().and_then(|e| e.uncertainty()));
    Ok(Outcome {
        summary: format!("{} records", records.len()),
        converged,
        outputs: json!({ "threshold": th.json(), "d_hat_uncertainty": uncertainty, "records": records }),
        files: vec![("sweep.csv".into(), csv)],
    })
}

pub fn fit(cfg: &RunConfig) -> Run {
    let path = cfg.input.as_deref().ok_or_else(|| Failure::Usage("fit needs input".into()))?;
    let records = read_sweep_csv(path).map_err(Failure::Usage)?;
    let d_hat = records
        .first()
        .map(|r| r.a + r.d_minus_a)
        .ok_or_else(|| Failure::NotConverged(Error::InsufficientRecords { needed: 4, got: 0 }.to_string()))?;
    let floor = 3.0 * cfg.d_hat_uncertainty.unwrap_or(0.0);
    let f = fit_scaling(&records, cfg.target.into(), d_hat, cfg.m, floor)?;
    let mut summary = format!(
        "exponent = {:.6}, prefactor = {:.6}, r2 = {:.6}",
        f.exponent, f.prefactor, f.r_squared
    );
    if let Some(d) = f.d_implied {
        summary.push_str(&format!(", d_implied = {d:.6}"));
    }
    Ok(Outcome { outputs: json!({ "fit": f }), converged: true, summary, files: vec![] })
}

pub fn tail(cfg: &RunConfig) -> Run {
    let path = cfg.base.as_deref().ok_or_else(|| Failure::Usage("tail needs base".into()))?;
    let set = load_base(path)?;
    let l = set.grid().box_length();
    let window = (cfg.window_min.unwrap_or(l / 8.0), cfg.window_max.unwrap_or(3.0 * l / 8.0));
    let t = tail_fit(&set, window, cfg.model.into())?;
    let theta = cfg.mu1.and_then(|mu| decay_rate(cfg.m, mu));
    let quotient = if set.has_unit_occupations() { lt_quotient(&set).ok() } else { None };
    Ok(Outcome {
        summary: t
            .fits
            .iter()
            .enumerate()
            .map(|(j, f)| format!("orbital {}: slope {:.4} (r2 {:.4})", j + 1, f.slope, f.r_squared))
            .collect::<Vec<_>>()
            .join("; "),
        converged: true,
        outputs: json!({ "tail": t, "theta1": theta, "quotient": quotient }),
        files: vec![],
    })
}
