//! Flat `key = value` run configuration. A file supplies defaults, flags win.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use relfermi_core::experiments::{ConstantConfig, EnergyRunConfig, ScalingTarget, SweepConfig, TailModel};
use relfermi_core::minimizer::{MinimizeConfig, NormalizeMode};
use serde::{Deserialize, Serialize};

/// Where a key's value came from, for error messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    File { path: PathBuf, line: usize },
    Flag(String),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{}:{}", path.display(), line),
            Origin::Flag(name) => write!(f, "flag --{name}"),
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: Option<Origin>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.origin {
            Some(o) => write!(f, "{o}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn fail(origin: Option<&Origin>, message: impl Into<String>) -> ConfigError {
    ConfigError { origin: origin.cloned(), message: message.into() }
}

/// Raw assignments with their origins; later assignments replace earlier ones.
#[derive(Clone, Debug, Default)]
pub struct Assignments(BTreeMap<String, (String, Origin)>);

impl Assignments {
    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| fail(None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse_text(&text, path)
    }

    pub fn parse_text(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut out = Assignments::default();
        for (i, raw) in text.lines().enumerate() {
            let origin = Origin::File { path: path.to_path_buf(), line: i + 1 };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(fail(Some(&origin), format!("expected `key = value`, got `{line}`")));
            };
            out.set(key.trim(), value.trim(), origin)?;
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(fail(Some(&origin), format!("unknown key `{key}`")));
        }
        self.0.insert(key.to_string(), (value.to_string(), origin));
        Ok(())
    }

    pub fn merge(&mut self, later: Assignments) {
        self.0.extend(later.0);
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.0
            .get(key)
            .map(|(v, origin)| {
                v.parse::<T>()
                    .map_err(|e| fail(Some(origin), format!("bad value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }

    fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.0
            .get(key)
            .map(|(v, origin)| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|e| {
                            fail(Some(origin), format!("bad list entry `{s}` for `{key}`: {e}"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    fn origin(&self, key: &str) -> Option<&Origin> {
        self.0.get(key).map(|(_, o)| o)
    }
}

pub const KEYS: &[&str] = &[
    "N",
    "n",
    "L",
    "m",
    "a",
    "ratio",
    "ratios",
    "seed",
    "starts",
    "workers",
    "refine",
    "start_width",
    "max_iters",
    "grad_tol",
    "energy_grad_tol",
    "step_init",
    "armijo_c",
    "armijo_shrink",
    "band_fraction",
    "resolution",
    "ratio_tol",
    "max_refits",
    "d_hat",
    "d_hat_uncertainty",
    "base",
    "steps",
    "separations",
    "target",
    "input",
    "window_min",
    "window_max",
    "model",
    "mu1",
    "trace",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetArg {
    EpsLaw,
    EnergyLaw,
}

impl FromStr for TargetArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "eps_law" => Ok(TargetArg::EpsLaw),
            "energy_law" => Ok(TargetArg::EnergyLaw),
            _ => Err("expected eps_law or energy_law".into()),
        }
    }
}

impl From<TargetArg> for ScalingTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::EpsLaw => ScalingTarget::EpsLaw,
            TargetArg::EnergyLaw => ScalingTarget::EnergyLaw,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelArg {
    Algebraic,
    Exponential,
}

impl FromStr for ModelArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "algebraic" => Ok(ModelArg::Algebraic),
            "exponential" => Ok(ModelArg::Exponential),
            _ => Err("expected algebraic or exponential".into()),
        }
    }
}

impl From<ModelArg> for TailModel {
    fn from(t: ModelArg) -> Self {
        match t {
            ModelArg::Algebraic => TailModel::Algebraic,
            ModelArg::Exponential => TailModel::Exponential,
        }
    }
}

/// Fully resolved configuration; written next to every result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub orbitals: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub box_length: f64,
    pub m: f64,
    pub a: Option<f64>,
    pub ratio: Option<f64>,
    pub ratios: Vec<f64>,
    pub seed: u64,
    pub starts: usize,
    pub workers: usize,
    pub refine: bool,
    pub start_width: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub energy_grad_tol: f64,
    pub step_init: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub band_fraction: f64,
    pub resolution: f64,
    pub ratio_tol: f64,
    pub max_refits: usize,
    pub d_hat: Option<f64>,
    pub d_hat_uncertainty: Option<f64>,
    pub base: Option<PathBuf>,
    pub steps: usize,
    pub separations: Vec<f64>,
    pub target: TargetArg,
    pub input: Option<PathBuf>,
    pub window_min: Option<f64>,
    pub window_max: Option<f64>,
    pub model: ModelArg,
    pub mu1: Option<f64>,
    pub trace: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let constant = ConstantConfig::default();
        let solver = MinimizeConfig::default();
        let run = EnergyRunConfig::default();
        RunConfig {
            orbitals: 2,
            n: constant.n,
            box_length: constant.box_length,
            m: 1.0,
            a: None,
            ratio: None,
            ratios: vec![0.90, 0.94, 0.97, 0.985, 0.995],
            seed: 0,
            starts: constant.starts,
            workers: 1,
            refine: constant.refine,
            start_width: constant.start_width,
            max_iters: solver.max_iters,
            grad_tol: solver.grad_tol,
            energy_grad_tol: run.solver.grad_tol,
            step_init: solver.step_init,
            armijo_c: solver.armijo_c,
            armijo_shrink: solver.armijo_shrink,
            band_fraction: solver.band_fraction,
            resolution: run.resolution,
            ratio_tol: run.ratio_tol,
            max_refits: run.max_refits,
            d_hat: None,
            d_hat_uncertainty: None,
            base: None,
            steps: 8,
            separations: vec![],
            target: TargetArg::EpsLaw,
            input: None,
            window_min: None,
            window_max: None,
            model: ModelArg::Algebraic,
            mu1: None,
            trace: None,
        }
    }
}

macro_rules! take {
    ($cfg:ident, $src:ident, $field:ident, $key:literal) => {
        if let Some(v) = $src.get($key)? {
            $cfg.$field = v;
        }
    };
    ($cfg:ident, $src:ident, $field:ident, $key:literal, opt) => {
        if let Some(v) = $src.get($key)? {
            $cfg.$field = Some(v);
        }
    };
}

impl RunConfig {
    pub fn resolve(src: &Assignments) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        take!(c, src, orbitals, "N");
        take!(c, src, n, "n");
        take!(c, src, box_length, "L");
        take!(c, src, m, "m");
        take!(c, src, a, "a", opt);
        take!(c, src, ratio, "ratio", opt);
        take!(c, src, seed, "seed");
        take!(c, src, starts, "starts");
        take!(c, src, workers, "workers");
        take!(c, src, refine, "refine");
        take!(c, src, start_width, "start_width");
        take!(c, src, max_iters, "max_iters");
        take!(c, src, grad_tol, "grad_tol");
        take!(c, src, energy_grad_tol, "energy_grad_tol");
        take!(c, src, step_init, "step_init");
        take!(c, src, armijo_c, "armijo_c");
        take!(c, src, armijo_shrink, "armijo_shrink");
        take!(c, src, band_fraction, "band_fraction");
        take!(c, src, resolution, "resolution");
        take!(c, src, ratio_tol, "ratio_tol");
        take!(c, src, max_refits, "max_refits");
        take!(c, src, d_hat, "d_hat", opt);
        take!(c, src, d_hat_uncertainty, "d_hat_uncertainty", opt);
        take!(c, src, base, "base", opt);
        take!(c, src, steps, "steps");
        take!(c, src, target, "target");
        take!(c, src, input, "input", opt);
        take!(c, src, window_min, "window_min", opt);
        take!(c, src, window_max, "window_max", opt);
        take!(c, src, model, "model");
        take!(c, src, mu1, "mu1", opt);
        take!(c, src, trace, "trace", opt);
        if let Some(v) = src.get_list("ratios")? {
            c.ratios = v;
        }
        if let Some(v) = src.get_list("separations")? {
            c.separations = v;
        }
        if !(1..=3).contains(&c.orbitals) {
            return Err(fail(src.origin("N"), format!("N must be 1..3, got {}", c.orbitals)));
        }
        if c.n < 8 || c.n % 2 != 0 {
            return Err(fail(src.origin("n"), format!("n must be even and at least 8, got {}", c.n)));
        }
        if !(c.box_length > 0.0 && c.box_length.is_finite()) {
            return Err(fail(src.origin("L"), "L must be positive"));
        }
        if !(c.m > 0.0 && c.m.is_finite()) {
            return Err(fail(src.origin("m"), "m must be positive"));
        }
        if c.a.is_some() && c.ratio.is_some() {
            return Err(fail(src.origin("ratio"), "give either a or ratio, not both"));
        }
        if c.workers == 0 {
            return Err(fail(src.origin("workers"), "workers must be at least 1"));
        }
        let check = |r: relfermi_core::Result<()>, key: &str| {
            r.map_err(|e| fail(src.origin(key), e.to_string()))
        };
        check(c.solver().validate(), "grad_tol")?;
        check(c.energy_run().solver.validate(), "energy_grad_tol")?;
        Ok(c)
    }

    pub fn solver(&self) -> MinimizeConfig {
        MinimizeConfig {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            step_init: self.step_init,
            armijo_c: self.armijo_c,
            armijo_shrink: self.armijo_shrink,
            normalize_mode: NormalizeMode::None,
            seed: self.seed,
            band_fraction: self.band_fraction,
            zero_mode: false,
            trace_path: self.trace.clone(),
        }
    }

    pub fn constant(&self) -> ConstantConfig {
        ConstantConfig {
            n: self.n,
            box_length: self.box_length,
            starts: self.starts,
            seed: self.seed,
            start_width: self.start_width,
            refine: self.refine,
            workers: self.workers,
            solver: MinimizeConfig { trace_path: None, ..self.solver() },
        }
    }

    pub fn energy_run(&self) -> EnergyRunConfig {
        EnergyRunConfig {
            n: self.n,
            resolution: self.resolution,
            ratio_tol: self.ratio_tol,
            max_refits: self.max_refits,
            solver: MinimizeConfig { grad_tol: self.energy_grad_tol, ..self.solver() },
        }
    }

    pub fn sweep(&self) -> SweepConfig {
        SweepConfig { m: self.m, run: EnergyRunConfig { solver: MinimizeConfig { trace_path: None, ..self.energy_run().solver }, ..self.energy_run() }, ..SweepConfig::default() }
    }

    /// `key = value` lines that reproduce this configuration.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for key in KEYS {
            match &value[*key] {
                serde_json::Value::Null => {}
                serde_json::Value::Array(items) => {
                    if !items.is_empty() {
                        let list: Vec<String> = items.iter().map(|v| v.to_string()).collect();
                        out.push_str(&format!("{key} = {}\n", list.join(",")));
                    }
                }
                serde_json::Value::String(s) => out.push_str(&format!("{key} = {s}\n")),
                v => out.push_str(&format!("{key} = {v}\n")),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::resolve(&Assignments::parse_text(text, Path::new("run.cfg"))?)
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse("n = 32\n\n# note\nfoo = 1\n").unwrap_err();
        assert_eq!(err.to_string(), "run.cfg:4: unknown key `foo`");
    }

    #[test]
    fn bad_value_reports_line() {
        let err = parse("n = 32\nm = heavy\n").unwrap_err();
        assert!(err.to_string().starts_with("run.cfg:2: bad value `heavy` for `m`"), "{err}");
    }

    #[test]
    fn orbital_count_is_validated() {
        let err = parse("N = 0").unwrap_err();
        assert!(err.to_string().contains("N must be 1..3"));
    }

    #[test]
    fn flags_override_file() {
        let mut a = Assignments::parse_text("n = 32\nseed = 4\n", Path::new("f")).unwrap();
        let mut flags = Assignments::default();
        flags.set("n", "16", Origin::Flag("n".into())).unwrap();
        a.merge(flags);
        let c = RunConfig::resolve(&a).unwrap();
        assert_eq!((c.n, c.seed), (16, 4));
    }

    #[test]
    fn text_round_trip() {
        let c = parse("N = 1\nratios = 0.9,0.95\nd_hat = 2.93\ntarget = energy_law\nbase = x/y.fvf\n").unwrap();
        let back = parse(&c.to_text()).unwrap();
        assert_eq!(c, back);
    }
}
