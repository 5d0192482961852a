mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::{Failure, Outcome};
use config::{Assignments, Origin, RunConfig};
use output::{create_run_dir, out_root, write_new, Environment, ResultDocument, SCHEMA_VERSION};

/// Variational solver for L²-critical pseudo-relativistic Fermi systems.
#[derive(Parser, Debug)]
#[command(name = "relfermi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the quotient constant for N orbitals.
    Constant(Common),
    /// Ground state of the energy at one coupling.
    Minimize(Common),
    /// Two-orbital ground states along a = ratio·D̂₂.
    Sweep(Common),
    /// Compare E_a(2) against 2 E_a(1).
    Binding(Common),
    /// Energies of dilated optimizers above the threshold.
    Collapse(Common),
    /// Estimate d_* from two-orbital optimizers.
    Dstar(Common),
    /// Quotients of translated one-orbital pairs.
    Split(Common),
    /// Radial decay fit of a checkpointed set.
    Tail(Common),
    /// Scaling-law fit of a sweep CSV.
    Fit(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Constant(c) => ("constant", c),
            Command::Minimize(c) => ("minimize", c),
            Command::Sweep(c) => ("sweep", c),
            Command::Binding(c) => ("binding", c),
            Command::Collapse(c) => ("collapse", c),
            Command::Dstar(c) => ("dstar", c),
            Command::Split(c) => ("split", c),
            Command::Tail(c) => ("tail", c),
            Command::Fit(c) => ("fit", c),
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; defaults to $RELFERMI_OUT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` assignment; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long = "N")]
    orbitals: Option<String>,
    #[arg(long = "n")]
    grid: Option<String>,
    #[arg(long = "L")]
    box_length: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    ratio: Option<String>,
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    starts: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    base: Option<String>,
    #[arg(long = "d-hat")]
    d_hat: Option<String>,
}

impl Common {
    fn assignments(&self) -> Result<Assignments, config::ConfigError> {
        let mut all = match &self.config {
            Some(p) => Assignments::parse_file(p)?,
            None => Assignments::default(),
        };
        let mut flags = Assignments::default();
        let named = [
            ("N", &self.orbitals),
            ("n", &self.grid),
            ("L", &self.box_length),
            ("m", &self.m),
            ("a", &self.a),
            ("ratio", &self.ratio),
            ("ratios", &self.ratios),
            ("seed", &self.seed),
            ("starts", &self.starts),
            ("workers", &self.workers),
            ("steps", &self.steps),
            ("target", &self.target),
            ("input", &self.input),
            ("base", &self.base),
            ("d_hat", &self.d_hat),
        ];
        for item in &self.set {
            let origin = Origin::Flag(format!("set {item}"));
            let Some((k, v)) = item.split_once('=') else {
                return Err(config::ConfigError {
                    origin: Some(origin),
                    message: "expected KEY=VALUE".into(),
                });
            };
            flags.set(k.trim(), v.trim(), origin)?;
        }
        for (key, value) in named {
            if let Some(v) = value {
                flags.set(key, v, Origin::Flag(key.to_string()))?;
            }
        }
        all.merge(flags);
        Ok(all)
    }
}

fn execute(kind: &str, cfg: &RunConfig) -> Result<Outcome, Failure> {
    match kind {
        "constant" => commands::constant(cfg),
        "minimize" => commands::minimize(cfg),
        "sweep" => commands::sweep(cfg),
        "binding" => commands::binding(cfg),
        "collapse" => commands::collapse(cfg),
        "dstar" => commands::dstar(cfg),
        "split" => commands::split(cfg),
        "tail" => commands::tail(cfg),
        "fit" => commands::fit(cfg),
        _ => unreachable!("clap restricts commands"),
    }
}

fn persist(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    write_new(&dir.join(name), bytes)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", dir.join(name).display())))
}

fn run(kind: &str, common: &Common) -> Result<(), Failure> {
    let cfg = common
        .assignments()
        .and_then(|a| RunConfig::resolve(&a))
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let root = out_root(common.out.as_deref());
    let dir = create_run_dir(&root, kind)
        .map_err(|e| Failure::Usage(format!("cannot create run directory under {}: {e}", root.display())))?;
    persist(&dir, "config.txt", cfg.to_text().as_bytes())?;
    let clock = Instant::now();
    let result = execute(kind, &cfg);
    let wall_seconds = clock.elapsed().as_secs_f64();
    let (outputs, converged, failure) = match result {
        Ok(outcome) => {
            for (name, bytes) in &outcome.files {
                persist(&dir, name, bytes)?;
            }
            println!("{}", outcome.summary);
            (outcome.outputs, outcome.converged, None)
        }
        Err(f) => {
            let error = json!({ "exit_code": f.code(), "error": f.message() });
            if let Failure::Invariant(_) = f {
                let dump = serde_json::to_vec_pretty(&json!({ "config": cfg, "error": error }))
                    .expect("serializable");
                persist(&dir, "diagnostic.json", &dump)?;
            }
            (error, false, Some(f))
        }
    };
    let doc = ResultDocument {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        inputs: cfg,
        outputs,
        environment: Environment::current(),
        wall_seconds,
    };
    let bytes = serde_json::to_vec_pretty(&doc).expect("serializable");
    persist(&dir, "result.json", &bytes)?;
    println!("results in {}", dir.display());
    match failure {
        Some(f) => Err(f),
        None if !converged => Err(Failure::NotConverged("a solve did not converge".into())),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = cli.command.parts();
    match run(kind, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code() as u8)
        }
    }
}
