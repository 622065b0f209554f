mod audit;
mod config;
mod run;
mod states;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::Config;
use nonlocal_core::protocols::{CATALOG, DEFAULT_MAX_ROUNDS};

pub const OUT_DIR_ENV: &str = "NONLOCAL_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Resource(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Resource(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

fn core_code(e: &nonlocal_core::Error) -> u8 {
    use nonlocal_core::Error as E;
    match e {
        E::PoolExhausted | E::TooLarge(_) | E::BranchBudget(_) => 4,
        E::Internal(_) => 5,
        _ => 3,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.code();
        }
        if let Some(e) = cause.downcast_ref::<nonlocal_core::Error>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Parser)]
#[command(name = "nonlocal", version, about = "Simulate nonlocal measurement protocols and audit them for signaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a protocol once or as a seeded Monte Carlo campaign.
    Run(RunArgs),
    /// Run a causality audit.
    Audit(AuditArgs),
    /// List protocols, audits and named states.
    Catalog {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the NONLOCAL_OUT_DIR environment variable.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Encoding of tabular artifacts.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Flat key = value file supplying defaults for these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Protocol round limit.
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Angle or amplitude parameter, depending on the protocol or audit.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long)]
    protocol: Option<String>,
    /// Named state or amplitude list.
    #[arg(long)]
    state: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, clap::Args)]
struct AuditArgs {
    #[arg(long)]
    audit: Option<String>,
    /// Restrict protocol_nosignal to one protocol.
    #[arg(long)]
    protocol: Option<String>,
    /// Random instances for pv_theorems.
    #[arg(long)]
    cases: Option<usize>,
    /// Haar-random remote unitaries per scan.
    #[arg(long)]
    haar: Option<usize>,
    #[command(flatten)]
    common: Common,
}

pub struct Settings {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub format: Format,
    pub max_rounds: Option<usize>,
    pub alpha: Option<f64>,
}

fn settings(c: &Common, cfg: &Config, default_format: Format) -> Result<Settings, CliError> {
    let out = match (&c.out, cfg.get("out"), std::env::var_os(OUT_DIR_ENV)) {
        (Some(p), _, _) => p.clone(),
        (None, Some(p), _) => PathBuf::from(p),
        (None, None, Some(p)) => PathBuf::from(p),
        (None, None, None) => PathBuf::from("out"),
    };
    Ok(Settings {
        seed: c.seed.or(cfg.typed("seed")?),
        out,
        format: c.format.or(cfg.typed::<Format>("format")?).unwrap_or(default_format),
        max_rounds: c.max_rounds.or(cfg.typed("max_rounds")?),
        alpha: c.alpha.or(cfg.typed("alpha")?),
    })
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, CliError> {
    path.as_deref().map(Config::load).transpose().map(Option::unwrap_or_default)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    use anyhow::Context;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn catalog(as_json: bool) {
    if as_json {
        let v = json!({
            "protocols": CATALOG.iter().map(|e| json!({"name": e.name, "description": e.description})).collect::<Vec<_>>(),
            "audits": audit::AUDITS.iter().map(|(n, d)| json!({"name": n, "description": d})).collect::<Vec<_>>(),
            "states": states::NAMED.iter().map(|(n, d)| json!({"name": n, "description": d})).collect::<Vec<_>>(),
        });
        print!("{}", pretty(&v));
        return;
    }
    println!("protocols:");
    for e in CATALOG {
        println!("  {:<30} {}", e.name, e.description);
    }
    println!("audits:");
    for (n, d) in audit::AUDITS {
        println!("  {n:<30} {d}");
    }
    println!("states:");
    for (n, d) in states::NAMED {
        println!("  {n:<30} {d}");
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Catalog { json } => {
            catalog(json);
            Ok(())
        }
        Command::Run(a) => {
            let cfg = load_config(&a.common.config)?;
            let s = settings(&a.common, &cfg, Format::Csv)?;
            let protocol = a
                .protocol
                .or_else(|| cfg.get("protocol").map(String::from))
                .ok_or_else(|| CliError::Usage("--protocol is required".into()))?;
            let state = a.state.or_else(|| cfg.get("state").map(String::from));
            let trials = a.trials.or(cfg.typed("trials")?).unwrap_or(1);
            run::run(run::Request {
                protocol,
                state,
                trials,
                seed: s.seed,
                max_rounds: s.max_rounds.unwrap_or(DEFAULT_MAX_ROUNDS),
                alpha: s.alpha,
                out: s.out,
                format: s.format,
            })
        }
        Command::Audit(a) => {
            let cfg = load_config(&a.common.config)?;
            let s = settings(&a.common, &cfg, Format::Csv)?;
            let name = a
                .audit
                .or_else(|| cfg.get("audit").map(String::from))
                .ok_or_else(|| CliError::Usage("--audit is required".into()))?;
            audit::audit(audit::Request {
                name,
                seed: s.seed,
                cases: a.cases.or(cfg.typed("cases")?),
                haar: a.haar.or(cfg.typed("haar")?),
                alpha: s.alpha,
                max_rounds: s.max_rounds,
                protocol: a.protocol.or_else(|| cfg.get("protocol").map(String::from)),
                out: s.out,
                format: s.format,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
