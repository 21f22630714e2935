use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use endcalc::config::RunConfig;
use endcalc::scenarios::{self, Outcome};
use endcalc::Error;

#[derive(Parser)]
#[command(name = "endcalc", version, about = "Resolvent calculus experiments on manifolds with ends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel closed forms, exact identities, Key-Lemma decay, remainder envelopes, doubling.
    Kernel(Common),
    /// Operator-norm scaling exponents and the case calculus.
    Norms(Common),
    /// Weak-(1,1) constants and p-norm ratios of the maximal operators.
    Maximal(Common),
    /// Fefferman-Stein vector-valued ratios.
    FeffermanStein(Common),
    /// Vertical square function under refinement.
    Square(Common),
    /// Randomized l^2 / Rademacher bound estimates.
    Rbound(Common),
    /// Aggregate the summaries and CSV files in --out into report.json.
    Report(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario name; defaults to the first scenario of the subcommand, or `all`.
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Kernel(c) => ("kernel", c),
            Command::Norms(c) => ("norms", c),
            Command::Maximal(c) => ("maximal", c),
            Command::FeffermanStein(c) => ("fefferman-stein", c),
            Command::Square(c) => ("square", c),
            Command::Rbound(c) => ("rbound", c),
            Command::Report(c) => ("report", c),
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Config(msg),
            Error::Domain(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &common.scenario {
        cfg.scenario = Some(s.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn selected(command: &str, cfg: &RunConfig) -> Result<Vec<&'static str>, Failure> {
    let available = scenarios::for_command(command);
    match cfg.scenario.as_deref() {
        None => Ok(vec![available[0]]),
        Some("all") => Ok(available),
        Some(name) if available.contains(&name) => Ok(vec![scenarios::find(name)?.name]),
        Some(name) => Err(Failure::Config(format!(
            "scenario: {name:?} is not served by `{command}` (available: {}, all)",
            available.join(", ")
        ))),
    }
}

fn print_outcome(out: &Outcome) {
    println!("scenario {}", out.summary.scenario);
    for a in &out.summary.assertions {
        let line = format!(
            "  {} {}: measured {:.6e}, target {:e} ({:?}, tolerance {:e})",
            if a.pass { "PASS" } else { "FAIL" },
            a.name,
            a.measured,
            a.target,
            a.relation,
            a.tolerance
        );
        if a.pass {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
}

fn report(cfg: &RunConfig) -> Result<bool, Failure> {
    let rep = scenarios::aggregate(&cfg.out)?;
    let mut json = serde_json::to_vec_pretty(&rep).map_err(|e| Failure::Runtime(e.to_string()))?;
    json.push(b'\n');
    let path = cfg.out.join("report.json");
    let tmp = cfg.out.join(".report.json.tmp");
    std::fs::write(&tmp, json)
        .and_then(|_| std::fs::rename(&tmp, &path))
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    for s in &rep.scenarios {
        let failed: Vec<&str> = s.assertions.iter().filter(|a| !a.pass).map(|a| a.name.as_str()).collect();
        if failed.is_empty() {
            println!("PASS {}", s.scenario);
        } else {
            eprintln!("FAIL {}: {}", s.scenario, failed.join("; "));
        }
    }
    println!("wrote {}", path.display());
    Ok(rep.pass)
}

fn execute(command: &str, common: &Common) -> Result<bool, Failure> {
    let cfg = load_config(common)?;
    if command == "report" {
        return report(&cfg);
    }
    let names = selected(command, &cfg)?;
    let work = || -> Result<bool, Failure> {
        let mut pass = true;
        for name in names {
            let out = scenarios::run(name, &cfg)?;
            out.write(&cfg.out)?;
            print_outcome(&out);
            pass &= out.passed();
        }
        Ok(pass)
    };
    match cfg.threads {
        Some(n) => endcalc::parallel::with_threads(n, work),
        None => work(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = cli.command.parts();
    match execute(command, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
