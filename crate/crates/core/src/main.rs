use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sl2lab::cli::{emit_report, run, Command, RunConfig, Status};
use sl2lab::symdyn::SystemConfig;
use sl2lab::Error;

#[derive(Parser)]
#[command(
    name = "sl2lab",
    version,
    about = "Spectral checks for congruence-twisted transfer measures"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Group orders and new-subspace dimensions.
    GroupInfo(Opts),
    /// Critical exponent of the system at two word lengths.
    DeltaEstimate(Opts),
    /// Twisted measures mu for each modulus, as CSV.
    BuildMeasure(Opts),
    /// Fit the decoupling constant and check pointwise domination.
    DecoupleVerify(Opts),
    /// Operator norms on mean-zero functions and on the new subspace.
    Opnorm(Opts),
    /// Perturbation lemma, block gaps, decay, trace identity, autocorrelation.
    VerifyLemmas(Opts),
    /// Norm ratio on the new subspace across moduli.
    SweepQ(Opts),
    /// Schottky inner slots and generation of the quotient sets.
    SchottkyCheck(Opts),
}

#[derive(Args)]
struct Opts {
    /// JSON run config; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated moduli, overriding q_list.
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<u32>>,
    /// Comma-separated Zaremba digits, overriding the system.
    #[arg(long, value_delimiter = ',')]
    digits: Option<Vec<u32>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Sub {
    fn split(self) -> (Command, Opts) {
        match self {
            Sub::GroupInfo(o) => (Command::GroupInfo, o),
            Sub::DeltaEstimate(o) => (Command::DeltaEstimate, o),
            Sub::BuildMeasure(o) => (Command::BuildMeasure, o),
            Sub::DecoupleVerify(o) => (Command::DecoupleVerify, o),
            Sub::Opnorm(o) => (Command::Opnorm, o),
            Sub::VerifyLemmas(o) => (Command::VerifyLemmas, o),
            Sub::SweepQ(o) => (Command::SweepQ, o),
            Sub::SchottkyCheck(o) => (Command::SchottkyCheck, o),
        }
    }
}

fn load(opts: &Opts) -> sl2lab::Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(q) = &opts.q {
        cfg.q_list = q.clone();
    }
    if let Some(d) = &opts.digits {
        cfg.system = SystemConfig::zaremba(d).with_base_point(cfg.system.base_point);
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &opts.out {
        cfg.outputs.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let (command, opts) = Cli::parse().command.split();
    if let Some(jobs) = opts.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match load(&opts) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let report = match run(command, &cfg) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    for line in &report.lines {
        println!("{line}");
    }
    for c in &report.checks {
        let tag = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("{tag} {}: {}", c.name, c.detail);
    }
    match emit_report(&report, &cfg.outputs.dir) {
        Ok(path) => println!("report: {}", path.display()),
        Err(e) => return fail(&e),
    }
    ExitCode::from(report.exit_code() as u8)
}
