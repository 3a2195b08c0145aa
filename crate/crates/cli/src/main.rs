use std::path::PathBuf;
use std::process::ExitCode;

use boundary_qe::app::{self, AppError, Outcome};
use boundary_qe::config::{Overrides, RunConfig, OUTPUT_ROOT_ENV};
use clap::{Args, Parser, Subcommand};

/// Boundary quantum ergodicity laboratory.
#[derive(Parser)]
#[command(name = "bqe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration (defaults apply when absent).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Validate and print the resolved configuration without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Output directory.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_dir: Option<PathBuf>,
    /// Boundary condition: dirichlet, neumann, robin_constant, robin_multiplier.
    #[arg(long, global = true)]
    bc: Option<String>,
    /// Robin parameter.
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    k_min: Option<f64>,
    #[arg(long, global = true)]
    k_max: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Geometry summary of the configured domain.
    Domain {
        #[command(subcommand)]
        action: DomainCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Birkhoff averages of the standard observables.
    Billiard {
        #[command(subcommand)]
        action: BilliardCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Eigenmode computation and verification.
    Spectrum {
        #[command(subcommand)]
        action: SpectrumCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Boundary quantum ergodicity statistics.
    Qe {
        #[command(subcommand)]
        action: QeCmd,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum DomainCmd {
    Info,
}

#[derive(Subcommand)]
enum BilliardCmd {
    Run {
        #[arg(long)]
        bounces: Option<usize>,
    },
}

#[derive(Subcommand)]
enum SpectrumCmd {
    /// Scan, refine, normalize and audit; writes a spectrum cache.
    Compute {
        /// Cache path (default `<output>/spectrum/<domain>_<bc>.qespec`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a cache: audit, qualities, closed forms, Rellich residuals.
    Verify {
        #[arg(long)]
        cache: PathBuf,
    },
}

#[derive(Subcommand)]
enum QeCmd {
    Analyze {
        #[arg(long)]
        cache: PathBuf,
        /// `canonical` or `inline`.
        #[arg(long)]
        suite: Option<String>,
    },
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn load(common: &Common, extra: Overrides) -> Result<RunConfig, AppError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        bc: common.bc.clone(),
        kappa: common.kappa,
        k_min: common.k_min,
        k_max: common.k_max,
        seed: common.seed,
        threads: common.threads,
        output_dir: common.output_dir.clone(),
        ..extra
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Outcome, AppError> {
    match cli.command {
        Command::Domain { action: DomainCmd::Info, common } => app::domain_info(&load(&common, Overrides::default())?),
        Command::Billiard { action: BilliardCmd::Run { bounces }, common } => {
            app::billiard_run(&load(&common, Overrides { bounces, ..Default::default() })?, common.dry_run)
        }
        Command::Spectrum { action, common } => match action {
            SpectrumCmd::Compute { out } => app::spectrum_compute(&load(&common, Overrides::default())?, out.as_deref(), common.dry_run),
            SpectrumCmd::Verify { cache } => app::spectrum_verify(&cache, common.dry_run),
        },
        Command::Qe { action, common } => match action {
            QeCmd::Analyze { cache, suite } => app::qe_analyze(&load(&common, Overrides { suite, ..Default::default() })?, &cache, common.dry_run),
            QeCmd::Compare { a, b } => app::qe_compare(&load(&common, Overrides::default())?, &a, &b, common.dry_run),
        },
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
    match run(cli) {
        Ok(out) => {
            print!("{}", out.message);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bqe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
