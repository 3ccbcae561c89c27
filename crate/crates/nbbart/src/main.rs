use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nbbart::commands;
use nbbart::config::{FileConfig, Overrides, RunConfig};
use nbbart::{AppError, AppResult};

#[derive(Parser)]
#[command(name = "nbbart", version, about = "Spatial negative binomial BART model for crash hot-spot ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Hot-spot risk level in (0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// nb-fixed, nb-bart-i, nb-bart-ii or custom.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler and write draws plus fit diagnostics.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        adjacency: Option<PathBuf>,
        #[arg(long)]
        year: Option<i32>,
    },
    /// Rank sites from a draws file.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Temporal consistency tests between two fitted periods.
    Consistency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data_a: PathBuf,
        #[arg(long)]
        draws_a: PathBuf,
        #[arg(long)]
        data_b: PathBuf,
        #[arg(long)]
        draws_b: PathBuf,
    },
    /// Generate a synthetic dataset with known parameters.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, data: Option<PathBuf>, adjacency: Option<PathBuf>, year: Option<i32>) -> AppResult<RunConfig> {
    let file = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        chains: common.chains,
        iters: common.iters,
        burn_in: common.burn_in,
        thin: common.thin,
        alpha: common.alpha,
        model: common.model.clone(),
        data,
        adjacency,
        year,
    };
    RunConfig::resolve(file, flags)
}

fn list(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Fit { common, data, adjacency, year } => {
            let config = resolve(&common, data, adjacency, year)?;
            let out = commands::fit(&config)?;
            let r = &out.report;
            println!("{} chains x {} draws, lppd {:.3}, rmse {:.4}", r.n_chains, r.n_draws / r.n_chains.max(1), r.lppd, r.rmse);
            if let Some(a) = r.acceptance_rate_tau {
                println!("tau acceptance {a:.3}");
            }
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            list(&out.files);
        }
        Command::Rank { common, draws, data } => {
            let config = resolve(&common, data, None, None)?;
            let out = commands::rank(&config, &draws)?;
            println!("{} sites, cutoff m = {}", out.report.sites.len(), out.report.cutoff);
            list(&out.files);
        }
        Command::Consistency { common, data_a, draws_a, data_b, draws_b } => {
            let config = resolve(&common, None, None, None)?;
            let (out, path) = commands::consistency(&config, &data_a, &draws_a, &data_b, &draws_b)?;
            print!("{}", commands::consistency_table(&out));
            list(&[path]);
        }
        Command::Simulate { common } => {
            let config = resolve(&common, None, None, None)?;
            list(&commands::simulate(&config)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit(&e)
        }
    }
}

fn exit(e: &AppError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
