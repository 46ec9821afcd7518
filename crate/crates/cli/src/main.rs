use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vtpg_cli::{Invocation, Status};

/// Truncated bigaussian categorical fields: pattern fitting, map
/// estimation, simulation, conditioning, validation and rendering.
///
/// Exit status is 0 on success, 1 on error and 2 when `bme-fit` misses its
/// tolerance (the best iterate is still written).
#[derive(Parser)]
#[command(name = "vtpg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's `seed` (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Main output file. Auxiliary outputs are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the maximum-entropy five-point pattern to unit-lag marginals.
    BmeFit(Common),
    /// Anneal a colored Voronoi truncation map against a fitted pattern.
    EstimateMap(Common),
    /// Simulate an unconditional categorical field on a grid.
    SimulateField(Common),
    /// Sample the latent pair conditioned on categorical observations.
    Condition(Common),
    /// Score a map on observations with the logarithmic score.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Worker threads for the per-site loop; output does not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render a field or a map as a binary PPM/PGM image.
    Render(Common),
}

fn invocation(c: Common, threads: Option<usize>) -> Invocation {
    Invocation {
        config: c.config,
        seed: c.seed,
        out: c.out,
        threads,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BmeFit(c) => vtpg_cli::bme_fit(&invocation(c, None)),
        Command::EstimateMap(c) => vtpg_cli::estimate_map(&invocation(c, None)),
        Command::SimulateField(c) => vtpg_cli::simulate_field(&invocation(c, None)),
        Command::Condition(c) => vtpg_cli::condition(&invocation(c, None)),
        Command::Validate { common, threads } => vtpg_cli::validate(&invocation(common, threads)),
        Command::Render(c) => vtpg_cli::render(&invocation(c, None)),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(s) => ExitCode::from(s.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
