use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use hpdriver::{parse_degree_range, run, Config, Fixture};

/// hp-adaptive refinement loop on the L-shaped domain with parallel DoF
/// enumeration over a simulated fabric.
#[derive(Debug, Parser)]
#[command(name = "hpdriver", version)]
struct Args {
    /// Number of simulated ranks.
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    /// Adaptation cycles after the initial mesh.
    #[arg(long, default_value_t = 5)]
    cycles: u64,
    /// Uniform refinements of the initial L-shape.
    #[arg(long, default_value_t = 3)]
    initial_refines: u8,
    /// Weight exponent c in `w = n^c`.
    #[arg(long, default_value_t = 1.9)]
    exponent: f64,
    /// Degree range of the element collection.
    #[arg(long, default_value = "2..7")]
    degrees: String,
    #[arg(long, default_value_t = 0.30)]
    refine_frac: f64,
    #[arg(long, default_value_t = 0.03)]
    coarsen_frac: f64,
    #[arg(long, default_value_t = 0.90)]
    p_frac: f64,
    /// Directory for metrics.csv and dumps.
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// Write a sharded checkpoint with this prefix after the last cycle.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a sharded checkpoint.
    #[arg(long)]
    restart: Option<PathBuf>,
    /// Write mesh and constraint dumps for every cycle.
    #[arg(long)]
    dump_mesh: bool,
    /// Fixed example mesh instead of the L-shape: fig1 or fig2.
    #[arg(long)]
    fixture: Option<Fixture>,
    /// Write zeros in the timing columns.
    #[arg(long)]
    zero_timings: bool,
}

fn config_of(args: Args) -> Result<Config, hpdriver::DriverError> {
    let (min_degree, max_degree) = parse_degree_range(&args.degrees)?;
    Ok(Config {
        ranks: args.ranks,
        cycles: args.cycles,
        initial_refines: args.initial_refines,
        exponent: args.exponent,
        min_degree,
        max_degree,
        refine_frac: args.refine_frac,
        coarsen_frac: args.coarsen_frac,
        p_frac: args.p_frac,
        output: Some(args.output),
        checkpoint: args.checkpoint,
        restart: args.restart,
        dump_mesh: args.dump_mesh,
        fixture: args.fixture,
        zero_timings: args.zero_timings,
    })
}

fn main() -> ExitCode {
    let result = config_of(Args::parse()).and_then(|c| run(&c));
    match result {
        Ok(out) => {
            for r in &out.rows {
                println!("cycle {}: {} cells, {} dofs", r.cycle, r.cells, r.dofs);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hpdriver: {e}");
            ExitCode::FAILURE
        }
    }
}
