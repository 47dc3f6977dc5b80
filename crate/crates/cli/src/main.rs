mod commands;
mod family;
mod output;
mod scenario;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use output::{exit_code, Outcome};

#[derive(Parser, Debug)]
#[command(name = "tangency-lab", version, about = "Homoclinic tangency laboratory: germs, saddles, bidisks and parameter scans")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Override the command's numerical tolerance.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tol: Option<f64>,
    /// Override the truncation degree.
    #[arg(long, global = true)]
    pub degree: Option<usize>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for artifacts and manifest.json; standard output otherwise.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Execute a scenario file.
    Run { scenario: PathBuf },
    /// Run a registered check suite (germ-oracles, scaling-laws, rh-counts, resonance, horseshoe, all).
    Verify { suite: String },
    #[command(subcommand)]
    Germ(GermCmd),
    #[command(subcommand)]
    Saddle(SaddleCmd),
    #[command(subcommand)]
    Bidisk(BidiskCmd),
    #[command(subcommand)]
    Scan(ScanCmd),
}

#[derive(Subcommand, Debug)]
pub enum GermCmd {
    /// Order, multiplicity and speed blocks of an unfolding φ(λ, t) given as series JSON.
    Classify {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum SaddleCmd {
    /// Newton search for a periodic point of a family member.
    Find {
        #[arg(long)]
        family: PathBuf,
        /// Parameter values, comma separated (`0.5,-0.1+0.2i`).
        #[arg(long)]
        lambda: String,
        #[arg(long, default_value_t = 1)]
        period: usize,
        /// Starting point `x,y`.
        #[arg(long)]
        point: String,
    },
    /// Resonances u^a s^b = 1 with a + b ≤ order, and near-resonances.
    Resonance {
        #[arg(long, allow_hyphen_values = true)]
        u: String,
        #[arg(long, allow_hyphen_values = true)]
        s: String,
        #[arg(long, default_value_t = 12)]
        order: usize,
    },
    /// Normal form (⋆_k) of a germ with diagonal linear part, given as JSON {"f1": …, "f2": …}.
    NormalForm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum BidiskCmd {
    /// Tangency count against the Riemann–Hurwitz bound on random horizontal manifolds.
    RhCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 5)]
        max_degree: usize,
    },
    /// Periodic points and stable graphs of a horseshoe map f_{a,c}.
    Horseshoe {
        #[arg(long, allow_hyphen_values = true)]
        a: String,
        #[arg(long, allow_hyphen_values = true)]
        c: String,
        #[arg(long, default_value_t = 4)]
        period: usize,
        /// Word length for stable graphs (0 to skip).
        #[arg(long, default_value_t = 0)]
        len: usize,
        /// Bidisk radius (default: the smallest verified crossing radius).
        #[arg(long)]
        radius: Option<f64>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub lambda_center: String,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_radius: f64,
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub y_center: String,
    #[arg(long, default_value_t = 0.5)]
    pub y_radius: f64,
}

#[derive(Subcommand, Debug)]
pub enum ScanCmd {
    /// Tangencies of a one-parameter curve pair inside a window.
    Tangency {
        #[arg(long)]
        family: PathBuf,
        /// Exponent of the pair's scale factor.
        #[arg(long)]
        n: Option<u32>,
        #[command(flatten)]
        window: WindowArgs,
        /// Skip the local classification of each event.
        #[arg(long)]
        no_classify: bool,
    },
    /// Secondary tangency sequence λ_n and its log-linear fit.
    Scaling {
        #[arg(long)]
        family: PathBuf,
        /// Inclusive range `lo..hi`.
        #[arg(long)]
        n: String,
        /// Modulus bracket `lo,hi` for λ at the first index.
        #[arg(long)]
        bracket: String,
        /// Speed exponent in the predicted slope ln|u|/σ.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 2.0)]
        widen: f64,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        lambda_center: String,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        y_center: String,
        #[arg(long, default_value_t = 0.5)]
        y_radius: f64,
    },
    /// Pseudo-arclength continuation of a persistent tangency or a multiplier level set.
    Continue {
        #[arg(long)]
        family: PathBuf,
        /// `tangency` (two-parameter pair) or `multiplier`.
        #[arg(long, default_value = "tangency")]
        constraint: String,
        /// Starting unknowns: `λ1,λ2,y` or `λ…,x,y`.
        #[arg(long, allow_hyphen_values = true)]
        start: String,
        #[arg(long, default_value_t = 1)]
        period: usize,
        /// Multiplier level for `multiplier`.
        #[arg(long, allow_hyphen_values = true)]
        target: Option<String>,
        #[arg(long, default_value_t = 1e-2)]
        step: f64,
        #[arg(long, default_value_t = 1.0)]
        length: f64,
        /// Initial tangent direction, same layout as `start`.
        #[arg(long, allow_hyphen_values = true)]
        direction: Option<String>,
    },
    /// ln|u|/ln|s| and the Jacobian along a parameter segment.
    Moduli {
        #[arg(long)]
        family: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        #[arg(long, allow_hyphen_values = true)]
        to: String,
        #[arg(long, default_value_t = 41)]
        samples: usize,
        #[arg(long, allow_hyphen_values = true)]
        point: String,
        #[arg(long, default_value_t = 1)]
        period: usize,
    },
    /// Changes of periodic-orbit type over a parameter grid.
    TypeChange {
        #[arg(long)]
        family: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        origin: String,
        #[arg(long, allow_hyphen_values = true)]
        e1: String,
        #[arg(long, allow_hyphen_values = true)]
        e2: Option<String>,
        #[arg(long, default_value_t = 9)]
        cols: usize,
        #[arg(long, default_value_t = 1)]
        rows: usize,
        #[arg(long, default_value_t = 2)]
        max_period: usize,
        /// Seed box half-width for the periodic-point census.
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        #[arg(long, default_value_t = 6)]
        per_axis: usize,
    },
}

pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::Run { scenario } => scenario::run(scenario, g),
        Command::Verify { suite } => verify::run(suite, g),
        Command::Germ(c) => commands::germ(c, g),
        Command::Saddle(c) => commands::saddle(c, g),
        Command::Bidisk(c) => commands::bidisk(c, g),
        Command::Scan(c) => commands::scan(c, g),
    }
}

/// Runs one parsed command line and writes or prints its artifacts.
pub fn execute(cli: &Cli, label: &str) -> Result<Outcome> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(output::invalid("--threads must be positive"));
        }
        // a second build (nested `run`) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    if let Some(t) = cli.global.tol {
        if !(t > 0.0) {
            return Err(output::invalid("--tol must be positive"));
        }
    }
    let out = dispatch(cli)?;
    if !matches!(cli.command, Command::Run { .. }) {
        match &cli.global.out {
            Some(dir) => {
                output::write_all(dir, label, cli.global.seed, cli.global.threads, &out)?;
            }
            None => output::print_all(&out),
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let label: Vec<String> = std::env::args().skip(1).collect();
    match execute(&cli, &label.join(" ")) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
