//! `obg`: command-line driver for the obstruction-bundle gluing laboratory.
//!
//! Exit codes: 0 success, 2 configuration, 3 solver failure, 4 criterion inapplicable,
//! 5 homology failure.  Errors are reported as a JSON object on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use obg_core::{ObgError, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "obg", version, about = "Obstruction-bundle gluing of Morse flowlines on the flat torus")]
struct Cli {
    /// Run configuration (JSON); flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for randomized probes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Critical points, connections, kernel/cokernel table and tail coefficients.
    Analyze,
    /// 0-gluing verdict for a three-component broken flowline.
    Glue0(Glue0Args),
    /// t-gluing verdict and continuation in t for a two-component broken flowline.
    Gluet(GluetArgs),
    /// Mod-2 Morse complex from t-gluable broken flowlines.
    Homology(HomologyArgs),
}

#[derive(Args)]
struct Glue0Args {
    /// Sides `minus,zero,plus`, e.g. `front,right,front`.
    #[arg(long)]
    triple: Option<String>,
    /// Slice `R_0^- + R_0^+`.
    #[arg(long = "R0")]
    r0: Option<f64>,
    /// Slice values `lo:hi:step`; writes sweep.csv.
    #[arg(long)]
    sweep: Option<String>,
    /// Solve the deformation and report the full obstruction section.
    #[arg(long)]
    full: bool,
    /// Run the shooting oracle with this passage tolerance.
    #[arg(long)]
    oracle: Option<f64>,
}

#[derive(Args)]
struct GluetArgs {
    /// `minus|plus,<left|right>,<front|back>`.
    #[arg(long)]
    pair: Option<String>,
    /// Signed range `lo:hi` of t (one side of 0).
    #[arg(long, allow_hyphen_values = true)]
    t: Option<String>,
    /// Number of t samples.
    #[arg(long)]
    samples: Option<usize>,
    /// `t>0` or `t<0` (default: the verdict side).
    #[arg(long)]
    side: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    amplitude: Option<f64>,
    #[arg(long = "A")]
    a: Option<u32>,
    /// Also evaluate the four sign panels at this probe t < 0.
    #[arg(long, allow_hyphen_values = true)]
    panels: Option<f64>,
}

#[derive(Args)]
struct HomologyArgs {
    /// `t>0` or `t<0`.
    #[arg(long)]
    side: Option<String>,
    /// Signs of the perturbation on `u_0^l,u_0^r`, e.g. `1,-1`.
    #[arg(long, allow_hyphen_values = true)]
    amplitudes: Option<String>,
    /// Test hook: invert the verdict of the n-th broken flowline.
    #[arg(long, hide = true)]
    tamper_verdict: Option<usize>,
}

fn configure(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    match &cli.command {
        Command::Analyze => {}
        Command::Glue0(a) => {
            let g = &mut cfg.glue0;
            if let Some(t) = &a.triple {
                g.triple = t.clone();
            }
            if let Some(r) = a.r0 {
                g.r0 = r;
            }
            if a.sweep.is_some() {
                g.sweep = a.sweep.clone();
            }
            g.full |= a.full;
            if a.oracle.is_some() {
                g.oracle_tol = a.oracle;
            }
        }
        Command::Gluet(a) => {
            let g = &mut cfg.gluet;
            if let Some(p) = &a.pair {
                g.pair = p.clone();
            }
            if a.t.is_some() {
                g.t = a.t.clone();
            }
            if let Some(n) = a.samples {
                g.samples = n;
            }
            if a.side.is_some() {
                g.side = a.side.clone();
            }
            if let Some(r) = a.radius {
                g.radius = r;
            }
            if let Some(x) = a.amplitude {
                g.amplitude = x;
            }
            if let Some(x) = a.a {
                g.a = x;
            }
            if a.panels.is_some() {
                g.panels_t = a.panels;
            }
        }
        Command::Homology(a) => {
            let h = &mut cfg.homology;
            if let Some(s) = &a.side {
                h.side = s.clone();
            }
            if let Some(s) = &a.amplitudes {
                let v = config::parse_range(&s.replace(',', ":"), 2)?;
                h.amplitudes = [v[0], v[1]];
            }
        }
    }
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("OBG_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| ObgError::Config(format!("OBG_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ObgError::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    init_threads()?;
    let cfg = configure(cli)?;
    match &cli.command {
        Command::Analyze => commands::analyze(&cfg),
        Command::Glue0(_) => commands::glue0(&cfg),
        Command::Gluet(_) => commands::gluet(&cfg),
        Command::Homology(a) => commands::homology(&cfg, a.tamper_verdict),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let payload = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
            eprintln!("{payload}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
