//! `fdrelay` command line: runs one experiment and writes its CSV output.
//!
//! Settings come from the experiment defaults, then `--config`, then flags.
//! Powers are given in dB (0 dB = unit power); lists are comma separated.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use fdrelay::experiment::{run_experiment, ExperimentKind, SpecOverrides, Variant};
use fdrelay::FilterMode;
use log::info;

#[derive(Debug, Parser)]
#[command(name = "fdrelay", version, about = "Full-duplex massive-MIMO relay simulator")]
struct Args {
    /// relay-ber, e2e-ber, opa-ee or custom-sweep.
    #[arg(long, value_parser = parse_kind)]
    experiment: Option<ExperimentKind>,
    /// TOML spec file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Channel blocks per BER cell.
    #[arg(long)]
    trials: Option<u64>,
    /// Symbol slots per block.
    #[arg(long)]
    symbols: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of pairs.
    #[arg(long = "K")]
    pairs: Option<usize>,
    /// Relay array sizes.
    #[arg(long = "N", value_delimiter = ',')]
    antennas: Option<Vec<usize>>,
    /// Relay powers, dB.
    #[arg(long = "pr-db", value_delimiter = ',', allow_hyphen_values = true)]
    pr_db: Option<Vec<f64>>,
    /// Nominal relay SNR, dB.
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long = "mod-order")]
    mod_order: Option<usize>,
    #[arg(long = "eps-h2")]
    eps_h2: Option<f64>,
    #[arg(long = "eps-t2")]
    eps_t2: Option<f64>,
    /// Relay filter modes (mmse, ni, hd).
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    mode: Option<Vec<FilterMode>>,
    /// Destination noise variances.
    #[arg(long = "sigma-nd2", value_delimiter = ',')]
    sigma_nd2: Option<Vec<f64>>,
    /// Sum-rate targets of opa-ee, bit/s/Hz.
    #[arg(long = "sum-rates", value_delimiter = ',')]
    sum_rates: Option<Vec<f64>>,
    /// Power-allocation schemes of opa-ee, e.g. opa-mmse,oupa-ni.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    schemes: Option<Vec<Variant>>,
    /// Shadowing draws of opa-ee.
    #[arg(long)]
    draws: Option<usize>,
    /// Channel realizations per allocation iteration.
    #[arg(long = "n-it")]
    n_it: Option<usize>,
    /// Leave the wall-clock time out of the metadata file.
    #[arg(long)]
    no_timestamp: bool,
    /// Print the resolved spec and exit.
    #[arg(long)]
    dry_run: bool,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: fdrelay::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<FilterMode, String> {
    s.parse().map_err(|e: fdrelay::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: fdrelay::Error| e.to_string())
}

impl Args {
    fn overrides(&self) -> SpecOverrides {
        let mut o = SpecOverrides {
            experiment: self.experiment,
            master_seed: self.seed,
            threads: self.threads,
            trials: self.trials,
            symbols: self.symbols,
            out_dir: self.out.clone(),
            timestamp: self.no_timestamp.then_some(false),
            ..Default::default()
        };
        o.system.pairs = self.pairs;
        o.system.snr_db = self.snr_db;
        o.system.mod_order = self.mod_order;
        o.system.eps_h2 = self.eps_h2;
        o.system.eps_t2 = self.eps_t2;
        o.grid.antennas = self.antennas.clone();
        o.grid.p_r_db = self.pr_db.clone();
        o.grid.modes = self.mode.clone();
        o.grid.sigma_nd2 = self.sigma_nd2.clone();
        o.grid.sum_rates = self.sum_rates.clone();
        o.opa.variants = self.schemes.clone();
        o.opa.draws = self.draws;
        o.opa.n_it = self.n_it;
        o
    }
}

fn run(args: &Args) -> Result<()> {
    let file = match &args.config {
        Some(path) => SpecOverrides::from_file(path)?,
        None => SpecOverrides::default(),
    };
    let spec = file.merged(args.overrides()).resolve().context("invalid experiment")?;
    if args.dry_run {
        println!("{spec:#?}");
        return Ok(());
    }
    info!("running {} into {}", spec.kind, spec.out_dir.display());
    let out = run_experiment(&spec).with_context(|| format!("experiment {} failed", spec.kind))?;
    println!("{}", out.csv.display());
    if let Some(draws) = out.draws {
        println!("{}", draws.display());
    }
    println!("{}", out.meta.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
