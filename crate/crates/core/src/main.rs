use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use safe_cbf_lab::harness::verify::{run_suite, Suite, VerifyReport};
use safe_cbf_lab::harness::{self, LoadedConfig};
use safe_cbf_lab::learner::{run_episode, Variant};

#[derive(Parser)]
#[command(name = "safe-cbf-lab", version, about = "GP-CBF safe learning experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one episode and write its trace CSV and metrics JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run variants x seeds and print a summary table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// lambda_dagger over a 2-D state grid for the empty, first-event and
    /// final datasets of one episode.
    LambdaMap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "alg1")]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized checks against brute-force oracles.
    Verify {
        /// feasibility, solver or gp; all three when omitted.
        #[arg(long)]
        suite: Option<Suite>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for per-instance CSV reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classifier vs grid oracle.
    VerifyFeasibility {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cone solver vs grid oracle.
    VerifySolver {
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the prior dataset used by alg1_prior.
    Warmup {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn default_count(s: Suite) -> usize {
    match s {
        Suite::Feasibility => 500,
        Suite::Solver => 300,
        Suite::Gp => 200,
    }
}

fn report(rep: &VerifyReport, out: Option<&PathBuf>) -> Result<bool> {
    println!("{}", rep.summary());
    for f in rep.failures.iter().take(20) {
        println!("  FAIL {f}");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let name = format!("verify_{}.csv", format!("{:?}", rep.suite).to_lowercase());
        std::fs::write(dir.join(name), rep.to_csv()?)?;
    }
    Ok(rep.passed())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            config,
            variant,
            seed,
            out,
        } => {
            let cfg = LoadedConfig::load(&config)?;
            let (tr, csv, json) = harness::run(&cfg, variant, seed, out.as_deref())?;
            let m = harness::metrics(&tr, &cfg.hash);
            println!("{}", serde_json::to_string_pretty(&m)?);
            println!("wrote {} and {}", csv.display(), json.display());
            Ok(true)
        }
        Cmd::Compare {
            config,
            variants,
            seeds,
            out,
        } => {
            let cfg = LoadedConfig::load(&config)?;
            let variants = variants.unwrap_or_else(|| cfg.config.variants.clone());
            let seeds = seeds.unwrap_or_else(|| cfg.config.seeds.clone());
            let dir = harness::output_dir(&cfg, out.as_deref());
            let cmp = harness::compare(&cfg, &variants, &seeds, Some(&dir))?;
            print!("{}", cmp.table());
            Ok(true)
        }
        Cmd::LambdaMap {
            config,
            variant,
            seed,
            out,
        } => {
            let cfg = LoadedConfig::load(&config)?;
            let Some(grid) = cfg.config.grid.clone() else {
                bail!("config has no [grid] section");
            };
            let mut sc = cfg.base_scenario()?;
            if variant == Variant::Alg1Prior {
                sc.prior = Some(cfg.prior_dataset(&sc)?);
            }
            let tr = run_episode(&sc, variant, seed)?;
            let map = harness::lambda_map(&sc, &grid, &harness::episode_snapshots(&tr))?;
            if let Some(dir) = out.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(&out, map.to_csv()?).with_context(|| out.display().to_string())?;
            for label in map.labels() {
                println!(
                    "{label}: {} cells with lambda_dagger < 0",
                    map.negative_cells(&label).len()
                );
            }
            Ok(true)
        }
        Cmd::Verify { suite, n, seed, out } => {
            let suites = match suite {
                Some(s) => vec![s],
                None => vec![Suite::Feasibility, Suite::Solver, Suite::Gp],
            };
            let mut ok = true;
            for s in suites {
                let rep = run_suite(s, n.unwrap_or_else(|| default_count(s)), seed);
                ok &= report(&rep, out.as_ref())?;
            }
            Ok(ok)
        }
        Cmd::VerifyFeasibility { n, seed, out } => report(&run_suite(Suite::Feasibility, n, seed), out.as_ref()),
        Cmd::VerifySolver { n, seed, out } => report(&run_suite(Suite::Solver, n, seed), out.as_ref()),
        Cmd::Warmup { config, out } => {
            let cfg = LoadedConfig::load(&config)?;
            let ds = harness::warmup(&cfg, &out)?;
            println!("wrote {} measurements to {}", ds.len(), out.display());
            Ok(true)
        }
    }
}
