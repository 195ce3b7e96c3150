//! Command-line entry point: run configured experiments or print the
//! exact tree-integral constant table.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use anniwalk::experiments::{run, ExperimentConfig};
use anniwalk::jn::{jn_bounds_check, jn_montecarlo, jn_table};

#[derive(Parser)]
#[command(name = "anniwalk", version, about = "two-species interface-annihilation simulator and verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        j: Option<Vec<u32>>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<f64>>,
        #[arg(long)]
        lambda_override: Option<f64>,
    },
    /// Print the exact constant table with bounds and Monte Carlo column.
    Jn {
        #[arg(long, default_value_t = 10)]
        n_max: u32,
        #[arg(long, default_value_t = 200_000)]
        mc_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(pass) => {
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anniwalk::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            threads,
            replicas,
            j,
            t_end,
            snapshots,
            lambda_override,
        } => {
            if let Some(k) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                    .map_err(|e| anniwalk::Error::Config(e.to_string()))?;
            }
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = Some(o);
            }
            if let Some(r) = replicas {
                cfg.replicas = r;
            }
            if let Some(js) = j {
                cfg.j_levels = js;
            }
            if let Some(t) = t_end {
                cfg.t_end = t;
            }
            if let Some(s) = snapshots {
                cfg.snapshots = s;
            }
            if let Some(l) = lambda_override {
                cfg.lambda_override = Some(l);
            }
            cfg.validate()?;
            let manifest = run(&cfg)?;
            for c in &manifest.checks {
                println!(
                    "{} j={} statistic={:.6e} bound={:.6e} {}",
                    c.check,
                    c.j,
                    c.statistic,
                    c.bound,
                    if c.pass { "PASS" } else { "FAIL" }
                );
            }
            println!(
                "{}: {} checks, wall {:.1}s",
                if manifest.pass { "PASS" } else { "FAIL" },
                manifest.checks.len(),
                manifest.wall_seconds
            );
            Ok(manifest.pass)
        }
        Command::Jn {
            n_max,
            mc_samples,
            seed,
        } => {
            let table = jn_table(n_max);
            let bounds = jn_bounds_check(n_max);
            println!(
                "{:>3}  {:<40} {:>18} {:>7} {:>7} {:>14} {:>12}",
                "N", "exact", "decimal", "lower", "upper", "mc", "mc_se"
            );
            for rec in &bounds {
                let n = rec.n;
                let (mc, se) = if n <= 4 {
                    let (m, s) = jn_montecarlo(n, mc_samples, seed.wrapping_add(n as u64));
                    (format!("{m:.6}"), format!("{s:.2e}"))
                } else {
                    ("-".into(), "-".into())
                };
                println!(
                    "{:>3}  {:<40} {:>18.10} {:>7} {:>7} {:>14} {:>12}",
                    n,
                    format!("{}", table[n as usize]),
                    rec.value,
                    rec.lower_holds,
                    rec.upper_holds,
                    mc,
                    se
                );
            }
            Ok(true)
        }
    }
}
