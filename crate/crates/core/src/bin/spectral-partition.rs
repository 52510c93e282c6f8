use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spectral_partition::config::RunConfig;
use spectral_partition::io::read_phases;
use spectral_partition::optimizer::{optimize, RunLog};
use spectral_partition::phase::PhaseSystem;
use spectral_partition::reference::ReferenceShape;
use spectral_partition::study::{
    alpha_sweep, calibrate_alpha, decay_exponent, error_table, stability_study, triple_point_blocks, GridConvention,
    RunSummary,
};
use spectral_partition::{par, Boundary, Result};

#[derive(Parser)]
#[command(version, about = "Penalized Dirichlet eigenvalues and multiphase spectral partitions")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    /// Unit disk.
    Disk,
    /// Square of side 2.
    Square,
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    Endpoint,
    Interior,
}

#[derive(Subcommand)]
enum Command {
    /// Relative eigenvalue errors of a rasterized reference shape over (N, C).
    EigError {
        #[arg(long, value_enum)]
        shape: Shape,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        c: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        kmax: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Convention::Endpoint)]
        convention: Convention,
        #[arg(long)]
        out: PathBuf,
    },
    /// One optimization run.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs over increasing α values, warm-started from the largest α down.
    SweepAlpha {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Same configuration from several random starts.
    Stability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// α-sweep reporting the value whose final total is closest to a target.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long)]
        target: f64,
        /// Start every α from a random system instead of chaining the runs.
        #[arg(long)]
        cold: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn load_init(cfg: &RunConfig) -> Result<Option<PhaseSystem>> {
    match &cfg.init {
        Some(path) => Ok(Some(read_phases(&mut fs::File::open(path)?, &cfg.grid)?)),
        None => Ok(None),
    }
}

fn print_summary(label: &str, s: &RunSummary, periodic: bool) {
    let areas: Vec<String> = s.areas.iter().map(|a| format!("{a:.4}")).collect();
    println!(
        "{label}: total {:.6}  iterations {}  {:?}  occupied area {:.4}  areas [{}]  triple-point blocks {}",
        s.cost.total,
        s.iterations,
        s.termination,
        s.occupied_area(),
        areas.join(", "),
        triple_point_blocks(&s.labels, periodic).len()
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::EigError {
            shape,
            n,
            c,
            kmax,
            tol,
            seed,
            convention,
            out,
        } => {
            let shape = match shape {
                Shape::Disk => ReferenceShape::unit_disk(),
                Shape::Square => ReferenceShape::square(2.0),
            };
            let convention = match convention {
                Convention::Endpoint => GridConvention::Endpoint,
                Convention::Interior => GridConvention::Interior,
            };
            let table = error_table(&shape, &n, &c, kmax, tol, seed, convention)?;
            let mut w = create(&out)?;
            table.write_csv(&mut w)?;
            w.flush()?;
            print!("{:>6}", "N");
            for c in &table.cs {
                print!(" {:>10}", format!("C={c:.0e}"));
            }
            println!();
            for (n, row) in table.ns.iter().zip(&table.entries) {
                print!("{n:>6}");
                for e in row {
                    match e.value() {
                        Some(v) => print!(" {v:>10.2e}"),
                        None => print!(" {:>10}", "-"),
                    }
                }
                match decay_exponent(&table, *n) {
                    Ok(s) => println!("   slope {s:.3}"),
                    Err(_) => println!(),
                }
            }
            for (n, row) in table.ns.iter().zip(&table.entries) {
                for (c, e) in table.cs.iter().zip(row) {
                    if let spectral_partition::study::Entry::Missing { reason } = e {
                        eprintln!("N={n} C={c:e}: {reason}");
                    }
                }
            }
        }
        Command::Optimize { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let init = load_init(&cfg)?;
            let log: RunLog = optimize(&cfg.optimizer, &cfg.grid, init)?;
            log.write_outputs(&out, &cfg.optimizer.run_id)?;
            fs::write(out.join(format!("{}.cfg", cfg.optimizer.run_id)), cfg.to_text())?;
            let periodic = cfg.grid.bc == Boundary::Periodic;
            print_summary(&cfg.optimizer.run_id, &RunSummary::from_log(&log, cfg.optimizer.seed), periodic);
        }
        Command::SweepAlpha { config, alphas, out } => {
            let cfg = RunConfig::load(&config)?;
            let sweep = alpha_sweep(&cfg.optimizer, &cfg.grid, &alphas, Some(&out))?;
            let mut w = create(&out.join("sweep.csv"))?;
            sweep.write_csv(&mut w)?;
            w.flush()?;
            let periodic = cfg.grid.bc == Boundary::Periodic;
            for p in &sweep.points {
                print_summary(&format!("alpha {}", p.alpha), &p.summary, periodic);
            }
        }
        Command::Stability { config, seeds, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if out.is_some() {
                cfg.optimizer.checkpoint_dir = out.clone();
            }
            let report = stability_study(&cfg.optimizer, &cfg.grid, seeds)?;
            let periodic = cfg.grid.bc == Boundary::Periodic;
            for r in &report.runs {
                print_summary(&format!("seed {}", r.seed), r, periodic);
            }
            println!("spread {:.3e}", report.spread);
            println!("min pairwise partition agreement {:.4}", report.min_agreement(periodic)?);
        }
        Command::Calibrate {
            config,
            alphas,
            target,
            cold,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let cal = calibrate_alpha(&cfg.optimizer, &cfg.grid, &alphas, target, cold, out.as_deref())?;
            if let Some(dir) = &out {
                let mut w = create(&dir.join("calibration.csv"))?;
                cal.sweep.write_csv(&mut w)?;
                w.flush()?;
            }
            let periodic = cfg.grid.bc == Boundary::Periodic;
            for p in &cal.sweep.points {
                print_summary(&format!("alpha {}", p.alpha), &p.summary, periodic);
            }
            println!(
                "best alpha {} with total {:.6} ({:.3}% from {target})",
                cal.best_alpha,
                cal.best_total,
                100.0 * cal.relative_miss()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
        #[cfg(not(feature = "parallel"))]
        let _ = t;
    }
    if cli.sequential {
        par::set_parallel(false);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
