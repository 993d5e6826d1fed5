use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hypermarl_lab::aggregate::{self, aggregate_csv};
use hypermarl_lab::config::{self, NamedConfig};
use hypermarl_lab::demo;
use hypermarl_lab::fmt::write_atomic;
use hypermarl_lab::runner::{self, ExperimentSpec, RunStatus, DEFAULT_MASTER_SEED};
use hypermarl_lab::tables;
use hypermarl_lab::verify;

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INCOMPLETE_GRID: u8 = 3;
const EXIT_NUMERIC_ABORT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "hypermarl-lab",
    about = "Specialisation/Synchronisation game laboratory: train policy-sharing architectures, aggregate seeded runs, verify reference behaviour",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per (config, seed); skips completed artifacts.
    Run {
        /// Config file: flat `section.key=value` lines, or JSON.
        #[arg(long, conflicts_with = "grid")]
        config: Option<PathBuf>,
        /// Built-in experiment grid (`table1`: both games, n in {2,4,8,16},
        /// nops/fups/fups_id at standard widths).
        #[arg(long)]
        grid: Option<String>,
        /// Output directory for run artifacts.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Seed count (`10`) or explicit comma-separated list (`1,2,3`).
        #[arg(long)]
        seeds: Option<String>,
        /// Parallel runs (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Re-run and overwrite completed artifacts.
        #[arg(long)]
        force: bool,
    },
    /// Aggregate completed runs into aggregate.csv / aggregate.json.
    Aggregate {
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Check the aggregated standard grid against its tolerance bands.
    VerifyTable1 {
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Reward-vs-group-size profiles for both games.
    Profiles {
        #[arg(long)]
        n: usize,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact trainable-parameter counts per architecture.
    ParamCounts {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// TVD-vs-JSD schedule showing where TVD goes flat.
    DistancesDemo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run_cli(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

fn master_seed() -> Result<u64, (u8, String)> {
    match std::env::var("HYPERMARL_LAB_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| (EXIT_CONFIG, format!("bad HYPERMARL_LAB_SEED `{text}`"))),
        Err(_) => Ok(DEFAULT_MASTER_SEED),
    }
}

fn parse_seeds(spec: &str, master: u64) -> Result<Vec<u64>, (u8, String)> {
    let spec = spec.trim();
    if spec.contains(',') {
        spec.split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| (EXIT_CONFIG, format!("bad seed `{s}`")))
            })
            .collect()
    } else {
        let count: usize = spec
            .parse()
            .map_err(|_| (EXIT_CONFIG, format!("bad seed spec `{spec}`")))?;
        if count == 0 {
            return Err((EXIT_CONFIG, "need at least one seed".into()));
        }
        Ok(runner::derive_seeds(master, count))
    }
}

fn emit(out: Option<PathBuf>, contents: &str) -> Result<u8, (u8, String)> {
    match out {
        Some(path) => {
            write_atomic(&path, contents.as_bytes())
                .map_err(|e| (EXIT_FAIL, format!("cannot write {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
        None => print!("{contents}"),
    }
    Ok(EXIT_OK)
}

fn run_cli(cli: Cli) -> Result<u8, (u8, String)> {
    match cli.command {
        Command::Run {
            config,
            grid,
            out,
            seeds,
            jobs,
            force,
        } => {
            let master = master_seed()?;
            let (configs, file_seeds): (Vec<NamedConfig>, Option<Vec<u64>>) =
                match (&config, grid.as_deref()) {
                    (Some(path), None) => {
                        let parsed = config::parse_config_file(path)
                            .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
                        (parsed.configs, parsed.seeds)
                    }
                    (None, Some("table1")) => (config::table1_grid(), None),
                    (None, Some(other)) => {
                        return Err((EXIT_CONFIG, format!("unknown grid `{other}`")))
                    }
                    (None, None) => {
                        return Err((EXIT_CONFIG, "need --config PATH or --grid table1".into()))
                    }
                    (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
                };
            let seeds = match seeds {
                Some(spec) => parse_seeds(&spec, master)?,
                None => file_seeds.unwrap_or_else(|| runner::derive_seeds(master, 10)),
            };
            let mut spec = ExperimentSpec::new(configs, seeds, out);
            if let Some(jobs) = jobs {
                spec.jobs = jobs.max(1);
            }
            spec.force = force;
            let outcomes = runner::run(&spec).map_err(|e| (EXIT_FAIL, e.to_string()))?;
            let mut aborted = 0usize;
            let mut reused = 0usize;
            for o in &outcomes {
                if o.reused {
                    reused += 1;
                }
                if o.status == RunStatus::Aborted {
                    aborted += 1;
                    eprintln!("aborted: {} seed {}", o.key, o.seed);
                }
            }
            println!(
                "{} runs complete ({} reused, {} aborted) under {}",
                outcomes.len(),
                reused,
                aborted,
                spec.out_dir.display()
            );
            if aborted > 0 {
                return Ok(EXIT_NUMERIC_ABORT);
            }
            Ok(EXIT_OK)
        }
        Command::Aggregate { out } => {
            let rows =
                aggregate::aggregate_dir(&out).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            aggregate::write_aggregate(&out, &rows).map_err(|e| (EXIT_FAIL, e.to_string()))?;
            print!("{}", aggregate_csv(&rows));
            println!("wrote {}/aggregate.csv and aggregate.json", out.display());
            Ok(EXIT_OK)
        }
        Command::VerifyTable1 { out } => {
            let rows =
                aggregate::aggregate_dir(&out).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let report = verify::verify_table1(&rows);
            let json_path = out.join("verify.json");
            write_atomic(
                &json_path,
                serde_json::to_string_pretty(&report).unwrap().as_bytes(),
            )
            .map_err(|e| (EXIT_FAIL, format!("cannot write {}: {e}", json_path.display())))?;
            for cell in &report.cells {
                println!(
                    "{} {:28} requirement {:24} observed {}",
                    if cell.pass { "PASS" } else { "FAIL" },
                    cell.cell,
                    cell.requirement,
                    cell.observed
                );
            }
            for gap in &report.missing {
                println!("MISSING {gap}");
            }
            if !report.missing.is_empty() {
                return Err((
                    EXIT_INCOMPLETE_GRID,
                    format!("{} grid cells missing", report.missing.len()),
                ));
            }
            if report.all_pass {
                println!("all cells pass");
                Ok(EXIT_OK)
            } else {
                Err((EXIT_FAIL, "verification bands violated".into()))
            }
        }
        Command::Profiles { n, out } => {
            let csv = tables::profiles_csv(n).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            emit(out, &csv)
        }
        Command::ParamCounts { out } => emit(out, &tables::param_counts_csv()),
        Command::DistancesDemo { out } => emit(out, &demo::demo_csv()),
    }
}
