//! `sheetspace run <scenario.json>` and `sheetspace describe <scenario.json>`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod checks;
mod report;
mod scenario;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use report::{CheckReport, Report};
use scenario::{Format, InputError, Resolved, Scenario, SEED_ENV};
use sheetspace::sheet::DiscreteSheet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_FAIL: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "sheetspace", version, about = "Numerical checks on spaces of codimension-2 world-sheets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the checks listed in a scenario and write report.csv and report.json.
    Run {
        scenario: PathBuf,
        /// Output directory; overrides the scenario's output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checks to run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print dimensions, grid and planned checks without computing anything.
    Describe { scenario: PathBuf },
}

fn load(path: &Path) -> Result<Resolved, InputError> {
    Scenario::load(path)?.resolve(std::env::var(SEED_ENV).ok().as_deref())
}

fn grid_label(r: &Resolved) -> String {
    let names = r.domain.names();
    names.iter().zip(r.domain.shape()).map(|(n, s)| format!("{n}[{s}]")).collect::<Vec<_>>().join(" x ")
}

fn describe(r: &Resolved) -> String {
    let n = r.n();
    let (neg, pos) = r.metric.signature();
    let mut out = format!("scenario: {}\n", r.name);
    out += &format!("metric: {} (n = {n}, signature ({neg},{pos}))\n", r.metric.name());
    out += &format!("dim N = {}, CR codim = {}\n", 3 * n - 4, n - 2);
    out += &format!("grid: {} ({} vertices)\n", grid_label(r), r.domain.len());
    let names: Vec<&str> = r.checks.iter().map(|c| c.name.as_str()).collect();
    out += &format!("checks: {}\n", if names.is_empty() { "none".into() } else { names.join(", ") });
    out += &format!("seed: {}\n", r.seed);
    out
}

fn run(r: &Resolved, out: &Path, jobs: usize) -> std::io::Result<Report> {
    let sheet = DiscreteSheet::from_map(r.metric.clone(), r.domain.clone(), &r.map);
    let ctx = checks::Context { scenario: r, sheet: &sheet };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(std::io::Error::other)?;
    let reports: Vec<CheckReport> = pool.install(|| r.checks.par_iter().map(|c| checks::run(&ctx, c)).collect());
    let n = r.n();
    let report = Report {
        scenario: r.name.clone(),
        seed: r.seed,
        n,
        dim_n: 3 * n - 4,
        cr_codim: n - 2,
        grid: r.domain.shape().iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x"),
        pass: reports.iter().all(|c| c.pass),
        checks: reports,
    };
    std::fs::create_dir_all(out)?;
    if r.formats.contains(&Format::Csv) {
        report::write_csv(out, &report)?;
    }
    if r.formats.contains(&Format::Json) {
        report::write_json(out, &report)?;
    }
    if let Some(log) = report.checks.iter().find_map(|c| c.trajectory.as_ref()) {
        report::write_trajectory(out, log)?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Describe { scenario } => match load(&scenario) {
            Ok(r) => {
                print!("{}", describe(&r));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_INPUT)
            }
        },
        Command::Run { scenario, out, jobs } => {
            let r = match load(&scenario) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_INPUT);
                }
            };
            let dir = out.or_else(|| r.out_dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("sheetspace-out"));
            let report = match run(&r, &dir, jobs) {
                Ok(rep) => rep,
                Err(e) => {
                    eprintln!("error: writing reports to {}: {e}", dir.display());
                    return ExitCode::from(EXIT_FAIL);
                }
            };
            for c in &report.checks {
                let tag = if c.pass { "pass" } else { "FAIL" };
                let slope = c.slope.map(|s| format!(" slope {s:.3}")).unwrap_or_default();
                println!("{tag:4} {:<14} {} rows{slope} [{:.2}s]", c.name, c.rows.len(), c.wall_time_s);
                if let Some(e) = &c.error {
                    println!("     {e}");
                }
            }
            println!("report written to {}", dir.display());
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
    }
}
