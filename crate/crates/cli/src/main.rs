use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use geopolicy::checks::{self, CheckResult};
use geopolicy::scenarios::{self, Outcome, ScenarioConfig};
use geopolicy::Error;

#[derive(Parser)]
#[command(
    name = "geopolicy",
    version,
    about = "Run geometric motion-policy scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one built-in scenario or a JSON configuration.
    Run {
        /// Built-in scenario id (see `list`).
        #[arg(required_unless_present = "config", conflicts_with = "config")]
        id: Option<String>,
        /// Scenario configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: $GEOPOLICY_OUT or `traces`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the step size.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the random seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a group of built-ins and check them.
    Suite {
        #[arg(value_parser = ["s2", "s2-appendix", "arm", "all"])]
        group: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of scenarios run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// List the built-in scenarios.
    List,
    /// Run the fast numerical self-checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(scenarios::OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("traces"))
}

fn config_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config { .. } | Error::UnknownScenario(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn print_results(results: &[CheckResult]) -> bool {
    for r in results {
        println!("{r}");
    }
    results.iter().all(|r| r.passed)
}

fn run(
    id: Option<String>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    dt: Option<f64>,
    seed: Option<u64>,
) -> ExitCode {
    let loaded = match (&id, &config) {
        (Some(id), _) => scenarios::builtin(id),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(Error::from)
            .and_then(|text| scenarios::parse_config(&text)),
        (None, None) => unreachable!("clap requires an id or a config"),
    };
    let mut cfg: ScenarioConfig = match loaded {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    if let Some(dt) = dt {
        cfg.dt = dt;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Err(e) = cfg.validate() {
        return config_error(&e);
    }
    let start = Instant::now();
    let outcome = match scenarios::run(&cfg) {
        Ok(o) => o,
        Err(e) => return config_error(&e),
    };
    let dir = out_dir(out);
    if let Err(e) = scenarios::write_outputs(&cfg, &outcome, &dir) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let elapsed = start.elapsed().as_secs_f64();
    match &outcome {
        Outcome::Rollout { summary, .. } => {
            println!(
                "{}: {} steps, t = {:.3} s, goal error {:.3e}, min h0 {} ({elapsed:.1} s)",
                cfg.id,
                summary.steps,
                summary.t_final,
                summary.final_goal_error,
                summary
                    .safety
                    .iter()
                    .map(|s| s.min_h0)
                    .fold(f64::INFINITY, f64::min),
            );
            for w in &summary.warnings {
                println!("  warning: {w}");
            }
            if let Some(msg) = &summary.aborted {
                eprintln!("error: {msg}");
                return ExitCode::from(1);
            }
        }
        Outcome::Batch(report) => {
            println!(
                "{}: {} runs, {} violations, {} converged, min h_obs {:.4} ({elapsed:.1} s)",
                cfg.id, report.count, report.violations, report.converged, report.min_h_obs
            );
        }
    }
    println!("wrote {}", dir.display());
    ExitCode::SUCCESS
}

fn suite(group: &str, out: Option<PathBuf>, jobs: usize) -> ExitCode {
    let dir = out_dir(out);
    let start = Instant::now();
    let results = match checks::run_group(group, Some(&dir), jobs) {
        Ok(r) => r,
        Err(e) => return config_error(&e),
    };
    let ok = print_results(&results);
    println!(
        "suite {group}: {} ({:.1} s), traces in {}",
        if ok { "passed" } else { "FAILED" },
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            id,
            config,
            out,
            dt,
            seed,
        } => run(id, config, out, dt, seed),
        Command::Suite { group, out, jobs } => suite(&group, out, jobs),
        Command::List => {
            for id in scenarios::builtin_ids() {
                let description = scenarios::builtin(id)
                    .map(|c| c.description)
                    .unwrap_or_default();
                println!("{id:<24} {description}");
            }
            ExitCode::SUCCESS
        }
        Command::Check { seed } => {
            if print_results(&checks::self_checks(seed)) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
