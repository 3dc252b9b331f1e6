use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qverify_core::scenario::{
    export_bath_samples, export_correlators, run_scenario, sweep_rows, write_bath_samples,
    write_correlators, write_outcome, Outcome, RunOptions, Scenario, SweepRow,
};
use qverify_core::Error;
use rayon::prelude::*;

/// Reliability checks for analog quantum simulations driven by scenario files.
#[derive(Parser)]
#[command(name = "qverify", version)]
struct Cli {
    /// Output root; each scenario writes into <out>/<scenario name>/.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override `grid.n_steps` (even, at least 16).
    #[arg(long, global = true)]
    resolution: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json, timeseries.csv and correlators.
    Run { config: PathBuf },
    /// Run a scenario once per value of a numeric parameter.
    Sweep {
        config: PathBuf,
        /// Dotted field path (`bath.exponential[0].lambda`) or a short alias
        /// (eps, a, spin_decay, g, lambda, gamma, omega, t, eta).
        #[arg(long)]
        param: String,
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_negative_numbers = true
        )]
        values: Vec<f64>,
    },
    /// Write the sampled correlator grids and bath samples only.
    ExportCorrelators { config: PathBuf },
}

enum Failure {
    Schema(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_schema_error() {
            Failure::Schema(e.to_string())
        } else {
            Failure::Numeric(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load(config: &Path) -> Result<(Scenario, PathBuf), Failure> {
    let s = Scenario::load(config)?;
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((s, base))
}

fn summary(outcome: &Outcome, prefix: &str) {
    for r in &outcome.reports {
        let ratio = r
            .ratio
            .map_or_else(|| "n/a".to_string(), |x| format!("{x:.4e}"));
        let accident = if r.by_accident {
            " [passes by accident]"
        } else {
            ""
        };
        println!(
            "{prefix}{} {}: {} (ratio {ratio}, bound {:.4e}, eta {}){accident}",
            outcome.scenario,
            r.observable,
            r.verdict.as_str(),
            r.bound_ratio,
            r.threshold_eta,
        );
    }
}

fn cmd_run(cli: &Cli, config: &Path, opts: RunOptions) -> CmdResult {
    let (s, base) = load(config)?;
    let outcome = run_scenario(&s, &base, opts)?;
    write_outcome(&outcome, &cli.out.join(&s.name))?;
    summary(&outcome, "");
    Ok(())
}

/// File-system safe form of a parameter path.
fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._=-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn point_dir(param: &str, value: f64) -> String {
    sanitize(&format!("{param}={value}"))
}

fn cmd_sweep(cli: &Cli, config: &Path, param: &str, values: &[f64], opts: RunOptions) -> CmdResult {
    let (s, base) = load(config)?;
    let points = values
        .iter()
        .map(|&v| Ok((v, s.with_parameter(param, v)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let root = cli.out.join(&s.name);
    let outcomes = points
        .par_iter()
        .map(|(v, p)| {
            let outcome = run_scenario(p, &base, opts)?;
            write_outcome(&outcome, &root.join(point_dir(param, *v)))?;
            Ok((*v, outcome))
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let mut rows: Vec<SweepRow> = Vec::new();
    for (v, outcome) in &outcomes {
        summary(outcome, &format!("[{param}={v}] "));
        rows.extend(sweep_rows(param, *v, outcome));
    }
    let path = root.join(format!("sweep_{}.csv", sanitize(param)));
    let mut w = csv::Writer::from_path(&path).map_err(|e| Failure::Numeric(e.to_string()))?;
    for r in &rows {
        w.serialize(r)
            .map_err(|e| Failure::Numeric(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::Numeric(e.to_string()))?;
    println!("sweep table: {}", path.display());
    Ok(())
}

fn cmd_export(cli: &Cli, config: &Path, opts: RunOptions) -> CmdResult {
    let (s, base) = load(config)?;
    let dir = cli.out.join(&s.name);
    let grids = export_correlators(&s, &base, opts)?;
    write_correlators(&grids, &dir)?;
    if let Some(samples) = export_bath_samples(&s, &base, opts)? {
        write_bath_samples(&samples, &dir)?;
    }
    println!(
        "{}: {} correlator grid(s) written to {}",
        s.name,
        grids.len(),
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(3);
        }
    }
    let opts = RunOptions {
        resolution: cli.resolution,
    };
    let result = match &cli.command {
        Command::Run { config } => cmd_run(&cli, config, opts),
        Command::Sweep {
            config,
            param,
            values,
        } => cmd_sweep(&cli, config, param, values, opts),
        Command::ExportCorrelators { config } => cmd_export(&cli, config, opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Schema(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
