use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipslab_cli::{print_schema, run, ExperimentKind, ExperimentSpec, Format, Overrides, RunOptions};

/// Monte Carlo experiments for diffusive interacting particle systems.
///
/// Exit status: 0 when every check passes, 1 when a bound or comparison
/// fails, 2 on a usage or spec error.
#[derive(Parser)]
#[command(name = "ipslab", version)]
struct Cli {
    /// Master seed, overriding the spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results are identical for any count).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file, overriding the spec; stdout if neither is set.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Print the spec grammar and exit.
    #[arg(long)]
    print_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a spec file.
    Run { spec: PathBuf },
    /// Parse and validate a spec file without running it.
    Validate { spec: PathBuf },
    /// Print the spec grammar.
    Schema,
    /// Sample one Poisson configuration.
    Sample(Overrides),
    /// Evolve a Poisson configuration and record snapshots.
    Evolve(Overrides),
    /// Estimate Var[u_t] over a time series.
    VarDecay(Overrides),
    /// Compare Monte Carlo variances with the heat-kernel formula.
    OracleCompare(Overrides),
    /// Localization ratio E[(u_t - A_K u_t)^2] / E[u^2] over cube sides.
    Localization(Overrides),
    /// Bracket isometry and the multiscale functional.
    Martingale(Overrides),
    /// Inequality checks over a parameter grid.
    Inequalities(Overrides),
}

fn execute(spec: &ExperimentSpec, opts: &RunOptions) -> ExitCode {
    match run(spec, opts) {
        Ok(report) => {
            if opts.out.is_none() && spec.output.is_none() {
                print!("{}", report.rendered);
            }
            if report.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("checks failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    if cli.print_schema {
        print!("{}", print_schema());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no command given; try `ipslab --help`");
        return ExitCode::from(2);
    };
    let opts = RunOptions {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
        format: cli.format,
    };
    let (kind, overrides) = match command {
        Command::Sample(o) => (ExperimentKind::Sample, o),
        Command::Evolve(o) => (ExperimentKind::Evolve, o),
        Command::VarDecay(o) => (ExperimentKind::VarDecay, o),
        Command::OracleCompare(o) => (ExperimentKind::OracleCompare, o),
        Command::Localization(o) => (ExperimentKind::Localization, o),
        Command::Martingale(o) => (ExperimentKind::Martingale, o),
        Command::Inequalities(o) => (ExperimentKind::Inequalities, o),
        other => return plain(other, &opts),
    };
    match overrides.build(kind) {
        Ok(spec) => execute(&spec, &opts),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn plain(command: Command, opts: &RunOptions) -> ExitCode {
    match command {
        Command::Schema => {
            print!("{}", print_schema());
            ExitCode::SUCCESS
        }
        Command::Validate { spec } => match ExperimentSpec::from_path(&spec) {
            Ok(_) => {
                println!("{}: ok", spec.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run { spec } => match ExperimentSpec::from_path(&spec) {
            Ok(parsed) => execute(&parsed, opts),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        _ => unreachable!("experiment subcommands are handled by the caller"),
    }
}
