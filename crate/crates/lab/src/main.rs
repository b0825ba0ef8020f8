//! Command-line front end: each subcommand assembles an experiment spec,
//! runs it, and writes a JSON report. Exit codes: 0 all criteria pass,
//! 1 some criterion failed, 2 invalid configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use thickening_lab::{run_experiment, ExperimentSpec};

#[derive(Parser)]
#[command(
    name = "thickening-lab",
    about = "Exact randomness thickening: extractors, correctors, and verification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Probability as an exact fraction, e.g. 1/2
    #[arg(long)]
    p: Option<String>,
    /// Target density as an exact fraction, e.g. 3/4
    #[arg(long)]
    pprime: Option<String>,
    /// Poisson intensity as an exact fraction
    #[arg(long)]
    lambda: Option<String>,
    /// Target Poisson intensity as an exact fraction
    #[arg(long)]
    lambdaprime: Option<String>,
    /// Extractor tolerance as an exact fraction
    #[arg(long)]
    epsilon: Option<String>,
    /// Truncation failure budget as an exact fraction
    #[arg(long)]
    delta: Option<String>,
    /// Monte Carlo sample count (accepts 1e5 style)
    #[arg(long)]
    samples: Option<String>,
    /// Base seed for the replica streams
    #[arg(long)]
    seed: Option<String>,
    /// Write the JSON report to this path instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump statistics as CSV to this path
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Unconditional fairness of the almost-extractor
    Extract(CommonArgs),
    /// Corrected extractor: fairness and corrector firing rate
    Correct(CommonArgs),
    /// Discrete thickening: marginals, pairwise independence, monotonicity
    Thicken {
        #[command(flatten)]
        common: CommonArgs,
        /// Output prefix length (flattened coordinates)
        #[arg(long)]
        prefix: Option<String>,
        /// Correction ceiling
        #[arg(long)]
        max_level: Option<String>,
    },
    /// Poisson thickening: superset, count law, interarrival law
    ThickenPoisson {
        #[command(flatten)]
        common: CommonArgs,
        /// Output window length as an exact fraction
        #[arg(long)]
        window: Option<String>,
        /// Correction ceiling
        #[arg(long)]
        max_level: Option<String>,
        /// Total interarrival gaps for the KS test
        #[arg(long)]
        gaps: Option<String>,
    },
    /// Exhaustive refutation of exact extractors on small windows
    SearchNoExtractor {
        #[command(flatten)]
        common: CommonArgs,
        /// Density of the auxiliary process as an exact fraction
        #[arg(long)]
        q: Option<String>,
        /// Largest window length to enumerate
        #[arg(long)]
        window: Option<String>,
    },
    /// Distinguish a candidate thickening from a genuine Poisson process
    Distinguish {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of shifted intervals L
        #[arg(long)]
        cells: Option<String>,
        /// Window approximation radius as an exact fraction
        #[arg(long)]
        r: Option<String>,
        /// Training sample count for the window events
        #[arg(long)]
        training: Option<String>,
        /// Candidate rule: unit-offset or no-add
        #[arg(long)]
        candidate: Option<String>,
    },
    /// Calibrate the statistical tests under true nulls
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Repetitions of each calibration test
        #[arg(long)]
        reps: Option<String>,
    },
}

fn apply_common(mut spec: ExperimentSpec, c: &CommonArgs) -> ExperimentSpec {
    let pairs = [
        ("p", &c.p),
        ("pprime", &c.pprime),
        ("lambda", &c.lambda),
        ("lambdaprime", &c.lambdaprime),
        ("epsilon", &c.epsilon),
        ("delta", &c.delta),
        ("samples", &c.samples),
        ("seed", &c.seed),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            spec = spec.set(k, v.clone());
        }
    }
    spec
}

fn set_opt(mut spec: ExperimentSpec, key: &str, v: &Option<String>) -> ExperimentSpec {
    if let Some(v) = v {
        spec = spec.set(key, v.clone());
    }
    spec
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (spec, common) = match &cli.command {
        Command::Extract(c) => (apply_common(ExperimentSpec::new("extract"), c), c.clone()),
        Command::Correct(c) => (apply_common(ExperimentSpec::new("correct"), c), c.clone()),
        Command::Thicken {
            common,
            prefix,
            max_level,
        } => {
            let mut s = apply_common(ExperimentSpec::new("thicken"), common);
            s = set_opt(s, "prefix", prefix);
            s = set_opt(s, "max_level", max_level);
            (s, common.clone())
        }
        Command::ThickenPoisson {
            common,
            window,
            max_level,
            gaps,
        } => {
            let mut s = apply_common(ExperimentSpec::new("thicken-poisson"), common);
            s = set_opt(s, "window", window);
            s = set_opt(s, "max_level", max_level);
            s = set_opt(s, "gaps", gaps);
            (s, common.clone())
        }
        Command::SearchNoExtractor { common, q, window } => {
            let mut s = apply_common(ExperimentSpec::new("search-no-extractor"), common);
            s = set_opt(s, "q", q);
            s = set_opt(s, "window", window);
            (s, common.clone())
        }
        Command::Distinguish {
            common,
            cells,
            r,
            training,
            candidate,
        } => {
            let mut s = apply_common(ExperimentSpec::new("distinguish"), common);
            s = set_opt(s, "cells", cells);
            s = set_opt(s, "r", r);
            s = set_opt(s, "training", training);
            s = set_opt(s, "candidate", candidate);
            (s, common.clone())
        }
        Command::Calibrate { common, reps } => {
            let mut s = apply_common(ExperimentSpec::new("calibrate"), common);
            s = set_opt(s, "reps", reps);
            (s, common.clone())
        }
    };

    match run_experiment(&spec) {
        Err(e) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Ok(report) => {
            let body = report.full_json();
            match &common.out {
                None => println!("{body}"),
                Some(path) => {
                    if let Err(e) = std::fs::write(path, &body) {
                        eprintln!("cannot write report: {e}");
                        return ExitCode::from(2);
                    }
                }
            }
            if let Some(path) = &common.csv {
                if let Err(e) = std::fs::write(path, report.csv()) {
                    eprintln!("cannot write CSV: {e}");
                    return ExitCode::from(2);
                }
            }
            if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
