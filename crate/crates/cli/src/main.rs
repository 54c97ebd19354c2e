use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use smart::problems::{PresetParams, ProblemSpec, PRESETS};
use smart::schedule::DelayMode;
use smart::stepsize::{linear_bound, weak_bound_constant, RatePlan, RateTable};
use smart::suites::{run_suite, Suite};
use smart_cli::config::{Mode, ProblemSource, RunConfig, ScheduleConfig};
use smart_cli::{execute, verify_replay, CliError};

#[derive(Parser)]
#[command(name = "smart", version, about = "Stochastic monotone aggregated root-finding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated problem instance as JSON.
    Generate {
        #[arg(long, default_value_t = 0, global = true)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long, global = true)]
        out: Option<PathBuf>,
        #[command(subcommand)]
        kind: Generate,
    },
    /// Run a preset on a problem.
    Run(RunArgs),
    /// Step-size bounds for a preset, or one closed-form table row given as JSON.
    Rates {
        /// e.g. '{"name":"saga","l":1,"mu":0.1,"n":10}'
        row: Option<String>,
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 0)]
        tau_p: usize,
        #[arg(long, default_value_t = 0)]
        tau_d: usize,
    },
    /// Run a verification suite.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Describe a preset on a problem, or list presets when no target is given.
    Describe {
        #[command(flatten)]
        target: Target,
    },
    /// Re-run a recorded run from its output directory and compare the final iterate.
    VerifyReplay {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Target {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    problem: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ParamArgs {
    /// SVRG epoch length.
    #[arg(long)]
    epoch: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
}

impl ParamArgs {
    fn params(&self) -> PresetParams {
        let d = PresetParams::default();
        PresetParams {
            tau: self.epoch.unwrap_or(d.tau),
            gamma: self.gamma.or(d.gamma),
            batch: self.batch.unwrap_or(d.batch),
            neighbors: self.neighbors.unwrap_or(d.neighbors),
            delta: self.delta.unwrap_or(d.delta),
        }
    }
}

#[derive(Subcommand)]
enum Generate {
    Ridge {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0.1)]
        ridge: f64,
    },
    Lasso {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0.05)]
        l1: f64,
    },
    Logistic {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0.1)]
        ridge: f64,
    },
    LinearSystem {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
    },
    Feasibility {
        #[arg(long)]
        sets: usize,
        #[arg(long)]
        dim: usize,
        /// Ask for an empty intersection (refused).
        #[arg(long)]
        empty: bool,
    },
    EqualityQp {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        constraints: usize,
        #[arg(long, default_value_t = 0.1)]
        ridge: f64,
    },
    Fused {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0.3)]
        weight: f64,
    },
}

impl Generate {
    fn spec(&self) -> ProblemSpec {
        match *self {
            Generate::Ridge { rows, cols, ridge } => ProblemSpec::Ridge { rows, cols, ridge },
            Generate::Lasso { rows, cols, l1 } => ProblemSpec::Lasso { rows, cols, l1 },
            Generate::Logistic { rows, cols, ridge } => ProblemSpec::Logistic { rows, cols, ridge },
            Generate::LinearSystem { rows, cols } => ProblemSpec::LinearSystem { rows, cols },
            Generate::Feasibility { sets, dim, empty } => ProblemSpec::Feasibility { sets, dim, empty },
            Generate::EqualityQp { rows, cols, constraints, ridge } => {
                ProblemSpec::EqualityQp { rows, cols, constraints, ridge }
            }
            Generate::Fused { dim, weight } => ProblemSpec::Fused { dim, weight },
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Load the whole configuration from JSON; other run flags are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    preset: Option<String>,
    /// Problem JSON written by `generate`.
    #[arg(long, required_unless_present = "config")]
    problem: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    iters: u64,
    #[arg(long)]
    stop_resid: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Sync)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    tau_p: usize,
    #[arg(long, default_value_t = 0)]
    tau_d: usize,
    /// Delay pattern in delay mode: constant, cyclic or uniform.
    #[arg(long, default_value = "constant", value_parser = parse_delay_mode)]
    delay_mode: DelayMode,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Constant step size; the preset default otherwise.
    #[arg(long)]
    lambda: Option<f64>,
    /// Trace sampling period; 0 picks about 200 rows.
    #[arg(long, default_value_t = 0)]
    stride: u64,
    #[arg(long, default_value = "smart-out")]
    out: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

fn parse_delay_mode(s: &str) -> Result<DelayMode, String> {
    match s {
        "zero" => Ok(DelayMode::Zero),
        "constant" => Ok(DelayMode::ConstantMax),
        "cyclic" => Ok(DelayMode::Cyclic),
        "uniform" => Ok(DelayMode::UniformRandom),
        _ => Err(format!("unknown delay mode {s}; expected zero, constant, cyclic or uniform")),
    }
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, CliError> {
        if let Some(path) = &self.config {
            return RunConfig::load(path);
        }
        let problem = self.problem.clone().expect("required by clap");
        let problem = std::fs::canonicalize(&problem).map_err(|e| CliError::Config(format!("{}: {e}", problem.display())))?;
        Ok(RunConfig {
            preset: self.preset.clone().expect("required by clap"),
            params: self.params.params(),
            problem: ProblemSource::File { path: problem },
            seed: self.seed,
            iters: self.iters,
            stop_resid: self.stop_resid,
            lambda: self.lambda,
            stride: self.stride,
            schedule: ScheduleConfig {
                mode: self.mode,
                tau_p: self.tau_p,
                tau_d: self.tau_d,
                delay_mode: self.delay_mode,
                workers: self.workers,
            },
            out: self.out.clone(),
        })
    }
}

fn print(v: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn target_bundle(t: &Target) -> Result<Option<smart::presets::PresetBundle>, CliError> {
    match (&t.preset, &t.problem) {
        (Some(preset), Some(path)) => {
            let problem = ProblemSource::File { path: path.clone() }.load()?;
            Ok(Some(problem.bundle(preset, &t.params.params())?))
        }
        (None, None) => Ok(None),
        _ => Err(CliError::Config("--preset and --problem go together".into())),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { seed, out, kind } => {
            let problem = kind.spec().generate(seed)?;
            let text = serde_json::to_string_pretty(&problem)?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print(&problem)?,
            }
            Ok(())
        }
        Command::Run(args) => {
            let summary = execute(&args.config()?)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            print(&summary)
        }
        Command::Rates { row, target, tau_p, tau_d } => match (row, target_bundle(&target)?) {
            (Some(text), None) => {
                let row: RateTable = serde_json::from_str(&text)?;
                print(&json!({ "row": row, "values": row.evaluate()? }))
            }
            (None, Some(b)) => {
                let weak = weak_bound_constant(&b.family, &b.law, tau_p, tau_d)?;
                let linear = match b.family.mu() {
                    Some(mu) if mu > 0.0 => {
                        let plan = RatePlan::default_for(&b.law, &b.graph)?;
                        let lb = linear_bound(&b.family, &b.law, &b.graph, tau_p, tau_d, tau_p, plan)?;
                        Some(json!({ "lambda": lb.lambda, "factor": lb.per_iteration(), "eta": plan.eta, "alpha": plan.alpha }))
                    }
                    _ => None,
                };
                print(&json!({ "preset": b.name, "tau_p": tau_p, "tau_d": tau_d, "weak_bound": weak, "linear_bound": linear }))
            }
            _ => Err(CliError::Config("give either a table row or --preset with --problem".into())),
        },
        Command::Verify { suite, seed } => {
            let suite: Suite = suite.parse()?;
            let report = run_suite(suite, seed)?;
            if report.passed {
                print(&report)
            } else {
                Err(CliError::Verification(serde_json::to_value(&report)?))
            }
        }
        Command::Describe { target } => match target_bundle(&target)? {
            Some(b) => print(&b.describe()),
            None => print(&json!({
                "presets": PRESETS,
                "problems": ["ridge", "lasso", "logistic", "linear-system", "feasibility", "equality-qp", "fused"],
                "table_rows": RateTable::NAMES,
                "suites": Suite::ALL,
            })),
        },
        Command::VerifyReplay { out } => {
            let report = verify_replay(&out)?;
            if report.passed {
                print(&report)
            } else {
                Err(CliError::Verification(serde_json::to_value(&report)?))
            }
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Verification(report) = &e {
                let _ = print(report);
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
