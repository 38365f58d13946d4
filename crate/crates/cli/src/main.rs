//! `cavshape`: run cavity shape-optimization scenarios from JSON configs.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use cavshape_core::objective::GradientMode;
use cavshape_core::scenario::{self, OptimizeError, ScenarioConfig};
use cavshape_core::Error;
use clap::{Parser, Subcommand, ValueEnum};

use output::{config_hash, Outputs};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "cavshape", version, about = "Cavity eigenvalue shape optimization with mode tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Swept parameter (0-based).
    #[arg(long, global = true, default_value_t = 0)]
    param: usize,

    /// Sweep samples, or axis samples for `field`.
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// Gradient mode; overrides the config.
    #[arg(long, global = true, value_enum)]
    grad: Option<GradArg>,

    /// Mode tracking; overrides the config.
    #[arg(long, global = true, value_enum)]
    tracking: Option<Switch>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Eigenfrequencies along one parameter (sweep.csv).
    Sweep,
    /// Run the optimizer (result.json, iterations.csv).
    Optimize,
    /// Closed-form derivatives against central differences (derivatives.json).
    CheckDerivatives,
    /// Axis field of the tracked mode at the start point (axis.csv, field.json).
    Field,
    /// Spectrum at the start point (solve.json).
    Solve,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum GradArg {
    ClosedForm,
    Fd,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Switch {
    On,
    Off,
}

const DEFAULT_SWEEP_SAMPLES: usize = 65;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = Cli::parse();
    ExitCode::from(run(&cli))
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

fn load(cli: &Cli) -> Result<(ScenarioConfig, String), Error> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::config("", "--config is required"))?;
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(g) = cli.grad {
        cfg.optimizer.gradient = match g {
            GradArg::ClosedForm => GradientMode::ClosedForm,
            GradArg::Fd => GradientMode::Fd,
        };
    }
    if let Some(t) = cli.tracking {
        cfg.tracking = matches!(t, Switch::On);
    }
    let hash = config_hash(&cfg);
    Ok((cfg, hash))
}

fn out_dir(cli: &Cli, cfg: Option<&ScenarioConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: &Cli) -> u8 {
    let (cfg, hash) = match load(cli) {
        Ok(x) => x,
        Err(e) => {
            let out = Outputs::new(out_dir(cli, None), None);
            return out.fail(&e, exit_code(&e), None);
        }
    };
    let out = Outputs::new(out_dir(cli, Some(&cfg)), Some(hash));
    let result = match cli.command {
        Command::Sweep => sweep(cli, &cfg, &out),
        Command::Optimize => return optimize(&cfg, &out),
        Command::CheckDerivatives => check(&cfg, &out),
        Command::Field => field(cli, &cfg, &out),
        Command::Solve => solve(&cfg, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => out.fail(&e, exit_code(&e), None),
    }
}

fn sweep(cli: &Cli, cfg: &ScenarioConfig, out: &Outputs) -> Result<u8, Error> {
    let samples = cli.samples.unwrap_or(DEFAULT_SWEEP_SAMPLES);
    let table = scenario::sweep(cfg, cli.param, samples)?;
    let path = out.sweep_csv(&table)?;
    eprintln!("wrote {} ({} rows)", path.display(), table.rows.len());
    Ok(0)
}

fn optimize(cfg: &ScenarioConfig, out: &Outputs) -> u8 {
    match scenario::optimize(cfg) {
        Ok(o) => match out.optimize(cfg, &o) {
            Ok(path) => {
                eprintln!(
                    "stop={:?} iterations={} calls={} rel_error={} -> {}",
                    o.run.stop,
                    o.run.iterations,
                    o.run.function_calls,
                    o.relative_error.map_or("n/a".into(), |e| format!("{e:.3e}")),
                    path.display()
                );
                0
            }
            Err(e) => out.fail(&e, exit_code(&e), None),
        },
        Err(OptimizeError::Setup(e)) => out.fail(&e, exit_code(&e), None),
        Err(OptimizeError::Aborted(a)) => out.fail(&a.error, exit_code(&a.error), Some(&a.partial)),
    }
}

fn check(cfg: &ScenarioConfig, out: &Outputs) -> Result<u8, Error> {
    let report = scenario::check_derivatives(cfg)?;
    let path = out.derivatives(&report)?;
    for c in report.checks.iter().filter(|c| !c.pass) {
        eprintln!(
            "FAIL {} parameter {}: relative error {:.3e} > {:.1e}",
            c.quantity, c.parameter, c.rel_error, c.threshold
        );
    }
    eprintln!("wrote {}", path.display());
    Ok(if report.pass { 0 } else { EXIT_CHECK })
}

fn field(cli: &Cli, cfg: &ScenarioConfig, out: &Outputs) -> Result<u8, Error> {
    let report = scenario::field(cfg, &cfg.start.p, cli.samples)?;
    let path = out.field(&report)?;
    if let Some(f) = &report.flatness {
        eprintln!("eta1={:.6} eta2={:.6}", f.eta1, f.eta2);
    }
    eprintln!("wrote {}", path.display());
    Ok(0)
}

fn solve(cfg: &ScenarioConfig, out: &Outputs) -> Result<u8, Error> {
    let report = scenario::solve(cfg, &cfg.start.p)?;
    let path = out.solve(&report)?;
    for m in &report.modes {
        println!("{:>3} {:.16e} {}", m.k, m.f, m.label.as_deref().unwrap_or(""));
    }
    eprintln!("wrote {}", path.display());
    Ok(0)
}
