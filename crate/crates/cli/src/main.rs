mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{merge_config, parse_axes, Cli, Command, Extra, RunConfig, UsageError};
use commands::Outcome;

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let mut global = cli.global;
    let mut extra = Extra::default();
    match &cli.command {
        Command::SurvivalCurve { tenors, method } => {
            extra.tenors = tenors.clone();
            extra.method = *method;
        }
        Command::Sweep { axes } => extra.axes = axes.clone(),
        _ => {}
    }
    merge_config(&mut global, &mut extra)?;
    let need_model = matches!(cli.command, Command::Price | Command::SurvivalCurve { .. } | Command::Sweep { .. });
    let cfg = RunConfig::build(&global, need_model)?;
    match cli.command {
        Command::Price => commands::price(&cfg),
        Command::SurvivalCurve { .. } => commands::survival_curve(&cfg, extra.tenors, extra.method),
        Command::Validate => commands::validate(&cfg),
        Command::Calibrate { snapshots } => {
            let path = snapshots.ok_or_else(|| UsageError("calibrate needs a snapshot file".into()))?;
            commands::calibrate(&cfg, &path)
        }
        Command::Backtest { snapshots, synthetic } => {
            if snapshots.is_none() && synthetic.is_none() {
                return Err(UsageError("backtest needs a snapshot file or --synthetic N".into()).into());
            }
            commands::run_backtest(&cfg, snapshots.as_deref(), synthetic)
        }
        Command::Sweep { .. } => {
            let axes = parse_axes(&extra.axes)?;
            commands::run_sweep(&cfg, &axes)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("qcds: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            let code = if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 };
            eprintln!("qcds: {e:#}");
            ExitCode::from(code)
        }
    }
}
