//! `ebm`: command-line front end for training, sampling and checking
//! energy-based models.
//!
//! Exit codes: 0 success, 1 usage, 2 data validation, 3 capacity, 4 check failure.

mod args;
mod check;
mod commands;
mod data;
mod error;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;

use args::{Cli, Command};
use error::CliError;
use manifest::RunManifest;

fn main() {
    std::process::exit(run(std::env::args_os().collect()));
}

fn run(argv: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads(command: &Command) -> Result<(), CliError> {
    if let Some(threads) = command.runtime().and_then(|r| r.threads) {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // A second call within one process (replay) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    if path.is_absolute() {
        Ok(path.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(path))
    }
}

fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let manifest = RunManifest::read(manifest_path)?;
    let out = out.map(absolute).transpose()?;
    let argv = manifest.replay_argv(out.as_deref());
    std::env::set_current_dir(&manifest.cwd)
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest.cwd.display())))?;
    let full: Vec<String> = std::iter::once("ebm".to_string()).chain(argv.iter().cloned()).collect();
    let cli = Cli::try_parse_from(&full).map_err(|e| CliError::Usage(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot record a replay".into()));
    }
    execute(cli.command, argv)
}

fn execute(command: Command, argv: Vec<String>) -> Result<(), CliError> {
    if let Command::Replay(cmd) = &command {
        return replay(&cmd.manifest, cmd.out.as_deref());
    }
    configure_threads(&command)?;
    let started_at = manifest::now();
    let info = match &command {
        Command::Train(cmd) => commands::train(cmd)?,
        Command::PretrainDbn(cmd) => commands::pretrain_dbn(cmd)?,
        Command::FinetuneDbn(cmd) => commands::finetune_dbn(cmd)?,
        Command::Sample(cmd) => commands::sample(cmd)?,
        Command::Encode(cmd) => commands::encode(cmd)?,
        Command::Reconstruct(cmd) => commands::reconstruct(cmd)?,
        Command::OracleCheck(cmd) => commands::oracle_check(cmd)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    let manifest_path = command
        .runtime()
        .and_then(|r| r.manifest.clone())
        .or_else(|| info.outputs.first().map(|out| manifest::default_path(out)));
    if let Some(path) = manifest_path {
        let record = RunManifest {
            command: command.name().into(),
            argv,
            cwd: std::env::current_dir()?,
            config: serde_json::to_value(&command).map_err(|e| CliError::Data(e.to_string()))?,
            seed: info.seed,
            inputs: info.inputs,
            outputs: info.outputs,
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_at,
            finished_at: manifest::now(),
        };
        record.write(&path)?;
    }
    match info.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
