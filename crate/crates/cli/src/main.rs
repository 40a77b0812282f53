//! Command-line front end: every command writes CSV tables and a
//! `manifest.json` that replays it with `--manifest`.

mod commands;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser};

use commands::{CmdError, Command, Context, Status};

const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "memcurse",
    version,
    about = "Signal propagation and loss landscapes of linear recurrent networks"
)]
struct Cli {
    /// Directory for the CSV tables and the manifest.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Root seed of every random stream.
    #[arg(long, global = true, env = "MEMCURSE_SEED", default_value_t = 0)]
    seed: u64,
    /// Replays the command recorded in a manifest and checks its outputs.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// JSON object of subcommand flag values; flags given on the command
    /// line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

/// Overlays `config` values onto every subcommand flag not set on the command line.
fn apply_config(command: Command, sub: &ArgMatches, config: &Path) -> Result<Command, String> {
    let text = std::fs::read_to_string(config).map_err(|e| format!("cannot read config {}: {e}", config.display()))?;
    let file: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("malformed config {}: {e}", config.display()))?;
    let Some(file) = file.as_object() else {
        return Err("config must be a JSON object".into());
    };
    let mut value = serde_json::to_value(&command).map_err(|e| e.to_string())?;
    let fields = value.as_object_mut().expect("commands serialize as objects");
    for (key, v) in file {
        if key == "name" || !fields.contains_key(key) {
            return Err(format!("unknown config key '{key}'"));
        }
        if sub.value_source(key) != Some(ValueSource::CommandLine) {
            fields.insert(key.clone(), v.clone());
        }
    }
    serde_json::from_value(value).map_err(|e| format!("invalid config value: {e}"))
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let (command, root_seed, expected) = match (&cli.manifest, cli.command) {
        (Some(_), Some(_)) => {
            return fail(
                EXIT_USAGE,
                "--manifest replays a recorded command; do not give a subcommand",
            )
        }
        (None, None) => return fail(EXIT_USAGE, "a subcommand or --manifest is required (see --help)"),
        (Some(path), None) => match output::read_manifest(path) {
            Ok(m) => (m.command, m.root_seed, Some(m.outputs)),
            Err(e) => return fail(EXIT_USAGE, &e),
        },
        (None, Some(command)) => {
            let command = match (&cli.config, matches.subcommand()) {
                (Some(config), Some((_, sub))) => match apply_config(command, sub, config) {
                    Ok(c) => c,
                    Err(e) => return fail(EXIT_USAGE, &e),
                },
                _ => command,
            };
            (command, cli.seed, None)
        }
    };
    let ctx = Context {
        root_seed,
        jobs: cli.jobs.max(1),
    };
    let (tables, status) = match commands::run(&command, &ctx) {
        Ok(r) => r,
        Err(CmdError::Usage(m)) => return fail(EXIT_USAGE, &m),
        Err(CmdError::Numeric(m)) => return fail(EXIT_DIVERGED, &m),
        Err(CmdError::Other(m)) => return fail(EXIT_OTHER, &m),
    };
    let manifest = match output::commit(&cli.out, &command, root_seed, tables) {
        Ok(m) => m,
        Err(e) => {
            return fail(
                EXIT_OTHER,
                &format!("cannot write outputs to {}: {e}", cli.out.display()),
            )
        }
    };
    for f in &manifest.outputs {
        println!("{}  {}", f.sha256, cli.out.join(&f.file).display());
    }
    if let Some(expected) = expected {
        if expected != manifest.outputs {
            return fail(EXIT_VALIDATION, "replayed outputs differ from the manifest");
        }
    }
    match status {
        Status::Ok => ExitCode::SUCCESS,
        Status::Diverged(m) => fail(EXIT_DIVERGED, &m),
        Status::Failed(m) => fail(EXIT_VALIDATION, &m),
    }
}
