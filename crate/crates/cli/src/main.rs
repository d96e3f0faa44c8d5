mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use commands::{CliError, COMMANDS};
use config::Config;

const USAGE: &str = "usage: lorenz-atlas <subcommand> [--config FILE] [--key value | --key=value]...";

/// Splits `--key value` / `--key=value` flags; `--config` is pulled out.
fn parse_flags(args: &[String]) -> Result<(Option<String>, Vec<(String, String)>), CliError> {
    let mut config = None;
    let mut flags = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            return Err(CliError::Config(format!("unexpected argument '{a}'")));
        };
        let (k, v) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CliError::Config(format!("flag --{body} needs a value")))?;
                (body.to_string(), v.clone())
            }
        };
        if k == "config" {
            config = Some(v);
        } else {
            flags.push((k, v));
        }
    }
    Ok((config, flags))
}

fn real_main(args: &[String]) -> Result<(), CliError> {
    let Some(cmd) = args.first() else {
        return Err(CliError::Config(format!("missing subcommand\n{USAGE}\nsubcommands: {}", COMMANDS.join(", "))));
    };
    let schema = commands::schema(cmd)
        .ok_or_else(|| CliError::Config(format!("unknown subcommand '{cmd}'\nsubcommands: {}", COMMANDS.join(", "))))?;
    let (file, flags) = parse_flags(&args[1..])?;
    let text = match file {
        Some(path) => Some(std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{path}: {e}")))?),
        None => None,
    };
    let env: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with(config::ENV_PREFIX)).collect();
    let cfg = Config::resolve(cmd, &schema, text.as_deref(), &env, &flags)?;
    let body = commands::run(&cfg)?;
    let out = cfg.header() + &body;
    match cfg.raw("out") {
        "-" => std::io::stdout().write_all(out.as_bytes()).map_err(|e| CliError::Numeric(e.into())),
        path => std::fs::write(path, out).map_err(|e| CliError::Numeric(e.into())),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if matches!(args.first().map(String::as_str), Some("-h" | "--help" | "help")) {
        println!("{USAGE}\nsubcommands: {}", COMMANDS.join(", "));
        return ExitCode::SUCCESS;
    }
    match real_main(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lorenz-atlas: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
