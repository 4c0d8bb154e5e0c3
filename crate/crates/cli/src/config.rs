//! `key = value` config files, merged under command-line flags.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got {raw:?}", n + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", n + 1);
        }
        out.push((key, v.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text).with_context(|| format!("in config {}", path.display()))
}

/// Appends config entries as flags for every argument the command line left
/// unset. Entries are resolved against the chosen subcommand first, then the
/// top-level command, so global and per-command keys both work.
pub fn merge(cmd: &Command, matches: &ArgMatches, mut args: Vec<OsString>, entries: &[(String, String)]) -> Result<Vec<OsString>> {
    let sub = matches
        .subcommand()
        .and_then(|(name, m)| cmd.find_subcommand(name).map(|c| (c, m)));
    for (key, value) in entries {
        let found = sub
            .and_then(|(c, m)| c.get_arguments().find(|a| a.get_long() == Some(key)).map(|a| (a, m)))
            .or_else(|| cmd.get_arguments().find(|a| a.get_long() == Some(key)).map(|a| (a, matches)));
        let Some((arg, m)) = found else {
            bail!("config key {key:?} is not a flag of this command");
        };
        let from_cli = m.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine);
        if from_cli {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => args.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                other => bail!("config key {key:?}: expected a boolean, got {other:?}"),
            },
            _ => {
                args.push(format!("--{key}").into());
                args.push(value.into());
            }
        }
    }
    Ok(args)
}
