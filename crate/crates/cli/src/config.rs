//! Flag files: a JSON object whose keys are long flag names.
//!
//! The object is expanded into `--key value` arguments placed right after
//! the subcommand, so anything given on the command line wins.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

/// Subcommands whose `--config` is a flag file (for `simulate` it is the
/// simulation config itself).
const FLAG_FILE_COMMANDS: &[&str] = &[
    "cluster",
    "fit",
    "evaluate",
    "motifs",
    "motif-compare",
    "select-k",
];

/// Returns `args` with the flags of any `--config` file spliced in.
pub fn expand(args: Vec<String>) -> Result<Vec<String>> {
    let Some(cmd_pos) = args
        .iter()
        .skip(1)
        .position(|a| FLAG_FILE_COMMANDS.contains(&a.as_str()))
    else {
        return Ok(args);
    };
    let cmd_pos = cmd_pos + 1;
    let Some(path) = config_path(&args[cmd_pos + 1..]) else {
        return Ok(args);
    };
    let flags = read_flags(Path::new(&path))?;
    let mut out = args[..=cmd_pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[cmd_pos + 1..]);
    Ok(out)
}

fn config_path(rest: &[String]) -> Option<String> {
    let mut it = rest.iter();
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_owned());
        }
    }
    None
}

fn read_flags(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("{}: cannot read config", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", path.display()))?;
    let Value::Object(map) = value else {
        bail!("{}: config must be a JSON object", path.display());
    };
    let mut flags = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            bail!(
                "{}: a config file cannot name another config",
                path.display()
            );
        }
        match value {
            Value::Bool(true) => flags.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                flags.push(flag);
                flags.push(parts.join(","));
            }
            other => {
                flags.push(flag);
                flags.push(scalar(&other)?);
            }
        }
    }
    Ok(flags)
}

fn scalar(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => bail!("unsupported config value {other}"),
    }
}
