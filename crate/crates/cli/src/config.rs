//! Optional JSON config merged under explicit flags.
//!
//! Config entries become flags placed right after the subcommand name. Every
//! subcommand lets a repeated flag override the earlier one, so flags typed on
//! the command line win.

use std::ffi::OsString;
use std::fs;

use serde_json::Value;

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

fn scalar(key: &str, v: &Value) -> Result<Option<String>, String> {
    match v {
        Value::String(s) => Ok(Some(s.clone())),
        Value::Number(n) => Ok(Some(n.to_string())),
        Value::Array(items) => {
            let parts: Result<Vec<String>, String> = items
                .iter()
                .map(|x| scalar(key, x)?.ok_or_else(|| format!("config key `{key}`: nested value")))
                .collect();
            Ok(Some(parts?.join(",")))
        }
        _ => Err(format!("config key `{key}`: unsupported value {v}")),
    }
}

/// Position of the subcommand; the only global flag taking a value is `--config`.
fn subcommand_index(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy();
        if s == "--config" {
            i += 2;
        } else if s.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

/// Returns `argv` with config-derived flags inserted after the subcommand.
pub fn merge(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| format!("config {} is not valid JSON: {e}", path.to_string_lossy()))?;
    let Value::Object(map) = value else {
        return Err("config must be a JSON object".into());
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (key, v) in &map {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Bool(true) => extra.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            other => {
                if let Some(s) = scalar(key, other)? {
                    extra.push(flag.into());
                    extra.push(s.into());
                }
            }
        }
    }
    let Some(sub) = subcommand_index(&argv) else {
        return Ok(argv);
    };
    let mut out = argv[..=sub].to_vec();
    out.extend(extra);
    out.extend(argv[sub + 1..].iter().cloned());
    Ok(out)
}
