//! Config-file overlay. A file of `key = value` lines or a flat JSON object
//! is turned into extra command-line flags for every key the command line
//! does not already set, so explicit flags always win.

use std::fs;
use std::path::Path;

use clap::CommandFactory;

use crate::cli::Cli;
use crate::error::{Error, Result};

/// Pull `--config <path>` out of `argv` and splice the file's settings in
/// as flags. Returns the resolved argument list (program name first).
pub fn apply_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut args = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let path = it
                .next()
                .ok_or_else(|| Error::Usage("--config needs a file path".into()))?;
            config = Some(path);
        } else if let Some(path) = a.strip_prefix("--config=") {
            config = Some(path.to_string());
        } else {
            args.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(args);
    };
    let pairs = read_config(Path::new(&path))?;
    let Some(sub_name) = args.get(1).cloned() else {
        return Err(Error::Usage("--config given without a command".into()));
    };
    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(&sub_name)
        .ok_or_else(|| Error::Usage(format!("unknown command '{sub_name}'")))?;
    for (key, value) in pairs {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::Usage(format!("{path}: '{key}' is not an option of '{sub_name}'")))?;
        let flag = format!("--{key}");
        let eq = format!("{flag}=");
        if args.iter().any(|a| *a == flag || a.starts_with(&eq)) {
            continue;
        }
        if arg.get_action().takes_values() {
            args.push(flag);
            args.push(value);
        } else {
            match value.as_str() {
                "true" => args.push(flag),
                "false" => {}
                other => {
                    return Err(Error::Usage(format!(
                        "{path}: switch '{key}' takes true or false, got '{other}'"
                    )))
                }
            }
        }
    }
    Ok(args)
}

/// Settings in file order, keys normalized to flag spelling.
fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut out = Vec::new();
    if text.trim_start().starts_with('{') {
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        for (k, v) in map {
            out.push((normalize(&k), json_value(&v).map_err(|m| parse_err(format!("{k}: {m}")))?));
        }
        return Ok(out);
    }
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("line {}: expected key = value", i + 1)))?;
        let v = v.trim().trim_matches('"');
        out.push((normalize(k.trim()), v.to_string()));
    }
    Ok(out)
}

fn normalize(key: &str) -> String {
    key.trim_start_matches("--").replace('_', "-")
}

fn json_value(v: &serde_json::Value) -> std::result::Result<String, String> {
    use serde_json::Value;
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => {
            let parts: std::result::Result<Vec<String>, String> = items.iter().map(json_value).collect();
            Ok(parts?.join(","))
        }
        other => Err(format!("unsupported value {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn flags_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "# flops\nk = 4\nexpert_gflops = 308\nrouter-gflops = 26\ntable1 = true\n").unwrap();
        let out = apply_config(argv(&format!("dfm flops --k 8 --config {}", cfg.display()))).unwrap();
        assert_eq!(
            out,
            argv("dfm flops --k 8 --expert-gflops 308 --router-gflops 26 --table1")
        );
    }

    #[test]
    fn json_files_work_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        fs::write(&cfg, r#"{"seeds": [0, 1, 2], "analytical": false}"#).unwrap();
        let out = apply_config(argv(&format!("dfm eval --config={}", cfg.display()))).unwrap();
        assert_eq!(out, argv("dfm eval --seeds 0,1,2"));
        fs::write(&cfg, r#"{"no_such_flag": 1}"#).unwrap();
        let err = apply_config(argv(&format!("dfm eval --config {}", cfg.display()))).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
