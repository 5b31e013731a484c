//! `--config` files: UTF-8 lines of `key = value`, `#` comments. Each entry
//! becomes a `--key value` flag placed ahead of the command-line flags, so
//! explicit flags override the file.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::Context;

use crate::ConfigError;

/// Parses config file text into `--key value` argument pairs.
pub fn config_args(text: &str) -> Result<Vec<OsString>, ConfigError> {
    let mut args = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("config line {}: expected `key = value`, got {line:?}", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(ConfigError(format!("config line {}: bad key {key:?}", n + 1)));
        }
        if key == "config" {
            return Err(ConfigError(format!("config line {}: config files cannot include others", n + 1)));
        }
        args.push(OsString::from(format!("--{key}")));
        args.push(OsString::from(value));
    }
    Ok(args)
}

/// Rewrites `argv` so that the entries of any `--config FILE` come right after
/// the subcommand (the first argument naming one of `commands`) and before
/// every other flag. The `--config` flag itself is removed.
pub fn expand(argv: Vec<OsString>, commands: &[&str]) -> anyhow::Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config_path = None;
    let mut iter = argv.into_iter();
    let program = iter.next();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            let path = iter
                .next()
                .ok_or_else(|| ConfigError("--config needs a file path".into()))?;
            config_path = Some(path);
        } else if let Some(path) = text.strip_prefix("--config=") {
            config_path = Some(OsString::from(path));
        } else {
            rest.push(arg);
        }
    }
    let mut out: Vec<OsString> = program.into_iter().collect();
    let Some(path) = config_path else {
        out.extend(rest);
        return Ok(out);
    };
    let text = fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config {}", Path::new(&path).display()))?;
    let from_file = config_args(&text)?;
    let split = rest
        .iter()
        .position(|a| commands.contains(&a.to_string_lossy().as_ref()))
        .map_or(rest.len(), |i| i + 1);
    out.extend(rest[..split].iter().cloned());
    out.extend(from_file);
    out.extend(rest[split..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_pairs_and_comments() {
        let args = config_args("# run\nepochs = 3\n\nlearning_rate=0.1\n").unwrap();
        assert_eq!(args, os(&["--epochs", "3", "--learning-rate", "0.1"]));
        assert!(config_args("epochs 3").is_err());
        assert!(config_args("config = other.txt").is_err());
        assert!(config_args("bad key = 1").is_err());
    }

    #[test]
    fn file_entries_precede_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "epochs = 3\n").unwrap();
        let argv = os(&["facegen", "--seed", "2", "train", "--config", path.to_str().unwrap(), "--epochs", "5"]);
        let expanded = expand(argv, &["train"]).unwrap();
        assert_eq!(
            expanded,
            os(&["facegen", "--seed", "2", "train", "--epochs", "3", "--epochs", "5"])
        );
    }
}
