//! Flat `key = value` config files merged into the argument list.

use std::path::Path;

use clap::{ArgAction, CommandFactory};

use crate::cli::Cli;
use crate::error::{CliError, CliResult};

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; keys use the long flag names without the leading dashes.
pub fn parse(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(CliError::validation(format!("config line {}: empty key", n + 1)));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(CliError::validation(format!("config line {}: duplicate key {key}", n + 1)));
        }
        out.push((key, value));
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    let mut found = None;
    while let Some(a) = it.next() {
        if a == "--config" {
            found = it.next().cloned();
        } else if let Some(v) = a.strip_prefix("--config=") {
            found = Some(v.to_string());
        }
    }
    found
}

/// Inserts flags from the `--config` file right after the subcommand so that
/// explicit flags, which come later, override them.
pub fn expand(argv: Vec<String>) -> CliResult<Vec<String>> {
    let Some(sub) = argv.get(1).filter(|s| !s.starts_with('-')).cloned() else {
        return Ok(argv);
    };
    let Some(path) = config_path(&argv[2..]) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::validation(format!("config file {path}: {e}")))?;
    let entries = parse(&text)?;
    let root = Cli::command();
    let Some(cmd) = root.find_subcommand(&sub) else {
        return Ok(argv);
    };
    let mut injected = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err(CliError::validation("config files cannot include other config files"));
        }
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::validation(format!("config key {key} is not a flag of {sub}")))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => injected.push(format!("--{key}")),
                "false" => {}
                _ => return Err(CliError::validation(format!("config key {key} expects true or false"))),
            }
        } else {
            injected.push(format!("--{key}"));
            injected.push(value);
        }
    }
    let mut out = Vec::with_capacity(argv.len() + injected.len());
    out.extend(argv[..2].iter().cloned());
    out.extend(injected);
    out.extend(argv[2..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let e = parse("# run\nsteps = 10\n\nkl_weight=0.1\nout = \"runs/a\"\n").unwrap();
        assert_eq!(
            e,
            vec![
                ("steps".to_string(), "10".to_string()),
                ("kl-weight".to_string(), "0.1".to_string()),
                ("out".to_string(), "runs/a".to_string()),
            ]
        );
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse("steps 10").is_err());
        assert!(parse("a = 1\na = 2").is_err());
        assert!(parse(" = 2").is_err());
    }

    #[test]
    fn explicit_flags_come_after_config_flags() {
        let dir = std::env::temp_dir().join(format!("chive-settings-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "steps = 10\ntoy = true\nverbose = false\n").unwrap();
        let argv: Vec<String> = ["chive", "train", "--steps", "3", "--config", path.to_str().unwrap()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand(argv).unwrap();
        assert_eq!(&out[..5], &["chive", "train", "--steps", "10", "--toy"]);
        assert_eq!(&out[5..7], &["--steps", "3"]);
        std::fs::write(&path, "bogus = 1\n").unwrap();
        let argv: Vec<String> = ["chive", "train", "--config", path.to_str().unwrap()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(expand(argv).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
