//! Merges `--preset` and `--config` file values into the argument list.
//!
//! File keys are flag names without the leading dashes, so every key is a
//! flag and every flag (except `--config` itself) is a key. Values are
//! spliced in ahead of the user's own flags; clap keeps the last occurrence,
//! giving flags > file > preset > defaults.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use clap::CommandFactory;

use crate::args::{Cli, Preset};

const NOT_KEYS: [&str; 3] = ["config", "help", "version"];

/// Config-file keys accepted by `subcommand`.
pub fn keys_for(subcommand: &str) -> BTreeSet<String> {
    Cli::command()
        .find_subcommand(subcommand)
        .map(|c| {
            c.get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|l| !NOT_KEYS.contains(l))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn all_keys() -> BTreeSet<String> {
    Cli::command()
        .get_subcommands()
        .flat_map(|c| keys_for(c.get_name()))
        .collect()
}

/// Key/value pairs of an INI file in file order; sections are only grouping.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>, String> {
    let ini = ini::Ini::load_from_file(path).map_err(|e| format!("config file {}: {e}", path.display()))?;
    let known = all_keys();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, props) in &ini {
        for (k, v) in props.iter() {
            let key = k.trim().to_string();
            if !known.contains(&key) {
                return Err(format!("config file {}: unknown key '{k}'", path.display()));
            }
            if !seen.insert(key.clone()) {
                return Err(format!("config file {}: key '{k}' set twice", path.display()));
            }
            out.push((key, v.trim().to_string()));
        }
    }
    Ok(out)
}

/// Last value of `--name X` or `--name=X` in `args`.
fn flag_value(args: &[String], name: &str) -> Option<String> {
    let long = format!("--{name}");
    let eq = format!("--{name}=");
    let mut found = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if *a == long {
            found = it.next().cloned();
        } else if let Some(v) = a.strip_prefix(&eq) {
            found = Some(v.to_string());
        }
    }
    found
}

/// The argument list clap should parse.
pub fn expand(raw: Vec<String>) -> Result<Vec<String>, String> {
    let Some(pos) = raw.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1) else {
        return Ok(raw);
    };
    let sub = raw[pos].clone();
    let valid = keys_for(&sub);
    if valid.is_empty() {
        return Ok(raw);
    }
    let user = &raw[pos + 1..];
    if user.iter().any(|a| a == "-h" || a == "--help") {
        return Ok(raw);
    }
    let file = match flag_value(user, "config") {
        Some(path) => read_config(Path::new(&path))?,
        None => Vec::new(),
    };
    let preset = flag_value(user, "preset").or_else(|| file.iter().find(|(k, _)| k == "preset").map(|(_, v)| v.clone()));

    let mut argv = raw[..=pos].to_vec();
    if let Some(name) = preset.filter(|_| valid.contains("preset")) {
        let p = <Preset as clap::ValueEnum>::from_str(&name, true).map_err(|_| format!("unknown preset '{name}'"))?;
        let flags = p.flags();
        for pair in flags.chunks(2) {
            if valid.contains(pair[0].trim_start_matches('-')) {
                argv.extend_from_slice(pair);
            }
        }
    }
    for (k, v) in file {
        if valid.contains(&k) {
            argv.push(format!("--{k}={v}"));
        }
    }
    argv.extend_from_slice(user);
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn preset_then_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        std::fs::write(&path, "[train]\nbatch-size = 8\nepochs = 3\n").unwrap();
        let argv = expand(strs(&["pnet", "train", "--preset", "skin", "--config", path.to_str().unwrap(), "--epochs", "5"]))
            .unwrap();
        let b = argv.iter().position(|a| a == "--batch-size").unwrap();
        let f = argv.iter().position(|a| a == "--batch-size=8").unwrap();
        let e = argv.iter().position(|a| a == "--epochs=3").unwrap();
        let u = argv.iter().position(|a| a == "--epochs").unwrap();
        assert!(b < f && e < u);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ini");
        std::fs::write(&path, "epochz = 3\n").unwrap();
        assert!(read_config(&path).unwrap_err().contains("unknown key 'epochz'"));
        std::fs::write(&path, "epochs = 3\n[model]\nepochs = 4\n").unwrap();
        assert!(read_config(&path).unwrap_err().contains("twice"));
    }

    #[test]
    fn keys_of_other_commands_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        std::fs::write(&path, "epochs = 3\ndilation = 3,8\n").unwrap();
        let argv = expand(strs(&["pnet", "analyze", "--config", path.to_str().unwrap()])).unwrap();
        assert!(argv.contains(&"--dilation=3,8".to_string()));
        assert!(!argv.iter().any(|a| a.starts_with("--epochs")));
    }
}
