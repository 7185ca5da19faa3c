//! Key-value config files.
//!
//! One `key = value` per line; `#` starts a comment; blank lines are ignored.
//! Keys are long flag names of the chosen subcommand (or global flags).
//! Boolean flags take `true`/`false`; list flags take comma-separated values.
//! The file is expanded into flags placed before the user's own flags, so
//! anything given on the command line wins.

use std::path::Path;

use clap::{ArgAction, Command};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>, CliError> {
    let mut out: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split_once('#').map_or(raw, |(c, _)| c).trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| CliError::config(line, format!("expected `key = value`, found {content:?}")))?;
        let key = key.trim().trim_start_matches("--").to_string();
        if key.is_empty() {
            return Err(CliError::config(line, "empty key"));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(CliError::config(line, format!("duplicate key {key:?}")));
        }
        out.push(Entry { line, key, value: value.trim().to_string() });
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<Entry>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text)
}

/// Flags equivalent to `entries` for subcommand `sub`, validated against its schema.
pub fn to_flags(entries: &[Entry], root: &Command, sub: &str) -> Result<Vec<String>, CliError> {
    let sub_cmd = root
        .find_subcommand(sub)
        .ok_or_else(|| CliError::Usage(format!("unknown subcommand {sub:?}")))?;
    let mut flags = Vec::new();
    for e in entries {
        if e.key == "config" {
            return Err(CliError::config(e.line, "config files cannot include other config files"));
        }
        let arg = sub_cmd
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(e.key.as_str()) || a.get_all_aliases().is_some_and(|al| al.contains(&e.key.as_str())))
            .ok_or_else(|| CliError::config(e.line, format!("unknown key {:?} for `{sub}`", e.key)))?;
        let long = format!("--{}", arg.get_long().expect("config keys map to long flags"));
        match arg.get_action() {
            ArgAction::SetTrue => match e.value.as_str() {
                "true" => flags.push(long),
                "false" => {}
                other => return Err(CliError::config(e.line, format!("{:?} expects true or false, got {other:?}", e.key))),
            },
            _ => {
                if e.value.is_empty() {
                    return Err(CliError::config(e.line, format!("missing value for {:?}", e.key)));
                }
                flags.push(long);
                flags.push(e.value.clone());
            }
        }
    }
    Ok(flags)
}

/// Location of `--config` in raw arguments, if any: (path, index range to drop).
pub fn find_config_arg(args: &[String]) -> Option<(String, std::ops::Range<usize>)> {
    for (i, a) in args.iter().enumerate() {
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return args.get(i + 1).map(|p| (p.clone(), i..i + 2));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some((p.to_string(), i..i + 1));
        }
    }
    None
}

/// Index of the subcommand token, skipping values of value-taking global flags.
pub fn find_subcommand(args: &[String], root: &Command) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if root.find_subcommand(a).is_some() {
            return Some(i);
        }
        if let Some(long) = a.strip_prefix("--") {
            let takes_value = root
                .get_arguments()
                .find(|x| x.get_long() == Some(long))
                .is_some_and(|x| x.get_action().takes_values());
            if takes_value {
                i += 1;
            }
        }
        i += 1;
    }
    None
}

/// Raw arguments with the config file (if any) expanded in place.
pub fn expand_args(mut args: Vec<String>, root: &Command) -> Result<Vec<String>, CliError> {
    let Some((path, range)) = find_config_arg(&args) else {
        return Ok(args);
    };
    args.drain(range);
    let entries = load(Path::new(&path))?;
    let Some(pos) = find_subcommand(&args, root) else {
        return Ok(args);
    };
    let flags = to_flags(&entries, root, &args[pos].clone())?;
    args.splice(pos + 1..pos + 1, flags);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_garbage() {
        let e = parse("# header\nscenario = merge  # trailing\n\nwindows=6,12\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[1].line, e[1].key.as_str(), e[1].value.as_str()), (4, "windows", "6,12"));
        let err = parse("a = 1\nnot a pair\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: 2, .. }));
        assert!(matches!(parse("a = 1\na = 2\n").unwrap_err(), CliError::Config { line: 2, .. }));
    }

    #[test]
    fn finds_config_anywhere() {
        let args: Vec<String> = ["ncpd", "detect", "--config=x.cfg", "--L", "6"].iter().map(|s| s.to_string()).collect();
        assert_eq!(find_config_arg(&args), Some(("x.cfg".into(), 2..3)));
        let args: Vec<String> = ["ncpd", "--config", "y", "train"].iter().map(|s| s.to_string()).collect();
        assert_eq!(find_config_arg(&args), Some(("y".into(), 1..3)));
    }
}
