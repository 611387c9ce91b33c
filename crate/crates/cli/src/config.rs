//! Flat `key = value` parameter files and their merge with command-line
//! flags.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::{CliError, CliResult};

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// ignored; keys may be dotted (`backward.est`). Duplicate keys are an error.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Argument(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(CliError::Argument(format!(
                "config line {}: invalid key {key:?}",
                i + 1
            )));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(CliError::Argument(format!(
                "config line {}: duplicate key {key:?}",
                i + 1
            )));
        }
    }
    Ok(map)
}

/// Merges flags over config-file values and tracks which file keys a
/// subcommand understood.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    known: BTreeSet<String>,
}

impl Resolver {
    pub fn from_text(text: &str) -> CliResult<Self> {
        Ok(Self {
            file: parse_config(text)?,
            known: BTreeSet::new(),
        })
    }

    /// Flag if given, else the file value, else `None`.
    pub fn opt<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        self.known.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(text) => text
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Argument(format!("config key {key}: cannot parse {text:?}"))),
            None => Ok(None),
        }
    }

    pub fn value<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    /// Boolean switch: set on the command line, or `true`/`false` in the file.
    pub fn flag(&mut self, key: &str, set: bool) -> CliResult<bool> {
        Ok(self.opt(key, set.then_some(true))?.unwrap_or(false))
    }

    /// Rejects file keys that no parameter of the subcommand consumed.
    pub fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.known.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Argument(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )))
        }
    }
}
