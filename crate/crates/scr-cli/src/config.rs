//! Plain-text key=value config files and flag merging.
//!
//! A config file supplies defaults for a subcommand's long flags (same key
//! names, without the leading dashes); flags always win. Unknown keys are
//! rejected by name, and `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::Usage(format!(
                "config file not found: {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected key=value, got '{raw}'",
                    path.display(),
                    lineno + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    /// Flag value if present (consuming any file entry), else the parsed
    /// file entry, else `None`.
    pub fn merge<T>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let file_value = self.values.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match file_value {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key '{key}': {e}"))),
            None => Ok(None),
        }
    }

    /// Boolean flags: flag presence forces `true`; otherwise the file entry
    /// decides; otherwise `false`.
    pub fn merge_bool(&mut self, flag: bool, key: &str) -> Result<bool, CliError> {
        let file_value = self.values.remove(key);
        if flag {
            return Ok(true);
        }
        match file_value {
            Some(raw) => match raw.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(CliError::Usage(format!(
                    "config key '{key}': expected a boolean, got '{other}'"
                ))),
            },
            None => Ok(false),
        }
    }

    /// Fail if any keys were never consumed — catches typos early.
    pub fn finish(self) -> Result<(), CliError> {
        if self.values.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.values.keys().map(String::as_str).collect();
            Err(CliError::Usage(format!(
                "unknown config key(s): {}",
                keys.join(", ")
            )))
        }
    }
}

pub fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required --{flag} (or config key '{flag}')")))
}

/// Parse a comma-separated list, accepting scientific notation for sizes
/// (`1e6` reads as 1000000).
pub fn parse_sizes(raw: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            if let Ok(v) = s.parse::<usize>() {
                return Ok(v);
            }
            match s.parse::<f64>() {
                Ok(v) if v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64 => Ok(v as usize),
                _ => Err(CliError::Usage(format!("bad size '{s}'"))),
            }
        })
        .collect()
}
