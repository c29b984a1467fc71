//! Config files and flag resolution.
//!
//! A config file is flat `key = value` text, one pair per line, `#` starts a
//! comment. A run manifest is also accepted: its `config` object is read as
//! the key-value pairs. Flags win over the file, the file wins over defaults.

use crate::error::{CliError, CliResult};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

pub const SEED_ENV: &str = "FQM_SEED";
pub const DEFAULT_SEED: u64 = 1;

pub const KNOWN_KEYS: &[&str] = &[
    "lambda",
    "mu",
    "k",
    "gvst",
    "reps",
    "seed",
    "horizon",
    "warmup",
    "initial_inventory",
    "extraction",
    "mu_list",
    "tol",
    "max_iters",
    "lambda_lower",
    "lambda_upper",
    "mu_lower",
    "mu_upper",
    "method",
    "min_ratio",
    "utc_offset",
    "schema",
    "start",
    "window_hours",
    "days",
    "grid_size",
    "bbox",
    "units",
    "window_start",
    "window_end",
    "n_d",
    "n_p",
    "bootstrap",
    "fit",
    "axis",
    "values",
];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let values = if text.trim_start().starts_with('{') {
            parse_manifest(text)?
        } else {
            parse_pairs(text)?
        };
        for key in values.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(format!("unknown config key '{key}'")));
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

fn parse_pairs(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::usage(format!("config line {}: expected key = value", n + 1)));
        };
        let key = k.trim().replace('-', "_");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::usage(format!("config line {}: duplicate key '{key}'", n + 1)));
        }
    }
    Ok(out)
}

fn parse_manifest(text: &str) -> CliResult<BTreeMap<String, String>> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::usage(format!("bad manifest config: {e}")))?;
    let obj = v
        .get("config")
        .and_then(|c| c.as_object())
        .ok_or_else(|| CliError::usage("manifest has no config object"))?;
    obj.iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => Ok((k.clone(), s.clone())),
            other => Ok((k.clone(), other.to_string())),
        })
        .collect()
}

/// Resolves each setting from flag, file or default, and keeps the resolved
/// values for the manifest.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Self {
            file,
            resolved: BTreeMap::new(),
        }
    }

    fn file_value<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| CliError::usage(format!("config key '{key}': {e}")))
            })
            .transpose()
    }

    pub fn value<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// Comma-separated list.
    pub fn list<T: FromStr + Display>(&mut self, key: &str, flag: Option<Vec<T>>) -> CliResult<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(s) => Some(parse_list(s).map_err(|e| CliError::usage(format!("config key '{key}': {e}")))?),
                None => None,
            },
        };
        if let Some(v) = &v {
            let joined: Vec<String> = v.iter().map(ToString::to_string).collect();
            self.resolved.insert(key.to_string(), joined.join(","));
        }
        Ok(v)
    }

    /// Flag, then file, then `FQM_SEED`, then the built-in default.
    pub fn seed(&mut self, flag: Option<u64>) -> CliResult<u64> {
        let fallback = match std::env::var(SEED_ENV) {
            Ok(s) if !s.trim().is_empty() => s
                .trim()
                .parse()
                .map_err(|e| CliError::usage(format!("{SEED_ENV}: {e}")))?,
            _ => DEFAULT_SEED,
        };
        self.value("seed", flag, fallback)
    }

    pub fn into_resolved(self) -> BTreeMap<String, String> {
        self.resolved
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("bad list item '{p}': {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_and_comments() {
        let f = ConfigFile::parse("# base\nmu = 145\nk=20 # capacity\n\ninitial-inventory = 3\n").unwrap();
        assert_eq!(f.get("mu"), Some("145"));
        assert_eq!(f.get("k"), Some("20"));
        assert_eq!(f.get("initial_inventory"), Some("3"));
        assert!(ConfigFile::parse("mu 145").is_err());
        assert!(ConfigFile::parse("colour = red").is_err());
        assert!(ConfigFile::parse("mu = 1\nmu = 2").is_err());
    }

    #[test]
    fn precedence() {
        let f = ConfigFile::parse("mu = 145\nk = 30").unwrap();
        let mut r = Resolver::new(&f);
        assert_eq!(r.value("mu", Some(160.0), 150.0).unwrap(), 160.0);
        assert_eq!(r.value("k", None, 20usize).unwrap(), 30);
        assert_eq!(r.value("lambda", None, 100.0).unwrap(), 100.0);
        let resolved = r.into_resolved();
        assert_eq!(resolved["mu"], "160");
        assert_eq!(resolved["k"], "30");
    }

    #[test]
    fn manifest_config_is_accepted() {
        let f = ConfigFile::parse(r#"{"command":"simulate","config":{"mu":"145","reps":"2"}}"#).unwrap();
        assert_eq!(f.get("mu"), Some("145"));
        assert_eq!(f.get("reps"), Some("2"));
    }
}
