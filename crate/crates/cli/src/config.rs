//! Key-value configuration: plain-text files, presets and flag overrides
//! share one string-keyed bag; flags override file values override preset
//! values override defaults.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub struct CliError(pub String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for CliError {}

impl From<tbm_core::Error> for CliError {
    fn from(e: tbm_core::Error) -> Self {
        CliError(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Ordered key-value bag with layered overrides.
#[derive(Debug, Default, Clone)]
pub struct Bag {
    map: BTreeMap<String, String>,
}

impl Bag {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_file(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError(format!("cannot read config {}: {e}", path.display())))?;
        let mut bag = Bag::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    i + 1
                )));
            };
            bag.set(k.trim(), v.trim().to_string());
        }
        Ok(bag)
    }

    /// Applies `over` on top of `self`.
    pub fn layered(mut self, over: Bag) -> Bag {
        self.map.extend(over.map);
        self
    }

    /// Rejects keys outside the allowed set.
    pub fn check_known(&self, allowed: &[&str]) -> CliResult<()> {
        for k in self.map.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(CliError(format!("unknown key: {k}")));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .ok_or_else(|| CliError(format!("missing required key: {key}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError(format!("invalid value for {key}: `{s}` ({e})"))),
        }
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }
}

pub fn parse_usize_list(key: &str, s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| CliError(format!("invalid value for {key}: `{p}` ({e})")))
        })
        .collect()
}

pub fn parse_f64_list(key: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| CliError(format!("invalid value for {key}: `{p}` ({e})")))
        })
        .collect()
}
