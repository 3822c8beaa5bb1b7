//! Flat `key = value` experiment files.
//!
//! Lines starting with `#` are comments. Vectors are comma separated, matrices
//! separate rows with `;`, and a value of the form `@path` reads a matrix CSV
//! relative to the directory holding the config file.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, msg: impl fmt::Display) -> Self {
        ConfigError { key: key.into(), msg: msg.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.msg)
    }
}

impl std::error::Error for ConfigError {}

pub type CResult<T> = Result<T, ConfigError>;

#[derive(Debug)]
pub struct Config {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
    base: PathBuf,
}

impl Config {
    pub fn empty() -> Self {
        Config { entries: BTreeMap::new(), used: RefCell::default(), base: PathBuf::from(".") }
    }

    pub fn load(path: &Path) -> CResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: PathBuf) -> CResult<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(format!("line {}", i + 1), "expected `key = value`"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::new(format!("line {}", i + 1), "empty key"));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::new(k, "given more than once"));
            }
        }
        Ok(Config { entries, used: RefCell::default(), base })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> CResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.raw(key).map(|v| v.parse::<T>().map_err(|e| ConfigError::new(key, format!("`{v}`: {e}")))).transpose()
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> CResult<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    /// A value out of a fixed set of words.
    pub fn choice<'a>(&self, key: &str, options: &[&'a str], default: &'a str) -> CResult<&'a str> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => options
                .iter()
                .find(|o| **o == v)
                .copied()
                .ok_or_else(|| ConfigError::new(key, format!("`{v}` is not one of {}", options.join(", ")))),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CResult<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|c| c.trim().parse::<T>().map_err(|e| ConfigError::new(key, format!("`{}`: {e}", c.trim()))))
                    .collect()
            })
            .transpose()
    }

    pub fn pair(&self, key: &str, default: [f64; 2]) -> CResult<[f64; 2]> {
        match self.list::<f64>(key)? {
            None => Ok(default),
            Some(v) if v.len() == 2 => Ok([v[0], v[1]]),
            Some(v) => Err(ConfigError::new(key, format!("expected two values, got {}", v.len()))),
        }
    }

    pub fn matrix(&self, key: &str) -> CResult<Option<Vec<Vec<f64>>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        if let Some(p) = v.strip_prefix('@') {
            let path = self.base.join(p.trim());
            return herding::model::read_matrix_csv(&path).map(Some).map_err(|e| ConfigError::new(key, e));
        }
        let rows = v
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|c| c.trim().parse::<f64>().map_err(|e| ConfigError::new(key, format!("`{}`: {e}", c.trim()))))
                    .collect::<CResult<Vec<f64>>>()
            })
            .collect::<CResult<Vec<_>>>()?;
        Ok(Some(rows))
    }

    /// A path resolved against the config directory; it must exist.
    pub fn path(&self, key: &str) -> CResult<Option<PathBuf>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let p = self.base.join(v);
        if !p.exists() {
            return Err(ConfigError::new(key, format!("{} does not exist", p.display())));
        }
        Ok(Some(p))
    }

    pub fn paths(&self, key: &str) -> CResult<Option<Vec<PathBuf>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(';')
            .map(|s| {
                let p = self.base.join(s.trim());
                if p.exists() {
                    Ok(p)
                } else {
                    Err(ConfigError::new(key, format!("{} does not exist", p.display())))
                }
            })
            .collect::<CResult<Vec<_>>>()
            .map(Some)
    }

    /// Rejects keys the subcommand never read.
    pub fn finish(&self) -> CResult<()> {
        let used = self.used.borrow();
        match self.entries.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(ConfigError::new(k.clone(), "unknown key for this subcommand")),
            None => Ok(()),
        }
    }
}
