//! Flat `key = value` experiment configuration. Every lookup records the value it
//! resolved to, default or not, so a run can echo its full configuration; keys that
//! were supplied but never looked up are rejected.

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    /// Lines `key = value`; `#` starts a comment; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if c.values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", no + 1)));
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets or overrides a key (command-line flags take precedence over the file).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// `KEY=VALUE` form used by `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got '{pair}'")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    pub fn get<T: FromStr + Display>(&self, key: &str, default: T) -> Result<T> {
        let v = match self.values.get(key) {
            None => default,
            Some(s) => s.parse().map_err(|_| Error::Config(format!("key '{key}': cannot parse '{s}'")))?,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr + Display + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>> {
        let v = match self.values.get(key) {
            None => default.to_vec(),
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("key '{key}': cannot parse '{p}'"))))
                .collect::<Result<Vec<T>>>()?,
        };
        if v.is_empty() {
            return Err(Error::Config(format!("key '{key}': empty list")));
        }
        self.record(key, v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    /// Errors on any supplied key that no lookup consumed.
    pub fn finish(&self) -> Result<()> {
        let known = self.resolved.borrow();
        let unknown: Vec<&str> = self.values.keys().filter(|k| !known.contains_key(*k)).map(String::as_str).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = known.keys().map(String::as_str).collect();
            Err(Error::Config(format!("unknown keys {unknown:?}; accepted keys: {}", keys.join(", "))))
        }
    }

    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_defaults_and_unknown_keys() {
        let c = Config::parse("# comment\nn = 10, 20\n tau_h=0.05 # inline\n\nvariant = distributed\n").unwrap();
        assert_eq!(c.get_list::<usize>("n", &[1]).unwrap(), vec![10, 20]);
        assert_eq!(c.get("tau_h", 0.1).unwrap(), 0.05);
        assert_eq!(c.get("samples", 20usize).unwrap(), 20);
        assert!(c.finish().is_err());
        assert_eq!(c.get("variant", String::from("boundary")).unwrap(), "distributed");
        c.finish().unwrap();
        let r = c.resolved();
        assert_eq!(r["samples"], "20");
        assert_eq!(r["n"], "10,20");
    }

    #[test]
    fn malformed_input() {
        assert!(Config::parse("n 10").is_err());
        assert!(Config::parse("n = 1\nn = 2").is_err());
        let c = Config::parse("n = ten").unwrap();
        assert!(c.get("n", 1usize).is_err());
        let mut c = Config::new();
        c.set_pair("samples=5").unwrap();
        assert!(c.set_pair("samples").is_err());
        assert_eq!(c.get("samples", 1usize).unwrap(), 5);
    }
}
