//! `key = value` configuration files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value ws* comment?
//! key     := [A-Za-z0-9_]+
//! value   := item (',' item)*
//! ```
//!
//! Items are trimmed. Duplicate keys are an error; later `--set` overrides
//! replace file entries. Every key must be consumed, so typos surface as
//! usage errors instead of being silently ignored.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                return Err(Error::parse(line_no, format!("invalid key `{k}`")));
            }
            if v.is_empty() {
                return Err(Error::parse(line_no, format!("empty value for `{k}`")));
            }
            if cfg.entries.insert(k.to_string(), (line_no, v.to_string())).is_some() {
                return Err(Error::parse(line_no, format!("duplicate key `{k}`")));
            }
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override (line number 0 in errors).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{assignment}` is not key=value")))?;
        let (k, v) = (k.trim(), v.trim());
        if !valid_key(k) || v.is_empty() {
            return Err(Error::invalid(format!("malformed override `{assignment}`")));
        }
        self.entries.insert(k.to_string(), (0, v.to_string()));
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        let e = self.entries.get(key);
        if e.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        e
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(*line, format!("cannot parse `{v}` for `{key}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    s.parse()
                        .map_err(|_| Error::parse(*line, format!("cannot parse list item `{s}` for `{key}`")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Errors if any entry was never read.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }

    /// Entries in key order, for echoing into output headers.
    pub fn summary(&self) -> String {
        self.entries
            .iter()
            .map(|(k, (_, v))| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
