//! Plain-text `key=value` files: one pair per line, `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key-value table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, got {raw:?}", no + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", no + 1)));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(KvMap { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parses `key` if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Parse(format!("{key}={v}: {e}"))))
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parsed(key)?
            .ok_or_else(|| Error::Parse(format!("missing key {key}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Copies every pair of `other` over this table.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in other.iter() {
            self.entries.insert(k.to_string(), v.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn emit(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Comma-separated list of values.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|e| Error::Parse(format!("list element {p:?}: {e}")))
        })
        .collect()
}

pub fn join_list<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_emit_round_trip() {
        let kv = KvMap::parse("# header\nb = 2\na=x=y  # trailing\n\n").unwrap();
        assert_eq!(kv.get("a"), Some("x=y"));
        assert_eq!(kv.require::<u32>("b").unwrap(), 2);
        assert_eq!(KvMap::parse(&kv.emit()).unwrap(), kv);
        assert!(KvMap::parse("novalue").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert_eq!(join_list(&[4, 5]), "4,5");
        assert!(parse_list::<usize>("1,x").is_err());
    }
}
