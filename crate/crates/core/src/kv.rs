//! Flat `key = value` text files, used for configuration, reports and
//! manifests. `#` starts a comment line; keys keep file order.

use std::path::Path;
use std::str::FromStr;

use crate::error::{McdError, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                McdError::format("key-value file", format!("{origin}:{}", n + 1), "expected `key = value`")
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(McdError::format("key-value file", format!("{origin}:{}", n + 1), "empty key"));
            }
            kv.set(k, v.trim());
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| McdError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::ensure_parent(path)?;
        std::fs::write(path, self.to_string()).map_err(|e| McdError::io(path, e))
    }

    /// Inserts or replaces, keeping the original position of an existing key.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| McdError::InvalidArgument(format!("{key} = {v:?}: {e}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl std::fmt::Display for KeyValues {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
