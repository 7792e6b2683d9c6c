//! Flag values layered over an optional `key = value` config file. Keys are
//! the long flag names with `-` replaced by `_`.

use std::path::Path;
use std::str::FromStr;

use crate::error::{McdError, Result};
use crate::kv::KeyValues;

#[derive(Clone, Debug, Default)]
pub struct Settings {
    file: KeyValues,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Ok(Self {
            file: match path {
                Some(p) => KeyValues::load(p)?,
                None => KeyValues::new(),
            },
        })
    }

    pub fn file(&self) -> &KeyValues {
        &self.file
    }

    /// The flag if given, else the config value, else `None`.
    pub fn opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.file.parsed(key),
        }
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn req<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.opt(flag, key)?.ok_or_else(|| {
            McdError::InvalidArgument(format!(
                "missing --{} (or `{key}` in the config file)",
                key.replace('_', "-")
            ))
        })
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.file.parsed::<bool>(key)?.unwrap_or(false))
    }
}
