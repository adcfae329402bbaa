//! Plain-text `key = value` configuration.
//!
//! One entry per line, `#` starts a comment, keys are dotted
//! (`model.hidden_dim`, `train.lr`, `synth.seed`). Each consumer owns one
//! namespace and rejects keys it does not know, reporting the line.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    BadValue { key: String, value: String, line: usize },
    #[error("line {line}: `{key}` set twice")]
    Duplicate { key: String, line: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based source line; 0 for entries set programmatically.
    pub line: usize,
}

impl Entry {
    pub fn parse<F: FromStr>(&self) -> Result<F, ConfigError> {
        self.value.parse().map_err(|_| ConfigError::BadValue {
            key: self.key.clone(),
            value: self.value.clone(),
            line: self.line,
        })
    }

    pub fn unknown(&self) -> ConfigError {
        ConfigError::UnknownKey {
            key: self.key.clone(),
            line: self.line,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<Entry>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line: n + 1,
                text: raw.trim().to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Malformed {
                    line: n + 1,
                    text: raw.trim().to_string(),
                });
            }
            if kv.get(key).is_some() {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    line: n + 1,
                });
            }
            kv.entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line: n + 1,
            });
        }
        Ok(kv)
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Inserts or replaces an entry; used for command-line overrides.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => self.entries.push(Entry {
                key: key.to_string(),
                value,
                line: 0,
            }),
        }
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.key.starts_with(prefix))
    }

    /// Rejects the first key outside the given namespaces.
    pub fn ensure_namespaces(&self, prefixes: &[&str]) -> Result<(), ConfigError> {
        match self
            .entries
            .iter()
            .find(|e| !prefixes.iter().any(|p| e.key.starts_with(p)))
        {
            Some(e) => Err(e.unknown()),
            None => Ok(()),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{} = {}", e.key, e.value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let kv = KeyValues::parse("# header\n\nmodel.hidden_dim = 32  # inline\ntrain.lr=0.01\n").unwrap();
        assert_eq!(kv.get("model.hidden_dim").unwrap().value, "32");
        assert_eq!(kv.get("model.hidden_dim").unwrap().line, 3);
        assert_eq!(kv.get("train.lr").unwrap().parse::<f64>().unwrap(), 0.01);
    }

    #[test]
    fn reports_offending_line() {
        assert_eq!(
            KeyValues::parse("a = 1\njunk\n").unwrap_err(),
            ConfigError::Malformed {
                line: 2,
                text: "junk".into()
            }
        );
        assert!(matches!(
            KeyValues::parse("a = 1\na = 2").unwrap_err(),
            ConfigError::Duplicate { line: 2, .. }
        ));
        let kv = KeyValues::parse("model.x = 1\nbogus.y = 2").unwrap();
        assert_eq!(
            kv.ensure_namespaces(&["model."]).unwrap_err(),
            ConfigError::UnknownKey {
                key: "bogus.y".into(),
                line: 2
            }
        );
        let bad = kv.get("model.x").unwrap();
        assert!(matches!(
            bad.parse::<bool>(),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
    }

    #[test]
    fn overrides_replace() {
        let mut kv = KeyValues::parse("train.lr = 0.1").unwrap();
        kv.set("train.lr", 0.5);
        kv.set("train.seed", 3);
        assert_eq!(kv.to_string(), "train.lr = 0.5\ntrain.seed = 3\n");
    }
}
