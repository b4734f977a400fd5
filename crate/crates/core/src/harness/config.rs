//! Flat `key = value` configuration with `[section]` headers.
//!
//! ```text
//! # comment
//! [scenario]
//! kind = abd
//! m = 2
//! ```
//!
//! Keys before the first header belong to the section `""`. Repeated keys
//! are rejected.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing field `{field}`")]
    Missing { field: String },
    #[error("field `{field}`: bad value `{value}`: {message}")]
    Invalid {
        field: String,
        value: String,
        message: String,
    },
    #[error("unknown field `{field}`")]
    Unknown { field: String },
}

impl ConfigError {
    /// The `section.key` the error is about, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax { .. } => None,
            ConfigError::Missing { field } | ConfigError::Invalid { field, .. } | ConfigError::Unknown { field } => {
                Some(field)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

fn field(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax { line: i + 1, message };
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| syntax(format!("unclosed section header `{line}`")))?
                    .trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(syntax(format!("bad section name `{name}`")));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(syntax("empty key".into()));
            }
            let sec = sections.entry(current.clone()).or_default();
            if sec.insert(k.to_string(), v.to_string()).is_some() {
                return Err(syntax(format!("`{}` is set twice", field(&current, k))));
            }
        }
        Ok(Self { sections })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn section(&self, section: &str) -> impl Iterator<Item = (&str, &str)> {
        self.sections
            .get(section)
            .into_iter()
            .flatten()
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key).ok_or_else(|| ConfigError::Missing {
            field: field(section, key),
        })
    }

    /// Parses a field, or returns `default` when it is absent.
    pub fn parse_or<T>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => parse_field(section, key, v),
        }
    }

    pub fn parse_required<T>(&self, section: &str, key: &str) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        parse_field(section, key, self.require(section, key)?)
    }

    /// Fails on any section or key outside `allowed`.
    pub fn restrict(&self, allowed: &[(&str, &[&str])]) -> Result<(), ConfigError> {
        for (sec, keys) in &self.sections {
            let Some((_, ok)) = allowed.iter().find(|(s, _)| s == sec) else {
                return Err(ConfigError::Unknown {
                    field: format!("[{sec}]"),
                });
            };
            if ok.contains(&"*") {
                continue;
            }
            if let Some(k) = keys.keys().find(|k| !ok.contains(&k.as_str())) {
                return Err(ConfigError::Unknown { field: field(sec, k) });
            }
        }
        Ok(())
    }
}

pub fn parse_field<T>(section: &str, key: &str, value: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid {
        field: field(section, key),
        value: value.to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let c = Config::parse("top = 1\n[a]\nx = 2 # two\n\n[b]\ny=hello world\n").unwrap();
        assert_eq!(c.get("", "top"), Some("1"));
        assert_eq!(c.get("a", "x"), Some("2"));
        assert_eq!(c.get("b", "y"), Some("hello world"));
        assert_eq!(c.parse_or::<u32>("a", "x", 0).unwrap(), 2);
        assert_eq!(c.parse_or::<u32>("a", "z", 7).unwrap(), 7);
    }

    #[test]
    fn errors_name_the_field() {
        let c = Config::parse("[a]\nx = nope\n").unwrap();
        let e = c.parse_or::<u32>("a", "x", 0).unwrap_err();
        assert_eq!(e.field(), Some("a.x"));
        assert_eq!(c.require("a", "y").unwrap_err().field(), Some("a.y"));
        let e = c.restrict(&[("a", &["y"])]).unwrap_err();
        assert_eq!(e.field(), Some("a.x"));
        assert_eq!(c.restrict(&[("b", &["*"])]).unwrap_err().field(), Some("[a]"));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        assert_eq!(
            Config::parse("[a]\nnot a pair\n").unwrap_err(),
            ConfigError::Syntax {
                line: 2,
                message: "expected `key = value`, got `not a pair`".into()
            }
        );
        assert!(matches!(Config::parse("[a\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Config::parse("x=1\nx=2\n"), Err(ConfigError::Syntax { line: 2, .. })));
    }
}
