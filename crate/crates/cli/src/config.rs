//! Flat `key = value` configuration text with `#` comments.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("`{key}` is set twice (line {line})")]
    Duplicate { key: String, line: usize },
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("`{key}`: cannot parse {value:?}: {message}")]
    InvalidValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("`{key}`: {message}")]
    Invariant { key: String, message: String },
    #[error("`{key}`: file {path} does not exist")]
    MissingFile { key: String, path: String },
    #[error("--set expects key=value, got {0:?}")]
    BadOverride(String),
}

impl ConfigError {
    /// Dotted key the finding refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Duplicate { key, .. }
            | ConfigError::UnknownKey { key }
            | ConfigError::InvalidValue { key, .. }
            | ConfigError::Invariant { key, .. }
            | ConfigError::MissingFile { key, .. } => Some(key),
            ConfigError::Syntax { .. } | ConfigError::BadOverride(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// Source line, or 0 for command-line overrides.
    pub line: usize,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

/// Parses the text into entries in file order. Every malformed line and every
/// repeated key is reported.
pub fn parse_config(text: &str) -> Result<Vec<Entry>, Vec<ConfigError>> {
    let mut entries: Vec<Entry> = Vec::new();
    let mut errors = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            errors.push(ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            });
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if !valid_key(key) {
            errors.push(ConfigError::Syntax {
                line,
                message: format!("malformed key {key:?}"),
            });
            continue;
        }
        if entries.iter().any(|e| e.key == key) {
            errors.push(ConfigError::Duplicate {
                key: key.to_string(),
                line,
            });
            continue;
        }
        entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    if errors.is_empty() {
        Ok(entries)
    } else {
        Err(errors)
    }
}

/// Splits a `--set key=value` argument.
pub fn parse_override(arg: &str) -> Result<Entry, ConfigError> {
    let (key, value) = arg
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(arg.to_string()))?;
    let key = key.trim();
    if !valid_key(key) {
        return Err(ConfigError::BadOverride(arg.to_string()));
    }
    Ok(Entry {
        key: key.to_string(),
        value: value.trim().to_string(),
        line: 0,
    })
}

/// Replaces or appends each override.
pub fn apply_overrides(entries: &mut Vec<Entry>, overrides: &[Entry]) {
    for o in overrides {
        match entries.iter_mut().find(|e| e.key == o.key) {
            Some(e) => e.value.clone_from(&o.value),
            None => entries.push(o.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_values_and_comments() {
        let text = "# header\nplanner.near_radius = 2.5\n\n lip.mass=32 # trailing\n";
        let entries = parse_config(text).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].key, "planner.near_radius");
        assert_eq!(entries[0].value, "2.5");
        assert_eq!(entries[0].line, 2);
        assert_eq!(entries[1].value, "32");
    }

    #[test]
    fn reports_every_bad_line() {
        let errors = parse_config("a = 1\nnot a pair\na = 2\nbad key = 3\n").unwrap_err();
        assert_eq!(errors.len(), 3);
        assert!(matches!(errors[0], ConfigError::Syntax { line: 2, .. }));
        assert!(matches!(&errors[1], ConfigError::Duplicate { key, line: 3 } if key == "a"));
        assert!(matches!(errors[2], ConfigError::Syntax { line: 4, .. }));
    }

    #[test]
    fn overrides_replace_and_append() {
        let mut entries = parse_config("a.b = 1\n").unwrap();
        apply_overrides(
            &mut entries,
            &[parse_override("a.b=2").unwrap(), parse_override("c = x").unwrap()],
        );
        assert_eq!(entries[0].value, "2");
        assert_eq!(entries[1].key, "c");
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("=3").is_err());
    }
}
