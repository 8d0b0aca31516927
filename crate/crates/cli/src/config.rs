//! Flat `key = value` configuration with one `[section]` per subcommand.
//!
//! Parsing is strict: unknown sections and unknown (or duplicate) keys are
//! rejected, and every run writes its fully resolved section next to its
//! outputs so the run can be reproduced from that file alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::CliError;

/// The six known section names.
pub const KNOWN_SECTIONS: [&str; 6] = [
    "verify-decomposition",
    "counterexample",
    "motivating",
    "scale-invariance",
    "toy2d",
    "train",
];

#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !KNOWN_SECTIONS.contains(&name) {
                    return Err(CliError::config(format!(
                        "line {}: unknown section [{name}]",
                        lineno + 1
                    )));
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )));
            };
            let Some(section) = &current else {
                return Err(CliError::config(format!(
                    "line {}: key before any [section] header",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let entries = sections.get_mut(section).expect("section exists");
            if entries.insert(key.clone(), value).is_some() {
                return Err(CliError::config(format!(
                    "line {}: duplicate key {key:?} in [{section}]",
                    lineno + 1
                )));
            }
        }
        Ok(Self { sections })
    }

    /// Strict reader over one section; keys left unread at `finish` fail.
    pub fn reader(&self, section: &str) -> SectionReader {
        SectionReader {
            section: section.to_string(),
            entries: self.sections.get(section).cloned().unwrap_or_default(),
            consumed: BTreeSet::new(),
        }
    }
}

pub struct SectionReader {
    section: String,
    entries: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl SectionReader {
    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.entries.get(key).cloned()
    }

    pub fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        match self.take_raw(key) {
            None => Ok(default),
            Some(text) => text.parse().map_err(|_| {
                CliError::config(format!("[{}] {key}: cannot parse {text:?}", self.section))
            }),
        }
    }

    pub fn take_list<T: FromStr + Clone>(
        &mut self,
        key: &str,
        default: &[T],
    ) -> Result<Vec<T>, CliError> {
        match self.take_raw(key) {
            None => Ok(default.to_vec()),
            Some(text) => text
                .split(',')
                .map(|part| {
                    part.trim().parse().map_err(|_| {
                        CliError::config(format!(
                            "[{}] {key}: cannot parse element {part:?}",
                            self.section
                        ))
                    })
                })
                .collect(),
        }
    }

    pub fn take_choice(
        &mut self,
        key: &str,
        choices: &[&str],
        default: &str,
    ) -> Result<String, CliError> {
        let value = self.take_raw(key).unwrap_or_else(|| default.to_string());
        if choices.contains(&value.as_str()) {
            Ok(value)
        } else {
            Err(CliError::config(format!(
                "[{}] {key}: {value:?} is not one of {choices:?}",
                self.section
            )))
        }
    }

    /// Reject any key that was never consumed.
    pub fn finish(self) -> Result<(), CliError> {
        let unknown: Vec<&String> = self
            .entries
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(format!(
                "[{}] unknown keys: {}",
                self.section,
                unknown
                    .iter()
                    .map(|k| format!("{k:?}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

/// Serializer for resolved configs: one section, fixed key order, `key =
/// value` lines.
pub struct SectionEmitter {
    buf: String,
}

impl SectionEmitter {
    pub fn new(section: &str) -> Self {
        Self {
            buf: format!("[{section}]\n"),
        }
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        writeln!(self.buf, "{key} = {value}").expect("string write");
        self
    }

    pub fn kv_list<T: std::fmt::Display>(&mut self, key: &str, values: &[T]) -> &mut Self {
        let joined = values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        self.kv(key, joined)
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let raw = RawConfig::parse("# note\n[train]\nsteps = 10\n\n[toy2d]\nseeds = 3\n").unwrap();
        let mut reader = raw.reader("train");
        assert_eq!(reader.take::<usize>("steps", 0).unwrap(), 10);
        reader.finish().unwrap();
    }

    #[test]
    fn rejects_unknown_section_and_key() {
        assert!(RawConfig::parse("[nope]\n").is_err());
        let raw = RawConfig::parse("[train]\nbogus = 1\n").unwrap();
        let mut reader = raw.reader("train");
        let _ = reader.take::<usize>("steps", 0);
        assert!(reader.finish().is_err());
    }

    #[test]
    fn rejects_duplicates_and_headerless_keys() {
        assert!(RawConfig::parse("steps = 1\n").is_err());
        assert!(RawConfig::parse("[train]\nsteps = 1\nsteps = 2\n").is_err());
    }
}
