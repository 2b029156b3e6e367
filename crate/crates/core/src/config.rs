//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, dotted keys express nesting
//! (`tail.family = hall`). Lists are comma separated; points in more than one
//! dimension separate coordinates with whitespace (`0.5 0.25, 0.1 0.9`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                reason: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: "empty key".into(),
                });
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| invalid(key, format!("cannot parse `{v}`"))),
        }
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn require_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|v| parse_list(key, v)).transpose()
    }

    pub fn points(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        self.get(key).map(|v| parse_points(key, v)).transpose()
    }

    pub fn extend(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| invalid(key, format!("cannot parse `{}` as a number", s.trim())))
        })
        .collect()
}

fn parse_points(key: &str, value: &str) -> Result<Vec<Vec<f64>>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|p| {
            let coords = p
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| invalid(key, format!("cannot parse `{s}` as a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            if coords.is_empty() {
                return Err(invalid(key, "empty point"));
            }
            Ok(coords)
        })
        .collect()
}

pub fn format_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn format_point(point: &[f64]) -> String {
    point
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn format_points(points: &[Vec<f64>]) -> String {
    points
        .iter()
        .map(|p| format_point(p))
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dotted_keys() {
        let kv = KeyValues::parse(
            "# model\ngamma = 0.5\n  tail.family=hall # trailing\n\nskedasis.params = 1, 2.5\n",
        )
        .unwrap();
        assert_eq!(kv.get("gamma"), Some("0.5"));
        assert_eq!(kv.get("tail.family"), Some("hall"));
        assert_eq!(kv.list_f64("skedasis.params").unwrap().unwrap(), vec![1.0, 2.5]);
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        assert!(matches!(
            KeyValues::parse("gamma 0.5"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            KeyValues::parse("a = 1\na = 2"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn points_split_on_commas_and_whitespace() {
        let kv = KeyValues::parse("x = 0.5 0.25, 0.1 0.9").unwrap();
        assert_eq!(
            kv.points("x").unwrap().unwrap(),
            vec![vec![0.5, 0.25], vec![0.1, 0.9]]
        );
    }

    #[test]
    fn display_round_trips() {
        let kv = KeyValues::parse("b = 2\na = x y").unwrap();
        assert_eq!(KeyValues::parse(&kv.to_string()).unwrap(), kv);
    }
}
