//! Line-oriented `key=value` text files used by checkpoints, datasets and
//! config echoes. Keys may repeat; order is preserved.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    path: PathBuf,
    entries: Vec<(String, String)>,
    /// Byte offset of each parsed entry's line; empty for built manifests.
    offsets: Vec<u64>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Parses text; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offsets = Vec::new();
        let mut offset = 0u64;
        for (no, raw) in text.split_inclusive('\n').enumerate() {
            let start = offset;
            offset += raw.len() as u64;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Manifest {
                path: path.to_path_buf(),
                detail: format!("line {}: expected key=value, got '{line}'", no + 1),
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
            offsets.push(start);
        }
        Ok(Manifest {
            path: path.to_path_buf(),
            entries,
            offsets,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// First value of `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Every value of `key`, in order.
    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| self.error(format!("missing key '{key}'")))
    }

    pub fn parse_value<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let v = self.require(key)?;
        v.parse().map_err(|_| self.error(format!("invalid value '{v}' for '{key}'")))
    }

    pub fn error(&self, detail: impl Into<String>) -> Error {
        Error::Manifest {
            path: self.path.clone(),
            detail: detail.into(),
        }
    }

    /// Rejection of the value of `key`, located at its line's byte offset.
    pub fn error_at(&self, key: &str, detail: impl Into<String>) -> Error {
        let offset = self
            .entries
            .iter()
            .position(|(k, _)| k == key)
            .and_then(|i| self.offsets.get(i).copied())
            .unwrap_or(0);
        Error::Format {
            path: self.path.clone(),
            offset,
            detail: detail.into(),
        }
    }

    /// Entries whose key starts with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> std::collections::BTreeMap<String, String> {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_order_and_repeats() {
        let mut m = Manifest::new();
        m.push("a", 1);
        m.push("t", "x");
        m.push("t", "y");
        let back = Manifest::parse(&m.to_text(), Path::new("m")).unwrap();
        assert_eq!(back.entries(), m.entries());
        assert_eq!(back.get_all("t").collect::<Vec<_>>(), ["x", "y"]);
        assert_eq!(back.parse_value::<u32>("a").unwrap(), 1);
        assert!(back.require("missing").is_err());
        assert!(Manifest::parse("novalue", Path::new("m")).is_err());
        let located = Manifest::parse("# c\na=1\nb=2\n", Path::new("m")).unwrap();
        assert!(matches!(located.error_at("b", "x"), Error::Format { offset: 8, .. }));
    }
}
