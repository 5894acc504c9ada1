//! Run manifests: ordered `key=value` text, also accepted as `--config` input.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Location, Result};
use crate::io::write_atomic;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Keys that describe a run rather than configure it; ignored when a manifest is reused as a config.
pub const RECORD_KEYS: [&str; 5] = ["command", "tool_version", "started_unix", "finished_unix", "digest"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("tool_version", TOOL_VERSION);
        m.set("started_unix", unix_now());
        m
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Entries usable as configuration.
    pub fn settings(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().filter(|(k, _)| !RECORD_KEYS.contains(&k.as_str())).map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                location: Location::Line(i + 1),
                reason: "expected key=value".into(),
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.set("finished_unix", unix_now());
        write_atomic(path, self.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut m = RunManifest::new("train");
        m.set("lambda", 1000.0);
        m.set("lambda", 100.0);
        m.set("out", "a b.pcae");
        let back = RunManifest::parse(Path::new("m"), &m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("lambda"), Some("100"));
        let settings: Vec<_> = back.settings().collect();
        assert_eq!(settings, vec![("lambda", "100"), ("out", "a b.pcae")]);
        assert!(RunManifest::parse(Path::new("m"), "# c\n\nnot a pair\n").is_err());
    }
}
