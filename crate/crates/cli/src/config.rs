//! Flat key=value override files and per-run configuration logging.
//!
//! An override file holds one `key = value` pair per line; blank lines and
//! `#` comments are ignored. Every key must be consumed by the subcommand it
//! is given to — unknown keys are an error, so typos never silently fall
//! back to defaults. Every run writes its fully resolved configuration to
//! `run_config.json` in the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Parsed override file plus consumption tracking.
#[derive(Debug, Default)]
pub struct Overrides {
    entries: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
    source: Option<PathBuf>,
}

impl Overrides {
    /// Load and parse the file, or return an empty set when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Overrides::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{} line {}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                );
            };
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                bail!("{} line {}: duplicate key {key:?}", path.display(), lineno + 1);
            }
        }
        Ok(Overrides {
            entries,
            consumed: BTreeSet::new(),
            source: Some(path.to_path_buf()),
        })
    }

    /// Raw string lookup; marks the key consumed.
    pub fn get(&mut self, key: &str) -> Option<String> {
        let v = self.entries.get(key).cloned();
        if v.is_some() {
            self.consumed.insert(key.to_string());
        }
        v
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, kind: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse::<T>() {
                Ok(v) => Ok(Some(v)),
                Err(_) => bail!("config key {key}: expected {kind}, got {raw:?}"),
            },
        }
    }

    pub fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.parse(key, "a number")
    }

    pub fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        self.parse(key, "a non-negative integer")
    }

    pub fn u64(&mut self, key: &str) -> Result<Option<u64>> {
        self.parse(key, "a non-negative integer")
    }

    pub fn i32(&mut self, key: &str) -> Result<Option<i32>> {
        self.parse(key, "an integer")
    }

    /// Comma-separated list of non-negative integers.
    pub fn usize_list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| anyhow::anyhow!("config key {key}: bad list entry {s:?}"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Comma-separated list of numbers.
    pub fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| anyhow::anyhow!("config key {key}: bad list entry {s:?}"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Error out if the file contained keys this subcommand never consumed.
    pub fn finish(self) -> Result<()> {
        let leftover: Vec<&String> = self
            .entries
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .collect();
        if leftover.is_empty() {
            return Ok(());
        }
        let src = self
            .source
            .as_deref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "config".into());
        bail!(
            "{src}: unknown config key(s) for this subcommand: {}",
            leftover
                .iter()
                .map(|k| format!("{k:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        )
    }
}

/// Accumulates the resolved configuration of one run and writes it to
/// `run_config.json`.
pub struct RunLog {
    subcommand: String,
    seed: u64,
    scale: String,
    entries: BTreeMap<String, serde_json::Value>,
}

impl RunLog {
    pub fn new(subcommand: &str, seed: u64, scale: &str) -> Self {
        RunLog {
            subcommand: subcommand.to_string(),
            seed,
            scale: scale.to_string(),
            entries: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<serde_json::Value>) -> &mut Self {
        self.entries.insert(key.to_string(), value.into());
        self
    }

    pub fn set_path(&mut self, key: &str, path: &Path) -> &mut Self {
        self.set(key, path.display().to_string())
    }

    /// Write `run_config.json` into `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        let mut doc = BTreeMap::new();
        doc.insert("subcommand".to_string(), serde_json::json!(self.subcommand));
        doc.insert("seed".to_string(), serde_json::json!(self.seed));
        doc.insert("scale".to_string(), serde_json::json!(self.scale));
        doc.insert("params".to_string(), serde_json::json!(self.entries));
        let path = out.join("run_config.json");
        fs::write(&path, serde_json::to_string_pretty(&doc)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_trims_and_tracks_consumption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "# comment\n epochs = 12 \n\nlearning_rate=0.5\n").unwrap();
        let mut ov = Overrides::load(Some(&path)).unwrap();
        assert_eq!(ov.usize("epochs").unwrap(), Some(12));
        assert_eq!(ov.f64("learning_rate").unwrap(), Some(0.5));
        assert_eq!(ov.f64("missing").unwrap(), None);
        ov.finish().unwrap();
    }

    #[test]
    fn unknown_key_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "epochs=1\ntypo_key=3\n").unwrap();
        let mut ov = Overrides::load(Some(&path)).unwrap();
        ov.usize("epochs").unwrap();
        let err = ov.finish().unwrap_err().to_string();
        assert!(err.contains("typo_key"), "got: {err}");
    }

    #[test]
    fn malformed_lines_and_duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "no equals sign\n").unwrap();
        assert!(Overrides::load(Some(&path)).is_err());
        fs::write(&path, "k=1\nk=2\n").unwrap();
        assert!(Overrides::load(Some(&path)).is_err());
    }

    #[test]
    fn lists_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "trees=50, 100,200\nshrinkages=0.05,0.1\n").unwrap();
        let mut ov = Overrides::load(Some(&path)).unwrap();
        assert_eq!(ov.usize_list("trees").unwrap(), Some(vec![50, 100, 200]));
        assert_eq!(ov.f64_list("shrinkages").unwrap(), Some(vec![0.05, 0.1]));
        ov.finish().unwrap();
    }

    #[test]
    fn run_log_writes_stable_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = RunLog::new("synth", 7, "desk");
        log.set("n_cases", 5).set("noise_sd", 0.02);
        log.write(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("run_config.json")).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["subcommand"], "synth");
        assert_eq!(doc["seed"], 7);
        assert_eq!(doc["params"]["n_cases"], 5);
    }
}
