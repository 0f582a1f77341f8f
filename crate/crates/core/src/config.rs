//! Flat `key=value` configuration files. Blank lines and lines starting
//! with `#` are ignored; unknown keys are errors.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::BearConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

impl KvEntry {
    pub fn parse<V: FromStr>(&self) -> Result<V> {
        self.value.parse().map_err(|_| {
            Error::Config(format!(
                "line {}: cannot parse value {:?} for key {:?}",
                self.line, self.value, self.key
            ))
        })
    }
}

pub fn parse_kv(text: &str) -> Result<Vec<KvEntry>> {
    let mut out: Vec<KvEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", i + 1)));
        }
        out.push(KvEntry {
            line: i + 1,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

/// Everything a config file can set: the architecture and the training
/// schedule. A single `seed` key drives both.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: BearConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for entry in parse_kv(text)? {
            let known = cfg.model.set(&entry)? | cfg.train.set(&entry)?;
            if !known {
                return Err(Error::Config(format!("line {}: unknown key {:?}", entry.line, entry.key)));
            }
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_sections() {
        let cfg = RunConfig::parse("# desk\nn=16\nm = 8\nlr0=0.001\nloss=mse\nseed=3\n").unwrap();
        assert_eq!(cfg.model.n, 16);
        assert_eq!(cfg.model.m, 8);
        assert_eq!(cfg.train.lr0, 0.001);
        assert_eq!(cfg.model.seed, 3);
        assert_eq!(cfg.train.seed, 3);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("n=32\nbogus=1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(RunConfig::parse("n 32\n").is_err());
        assert!(RunConfig::parse("n=abc\n").is_err());
        assert!(RunConfig::parse("n=32\nn=16\n").is_err());
    }
}
