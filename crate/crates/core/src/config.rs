//! Flat `key=value` configuration.
//!
//! Files hold one `section.key=value` per line; `#` starts a comment. The
//! merged configuration is rendered back in sorted key order so a run can
//! be reproduced from its `resolved.cfg` alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthdata::CohortSpec;
use crate::trainer::TrainConfig;

/// Ordered key/value pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues(pub BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            writeln!(out, "{k}={v}").expect("write to string");
        }
        out
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value for {key}: {value:?}")))
}

pub(crate) fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

pub(crate) fn render_list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Everything a command needs: model, training and cohort settings plus
/// data locations.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cohort: CohortSpec,
    /// Manifest consumed by `train`, `eval`, `ablate`, `baseline` and `embed`.
    pub manifest: Option<PathBuf>,
    /// Checkpoint consumed by `eval` and `embed`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            cohort: CohortSpec::default(),
            manifest: None,
            checkpoint: None,
        }
    }
}

impl RunConfig {
    /// Defaults overridden by `kv`; unknown keys are rejected.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in &kv.0 {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let known = match key.split_once('.') {
            Some(("model", rest)) => self.model.set(rest, value)?,
            Some(("train", rest)) => self.train.set(rest, value)?,
            Some(("cohort", rest)) => self.cohort.set(rest, value)?,
            Some(("data", "manifest")) => {
                self.manifest = non_empty_path(value);
                true
            }
            Some(("data", "checkpoint")) => {
                self.checkpoint = non_empty_path(value);
                true
            }
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(Error::invalid(format!("unknown config key {key:?}")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.cohort.validate()?;
        if self.cohort.p != self.model.p {
            return Err(Error::invalid(format!(
                "cohort.p={} differs from model.p={}",
                self.cohort.p, self.model.p
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        for (k, v) in self.model.to_kv().0 {
            kv.insert(format!("model.{k}"), v);
        }
        for (k, v) in self.train.to_kv().0 {
            kv.insert(format!("train.{k}"), v);
        }
        for (k, v) in self.cohort.to_kv().0 {
            kv.insert(format!("cohort.{k}"), v);
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        kv.insert("data.manifest", path(&self.manifest));
        kv.insert("data.checkpoint", path(&self.checkpoint));
        kv
    }
}

fn non_empty_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}
