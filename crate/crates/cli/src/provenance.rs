//! Sidecar metadata written next to every data output.
//!
//! Run files and CSVs have no room for headers, so each output `X` gets an
//! `X.provenance.json` (index directories get `provenance.json` inside).
//! Sidecars hold no timestamps or timings and are byte-deterministic;
//! wall times go to a separate `X.timing.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use d2qmm_core::TokenizerConfig;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{hex, Settings};

pub fn sidecar_for(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("provenance.json")
    } else {
        let mut name = output.as_os_str().to_owned();
        name.push(".provenance.json");
        PathBuf::from(name)
    }
}

fn timing_for(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".timing.json");
    PathBuf::from(name)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let target = if path.is_dir() {
        path.join("header.bin")
    } else {
        path.to_path_buf()
    };
    let bytes = std::fs::read(&target).with_context(|| format!("reading {}", target.display()))?;
    Ok(hex(&Sha256::digest(&bytes)[..8]))
}

pub struct Provenance<'a> {
    pub command: &'a str,
    pub settings: &'a Settings,
    pub tokenizer: Option<&'a TokenizerConfig>,
    pub inputs: Vec<(&'a str, PathBuf)>,
    pub extra: BTreeMap<&'a str, Value>,
}

impl Provenance<'_> {
    pub fn write(&self, output: &Path) -> Result<()> {
        let mut inputs = BTreeMap::new();
        for (name, path) in &self.inputs {
            inputs.insert(*name, file_digest(path)?);
        }
        let mut record = json!({
            "tool": "d2qmm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.settings.values(),
            "config_hash": self.settings.hash(),
            "inputs": inputs,
        });
        if let Some(t) = self.tokenizer {
            record["tokenizer"] = json!(t.describe());
            record["tokenizer_hash"] = json!(t.fingerprint());
        }
        for (k, v) in &self.extra {
            record[*k] = v.clone();
        }
        let text = serde_json::to_string_pretty(&record)? + "\n";
        let path = sidecar_for(output);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn write_timing(output: &Path, key: &str, secs: f64) -> Result<()> {
    let path = timing_for(output);
    let text = serde_json::to_string_pretty(&json!({ key: secs }))? + "\n";
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Tokenizer fingerprint recorded for `output`, if a sidecar exists.
pub fn recorded_tokenizer(output: &Path) -> Result<Option<String>> {
    let path = sidecar_for(output);
    if !path.exists() {
        return Ok(None);
    }
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let record: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(record["tokenizer_hash"].as_str().map(str::to_string))
}
