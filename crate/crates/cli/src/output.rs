use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use omnitrace_core::config::sha256_hex;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_string(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read(path)?).map_err(|_| CliError::Input(format!("{}: not valid UTF-8", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut out = header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every result.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<InputDigest>,
    pub params: Value,
    /// Digest of `params` and every input digest.
    pub params_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub engine_version: String,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` when set.
    pub timestamp: u64,
    pub outputs: Vec<String>,
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

pub struct ManifestBuilder {
    subcommand: String,
    inputs: Vec<InputDigest>,
    params: Value,
    config_hash: Option<String>,
    channel: Option<String>,
    seed: Option<u64>,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, params: Value) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            inputs: Vec::new(),
            params,
            config_hash: None,
            channel: None,
            seed: None,
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn config_hash(mut self, h: String) -> Self {
        self.config_hash = Some(h);
        self
    }

    pub fn channel(mut self, c: String) -> Self {
        self.channel = Some(c);
        self
    }

    pub fn seed(mut self, s: u64) -> Self {
        self.seed = Some(s);
        self
    }

    pub fn write(self, out: &Path, outputs: &[PathBuf]) -> Result<(), CliError> {
        let mut material = serde_json::to_string(&self.params).map_err(|e| CliError::Internal(e.to_string()))?;
        for d in &self.inputs {
            material.push('\n');
            material.push_str(&d.sha256);
        }
        if let Some(h) = &self.config_hash {
            material.push('\n');
            material.push_str(h);
        }
        let manifest = RunManifest {
            subcommand: self.subcommand,
            params_hash: sha256_hex(material.as_bytes()),
            inputs: self.inputs,
            params: self.params,
            config_hash: self.config_hash,
            channel: self.channel,
            seed: self.seed,
            engine_version: ENGINE_VERSION.to_string(),
            timestamp: timestamp(),
            outputs: outputs
                .iter()
                .map(|p| {
                    p.file_name()
                        .map_or_else(String::new, |f| f.to_string_lossy().into_owned())
                })
                .collect(),
        };
        write_json(&out.join("manifest.json"), &manifest)
    }
}
