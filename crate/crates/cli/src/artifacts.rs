//! Run manifest and artifact writing.
//!
//! Each run writes `manifest.json` (command, effective configuration and
//! input digests) into its output directory. Every other artifact starts
//! with a header naming its kind, the format version and the manifest's
//! SHA-256, as a `#` line for text files or as leading fields for JSON.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub const ARTIFACT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Output directory bound to one manifest.
pub struct OutDir {
    dir: PathBuf,
    manifest_sha256: String,
}

impl OutDir {
    /// Creates `dir` and writes the manifest for this run.
    pub fn create(dir: &Path, command: &str, config: Value, inputs: Vec<InputDigest>) -> Result<OutDir> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = json!({
            "tool": "hleval",
            "tool_version": env!("CARGO_PKG_VERSION"),
            "artifact_version": ARTIFACT_VERSION,
            "command": command,
            "config": config,
            "inputs": inputs,
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = dir.join("manifest.json");
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            manifest_sha256: sha256_hex(text.as_bytes()),
        })
    }

    pub fn header(&self, kind: &str) -> String {
        format!(
            "# hleval {kind} v{ARTIFACT_VERSION} manifest-sha256={}\n",
            self.manifest_sha256
        )
    }

    /// Writes a text artifact behind a `#` header line.
    pub fn text(&mut self, name: &str, kind: &str, body: &str) -> Result<()> {
        let mut out = self.header(kind);
        out.push_str(body);
        self.put(name, out)
    }

    /// Writes a JSON artifact whose first fields identify it.
    pub fn json<T: Serialize>(&mut self, name: &str, kind: &str, payload: &T) -> Result<()> {
        let mut map = Map::new();
        map.insert("hleval_artifact".into(), json!(kind));
        map.insert("artifact_version".into(), json!(ARTIFACT_VERSION));
        map.insert("manifest_sha256".into(), json!(self.manifest_sha256));
        match serde_json::to_value(payload)? {
            Value::Object(fields) => map.extend(fields),
            other => {
                map.insert("data".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(map))?;
        text.push('\n');
        self.put(name, text)
    }

    fn put(&mut self, name: &str, contents: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }
}

/// Tab-separated rows, one header row first.
pub fn tsv<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = header.join("\t");
    out.push('\n');
    for row in rows {
        out.push_str(&row.into_iter().collect::<Vec<_>>().join("\t"));
        out.push('\n');
    }
    out
}
