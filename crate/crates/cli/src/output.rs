use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Command;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

/// A CSV table buffered in memory until the command succeeds.
pub struct Table {
    pub name: String,
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self {
            name: name.to_string(),
            writer,
        }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

/// Shortest round-trip decimal form; non-finite values as `NaN`, `inf`, `-inf`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Everything needed to replay a run and check its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub root_seed: u64,
    /// SHA-256 of the canonical JSON of `command` and `root_seed`.
    pub config_sha256: String,
    pub command: Command,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(command: &Command, root_seed: u64) -> String {
    let canonical = serde_json::json!({ "command": command, "root_seed": root_seed });
    sha256_hex(canonical.to_string().as_bytes())
}

/// Writes every table and the manifest into `dir`. Files already written are
/// removed if a later write fails.
pub fn commit(dir: &Path, command: &Command, root_seed: u64, tables: Vec<Table>) -> std::io::Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut outputs = Vec::new();
    let result = (|| -> std::io::Result<()> {
        for table in tables {
            let name = table.name.clone();
            let bytes = table.into_bytes();
            let path = dir.join(&name);
            written.push(path.clone());
            fs::write(&path, &bytes)?;
            outputs.push(OutputFile {
                file: name,
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(())
    })();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        root_seed,
        config_sha256: config_hash(command, root_seed),
        command: command.clone(),
        outputs,
    };
    let result = result.and_then(|_| {
        let path = dir.join(MANIFEST_NAME);
        written.push(path.clone());
        fs::write(
            path,
            serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?,
        )
    });
    if let Err(e) = result {
        for path in written {
            let _ = fs::remove_file(path);
        }
        return Err(e);
    }
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read manifest {}: {e}", path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| format!("malformed manifest {}: {e}", path.display()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(format!(
            "manifest schema version {} is not supported (expected {SCHEMA_VERSION})",
            manifest.schema_version
        ));
    }
    Ok(manifest)
}
