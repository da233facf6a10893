//! Artifact writing. Every file carries the artifact version and the config hash:
//! CSVs as a leading `#` line, JSON documents as a `provenance` object.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use rtheta::planners::ProtocolDocument;

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub artifact: &'static str,
    pub version: &'static str,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: String) -> Self {
        Self {
            artifact: "rtheta",
            version: VERSION,
            config_hash,
        }
    }

    fn csv_line(&self, note: Option<&str>) -> String {
        let mut line = format!("# {} {} config {}", self.artifact, self.version, self.config_hash);
        if let Some(n) = note {
            line.push_str("; ");
            line.push_str(n);
        }
        line.push('\n');
        line
    }
}

pub struct Outputs {
    dir: PathBuf,
    prov: Provenance,
}

impl Outputs {
    pub fn create(dir: &Path, prov: Provenance) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            prov,
        })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.prov
    }

    /// Writes a CSV produced by `body`, prefixed by the provenance line and an optional note.
    pub fn csv<F>(&self, name: &str, note: Option<&str>, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let mut buf = self.prov.csv_line(note).into_bytes();
        body(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes `value` as pretty JSON; objects gain a `provenance` member.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(map) = &mut v {
            map.insert("provenance".into(), json!(self.prov));
        }
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Protocol documents keep provenance inside their metadata block.
    pub fn protocol(&self, name: &str, mut doc: ProtocolDocument) -> Result<PathBuf, CliError> {
        doc.metadata.provenance = Some(json!(self.prov));
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        Ok(path)
    }
}
