use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use taanp::fsutil::write_atomic;

use crate::error::CliError;

pub const REPORT_FORMAT: &str = "taanp-report";
pub const REPORT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.resolved.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Line-delimited JSON records behind a versioned header line.
pub struct Report {
    lines: Vec<String>,
}

impl Report {
    pub fn new(command: &str, scenario: Option<&str>) -> Self {
        let header = json!({
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "command": command,
            "scenario": scenario,
        });
        Self {
            lines: vec![header.to_string()],
        }
    }

    /// Append `{"kind": kind, ...fields}`; `fields` must serialise to an object.
    pub fn record(&mut self, kind: &str, fields: impl Serialize) -> Result<(), CliError> {
        let mut v = serde_json::to_value(fields).map_err(|e| CliError::Config(format!("unserialisable record: {e}")))?;
        let Value::Object(map) = &mut v else {
            return Err(CliError::Config(format!("record `{kind}` is not an object")));
        };
        let mut out = serde_json::Map::new();
        out.insert("kind".into(), Value::from(kind));
        out.append(map);
        self.lines.push(Value::Object(out).to_string());
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub format: &'static str,
    pub command: String,
    pub version: &'static str,
    pub config_file: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub world_seed: u64,
    pub sensor_seed: u64,
    pub started: String,
    pub wall_secs: f64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub inputs: Vec<FileEntry>,
    pub files: Vec<FileEntry>,
}

/// Output directory plus the bookkeeping needed for the manifest.
pub struct RunDir {
    pub dir: PathBuf,
    started: chrono::DateTime<chrono::Utc>,
    clock: Instant,
    files: Vec<FileEntry>,
    inputs: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| taanp::Error::io(&dir, e))?;
        Ok(Self {
            dir,
            started: chrono::Utc::now(),
            clock: Instant::now(),
            files: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.track(&path, bytes);
        Ok(path)
    }

    /// Record a file written by library code.
    pub fn track_file(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| taanp::Error::io(path, e))?;
        self.track(path, &bytes);
        Ok(())
    }

    fn track(&mut self, path: &Path, bytes: &[u8]) {
        let name = path.strip_prefix(&self.dir).unwrap_or(path).display().to_string();
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name,
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
    }

    /// Hash an input file (or every file of an input directory).
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let mut paths = Vec::new();
        if path.is_dir() {
            let rd = std::fs::read_dir(path).map_err(|e| taanp::Error::io(path, e))?;
            for entry in rd {
                let entry = entry.map_err(|e| taanp::Error::io(path, e))?;
                // A run directory's own manifest carries wall time.
                if entry.path().is_file() && entry.file_name() != MANIFEST_FILE {
                    paths.push(entry.path());
                }
            }
            paths.sort();
        } else {
            paths.push(path.to_path_buf());
        }
        for p in paths {
            let bytes = std::fs::read(&p).map_err(|e| taanp::Error::io(&p, e))?;
            self.inputs.push(FileEntry {
                path: p.display().to_string(),
                bytes: bytes.len(),
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(())
    }

    pub fn finish(
        mut self,
        command: &str,
        snapshot: &str,
        seeds: (u64, u64, u64),
        error: Option<&CliError>,
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            format: "taanp-manifest/1",
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config_file: CONFIG_SNAPSHOT,
            config_hash: sha256_hex(snapshot.as_bytes()),
            seed: seeds.0,
            world_seed: seeds.1,
            sensor_seed: seeds.2,
            started: self.started.to_rfc3339(),
            wall_secs: self.clock.elapsed().as_secs_f64(),
            status: if error.is_some() { "failed" } else { "ok" },
            error: error.map(|e| e.to_string()),
            inputs: std::mem::take(&mut self.inputs),
            files: std::mem::take(&mut self.files),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Config(format!("cannot serialise manifest: {e}")))?;
        write_atomic(&self.dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(())
    }
}
