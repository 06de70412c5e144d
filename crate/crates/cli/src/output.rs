//! Deterministic artifact writers: CSV with 17 significant digits,
//! little-endian f64 snapshot blobs with a JSON sidecar, and a manifest
//! listing every output file with its checksum.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub struct OutputDir {
    root: PathBuf,
    files: Vec<(String, String, u64)>,
}

/// Round-trip-safe float formatting: 17 significant digits, '.' decimal.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    fn register(&mut self, name: &str, bytes: &[u8]) {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        self.files.push((name.to_string(), hex::encode(hasher.finalize()), bytes.len() as u64));
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.root.join(name);
        let mut f = fs::File::create(path)?;
        f.write_all(bytes)?;
        self.register(name, bytes);
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[Vec<f64>]) -> std::io::Result<()> {
        let mut text = String::with_capacity(rows.len() * 64);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|x| fmt_f64(*x)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(value).expect("serializable report");
        self.write_bytes(name, format!("{text}\n").as_bytes())
    }

    /// Little-endian f64 blob, row-major.
    pub fn write_f64_matrix(&mut self, name: &str, rows: &[Vec<f64>]) -> std::io::Result<()> {
        let mut bytes = Vec::with_capacity(rows.iter().map(|r| r.len()).sum::<usize>() * 8);
        for row in rows {
            for x in row {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        self.write_bytes(name, &bytes)
    }

    /// Writes the manifest last so it can list every other artifact.
    pub fn write_manifest(
        &mut self,
        config_hash: &str,
        seed: u64,
        wall_time_s: f64,
    ) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct FileEntry {
            name: String,
            sha256: String,
            bytes: u64,
        }
        #[derive(Serialize)]
        struct Manifest {
            tool: String,
            version: String,
            config_sha256: String,
            seed: u64,
            wall_time_s: f64,
            files: Vec<FileEntry>,
        }
        let manifest = Manifest {
            tool: "modalpde".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config_hash.into(),
            seed,
            wall_time_s,
            files: self
                .files
                .iter()
                .map(|(name, sha256, bytes)| FileEntry {
                    name: name.clone(),
                    sha256: sha256.clone(),
                    bytes: *bytes,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.root.join("manifest.json");
        fs::write(path, format!("{text}\n"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}
