//! Output bundle: files under one directory plus a manifest of their hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

pub struct Bundle {
    root: PathBuf,
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    /// sha256 of the weight file or of the oracle command line.
    pub oracle_hash: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    files: BTreeMap<&'a str, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl Bundle {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: vec![],
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Registers a file written by someone else.
    pub fn track(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.files.contains(&name) {
            self.files.push(name);
        }
    }

    pub fn text(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        self.track(name);
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(vec![]);
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        self.text(name, std::str::from_utf8(&bytes)?)
    }

    /// CSV from a header and pre-formatted records.
    pub fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        self.text(name, std::str::from_utf8(&bytes)?)
    }

    /// Writes the manifest and returns the bundle hash (sha256 of the manifest).
    pub fn finish(self, provenance: &Provenance) -> anyhow::Result<String> {
        let mut files = BTreeMap::new();
        for f in &self.files {
            files.insert(f.as_str(), sha256_file(&self.path(f))?);
        }
        let body = serde_json::to_string_pretty(&Manifest { provenance, files })? + "\n";
        std::fs::write(self.path(MANIFEST), &body)?;
        Ok(sha256_hex(body.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_hash_covers_contents() {
        let prov = Provenance {
            tool: "pointprobe",
            version: "0",
            command: "t".into(),
            seed: 1,
            oracle_hash: None,
        };
        let run = |v: &str| {
            let dir = tempfile::tempdir().unwrap();
            let mut b = Bundle::create(dir.path()).unwrap();
            b.text("a.txt", v).unwrap();
            b.table("t.csv", &["x"], vec![vec!["1".into()]]).unwrap();
            b.finish(&prov).unwrap()
        };
        assert_eq!(run("x"), run("x"));
        assert_ne!(run("x"), run("y"));
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
