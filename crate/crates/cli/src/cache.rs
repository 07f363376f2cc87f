//! Content-addressed stage records. A stage is skipped when its key (settings plus the
//! hashes of its input files) matches the last run and its outputs are unchanged on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

const RECORD_DIR: &str = ".stages";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hash_bytes(&bytes))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct StageRecord {
    key: String,
    /// Output path relative to the run directory -> content hash.
    outputs: BTreeMap<String, String>,
}

pub struct Stage<'a> {
    root: &'a Path,
    name: &'static str,
    key: String,
}

impl<'a> Stage<'a> {
    /// `settings` are the configuration values the stage depends on; `inputs` are files
    /// relative to `root` that it reads.
    pub fn new(root: &'a Path, name: &'static str, settings: &Value, inputs: &[PathBuf]) -> Result<Self> {
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(settings)?);
        for rel in inputs {
            h.update([0]);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(hash_file(&root.join(rel)).with_context(|| format!("stage {name} needs {}", rel.display()))?);
        }
        Ok(Self {
            root,
            name,
            key: hex(&h.finalize()),
        })
    }

    fn record_path(&self) -> PathBuf {
        self.root.join(RECORD_DIR).join(format!("{}.json", self.name))
    }

    /// True when the recorded run used the same key and every output still has its hash.
    pub fn is_fresh(&self) -> bool {
        let Ok(text) = std::fs::read_to_string(self.record_path()) else {
            return false;
        };
        let Ok(record) = serde_json::from_str::<StageRecord>(&text) else {
            return false;
        };
        record.key == self.key
            && record
                .outputs
                .iter()
                .all(|(rel, h)| hash_file(&self.root.join(rel)).is_ok_and(|cur| &cur == h))
    }

    /// Runs `body` unless the stage is fresh. `body` returns the files it wrote, relative to
    /// the run directory. Returns whether the body ran.
    pub fn run(&self, body: impl FnOnce() -> Result<Vec<PathBuf>>) -> Result<bool> {
        if self.is_fresh() {
            eprintln!("{}: up to date", self.name);
            return Ok(false);
        }
        // Drop the old record first so an interrupted run is never mistaken for a fresh one.
        let record_path = self.record_path();
        if record_path.exists() {
            std::fs::remove_file(&record_path)?;
        }
        let outputs = body().with_context(|| format!("stage {} failed", self.name))?;
        let mut hashes = BTreeMap::new();
        for rel in outputs {
            let h = hash_file(&self.root.join(&rel))?;
            hashes.insert(rel.to_string_lossy().replace('\\', "/"), h);
        }
        let record = StageRecord {
            key: self.key.clone(),
            outputs: hashes,
        };
        std::fs::create_dir_all(record_path.parent().expect("record has a parent"))?;
        std::fs::write(&record_path, serde_json::to_string_pretty(&record)? + "\n")?;
        eprintln!("{}: done", self.name);
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn known_digest() {
        assert_eq!(
            hash_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn reruns_only_when_something_changed() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::write(root.join("in.txt"), "a").unwrap();
        let inputs = [PathBuf::from("in.txt")];
        let write = || {
            std::fs::write(root.join("out.txt"), "x").unwrap();
            Ok(vec![PathBuf::from("out.txt")])
        };
        let stage = |v| Stage::new(root, "s", &json!({ "v": v }), &inputs).unwrap();

        assert!(stage(1).run(write).unwrap());
        assert!(!stage(1).run(write).unwrap());
        assert!(stage(2).run(write).unwrap());
        std::fs::write(root.join("in.txt"), "b").unwrap();
        assert!(stage(2).run(write).unwrap());
        std::fs::write(root.join("out.txt"), "tampered").unwrap();
        assert!(stage(2).run(write).unwrap());
        std::fs::remove_file(root.join("out.txt")).unwrap();
        assert!(stage(2).run(write).unwrap());
        assert!(!stage(2).run(write).unwrap());
    }

    #[test]
    fn missing_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Stage::new(dir.path(), "s", &json!({}), &[PathBuf::from("nope")]).is_err());
    }
}
