//! Run manifests: the resolved config, stage seeds, and a SHA-256 for every output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FORMAT: &str = "esd-manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTIAL_SUFFIX: &str = ".partial";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub stage: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_format: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub stage_seeds: BTreeMap<String, u64>,
    /// Keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, OutputRecord>,
    /// `ok`, or `failed: <stage>`.
    pub status: String,
}

impl Manifest {
    pub fn new(command: &str, config: ExperimentConfig) -> Self {
        Self {
            manifest_format: MANIFEST_FORMAT.into(),
            command: command.into(),
            config,
            stage_seeds: BTreeMap::new(),
            outputs: BTreeMap::new(),
            status: "ok".into(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Self = serde_json::from_slice(&bytes).with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.manifest_format != MANIFEST_FORMAT {
            bail!("unsupported manifest format `{}`", m.manifest_format);
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Files whose current hash differs from the record (or that are missing).
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (name, rec) in &self.outputs {
            match sha256_file(&dir.join(name)) {
                Ok((hash, _)) if hash == rec.sha256 => {}
                _ => bad.push(name.clone()),
            }
        }
        Ok(bad)
    }

    /// Output hashes only, for comparing two runs.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.outputs.iter().map(|(k, v)| (k.clone(), v.sha256.clone())).collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

/// Collects one stage's outputs under `.partial` names and publishes them
/// together once the stage succeeds.
pub struct StageOutputs {
    dir: PathBuf,
    stage: String,
    pending: Vec<String>,
}

impl StageOutputs {
    pub fn new(dir: &Path, stage: &str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            stage: stage.into(),
            pending: Vec::new(),
        }
    }

    /// Temporary path for output `name`; the writer fills it.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.pending.iter().any(|p| p == name) {
            self.pending.push(name.into());
        }
        self.dir.join(format!("{name}{PARTIAL_SUFFIX}"))
    }

    /// Renames every pending file to its final name and records its hash.
    pub fn commit(self, manifest: &mut Manifest) -> Result<()> {
        for name in &self.pending {
            let partial = self.dir.join(format!("{name}{PARTIAL_SUFFIX}"));
            let fin = self.dir.join(name);
            fs::rename(&partial, &fin).with_context(|| format!("publishing {}", fin.display()))?;
            let (sha256, bytes) = sha256_file(&fin)?;
            manifest.outputs.insert(
                name.clone(),
                OutputRecord {
                    stage: self.stage.clone(),
                    sha256,
                    bytes,
                },
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, ExperimentId};

    #[test]
    fn commit_publishes_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("test", ExperimentConfig::defaults(ExperimentId::Bimodal));
        let mut out = StageOutputs::new(dir.path(), "eval");
        fs::write(out.path("a.txt"), b"abc").unwrap();
        assert!(dir.path().join("a.txt.partial").exists());
        out.commit(&mut m).unwrap();
        let rec = &m.outputs["a.txt"];
        assert_eq!(rec.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(rec.bytes, 3);
        assert!(m.verify(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a.txt"), b"abd").unwrap();
        assert_eq!(m.verify(dir.path()).unwrap(), vec!["a.txt".to_string()]);
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("run", ExperimentConfig::defaults(ExperimentId::Elliptic));
        m.stage_seeds.insert("sample".into(), 42);
        let path = m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }
}
