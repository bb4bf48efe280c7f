//! Run manifests: one JSON file per command invocation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingRecord {
    pub spec_file: PathBuf,
    pub spec_sha256: String,
    pub expected_dim: usize,
    pub sources: Vec<FileDigest>,
}

/// Everything needed to rerun a command and check that it reproduced.
///
/// `id` hashes the command, its configuration and the digests of its inputs,
/// so reruns on identical inputs share an id; timestamps and output digests
/// are recorded alongside but do not enter it.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub id: String,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Digest over all data inputs (corpus files or sequence files).
    pub corpus_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub embedding: Option<EmbeddingRecord>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Vec<FileDigest>,
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: Vec<FileDigest>,
    embedding: Option<EmbeddingRecord>,
    seed: Option<u64>,
    started_at: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            embedding: None,
            seed: None,
            started_at: now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn embedding(&mut self, spec_file: &Path, spec: &argseg::embeddings::EmbeddingSpec) -> Result<&mut Self> {
        let sources = spec
            .sources
            .iter()
            .map(|s| FileDigest::of(&s.path))
            .collect::<Result<_>>()?;
        self.embedding = Some(EmbeddingRecord {
            spec_file: spec_file.to_path_buf(),
            spec_sha256: file_sha256(spec_file)?,
            expected_dim: spec.expected_dim,
            sources,
        });
        Ok(self)
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    fn corpus_digest(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.inputs {
            h.update(d.sha256.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Identifier shared by every run with the same command, configuration
    /// and input contents.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(b"\0");
        h.update(self.config.to_string().as_bytes());
        h.update(b"\0");
        h.update(self.corpus_digest().as_bytes());
        if let Some(e) = &self.embedding {
            h.update(e.spec_sha256.as_bytes());
            for s in &e.sources {
                h.update(s.sha256.as_bytes());
            }
        }
        if let Some(seed) = self.seed {
            h.update(seed.to_le_bytes());
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    /// Digest the artifacts and write `manifest.json` into `out_dir`.
    pub fn finish(self, out_dir: &Path, artifacts: &[PathBuf]) -> Result<RunManifest> {
        let manifest = RunManifest {
            id: self.id(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            corpus_sha256: self.corpus_digest(),
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            embedding: self.embedding,
            seed: self.seed,
            started_at: self.started_at,
            finished_at: now(),
            artifacts: artifacts.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
        };
        let path = out_dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
