//! Run manifests: enough to reproduce and verify every artifact of a run.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    parallel: bool,
    seed: u64,
    config_hash: String,
    config: &'a ExperimentConfig,
    inputs: Vec<FileDigest>,
    artifacts: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn digests(paths: &[PathBuf], relative_to: Option<&Path>) -> anyhow::Result<Vec<FileDigest>> {
    let mut out = paths
        .iter()
        .map(|p| {
            let shown = relative_to.and_then(|base| p.strip_prefix(base).ok()).unwrap_or(p);
            Ok(FileDigest {
                path: shown.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Writes `manifest-<command>.json` under the output directory.
pub fn write(config: &ExperimentConfig, command: &str, inputs: &[PathBuf], artifacts: &[PathBuf]) -> anyhow::Result<PathBuf> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        parallel: prefnet::par::is_parallel(),
        seed: config.train.seed,
        config_hash: config_hash(config),
        config,
        inputs: digests(inputs, None)?,
        artifacts: digests(artifacts, Some(&config.out))?,
    };
    let path = config.out.join(format!("manifest-{command}.json"));
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
