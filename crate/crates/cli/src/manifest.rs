//! Stage manifests and atomic artifact writes.
//!
//! Each stage directory carries a manifest.json recording the SHA-256 of
//! every input it read and every artifact it wrote, plus the scientific
//! parameters. Manifests contain no timestamps, absolute paths, or thread
//! counts, so identical inputs and parameters give byte-identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Collects a stage's files and writes its manifest.
pub struct Manifest {
    stage: &'static str,
    dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    params: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(
        stage: &'static str,
        dir: &Path,
        params: BTreeMap<String, serde_json::Value>,
    ) -> Self {
        Self { stage, dir: dir.to_path_buf(), inputs: BTreeMap::new(), outputs: BTreeMap::new(), params }
    }

    /// Records an input file by basename and digest.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let name = basename(path);
        let digest = sha256_file(path)?;
        self.inputs.insert(name, digest);
        Ok(())
    }

    /// Writes an artifact atomically (temp file + rename) via `write`, then
    /// records its digest. `write` receives the temporary path.
    pub fn artifact<F>(&mut self, name: &str, write: F) -> Result<PathBuf>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let path = self.dir.join(name);
        atomic_write(&path, write)?;
        self.outputs.insert(name.to_string(), sha256_file(&path)?);
        Ok(path)
    }

    /// Writes manifest.json itself, also atomically.
    pub fn finish(self) -> Result<()> {
        let doc = serde_json::json!({
            "stage": self.stage,
            "params": self.params,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let body = serde_json::to_string_pretty(&doc)?;
        atomic_write(&self.dir.join("manifest.json"), |tmp| {
            fs::write(tmp, format!("{body}\n")).map_err(Into::into)
        })
    }
}

fn basename(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Runs `write` against a temporary path in the target's directory, then
/// renames over the final path. A crashed run leaves no partial artifact
/// under the final name.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let dir = path.parent().context("artifact path has no parent")?;
    fs::create_dir_all(dir)?;
    let name = basename(path);
    let tmp = dir.join(format!(".tmp-{name}"));
    write(&tmp).with_context(|| format!("writing {}", path.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Loads a manifest and verifies that every recorded output digest still
/// matches the file sitting next to it. When `input_dirs` is given, inputs
/// are verified too, looked up by basename. Returns the mismatches.
pub fn verify_digests(manifest_path: &Path, input_dirs: Option<&[&Path]>) -> Result<Vec<String>> {
    let text = fs::read_to_string(manifest_path)
        .with_context(|| format!("cannot read {}", manifest_path.display()))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().context("manifest has no parent")?;

    let mut mismatches = Vec::new();
    if let Some(outputs) = doc["outputs"].as_object() {
        for (name, digest) in outputs {
            let path = dir.join(name);
            if !path.is_file() {
                mismatches.push(format!("{name}: missing"));
            } else if sha256_file(&path)? != *digest.as_str().unwrap_or_default() {
                mismatches.push(format!("{name}: digest mismatch"));
            }
        }
    }
    if let (Some(dirs), Some(inputs)) = (input_dirs, doc["inputs"].as_object()) {
        for (name, digest) in inputs {
            let found = dirs.iter().map(|d| d.join(name)).find(|p| p.is_file());
            match found {
                None => mismatches.push(format!("{name}: input not found")),
                Some(p) => {
                    if sha256_file(&p)? != *digest.as_str().unwrap_or_default() {
                        mismatches.push(format!("{name}: input digest mismatch"));
                    }
                }
            }
        }
    }
    Ok(mismatches)
}
