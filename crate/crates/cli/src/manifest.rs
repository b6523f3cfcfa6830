//! Run manifests: what produced an output directory, hashed so a rerun can be
//! checked byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dormant_core::experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "dormant-run";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    /// Arguments after the program name, minus `--out`.
    pub argv: Vec<String>,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub tool_version: String,
    pub inputs: Vec<FileRef>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileRef>,
    pub wall_clock: String,
    pub hash: String,
}

/// The hashed view: no wall-clock, no argv, and inputs by file name only, so
/// the same run from another directory hashes the same.
#[derive(Serialize)]
struct Hashed<'a> {
    format: &'a str,
    version: u32,
    command: &'a str,
    config: &'a ExperimentConfig,
    seed: u64,
    tool_version: &'a str,
    inputs: Vec<(&'a str, &'a str)>,
    outputs: Vec<(&'a str, &'a str)>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_name(path: &str) -> &str {
    Path::new(path).file_name().and_then(|n| n.to_str()).unwrap_or(path)
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn compute_hash(&self) -> String {
        let hashed = Hashed {
            format: &self.format,
            version: self.version,
            command: &self.command,
            config: &self.config,
            seed: self.seed,
            tool_version: &self.tool_version,
            inputs: self.inputs.iter().map(|f| (file_name(&f.path), f.sha256.as_str())).collect(),
            outputs: self.outputs.iter().map(|f| (f.path.as_str(), f.sha256.as_str())).collect(),
        };
        let bytes = serde_json::to_vec(&hashed).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            bail!("{} is not a {MANIFEST_FORMAT} v{MANIFEST_VERSION} manifest", path.display());
        }
        if m.compute_hash() != m.hash {
            bail!("{} has been edited: stored hash does not match its contents", path.display());
        }
        Ok(m)
    }
}

/// Collects inputs and outputs for one command, then writes the manifest and
/// a `<artifact>.manifest` sidecar next to every output.
pub struct Recorder {
    pub out: PathBuf,
    command: String,
    argv: Vec<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    manifest: &'a str,
    hash: &'a str,
}

impl Recorder {
    pub fn new(out: &Path, command: &str, argv: Vec<String>) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            command: command.to_string(),
            argv,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Registers `name` as an output and returns its full path.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn finish(self, config: &ExperimentConfig) -> Result<RunManifest> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                Ok(FileRef {
                    path: fs::canonicalize(p).unwrap_or_else(|_| p.clone()).display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|name| {
                Ok(FileRef {
                    path: name.clone(),
                    sha256: sha256_file(&self.out.join(name))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            command: self.command.clone(),
            argv: self.argv,
            config: config.clone(),
            seed: config.seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs,
            outputs,
            wall_clock: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            hash: String::new(),
        };
        manifest.hash = manifest.compute_hash();
        let name = RunManifest::file_name(&self.command);
        fs::write(self.out.join(&name), serde_json::to_string_pretty(&manifest)? + "\n")?;
        let sidecar = serde_json::to_string(&Sidecar {
            manifest: &name,
            hash: &manifest.hash,
        })? + "\n";
        for f in &manifest.outputs {
            fs::write(self.out.join(format!("{}.manifest", f.path)), &sidecar)?;
        }
        Ok(manifest)
    }
}
