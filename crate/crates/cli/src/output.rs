use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Errors that map to a dedicated exit status. Anything else is a numeric failure.
#[derive(Debug)]
pub enum Failure {
    Parse(String),
    Invalid(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 2,
            Failure::Invalid(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Parse(m) => write!(f, "parse error: {m}"),
            Failure::Invalid(m) => write!(f, "invalid input: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

pub fn parse_error(msg: impl Into<String>) -> anyhow::Error {
    Failure::Parse(msg.into()).into()
}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Failure::Invalid(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    e.downcast_ref::<Failure>().map(Failure::code).unwrap_or(4)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    Json,
    Csv,
}

#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub kind: Kind,
    pub body: String,
}

impl Artifact {
    pub fn json<T: Serialize>(name: &str, value: &T) -> Result<Self> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        Ok(Self { name: name.into(), kind: Kind::Json, body })
    }

    pub fn csv(name: &str, body: String) -> Self {
        Self { name: name.into(), kind: Kind::Csv, body }
    }
}

/// What a command hands back: files to write and non-fatal warnings.
#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub warnings: Vec<String>,
}

impl Outcome {
    pub fn push(&mut self, a: Artifact) {
        self.artifacts.push(a);
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    pub fn merge(&mut self, other: Outcome) {
        self.artifacts.extend(other.artifacts);
        self.warnings.extend(other.warnings);
    }
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    /// sha256 of the body; for CSV the timestamped header line is excluded.
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    threads: Option<usize>,
    files: Vec<FileEntry>,
    warnings: &'a [String],
}

pub fn digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

/// Writes every artifact plus `manifest.json` into `dir`.
pub fn write_all(dir: &Path, command: &str, seed: u64, threads: Option<usize>, out: &Outcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut files = Vec::new();
    let mut written = Vec::new();
    for a in &out.artifacts {
        let path = dir.join(&a.name);
        let text = match a.kind {
            Kind::Csv => format!("# tangency-lab {command} seed={seed} unix_time={stamp}\n{}", a.body),
            Kind::Json => a.body.clone(),
        };
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        files.push(FileEntry { name: a.name.clone(), sha256: digest(&a.body), bytes: a.body.len() });
        written.push(path);
    }
    let manifest = Manifest {
        tool: "tangency-lab",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        threads,
        files,
        warnings: &out.warnings,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    written.push(path);
    Ok(written)
}

/// Prints artifacts to standard output; several are separated by `# name` lines.
pub fn print_all(out: &Outcome) {
    let many = out.artifacts.len() > 1;
    for a in &out.artifacts {
        if many {
            println!("# {}", a.name);
        }
        print!("{}", a.body);
    }
}
