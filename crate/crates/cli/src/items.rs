use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use facepipe_core::embedding::content_hash;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// File name of the per-command manifest.
pub const MANIFEST: &str = "manifest.json";

/// An input file named `<subject>_<scan>.<ext>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Item {
    pub subject: String,
    pub scan: String,
    pub path: PathBuf,
}

impl Item {
    /// `<subject>_<scan>`; the subject ends at the first underscore.
    pub fn stem(&self) -> String {
        format!("{}_{}", self.subject, self.scan)
    }

    pub fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Splits `<subject>_<scan>` at the first underscore.
pub fn parse_stem(stem: &str) -> Option<(String, String)> {
    let (subject, scan) = stem.split_once('_')?;
    (!subject.is_empty() && !scan.is_empty()).then(|| (subject.to_owned(), scan.to_owned()))
}

/// Every `*.ext` file in `dir`, sorted by (subject, scan). Files that do not follow
/// the naming convention are returned separately.
pub fn list_items(dir: &Path, ext: &str) -> Result<(Vec<Item>, Vec<PathBuf>)> {
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading input directory {}", dir.display()))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            paths.push(path);
        }
    }
    paths.sort();
    let mut items = Vec::new();
    let mut bad = Vec::new();
    for path in paths {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        match stem.as_deref().and_then(parse_stem) {
            Some((subject, scan)) => items.push(Item {
                subject,
                scan,
                path,
            }),
            None => bad.push(path),
        }
    }
    items.sort();
    if items.is_empty() && bad.is_empty() {
        bail!("no inputs: {} holds no .{ext} files", dir.display());
    }
    Ok((items, bad))
}

/// Seed for one item, independent of processing order and worker count.
pub fn item_seed(master: u64, stage: &str, name: &str) -> u64 {
    let hash = content_hash(format!("{master}/{stage}/{name}").as_bytes());
    u64::from_str_radix(&hash[..16], 16).expect("hex digest")
}

/// Maps `f` over `items` on `workers` threads, keeping input order.
pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("starting worker pool")?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Output file name, relative to the output directory.
    pub output: String,
    pub subject: String,
    pub scan: String,
    /// Input file name the output was derived from.
    pub source: String,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub entries: Vec<ManifestEntry>,
    /// Inputs that produced no output, with the reason.
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub input: String,
    pub error: String,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            entries: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn fail(&mut self, input: String, error: String) {
        log::error!("{input}: {error}");
        self.failures.push(Failure { input, error });
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        Ok(Some(
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        ))
    }
}
