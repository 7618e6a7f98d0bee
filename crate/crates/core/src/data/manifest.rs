//! Dataset directories: PGM triples plus a `manifest.csv` with one line per
//! sample, `index,clean_path,noisy_path,label_path,sigma,seed`. Paths are
//! relative to the directory; `-` marks a missing file.

use std::fs;
use std::path::{Path, PathBuf};

use super::{load_pgm, save_pgm, ImageSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub clean: Option<String>,
    pub noisy: String,
    pub label: Option<String>,
    pub sigma: f64,
    pub seed: u64,
}

impl ManifestEntry {
    fn line(&self) -> String {
        let opt = |p: &Option<String>| p.clone().unwrap_or_else(|| "-".into());
        format!(
            "{},{},{},{},{},{}",
            self.index,
            opt(&self.clean),
            self.noisy,
            opt(&self.label),
            self.sigma,
            self.seed
        )
    }
}

/// A sample read back from disk; clean images and labels are optional.
#[derive(Clone, Debug)]
pub struct LoadedSample {
    pub entry: ManifestEntry,
    pub clean: Option<Tensor>,
    pub noisy: Tensor,
    pub label: Option<Tensor>,
}

/// Writes `samples` as PGM triples and a manifest into `dir`.
pub fn write_dataset(dir: &Path, samples: &[ImageSample]) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let entry = ManifestEntry {
            index: i,
            clean: Some(format!("clean_{i:04}.pgm")),
            noisy: format!("noisy_{i:04}.pgm"),
            label: Some(format!("label_{i:04}.pgm")),
            sigma: s.sigma,
            seed: s.seed,
        };
        save_pgm(&s.clean, dir.join(entry.clean.as_ref().unwrap()))?;
        save_pgm(&s.noisy, dir.join(&entry.noisy))?;
        save_pgm(&s.label, dir.join(entry.label.as_ref().unwrap()))?;
        manifest.push_str(&entry.line());
        manifest.push('\n');
        entries.push(entry);
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut entries = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let pos = offset;
        offset += line.len();
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::format("manifest", pos, format!("{msg}: `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let opt = |s: &str| (s != "-" && !s.is_empty()).then(|| s.to_string());
        entries.push(ManifestEntry {
            index: f[0].parse().map_err(|_| bad("bad index"))?,
            clean: opt(f[1]),
            noisy: f[2].to_string(),
            label: opt(f[3]),
            sigma: f[4].parse().map_err(|_| bad("bad sigma"))?,
            seed: f[5].parse().map_err(|_| bad("bad seed"))?,
        });
    }
    Ok(entries)
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

/// Loads every manifest entry. A listed clean or label file that does not
/// exist is reported as absent rather than as an error.
pub fn load_dataset(dir: &Path) -> Result<Vec<LoadedSample>> {
    read_manifest(dir)?
        .into_iter()
        .map(|entry| {
            let optional = |rel: &Option<String>| -> Result<Option<Tensor>> {
                match rel {
                    Some(r) if resolve(dir, r).exists() => load_pgm(resolve(dir, r)).map(Some),
                    _ => Ok(None),
                }
            };
            Ok(LoadedSample {
                clean: optional(&entry.clean)?,
                noisy: load_pgm(resolve(dir, &entry.noisy))?,
                label: optional(&entry.label)?,
                entry,
            })
        })
        .collect()
}
