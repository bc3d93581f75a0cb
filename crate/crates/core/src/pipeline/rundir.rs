//! On-disk layout of a run.
//!
//! ```text
//! run/
//!   01_ingest/   dataset.jsonl meta.json
//!   02_embed/    embeddings.jsonl
//!   round_1/
//!     03_train/ 04_cluster/ 05_explain/ 06_augment/ 06_select/ 07_retrain/
//!   config.toml report.json report.txt *.csv manifest.json
//! ```
//!
//! Each stage writes its marker file last; a stage counts as done when the
//! marker exists.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Embed,
    Train,
    Cluster,
    Explain,
    Augment,
    Select,
    Retrain,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Ingest => "01_ingest",
            Stage::Embed => "02_embed",
            Stage::Train => "03_train",
            Stage::Cluster => "04_cluster",
            Stage::Explain => "05_explain",
            Stage::Augment => "06_augment",
            Stage::Select => "06_select",
            Stage::Retrain => "07_retrain",
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            Stage::Ingest => "meta.json",
            Stage::Embed => "embeddings.jsonl",
            Stage::Train => "metrics.json",
            Stage::Cluster => "selected.json",
            Stage::Explain => "traces.json",
            Stage::Augment => "synthetic.jsonl",
            Stage::Select => "selection.json",
            Stage::Retrain => "metrics.json",
        }
    }

    pub fn per_round(self) -> bool {
        !matches!(self, Stage::Ingest | Stage::Embed)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Train => "train",
            Stage::Cluster => "cluster",
            Stage::Explain => "explain",
            Stage::Augment => "augment",
            Stage::Select => "select",
            Stage::Retrain => "retrain",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: Stage, round: usize) -> PathBuf {
        if stage.per_round() {
            self.root.join(format!("round_{round}")).join(stage.dir_name())
        } else {
            self.root.join(stage.dir_name())
        }
    }

    /// Creates (or empties) the stage directory.
    pub fn begin(&self, stage: Stage, round: usize) -> Result<PathBuf> {
        let dir = self.stage_dir(stage, round);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    pub fn is_done(&self, stage: Stage, round: usize) -> bool {
        self.stage_dir(stage, round).join(stage.marker()).is_file()
    }

    /// The stage directory, or a missing-stage error naming the stage.
    pub fn require(&self, stage: Stage, round: usize) -> Result<PathBuf> {
        let dir = self.stage_dir(stage, round);
        if self.is_done(stage, round) {
            Ok(dir)
        } else {
            let name = if stage.per_round() {
                format!("{stage} (round {round})")
            } else {
                stage.to_string()
            };
            Err(Error::MissingStage { stage: name, dir })
        }
    }

    /// Rounds that have at least a training stage, ascending.
    pub fn rounds(&self) -> Vec<usize> {
        let mut out: Vec<usize> = fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                e.file_name()
                    .to_str()
                    .and_then(|n| n.strip_prefix("round_"))
                    .and_then(|k| k.parse().ok())
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Sha256 of every file under the run, keyed by relative path.
    pub fn manifest(&self) -> Result<Vec<ManifestEntry>> {
        let mut entries = Vec::new();
        collect_files(&self.root, &self.root, &mut entries)?;
        entries.retain(|e| e.path != MANIFEST);
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(entries)
    }

    pub fn write_manifest(&self) -> Result<()> {
        let m = self.manifest()?;
        write_json(&self.root.join(MANIFEST), &m)
    }
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<ManifestEntry>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push(ManifestEntry {
                path: rel,
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            });
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_markers() {
        let tmp = tempfile::tempdir().unwrap();
        let rd = RunDir::create(tmp.path().join("run")).unwrap();
        assert!(rd.stage_dir(Stage::Embed, 3).ends_with("02_embed"));
        assert!(rd.stage_dir(Stage::Explain, 2).ends_with("round_2/05_explain"));
        let err = rd.require(Stage::Cluster, 1).unwrap_err();
        assert!(err.to_string().contains("cluster"));
        let dir = rd.begin(Stage::Cluster, 1).unwrap();
        assert!(rd.require(Stage::Cluster, 1).is_err());
        write_json(&dir.join("selected.json"), &Vec::<u8>::new()).unwrap();
        assert!(rd.require(Stage::Cluster, 1).is_ok());
        assert_eq!(rd.rounds(), vec![1]);
    }

    #[test]
    fn manifest_hashes_files() {
        let tmp = tempfile::tempdir().unwrap();
        let rd = RunDir::create(tmp.path()).unwrap();
        write_text(&tmp.path().join("a.txt"), "abc").unwrap();
        let d = rd.begin(Stage::Train, 1).unwrap();
        write_text(&d.join("metrics.json"), "{}").unwrap();
        rd.write_manifest().unwrap();
        let m: Vec<ManifestEntry> = read_json(&tmp.path().join(MANIFEST)).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].path, "a.txt");
        assert_eq!(
            m[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(m[1].path, "round_1/03_train/metrics.json");
    }
}
