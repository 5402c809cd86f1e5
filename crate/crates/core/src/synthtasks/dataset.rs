//! Dataset directories: `manifest.json` plus one text file per distinct cloud.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::pointcloud::{read_cloud, write_cloud, PointCloud, RigidTransform};
use crate::policy::{DemonstrationRecord, Phase};

pub const DATASET_FORMAT: &str = "genreg-dataset";
pub const DATASET_VERSION: u64 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: String,
    pub seed: u64,
    pub records: Vec<DemonstrationRecord>,
}

impl Dataset {
    pub fn episodes(&self) -> usize {
        self.records.iter().map(|r| r.episode + 1).max().unwrap_or(0)
    }

    pub fn by_phase(&self, phases: &[Phase]) -> Vec<&DemonstrationRecord> {
        self.records.iter().filter(|r| phases.contains(&r.phase)).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u64,
    task: String,
    seed: u64,
    vocabulary: Vec<String>,
    records: Vec<ManifestRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    episode: usize,
    seed: u64,
    phase: String,
    instruction_id: usize,
    instruction: String,
    cloud_a: String,
    cloud_b: String,
    transform_a: RigidTransform,
    transform_b: RigidTransform,
}

/// Writes `dataset` under `dir`, creating it if needed. Identical clouds
/// are stored once.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let clouds_dir = dir.join("clouds");
    std::fs::create_dir_all(&clouds_dir).map_err(|e| Error::io(&clouds_dir, e))?;
    let vocab = Vocabulary::standard();
    let mut written: Vec<(&PointCloud, String)> = Vec::new();
    let mut records = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        records.push(ManifestRecord {
            episode: r.episode,
            seed: dataset.seed.wrapping_add(r.episode as u64),
            phase: r.phase.name().to_string(),
            instruction_id: r.instruction_id,
            instruction: vocab.phrase(r.instruction_id)?.to_string(),
            cloud_a: store_cloud(dir, &r.cloud_a, &mut written)?,
            cloud_b: store_cloud(dir, &r.cloud_b, &mut written)?,
            transform_a: r.transform_a,
            transform_b: r.transform_b,
        });
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        task: dataset.task.clone(),
        seed: dataset.seed,
        vocabulary: vocab.phrases().to_vec(),
        records,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn store_cloud<'a>(dir: &Path, cloud: &'a PointCloud, written: &mut Vec<(&'a PointCloud, String)>) -> Result<String> {
    if let Some((_, name)) = written.iter().find(|(c, _)| *c == cloud) {
        return Ok(name.clone());
    }
    let name = format!("clouds/cloud_{:04}.txt", written.len());
    write_cloud(dir.join(&name), cloud)?;
    written.push((cloud, name.clone()));
    Ok(name)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::format(&path, "missing `version` field"))?;
    if version != DATASET_VERSION {
        return Err(Error::Version { path, found: version, expected: DATASET_VERSION });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::format(&path, format!("unexpected format tag `{}`", manifest.format)));
    }
    let vocab = Vocabulary::standard();
    if manifest.vocabulary != vocab.phrases() {
        return Err(Error::format(&path, "dataset vocabulary differs from the standard vocabulary"));
    }
    let mut cache: Vec<(String, PointCloud)> = Vec::new();
    let mut load = |name: &str| -> Result<PointCloud> {
        if let Some((_, c)) = cache.iter().find(|(n, _)| n == name) {
            return Ok(c.clone());
        }
        let file: PathBuf = dir.join(name);
        let cloud = read_cloud(&file)?;
        cache.push((name.to_string(), cloud.clone()));
        Ok(cloud)
    };
    let mut records = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let phase = Phase::parse(&r.phase).map_err(|e| Error::format(&path, e.to_string()))?;
        if vocab.phrase(r.instruction_id)? != r.instruction {
            return Err(Error::format(&path, format!("instruction id {} does not match `{}`", r.instruction_id, r.instruction)));
        }
        records.push(DemonstrationRecord {
            episode: r.episode,
            phase,
            instruction_id: r.instruction_id,
            cloud_a: load(&r.cloud_a)?,
            cloud_b: load(&r.cloud_b)?,
            transform_a: r.transform_a,
            transform_b: r.transform_b,
        });
    }
    Ok(Dataset { task: manifest.task, seed: manifest.seed, records })
}
