//! Dataset sources: generated in memory, or read back from a directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pointprobe::geometry::PointCloud;
use pointprobe::model::{generate_dataset, DatasetSpec, ShapeClass, Split, SyntheticDataset};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};

pub const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub points: usize,
    pub classes: Vec<ShapeClass>,
    pub samples: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub label: usize,
    pub class: ShapeClass,
    pub split: Split,
    pub points: usize,
}

pub fn spec(cfg: &RunConfig, seed: u64) -> DatasetSpec {
    DatasetSpec {
        classes: cfg.data.classes.clone(),
        per_class: cfg.data.per_class,
        test_per_class: cfg.data.test_per_class,
        points: cfg.data.points,
        seed,
    }
}

/// The dataset named by the config. Directory sources without a manifest
/// yield unclassed test clouds.
pub fn load(cfg: &RunConfig, seed: u64) -> anyhow::Result<SyntheticDataset> {
    match cfg.data.source {
        DataSource::Synthetic => Ok(generate_dataset(&spec(cfg, seed))?),
        DataSource::Directory => {
            let dir = cfg.data.dir.as_deref().expect("validated");
            load_dir(dir)
        }
    }
}

pub fn load_dir(dir: &Path) -> anyhow::Result<SyntheticDataset> {
    let manifest = dir.join(MANIFEST);
    if manifest.exists() {
        let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(&manifest)?)
            .with_context(|| format!("reading {}", manifest.display()))?;
        let mut samples = Vec::with_capacity(m.samples.len());
        for e in &m.samples {
            let cloud = PointCloud::load(&dir.join(&e.file)).with_context(|| format!("reading {}", e.file))?;
            if cloud.len() != e.points {
                bail!("{}: {} points, manifest says {}", e.file, cloud.len(), e.points);
            }
            samples.push(cloud.with_label(e.label).with_id(e.id.clone()));
        }
        return Ok(SyntheticDataset {
            classes: m.classes,
            splits: m.samples.iter().map(|e| e.split).collect(),
            samples,
            seed: m.seed,
        });
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("{} holds no {MANIFEST} and no .txt clouds", dir.display());
    }
    let samples = files
        .iter()
        .map(|f| PointCloud::load(f).with_context(|| format!("reading {}", f.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        classes: vec![],
        splits: vec![Split::Test; samples.len()],
        samples,
        seed: 0,
    })
}

/// Writes every cloud as text plus the manifest.
pub fn write_dir(data: &SyntheticDataset, points: usize, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for (k, (cloud, split)) in data.samples.iter().zip(&data.splits).enumerate() {
        let id = pointprobe::metrics::sample_id(cloud, k);
        let file = format!("{id}.txt");
        let label = cloud.label.context("generated cloud without label")?;
        cloud.save(&dir.join(&file))?;
        written.push(PathBuf::from(&file));
        entries.push(ManifestEntry {
            id,
            file,
            label,
            class: data.classes[label],
            split: *split,
            points: cloud.len(),
        });
    }
    let manifest = DatasetManifest {
        seed: data.seed,
        points,
        classes: data.classes.clone(),
        samples: entries,
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    written.push(PathBuf::from(MANIFEST));
    Ok(written)
}
