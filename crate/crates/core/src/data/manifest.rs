//! Manifest files: UTF-8, one `<class_name>\t<relative_path>` record per line.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{decode_rgb, encode_rgb, DataError, FolderSource, ImageRef, LabeledDataset};
use crate::selection::{OODPool, PoolClass};

pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub class_name: String,
    pub path: String,
}

/// Sidecar written next to a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub class_names: Vec<String>,
    pub resolution: usize,
    pub count: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (class, rel) = line.split_once('\t').ok_or_else(|| DataError::BadManifest {
            line: i + 1,
            reason: "expected `<class_name>\\t<relative_path>`".into(),
        })?;
        let class_name = class.trim();
        let rel = rel.trim();
        if class_name.is_empty() || rel.is_empty() {
            return Err(DataError::BadManifest {
                line: i + 1,
                reason: "empty class name or path".into(),
            });
        }
        out.push(ManifestRecord {
            class_name: class_name.to_string(),
            path: rel.to_string(),
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), DataError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.class_name);
        text.push('\t');
        text.push_str(&r.path);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Groups records by class in order of first appearance.
///
/// Each class must occupy one contiguous block, and two blocks may not carry
/// names that differ only in case or surrounding whitespace; either is
/// reported as a duplicate class.
fn group(records: &[ManifestRecord]) -> Result<Vec<(String, Vec<String>)>, DataError> {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for r in records {
        match groups.last_mut() {
            Some((name, paths)) if *name == r.class_name => paths.push(r.path.clone()),
            _ => {
                if !seen.insert(r.class_name.to_lowercase()) {
                    return Err(DataError::DuplicateClass(r.class_name.clone()));
                }
                groups.push((r.class_name.clone(), vec![r.path.clone()]));
            }
        }
    }
    Ok(groups)
}

/// Reads a pool manifest. Paths are checked for existence but nothing is
/// decoded until an image is selected.
pub fn load_pool(manifest: &Path, resize_to: Option<usize>) -> Result<OODPool, DataError> {
    let records = read_manifest(manifest)?;
    let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    for r in &records {
        let p = root.join(&r.path);
        if !p.exists() {
            return Err(DataError::MissingFile(p));
        }
    }
    let classes = group(&records)?
        .into_iter()
        .map(|(name, paths)| PoolClass {
            name,
            refs: paths.into_iter().map(ImageRef).collect(),
        })
        .collect();
    OODPool::new(classes, Arc::new(FolderSource::new(root, resize_to)))
        .map_err(|e| DataError::Meta(e.to_string()))
}

fn folder_name(class: &str) -> String {
    class
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Writes PNGs under `dir/<class>/`, plus `manifest.tsv` and `meta.json`.
/// Returns the manifest path.
pub fn export_dataset(dataset: &LabeledDataset, dir: &Path) -> Result<PathBuf, DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut records = Vec::with_capacity(dataset.len());
    let mut counters: HashMap<usize, usize> = HashMap::new();
    // Group by label so every class is one manifest block.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| dataset.labels[i]);
    for i in order {
        let label = dataset.labels[i];
        let class = &dataset.class_names[label];
        let sub = dir.join(folder_name(class));
        std::fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        let k = counters.entry(label).or_default();
        let rel = format!("{}/{:05}.png", folder_name(class), *k);
        *k += 1;
        encode_rgb(&dataset.images[i], &dir.join(&rel))?;
        records.push(ManifestRecord {
            class_name: class.clone(),
            path: rel,
        });
    }
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, &records)?;
    let meta = DatasetMeta {
        class_names: dataset.class_names.clone(),
        resolution: dataset.resolution,
        count: dataset.len(),
    };
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| DataError::Meta(e.to_string()))?;
    std::fs::write(&meta_path, json).map_err(io_err(&meta_path))?;
    Ok(manifest)
}

/// Decodes every pool image and writes it as a PNG under `dir/<class>/`,
/// plus a `manifest.tsv` in pool order. Returns the manifest path.
pub fn export_pool(pool: &OODPool, dir: &Path) -> Result<PathBuf, DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut records = Vec::with_capacity(pool.len());
    for class in pool.classes() {
        let folder = folder_name(&class.name);
        let sub = dir.join(&folder);
        std::fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        for (k, r) in class.refs.iter().enumerate() {
            let rel = format!("{folder}/{k:05}.png");
            encode_rgb(&pool.source().load(r)?, &dir.join(&rel))?;
            records.push(ManifestRecord {
                class_name: class.name.clone(),
                path: rel,
            });
        }
    }
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

/// Loads a labeled set from a manifest and its `meta.json` sidecar.
pub fn load_dataset(manifest: &Path) -> Result<LabeledDataset, DataError> {
    let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let meta_path = root.join(META_FILE);
    if !meta_path.exists() {
        return Err(DataError::MissingFile(meta_path));
    }
    let meta: DatasetMeta = serde_json::from_slice(
        &std::fs::read(&meta_path).map_err(io_err(&meta_path))?,
    )
    .map_err(|e| DataError::Meta(e.to_string()))?;
    let index: HashMap<&str, usize> = meta
        .class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let records = read_manifest(manifest)?;
    group(&records)?;
    let mut refs = Vec::new();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        let label = *index
            .get(r.class_name.as_str())
            .ok_or_else(|| DataError::Meta(format!("class `{}` not in meta.json", r.class_name)))?;
        let p = root.join(&r.path);
        if !p.exists() {
            return Err(DataError::MissingFile(p));
        }
        images.push(decode_rgb(&p)?);
        refs.push(ImageRef(r.path));
        labels.push(label);
    }
    if images.len() != meta.count {
        return Err(DataError::Meta(format!(
            "meta.json declares {} samples, manifest has {}",
            meta.count,
            images.len()
        )));
    }
    LabeledDataset::new(meta.class_names, meta.resolution, refs, images, labels)
}
