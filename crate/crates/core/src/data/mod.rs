//! Datasets, pools and image sources.

mod corrupt;
pub mod fixture;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::Image;

pub use corrupt::corrupt_gaussian;
pub use manifest::{
    export_dataset, export_pool, load_dataset, load_pool, read_manifest, write_manifest, DatasetMeta,
    ManifestRecord,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("cannot decode image {path}: {reason}")]
    UndecodableImage { path: PathBuf, reason: String },
    #[error("duplicate class `{0}` in manifest")]
    DuplicateClass(String),
    #[error("malformed manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
    #[error("unknown image reference `{0}`")]
    UnknownRef(String),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("image {path} has shape {actual:?}, expected {expected:?}")]
    BadShape {
        path: String,
        expected: [usize; 3],
        actual: [usize; 3],
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad metadata: {0}")]
    Meta(String),
}

/// Opaque handle to one image in some [`ImageSource`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ImageRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Resolves image references to decoded images.
pub trait ImageSource: Send + Sync {
    fn load(&self, r: &ImageRef) -> Result<Image, DataError>;

    fn load_many(&self, refs: &[ImageRef]) -> Result<Vec<Image>, DataError> {
        refs.iter().map(|r| self.load(r)).collect()
    }
}

/// PNG files under a root directory, converted to RGB and optionally resized
/// to a square resolution.
#[derive(Debug, Clone)]
pub struct FolderSource {
    root: PathBuf,
    resize_to: Option<usize>,
}

impl FolderSource {
    pub fn new(root: impl Into<PathBuf>, resize_to: Option<usize>) -> Self {
        Self {
            root: root.into(),
            resize_to,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ImageSource for FolderSource {
    fn load(&self, r: &ImageRef) -> Result<Image, DataError> {
        let path = self.root.join(r.as_str());
        if !path.exists() {
            return Err(DataError::MissingFile(path));
        }
        let img = decode_rgb(&path)?;
        Ok(match self.resize_to {
            Some(side) if img.height() != side || img.width() != side => {
                img.resize_bilinear(side, side)
            }
            _ => img,
        })
    }
}

pub(crate) fn decode_rgb(path: &Path) -> Result<Image, DataError> {
    let decoded = ::image::open(path).map_err(|e| DataError::UndecodableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(Image::new(3, h, w, data))
}

pub(crate) fn encode_rgb(img: &Image, path: &Path) -> Result<(), DataError> {
    assert_eq!(img.channels(), 3, "PNG export expects RGB");
    let (h, w) = (img.height(), img.width());
    let mut buf = ::image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|c| quantize(img.get(c, y, x)));
            buf.put_pixel(x as u32, y as u32, ::image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

/// Nearest 8-bit level.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Images held in memory, keyed by reference.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    images: BTreeMap<ImageRef, Image>,
}

impl MemorySource {
    pub fn insert(&mut self, r: ImageRef, img: Image) {
        self.images.insert(r, img);
    }
}

impl ImageSource for MemorySource {
    fn load(&self, r: &ImageRef) -> Result<Image, DataError> {
        self.images
            .get(r)
            .cloned()
            .ok_or_else(|| DataError::UnknownRef(r.0.clone()))
    }
}

/// A labeled evaluation set, decoded eagerly.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub class_names: Vec<String>,
    pub resolution: usize,
    pub refs: Vec<ImageRef>,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        class_names: Vec<String>,
        resolution: usize,
        refs: Vec<ImageRef>,
        images: Vec<Image>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        assert!(refs.len() == images.len() && images.len() == labels.len());
        let classes = class_names.len();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::BadLabel { label, classes });
        }
        for (r, img) in refs.iter().zip(&images) {
            if img.height() != resolution || img.width() != resolution {
                return Err(DataError::BadShape {
                    path: r.0.clone(),
                    expected: [img.channels(), resolution, resolution],
                    actual: img.shape(),
                });
            }
        }
        Ok(Self {
            class_names,
            resolution,
            refs,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_refs(&self) -> Vec<&Image> {
        self.images.iter().collect()
    }

    /// Digest over class names, labels and pixel content.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.class_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for (img, &label) in self.images.iter().zip(&self.labels) {
            h.update((label as u64).to_le_bytes());
            img.hash_into(&mut h);
        }
        hex::encode(h.finalize())
    }
}
