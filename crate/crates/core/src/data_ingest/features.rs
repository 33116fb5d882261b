//! Precomputed region-feature store.
//!
//! A store is a directory holding `manifest.json`, which maps each image id
//! to `{file, n_objects, dim}`, plus one binary file per image containing a
//! row-major `n_objects × dim` matrix of little-endian `f32`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MdstError, Result};
use crate::tensor::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Region descriptor width of the standard bottom-up store.
pub const STANDARD_DIM: usize = 2048;
/// Objects kept per image in the standard store.
pub const STANDARD_OBJECTS: usize = 36;

#[derive(Clone, Debug, PartialEq)]
pub struct RawRegionFeatures {
    pub image_id: String,
    /// `N × D_raw` region descriptors.
    pub features: Matrix,
}

impl RawRegionFeatures {
    pub fn new(image_id: impl Into<String>, features: Matrix) -> Result<Self> {
        let image_id = image_id.into();
        if features.rows() == 0 {
            return Err(MdstError::FeatureFormat(format!("image {image_id}: no regions")));
        }
        if !features.is_finite() {
            return Err(MdstError::FeatureFormat(format!("image {image_id}: non-finite value")));
        }
        Ok(Self { image_id, features })
    }

    pub fn n_objects(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub n_objects: usize,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct FeatureStore {
    root: PathBuf,
    manifest: BTreeMap<String, ManifestEntry>,
}

impl FeatureStore {
    pub fn open(root: &Path) -> Result<Self> {
        let mpath = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| MdstError::io(&mpath, e))?;
        let manifest = serde_json::from_str(&text).map_err(|e| MdstError::Parse {
            path: mpath.clone(),
            message: e.to_string(),
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.manifest.contains_key(image_id)
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn entry(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.manifest.get(image_id)
    }

    pub fn load(&self, image_id: &str) -> Result<RawRegionFeatures> {
        let entry = self
            .manifest
            .get(image_id)
            .ok_or_else(|| MdstError::FeatureLookup(image_id.to_string()))?;
        let path = self.root.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| MdstError::io(&path, e))?;
        let expected = entry.n_objects * entry.dim * 4;
        if entry.dim == 0 || bytes.len() != expected {
            return Err(MdstError::FeatureFormat(format!(
                "image {image_id}: {} bytes on disk, manifest declares {}x{} ({expected} bytes)",
                bytes.len(),
                entry.n_objects,
                entry.dim
            )));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        RawRegionFeatures::new(image_id, Matrix::from_vec(entry.n_objects, entry.dim, data)?)
    }

    /// Writes `features` as a new store under `root`, replacing any manifest there.
    pub fn write<'a>(root: &Path, features: impl IntoIterator<Item = &'a RawRegionFeatures>) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| MdstError::io(root, e))?;
        let mut manifest = BTreeMap::new();
        for f in features {
            let file = format!("{}.bin", sanitize(&f.image_id));
            let path = root.join(&file);
            let mut bytes = Vec::with_capacity(f.features.len() * 4);
            for &x in f.features.data() {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
            std::fs::write(&path, bytes).map_err(|e| MdstError::io(&path, e))?;
            manifest.insert(
                f.image_id.clone(),
                ManifestEntry {
                    file,
                    n_objects: f.n_objects(),
                    dim: f.dim(),
                },
            );
        }
        let mpath = root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        std::fs::write(&mpath, json).map_err(|e| MdstError::io(&mpath, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Opens the store at `path` and loads one image.
pub fn load_region_features(path: &Path, image_id: &str) -> Result<RawRegionFeatures> {
    FeatureStore::open(path)?.load(image_id)
}
