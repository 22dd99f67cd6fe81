use std::collections::HashSet;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageSample, LabeledSet};
use crate::engine::Tensor;
use crate::error::{io_err, Result, SddsError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Image path relative to the dataset directory.
    pub image: String,
    pub part_id: u32,
    pub segment: u32,
    pub label: u8,
    pub mask: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub label_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    pub generator_version: String,
}

impl LabeledSet for DatasetManifest {
    fn keys(&self) -> Vec<(u32, u8)> {
        self.entries.iter().map(|e| (e.part_id, e.label)).collect()
    }

    fn select(&self, indices: &[usize]) -> Self {
        Self { entries: indices.iter().map(|&i| self.entries[i].clone()).collect(), ..self.clone() }
    }
}

impl DatasetManifest {
    /// Label-set and uniqueness checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            let id = format!("{} (part {}, segment {})", e.image, e.part_id, e.segment);
            if e.label as usize >= self.label_names.len() {
                return Err(SddsError::Manifest { entry: id, reason: format!("label {} outside declared set", e.label) });
            }
            if !seen.insert((e.part_id, e.segment)) {
                return Err(SddsError::Manifest { entry: id, reason: "duplicate (part id, segment)".into() });
            }
        }
        Ok(())
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_png(path: &Path, w: usize, h: usize, pixels: impl Iterator<Item = u8>) -> Result<()> {
    let buf: Vec<u8> = pixels.collect();
    let img = GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to w*h");
    img.save(path).map_err(|source| SddsError::Image { path: path.to_path_buf(), source })
}

/// Writes `images/*.png`, `masks/*.png` (raw class ids) and `manifest.json`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(io_err(dir.join(sub)))?;
    }
    let mut entries = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let stem = format!("p{:05}_s{:03}.png", s.part_id, s.segment);
        let image = format!("images/{stem}");
        save_png(&dir.join(&image), s.width(), s.height(), s.image.data().iter().map(|&v| to_u8(v)))?;
        let mask = match &s.mask {
            Some(m) => {
                let rel = format!("masks/{stem}");
                save_png(&dir.join(&rel), s.width(), s.height(), m.data().iter().map(|&v| v as u8))?;
                Some(rel)
            }
            None => None,
        };
        entries.push(ManifestEntry { image, part_id: s.part_id, segment: s.segment, label: s.label, mask });
    }
    let manifest = DatasetManifest {
        name: dataset.name.clone(),
        label_names: dataset.label_names.clone(),
        entries,
        seed: dataset.seed,
        generator_version: dataset.generator_version.clone(),
    };
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(io_err(&path))?;
    Ok(manifest)
}

fn load_png(dir: &Path, rel: &str, entry: &str) -> Result<GrayImage> {
    let path = dir.join(rel);
    if !path.is_file() {
        return Err(SddsError::Manifest { entry: entry.to_string(), reason: format!("missing file {}", path.display()) });
    }
    image::open(&path)
        .map(|i| i.into_luma8())
        .map_err(|source| SddsError::Image { path, source })
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let img = load_png(dir, &e.image, &e.image)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = img.pixels().map(|Luma([v])| f64::from(*v) / 255.0).collect();
        let mask = match &e.mask {
            Some(rel) => {
                let m = load_png(dir, rel, &e.image)?;
                if (m.width() as usize, m.height() as usize) != (w, h) {
                    return Err(SddsError::Manifest { entry: e.image.clone(), reason: "mask size differs from image".into() });
                }
                let data: Vec<f64> = m.pixels().map(|Luma([v])| f64::from(*v)).collect();
                if data.iter().any(|&v| v as usize >= manifest.label_names.len()) {
                    return Err(SddsError::Manifest { entry: e.image.clone(), reason: "mask class outside declared set".into() });
                }
                Some(Tensor::new(vec![h, w], data)?)
            }
            None => None,
        };
        samples.push(ImageSample {
            image: Tensor::new(vec![h, w, 1], pixels)?,
            part_id: e.part_id,
            segment: e.segment,
            label: e.label,
            mask,
        });
    }
    Ok(Dataset {
        name: manifest.name,
        label_names: manifest.label_names,
        samples,
        seed: manifest.seed,
        generator_version: manifest.generator_version,
    })
}
