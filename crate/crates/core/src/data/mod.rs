//! Synthetic segment-wise part capture, labeling, balancing, splitting,
//! augmentation and the on-disk dataset format.

mod augment;
mod balance;
mod generator;
mod io;

pub use augment::{apply_transform, augment, AugmentConfig, Transform};
pub use balance::{balance_undersample, split_by_part, LabeledSet};
pub use generator::{
    generate_corpus, generate_generic_corpus, generate_part, CorpusConfig, Defect, DefectType, GenericCorpusConfig,
    PartRecord, PartSurfaceSpec, SurfaceNoise, TextureFamily, GENERATOR_VERSION,
};
pub use io::{read_dataset, read_manifest, write_dataset, DatasetManifest, ManifestEntry, MANIFEST_FILE};

use crate::engine::Tensor;

/// One captured segment.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    /// `(h, w, 1)` grayscale in `[0, 1]`.
    pub image: Tensor,
    pub part_id: u32,
    pub segment: u32,
    /// 0 is non-defective, `1..=K` defect types.
    pub label: u8,
    /// `(h, w)` per-pixel class ids; nonzero exactly where a defect is.
    pub mask: Option<Tensor>,
}

impl ImageSample {
    pub fn is_defective(&self) -> bool {
        self.label > 0
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}

/// An in-memory labeled collection of segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub label_names: Vec<String>,
    pub samples: Vec<ImageSample>,
    pub seed: u64,
    pub generator_version: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn defective_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_defective()).count()
    }

    pub fn part_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.part_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn with_samples(&self, samples: Vec<ImageSample>) -> Self {
        Self { samples, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Self {
        Self {
            name: self.name.clone(),
            label_names: self.label_names.clone(),
            samples: Vec::new(),
            seed: self.seed,
            generator_version: self.generator_version.clone(),
        }
    }
}

impl LabeledSet for Dataset {
    fn keys(&self) -> Vec<(u32, u8)> {
        self.samples.iter().map(|s| (s.part_id, s.label)).collect()
    }

    fn select(&self, indices: &[usize]) -> Self {
        self.with_samples(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }
}
