//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A [`PartViewer`] holds one generated part. The page asks it for RGBA
//! buffers of single segments, raw or with the defect mask overlaid, a
//! randomly augmented copy, or a copy translated into the metal intensity
//! domain by histogram matching.

use sdds_core::data::{augment, generate_corpus, generate_part, AugmentConfig, CorpusConfig, DefectType, ImageSample};
use sdds_core::engine::{seeded_rng, Tensor};
use sdds_core::models::{translate_domain, DomainTranslator};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Grayscale `(h, w, 1)` image to RGBA bytes, tinting pixels where `mask` is nonzero.
fn to_rgba(image: &Tensor, mask: Option<&Tensor>) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.data().len() * 4);
    for (i, &v) in image.data().iter().enumerate() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match mask.map(|m| m.data()[i]) {
            Some(c) if c > 0.0 => out.extend_from_slice(&[g / 2 + 127, g / 2, g / 2, 255]),
            _ => out.extend_from_slice(&[g, g, g, 255]),
        }
    }
    out
}

#[wasm_bindgen]
pub struct PartViewer {
    segments: Vec<ImageSample>,
    size: usize,
    metal: DomainTranslator,
}

#[wasm_bindgen]
impl PartViewer {
    /// Generates one rubber part of `segments` views. Always defective, so
    /// there is something to look at.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, segments: usize) -> Result<PartViewer, JsError> {
        let mut cfg = CorpusConfig::target(1, seed);
        cfg.segments_per_part = segments;
        let part = generate_part(&cfg.part_specs()[0]).map_err(js_err)?;
        // Reference histogram from a few metal parts.
        let metal = generate_corpus(&CorpusConfig::industrial(2, seed ^ 0x6d65)).map_err(js_err)?;
        let metal = DomainTranslator::histogram_match(metal.samples.iter().map(|s| &s.image));
        Ok(PartViewer { size: cfg.segment_size, segments: part.segments, metal })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn count(&self) -> usize {
        self.segments.len()
    }

    /// Defect class of segment `i`: 0 for intact.
    pub fn label(&self, i: usize) -> u8 {
        self.segments.get(i).map_or(0, |s| s.label)
    }

    pub fn class_name(&self, i: usize) -> String {
        DefectType::label_names().swap_remove(self.label(i) as usize)
    }

    pub fn segment(&self, i: usize, overlay: bool) -> Result<Vec<u8>, JsError> {
        let s = self.get(i)?;
        Ok(to_rgba(&s.image, if overlay { s.mask.as_ref() } else { None }))
    }

    /// Random flip, zoom and shift of segment `i`; the mask follows the image.
    pub fn augmented(&self, i: usize, seed: u64, overlay: bool) -> Result<Vec<u8>, JsError> {
        let mut rng = seeded_rng(seed);
        let a = augment(self.get(i)?, &AugmentConfig::default(), &mut rng);
        Ok(to_rgba(&a.image, if overlay { a.mask.as_ref() } else { None }))
    }

    /// Segment `i` histogram-matched to the metal corpus.
    pub fn as_metal(&self, i: usize) -> Result<Vec<u8>, JsError> {
        Ok(to_rgba(&translate_domain(&self.get(i)?.image, &self.metal), None))
    }
}

impl PartViewer {
    fn get(&self, i: usize) -> Result<&ImageSample, JsError> {
        self.segments.get(i).ok_or_else(|| JsError::new(&format!("no segment {i}")))
    }
}
