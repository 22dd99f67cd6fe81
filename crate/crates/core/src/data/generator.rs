//! Procedural textured parts.
//!
//! A part's surface is rendered as one band (`band_height × circumference`),
//! defects are painted into it together with a ground-truth class mask, and
//! the band is cut into overlapping segments the way a rotating part passes a
//! fixed camera.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageSample};
use crate::engine::{SeededRng, Tensor};
use crate::error::{Result, SddsError};

pub const GENERATOR_VERSION: &str = "sdds-synth-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFamily {
    /// Low-contrast molded-rubber grain (the inspection target).
    Rubber,
    /// Striated, brighter metal-like surface (the industrial source domain).
    Metal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectType {
    Nonfill = 1,
    JoiningMark = 2,
    Dirt = 3,
}

impl DefectType {
    pub const ALL: [DefectType; 3] = [DefectType::Nonfill, DefectType::JoiningMark, DefectType::Dirt];

    pub fn class_id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectType::Nonfill => "nonfill",
            DefectType::JoiningMark => "joining_mark",
            DefectType::Dirt => "dirt",
        }
    }

    /// Label names in class-id order, background first.
    pub fn label_names() -> Vec<String> {
        std::iter::once("ok").chain(Self::ALL.iter().map(|d| d.name())).map(String::from).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub kind: DefectType,
    /// `(row, column)` in band coordinates.
    pub center: (usize, usize),
    /// Extent of the defect's bounding box in pixels.
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceNoise {
    /// Mean surface intensity.
    pub base: f64,
    /// Amplitude of the low-frequency blotches.
    pub blotch: f64,
    /// Amplitude of the per-pixel grain.
    pub grain: f64,
    /// Intensity change painted by a defect at full strength.
    pub defect_contrast: f64,
}

impl SurfaceNoise {
    pub fn for_family(family: TextureFamily) -> Self {
        match family {
            TextureFamily::Rubber => Self { base: 0.38, blotch: 0.07, grain: 0.05, defect_contrast: 0.14 },
            TextureFamily::Metal => Self { base: 0.58, blotch: 0.05, grain: 0.04, defect_contrast: 0.25 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSurfaceSpec {
    pub part_id: u32,
    pub family: TextureFamily,
    /// Number of segments `S` captured around the part.
    pub segments: usize,
    /// Square segment edge length in pixels; also the band height.
    pub segment_size: usize,
    /// Fraction of columns shared by consecutive segments.
    pub overlap: f64,
    pub circumference: usize,
    pub band_height: usize,
    pub defects: Vec<Defect>,
    pub noise: SurfaceNoise,
    pub seed: u64,
}

impl PartSurfaceSpec {
    /// Spec with consistent band geometry for `segments` segments of `size` pixels.
    pub fn new(part_id: u32, family: TextureFamily, segments: usize, size: usize, overlap: f64, seed: u64) -> Self {
        let mut spec = Self {
            part_id,
            family,
            segments,
            segment_size: size,
            overlap,
            circumference: 0,
            band_height: size,
            defects: Vec::new(),
            noise: SurfaceNoise::for_family(family),
            seed,
        };
        spec.circumference = spec.stride() * (segments.max(1) - 1) + size;
        spec
    }

    pub fn overlap_columns(&self) -> usize {
        (self.overlap * self.segment_size as f64).round() as usize
    }

    /// Column distance between the left edges of consecutive segments.
    pub fn stride(&self) -> usize {
        self.segment_size - self.overlap_columns()
    }

    pub fn segment_start(&self, s: usize) -> usize {
        s * self.stride()
    }

    pub fn validate(&self) -> Result<()> {
        let geo = |m: String| Err(SddsError::Geometry(m));
        if self.segments == 0 || self.segment_size < 8 {
            return geo(format!("{} segments of {} px", self.segments, self.segment_size));
        }
        if !(0.0..0.5).contains(&self.overlap) {
            return geo(format!("overlap {} outside [0, 0.5)", self.overlap));
        }
        if self.band_height != self.segment_size {
            return geo(format!("band height {} != segment size {}", self.band_height, self.segment_size));
        }
        let expected = self.stride() * (self.segments - 1) + self.segment_size;
        if self.circumference != expected {
            return geo(format!("circumference {} but {} segments need {expected}", self.circumference, self.segments));
        }
        for d in &self.defects {
            if d.size == 0 || d.size >= self.segment_size {
                return geo(format!("defect of size {} does not fit a {} px segment", d.size, self.segment_size));
            }
            if d.center.0 >= self.band_height || d.center.1 >= self.circumference {
                return geo(format!("defect center {:?} outside the band", d.center));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartRecord {
    pub part_id: u32,
    pub segments: Vec<ImageSample>,
}

/// Smooth lattice noise in roughly `[-1, 1]`.
struct ValueNoise {
    cell_y: f64,
    cell_x: f64,
    cols: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut SeededRng, height: usize, width: usize, cell_y: f64, cell_x: f64) -> Self {
        let rows = (height as f64 / cell_y).ceil() as usize + 2;
        let cols = (width as f64 / cell_x).ceil() as usize + 2;
        let grid = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { cell_y, cell_x, cols, grid }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        let fy = y as f64 / self.cell_y;
        let fx = x as f64 / self.cell_x;
        let (iy, ix) = (fy as usize, fx as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
        let g = |r: usize, c: usize| self.grid[r * self.cols + c];
        let top = g(iy, ix) * (1.0 - tx) + g(iy, ix + 1) * tx;
        let bot = g(iy + 1, ix) * (1.0 - tx) + g(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

/// Roughly normal noise from a sum of uniforms (variance 1).
fn gauss(rng: &mut SeededRng) -> f64 {
    (0..4).map(|_| rng.gen::<f64>()).sum::<f64>().mul_add(3f64.sqrt(), -2.0 * 3f64.sqrt())
}

struct Band {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    mask: Vec<u8>,
}

impl Band {
    fn new(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; height * width], mask: vec![0; height * width] }
    }
}

fn render_texture(band: &mut Band, family: TextureFamily, noise: &SurfaceNoise, rng: &mut SeededRng) {
    let (h, w) = (band.height, band.width);
    match family {
        TextureFamily::Rubber => {
            let coarse = ValueNoise::new(rng, h, w, 24.0, 24.0);
            let fine = ValueNoise::new(rng, h, w, 5.0, 5.0);
            for y in 0..h {
                for x in 0..w {
                    let v = noise.base
                        + noise.blotch * coarse.at(y, x)
                        + 0.5 * noise.blotch * fine.at(y, x)
                        + noise.grain * gauss(rng);
                    band.pixels[y * w + x] = v;
                }
            }
        }
        TextureFamily::Metal => {
            // Streaks run along the circumference: smooth along x, rough along y.
            let streaks = ValueNoise::new(rng, h, w, 1.5, 40.0);
            let sheen = ValueNoise::new(rng, h, w, 32.0, 64.0);
            let period = rng.gen_range(5.0..9.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for y in 0..h {
                let stripe = (std::f64::consts::TAU * y as f64 / period + phase).sin();
                for x in 0..w {
                    let v = noise.base
                        + 0.6 * noise.blotch * stripe
                        + noise.blotch * streaks.at(y, x)
                        + noise.blotch * sheen.at(y, x)
                        + noise.grain * gauss(rng);
                    band.pixels[y * w + x] = v;
                }
            }
        }
    }
}

/// Paints one defect: `delta` is added with per-pixel weight in `[0, 1]`;
/// pixels with weight ≥ 0.5 are marked in the mask.
fn paint(band: &mut Band, class: u8, delta: f64, pixels: impl IntoIterator<Item = (isize, isize, f64)>) {
    for (y, x, wgt) in pixels {
        if y < 0 || x < 0 || y as usize >= band.height || x as usize >= band.width {
            continue;
        }
        let i = y as usize * band.width + x as usize;
        band.pixels[i] += delta * wgt;
        if wgt >= 0.5 {
            band.mask[i] = class;
        }
    }
}

fn render_defect(band: &mut Band, family: TextureFamily, d: &Defect, contrast: f64, rng: &mut SeededRng) {
    let (cy, cx) = (d.center.0 as f64, d.center.1 as f64);
    let half = d.size as f64 / 2.0;
    let class = d.kind.class_id();
    let box_pixels = |pad: f64| {
        let r = (half + pad).ceil() as isize;
        let (y0, x0) = (cy as isize, cx as isize);
        (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (y0 + dy, x0 + dx)))
    };
    // Metal-family defects are rendered with inverted polarity so the two
    // domains differ in appearance as well as texture.
    let polarity = if family == TextureFamily::Metal { -1.0 } else { 1.0 };
    match d.kind {
        DefectType::Nonfill => {
            let (ry, rx) = (half * rng.gen_range(0.55..0.9), half);
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (s, c) = angle.sin_cos();
            let wobble: Vec<f64> = (0..6).map(|_| rng.gen_range(0.85..1.15)).collect();
            let pts: Vec<(isize, isize, f64)> = box_pixels(1.0)
                .filter_map(|(y, x)| {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                    let theta = v.atan2(u).rem_euclid(std::f64::consts::TAU);
                    let k = ((theta / std::f64::consts::TAU) * 6.0) as usize % 6;
                    let r = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt() / wobble[k];
                    let wgt = (1.0 - (r - 0.8) / 0.4).clamp(0.0, 1.0);
                    (wgt > 0.0).then_some((y, x, wgt))
                })
                .collect();
            paint(band, class, -contrast * polarity, pts);
        }
        DefectType::JoiningMark => {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let bend = rng.gen_range(-0.25..0.25);
            let (s, c) = angle.sin_cos();
            let pts: Vec<(isize, isize, f64)> = box_pixels(1.0)
                .filter_map(|(y, x)| {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let along = c * dx + s * dy;
                    let across = -s * dx + c * dy - bend * along * along / half.max(1.0);
                    if along.abs() > half {
                        return None;
                    }
                    let wgt = (1.0 - (across.abs() - 0.6) / 0.8).clamp(0.0, 1.0);
                    (wgt > 0.0).then_some((y, x, wgt))
                })
                .collect();
            paint(band, class, contrast * 1.1 * polarity, pts);
        }
        DefectType::Dirt => {
            let spots = rng.gen_range(3..=6);
            for _ in 0..spots {
                let sy = cy + rng.gen_range(-half * 0.7..=half * 0.7);
                let sx = cx + rng.gen_range(-half * 0.7..=half * 0.7);
                let rad = rng.gen_range(1.0..2.2);
                let pts: Vec<(isize, isize, f64)> = box_pixels(1.0)
                    .filter_map(|(y, x)| {
                        let dist = ((y as f64 - sy).powi(2) + (x as f64 - sx).powi(2)).sqrt();
                        let wgt = (1.0 - (dist - rad + 0.5)).clamp(0.0, 1.0);
                        (wgt > 0.0).then_some((y, x, wgt))
                    })
                    .collect();
                paint(band, class, -contrast * 1.3 * polarity, pts);
            }
        }
    }
}

/// Renders the part, injects its defects, slices the band into overlapping
/// segments and labels each segment from the ground-truth mask.
pub fn generate_part(spec: &PartSurfaceSpec) -> Result<PartRecord> {
    spec.validate()?;
    let mut rng = SeededRng::seed_from_u64(spec.seed);
    let mut band = Band::new(spec.band_height, spec.circumference);
    render_texture(&mut band, spec.family, &spec.noise, &mut rng);
    for d in &spec.defects {
        render_defect(&mut band, spec.family, d, spec.noise.defect_contrast, &mut rng);
    }
    let n = spec.segment_size;
    let classes = DefectType::ALL.len() + 1;
    let mut segments = Vec::with_capacity(spec.segments);
    for s in 0..spec.segments {
        let x0 = spec.segment_start(s);
        let mut image = Vec::with_capacity(n * n);
        let mut mask = Vec::with_capacity(n * n);
        let mut counts = vec![0usize; classes];
        for y in 0..n {
            let row = y * band.width + x0;
            image.extend(band.pixels[row..row + n].iter().map(|v| v.clamp(0.0, 1.0)));
            for &m in &band.mask[row..row + n] {
                counts[m as usize] += 1;
                mask.push(f64::from(m));
            }
        }
        // Dominant defect type by pixel count; ties go to the lower class id.
        let label = (1..classes)
            .filter(|&c| counts[c] > 0)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .unwrap_or(0) as u8;
        segments.push(ImageSample {
            image: Tensor::new(vec![n, n, 1], image)?,
            part_id: spec.part_id,
            segment: s as u32,
            label,
            mask: Some(Tensor::new(vec![n, n], mask)?),
        });
    }
    Ok(PartRecord { part_id: spec.part_id, segments })
}

/// Random corpus of parts from one texture family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub name: String,
    pub family: TextureFamily,
    pub parts: usize,
    pub segments_per_part: usize,
    pub segment_size: usize,
    pub overlap: f64,
    /// Probability that a part carries any defect.
    pub defective_part_rate: f64,
    /// Inclusive range of defects on a defective part.
    pub defects_per_part: (usize, usize),
    /// Inclusive range of defect sizes in pixels.
    pub defect_size: (usize, usize),
    pub noise: Option<SurfaceNoise>,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn target(parts: usize, seed: u64) -> Self {
        Self {
            name: "target".into(),
            family: TextureFamily::Rubber,
            parts,
            segments_per_part: 16,
            segment_size: 64,
            overlap: 0.1,
            defective_part_rate: 1.0,
            defects_per_part: (1, 3),
            defect_size: (7, 16),
            noise: None,
            seed,
        }
    }

    pub fn industrial(parts: usize, seed: u64) -> Self {
        Self { name: "industrial".into(), family: TextureFamily::Metal, ..Self::target(parts, seed) }
    }

    /// Part specs with randomly placed defects. Each defect lies wholly inside
    /// at least one segment; it may spill into a neighbor through the overlap.
    pub fn part_specs(&self) -> Vec<PartSurfaceSpec> {
        let mut rng = SeededRng::seed_from_u64(self.seed);
        (0..self.parts)
            .map(|i| {
                let mut spec = PartSurfaceSpec::new(
                    i as u32,
                    self.family,
                    self.segments_per_part,
                    self.segment_size,
                    self.overlap,
                    rng.gen(),
                );
                if let Some(noise) = &self.noise {
                    spec.noise = noise.clone();
                }
                if rng.gen_bool(self.defective_part_rate.clamp(0.0, 1.0)) {
                    let count = rng.gen_range(self.defects_per_part.0..=self.defects_per_part.1);
                    for _ in 0..count {
                        let size = rng.gen_range(self.defect_size.0..=self.defect_size.1);
                        let margin = size / 2 + 2;
                        let seg = rng.gen_range(0..self.segments_per_part);
                        let x0 = spec.segment_start(seg);
                        let row = rng.gen_range(margin..self.segment_size - margin);
                        let col = x0 + rng.gen_range(margin..self.segment_size - margin);
                        let kind = *DefectType::ALL.choose(&mut rng).expect("non-empty");
                        spec.defects.push(Defect { kind, center: (row, col), size });
                    }
                }
                spec
            })
            .collect()
    }
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Dataset> {
    let mut samples = Vec::new();
    for spec in cfg.part_specs() {
        samples.extend(generate_part(&spec)?.segments);
    }
    Ok(Dataset {
        name: cfg.name.clone(),
        label_names: DefectType::label_names(),
        samples,
        seed: cfg.seed,
        generator_version: GENERATOR_VERSION.into(),
    })
}

/// Broad many-class texture/shape corpus standing in for a generic
/// pre-training dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenericCorpusConfig {
    pub name: String,
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl GenericCorpusConfig {
    pub fn new(per_class: usize, seed: u64) -> Self {
        Self { name: "generic".into(), per_class, size: 64, seed }
    }
}

const GENERIC_CLASSES: [&str; 8] = [
    "plain",
    "dark_blob",
    "bright_blob",
    "line",
    "speckles",
    "ring",
    "stripes",
    "corner",
];

fn generic_image(class: usize, size: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut band = Band::new(size, size);
    let family = if rng.gen_bool(0.5) { TextureFamily::Rubber } else { TextureFamily::Metal };
    let noise = SurfaceNoise {
        base: rng.gen_range(0.25..0.75),
        blotch: rng.gen_range(0.02..0.1),
        grain: rng.gen_range(0.01..0.06),
        defect_contrast: 0.0,
    };
    render_texture(&mut band, family, &noise, rng);
    let contrast = rng.gen_range(0.05..0.3);
    let size_px = rng.gen_range(8..(size / 2).max(9));
    let m = size_px / 2 + 2;
    let center = (rng.gen_range(m..size - m), rng.gen_range(m..size - m));
    let defect = |kind| Defect { kind, center, size: size_px };
    let circle = |band: &mut Band, r_in: f64, r_out: f64, delta: f64| {
        let pts: Vec<(isize, isize, f64)> = (0..size)
            .flat_map(|y| (0..size).map(move |x| (y, x)))
            .filter_map(|(y, x)| {
                let d = ((y as f64 - center.0 as f64).powi(2) + (x as f64 - center.1 as f64).powi(2)).sqrt();
                (d >= r_in && d <= r_out).then_some((y as isize, x as isize, 1.0))
            })
            .collect();
        paint(band, 1, delta, pts);
    };
    match GENERIC_CLASSES[class] {
        "plain" => {}
        "dark_blob" => render_defect(&mut band, TextureFamily::Rubber, &defect(DefectType::Nonfill), contrast, rng),
        "bright_blob" => render_defect(&mut band, TextureFamily::Metal, &defect(DefectType::Nonfill), contrast, rng),
        "line" => {
            let fam = if rng.gen_bool(0.5) { TextureFamily::Rubber } else { TextureFamily::Metal };
            render_defect(&mut band, fam, &defect(DefectType::JoiningMark), contrast, rng)
        }
        "speckles" => {
            let fam = if rng.gen_bool(0.5) { TextureFamily::Rubber } else { TextureFamily::Metal };
            render_defect(&mut band, fam, &defect(DefectType::Dirt), contrast, rng)
        }
        "ring" => {
            let r = size_px as f64 / 2.0;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            circle(&mut band, r - 1.5, r, sign * contrast);
        }
        "stripes" => {
            let period = rng.gen_range(4.0..10.0);
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (s, c) = angle.sin_cos();
            for y in 0..size {
                for x in 0..size {
                    let t = (c * x as f64 + s * y as f64) / period * std::f64::consts::TAU;
                    band.pixels[y * size + x] += 0.5 * contrast * t.sin();
                }
            }
        }
        "corner" => {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (qy, qx) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
            for y in 0..size {
                for x in 0..size {
                    let inside_y = if qy { y >= center.0 } else { y < center.0 };
                    let inside_x = if qx { x >= center.1 } else { x < center.1 };
                    let near = (y as isize - center.0 as isize).abs() < size_px as isize
                        && (x as isize - center.1 as isize).abs() < size_px as isize;
                    if inside_y && inside_x && near {
                        band.pixels[y * size + x] += sign * contrast;
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    band.pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

pub fn generate_generic_corpus(cfg: &GenericCorpusConfig) -> Result<Dataset> {
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.per_class * GENERIC_CLASSES.len());
    for i in 0..cfg.per_class {
        for class in 0..GENERIC_CLASSES.len() {
            let id = (i * GENERIC_CLASSES.len() + class) as u32;
            let pixels = generic_image(class, cfg.size, &mut rng);
            samples.push(ImageSample {
                image: Tensor::new(vec![cfg.size, cfg.size, 1], pixels)?,
                part_id: id,
                segment: 0,
                label: class as u8,
                mask: None,
            });
        }
    }
    Ok(Dataset {
        name: cfg.name.clone(),
        label_names: GENERIC_CLASSES.iter().map(|s| s.to_string()).collect(),
        samples,
        seed: cfg.seed,
        generator_version: GENERATOR_VERSION.into(),
    })
}
