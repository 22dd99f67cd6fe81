use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageSample;
use crate::engine::{SeededRng, Tensor};

/// Random flip/zoom/shift applied to training segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Independent probability of a horizontal and of a vertical flip.
    pub flip_prob: f64,
    /// Zoom factor range around 1.0; values above 1 magnify.
    pub zoom: (f64, f64),
    /// Maximum absolute integer shift in pixels along each axis.
    pub shift: i32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_prob: 0.5, zoom: (0.9, 1.1), shift: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub flip_h: bool,
    pub flip_v: bool,
    pub zoom: f64,
    pub shift: (i32, i32),
}

impl Transform {
    pub const IDENTITY: Transform = Transform { flip_h: false, flip_v: false, zoom: 1.0, shift: (0, 0) };

    pub fn sample(cfg: &AugmentConfig, rng: &mut SeededRng) -> Self {
        let zoom = if cfg.zoom.0 < cfg.zoom.1 { rng.gen_range(cfg.zoom.0..=cfg.zoom.1) } else { cfg.zoom.0 };
        let shift = if cfg.shift > 0 {
            (rng.gen_range(-cfg.shift..=cfg.shift), rng.gen_range(-cfg.shift..=cfg.shift))
        } else {
            (0, 0)
        };
        Self { flip_h: rng.gen_bool(cfg.flip_prob), flip_v: rng.gen_bool(cfg.flip_prob), zoom, shift }
    }

    /// Source coordinate (row, column) read for output pixel `(y, x)`.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let mut v = (y as f64 - self.shift.0 as f64 - cy) / self.zoom + cy;
        let mut u = (x as f64 - self.shift.1 as f64 - cx) / self.zoom + cx;
        if self.flip_v {
            v = h as f64 - 1.0 - v;
        }
        if self.flip_h {
            u = w as f64 - 1.0 - u;
        }
        (v, u)
    }
}

fn clamp_index(v: f64, n: usize) -> usize {
    (v.max(0.0) as usize).min(n - 1)
}

/// Applies `t` to image (bilinear) and mask (nearest), replicating edges
/// for out-of-frame reads.
pub fn apply_transform(sample: &ImageSample, t: &Transform) -> ImageSample {
    let (h, w) = (sample.height(), sample.width());
    let img = sample.image.data();
    let mut out = Vec::with_capacity(h * w);
    let mut out_mask = sample.mask.as_ref().map(|_| Vec::with_capacity(h * w));
    for y in 0..h {
        for x in 0..w {
            let (v, u) = t.source(y, x, h, w);
            let (vc, uc) = (v.clamp(0.0, h as f64 - 1.0), u.clamp(0.0, w as f64 - 1.0));
            let (y0, x0) = (vc.floor() as usize, uc.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (vc - y0 as f64, uc - x0 as f64);
            let top = if fx == 0.0 { img[y0 * w + x0] } else { img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx };
            let bot = if fx == 0.0 { img[y1 * w + x0] } else { img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx };
            out.push(if fy == 0.0 { top } else { top * (1.0 - fy) + bot * fy });
            if let (Some(m), Some(src)) = (out_mask.as_mut(), sample.mask.as_ref()) {
                m.push(src.data()[clamp_index(v.round(), h) * w + clamp_index(u.round(), w)]);
            }
        }
    }
    ImageSample {
        image: Tensor::new(sample.image.shape().to_vec(), out).expect("same shape"),
        mask: out_mask.map(|m| Tensor::new(vec![h, w], m).expect("same shape")),
        ..sample.clone()
    }
}

/// Samples and applies a random transform. For defective segments with a
/// mask, transforms that push every defect pixel out of frame are resampled
/// up to 10 times before falling back to the identity.
pub fn augment(sample: &ImageSample, cfg: &AugmentConfig, rng: &mut SeededRng) -> ImageSample {
    for _ in 0..10 {
        let t = Transform::sample(cfg, rng);
        let out = apply_transform(sample, &t);
        let keeps_defect = match (&out.mask, sample.label) {
            (Some(m), l) if l > 0 => m.data().iter().any(|&v| v > 0.0),
            _ => true,
        };
        if keeps_defect {
            return out;
        }
    }
    sample.clone()
}
