//! Gradient saliency maps and the focus ratio used to compare where models
//! look.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::engine::{Mode, Network, Tensor};
use crate::error::{Result, SddsError};
use crate::models::ModelState;

/// Ratio reported when saliency outside the defect is exactly zero.
pub const FOCUS_CAP: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    /// `(h, w)`, non-negative.
    pub values: Tensor,
    pub part_id: u32,
    pub segment: u32,
    pub target_class: usize,
}

impl SaliencyMap {
    /// Max-normalized copy in `[0, 1]`; an all-zero map stays zero.
    pub fn normalized(&self) -> Tensor {
        normalize(&self.values)
    }
}

fn normalize(t: &Tensor) -> Tensor {
    let max = t.data().iter().cloned().fold(0.0, f64::max);
    let data = if max > 0.0 { t.data().iter().map(|v| v / max).collect() } else { t.data().to_vec() };
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// `|d score / d input|` for one `(h, w, c)` image, reduced over channels by
/// max. The score is the pre-activation logit of `target_class`, summed over
/// pixels for dense-prediction heads. A single-logit head treats class 1 as
/// the logit and class 0 as its negation.
pub fn saliency_network(net: &Network, image: &Tensor, target_class: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(SddsError::Shape(format!("expected an (h, w, c) image, got {shape:?}")));
    }
    let mut net = net.clone();
    let batch = image.clone().reshape([&[1], shape].concat())?;
    net.forward(&batch, Mode::Eval, None)?;
    let node = net.graph().logit_node();
    let logits = net.activation(&batch, node)?;
    let classes = *logits.shape().last().expect("non-scalar logits");
    let (channel, sign) = match (classes, target_class) {
        (1, 0) => (0, -1.0),
        (1, 1) => (0, 1.0),
        (k, c) if c < k && k > 1 => (c, 1.0),
        _ => return Err(SddsError::InvalidTarget(format!("class {target_class} for {classes} logits"))),
    };
    let mut grad = Tensor::zeros(logits.shape());
    for px in grad.data_mut().chunks_mut(classes) {
        px[channel] = sign;
    }
    let dx = net.backward_from(node, &grad)?;
    let c = shape[2];
    let values = dx.data().chunks(c).map(|px| px.iter().fold(0.0, |m: f64, v| m.max(v.abs()))).collect();
    Tensor::new(vec![shape[0], shape[1]], values)
}

pub fn saliency(model: &ModelState, image: &Tensor, target_class: usize) -> Result<Tensor> {
    saliency_network(model.network(), image, target_class)
}

/// Mean saliency inside the nonzero region of `gt_mask` over mean saliency
/// outside it, capped at [`FOCUS_CAP`]. An all-zero map scores 1.
pub fn saliency_focus_score(map: &Tensor, gt_mask: &Tensor) -> Result<f64> {
    if map.numel() != gt_mask.numel() {
        return Err(SddsError::Shape(format!("map {:?} vs mask {:?}", map.shape(), gt_mask.shape())));
    }
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for (&s, &m) in map.data().iter().zip(gt_mask.data()) {
        if m != 0.0 {
            sin += s;
            nin += 1;
        } else {
            sout += s;
            nout += 1;
        }
    }
    if nin == 0 {
        return Err(SddsError::Empty("ground-truth mask has no defect pixels".into()));
    }
    if nout == 0 {
        return Err(SddsError::Empty("ground-truth mask leaves no background".into()));
    }
    let (inside, outside) = (sin / nin as f64, sout / nout as f64);
    if inside == 0.0 && outside == 0.0 {
        return Ok(1.0);
    }
    if outside == 0.0 {
        return Ok(FOCUS_CAP);
    }
    Ok((inside / outside).min(FOCUS_CAP))
}

fn to_gray(t: &Tensor) -> Result<GrayImage> {
    let s = t.shape();
    if s.len() < 2 || t.numel() != s[0] * s[1] {
        return Err(SddsError::Shape(format!("expected a single-channel plane, got {s:?}")));
    }
    let buf = t.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Ok(GrayImage::from_raw(s[1] as u32, s[0] as u32, buf).expect("sized buffer"))
}

/// Writes planes side by side (input, then one saliency column per model),
/// each max-normalized except the first, which is already in `[0, 1]`.
pub fn write_panel(path: &Path, input: &Tensor, maps: &[&Tensor]) -> Result<()> {
    let mut cols = vec![to_gray(input)?];
    for m in maps {
        cols.push(to_gray(&normalize(m))?);
    }
    let (w, h) = (cols[0].width(), cols[0].height());
    if cols.iter().any(|c| c.dimensions() != (w, h)) {
        return Err(SddsError::Shape("panel columns differ in size".into()));
    }
    let gap = 2;
    let mut panel = GrayImage::from_pixel(cols.len() as u32 * (w + gap) - gap, h, Luma([255]));
    for (i, c) in cols.iter().enumerate() {
        image::imageops::replace(&mut panel, c, i64::from(i as u32 * (w + gap)), 0);
    }
    panel.save(path).map_err(|source| SddsError::Image { path: path.to_path_buf(), source })
}

/// Writes a normalized map as an 8-bit image.
pub fn write_map(path: &Path, map: &Tensor) -> Result<()> {
    to_gray(&normalize(map))?.save(path).map_err(|source| SddsError::Image { path: path.to_path_buf(), source })
}

/// Reads an 8-bit map back into `[0, 1]`.
pub fn read_map(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| SddsError::Image { path: path.to_path_buf(), source })?
        .into_luma8();
    let data = img.pixels().map(|Luma([v])| f64::from(*v) / 255.0).collect();
    Tensor::new(vec![img.height() as usize, img.width() as usize], data)
}
