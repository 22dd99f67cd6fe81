use serde::{Deserialize, Serialize};

use crate::engine::{Graph, LayerSpec};
use crate::error::{Result, SddsError};

pub const BACKBONE_PREFIX: &str = "backbone.";
pub const HEAD_PREFIX: &str = "head.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// 2×2 max pooling after the convolution.
    pub pool: bool,
}

impl ConvBlock {
    pub fn new(channels: usize) -> Self {
        Self { channels, kernel: 3, stride: 1, pool: true }
    }
}

/// Output head, i.e. the information value the model provides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// One sigmoid unit: probability that the segment is defective.
    Binary,
    /// Softmax over `classes` (non-defective is class 0).
    Multiclass { classes: usize },
    /// Per-pixel softmax over `defect_classes + 1` (background is class 0).
    Segmentation { defect_classes: usize },
}

impl HeadKind {
    pub fn outputs(&self) -> usize {
        match *self {
            HeadKind::Binary => 1,
            HeadKind::Multiclass { classes } => classes,
            HeadKind::Segmentation { defect_classes } => defect_classes + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `(height, width, channels)`; channels is always 1 for grayscale segments.
    pub input: [usize; 3],
    pub backbone: Vec<ConvBlock>,
    pub head: HeadKind,
    pub dropout: f64,
}

/// Desk-scale channel widths of the five classifier blocks.
pub const CLASSIFIER_CHANNELS: [usize; 5] = [8, 16, 32, 32, 64];

impl ModelSpec {
    pub fn classifier(size: usize, head: HeadKind, dropout: f64) -> Self {
        Self {
            input: [size, size, 1],
            backbone: CLASSIFIER_CHANNELS.iter().map(|&c| ConvBlock::new(c)).collect(),
            head,
            dropout,
        }
    }

    pub fn binary(size: usize) -> Self {
        Self::classifier(size, HeadKind::Binary, 0.5)
    }

    pub fn multiclass(size: usize, classes: usize) -> Self {
        Self::classifier(size, HeadKind::Multiclass { classes }, 0.5)
    }

    /// Three-level U-shaped network whose encoder shares names and shapes
    /// with the first three classifier blocks.
    pub fn segmentation(size: usize, defect_classes: usize) -> Self {
        let mut backbone: Vec<ConvBlock> = CLASSIFIER_CHANNELS[..3].iter().map(|&c| ConvBlock::new(c)).collect();
        backbone[2].pool = false;
        Self { input: [size, size, 1], backbone, head: HeadKind::Segmentation { defect_classes }, dropout: 0.0 }
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SddsError::InvalidSpec(m));
        if self.input[2] != 1 || self.input[0] == 0 || self.input[1] == 0 {
            return bad(format!("input must be (h, w, 1), got {:?}", self.input));
        }
        if self.backbone.is_empty() {
            return bad("backbone needs at least one block".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.backbone.iter().any(|b| b.channels == 0 || b.kernel == 0 || b.kernel % 2 == 0 || b.stride == 0) {
            return bad("blocks need positive channels, odd kernels and positive strides".into());
        }
        match self.head {
            HeadKind::Binary => {}
            HeadKind::Multiclass { classes } if classes >= 2 => {}
            HeadKind::Segmentation { defect_classes } if defect_classes >= 1 => {
                let n = self.backbone.len();
                let levels_ok = self
                    .backbone
                    .iter()
                    .enumerate()
                    .all(|(i, b)| b.stride == 1 && b.pool == (i + 1 < n));
                if !levels_ok {
                    return bad("segmentation encoder blocks must have stride 1 and pool between levels".into());
                }
                let factor = 1usize << (n - 1);
                if !self.input[0].is_multiple_of(factor) || !self.input[1].is_multiple_of(factor) {
                    return bad(format!("input {:?} not divisible by {factor}", self.input));
                }
            }
            _ => return bad(format!("invalid head {:?}", self.head)),
        }
        self.graph().validate().map(|_| ())
    }

    /// Lowers the spec to an engine graph. Parameter names start with
    /// `backbone.` or `head.`, which is what transfer keys on.
    pub fn graph(&self) -> Graph {
        let mut g = Graph::new(self.input.to_vec());
        let mut channels = self.input[2];
        let mut skips = Vec::new();
        let segmentation = matches!(self.head, HeadKind::Segmentation { .. });
        for (i, b) in self.backbone.iter().enumerate() {
            let name = format!("backbone.block{}", i + 1);
            g.push(
                format!("{name}.conv"),
                LayerSpec::Conv2d {
                    in_channels: channels,
                    out_channels: b.channels,
                    kernel: b.kernel,
                    stride: b.stride,
                    padding: b.kernel / 2,
                },
            );
            let act = g.push(format!("{name}.relu"), LayerSpec::Relu);
            skips.push((act, b.channels));
            if b.pool {
                g.push(format!("{name}.pool"), LayerSpec::MaxPool2d { size: 2 });
            }
            channels = b.channels;
        }
        match self.head {
            HeadKind::Binary | HeadKind::Multiclass { .. } => {
                g.push("head.gap", LayerSpec::GlobalAvgPool);
                if self.dropout > 0.0 {
                    g.push("head.dropout", LayerSpec::Dropout { rate: self.dropout });
                }
                g.push("head.fc", LayerSpec::Dense { inputs: channels, outputs: self.head.outputs() });
                let act = if self.head == HeadKind::Binary { LayerSpec::Sigmoid } else { LayerSpec::Softmax };
                g.push("head.out", act);
            }
            HeadKind::Segmentation { .. } => {
                debug_assert!(segmentation);
                skips.pop();
                // Each level: 1×1 reduce to the skip width, upsample, concatenate
                // the skip, then fuse. The full-resolution fuse is 1×1 so the
                // decoder stays cheap; coarser levels fuse with 3×3.
                for (level, &(skip, skip_channels)) in skips.iter().enumerate().rev() {
                    let lv = level + 1;
                    g.push(
                        format!("head.reduce{lv}"),
                        LayerSpec::Conv2d {
                            in_channels: channels,
                            out_channels: skip_channels,
                            kernel: 1,
                            stride: 1,
                            padding: 0,
                        },
                    );
                    let up = g.push(format!("head.up{lv}"), LayerSpec::Upsample2d { factor: 2 });
                    g.push_with(format!("head.cat{lv}"), LayerSpec::ConcatSkip, vec![up, skip]);
                    let kernel = if level == 0 { 1 } else { 3 };
                    g.push(
                        format!("head.dec{lv}.conv"),
                        LayerSpec::Conv2d {
                            in_channels: 2 * skip_channels,
                            out_channels: skip_channels,
                            kernel,
                            stride: 1,
                            padding: kernel / 2,
                        },
                    );
                    g.push(format!("head.dec{lv}.relu"), LayerSpec::Relu);
                    channels = skip_channels;
                }
                if self.dropout > 0.0 {
                    g.push("head.dropout", LayerSpec::Dropout { rate: self.dropout });
                }
                g.push(
                    "head.classifier",
                    LayerSpec::Conv2d {
                        in_channels: channels,
                        out_channels: self.head.outputs(),
                        kernel: 1,
                        stride: 1,
                        padding: 0,
                    },
                );
                g.push("head.out", LayerSpec::Softmax);
            }
        }
        g
    }
}
