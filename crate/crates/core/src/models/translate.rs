use serde::{Deserialize, Serialize};

use crate::engine::Tensor;

pub const HISTOGRAM_BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatorKind {
    Identity,
    HistogramMatch,
}

/// Maps target-domain images into a source intensity domain so a
/// source-trained model can be applied unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainTranslator {
    pub kind: TranslatorKind,
    /// Reference cumulative histogram, `HISTOGRAM_BINS` entries ending at 1.
    pub reference_cdf: Vec<f64>,
}

fn bin(v: f64) -> usize {
    ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

fn cdf_of<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<f64> {
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    let mut total = 0u64;
    for &v in values {
        counts[bin(v.clamp(0.0, 1.0))] += 1;
        total += 1;
    }
    let mut acc = 0u64;
    counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / total.max(1) as f64
        })
        .collect()
}

impl DomainTranslator {
    pub fn identity() -> Self {
        Self { kind: TranslatorKind::Identity, reference_cdf: Vec::new() }
    }

    /// Histogram matcher whose reference is the pooled intensity distribution of `images`.
    pub fn histogram_match<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let cdf = cdf_of(images.into_iter().flat_map(|t| t.data().iter()));
        Self { kind: TranslatorKind::HistogramMatch, reference_cdf: cdf }
    }

    /// Bin index whose reference CDF first reaches `u`.
    fn inverse(&self, u: f64) -> usize {
        self.reference_cdf.partition_point(|&c| c < u).min(HISTOGRAM_BINS - 1)
    }
}

/// Translates a grayscale image in `[0, 1]`.
///
/// Histogram matching sends each intensity bin to the reference bin at the
/// bin's mid-rank `(cdf[b-1] + cdf[b]) / 2` and emits that bin's center, so
/// the mapping is monotone and a constant image lands on the reference median.
pub fn translate_domain(image: &Tensor, translator: &DomainTranslator) -> Tensor {
    match translator.kind {
        TranslatorKind::Identity => image.clone(),
        TranslatorKind::HistogramMatch => {
            let cdf = cdf_of(image.data().iter());
            let lut: Vec<f64> = (0..HISTOGRAM_BINS)
                .map(|b| {
                    let below = if b == 0 { 0.0 } else { cdf[b - 1] };
                    let r = translator.inverse(0.5 * (below + cdf[b]));
                    (r as f64 + 0.5) / HISTOGRAM_BINS as f64
                })
                .collect();
            let data = image.data().iter().map(|&v| lut[bin(v.clamp(0.0, 1.0))]).collect();
            Tensor::new(image.shape().to_vec(), data).expect("same shape")
        }
    }
}
