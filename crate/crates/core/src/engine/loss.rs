use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Result, SddsError};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Binary cross-entropy on sigmoid outputs of shape `(batch, 1)`.
    Bce,
    /// Categorical cross-entropy on softmax outputs `(batch, classes)`.
    Ce,
    /// Categorical cross-entropy averaged over every pixel of `(batch, h, w, classes)`.
    PixelwiseCe,
}

/// Mean loss and its gradient with respect to `predictions`.
pub fn loss(kind: LossKind, predictions: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if predictions.shape() != targets.shape() {
        return Err(SddsError::Shape(format!(
            "predictions {:?} vs targets {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    if let Some(bad) = targets.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(SddsError::InvalidTarget(format!("target value {bad} outside {{0, 1}}")));
    }
    let rank = predictions.shape().len();
    match kind {
        LossKind::Bce if rank != 2 || predictions.shape()[1] != 1 => {
            return Err(SddsError::Shape(format!("bce expects (batch, 1), got {:?}", predictions.shape())))
        }
        LossKind::Ce if rank != 2 => {
            return Err(SddsError::Shape(format!("ce expects (batch, classes), got {:?}", predictions.shape())))
        }
        LossKind::PixelwiseCe if rank != 4 => {
            return Err(SddsError::Shape(format!(
                "pixelwise_ce expects (batch, h, w, classes), got {:?}",
                predictions.shape()
            )))
        }
        _ => {}
    }
    let p = predictions.data();
    let t = targets.data();
    let (value, grad) = match kind {
        LossKind::Bce => {
            let n = p.len() as f64;
            let mut total = 0.0;
            let grad = p
                .iter()
                .zip(t)
                .map(|(&pi, &ti)| {
                    let c = pi.clamp(EPS, 1.0 - EPS);
                    total -= ti * c.ln() + (1.0 - ti) * (1.0 - c).ln();
                    (-ti / c + (1.0 - ti) / (1.0 - c)) / n
                })
                .collect();
            (total / n, grad)
        }
        LossKind::Ce | LossKind::PixelwiseCe => {
            let classes = *predictions.shape().last().unwrap();
            let rows = (p.len() / classes) as f64;
            let mut total = 0.0;
            let grad = p
                .iter()
                .zip(t)
                .map(|(&pi, &ti)| {
                    if ti == 0.0 {
                        return 0.0;
                    }
                    let c = pi.clamp(EPS, 1.0 - EPS);
                    total -= c.ln();
                    -1.0 / (c * rows)
                })
                .collect();
            (total / rows, grad)
        }
    };
    Ok((value, Tensor::new(predictions.shape().to_vec(), grad)?))
}
