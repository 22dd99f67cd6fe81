use std::path::PathBuf;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{part_of, ModelState, Part};
use crate::engine::{he_uniform_with, SeededRng};
use crate::error::{Result, SddsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    None,
    /// Source trained on a broad texture-classification corpus.
    Generic,
    /// Source trained on defects of a different material.
    Industrial,
}

#[derive(Clone, Debug)]
pub enum WeightSource {
    File(PathBuf),
    Model(Box<ModelState>),
}

impl WeightSource {
    fn load(&self) -> Result<ModelState> {
        match self {
            WeightSource::File(p) => ModelState::load(p),
            WeightSource::Model(m) => Ok((**m).clone()),
        }
    }
}

/// Backbone tensors are matched by name; head tensors are always re-initialized.
#[derive(Clone, Debug)]
pub struct TransferPlan {
    pub mode: TransferMode,
    pub source: Option<WeightSource>,
    /// Seed for the fresh head initialization.
    pub head_seed: u64,
}

impl TransferPlan {
    pub fn none() -> Self {
        Self { mode: TransferMode::None, source: None, head_seed: 0 }
    }

    pub fn new(mode: TransferMode, source: WeightSource, head_seed: u64) -> Self {
        Self { mode, source: Some(source), head_seed }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, &self.source) {
            (TransferMode::None, Some(_)) => Err(SddsError::InvalidSpec("transfer mode none takes no source".into())),
            (TransferMode::None, None) => Ok(()),
            (_, None) => Err(SddsError::InvalidSpec(format!("transfer mode {:?} needs a source", self.mode))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransferReport {
    pub copied: Vec<String>,
    pub reinitialized: Vec<String>,
}

/// Copies every backbone tensor of `target` from the plan's source model and
/// re-initializes the head.
pub fn transfer_weights(mut target: ModelState, plan: &TransferPlan) -> Result<(ModelState, TransferReport)> {
    plan.validate()?;
    let source = match &plan.source {
        Some(s) if plan.mode != TransferMode::None => s.load()?,
        _ => return Err(SddsError::InvalidSpec("transfer needs a mode other than none".into())),
    };
    let mut report = TransferReport::default();
    for p in target.network().params() {
        if part_of(&p.name) != Part::Backbone {
            continue;
        }
        let src = source.network().param(&p.name).ok_or_else(|| SddsError::TensorMismatch {
            name: p.name.clone(),
            reason: "missing from source model".into(),
        })?;
        if src.shape() != p.tensor.shape() {
            return Err(SddsError::TensorMismatch {
                name: p.name.clone(),
                reason: format!("source shape {:?} vs target {:?}", src.shape(), p.tensor.shape()),
            });
        }
    }
    for p in target.network_mut().params_mut() {
        if part_of(&p.name) == Part::Backbone {
            p.tensor = source.network().param(&p.name).expect("checked").clone();
            report.copied.push(p.name.clone());
        } else {
            report.reinitialized.push(p.name.clone());
        }
    }
    let mut rng = SeededRng::seed_from_u64(plan.head_seed);
    he_uniform_with(target.network_mut(), &mut rng, |n| part_of(n) == Part::Head);
    target.network_mut().clear_grads();
    Ok((target, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tensor;
    use crate::models::{build_model, ModelSpec};

    #[test]
    fn backbone_copied_head_fresh() {
        let source = build_model(&ModelSpec::binary(32), 1).unwrap();
        let target = build_model(&ModelSpec::binary(32), 2).unwrap();
        let plan = TransferPlan::new(TransferMode::Generic, WeightSource::Model(Box::new(source.clone())), 77);
        let (out, report) = transfer_weights(target, &plan).unwrap();
        assert_eq!(report.copied.len(), 10);
        assert_eq!(report.reinitialized, vec!["head.fc.weight", "head.fc.bias"]);
        for name in &report.copied {
            assert_eq!(out.network().param(name), source.network().param(name));
        }
        assert_ne!(out.network().param("head.fc.weight"), source.network().param("head.fc.weight"));

        // Backbone activations equal the source's on the same input.
        let x = Tensor::new(vec![1, 32, 32, 1], (0..1024).map(|i| (i % 9) as f64 / 9.0).collect()).unwrap();
        let last_backbone = out
            .network()
            .graph()
            .nodes
            .iter()
            .rposition(|n| n.name.starts_with("backbone."))
            .unwrap();
        let a = source.network().activation(&x, last_backbone).unwrap();
        let b = out.network().activation(&x, last_backbone).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_backbone_names_offending_tensor() {
        let mut spec = ModelSpec::binary(32);
        spec.backbone[1].channels = 12;
        let source = build_model(&spec, 1).unwrap();
        let target = build_model(&ModelSpec::binary(32), 2).unwrap();
        let plan = TransferPlan::new(TransferMode::Industrial, WeightSource::Model(Box::new(source)), 0);
        match transfer_weights(target, &plan) {
            Err(SddsError::TensorMismatch { name, .. }) => assert_eq!(name, "backbone.block2.conv.weight"),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn classifier_backbone_seeds_segmentation_encoder() {
        let source = build_model(&ModelSpec::multiclass(32, 5), 1).unwrap();
        let target = build_model(&ModelSpec::segmentation(32, 3), 2).unwrap();
        let plan = TransferPlan::new(TransferMode::Generic, WeightSource::Model(Box::new(source)), 0);
        let (_, report) = transfer_weights(target, &plan).unwrap();
        assert_eq!(report.copied.len(), 6);
    }

    #[test]
    fn plan_consistency() {
        assert!(TransferPlan::none().validate().is_ok());
        let m = build_model(&ModelSpec::binary(32), 1).unwrap();
        let bad = TransferPlan { mode: TransferMode::None, source: Some(WeightSource::Model(Box::new(m.clone()))), head_seed: 0 };
        assert!(bad.validate().is_err());
        assert!(transfer_weights(m, &TransferPlan::none()).is_err());
    }
}
