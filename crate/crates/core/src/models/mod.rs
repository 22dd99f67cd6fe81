//! Architecture builders for the three output heads plus the two knowledge
//! transfer mechanisms (weight transfer and input-domain translation).

mod spec;
mod transfer;
mod translate;

use std::path::Path;

pub use spec::{ConvBlock, HeadKind, ModelSpec, BACKBONE_PREFIX, CLASSIFIER_CHANNELS, HEAD_PREFIX};
pub use transfer::{transfer_weights, TransferMode, TransferPlan, TransferReport, WeightSource};
pub use translate::{translate_domain, DomainTranslator, TranslatorKind, HISTOGRAM_BINS};

use crate::engine::{container, he_uniform, Mode, NamedTensor, Network, SeededRng, Tensor};
use crate::error::{Result, SddsError};

/// Which side of the backbone/head partition a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Backbone,
    Head,
}

pub fn part_of(name: &str) -> Part {
    if name.starts_with(BACKBONE_PREFIX) {
        Part::Backbone
    } else {
        Part::Head
    }
}

/// A model spec together with its weights.
#[derive(Clone, Debug)]
pub struct ModelState {
    spec: ModelSpec,
    net: Network,
}

/// He-uniform initialized model for `spec`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ModelState> {
    spec.validate()?;
    let mut net = Network::new(spec.graph())?;
    he_uniform(&mut net, seed);
    Ok(ModelState { spec: spec.clone(), net })
}

impl ModelState {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn head(&self) -> HeadKind {
        self.spec.head
    }

    pub fn forward(&mut self, batch: &Tensor, mode: Mode, rng: Option<&mut SeededRng>) -> Result<Tensor> {
        self.net.forward(batch, mode, rng)
    }

    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<()> {
        self.net.backward(loss_grad)
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.net.predict(batch)
    }

    pub fn param_names(&self, part: Part) -> Vec<&str> {
        self.net
            .params()
            .iter()
            .map(|p| p.name.as_str())
            .filter(|n| part_of(n) == part)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Same weights under a different dropout rate.
    pub fn with_dropout(self, rate: f64) -> Result<Self> {
        if rate == self.spec.dropout {
            return Ok(self);
        }
        let spec = self.spec.clone().with_dropout(rate);
        spec.validate()?;
        let mut net = Network::new(spec.graph())?;
        load_params(&mut net, self.net.params().to_vec())?;
        Ok(Self { spec, net })
    }

    /// Weight container bytes with the spec embedded in the header.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(self.net.params(), &serde_json::to_value(&self.spec)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(container::decode(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write(path, self.net.params(), &serde_json::to_value(&self.spec)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(container::read(path)?)
    }

    fn from_container(c: container::Container) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_value(c.meta)
            .map_err(|e| SddsError::Container(format!("header carries no valid model spec: {e}")))?;
        spec.validate()?;
        let mut net = Network::new(spec.graph())?;
        load_params(&mut net, c.tensors)?;
        Ok(Self { spec, net })
    }
}

fn load_params(net: &mut Network, tensors: Vec<NamedTensor>) -> Result<()> {
    if tensors.len() != net.params().len() {
        return Err(SddsError::Container(format!(
            "file has {} tensors, model expects {}",
            tensors.len(),
            net.params().len()
        )));
    }
    for t in tensors {
        let slot = net.param_mut(&t.name).ok_or_else(|| SddsError::TensorMismatch {
            name: t.name.clone(),
            reason: "not part of the model".into(),
        })?;
        if slot.shape() != t.tensor.shape() {
            return Err(SddsError::TensorMismatch {
                name: t.name,
                reason: format!("shape {:?} vs expected {:?}", t.tensor.shape(), slot.shape()),
            });
        }
        *slot = t.tensor;
    }
    Ok(())
}
