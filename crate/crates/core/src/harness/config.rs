use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenario::{DesignFeatures, Scenario};
use crate::data::{
    balance_undersample, generate_corpus, generate_generic_corpus, read_dataset, split_by_part, AugmentConfig,
    CorpusConfig, Dataset, GenericCorpusConfig,
};
use crate::error::{io_err, Result, SddsError};
use crate::evaluation::AggregationRule;
use crate::training::{EarlyStopping, TrainConfig};

/// Where a corpus comes from: an existing dataset directory or a generator
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource<G> {
    Path(PathBuf),
    Generate(G),
}

impl CorpusSource<CorpusConfig> {
    fn load(&self) -> Result<Dataset> {
        match self {
            Self::Path(p) => read_dataset(p),
            Self::Generate(c) => generate_corpus(c),
        }
    }
}

impl CorpusSource<GenericCorpusConfig> {
    fn load(&self) -> Result<Dataset> {
        match self {
            Self::Path(p) => read_dataset(p),
            Self::Generate(c) => generate_generic_corpus(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorporaConfig {
    pub target: CorpusSource<CorpusConfig>,
    /// Defect corpus of another material; needed by industrial transfer.
    pub industrial: Option<CorpusSource<CorpusConfig>>,
    /// Broad texture-classification corpus; needed by generic transfer.
    pub generic: Option<CorpusSource<GenericCorpusConfig>>,
    /// Train/validation/test fractions at part granularity.
    pub split: [f64; 3],
    pub balance_seed: u64,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub id: String,
    /// Optional explicit feature list; must equal the experiment's row.
    #[serde(default)]
    pub features: Option<DesignFeatures>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub corpora: CorporaConfig,
    pub scenarios: Vec<ScenarioEntry>,
    pub seeds: Vec<u64>,
    /// Base hyperparameters. Early stopping, dropout, augmentation and seed
    /// are set per scenario from its feature flags.
    pub train: TrainConfig,
    pub early_stopping: EarlyStopping,
    pub augment: AugmentConfig,
    /// Dropout rate applied when the dropout feature is on.
    pub dropout: f64,
    /// Hyperparameters for training the transfer sources.
    pub source_train: TrainConfig,
    pub aggregation: AggregationRule,
    /// Test samples shown in the saliency panel.
    pub panel_samples: usize,
}

impl GridConfig {
    /// Desk-scale defaults: 260 rubber parts of 16 segments, a metal defect
    /// corpus of 200 parts and 250 generic images per class.
    pub fn desk_default() -> Self {
        let target = CorpusConfig::target(260, 11);
        let industrial = CorpusConfig::industrial(200, 12);
        let generic = GenericCorpusConfig::new(250, 5);
        Self {
            corpora: CorporaConfig {
                target: CorpusSource::Generate(target),
                industrial: Some(CorpusSource::Generate(industrial)),
                generic: Some(CorpusSource::Generate(generic)),
                split: [0.6, 0.2, 0.2],
                balance_seed: 1,
                split_seed: 2,
            },
            scenarios: Scenario::paper_grid(&[]).into_iter().map(|s| ScenarioEntry { id: s.id, features: None }).collect(),
            seeds: vec![1, 2, 3],
            train: TrainConfig::default(),
            early_stopping: EarlyStopping::default(),
            augment: AugmentConfig::default(),
            dropout: 0.5,
            source_train: TrainConfig { seed: 9, ..TrainConfig::default() },
            aggregation: AggregationRule::default(),
            panel_samples: 5,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.scenarios()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Resolved scenarios in table order.
    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        if self.seeds.is_empty() {
            return Err(SddsError::Config("at least one seed required".into()));
        }
        let mut out = Vec::new();
        for entry in &self.scenarios {
            let s = Scenario::paper(&entry.id, self.seeds.clone())?;
            if let Some(f) = &entry.features {
                if *f != s.features {
                    return Err(SddsError::Scenario {
                        id: entry.id.clone(),
                        reason: format!("declared features {:?} differ from the experiment's {:?}", f.names(), s.features.names()),
                    });
                }
            }
            s.validate()?;
            if out.iter().any(|o: &Scenario| o.id == s.id) {
                return Err(SddsError::Config(format!("{} listed twice", s.id)));
            }
            out.push(s);
        }
        out.sort_by_key(Scenario::order);
        Ok(out)
    }

    /// Keeps only the scenarios with the given information value.
    pub fn restrict(mut self, info: super::InformationValue) -> Result<Self> {
        let keep: Vec<String> = self.scenarios()?.into_iter().filter(|s| s.information_value == info).map(|s| s.id).collect();
        self.scenarios.retain(|e| keep.contains(&e.id));
        Ok(self)
    }

    /// Training configuration of one scenario run.
    pub fn scenario_train_config(&self, scenario: &Scenario, seed: u64) -> TrainConfig {
        let f = &scenario.features;
        TrainConfig {
            early_stopping: f.has(10).then(|| self.early_stopping.clone()),
            dropout: Some(if f.has(11) { self.dropout } else { 0.0 }),
            augment: f.has(12).then(|| self.augment.clone()),
            seed,
            ..self.train.clone()
        }
    }
}

/// Balanced train/validation/test splits of one corpus.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Debug)]
pub struct Corpora {
    pub target: Splits,
    pub industrial: Option<Splits>,
    pub generic: Option<Splits>,
}

fn split(data: &Dataset, cfg: &CorporaConfig, balance: bool) -> Result<Splits> {
    let data = if balance { balance_undersample(data, cfg.balance_seed)? } else { data.clone() };
    let [train, val, test] = split_by_part(&data, cfg.split, cfg.split_seed)?;
    Ok(Splits { train, val, test })
}

/// Loads or generates every declared corpus, balances the defect corpora and
/// splits all of them by part.
pub fn prepare_corpora(cfg: &CorporaConfig) -> Result<Corpora> {
    let target = split(&cfg.target.load()?, cfg, true)?;
    let industrial = cfg.industrial.as_ref().map(|s| split(&s.load()?, cfg, true)).transpose()?;
    // The generic corpus is class-balanced by construction.
    let generic = cfg.generic.as_ref().map(|s| split(&s.load()?, cfg, false)).transpose()?;
    Ok(Corpora { target, industrial, generic })
}
