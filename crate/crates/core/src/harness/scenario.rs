use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SddsError};
use crate::models::TransferMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationValue {
    Binary,
    Multiclass,
    Segmentation,
}

impl fmt::Display for InformationValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Binary => "binary",
            Self::Multiclass => "multiclass",
            Self::Segmentation => "segmentation",
        })
    }
}

/// The twelve design features, DF1 through DF12.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DesignFeatures(pub [bool; 12]);

impl DesignFeatures {
    /// `n` is 1-based, as in "DF10".
    pub fn has(&self, n: usize) -> bool {
        self.0[n - 1]
    }

    pub fn names(&self) -> Vec<String> {
        (1..=12).filter(|&n| self.has(n)).map(|n| format!("DF{n}")).collect()
    }

    pub fn from_names(names: &[String]) -> Result<Self> {
        let mut flags = [false; 12];
        for name in names {
            let n: usize = name
                .strip_prefix("DF")
                .and_then(|d| d.parse().ok())
                .filter(|n| (1..=12).contains(n))
                .ok_or_else(|| SddsError::Config(format!("unknown design feature {name:?}")))?;
            flags[n - 1] = true;
        }
        Ok(Self(flags))
    }

    /// One `x`/`-` cell per feature.
    pub fn row(&self) -> String {
        self.0.iter().map(|&b| if b { "x" } else { "-" }).collect::<Vec<_>>().join(" ")
    }
}

impl Serialize for DesignFeatures {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DesignFeatures {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        Self::from_names(&names).map_err(serde::de::Error::custom)
    }
}

const X: bool = true;
const O: bool = false;

/// Design-feature matrix of the eight experiments, DF1..DF12 per row.
pub const FEATURE_TABLE: [(&str, [bool; 12]); 8] = [
    ("E1", [X, X, X, X, X, O, O, O, O, X, X, O]),
    ("E2", [X, X, X, X, X, O, O, X, O, X, X, X]),
    ("E3", [X, X, X, X, X, O, O, X, O, X, X, X]),
    ("E4", [X, X, X, X, X, O, O, O, X, O, X, X]),
    ("E5", [X, X, X, X, O, X, O, O, O, X, X, O]),
    ("E6", [X, X, X, X, O, X, O, X, O, X, X, X]),
    ("E7", [X, X, X, X, O, O, X, O, O, X, O, O]),
    ("E8", [X, X, X, X, O, O, X, X, O, X, O, O]),
];

/// One cell of the information-value × knowledge-transfer grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub information_value: InformationValue,
    pub knowledge_transfer: TransferMode,
    pub features: DesignFeatures,
    pub seeds: Vec<u64>,
}

impl Scenario {
    pub fn paper(id: &str, seeds: Vec<u64>) -> Result<Self> {
        let (info, transfer) = match id {
            "E1" => (InformationValue::Binary, TransferMode::None),
            "E2" => (InformationValue::Binary, TransferMode::Generic),
            "E3" | "E4" => (InformationValue::Binary, TransferMode::Industrial),
            "E5" => (InformationValue::Multiclass, TransferMode::None),
            "E6" => (InformationValue::Multiclass, TransferMode::Generic),
            "E7" => (InformationValue::Segmentation, TransferMode::None),
            "E8" => (InformationValue::Segmentation, TransferMode::Generic),
            _ => return Err(SddsError::Config(format!("unknown experiment {id:?}"))),
        };
        let flags = FEATURE_TABLE.iter().find(|(e, _)| *e == id).expect("table covers E1..E8").1;
        Ok(Self {
            id: id.to_string(),
            information_value: info,
            knowledge_transfer: transfer,
            features: DesignFeatures(flags),
            seeds,
        })
    }

    /// All eight experiments in table order.
    pub fn paper_grid(seeds: &[u64]) -> Vec<Self> {
        FEATURE_TABLE.iter().map(|(id, _)| Self::paper(id, seeds.to_vec()).expect("known id")).collect()
    }

    /// Checks the head and transfer flags against the grid cell.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SddsError::Scenario { id: self.id.clone(), reason: m });
        let f = &self.features;
        let head_flag = match self.information_value {
            InformationValue::Binary => 5,
            InformationValue::Multiclass => 6,
            InformationValue::Segmentation => 7,
        };
        if (5..=7).any(|n| f.has(n) != (n == head_flag)) {
            return bad(format!("head flags do not match {} output", self.information_value));
        }
        if f.has(8) && f.has(9) {
            return bad("weight transfer and domain translation are exclusive".into());
        }
        let transfers = f.has(8) || f.has(9);
        if transfers != (self.knowledge_transfer != TransferMode::None) {
            return bad("transfer flags disagree with the knowledge-transfer level".into());
        }
        if f.has(9) && (self.knowledge_transfer != TransferMode::Industrial || self.information_value != InformationValue::Binary) {
            return bad("domain translation needs a binary industrial source".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        Ok(())
    }

    /// Row index in table order; unknown ids sort last.
    pub fn order(&self) -> usize {
        FEATURE_TABLE.iter().position(|(e, _)| *e == self.id).unwrap_or(usize::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_is_valid_and_ordered() {
        let grid = Scenario::paper_grid(&[1]);
        assert_eq!(grid.len(), 8);
        for (i, s) in grid.iter().enumerate() {
            s.validate().unwrap();
            assert_eq!(s.order(), i);
        }
        assert!(!grid[0].features.has(12) && grid[0].features.has(10) && grid[0].features.has(11));
        assert!(!grid[6].features.has(11) && !grid[7].features.has(11));
    }

    #[test]
    fn feature_names_round_trip() {
        let f = DesignFeatures(FEATURE_TABLE[3].1);
        assert_eq!(DesignFeatures::from_names(&f.names()).unwrap(), f);
        assert!(DesignFeatures::from_names(&["DF13".into()]).is_err());
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<DesignFeatures>(&json).unwrap(), f);
    }
}
