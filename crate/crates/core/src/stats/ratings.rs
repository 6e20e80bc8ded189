//! The ratings file exchanged between the study service and the analysis
//! commands. JSON:
//!
//! ```text
//! {
//!   "format": "medeval-ratings/1",
//!   "design": "pairwise",
//!   "study_id": "...",
//!   "arms": ["model", "physician"],
//!   "axes": [{"name": "consensus", "prompt": "...", "values": ["A", "B", "tie"]}],
//!   "records": [{"task_id": "...", "item_id": "...", "rater_id": "...", "values": {"consensus": "A"}}],
//!   "excluded": [{"task_id": "...", "item_id": "...", "reason": "..."}]
//! }
//! ```
//!
//! Independent records also carry `arm`; each independent axis lists its
//! closed vocabulary in `values` and the favourable value in `best`. Pairwise
//! values are `A` (first arm), `B` (second arm) or `tie`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StatsError;

pub const RATINGS_FORMAT: &str = "medeval-ratings/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Independent,
    Pairwise,
}

impl std::str::FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(Design::Independent),
            "pairwise" => Ok(Design::Pairwise),
            _ => Err(format!("unknown design {s:?} (expected independent or pairwise)")),
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Design::Independent => "independent",
            Design::Pairwise => "pairwise",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub name: String,
    pub prompt: String,
    pub values: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub task_id: String,
    pub item_id: String,
    pub rater_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<String>,
    pub values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub task_id: String,
    pub item_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingsFile {
    pub format: String,
    pub design: Design,
    pub study_id: String,
    pub arms: Vec<String>,
    pub axes: Vec<AxisSpec>,
    pub records: Vec<RatingRecord>,
    #[serde(default)]
    pub excluded: Vec<Exclusion>,
}

impl RatingsFile {
    pub fn from_path(path: &Path) -> Result<Self, StatsError> {
        let text = std::fs::read_to_string(path).map_err(|e| StatsError::Ratings(format!("{}: {e}", path.display())))?;
        let file: RatingsFile =
            serde_json::from_str(&text).map_err(|e| StatsError::Ratings(format!("{}: {e}", path.display())))?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ratings serialize")
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.format != RATINGS_FORMAT {
            return Err(StatsError::Ratings(format!("unsupported format {:?}, expected {RATINGS_FORMAT:?}", self.format)));
        }
        if self.design == Design::Pairwise && self.arms.len() != 2 {
            return Err(StatsError::Ratings(format!("pairwise files need exactly 2 arms, found {}", self.arms.len())));
        }
        let arms: BTreeSet<&str> = self.arms.iter().map(String::as_str).collect();
        for (i, r) in self.records.iter().enumerate() {
            let at = || format!("record {i} (task {})", r.task_id);
            match (&self.design, &r.arm) {
                (Design::Independent, Some(arm)) if !arms.contains(arm.as_str()) => {
                    return Err(StatsError::Ratings(format!("{}: unknown arm {arm:?}", at())));
                }
                (Design::Independent, None) => return Err(StatsError::Ratings(format!("{}: missing arm", at()))),
                _ => {}
            }
            for axis in &self.axes {
                let v = r.values.get(&axis.name).ok_or_else(|| StatsError::Ratings(format!("{}: missing axis {:?}", at(), axis.name)))?;
                if !axis.values.contains(v) {
                    return Err(StatsError::Ratings(format!("{}: {v:?} is not a value of axis {:?}", at(), axis.name)));
                }
            }
        }
        Ok(())
    }
}
