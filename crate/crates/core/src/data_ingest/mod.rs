//! Corpora, region features and synthetic grounded-dialog worlds.

pub mod features;
pub mod synthetic;
pub mod visdial;
pub mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MdstError, Result};

pub use features::{load_region_features, FeatureStore, RawRegionFeatures};
pub use synthetic::{generate_synthetic_world, SynthConfig, SyntheticWorld};
pub use visdial::{load_dense_annotations, load_visdial, write_visdial};
pub use vocab::Vocabulary;

/// Number of candidate answers per round in the ranking protocol.
pub const NUM_CANDIDATES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = MdstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(MdstError::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Where a corpus came from. Only synthetic corpora may be judged automatically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    VisDial,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub options: Vec<String>,
    /// Ground-truth position; absent on splits that hide it.
    pub gt_index: Option<usize>,
    /// Dense relevance in `[0,1]` per option, when annotated.
    pub relevance: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub question: String,
    pub answer: Option<String>,
    pub candidates: Option<CandidateList>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogRecord {
    pub image_id: String,
    pub caption: String,
    pub rounds: Vec<Round>,
    /// Leading rounds that carry a gold answer.
    pub answerable_rounds: usize,
}

impl DialogRecord {
    pub fn validate(&self) -> Result<()> {
        let ctx = |m: String| MdstError::CorruptCorpus(format!("dialog {}: {m}", self.image_id));
        if self.caption.trim().is_empty() {
            return Err(ctx("empty caption".into()));
        }
        if self.rounds.is_empty() {
            return Err(ctx("no rounds".into()));
        }
        for (t, r) in self.rounds.iter().enumerate() {
            if r.question.trim().is_empty() {
                return Err(ctx(format!("round {} has an empty question", t + 1)));
            }
            if matches!(&r.answer, Some(a) if a.trim().is_empty()) {
                return Err(ctx(format!("round {} has an empty answer", t + 1)));
            }
            if let Some(c) = &r.candidates {
                if c.options.len() != NUM_CANDIDATES {
                    return Err(ctx(format!(
                        "round {} has {} candidates, expected {NUM_CANDIDATES}",
                        t + 1,
                        c.options.len()
                    )));
                }
                if matches!(c.gt_index, Some(g) if g >= NUM_CANDIDATES) {
                    return Err(ctx(format!("round {} ground-truth index out of range", t + 1)));
                }
                if let Some(rel) = &c.relevance {
                    if rel.len() != NUM_CANDIDATES {
                        return Err(ctx(format!("round {} relevance has {} entries", t + 1, rel.len())));
                    }
                }
            }
        }
        if self.answerable_rounds > self.rounds.len()
            || self.rounds[..self.answerable_rounds].iter().any(|r| r.answer.is_none())
        {
            return Err(ctx("answerable round count disagrees with answers".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogCorpus {
    pub split: Split,
    pub source: CorpusSource,
    pub dialogs: Vec<DialogRecord>,
}

impl DialogCorpus {
    pub fn validate(&self) -> Result<()> {
        self.dialogs.iter().try_for_each(DialogRecord::validate)
    }

    pub fn has_candidates(&self) -> bool {
        self.dialogs
            .iter()
            .flat_map(|d| &d.rounds)
            .any(|r| r.candidates.as_ref().is_some_and(|c| c.gt_index.is_some()))
    }
}
