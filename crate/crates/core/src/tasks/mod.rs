//! Masking policies, negative sampling, and the pre-training objectives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod masking;
pub mod negatives;
pub mod objectives;

pub use masking::{
    joint_random_mask, sample_region_mask, sample_word_mask, MaskAction, MaskModality, MaskPlan, MaskSet,
    SequenceInput,
};
pub use negatives::{sample_negative, ItmSample, Provenance};
pub use objectives::{
    itm_logits, itm_loss, itm_score, mlm_loss, mrc_kl_loss, mrc_loss, mrfr_loss, wra_distances, wra_loss,
    MaskedExample, Pass, WraOutput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Mlm,
    Itm,
    Wra,
    Mrfr,
    Mrc,
    MrcKl,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Mlm,
        TaskKind::Itm,
        TaskKind::Wra,
        TaskKind::Mrfr,
        TaskKind::Mrc,
        TaskKind::MrcKl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Mlm => "mlm",
            TaskKind::Itm => "itm",
            TaskKind::Wra => "wra",
            TaskKind::Mrfr => "mrfr",
            TaskKind::Mrc => "mrc",
            TaskKind::MrcKl => "mrc_kl",
        }
    }

    /// Which modality the task masks, if any.
    pub fn masked_modality(self) -> Option<MaskModality> {
        match self {
            TaskKind::Mlm => Some(MaskModality::Text),
            TaskKind::Mrfr | TaskKind::Mrc | TaskKind::MrcKl => Some(MaskModality::Region),
            TaskKind::Itm | TaskKind::Wra => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}
