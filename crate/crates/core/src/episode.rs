//! Records of individual agent runs.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framework::OutcomeTable;
use crate::stats::PairedOutcomes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    Intervention,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Baseline => "baseline",
            Condition::Intervention => "intervention",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    /// Step budget ran out before a final answer. Counts as a failure.
    NoAnswer,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: u32,
    pub raw_score: f64,
    pub calibrated_score: f64,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_id: String,
    pub seed: u64,
    pub condition: Condition,
    pub n_steps: u32,
    /// Per-step scores. Logs without full traces carry only the triggered
    /// steps here; see [`EpisodeRecord::has_full_trace`].
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub n_interventions: u32,
    /// What the agent would have produced without intervention (success or
    /// failure), when known.
    pub latent_baseline_outcome: Option<Outcome>,
}

impl EpisodeRecord {
    pub fn is_success(&self) -> bool {
        self.outcome.is_success()
    }

    pub fn has_full_trace(&self) -> bool {
        self.steps.len() == self.n_steps as usize
    }

    pub fn triggered_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| s.triggered)
    }
}

/// Baseline and intervention runs of the same (task, seed) unit.
#[derive(Debug, Clone, Copy)]
pub struct EpisodePair<'a> {
    pub baseline: &'a EpisodeRecord,
    pub intervention: &'a EpisodeRecord,
}

impl EpisodePair<'_> {
    pub fn task_id(&self) -> &str {
        &self.baseline.task_id
    }
}

/// Pairs records by (task_id, seed), in order of each unit's first record.
/// Every unit needs exactly one record per condition.
pub fn match_pairs(episodes: &[EpisodeRecord]) -> Result<Vec<EpisodePair<'_>>> {
    let mut slots: HashMap<(&str, u64), (usize, [Option<usize>; 2])> = HashMap::new();
    for (i, e) in episodes.iter().enumerate() {
        let n = slots.len();
        let entry = slots.entry((e.task_id.as_str(), e.seed)).or_insert((n, [None, None]));
        let slot = &mut entry.1[e.condition as usize];
        if slot.is_some() {
            return Err(Error::Pairing(format!(
                "duplicate {} record for task {} seed {}",
                e.condition, e.task_id, e.seed
            )));
        }
        *slot = Some(i);
    }
    let mut units: Vec<_> = slots.into_iter().collect();
    units.sort_by_key(|(_, (order, _))| *order);
    units
        .into_iter()
        .map(|((task, seed), (_, [b, i]))| match (b, i) {
            (Some(b), Some(i)) => Ok(EpisodePair {
                baseline: &episodes[b],
                intervention: &episodes[i],
            }),
            (None, _) => Err(Error::Pairing(format!(
                "task {task} seed {seed} has no baseline record"
            ))),
            (_, None) => Err(Error::Pairing(format!(
                "task {task} seed {seed} has no intervention record"
            ))),
        })
        .collect()
}

pub fn outcome_table(pairs: &[EpisodePair<'_>]) -> OutcomeTable {
    OutcomeTable::from_pairs(
        pairs
            .iter()
            .map(|p| (p.baseline.is_success(), p.intervention.is_success())),
    )
}

pub fn paired_outcomes(pairs: &[EpisodePair<'_>]) -> Result<PairedOutcomes> {
    PairedOutcomes::new(
        pairs.iter().map(|p| p.task_id().to_string()).collect(),
        pairs.iter().map(|p| p.baseline.is_success()).collect(),
        pairs.iter().map(|p| p.intervention.is_success()).collect(),
    )
}
