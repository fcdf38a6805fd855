//! Upper bounds: perfect failure prediction, perfect Best-of-2 selection,
//! and critic-score selection between two completed trajectories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::episode::{match_pairs, Condition, EpisodeRecord, Outcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ceiling {
    pub baseline: f64,
    pub ceiling: f64,
    pub delta: f64,
    pub n_units: usize,
}

/// Success rate when intervention only touches would-be failures: a unit
/// succeeds if its latent baseline outcome is a success, or if the
/// intervention run recovered it. Disruptions cannot occur, so the result
/// is `baseline + p * r` for the dataset's effective recovery rate.
pub fn oracle_intervention_ceiling(episodes: &[EpisodeRecord]) -> Result<Ceiling> {
    let pairs = match_pairs(episodes)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no paired episodes"));
    }
    let mut baseline = 0usize;
    let mut ceiling = 0usize;
    for pair in &pairs {
        let latent = pair.baseline.latent_baseline_outcome.ok_or_else(|| {
            Error::param(
                "latent_baseline_outcome",
                format!(
                    "intervention ceiling needs it on every baseline record; task {} seed {} has none",
                    pair.task_id(),
                    pair.baseline.seed
                ),
            )
        })?;
        let latent_success = latent == Outcome::Success;
        baseline += latent_success as usize;
        ceiling += (latent_success || pair.intervention.is_success()) as usize;
    }
    let n = pairs.len() as f64;
    Ok(Ceiling {
        baseline: baseline as f64 / n,
        ceiling: ceiling as f64 / n,
        delta: (ceiling - baseline) as f64 / n,
        n_units: pairs.len(),
    })
}

/// Best-of-2 with perfect ranking: a task succeeds if either seed does.
pub fn oracle_bo2(seed_a: &[bool], seed_b: &[bool]) -> Result<f64> {
    if seed_a.len() != seed_b.len() {
        return Err(Error::LengthMismatch(format!(
            "seed outcome lists differ in length: {} vs {}",
            seed_a.len(),
            seed_b.len()
        )));
    }
    if seed_a.is_empty() {
        return Err(Error::EmptyInput("no tasks"));
    }
    let wins = seed_a.iter().zip(seed_b).filter(|(a, b)| **a || **b).count();
    Ok(wins as f64 / seed_a.len() as f64)
}

/// Outcomes of the two lowest seeds of every task under one condition,
/// aligned by task. Tasks appear in order of first record.
pub fn two_seed_outcomes(
    episodes: &[EpisodeRecord],
    condition: Condition,
) -> Result<(Vec<String>, Vec<bool>, Vec<bool>)> {
    let runs = runs_by_task(episodes, condition);
    if runs.is_empty() {
        return Err(Error::EmptyInput("no episodes for the requested condition"));
    }
    let mut ids = Vec::with_capacity(runs.len());
    let mut a = Vec::with_capacity(runs.len());
    let mut b = Vec::with_capacity(runs.len());
    for (task, seeds) in runs {
        if seeds.len() < 2 {
            return Err(Error::param(
                "seed",
                format!("best-of-2 needs two seeds per task; task {task} has {}", seeds.len()),
            ));
        }
        ids.push(task.to_string());
        a.push(seeds[0].1.is_success());
        b.push(seeds[1].1.is_success());
    }
    Ok((ids, a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bo2Report {
    pub seed_a: f64,
    pub seed_b: f64,
    pub bo2: f64,
    /// Gain over the mean single-seed rate.
    pub delta: f64,
    pub n_tasks: usize,
}

pub fn bo2_from_episodes(episodes: &[EpisodeRecord], condition: Condition) -> Result<Bo2Report> {
    let (_, a, b) = two_seed_outcomes(episodes, condition)?;
    let rate = |v: &[bool]| v.iter().filter(|x| **x).count() as f64 / v.len() as f64;
    let bo2 = oracle_bo2(&a, &b)?;
    let (seed_a, seed_b) = (rate(&a), rate(&b));
    Ok(Bo2Report {
        seed_a,
        seed_b,
        bo2,
        delta: bo2 - (seed_a + seed_b) / 2.0,
        n_tasks: a.len(),
    })
}

/// Runs per task sorted by seed, tasks in order of first appearance.
fn runs_by_task(episodes: &[EpisodeRecord], condition: Condition) -> Vec<(&str, Vec<(u64, &EpisodeRecord)>)> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_task: BTreeMap<&str, Vec<(u64, &EpisodeRecord)>> = BTreeMap::new();
    for e in episodes.iter().filter(|e| e.condition == condition) {
        let runs = by_task.entry(&e.task_id).or_default();
        if runs.is_empty() {
            order.push(&e.task_id);
        }
        runs.push((e.seed, e));
    }
    order
        .into_iter()
        .map(|task| {
            let mut runs = by_task.remove(task).unwrap_or_default();
            runs.sort_by_key(|(seed, _)| *seed);
            (task, runs)
        })
        .collect()
}

/// Two completed trajectories of one task where exactly one succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestedPair {
    pub task_id: String,
    pub outcome_a: bool,
    pub outcome_b: bool,
    /// Trajectory-level failure scores.
    pub score_a: f64,
    pub score_b: f64,
}

impl ContestedPair {
    pub fn new(
        task_id: impl Into<String>,
        outcome_a: bool,
        outcome_b: bool,
        score_a: f64,
        score_b: f64,
    ) -> Result<Self> {
        let task_id = task_id.into();
        if outcome_a == outcome_b {
            return Err(Error::param(
                "outcome",
                format!(
                    "task {task_id} is not contested: both trajectories {}",
                    if outcome_a { "succeed" } else { "fail" }
                ),
            ));
        }
        for (name, s) in [("score_a", score_a), ("score_b", score_b)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {s}")));
            }
        }
        Ok(ContestedPair {
            task_id,
            outcome_a,
            outcome_b,
            score_a,
            score_b,
        })
    }
}

/// How per-step calibrated scores collapse to one trajectory score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
    Final,
}

pub fn trajectory_score(episode: &EpisodeRecord, aggregation: Aggregation) -> Result<f64> {
    if !episode.has_full_trace() || episode.steps.is_empty() {
        return Err(Error::param(
            "steps",
            format!(
                "task {} seed {} has no full per-step trace to score",
                episode.task_id, episode.seed
            ),
        ));
    }
    let scores = episode.steps.iter().map(|s| s.calibrated_score);
    Ok(match aggregation {
        Aggregation::Max => scores.fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => scores.sum::<f64>() / episode.steps.len() as f64,
        Aggregation::Final => episode.steps[episode.steps.len() - 1].calibrated_score,
    })
}

/// Contested tasks among the two lowest seeds of each task.
pub fn contested_pairs(
    episodes: &[EpisodeRecord],
    condition: Condition,
    aggregation: Aggregation,
) -> Result<Vec<ContestedPair>> {
    let mut pairs = Vec::new();
    for (task, runs) in runs_by_task(episodes, condition) {
        if runs.len() < 2 {
            return Err(Error::param(
                "seed",
                format!("selection needs two seeds per task; task {task} has {}", runs.len()),
            ));
        }
        let (a, b) = (runs[0].1, runs[1].1);
        if a.is_success() != b.is_success() {
            pairs.push(ContestedPair::new(
                task,
                a.is_success(),
                b.is_success(),
                trajectory_score(a, aggregation)?,
                trajectory_score(b, aggregation)?,
            )?);
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub n_contested: usize,
    pub n_correct: usize,
    pub selection_accuracy: f64,
    /// Change versus picking at random, as a share of the contested tasks.
    pub delta: f64,
    /// Pairs with equal scores; the first trajectory was chosen.
    pub ties: usize,
}

impl Selection {
    /// The same change expressed over a larger task population.
    pub fn delta_over(&self, n_tasks: usize) -> f64 {
        (self.n_correct as f64 - self.n_contested as f64 / 2.0) / n_tasks as f64
    }
}

/// Picks the lower-scored (less likely to fail) trajectory of each pair.
pub fn critic_select(pairs: &[ContestedPair]) -> Result<Selection> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no contested pairs"));
    }
    let mut correct = 0;
    let mut ties = 0;
    for p in pairs {
        if p.score_a == p.score_b {
            ties += 1;
        }
        let chosen = if p.score_b < p.score_a {
            p.outcome_b
        } else {
            p.outcome_a
        };
        correct += chosen as usize;
    }
    let n = pairs.len();
    let accuracy = correct as f64 / n as f64;
    Ok(Selection {
        n_contested: n,
        n_correct: correct,
        selection_accuracy: accuracy,
        delta: accuracy - 0.5,
        ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::StepRecord;
    use proptest::prelude::*;

    fn record(
        task: &str,
        seed: u64,
        condition: Condition,
        outcome: Outcome,
        latent: Option<Outcome>,
        scores: &[f64],
    ) -> EpisodeRecord {
        EpisodeRecord {
            task_id: task.into(),
            seed,
            condition,
            n_steps: scores.len() as u32,
            steps: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| StepRecord {
                    index: i as u32,
                    raw_score: s,
                    calibrated_score: s,
                    triggered: false,
                })
                .collect(),
            outcome,
            n_interventions: 0,
            latent_baseline_outcome: latent,
        }
    }

    #[test]
    fn ceiling_removes_disruptions_and_keeps_recoveries() {
        use Outcome::*;
        let eps = vec![
            record("a", 0, Condition::Baseline, Success, Some(Success), &[]),
            record("a", 0, Condition::Intervention, Failure, Some(Success), &[]),
            record("b", 0, Condition::Baseline, Failure, Some(Failure), &[]),
            record("b", 0, Condition::Intervention, Success, Some(Failure), &[]),
            record("c", 0, Condition::Baseline, Failure, Some(Failure), &[]),
            record("c", 0, Condition::Intervention, NoAnswer, Some(Failure), &[]),
        ];
        let c = oracle_intervention_ceiling(&eps).unwrap();
        assert_eq!(c.baseline, 1.0 / 3.0);
        assert_eq!(c.ceiling, 2.0 / 3.0);
        assert!((c.delta - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ceiling_requires_latent_outcomes() {
        let eps = vec![
            record("a", 0, Condition::Baseline, Outcome::Success, None, &[]),
            record("a", 0, Condition::Intervention, Outcome::Success, None, &[]),
        ];
        assert!(oracle_intervention_ceiling(&eps).is_err());
    }

    #[test]
    fn bo2_examples() {
        let s = [true, false, true, false];
        assert_eq!(oracle_bo2(&s, &s).unwrap(), 0.5);
        assert_eq!(oracle_bo2(&s, &[false, true, false, false]).unwrap(), 0.75);
        assert!(oracle_bo2(&s, &[true]).is_err());
    }

    proptest! {
        #[test]
        fn bo2_dominates_each_seed(v in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
            let (a, b): (Vec<bool>, Vec<bool>) = v.into_iter().unzip();
            let bo2 = oracle_bo2(&a, &b).unwrap();
            let rate = |x: &[bool]| x.iter().filter(|y| **y).count() as f64 / x.len() as f64;
            prop_assert!(bo2 >= rate(&a) && bo2 >= rate(&b));
        }
    }

    #[test]
    fn selection_with_perfect_and_inverted_scores() {
        let perfect: Vec<_> = (0..6)
            .map(|i| {
                ContestedPair::new(
                    format!("t{i}"),
                    i % 2 == 0,
                    i % 2 == 1,
                    if i % 2 == 0 { 0.1 } else { 0.9 },
                    if i % 2 == 0 { 0.9 } else { 0.1 },
                )
                .unwrap()
            })
            .collect();
        let sel = critic_select(&perfect).unwrap();
        assert_eq!(sel.selection_accuracy, 1.0);
        assert_eq!(sel.delta, 0.5);

        let inverted: Vec<_> = perfect
            .iter()
            .map(|p| ContestedPair {
                score_a: p.score_b,
                score_b: p.score_a,
                ..p.clone()
            })
            .collect();
        assert_eq!(critic_select(&inverted).unwrap().selection_accuracy, 0.0);
    }

    #[test]
    fn ties_choose_the_first_trajectory() {
        let pairs = vec![
            ContestedPair::new("x", true, false, 0.5, 0.5).unwrap(),
            ContestedPair::new("y", false, true, 0.4, 0.4).unwrap(),
        ];
        let sel = critic_select(&pairs).unwrap();
        assert_eq!(sel.ties, 2);
        assert_eq!(sel.n_correct, 1);
    }

    #[test]
    fn uncontested_pairs_are_rejected() {
        assert!(ContestedPair::new("x", true, true, 0.1, 0.2).is_err());
        assert!(critic_select(&[]).is_err());
    }

    #[test]
    fn glm_selection_counts() {
        // 11 contested, 7 chosen correctly.
        let pairs: Vec<_> = (0..11)
            .map(|i| ContestedPair::new(format!("t{i}"), true, false, if i < 7 { 0.2 } else { 0.8 }, 0.5).unwrap())
            .collect();
        let sel = critic_select(&pairs).unwrap();
        assert!((sel.selection_accuracy - 0.636).abs() < 5e-4);
        assert!((sel.delta_over(100) - 0.015).abs() < 1e-12);
    }

    #[test]
    fn trajectory_aggregations() {
        let e = record("a", 0, Condition::Baseline, Outcome::Success, None, &[0.2, 0.8, 0.5]);
        assert_eq!(trajectory_score(&e, Aggregation::Max).unwrap(), 0.8);
        assert!((trajectory_score(&e, Aggregation::Mean).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(trajectory_score(&e, Aggregation::Final).unwrap(), 0.5);
    }

    #[test]
    fn contested_pairs_from_two_seed_log() {
        use Outcome::*;
        let eps = vec![
            record("a", 1, Condition::Baseline, Failure, None, &[0.9]),
            record("a", 0, Condition::Baseline, Success, None, &[0.2]),
            record("b", 0, Condition::Baseline, Success, None, &[0.3]),
            record("b", 1, Condition::Baseline, Success, None, &[0.3]),
        ];
        let pairs = contested_pairs(&eps, Condition::Baseline, Aggregation::Max).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].task_id, "a");
        assert!(pairs[0].outcome_a && !pairs[0].outcome_b);
        let report = bo2_from_episodes(&eps, Condition::Baseline).unwrap();
        assert_eq!(report.bo2, 1.0);
        assert_eq!(report.seed_a, 1.0);
        assert_eq!(report.seed_b, 0.5);
    }
}
