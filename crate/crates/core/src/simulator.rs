//! Synthetic agent, critic and intervention world with known ground truth.
//!
//! Each (task, seed) unit draws one [`EpisodeScript`]: the latent baseline
//! outcome, the answer step, and per-step critic scores and uniforms. The
//! baseline and intervention episodes replay the same script, so any
//! difference between them is caused by intervention alone.
//!
//! Intervention semantics: a trigger on a currently failing episode flips it
//! to success with the mechanism's recovery probability; a trigger on a
//! currently succeeding episode flips it to failure with the disruption
//! probability. An episode flips at most once. Every trigger multiplies the
//! odds of later triggers by the cascade multiplier.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{apply_temperature, clamp_score, logistic, CalibrationModel};
use crate::episode::{Condition, EpisodeRecord, Outcome, StepRecord};
use crate::error::{Error, Result};
use crate::framework::OutcomeTable;
use crate::seeding::{map_indexed, stream_rng, Execution};

pub const DEFAULT_STEP_BUDGET: u32 = 15;
pub const DEFAULT_TAU: f64 = 0.6;
pub const DEFAULT_INTERVENTION_BUDGET: u32 = 3;
pub const MAX_SEEDS: usize = 1 << 16;
const MAX_TASKS: usize = 1 << 40;

fn default_step_budget() -> u32 {
    DEFAULT_STEP_BUDGET
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_intervention_budget() -> u32 {
    DEFAULT_INTERVENTION_BUDGET
}
fn default_cascade() -> f64 {
    1.0
}

fn unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{field} must lie in [0, 1], got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field} must be positive, got {v}")))
    }
}

/// Inclusive range of step indices at which an episode gives its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    /// Probability that the unassisted agent fails the task.
    pub p_fail: f64,
    /// Share of successful episodes that answer at step 0 or 1.
    #[serde(default)]
    pub early_answer_frac: f64,
    #[serde(default = "default_step_budget")]
    pub step_budget: u32,
    /// Answer step for the remaining episodes, uniform over the range.
    /// Defaults to `[2, step_budget - 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_steps: Option<StepRange>,
}

impl AgentSpec {
    pub fn new(p_fail: f64) -> Self {
        AgentSpec {
            p_fail,
            early_answer_frac: 0.0,
            step_budget: DEFAULT_STEP_BUDGET,
            answer_steps: None,
        }
    }

    pub fn answer_range(&self) -> StepRange {
        self.answer_steps.unwrap_or_else(|| {
            let max = self.step_budget - 1;
            StepRange { min: 2.min(max), max }
        })
    }

    fn validate(&self) -> Result<()> {
        unit("agent.p_fail", self.p_fail)?;
        unit("agent.early_answer_frac", self.early_answer_frac)?;
        if self.step_budget < 1 {
            return Err(Error::Config("agent.step_budget must be at least 1".into()));
        }
        let r = self.answer_range();
        if r.min > r.max || r.max >= self.step_budget {
            return Err(Error::Config(format!(
                "agent.answer_steps must satisfy min <= max < step_budget ({}), got [{}, {}]",
                self.step_budget, r.min, r.max
            )));
        }
        Ok(())
    }
}

/// Distribution of per-step critic failure scores given the episode's
/// current outcome class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriticSpec {
    Beta {
        fail_alpha: f64,
        fail_beta: f64,
        succeed_alpha: f64,
        succeed_beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_auroc: Option<f64>,
    },
    /// Latent evidence `z ~ N(+-separation, 2 * separation)`, whose value is
    /// the true log-odds of failure at even priors; the emitted score is
    /// `logistic(overconfidence * z)`.
    LogitNormal {
        separation: f64,
        overconfidence: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_auroc: Option<f64>,
    },
}

impl CriticSpec {
    pub fn beta(fail: (f64, f64), succeed: (f64, f64)) -> Self {
        CriticSpec::Beta {
            fail_alpha: fail.0,
            fail_beta: fail.1,
            succeed_alpha: succeed.0,
            succeed_beta: succeed.1,
            target_auroc: None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CriticSpec::Beta {
                fail_alpha,
                fail_beta,
                succeed_alpha,
                succeed_beta,
                target_auroc,
            } => {
                positive("critic.fail_alpha", fail_alpha)?;
                positive("critic.fail_beta", fail_beta)?;
                positive("critic.succeed_alpha", succeed_alpha)?;
                positive("critic.succeed_beta", succeed_beta)?;
                if let Some(t) = target_auroc {
                    unit("critic.target_auroc", t)?;
                    let fail_mean = fail_alpha / (fail_alpha + fail_beta);
                    let succeed_mean = succeed_alpha / (succeed_alpha + succeed_beta);
                    if t > 0.5 && fail_mean <= succeed_mean {
                        return Err(Error::Config(format!(
                            "critic: target_auroc {t} > 0.5 needs a higher mean failure score \
                             ({fail_mean:.3}) than success score ({succeed_mean:.3})"
                        )));
                    }
                }
            }
            CriticSpec::LogitNormal {
                separation,
                overconfidence,
                target_auroc,
            } => {
                positive("critic.separation", separation)?;
                positive("critic.overconfidence", overconfidence)?;
                if let Some(t) = target_auroc {
                    unit("critic.target_auroc", t)?;
                }
            }
        }
        Ok(())
    }
}

enum CriticSampler {
    Beta {
        fail: Beta<f64>,
        succeed: Beta<f64>,
    },
    LogitNormal {
        fail: Normal<f64>,
        succeed: Normal<f64>,
        overconfidence: f64,
    },
}

impl CriticSampler {
    fn new(spec: &CriticSpec) -> Result<Self> {
        spec.validate()?;
        let bad = |e: rand_distr::BetaError| Error::Config(format!("critic: {e}"));
        Ok(match *spec {
            CriticSpec::Beta {
                fail_alpha,
                fail_beta,
                succeed_alpha,
                succeed_beta,
                ..
            } => CriticSampler::Beta {
                fail: Beta::new(fail_alpha, fail_beta).map_err(bad)?,
                succeed: Beta::new(succeed_alpha, succeed_beta).map_err(bad)?,
            },
            CriticSpec::LogitNormal {
                separation,
                overconfidence,
                ..
            } => {
                let sd = (2.0 * separation).sqrt();
                let bad = |e: rand_distr::NormalError| Error::Config(format!("critic: {e}"));
                CriticSampler::LogitNormal {
                    fail: Normal::new(separation, sd).map_err(bad)?,
                    succeed: Normal::new(-separation, sd).map_err(bad)?,
                    overconfidence,
                }
            }
        })
    }

    /// One score for each outcome class.
    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match self {
            CriticSampler::Beta { fail, succeed } => (clamp_score(fail.sample(rng)), clamp_score(succeed.sample(rng))),
            CriticSampler::LogitNormal {
                fail,
                succeed,
                overconfidence,
            } => (
                clamp_score(logistic(overconfidence * fail.sample(rng))),
                clamp_score(logistic(overconfidence * succeed.sample(rng))),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    /// Undo the flagged action and retry; each trigger costs one extra step.
    Rollback,
    /// Keep the action and show a warning.
    Append,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub recovery_prob: f64,
    pub disruption_prob: f64,
    /// Multiplies the odds of every later trigger after each trigger.
    #[serde(default = "default_cascade")]
    pub cascade_multiplier: f64,
    /// Chance that a disrupted episode which used its whole intervention
    /// budget ends without an answer.
    #[serde(default)]
    pub no_answer_prob: f64,
}

impl MechanismSpec {
    pub fn new(kind: MechanismKind, recovery_prob: f64, disruption_prob: f64) -> Self {
        MechanismSpec {
            kind,
            recovery_prob,
            disruption_prob,
            cascade_multiplier: 1.0,
            no_answer_prob: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        unit("mechanism.recovery_prob", self.recovery_prob)?;
        unit("mechanism.disruption_prob", self.disruption_prob)?;
        unit("mechanism.no_answer_prob", self.no_answer_prob)?;
        if !(self.cascade_multiplier >= 1.0 && self.cascade_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "mechanism.cascade_multiplier must be >= 1, got {}",
                self.cascade_multiplier
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Trigger when the (optionally calibrated) score exceeds `tau`.
    Threshold,
    /// Trigger on a uniformly random share `rate` of steps.
    RandomRate,
    /// Random triggering at the per-step rate the threshold policy shows on
    /// the same configuration.
    MatchedRate,
    /// Threshold rule restricted to steps after `after_step`.
    LateOnly,
    /// Perfect failure prediction: trigger exactly while the episode is failing.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_step: Option<u32>,
    #[serde(default)]
    pub min_step: u32,
    #[serde(default = "default_intervention_budget")]
    pub intervention_budget: u32,
    /// Apply the configured temperature before thresholding.
    #[serde(default)]
    pub calibrated: bool,
}

impl PolicySpec {
    pub fn threshold(tau: f64) -> Self {
        PolicySpec {
            kind: PolicyKind::Threshold,
            tau,
            rate: None,
            after_step: None,
            min_step: 0,
            intervention_budget: DEFAULT_INTERVENTION_BUDGET,
            calibrated: false,
        }
    }

    pub fn rule(&self) -> Result<TriggerRule> {
        Ok(match self.kind {
            PolicyKind::Threshold => TriggerRule::Threshold(self.tau),
            PolicyKind::RandomRate => TriggerRule::Random(
                self.rate
                    .ok_or_else(|| Error::Config("policy.rate is required for kind = \"random_rate\"".into()))?,
            ),
            PolicyKind::MatchedRate => TriggerRule::MatchedRate,
            PolicyKind::LateOnly => TriggerRule::LateOnly {
                tau: self.tau,
                after_step: self
                    .after_step
                    .ok_or_else(|| Error::Config("policy.after_step is required for kind = \"late_only\"".into()))?,
            },
            PolicyKind::Oracle => TriggerRule::Oracle,
        })
    }

    fn validate(&self, step_budget: u32) -> Result<()> {
        unit("policy.tau", self.tau)?;
        if let Some(rate) = self.rate {
            unit("policy.rate", rate)?;
        }
        if self.min_step >= step_budget {
            return Err(Error::Config(format!(
                "policy.min_step ({}) must be below agent.step_budget ({step_budget})",
                self.min_step
            )));
        }
        self.rule().map(|_| ())
    }
}

/// A policy's triggering rule with its parameters resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerRule {
    Threshold(f64),
    Random(f64),
    MatchedRate,
    LateOnly { tau: f64, after_step: u32 },
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub temperature: f64,
}

/// Everything needed to simulate paired runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub agent: AgentSpec,
    pub critic: CriticSpec,
    pub mechanism: MechanismSpec,
    pub policy: PolicySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSpec>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.critic.validate()?;
        self.mechanism.validate()?;
        self.policy.validate(self.agent.step_budget)?;
        if let Some(cal) = self.calibration {
            CalibrationModel::with_temperature(cal.temperature)
                .map_err(|e| Error::Config(format!("calibration.{e}")))?;
        }
        if self.policy.calibrated && self.calibration.is_none() {
            return Err(Error::Config(
                "policy.calibrated = true needs a [calibration] section".into(),
            ));
        }
        Ok(())
    }

    pub fn calibration_model(&self) -> Option<CalibrationModel> {
        self.calibration
            .map(|c| CalibrationModel::with_temperature(c.temperature).expect("validated"))
    }
}

/// Random draws for one (task, seed) unit, shared by both arms.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeScript {
    pub latent_success: bool,
    pub answer_step: u32,
    pub fail_scores: Vec<f64>,
    pub succeed_scores: Vec<f64>,
    trigger_draws: Vec<f64>,
    flip_draws: Vec<f64>,
    no_answer_draw: f64,
}

impl EpisodeScript {
    pub fn draw(agent: &AgentSpec, critic: &CriticSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        agent.validate()?;
        let sampler = CriticSampler::new(critic)?;
        Ok(Self::draw_with(agent, &sampler, rng))
    }

    fn draw_with(agent: &AgentSpec, sampler: &CriticSampler, rng: &mut ChaCha8Rng) -> Self {
        let latent_success = rng.random::<f64>() >= agent.p_fail;
        let early = rng.random::<f64>() < agent.early_answer_frac;
        let range = agent.answer_range();
        let step_draw: f64 = rng.random();
        let answer_step = if latent_success && early {
            (step_draw < 0.5) as u32
        } else {
            let width = (range.max - range.min + 1) as f64;
            range.min + ((step_draw * width) as u32).min(range.max - range.min)
        }
        .min(agent.step_budget - 1);

        let n = agent.step_budget as usize;
        let mut fail_scores = Vec::with_capacity(n);
        let mut succeed_scores = Vec::with_capacity(n);
        let mut trigger_draws = Vec::with_capacity(n);
        let mut flip_draws = Vec::with_capacity(n);
        for _ in 0..n {
            let (f, s) = sampler.sample_pair(rng);
            fail_scores.push(f);
            succeed_scores.push(s);
            trigger_draws.push(rng.random());
            flip_draws.push(rng.random());
        }
        EpisodeScript {
            latent_success,
            answer_step,
            fail_scores,
            succeed_scores,
            trigger_draws,
            flip_draws,
            no_answer_draw: rng.random(),
        }
    }
}

/// Raises the odds of `p` by `factor`.
fn inflate(p: f64, factor: f64) -> f64 {
    if factor == 1.0 {
        return p;
    }
    p * factor / (1.0 - p + p * factor)
}

/// Plays a script under one condition. `Baseline` never triggers.
pub fn play(
    script: &EpisodeScript,
    config: &SimConfig,
    rule: TriggerRule,
    condition: Condition,
    calibration: Option<&CalibrationModel>,
    task_id: &str,
    seed: u64,
) -> Result<EpisodeRecord> {
    if rule == TriggerRule::MatchedRate && condition == Condition::Intervention {
        return Err(Error::Config(
            "matched_rate policy must be resolved to a rate before playing episodes".into(),
        ));
    }
    let budget_steps = config.agent.step_budget;
    let mech = &config.mechanism;
    let policy = &config.policy;
    let active = condition == Condition::Intervention && mech.kind != MechanismKind::None;

    let mut succeeding = script.latent_success;
    let mut flipped = false;
    let mut disrupted = false;
    let mut n_trig = 0u32;
    let mut last = script.answer_step;
    let mut steps = Vec::with_capacity(last as usize + 1);

    let mut i = 0u32;
    while i <= last {
        let idx = i as usize;
        let raw = if succeeding {
            script.succeed_scores[idx]
        } else {
            script.fail_scores[idx]
        };
        let calibrated_score = calibration.map_or(raw, |m| apply_temperature(m.temperature, raw));
        let scored = if policy.calibrated { calibrated_score } else { raw };
        let cascade = mech.cascade_multiplier.powi(n_trig as i32);

        let triggered = active
            && i >= policy.min_step
            && n_trig < policy.intervention_budget
            && match rule {
                TriggerRule::Threshold(tau) => inflate(scored, cascade) > tau,
                TriggerRule::LateOnly { tau, after_step } => i > after_step && inflate(scored, cascade) > tau,
                TriggerRule::Random(rate) => script.trigger_draws[idx] < inflate(rate, cascade),
                TriggerRule::Oracle => !succeeding,
                TriggerRule::MatchedRate => unreachable!("rejected above"),
            };

        if triggered {
            n_trig += 1;
            if !flipped {
                let u = script.flip_draws[idx];
                if !succeeding && u < mech.recovery_prob {
                    succeeding = true;
                    flipped = true;
                } else if succeeding && u < mech.disruption_prob {
                    succeeding = false;
                    flipped = true;
                    disrupted = true;
                }
            }
            if mech.kind == MechanismKind::Rollback {
                last = (last + 1).min(budget_steps - 1);
            }
        }
        steps.push(StepRecord {
            index: i,
            raw_score: raw,
            calibrated_score,
            triggered,
        });
        i += 1;
    }

    let mut outcome = if succeeding { Outcome::Success } else { Outcome::Failure };
    if disrupted && n_trig == policy.intervention_budget && script.no_answer_draw < mech.no_answer_prob {
        outcome = Outcome::NoAnswer;
        // The agent keeps going until the step budget runs out.
        for i in steps.len() as u32..budget_steps {
            let raw = script.fail_scores[i as usize];
            steps.push(StepRecord {
                index: i,
                raw_score: raw,
                calibrated_score: calibration.map_or(raw, |m| apply_temperature(m.temperature, raw)),
                triggered: false,
            });
        }
    }

    Ok(EpisodeRecord {
        task_id: task_id.to_string(),
        seed,
        condition,
        n_steps: steps.len() as u32,
        steps,
        outcome,
        n_interventions: n_trig,
        latent_baseline_outcome: Some(if script.latent_success {
            Outcome::Success
        } else {
            Outcome::Failure
        }),
    })
}

/// Stream index for a (task, seed) unit.
pub fn unit_stream(task_index: usize, seed_index: usize) -> Result<u64> {
    if seed_index >= MAX_SEEDS {
        return Err(Error::Seeding(format!(
            "seed index {seed_index} exceeds the supported {MAX_SEEDS} seeds per task"
        )));
    }
    if task_index >= MAX_TASKS {
        return Err(Error::Seeding(format!("task index {task_index} is too large")));
    }
    Ok(((task_index as u64) << 16) | seed_index as u64)
}

pub fn task_id(task_index: usize) -> String {
    format!("task-{task_index:05}")
}

/// Simulates one episode from its derived stream.
pub fn run_episode(
    config: &SimConfig,
    condition: Condition,
    master_seed: u64,
    task_index: usize,
    seed_index: usize,
) -> Result<EpisodeRecord> {
    config.validate()?;
    let mut rng = stream_rng(master_seed, unit_stream(task_index, seed_index)?);
    let script = EpisodeScript::draw(&config.agent, &config.critic, &mut rng)?;
    let calibration = config.calibration_model();
    play(
        &script,
        config,
        config.policy.rule()?,
        condition,
        calibration.as_ref(),
        &task_id(task_index),
        seed_index as u64,
    )
}

/// Paired episodes from one experiment, baseline before intervention for
/// every (task, seed) unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub episodes: Vec<EpisodeRecord>,
    pub table: OutcomeTable,
    /// Per-step rate used when the policy was `matched_rate`.
    pub matched_rate: Option<f64>,
}

impl Experiment {
    pub fn baseline(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter().step_by(2)
    }

    pub fn intervention(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter().skip(1).step_by(2)
    }
}

fn simulate_with_rule(
    config: &SimConfig,
    rule: TriggerRule,
    n_tasks: usize,
    n_seeds: usize,
    master_seed: u64,
    execution: Execution,
) -> Result<Vec<EpisodeRecord>> {
    let sampler = CriticSampler::new(&config.critic)?;
    let calibration = config.calibration_model();
    unit_stream(n_tasks.saturating_sub(1), n_seeds.saturating_sub(1))?;
    let units = map_indexed(n_tasks * n_seeds, execution, |u| {
        let (t, s) = (u / n_seeds, u % n_seeds);
        let mut rng = stream_rng(master_seed, unit_stream(t, s)?);
        let script = EpisodeScript::draw_with(&config.agent, &sampler, &mut rng);
        let id = task_id(t);
        let base = play(
            &script,
            config,
            rule,
            Condition::Baseline,
            calibration.as_ref(),
            &id,
            s as u64,
        )?;
        let int = play(
            &script,
            config,
            rule,
            Condition::Intervention,
            calibration.as_ref(),
            &id,
            s as u64,
        )?;
        Ok::<_, Error>([base, int])
    });
    let mut episodes = Vec::with_capacity(2 * n_tasks * n_seeds);
    for pair in units {
        episodes.extend(pair?);
    }
    Ok(episodes)
}

pub fn run_experiment(config: &SimConfig, n_tasks: usize, n_seeds: usize, master_seed: u64) -> Result<Experiment> {
    run_experiment_with(config, n_tasks, n_seeds, master_seed, Execution::Parallel)
}

pub fn run_experiment_with(
    config: &SimConfig,
    n_tasks: usize,
    n_seeds: usize,
    master_seed: u64,
    execution: Execution,
) -> Result<Experiment> {
    config.validate()?;
    if n_tasks == 0 {
        return Err(Error::param("n_tasks", "need at least one task"));
    }
    if n_seeds == 0 {
        return Err(Error::param("n_seeds", "need at least one seed"));
    }
    let mut rule = config.policy.rule()?;
    let mut matched_rate = None;
    if rule == TriggerRule::MatchedRate {
        let probe = simulate_with_rule(
            config,
            TriggerRule::Threshold(config.policy.tau),
            n_tasks,
            n_seeds,
            master_seed,
            execution,
        )?;
        let (triggers, steps) = probe
            .iter()
            .filter(|e| e.condition == Condition::Intervention)
            .fold((0u64, 0u64), |(t, s), e| {
                (t + e.n_interventions as u64, s + e.steps.len() as u64)
            });
        let rate = triggers as f64 / steps as f64;
        matched_rate = Some(rate);
        rule = TriggerRule::Random(rate);
    }
    let episodes = simulate_with_rule(config, rule, n_tasks, n_seeds, master_seed, execution)?;
    let table = OutcomeTable::from_pairs(
        episodes
            .chunks_exact(2)
            .map(|pair| (pair[0].is_success(), pair[1].is_success())),
    );
    Ok(Experiment {
        episodes,
        table,
        matched_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeStats {
    /// Share of triggered episodes that triggered at least twice.
    pub cascade_rate: f64,
    /// False when no episode triggered; `cascade_rate` is then 0.
    pub cascade_defined: bool,
    pub mean_interventions: f64,
    pub no_answer_rate: f64,
}

pub fn cascade_stats(episodes: &[EpisodeRecord]) -> Result<CascadeStats> {
    if episodes.is_empty() {
        return Err(Error::EmptyInput("no episodes"));
    }
    let n = episodes.len() as f64;
    let triggered = episodes.iter().filter(|e| e.n_interventions >= 1).count();
    let repeated = episodes.iter().filter(|e| e.n_interventions >= 2).count();
    let total: u64 = episodes.iter().map(|e| e.n_interventions as u64).sum();
    let no_answer = episodes.iter().filter(|e| e.outcome == Outcome::NoAnswer).count();
    Ok(CascadeStats {
        cascade_rate: if triggered > 0 {
            repeated as f64 / triggered as f64
        } else {
            0.0
        },
        cascade_defined: triggered > 0,
        mean_interventions: total as f64 / n,
        no_answer_rate: no_answer as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub baseline_success: f64,
    pub intervention_success: f64,
    pub delta: f64,
}

/// Success rates across trigger thresholds on a shared master seed.
pub fn threshold_sweep(
    config: &SimConfig,
    taus: &[f64],
    n_tasks: usize,
    n_seeds: usize,
    master_seed: u64,
) -> Result<Vec<SweepPoint>> {
    if taus.is_empty() {
        return Err(Error::EmptyInput("no thresholds to sweep"));
    }
    if !matches!(config.policy.kind, PolicyKind::Threshold | PolicyKind::LateOnly) {
        return Err(Error::Config(
            "threshold sweep needs a threshold or late_only policy".into(),
        ));
    }
    taus.iter()
        .map(|&tau| {
            let mut cfg = config.clone();
            cfg.policy.tau = tau;
            let exp = run_experiment(&cfg, n_tasks, n_seeds, master_seed)?;
            let baseline_success = exp.table.baseline_success_rate();
            let intervention_success = exp.table.intervention_success_rate();
            Ok(SweepPoint {
                tau,
                baseline_success,
                intervention_success,
                delta: intervention_success - baseline_success,
            })
        })
        .collect()
}

/// Single guaranteed trigger at step 0 with a uniform critic: per-task
/// recovery and disruption rates equal the mechanism's probabilities.
pub fn single_trigger_config(p_fail: f64, recovery: f64, disruption: f64) -> SimConfig {
    let mut policy = PolicySpec::threshold(0.0);
    policy.intervention_budget = 1;
    SimConfig {
        agent: AgentSpec::new(p_fail),
        critic: CriticSpec::beta((1.0, 1.0), (1.0, 1.0)),
        mechanism: MechanismSpec::new(MechanismKind::Rollback, recovery, disruption),
        policy,
        calibration: None,
    }
}
