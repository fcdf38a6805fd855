//! Paired task-level bootstrap, Holm-Bonferroni and Monte-Carlo power.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{map_indexed, mix_seed, stream_rng, Execution};

pub const DEFAULT_BOOTSTRAP_ITERS: usize = 10_000;
pub const MIN_BOOTSTRAP_ITERS: usize = 1000;

/// Baseline and intervention success for matched units.
///
/// Units sharing a `task_id` (e.g. several seeds of one task) are resampled
/// together under [`Resampling::Task`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedOutcomes {
    pub task_ids: Vec<String>,
    pub baseline: Vec<bool>,
    pub intervention: Vec<bool>,
}

impl PairedOutcomes {
    pub fn new(task_ids: Vec<String>, baseline: Vec<bool>, intervention: Vec<bool>) -> Result<Self> {
        if task_ids.len() != baseline.len() || baseline.len() != intervention.len() {
            return Err(Error::LengthMismatch(format!(
                "{} task ids, {} baseline and {} intervention outcomes",
                task_ids.len(),
                baseline.len(),
                intervention.len()
            )));
        }
        Ok(PairedOutcomes {
            task_ids,
            baseline,
            intervention,
        })
    }

    /// One unit per task, ids `0..n`.
    pub fn from_outcomes(baseline: Vec<bool>, intervention: Vec<bool>) -> Result<Self> {
        let ids = (0..baseline.len()).map(|i| i.to_string()).collect();
        PairedOutcomes::new(ids, baseline, intervention)
    }

    pub fn len(&self) -> usize {
        self.baseline.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baseline.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.task_groups().len()
    }

    fn mean_delta(&self) -> f64 {
        let diff: i64 = self.unit_diffs().sum();
        diff as f64 / self.len() as f64
    }

    fn unit_diffs(&self) -> impl Iterator<Item = i64> + '_ {
        self.baseline
            .iter()
            .zip(&self.intervention)
            .map(|(&b, &i)| i as i64 - b as i64)
    }

    /// Summed difference and unit count per task, in order of first appearance.
    fn task_groups(&self) -> Vec<Group> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<Group> = Vec::new();
        for (id, diff) in self.task_ids.iter().zip(self.unit_diffs()) {
            let slot = *index.entry(id.as_str()).or_insert_with(|| {
                groups.push(Group::default());
                groups.len() - 1
            });
            groups[slot].diff += diff;
            groups[slot].units += 1;
        }
        groups
    }

    fn unit_groups(&self) -> Vec<Group> {
        self.unit_diffs().map(|diff| Group { diff, units: 1 }).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Group {
    diff: i64,
    units: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// All units of a task move together.
    #[default]
    Task,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub n_iter: usize,
    pub seed: u64,
    pub resampling: Resampling,
    pub execution: Execution,
}

impl BootstrapOptions {
    pub fn new(n_iter: usize, seed: u64) -> Self {
        BootstrapOptions {
            n_iter,
            seed,
            resampling: Resampling::Task,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Intervention minus baseline success rate on the full data.
    pub delta_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Share of resampled deltas at or below zero.
    pub p_one_sided: f64,
    pub n_iter: usize,
    pub seed: u64,
    /// Every unit has identical baseline and intervention outcomes.
    pub degenerate: bool,
}

fn resample_delta(groups: &[Group], seed: u64, iteration: usize) -> f64 {
    let mut rng = stream_rng(seed, iteration as u64);
    let n = groups.len();
    let (mut diff, mut units) = (0i64, 0u64);
    for _ in 0..n {
        let g = groups[rng.random_range(0..n)];
        diff += g.diff;
        units += g.units;
    }
    diff as f64 / units as f64
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_iters(n_iter: usize) -> Result<()> {
    if n_iter < MIN_BOOTSTRAP_ITERS {
        return Err(Error::param(
            "n_iter",
            format!("need at least {MIN_BOOTSTRAP_ITERS} bootstrap iterations, got {n_iter}"),
        ));
    }
    Ok(())
}

pub fn paired_bootstrap(pairs: &PairedOutcomes, n_iter: usize, seed: u64) -> Result<BootstrapResult> {
    paired_bootstrap_with(pairs, &BootstrapOptions::new(n_iter, seed))
}

/// Paired bootstrap of the success-rate difference with a one-sided test
/// for improvement.
pub fn paired_bootstrap_with(pairs: &PairedOutcomes, options: &BootstrapOptions) -> Result<BootstrapResult> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no paired outcomes"));
    }
    if pairs.len() < 2 {
        return Err(Error::param("pairs", "need at least two pairs"));
    }
    check_iters(options.n_iter)?;
    let groups = match options.resampling {
        Resampling::Task => pairs.task_groups(),
        Resampling::Unit => pairs.unit_groups(),
    };
    let degenerate = pairs.unit_diffs().all(|d| d == 0);
    let mut deltas = map_indexed(options.n_iter, options.execution, |i| {
        resample_delta(&groups, options.seed, i)
    });
    let at_or_below = deltas.iter().filter(|&&d| d <= 0.0).count();
    deltas.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        delta_mean: pairs.mean_delta(),
        ci_low: quantile_sorted(&deltas, 0.025),
        ci_high: quantile_sorted(&deltas, 0.975),
        p_one_sided: at_or_below as f64 / options.n_iter as f64,
        n_iter: options.n_iter,
        seed: options.seed,
        degenerate,
    })
}

/// Percentile 95% interval for a success rate.
pub fn success_ci(outcomes: &[bool], n_iter: usize, seed: u64) -> Result<(f64, f64)> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("no outcomes"));
    }
    check_iters(n_iter)?;
    let n = outcomes.len();
    let mut means = map_indexed(n_iter, Execution::Parallel, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let hits = (0..n).filter(|_| outcomes[rng.random_range(0..n)]).count();
        hits as f64 / n as f64
    });
    means.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&means, 0.025), quantile_sorted(&means, 0.975)))
}

/// Holm's step-down procedure; flags follow input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    for (i, &p) in p_values.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(
                format!("p_values[{i}]"),
                format!("{p} is not a probability"),
            ));
        }
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut reject = vec![false; m];
    for (rank, &i) in order.iter().enumerate() {
        if p_values[i] < alpha / (m - rank) as f64 {
            reject[i] = true;
        } else {
            break;
        }
    }
    Ok(reject)
}

/// How per-task success probabilities vary in power simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskDifficulty {
    /// Every unit succeeds with the same probability.
    Homogeneous,
    /// Task success probability ~ Beta(shape, shape * (1 - rate) / rate),
    /// shared by both arms and all seeds of the task.
    Beta { shape: f64 },
}

impl Default for TaskDifficulty {
    fn default() -> Self {
        TaskDifficulty::Beta { shape: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdeOptions {
    pub experiments: usize,
    pub bootstrap_iters: usize,
    /// Bisection stops once the bracket is this narrow.
    pub resolution: f64,
    pub max_effect: f64,
    pub difficulty: TaskDifficulty,
    pub execution: Execution,
}

impl Default for MdeOptions {
    fn default() -> Self {
        MdeOptions {
            experiments: 2000,
            bootstrap_iters: 1000,
            resolution: 0.0025,
            max_effect: 0.5,
            difficulty: TaskDifficulty::default(),
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Mde {
    Detectable { effect: f64, power: f64 },
    NotDetectable { max_power: f64 },
}

impl Mde {
    pub fn effect(&self) -> Option<f64> {
        match self {
            Mde::Detectable { effect, .. } => Some(*effect),
            Mde::NotDetectable { .. } => None,
        }
    }
}

/// Moves a task's success probability so the population mean moves by `effect`.
fn shifted(q: f64, rate: f64, effect: f64) -> f64 {
    if effect >= 0.0 {
        q + effect * (1.0 - q) / (1.0 - rate)
    } else {
        q * (1.0 + effect / rate)
    }
}

struct PowerSim<'a> {
    n_tasks: usize,
    n_seeds: usize,
    rate: f64,
    alpha: f64,
    seed: u64,
    options: &'a MdeOptions,
}

impl PowerSim<'_> {
    /// Rejection frequency at `effect`. Experiments reuse their random
    /// draws across effects, so estimated power is smooth in `effect`.
    fn power(&self, effect: f64) -> f64 {
        let beta = match self.options.difficulty {
            TaskDifficulty::Homogeneous => None,
            TaskDifficulty::Beta { shape } => {
                Some(Beta::new(shape, shape * (1.0 - self.rate) / self.rate).expect("validated shape"))
            }
        };
        let rejections = map_indexed(self.options.experiments, self.options.execution, |e| {
            let mut rng = stream_rng(mix_seed(self.seed, 0x504f_5745), e as u64);
            let groups: Vec<Group> = (0..self.n_tasks)
                .map(|_| {
                    let q = beta.map_or(self.rate, |b| b.sample(&mut rng));
                    let q_int = shifted(q, self.rate, effect);
                    let mut g = Group::default();
                    for _ in 0..self.n_seeds {
                        let base = rng.random::<f64>() < q;
                        let int = rng.random::<f64>() < q_int;
                        g.diff += int as i64 - base as i64;
                        g.units += 1;
                    }
                    g
                })
                .collect();
            let boot_seed = mix_seed(self.seed, e as u64);
            let below = (0..self.options.bootstrap_iters)
                .filter(|&i| resample_delta(&groups, boot_seed, i) <= 0.0)
                .count();
            let p = below as f64 / self.options.bootstrap_iters as f64;
            p < self.alpha
        });
        rejections.iter().filter(|&&r| r).count() as f64 / self.options.experiments as f64
    }
}

/// Minimum detectable improvement in success rate at the given power.
pub fn power_mde(n_tasks: usize, n_seeds: usize, baseline_rate: f64, alpha: f64, power: f64, seed: u64) -> Result<Mde> {
    power_mde_with(
        n_tasks,
        n_seeds,
        baseline_rate,
        alpha,
        power,
        seed,
        &MdeOptions::default(),
    )
}

pub fn power_mde_with(
    n_tasks: usize,
    n_seeds: usize,
    baseline_rate: f64,
    alpha: f64,
    power: f64,
    seed: u64,
    options: &MdeOptions,
) -> Result<Mde> {
    if n_tasks < 2 {
        return Err(Error::param("n_tasks", "need at least two tasks"));
    }
    if n_seeds == 0 {
        return Err(Error::param("n_seeds", "need at least one seed"));
    }
    for (name, v) in [("baseline_rate", baseline_rate), ("alpha", alpha), ("power", power)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::param(name, format!("must lie in (0, 1), got {v}")));
        }
    }
    if let TaskDifficulty::Beta { shape } = options.difficulty {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::param("difficulty.shape", "must be positive"));
        }
    }
    let sim = PowerSim {
        n_tasks,
        n_seeds,
        rate: baseline_rate,
        alpha,
        seed,
        options,
    };
    let mut hi = options.max_effect.min(1.0 - baseline_rate);
    let top = sim.power(hi);
    if top < power {
        return Ok(Mde::NotDetectable { max_power: top });
    }
    let mut hi_power = top;
    let mut lo = 0.0;
    while hi - lo > options.resolution {
        let mid = 0.5 * (lo + hi);
        let pw = sim.power(mid);
        if pw >= power {
            hi = mid;
            hi_power = pw;
        } else {
            lo = mid;
        }
    }
    Ok(Mde::Detectable {
        effect: hi,
        power: hi_power,
    })
}
