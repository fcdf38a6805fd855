//! Pre-deployment pilot: estimate (p, r, d) with uncertainty on a small set
//! of matched tasks and walk the deployment decision tree.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{match_pairs, paired_outcomes, EpisodePair, EpisodeRecord};
use crate::error::{Error, Result};
use crate::framework::{compute_profile, decide, Decision, DrProfile, Fraction, OutcomeTable, DEFAULT_MARGIN};
use crate::seeding::{map_indexed, mix_seed, stream_rng, Execution};
use crate::simulator::{run_experiment, SimConfig};
use crate::stats::{paired_bootstrap, quantile_sorted, PairedOutcomes};

pub const MIN_PILOT_TASKS: usize = 10;
pub const SMALL_PILOT_TASKS: usize = 50;
pub const DEFAULT_PILOT_SEEDS: usize = 3;
pub const DEFAULT_PILOT_BOOTSTRAP: usize = 2000;

/// Where pilot outcomes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PilotSource {
    /// Simulate `n_seeds` matched runs of each pilot task.
    Simulated { config: SimConfig, n_seeds: usize },
    /// Matched baseline/intervention records from a log.
    Episodes(Vec<EpisodeRecord>),
    /// Published or hand-entered rates without per-task outcomes.
    Rates(DrProfile),
}

impl PilotSource {
    pub fn simulated(config: SimConfig) -> Self {
        PilotSource::Simulated {
            config,
            n_seeds: DEFAULT_PILOT_SEEDS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotOptions {
    pub n_pilot: usize,
    pub margin: f64,
    pub seed: u64,
    pub bootstrap_iters: usize,
}

impl PilotOptions {
    pub fn new(n_pilot: usize, seed: u64) -> Self {
        PilotOptions {
            n_pilot,
            margin: DEFAULT_MARGIN,
            seed,
            bootstrap_iters: DEFAULT_PILOT_BOOTSTRAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    /// Widened if needed so that it contains the point estimate.
    fn around(point: f64, low: f64, high: f64) -> Self {
        Interval {
            low: low.min(point),
            high: high.max(point),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.4}, {:.4}]", self.low, self.high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    UndefinedRates { recovery: bool, disruption: bool },
    CiOverlapsThreshold { p_low: f64, p_high: f64, bar: f64 },
    PreferSelection { d_over_r: f64 },
    SmallPilot { n_tasks: usize },
    NoIntervals,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::UndefinedRates { recovery, disruption } => {
                let which = match (recovery, disruption) {
                    (true, true) => "r and d are",
                    (true, false) => "r is",
                    _ => "d is",
                };
                write!(f, "{which} undefined on this pilot")?;
                if *recovery && *disruption {
                    write!(f, " (intervention changed no outcome, or no tasks)")?;
                }
                Ok(())
            }
            Warning::CiOverlapsThreshold { p_low, p_high, bar } => write!(
                f,
                "CI overlaps threshold: p CI [{p_low:.4}, {p_high:.4}] contains p* + margin = {bar:.4}; the verdict may flip with more data"
            ),
            Warning::PreferSelection { d_over_r } => write!(
                f,
                "d/r = {d_over_r:.3} > 1: post-hoc selection is likely a better use of compute than intervention"
            ),
            Warning::SmallPilot { n_tasks } => write!(
                f,
                "pilot too small: {n_tasks} tasks (at least {SMALL_PILOT_TASKS} recommended)"
            ),
            Warning::NoIntervals => f.write_str("rates given without per-task outcomes; no intervals"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub profile: DrProfile,
    pub n_tasks: usize,
    /// Matched (task, seed) units behind the estimates.
    pub n_units: usize,
    pub table: Option<OutcomeTable>,
    pub p_ci: Option<Interval>,
    pub r_ci: Option<Interval>,
    pub d_ci: Option<Interval>,
    pub p_star: Option<f64>,
    pub p_star_exact: Option<Fraction>,
    pub p_star_ci: Option<Interval>,
    pub predicted_delta: Option<f64>,
    pub predicted_delta_ci: Option<Interval>,
    pub decision: Decision,
    pub warnings: Vec<Warning>,
}

impl DecisionReport {
    pub fn has_warning(&self, pred: impl Fn(&Warning) -> bool) -> bool {
        self.warnings.iter().any(pred)
    }
}

pub fn run_pilot(source: &PilotSource, n_pilot: usize, margin: f64, seed: u64) -> Result<DecisionReport> {
    let mut options = PilotOptions::new(n_pilot, seed);
    options.margin = margin;
    run_pilot_with(source, &options)
}

pub fn run_pilot_with(source: &PilotSource, options: &PilotOptions) -> Result<DecisionReport> {
    if options.n_pilot < MIN_PILOT_TASKS {
        return Err(Error::param(
            "n_pilot",
            format!("need at least {MIN_PILOT_TASKS} pilot tasks, got {}", options.n_pilot),
        ));
    }
    match source {
        PilotSource::Rates(profile) => report_from_rates(*profile, options),
        PilotSource::Episodes(episodes) => {
            let pairs = match_pairs(episodes)?;
            report_from_pairs(&pairs, options)
        }
        PilotSource::Simulated { config, n_seeds } => {
            let exp = run_experiment(config, options.n_pilot, *n_seeds, options.seed)?;
            let pairs = match_pairs(&exp.episodes)?;
            report_from_pairs(&pairs, options)
        }
    }
}

fn report_from_rates(profile: DrProfile, options: &PilotOptions) -> Result<DecisionReport> {
    let decision = decide(&profile, options.margin)?;
    let mut warnings = vec![Warning::NoIntervals];
    common_warnings(&profile, &decision, None, &mut warnings);
    Ok(DecisionReport {
        profile,
        n_tasks: options.n_pilot,
        n_units: options.n_pilot,
        table: None,
        p_ci: None,
        r_ci: None,
        d_ci: None,
        p_star: decision.p_star,
        p_star_exact: None,
        p_star_ci: None,
        predicted_delta: decision.predicted_delta,
        predicted_delta_ci: None,
        decision,
        warnings,
    })
}

/// Units of the first `n_pilot` tasks, in order of first appearance.
fn first_tasks<'a>(pairs: &[EpisodePair<'a>], n_pilot: usize) -> Result<Vec<EpisodePair<'a>>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for p in pairs {
        let n = index.len();
        index.entry(p.task_id()).or_insert(n);
    }
    if index.len() < n_pilot {
        return Err(Error::InsufficientPilot {
            requested: n_pilot,
            available: index.len(),
        });
    }
    Ok(pairs.iter().filter(|p| index[p.task_id()] < n_pilot).copied().collect())
}

fn subpopulation(all: &PairedOutcomes, keep_baseline: bool) -> Option<PairedOutcomes> {
    let idx: Vec<usize> = (0..all.len()).filter(|&i| all.baseline[i] == keep_baseline).collect();
    if idx.len() < 2 {
        return None;
    }
    PairedOutcomes::new(
        idx.iter().map(|&i| all.task_ids[i].clone()).collect(),
        idx.iter().map(|&i| all.baseline[i]).collect(),
        idx.iter().map(|&i| all.intervention[i]).collect(),
    )
    .ok()
}

/// Per-task outcome counts: [both fail, disrupted, recovered, both succeed].
fn task_counts(outcomes: &PairedOutcomes) -> Vec<[u64; 4]> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut counts: Vec<[u64; 4]> = Vec::new();
    for i in 0..outcomes.len() {
        let slot = *index.entry(outcomes.task_ids[i].as_str()).or_insert_with(|| {
            counts.push([0; 4]);
            counts.len() - 1
        });
        let cell = match (outcomes.baseline[i], outcomes.intervention[i]) {
            (false, false) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (true, true) => 3,
        };
        counts[slot][cell] += 1;
    }
    counts
}

struct Resampled {
    p: f64,
    p_star: Option<f64>,
    delta: f64,
}

fn resample_counts(tasks: &[[u64; 4]], seed: u64, iteration: usize) -> Resampled {
    let mut rng = stream_rng(seed, iteration as u64);
    let mut c = [0u64; 4];
    for _ in 0..tasks.len() {
        let t = tasks[rng.random_range(0..tasks.len())];
        for k in 0..4 {
            c[k] += t[k];
        }
    }
    let [both_fail, disrupted, recovered, both_succeed] = c;
    let n = (both_fail + disrupted + recovered + both_succeed) as f64;
    let failures = both_fail + recovered;
    let successes = both_succeed + disrupted;
    let r = (failures > 0).then(|| recovered as f64 / failures as f64);
    let d = (successes > 0).then(|| disrupted as f64 / successes as f64);
    let p_star = match (r, d) {
        (Some(r), Some(d)) if r + d > 0.0 => Some(d / (r + d)),
        _ => None,
    };
    Resampled {
        p: failures as f64 / n,
        p_star,
        // Equals p*r - (1-p)*d on the resampled table.
        delta: (recovered as f64 - disrupted as f64) / n,
    }
}

fn percentile_interval(mut values: Vec<f64>, point: f64) -> Option<Interval> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(Interval::around(
        point,
        quantile_sorted(&values, 0.025),
        quantile_sorted(&values, 0.975),
    ))
}

fn report_from_pairs(pairs: &[EpisodePair<'_>], options: &PilotOptions) -> Result<DecisionReport> {
    let pilot = first_tasks(pairs, options.n_pilot)?;
    let outcomes = paired_outcomes(&pilot)?;
    let table = OutcomeTable::from_pairs(
        outcomes
            .baseline
            .iter()
            .zip(&outcomes.intervention)
            .map(|(&b, &i)| (b, i)),
    );
    let profile = compute_profile(&table)?;
    let decision = decide(&profile, options.margin)?;

    let r_ci = match (profile.recovery_rate, subpopulation(&outcomes, false)) {
        (Some(r), Some(failures)) => {
            let boot = paired_bootstrap(&failures, options.bootstrap_iters, mix_seed(options.seed, 1))?;
            Some(Interval::around(r, boot.ci_low, boot.ci_high))
        }
        _ => None,
    };
    let d_ci = match (profile.disruption_rate, subpopulation(&outcomes, true)) {
        (Some(d), Some(successes)) => {
            // Among baseline successes the paired delta is -d.
            let boot = paired_bootstrap(&successes, options.bootstrap_iters, mix_seed(options.seed, 2))?;
            Some(Interval::around(d, -boot.ci_high, -boot.ci_low))
        }
        _ => None,
    };

    let tasks = task_counts(&outcomes);
    let joint_seed = mix_seed(options.seed, 3);
    let draws = map_indexed(options.bootstrap_iters, Execution::Parallel, |i| {
        resample_counts(&tasks, joint_seed, i)
    });
    let p = profile.failure_rate;
    let observed_delta = (table.recoveries as f64 - table.disruptions as f64) / table.n_tasks() as f64;
    let p_ci = percentile_interval(draws.iter().map(|d| d.p).collect(), p);
    let p_star_ci = decision
        .p_star
        .and_then(|ps| percentile_interval(draws.iter().filter_map(|d| d.p_star).collect(), ps));
    let predicted_delta = decision.predicted_delta;
    let predicted_delta_ci =
        predicted_delta.and_then(|_| percentile_interval(draws.iter().map(|d| d.delta).collect(), observed_delta));

    let mut warnings = Vec::new();
    common_warnings(&profile, &decision, p_ci, &mut warnings);
    if tasks.len() < SMALL_PILOT_TASKS {
        warnings.push(Warning::SmallPilot { n_tasks: tasks.len() });
    }

    Ok(DecisionReport {
        profile,
        n_tasks: tasks.len(),
        n_units: outcomes.len(),
        table: Some(table),
        p_ci,
        r_ci,
        d_ci,
        p_star: decision.p_star,
        p_star_exact: profile.exact_threshold(),
        p_star_ci,
        predicted_delta,
        predicted_delta_ci,
        decision,
        warnings,
    })
}

fn common_warnings(profile: &DrProfile, decision: &Decision, p_ci: Option<Interval>, warnings: &mut Vec<Warning>) {
    let r_undefined = profile.recovery_rate.is_none();
    let d_undefined = profile.disruption_rate.is_none();
    let no_effect = profile.recovery_rate == Some(0.0) && profile.disruption_rate == Some(0.0);
    if r_undefined || d_undefined || no_effect {
        warnings.push(Warning::UndefinedRates {
            recovery: r_undefined || no_effect,
            disruption: d_undefined || no_effect,
        });
    }
    if let (Some(ci), Some(p_star)) = (p_ci, decision.p_star) {
        let bar = p_star + decision.margin;
        if ci.contains(bar) {
            warnings.push(Warning::CiOverlapsThreshold {
                p_low: ci.low,
                p_high: ci.high,
                bar,
            });
        }
    }
    if decision.prefer_selection {
        warnings.push(Warning::PreferSelection {
            d_over_r: profile.disruption_ratio().unwrap_or(f64::INFINITY),
        });
    }
}

fn with_ci(value: Option<f64>, ci: Option<Interval>) -> String {
    match (value, ci) {
        (Some(v), Some(ci)) => format!("{v:.4} {ci}"),
        (Some(v), None) => format!("{v:.4}"),
        (None, _) => "undefined".into(),
    }
}

/// Human-readable report: estimates, the decision trace branch by branch,
/// the verdict and any warnings.
pub fn render_decision_tree(report: &DecisionReport) -> String {
    let mut out = String::new();
    let pr = &report.profile;
    let _ = writeln!(out, "pilot: {} tasks, {} matched runs", report.n_tasks, report.n_units);
    if let Some(t) = &report.table {
        let _ = writeln!(
            out,
            "counts: F = {}, S = {}, recovered C = {}, disrupted B = {}",
            t.failures(),
            t.successes(),
            t.recoveries,
            t.disruptions
        );
    }
    let _ = writeln!(out, "p  = {}", with_ci(Some(pr.failure_rate), report.p_ci));
    let _ = writeln!(out, "r  = {}", with_ci(pr.recovery_rate, report.r_ci));
    let _ = writeln!(out, "d  = {}", with_ci(pr.disruption_rate, report.d_ci));
    let _ = writeln!(out, "p* = {}", with_ci(report.p_star, report.p_star_ci));
    let _ = writeln!(
        out,
        "predicted delta = {}",
        with_ci(report.predicted_delta, report.predicted_delta_ci)
    );
    let _ = writeln!(out, "decision trace (margin {:.4}):", report.decision.margin);
    for (i, step) in report.decision.trace.iter().enumerate() {
        let _ = writeln!(out, "  {}. [{}] {}", i + 1, step.branch.label(), step.detail);
    }
    let _ = writeln!(out, "verdict: {}", report.decision.verdict);
    if !report.warnings.is_empty() {
        let _ = writeln!(out, "warnings:");
        for w in &report.warnings {
            let _ = writeln!(out, "  - {w}");
        }
    }
    out
}

/// Machine-readable form of the same report.
pub fn render_json(report: &DecisionReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}
