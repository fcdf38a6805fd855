//! Paired-outcome accounting and the disruption/recovery algebra.
//!
//! Running a baseline agent and the same agent with intervention on the same
//! tasks gives a 2x2 table of matched outcomes. From it we derive the
//! baseline failure rate `p`, the recovery rate `r` (share of baseline
//! failures that intervention turns into successes) and the disruption rate
//! `d` (share of baseline successes that intervention turns into failures).
//! Intervention helps in expectation exactly when `p > d / (r + d)`.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Error, Result};

/// Exact rate as a reduced fraction of counts.
pub type Fraction = Ratio<u64>;

/// Default safety margin required above the deployment threshold.
pub const DEFAULT_MARGIN: f64 = 0.05;

/// Matched baseline/intervention outcome counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeTable {
    /// Baseline fails, intervention fails.
    pub both_fail: u64,
    /// Baseline succeeds, intervention fails.
    pub disruptions: u64,
    /// Baseline fails, intervention succeeds.
    pub recoveries: u64,
    /// Baseline succeeds, intervention succeeds.
    pub both_succeed: u64,
}

impl OutcomeTable {
    /// Builds a table and checks that the cells add up to `n_tasks`.
    pub fn new(n_tasks: u64, both_fail: u64, disruptions: u64, recoveries: u64, both_succeed: u64) -> Result<Self> {
        let table = OutcomeTable {
            both_fail,
            disruptions,
            recoveries,
            both_succeed,
        };
        if table.n_tasks() != n_tasks {
            return Err(Error::InvalidTable(format!(
                "cells sum to {} but n_tasks is {n_tasks}",
                table.n_tasks()
            )));
        }
        Ok(table)
    }

    /// Tallies `(baseline_success, intervention_success)` pairs.
    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (bool, bool)>,
    {
        let mut table = OutcomeTable::default();
        for pair in pairs {
            table.record(pair.0, pair.1);
        }
        table
    }

    pub fn record(&mut self, baseline_success: bool, intervention_success: bool) {
        match (baseline_success, intervention_success) {
            (false, false) => self.both_fail += 1,
            (true, false) => self.disruptions += 1,
            (false, true) => self.recoveries += 1,
            (true, true) => self.both_succeed += 1,
        }
    }

    pub fn n_tasks(&self) -> u64 {
        self.both_fail + self.disruptions + self.recoveries + self.both_succeed
    }

    /// Baseline failures.
    pub fn failures(&self) -> u64 {
        self.both_fail + self.recoveries
    }

    /// Baseline successes.
    pub fn successes(&self) -> u64 {
        self.disruptions + self.both_succeed
    }

    pub fn baseline_success_rate(&self) -> f64 {
        self.successes() as f64 / self.n_tasks() as f64
    }

    pub fn intervention_success_rate(&self) -> f64 {
        (self.recoveries + self.both_succeed) as f64 / self.n_tasks() as f64
    }
}

impl Default for OutcomeTable {
    fn default() -> Self {
        OutcomeTable {
            both_fail: 0,
            disruptions: 0,
            recoveries: 0,
            both_succeed: 0,
        }
    }
}

impl fmt::Display for OutcomeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "                 intervention fail  intervention succeed")?;
        writeln!(f, "baseline fail    {:>17}  {:>20}", self.both_fail, self.recoveries)?;
        write!(
            f,
            "baseline succeed {:>17}  {:>20}",
            self.disruptions, self.both_succeed
        )
    }
}

/// Failure, recovery and disruption rates.
///
/// `recovery_rate` is absent when no task failed at baseline and
/// `disruption_rate` is absent when no task succeeded; absent is not zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrProfile {
    pub failure_rate: f64,
    pub recovery_rate: Option<f64>,
    pub disruption_rate: Option<f64>,
    counts: Option<OutcomeTable>,
}

impl DrProfile {
    /// Profile from point estimates without underlying counts.
    pub fn from_rates(failure_rate: f64, recovery_rate: Option<f64>, disruption_rate: Option<f64>) -> Result<Self> {
        check_unit("failure_rate", failure_rate)?;
        if let Some(r) = recovery_rate {
            check_unit("recovery_rate", r)?;
        }
        if let Some(d) = disruption_rate {
            check_unit("disruption_rate", d)?;
        }
        Ok(DrProfile {
            failure_rate,
            recovery_rate,
            disruption_rate,
            counts: None,
        })
    }

    pub fn counts(&self) -> Option<&OutcomeTable> {
        self.counts.as_ref()
    }

    pub fn n_tasks(&self) -> Option<u64> {
        self.counts.map(|t| t.n_tasks())
    }

    pub fn f_count(&self) -> Option<u64> {
        self.counts.map(|t| t.failures())
    }

    pub fn s_count(&self) -> Option<u64> {
        self.counts.map(|t| t.successes())
    }

    pub fn exact_failure_rate(&self) -> Option<Fraction> {
        self.counts.map(|t| Fraction::new_raw(t.failures(), t.n_tasks()))
    }

    pub fn exact_recovery_rate(&self) -> Option<Fraction> {
        self.counts
            .filter(|t| t.failures() > 0)
            .map(|t| Fraction::new_raw(t.recoveries, t.failures()))
    }

    pub fn exact_disruption_rate(&self) -> Option<Fraction> {
        self.counts
            .filter(|t| t.successes() > 0)
            .map(|t| Fraction::new_raw(t.disruptions, t.successes()))
    }

    /// Exact `d / (r + d)` when counts are available and the threshold exists.
    pub fn exact_threshold(&self) -> Option<Fraction> {
        threshold_exact(self.exact_recovery_rate()?, self.exact_disruption_rate()?)
    }

    /// Disruption-to-recovery ratio; infinite when `r = 0 < d`.
    pub fn disruption_ratio(&self) -> Option<f64> {
        match (self.recovery_rate, self.disruption_rate) {
            (Some(r), Some(d)) if r > 0.0 => Some(d / r),
            (Some(_), Some(d)) if d > 0.0 => Some(f64::INFINITY),
            _ => None,
        }
    }
}

fn ratio_value(num: u64, den: u64) -> f64 {
    num as f64 / den as f64
}

/// Derives `p`, `r` and `d` from a matched outcome table.
pub fn compute_profile(table: &OutcomeTable) -> Result<DrProfile> {
    let n = table.n_tasks();
    if n == 0 {
        return Err(Error::EmptyInput("outcome table has no tasks"));
    }
    let f = table.failures();
    let s = table.successes();
    Ok(DrProfile {
        failure_rate: ratio_value(f, n),
        recovery_rate: (f > 0).then(|| ratio_value(table.recoveries, f)),
        disruption_rate: (s > 0).then(|| ratio_value(table.disruptions, s)),
        counts: Some(*table),
    })
}

/// Deployment threshold `d / (r + d)`.
pub fn threshold(recovery_rate: f64, disruption_rate: f64) -> Result<f64> {
    check_unit("recovery_rate", recovery_rate)?;
    check_unit("disruption_rate", disruption_rate)?;
    let total = recovery_rate + disruption_rate;
    if total == 0.0 {
        return Err(Error::UndefinedThreshold);
    }
    Ok(disruption_rate / total)
}

/// Exact rational threshold; `None` when `r + d = 0`.
pub fn threshold_exact(recovery_rate: Fraction, disruption_rate: Fraction) -> Option<Fraction> {
    let total = recovery_rate + disruption_rate;
    if *total.numer() == 0 {
        return None;
    }
    Some(disruption_rate / total)
}

/// Expected change in success rate, `p*r - (1-p)*d`.
pub fn delta_success(failure_rate: f64, recovery_rate: f64, disruption_rate: f64) -> f64 {
    failure_rate * recovery_rate - (1.0 - failure_rate) * disruption_rate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Deploy,
    DoNotDeploy,
    TrivialAllFail,
    TrivialAllSucceed,
    Undefined,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Deploy => "deploy",
            Verdict::DoNotDeploy => "do not deploy",
            Verdict::TrivialAllFail => "trivial: all tasks fail at baseline",
            Verdict::TrivialAllSucceed => "trivial: all tasks succeed at baseline",
            Verdict::Undefined => "undefined",
        };
        f.write_str(s)
    }
}

/// A node of the deployment decision tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    RatesUndefined,
    AllSucceedAtBaseline,
    AllFailAtBaseline,
    NoEffect,
    ComputeThreshold,
    DisruptionDominates,
    RecoveryDominates,
    AboveThreshold,
    BelowThreshold,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::RatesUndefined => "r and d undefined",
            Branch::AllSucceedAtBaseline => "F = 0",
            Branch::AllFailAtBaseline => "S = 0",
            Branch::NoEffect => "r + d = 0",
            Branch::ComputeThreshold => "p* = d/(r+d)",
            Branch::DisruptionDominates => "d/r > 1",
            Branch::RecoveryDominates => "d/r <= 1",
            Branch::AboveThreshold => "p > p* + margin",
            Branch::BelowThreshold => "p <= p* + margin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub branch: Branch,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub p_star: Option<f64>,
    pub margin: f64,
    pub predicted_delta: Option<f64>,
    /// Set whenever `d/r > 1`: post-hoc selection is the better use of compute.
    pub prefer_selection: bool,
    pub trace: Vec<TraceStep>,
}

impl Decision {
    pub fn trace_labels(&self) -> Vec<&'static str> {
        self.trace.iter().map(|s| s.branch.label()).collect()
    }
}

/// Walks the deployment decision tree for a profile.
pub fn decide(profile: &DrProfile, margin: f64) -> Result<Decision> {
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::param("margin", format!("must lie in [0, 1), got {margin}")));
    }
    let p = profile.failure_rate;
    let mut trace = Vec::new();
    let mut step = |branch, detail: String| trace.push(TraceStep { branch, detail });

    let (verdict, p_star, predicted_delta, prefer_selection) = match (profile.recovery_rate, profile.disruption_rate) {
        (None, None) => {
            step(
                Branch::RatesUndefined,
                "no baseline failures or successes to estimate from".into(),
            );
            (Verdict::Undefined, None, None, false)
        }
        (None, Some(d)) => {
            step(
                Branch::AllSucceedAtBaseline,
                format!("every task succeeds at baseline; intervention can only disrupt (d = {d:.4})"),
            );
            (Verdict::TrivialAllSucceed, None, Some(-d), false)
        }
        (Some(r), None) => {
            step(
                Branch::AllFailAtBaseline,
                format!("every task fails at baseline; intervention can only recover (r = {r:.4})"),
            );
            (Verdict::TrivialAllFail, None, Some(r), false)
        }
        (Some(r), Some(d)) => {
            let delta = delta_success(p, r, d);
            match threshold(r, d) {
                Err(_) => {
                    step(
                        Branch::NoEffect,
                        "r = 0 and d = 0: intervention changes no outcome".into(),
                    );
                    (Verdict::Undefined, None, Some(delta), false)
                }
                Ok(p_star) => {
                    step(
                        Branch::ComputeThreshold,
                        format!("p* = {d:.4}/({r:.4} + {d:.4}) = {p_star:.4}"),
                    );
                    let prefer = d > r;
                    if prefer {
                        let ratio = if r > 0.0 { d / r } else { f64::INFINITY };
                        step(
                            Branch::DisruptionDominates,
                            format!("d/r = {d:.4}/{r:.4} = {ratio:.3} > 1: prefer selection over intervention"),
                        );
                    } else {
                        step(Branch::RecoveryDominates, format!("d/r = {d:.4}/{r:.4} <= 1"));
                    }
                    let bar = p_star + margin;
                    let verdict = if p > bar {
                        step(
                            Branch::AboveThreshold,
                            format!("p = {p:.4} > p* + margin = {p_star:.4} + {margin:.4} = {bar:.4}: deploy"),
                        );
                        Verdict::Deploy
                    } else {
                        step(
                            Branch::BelowThreshold,
                            format!("p = {p:.4} <= p* + margin = {p_star:.4} + {margin:.4} = {bar:.4}: do not deploy"),
                        );
                        Verdict::DoNotDeploy
                    };
                    (verdict, Some(p_star), Some(delta), prefer)
                }
            }
        }
    };

    Ok(Decision {
        verdict,
        p_star,
        margin,
        predicted_delta,
        prefer_selection,
        trace,
    })
}
