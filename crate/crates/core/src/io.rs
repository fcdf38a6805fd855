//! Episode logs, config and profile files, and results tables.
//!
//! An episode log holds one JSON object per line:
//!
//! ```text
//! {"task_id":"task-00003","seed":0,"condition":"intervention","outcome":"success",
//!  "n_steps":7,"interventions":[{"step":2,"raw_score":0.91,"calibrated_score":0.63}],
//!  "answered":true}
//! ```
//!
//! Two optional fields extend the format: `latent_baseline_outcome`
//! (`"success"` or `"failure"`, known for simulated runs) and `steps`, the
//! full per-step trace needed for calibration.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::episode::{Condition, EpisodeRecord, Outcome, StepRecord};
use crate::error::{Error, Result};
use crate::framework::{compute_profile, DrProfile, OutcomeTable};
use crate::simulator::SimConfig;
use crate::stats::{holm_bonferroni, paired_bootstrap, success_ci, PairedOutcomes};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionEntry {
    pub step: u32,
    pub raw_score: f64,
    pub calibrated_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeLogLine {
    pub task_id: String,
    pub seed: u64,
    pub condition: Condition,
    pub outcome: Outcome,
    pub n_steps: u32,
    pub interventions: Vec<InterventionEntry>,
    pub answered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_baseline_outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<StepRecord>>,
}

impl From<&EpisodeRecord> for EpisodeLogLine {
    fn from(e: &EpisodeRecord) -> Self {
        EpisodeLogLine {
            task_id: e.task_id.clone(),
            seed: e.seed,
            condition: e.condition,
            outcome: e.outcome,
            n_steps: e.n_steps,
            interventions: e
                .triggered_steps()
                .map(|s| InterventionEntry {
                    step: s.index,
                    raw_score: s.raw_score,
                    calibrated_score: s.calibrated_score,
                })
                .collect(),
            answered: e.outcome != Outcome::NoAnswer,
            latent_baseline_outcome: e.latent_baseline_outcome,
            steps: e.has_full_trace().then(|| e.steps.clone()),
        }
    }
}

impl EpisodeLogLine {
    /// Converts to a record, checking internal consistency.
    pub fn into_record(self) -> std::result::Result<EpisodeRecord, String> {
        if self.answered != (self.outcome != Outcome::NoAnswer) {
            return Err(format!(
                "answered = {} contradicts outcome {:?}",
                self.answered, self.outcome
            ));
        }
        if self.latent_baseline_outcome == Some(Outcome::NoAnswer) {
            return Err("latent_baseline_outcome must be \"success\" or \"failure\"".into());
        }
        for w in self.interventions.windows(2) {
            if w[0].step >= w[1].step {
                return Err("interventions must be in increasing step order".into());
            }
        }
        if let Some(last) = self.interventions.last() {
            if last.step >= self.n_steps {
                return Err(format!(
                    "intervention at step {} beyond n_steps {}",
                    last.step, self.n_steps
                ));
            }
        }
        let n_interventions = self.interventions.len() as u32;
        let steps = match self.steps {
            Some(steps) => {
                if steps.len() != self.n_steps as usize {
                    return Err(format!("{} steps listed but n_steps = {}", steps.len(), self.n_steps));
                }
                if steps.iter().enumerate().any(|(i, s)| s.index as usize != i) {
                    return Err("step indices must run 0, 1, 2, ...".into());
                }
                let triggered: Vec<_> = steps.iter().filter(|s| s.triggered).collect();
                let consistent = triggered.len() == self.interventions.len()
                    && triggered.iter().zip(&self.interventions).all(|(s, i)| {
                        s.index == i.step && s.raw_score == i.raw_score && s.calibrated_score == i.calibrated_score
                    });
                if !consistent {
                    return Err("triggered steps disagree with interventions".into());
                }
                steps
            }
            None => self
                .interventions
                .iter()
                .map(|i| StepRecord {
                    index: i.step,
                    raw_score: i.raw_score,
                    calibrated_score: i.calibrated_score,
                    triggered: true,
                })
                .collect(),
        };
        Ok(EpisodeRecord {
            task_id: self.task_id,
            seed: self.seed,
            condition: self.condition,
            n_steps: self.n_steps,
            steps,
            outcome: self.outcome,
            n_interventions,
            latent_baseline_outcome: self.latent_baseline_outcome,
        })
    }
}

pub fn write_log<W: Write>(mut writer: W, episodes: &[EpisodeRecord]) -> Result<()> {
    for e in episodes {
        let line = serde_json::to_string(&EpisodeLogLine::from(e)).expect("log line serializes");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_log_file(path: impl AsRef<Path>, episodes: &[EpisodeRecord]) -> Result<()> {
    write_log(BufWriter::new(File::create(path)?), episodes)
}

/// Reads a log; blank lines are skipped and (task_id, seed, condition) must
/// be unique.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<EpisodeRecord>> {
    let mut seen: HashSet<(String, u64, Condition)> = HashSet::new();
    let mut episodes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EpisodeLogLine = serde_json::from_str(&line).map_err(|e| Error::Log {
            line: n,
            reason: e.to_string(),
        })?;
        let record = parsed.into_record().map_err(|reason| Error::Log { line: n, reason })?;
        if !seen.insert((record.task_id.clone(), record.seed, record.condition)) {
            return Err(Error::Log {
                line: n,
                reason: format!(
                    "duplicate record for task {} seed {} condition {}",
                    record.task_id, record.seed, record.condition
                ),
            });
        }
        episodes.push(record);
    }
    Ok(episodes)
}

pub fn read_log_file(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>> {
    let path = path.as_ref();
    let file =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_log(BufReader::new(file))
}

fn read_text(path: &Path) -> Result<String> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(text)
}

/// Parses and validates a simulator config. Unknown keys are errors.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let config: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    parse_config(&read_text(path)?).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn config_to_toml(config: &SimConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

/// Rates or outcome counts for a decision without per-task data.
///
/// Give either all three rates or a `[counts]` table. The descriptive
/// fields are optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tasks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disruption_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<OutcomeTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_success: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_success_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_gain_pp: Option<f64>,
}

impl ProfileFile {
    pub fn profile(&self) -> Result<DrProfile> {
        match (self.counts, self.failure_rate) {
            (Some(_), Some(_)) => Err(Error::Config("profile: give either rates or [counts], not both".into())),
            (Some(table), None) => compute_profile(&table),
            (None, Some(p)) => {
                let missing = |name: &str| Error::Config(format!("profile: {name} is required with failure_rate"));
                DrProfile::from_rates(
                    p,
                    Some(self.recovery_rate.ok_or_else(|| missing("recovery_rate"))?),
                    Some(self.disruption_rate.ok_or_else(|| missing("disruption_rate"))?),
                )
            }
            (None, None) => Err(Error::Config(
                "profile: needs failure_rate/recovery_rate/disruption_rate or a [counts] table".into(),
            )),
        }
    }
}

pub fn parse_profile(text: &str) -> Result<ProfileFile> {
    let file: ProfileFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    file.profile()?;
    Ok(file)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<ProfileFile> {
    let path = path.as_ref();
    parse_profile(&read_text(path)?).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// One labelled set of episodes, usually one log file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledRun {
    pub label: String,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub condition: String,
    pub n: usize,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Change against the baseline row on matched units.
    pub delta: Option<f64>,
    pub p_value: Option<f64>,
    /// Holm-Bonferroni decision across all non-baseline rows.
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
    pub best_delta: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub bootstrap_iters: usize,
    pub alpha: f64,
    pub seed: u64,
}

fn rate(outcomes: &[bool]) -> f64 {
    outcomes.iter().filter(|s| **s).count() as f64 / outcomes.len() as f64
}

/// Baseline row plus one row per run with intervention records. Baseline
/// records are pooled over runs and must agree where they overlap.
pub fn results_table(runs: &[LabelledRun], options: &ReportOptions) -> Result<ResultsTable> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("no logs"));
    }
    let mut baseline: HashMap<(&str, u64), bool> = HashMap::new();
    let mut baseline_order: Vec<(&str, u64)> = Vec::new();
    for run in runs {
        for e in run.episodes.iter().filter(|e| e.condition == Condition::Baseline) {
            let key = (e.task_id.as_str(), e.seed);
            match baseline.get(&key) {
                Some(&prev) if prev != e.is_success() => {
                    return Err(Error::Pairing(format!(
                        "baseline outcome for task {} seed {} differs between logs",
                        e.task_id, e.seed
                    )));
                }
                Some(_) => {}
                None => {
                    baseline.insert(key, e.is_success());
                    baseline_order.push(key);
                }
            }
        }
    }
    if baseline.is_empty() {
        return Err(Error::Pairing("no baseline records in any log".into()));
    }
    let base_outcomes: Vec<bool> = baseline_order.iter().map(|k| baseline[k]).collect();
    let (lo, hi) = success_ci(&base_outcomes, options.bootstrap_iters, options.seed)?;
    let mut rows = vec![ResultsRow {
        condition: "baseline".into(),
        n: base_outcomes.len(),
        success_rate: rate(&base_outcomes),
        ci_low: lo,
        ci_high: hi,
        delta: None,
        p_value: None,
        significant: None,
    }];

    for (k, run) in runs.iter().enumerate() {
        let arm: Vec<&EpisodeRecord> = run
            .episodes
            .iter()
            .filter(|e| e.condition == Condition::Intervention)
            .collect();
        if arm.is_empty() {
            continue;
        }
        let missing: Vec<String> = arm
            .iter()
            .filter(|e| !baseline.contains_key(&(e.task_id.as_str(), e.seed)))
            .map(|e| format!("{}/{}", e.task_id, e.seed))
            .collect();
        if !missing.is_empty() {
            let shown = missing.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
            return Err(Error::Pairing(format!(
                "{}: {} intervention runs have no baseline partner (task/seed: {shown}{})",
                run.label,
                missing.len(),
                if missing.len() > 5 { ", ..." } else { "" }
            )));
        }
        let pairs = PairedOutcomes::new(
            arm.iter().map(|e| e.task_id.clone()).collect(),
            arm.iter().map(|e| baseline[&(e.task_id.as_str(), e.seed)]).collect(),
            arm.iter().map(|e| e.is_success()).collect(),
        )?;
        let outcomes = &pairs.intervention;
        let seed = options.seed.wrapping_add(k as u64 + 1);
        let (lo, hi) = success_ci(outcomes, options.bootstrap_iters, seed)?;
        let boot = paired_bootstrap(&pairs, options.bootstrap_iters, seed)?;
        rows.push(ResultsRow {
            condition: run.label.clone(),
            n: outcomes.len(),
            success_rate: rate(outcomes),
            ci_low: lo,
            ci_high: hi,
            delta: Some(boot.delta_mean),
            p_value: Some(boot.p_one_sided),
            significant: None,
        });
    }

    let p_values: Vec<f64> = rows.iter().filter_map(|r| r.p_value).collect();
    if !p_values.is_empty() {
        let flags = holm_bonferroni(&p_values, options.alpha)?;
        for (row, flag) in rows.iter_mut().skip(1).zip(flags) {
            row.significant = Some(flag);
        }
    }
    let best_delta = rows.iter().filter_map(|r| r.delta).max_by(f64::total_cmp);
    Ok(ResultsTable {
        rows,
        best_delta,
        alpha: options.alpha,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn flag(v: Option<bool>) -> String {
    match v {
        Some(true) => "yes".into(),
        Some(false) => "no".into(),
        None => "-".into(),
    }
}

impl ResultsTable {
    const HEADER: [&'static str; 8] = [
        "condition",
        "n",
        "success",
        "ci_low",
        "ci_high",
        "delta",
        "p_value",
        "significant",
    ];

    fn cells(&self) -> Vec<[String; 8]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.condition.clone(),
                    r.n.to_string(),
                    format!("{:.4}", r.success_rate),
                    format!("{:.4}", r.ci_low),
                    format!("{:.4}", r.ci_high),
                    cell(r.delta),
                    cell(r.p_value),
                    flag(r.significant),
                ]
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let mut widths = Self::HEADER.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |row: &[String]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&Self::HEADER.map(String::from));
        for row in &cells {
            line(row);
        }
        let _ = writeln!(
            out,
            "best delta: {}  (Holm-Bonferroni at alpha = {})",
            cell(self.best_delta),
            self.alpha
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::HEADER.join(",");
        out.push('\n');
        for row in self.cells() {
            let escaped: Vec<String> = row
                .iter()
                .map(|c| {
                    if c.contains([',', '"', '\n']) {
                        format!("\"{}\"", c.replace('"', "\"\""))
                    } else {
                        c.clone()
                    }
                })
                .collect();
            out.push_str(&escaped.join(","));
            out.push('\n');
        }
        out
    }
}
