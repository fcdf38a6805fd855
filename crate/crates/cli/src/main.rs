use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use intervene_core::calibration::{
    auroc, ece, f1_at, fit_temperature, intervention_rate, samples_from_episodes, PositiveClass, DEFAULT_BINS,
};
use intervene_core::episode::{match_pairs, outcome_table, Condition, EpisodeRecord};
use intervene_core::fixtures;
use intervene_core::framework::{compute_profile, OutcomeTable, DEFAULT_MARGIN};
use intervene_core::io::{
    load_config, load_profile, read_log_file, results_table, write_log_file, LabelledRun, ReportOptions,
};
use intervene_core::oracle::{
    bo2_from_episodes, contested_pairs, critic_select, oracle_intervention_ceiling, Aggregation,
};
use intervene_core::pilot::{
    render_decision_tree, render_json, run_pilot_with, PilotOptions, PilotSource, DEFAULT_PILOT_SEEDS,
};
use intervene_core::seeding::Execution;
use intervene_core::simulator::{cascade_stats, run_experiment_with, DEFAULT_TAU};
use intervene_core::{Error, Result};

macro_rules! outln {
    ($out:expr, $($arg:tt)*) => {
        let _ = writeln!($out, $($arg)*);
    };
}

#[derive(Parser)]
#[command(
    name = "intervene",
    version,
    about = "Decide whether execution-time intervention helps an agent"
)]
struct Cli {
    /// Run simulations on one thread (output is identical either way).
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate paired baseline/intervention runs and write an episode log.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        tasks: usize,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate p, r, d from a pilot and walk the deployment decision tree.
    ///
    /// INPUT is an episode log (.jsonl), a simulator config (.toml with an
    /// [agent] table) or a profile file with rates or counts.
    Decide {
        input: PathBuf,
        #[arg(long, default_value_t = 50)]
        pilot: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seeds per pilot task when INPUT is a simulator config.
        #[arg(long, default_value_t = DEFAULT_PILOT_SEEDS)]
        seeds: usize,
        #[arg(long, default_value_t = 2000)]
        bootstrap_iters: usize,
    },
    /// Fit a temperature on logged per-step scores and report calibration.
    Calibrate {
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// Which runs supply calibration samples.
        #[arg(long, value_enum, default_value_t = Arms::Baseline)]
        condition: Arms,
    },
    /// Success rates, bootstrap intervals and corrected significance.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        bootstrap_iters: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Oracle ceilings: perfect failure prediction, Best-of-2, critic selection.
    Oracle {
        log: PathBuf,
        #[arg(long, value_enum)]
        mode: OracleMode,
        #[arg(long, value_enum, default_value_t = Agg::Max)]
        aggregation: Agg,
        /// Runs compared by the bo2 and select modes.
        #[arg(long, value_enum, default_value_t = Arm::Baseline)]
        condition: Arm,
    },
    /// Print a bundled reference table with re-derived quantities.
    Fixture {
        #[arg(value_enum)]
        name: FixtureName,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMode {
    Intervention,
    Bo2,
    Select,
}

#[derive(Clone, Copy, ValueEnum)]
enum Agg {
    Max,
    Mean,
    Final,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arm {
    Baseline,
    Intervention,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arms {
    Baseline,
    Intervention,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureName {
    Pilot,
    Counts,
    Oracle,
    Selection,
    Critic,
}

impl From<Arm> for Condition {
    fn from(a: Arm) -> Self {
        match a {
            Arm::Baseline => Condition::Baseline,
            Arm::Intervention => Condition::Intervention,
        }
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn signed_pp(x: f64) -> String {
    format!("{:+.1}", 100.0 * x)
}

fn print_table_summary(out: &mut String, table: &OutcomeTable) -> Result<()> {
    outln!(
        out,
        "units: {}  baseline success: {:.4}  intervention success: {:.4}  delta: {:+.4}",
        table.n_tasks(),
        table.baseline_success_rate(),
        table.intervention_success_rate(),
        table.intervention_success_rate() - table.baseline_success_rate()
    );
    outln!(
        out,
        "both fail: {}  recovered: {}  disrupted: {}  both succeed: {}",
        table.both_fail,
        table.recoveries,
        table.disruptions,
        table.both_succeed
    );
    let profile = compute_profile(table)?;
    let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
    outln!(
        out,
        "p = {:.4}  r = {}  d = {}",
        profile.failure_rate,
        show(profile.recovery_rate),
        show(profile.disruption_rate)
    );
    Ok(())
}

fn simulate(
    out: &mut String,
    config: &Path,
    tasks: usize,
    seeds: usize,
    seed: u64,
    log_path: &Path,
    execution: Execution,
) -> Result<()> {
    let config = load_config(config)?;
    eprintln!("simulating {tasks} tasks x {seeds} seeds (seed {seed})");
    let exp = run_experiment_with(&config, tasks, seeds, seed, execution)?;
    write_log_file(log_path, &exp.episodes)?;
    eprintln!("wrote {} records to {}", exp.episodes.len(), log_path.display());
    print_table_summary(out, &exp.table)?;
    if let Some(rate) = exp.matched_rate {
        outln!(out, "matched per-step trigger rate: {rate:.4}");
    }
    let arm: Vec<EpisodeRecord> = exp.intervention().cloned().collect();
    let cascades = cascade_stats(&arm)?;
    outln!(
        out,
        "interventions per episode: {:.4}  cascade rate: {}  no-answer rate: {:.4}",
        cascades.mean_interventions,
        if cascades.cascade_defined {
            format!("{:.4}", cascades.cascade_rate)
        } else {
            "undefined".into()
        },
        cascades.no_answer_rate
    );
    Ok(())
}

enum DecideInput {
    Log(Vec<EpisodeRecord>),
    Config(intervene_core::simulator::SimConfig),
    Profile(intervene_core::io::ProfileFile),
}

fn resolve_decide_input(path: &Path) -> Result<DecideInput> {
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    if !is_toml {
        return read_log_file(path).map(DecideInput::Log);
    }
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let tree: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if tree.contains_key("agent") {
        load_config(path).map(DecideInput::Config)
    } else {
        load_profile(path).map(DecideInput::Profile)
    }
}

fn decide(
    out: &mut String,
    input: &Path,
    pilot: usize,
    margin: f64,
    seed: u64,
    seeds: usize,
    bootstrap_iters: usize,
) -> Result<()> {
    let mut options = PilotOptions::new(pilot, seed);
    options.margin = margin;
    options.bootstrap_iters = bootstrap_iters;
    let source = match resolve_decide_input(input)? {
        DecideInput::Log(episodes) => PilotSource::Episodes(episodes),
        DecideInput::Config(config) => PilotSource::Simulated { config, n_seeds: seeds },
        DecideInput::Profile(file) => {
            if let Some(n) = file.n_tasks {
                options.n_pilot = n as usize;
            }
            PilotSource::Rates(file.profile()?)
        }
    };
    let report = run_pilot_with(&source, &options)?;
    out.push_str(&render_decision_tree(&report));
    outln!(out, "--- summary (json) ---");
    outln!(out, "{}", render_json(&report));
    Ok(())
}

fn calibrate(out: &mut String, log: &Path, bins: usize, tau: f64, arms: Arms) -> Result<()> {
    let episodes = read_log_file(log)?;
    let chosen = episodes.iter().filter(|e| match arms {
        Arms::Baseline => e.condition == Condition::Baseline,
        Arms::Intervention => e.condition == Condition::Intervention,
        Arms::All => true,
    });
    let samples = samples_from_episodes(chosen)?;
    let model = fit_temperature(&samples)?;
    let calibrated = model.calibrate_samples(&samples);
    let before = ece(&samples, bins)?;
    let after = ece(&calibrated, bins)?;
    let reduction = if before > 0.0 { (before - after) / before } else { 0.0 };
    outln!(out, "samples: {}  bins: {bins}", samples.len());
    outln!(
        out,
        "{:<12} {:>8} {:>12} {:>11} {:>10}",
        "",
        "T",
        "ECE before",
        "ECE after",
        "reduction"
    );
    outln!(
        out,
        "{:<12} {:>8.4} {:>12.4} {:>11.4} {:>9.1}%",
        "critic",
        model.temperature,
        before,
        after,
        100.0 * reduction
    );
    outln!(out, "AUROC: {:.4}", auroc(&samples)?);
    let raw_f1 = f1_at(&samples, tau, PositiveClass::Failure)?;
    let cal_f1 = f1_at(&calibrated, tau, PositiveClass::Failure)?;
    outln!(
        out,
        "F1 (failure positive, score > {tau}): raw {:.4}  calibrated {:.4}{}",
        raw_f1.f1,
        cal_f1.f1,
        if raw_f1.degenerate || cal_f1.degenerate {
            "  (degenerate)"
        } else {
            ""
        }
    );
    let arm: Vec<EpisodeRecord> = episodes
        .iter()
        .filter(|e| e.condition == Condition::Intervention)
        .cloned()
        .collect();
    if !arm.is_empty() {
        outln!(out, "interventions per task (logged): {:.4}", intervention_rate(&arm)?);
    }
    Ok(())
}

fn report(
    out: &mut String,
    logs: &[PathBuf],
    bootstrap_iters: usize,
    alpha: f64,
    seed: u64,
    csv: Option<&Path>,
) -> Result<()> {
    let runs = logs
        .iter()
        .map(|path| {
            Ok(LabelledRun {
                label: path
                    .file_stem()
                    .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
                episodes: read_log_file(path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = results_table(
        &runs,
        &ReportOptions {
            bootstrap_iters,
            alpha,
            seed,
        },
    )?;
    out.push_str(&table.to_text());
    if let Some(path) = csv {
        fs::write(path, table.to_csv())?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn oracle(out: &mut String, log: &Path, mode: OracleMode, aggregation: Agg, condition: Condition) -> Result<()> {
    let episodes = read_log_file(log)?;
    match mode {
        OracleMode::Intervention => {
            let c = oracle_intervention_ceiling(&episodes)?;
            let pairs = match_pairs(&episodes)?;
            let observed = outcome_table(&pairs).intervention_success_rate();
            outln!(out, "units: {}", c.n_units);
            outln!(out, "baseline:               {}%", pct(c.baseline));
            outln!(
                out,
                "logged intervention:    {}% ({} pp)",
                pct(observed),
                signed_pp(observed - c.baseline)
            );
            outln!(
                out,
                "oracle intervention:    {}% ({} pp)",
                pct(c.ceiling),
                signed_pp(c.delta)
            );
        }
        OracleMode::Bo2 => {
            let r = bo2_from_episodes(&episodes, condition)?;
            outln!(out, "tasks: {}", r.n_tasks);
            outln!(out, "seed a: {}%  seed b: {}%", pct(r.seed_a), pct(r.seed_b));
            outln!(
                out,
                "oracle Bo2: {}% ({} pp over the mean seed)",
                pct(r.bo2),
                signed_pp(r.delta)
            );
        }
        OracleMode::Select => {
            let aggregation = match aggregation {
                Agg::Max => Aggregation::Max,
                Agg::Mean => Aggregation::Mean,
                Agg::Final => Aggregation::Final,
            };
            let pairs = contested_pairs(&episodes, condition, aggregation)?;
            let sel = critic_select(&pairs)?;
            outln!(out, "contested tasks: {}", sel.n_contested);
            outln!(
                out,
                "critic selection accuracy: {}% ({} of {})",
                pct(sel.selection_accuracy),
                sel.n_correct,
                sel.n_contested
            );
            outln!(
                out,
                "change vs random choice: {} pp of contested tasks",
                signed_pp(sel.delta)
            );
            if sel.ties > 0 {
                outln!(out, "ties: {} (first trajectory chosen)", sel.ties);
            }
            if sel.n_contested < 50 {
                outln!(out, "note: {}", fixtures::critic_selection().power_caveat);
            }
        }
    }
    Ok(())
}

fn fixture(out: &mut String, name: FixtureName) -> Result<()> {
    match name {
        FixtureName::Pilot => {
            let f = fixtures::alfworld_pilot();
            let profile = f.profile()?;
            let decision = intervene_core::decide(&profile, DEFAULT_MARGIN)?;
            outln!(
                out,
                "{} / {}: p = {:.3}  r = {:.2}  d = {:.2}",
                f.model.unwrap_or_default(),
                f.benchmark.unwrap_or_default(),
                profile.failure_rate,
                profile.recovery_rate.unwrap_or(f64::NAN),
                profile.disruption_rate.unwrap_or(f64::NAN)
            );
            outln!(
                out,
                "p* = {:.4}  predicted delta = {} pp  verdict: {}",
                decision.p_star.unwrap_or(f64::NAN),
                signed_pp(decision.predicted_delta.unwrap_or(f64::NAN)),
                decision.verdict
            );
        }
        FixtureName::Counts => {
            let counts = fixtures::dr_counts();
            outln!(
                out,
                "{:<14} {:>5} {:>4} {:>6} {:>5} {:>4} {:>6} {:>7}",
                "model",
                "F",
                "C",
                "r",
                "S",
                "B",
                "d",
                "p*"
            );
            for row in &counts.model {
                let profile = compute_profile(&row.table())?;
                let r = profile.recovery_rate.unwrap_or(f64::NAN);
                let d = profile.disruption_rate.unwrap_or(f64::NAN);
                outln!(
                    out,
                    "{:<14} {:>5} {:>4} {:>6.4} {:>5} {:>4} {:>6.4} {:>7.4}",
                    row.name,
                    row.failures,
                    row.recoveries,
                    r,
                    row.successes,
                    row.disruptions,
                    d,
                    d / (r + d)
                );
            }
        }
        FixtureName::Oracle => {
            outln!(
                out,
                "{:<14} {:>9} {:>16} {:>16}",
                "model",
                "baseline",
                "oracle interv.",
                "oracle Bo2"
            );
            for row in fixtures::oracle_ceilings().model {
                let rate = |c: u64| c as f64 / row.n as f64;
                let (b, i, s) = (rate(row.baseline), rate(row.oracle_intervention), rate(row.oracle_bo2));
                outln!(
                    out,
                    "{:<14} {:>9} {:>16} {:>16}",
                    row.name,
                    pct(b),
                    format!("{} ({})", pct(i), signed_pp(i - b)),
                    format!("{} ({})", pct(s), signed_pp(s - b))
                );
            }
        }
        FixtureName::Selection => {
            let table = fixtures::critic_selection();
            for row in &table.model {
                outln!(
                    out,
                    "{:<10} contested {:>3}  correct {:>3}  accuracy {}%",
                    row.name,
                    row.contested,
                    row.correct,
                    pct(row.correct as f64 / row.contested as f64)
                );
            }
            outln!(out, "note: {}", table.power_caveat);
        }
        FixtureName::Critic => {
            outln!(
                out,
                "{:<14} {:>6} {:>7} {:>7} {:>10}",
                "model",
                "T",
                "ECE",
                "ECE cal",
                "reduction"
            );
            for row in fixtures::critic().model {
                outln!(
                    out,
                    "{:<14} {:>6.2} {:>7.3} {:>7.3} {:>9.0}%",
                    row.name,
                    row.temperature,
                    row.ece_before,
                    row.ece_after,
                    100.0 * (row.ece_before - row.ece_after) / row.ece_before
                );
            }
        }
    }
    Ok(())
}

fn run(cli: Cli, out: &mut String) -> Result<()> {
    let execution = if cli.serial {
        Execution::Serial
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Simulate {
            config,
            tasks,
            seeds,
            seed,
            out: log_path,
        } => simulate(out, &config, tasks, seeds, seed, &log_path, execution),
        Command::Decide {
            input,
            pilot,
            margin,
            seed,
            seeds,
            bootstrap_iters,
        } => decide(out, &input, pilot, margin, seed, seeds, bootstrap_iters),
        Command::Calibrate {
            log,
            bins,
            tau,
            condition,
        } => calibrate(out, &log, bins, tau, condition),
        Command::Report {
            logs,
            bootstrap_iters,
            alpha,
            seed,
            csv,
        } => report(out, &logs, bootstrap_iters, alpha, seed, csv.as_deref()),
        Command::Oracle {
            log,
            mode,
            aggregation,
            condition,
        } => oracle(out, &log, mode, aggregation, condition.into()),
        Command::Fixture { name } => fixture(out, name),
    }
}

fn main() -> ExitCode {
    let mut out = String::new();
    let result = run(Cli::parse(), &mut out);
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(out.as_bytes()).and_then(|()| stdout.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
