//! Temperature scaling and critic quality metrics.
//!
//! Critic outputs are failure probabilities. Temperature scaling divides the
//! log-odds of each score by a single fitted `T`; `T > 1` softens an
//! overconfident critic.

use serde::{Deserialize, Serialize};

use crate::episode::EpisodeRecord;
use crate::error::{Error, Result};

/// Scores are kept this far away from 0 and 1 so log-odds stay finite.
pub const SCORE_EPS: f64 = 1e-6;
pub const MIN_TEMPERATURE: f64 = 0.01;
pub const MAX_TEMPERATURE: f64 = 50.0;
pub const DEFAULT_BINS: usize = 10;

const GRID_POINTS: usize = 50;
const MAX_GOLDEN_ITERS: usize = 200;
const TEMPERATURE_TOL: f64 = 1e-4;

pub fn clamp_score(score: f64) -> f64 {
    score.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// A critic score with the episode's eventual outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub raw_score: f64,
    /// True when the episode ultimately failed.
    pub failed: bool,
}

impl ScoredSample {
    pub fn new(raw_score: f64, failed: bool) -> Self {
        ScoredSample {
            raw_score: clamp_score(raw_score),
            failed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub temperature: f64,
    pub fit_nll: f64,
    pub n_fit: usize,
}

impl CalibrationModel {
    pub fn identity() -> Self {
        CalibrationModel {
            temperature: 1.0,
            fit_nll: 0.0,
            n_fit: 0,
        }
    }

    /// A model with a fixed temperature, e.g. one read from a config file.
    pub fn with_temperature(temperature: f64) -> Result<Self> {
        if !(MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(&temperature) {
            return Err(Error::param(
                "temperature",
                format!("must lie in [{MIN_TEMPERATURE}, {MAX_TEMPERATURE}], got {temperature}"),
            ));
        }
        Ok(CalibrationModel {
            temperature,
            fit_nll: 0.0,
            n_fit: 0,
        })
    }

    pub fn apply(&self, raw_score: f64) -> f64 {
        apply_temperature(self.temperature, raw_score)
    }

    pub fn calibrate_samples(&self, samples: &[ScoredSample]) -> Vec<ScoredSample> {
        samples
            .iter()
            .map(|s| ScoredSample::new(self.apply(s.raw_score), s.failed))
            .collect()
    }
}

/// `logistic(logit(s) / T)` on the clamped score.
pub fn apply_temperature(temperature: f64, raw_score: f64) -> f64 {
    let s = clamp_score(raw_score);
    if temperature == 1.0 {
        return s;
    }
    logistic(logit(s) / temperature)
}

fn validate_two_class(samples: &[ScoredSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no scored samples"));
    }
    let failures = samples.iter().filter(|s| s.failed).count();
    if failures == 0 || failures == samples.len() {
        return Err(Error::DegenerateFit("samples contain a single outcome class".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy of temperature-scaled scores.
pub fn mean_nll(samples: &[ScoredSample], temperature: f64) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let x = logit(clamp_score(s.raw_score)) / temperature;
            let y = if s.failed { 1.0 } else { 0.0 };
            softplus(x) - y * x
        })
        .sum();
    total / samples.len() as f64
}

/// Fits `T` by minimizing mean NLL over `ln T` in `[ln 0.01, ln 50]`.
///
/// A coarse grid locates the basin, then golden-section search refines it.
pub fn fit_temperature(samples: &[ScoredSample]) -> Result<CalibrationModel> {
    validate_two_class(samples)?;
    if samples.len() < 2 {
        return Err(Error::DegenerateFit("need at least two samples".into()));
    }
    let lo = MIN_TEMPERATURE.ln();
    let hi = MAX_TEMPERATURE.ln();
    let objective = |u: f64| mean_nll(samples, u.exp());

    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&u| objective(u)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is nonempty");

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(GRID_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective(c);
    let mut fd = objective(d);
    for _ in 0..MAX_GOLDEN_ITERS {
        if b.exp() - a.exp() < TEMPERATURE_TOL {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let u = 0.5 * (a + b);
    let temperature = u.exp().clamp(MIN_TEMPERATURE, MAX_TEMPERATURE);
    Ok(CalibrationModel {
        temperature,
        fit_nll: mean_nll(samples, temperature),
        n_fit: samples.len(),
    })
}

/// Expected calibration error over equal-width bins on `[0, 1]`.
pub fn ece(samples: &[ScoredSample], n_bins: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no scored samples"));
    }
    if n_bins == 0 {
        return Err(Error::param("n_bins", "must be at least 1"));
    }
    let mut score_sum = vec![0.0; n_bins];
    let mut fail_count = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for s in samples {
        let bin = ((s.raw_score * n_bins as f64) as usize).min(n_bins - 1);
        score_sum[bin] += s.raw_score;
        count[bin] += 1;
        if s.failed {
            fail_count[bin] += 1;
        }
    }
    let n = samples.len() as f64;
    let total = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (score_sum[b] / m - fail_count[b] as f64 / m).abs()
        })
        .sum();
    Ok(total)
}

/// Probability that a failed sample outscores a successful one, ties
/// counting one half (Mann-Whitney U with mid-ranks).
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let n_pos = samples.iter().filter(|s| s.failed).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both failed and successful samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].raw_score.total_cmp(&samples[b].raw_score));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].raw_score == samples[order[i]].raw_score {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| samples[k].failed).count();
        rank_sum_pos += mid_rank * pos_in_group as f64;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    Failure,
    Success,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Precision or recall had a zero denominator; F1 is reported as 0.
    pub degenerate: bool,
}

/// F1 of the rule "predict failure when score > tau".
pub fn f1_at(samples: &[ScoredSample], tau: f64, positive: PositiveClass) -> Result<F1Score> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no scored samples"));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for s in samples {
        let predicted_failure = s.raw_score > tau;
        let (predicted, actual) = match positive {
            PositiveClass::Failure => (predicted_failure, s.failed),
            PositiveClass::Success => (!predicted_failure, !s.failed),
        };
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    Ok(match (precision, recall) {
        (Some(p), Some(r)) => F1Score {
            f1: if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 },
            precision: p,
            recall: r,
            degenerate: false,
        },
        (p, r) => F1Score {
            f1: 0.0,
            precision: p.unwrap_or(0.0),
            recall: r.unwrap_or(0.0),
            degenerate: true,
        },
    })
}

/// Mean number of interventions per episode.
pub fn intervention_rate(episodes: &[EpisodeRecord]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::EmptyInput("no episodes"));
    }
    let total: u64 = episodes.iter().map(|e| e.n_interventions as u64).sum();
    Ok(total as f64 / episodes.len() as f64)
}

/// Per-step samples from episodes, labelled by each episode's final outcome.
/// Every episode must carry its full per-step trace.
pub fn samples_from_episodes<'a, I>(episodes: I) -> Result<Vec<ScoredSample>>
where
    I: IntoIterator<Item = &'a EpisodeRecord>,
{
    let mut samples = Vec::new();
    for e in episodes {
        if !e.has_full_trace() {
            return Err(Error::param(
                "steps",
                format!(
                    "task {} seed {} ({}) has no full per-step trace",
                    e.task_id, e.seed, e.condition
                ),
            ));
        }
        let failed = !e.is_success();
        samples.extend(e.steps.iter().map(|s| ScoredSample::new(s.raw_score, failed)));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{Condition, Outcome};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(t_true: f64, n: usize, seed: u64) -> Vec<ScoredSample> {
        synthetic_spread(t_true, 1.5, n, seed)
    }

    fn synthetic_spread(t_true: f64, sd: f64, n: usize, seed: u64) -> Vec<ScoredSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sd).unwrap();
        (0..n)
            .map(|_| {
                let z: f64 = normal.sample(&mut rng);
                let failed = rng.random::<f64>() < logistic(z);
                ScoredSample::new(logistic(z * t_true), failed)
            })
            .collect()
    }

    #[test]
    fn apply_examples() {
        let identity = CalibrationModel::identity();
        assert_eq!(identity.apply(0.73), 0.73);
        assert!((apply_temperature(2.0, 0.9) - 0.75).abs() < 1e-12);
        assert!((apply_temperature(MAX_TEMPERATURE, 0.999) - 0.5).abs() < 0.04);
        assert!((apply_temperature(1e9, 0.999) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fit_recovers_overconfidence() {
        // Narrower evidence at high T keeps raw scores off the clamp.
        for (t, sd, seed) in [(2.27, 1.5, 1), (8.81, 0.6, 2)] {
            let model = fit_temperature(&synthetic_spread(t, sd, 20_000, seed)).unwrap();
            assert!(
                (model.temperature - t).abs() / t < 0.10,
                "fitted {} for {t}",
                model.temperature
            );
        }
    }

    #[test]
    fn fit_on_calibrated_data_is_near_identity() {
        let model = fit_temperature(&synthetic(1.0, 5000, 3)).unwrap();
        assert!((model.temperature - 1.0).abs() < 0.05, "{}", model.temperature);
    }

    #[test]
    fn fit_rejects_single_class() {
        let samples = vec![ScoredSample::new(0.7, true), ScoredSample::new(0.2, true)];
        assert!(matches!(fit_temperature(&samples), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn ece_single_bin_hand_case() {
        let samples: Vec<_> = (0..10).map(|i| ScoredSample::new(0.9, i < 5)).collect();
        assert!((ece(&samples, 10).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ece_zero_when_bins_match_accuracy() {
        // bin [0.2,0.3): score 0.25 with 1/4 failures; bin [0.7,0.8): 0.75 with 3/4
        let mut samples = Vec::new();
        for i in 0..4 {
            samples.push(ScoredSample::new(0.25, i == 0));
            samples.push(ScoredSample::new(0.75, i != 0));
        }
        assert!(ece(&samples, 10).unwrap().abs() < 1e-12);
        assert!(ece(&[], 10).is_err());
        assert!(ece(&samples, 0).is_err());
    }

    #[test]
    fn ece_drops_after_fitting() {
        let samples = synthetic(2.27, 5000, 4);
        let model = fit_temperature(&samples).unwrap();
        let before = ece(&samples, DEFAULT_BINS).unwrap();
        let after = ece(&model.calibrate_samples(&samples), DEFAULT_BINS).unwrap();
        assert!(after < before);
        assert!((before - after) / before >= 0.30, "{before} -> {after}");
    }

    #[test]
    fn ece_of_calibrated_generator_is_small() {
        let samples = synthetic(1.0, 10_000, 5);
        assert!(ece(&samples, 10).unwrap() <= 0.05);
    }

    #[test]
    fn auroc_edge_cases() {
        let separated: Vec<_> = (0..10)
            .map(|i| ScoredSample::new(i as f64 / 10.0 + 0.01, i >= 5))
            .collect();
        assert_eq!(auroc(&separated).unwrap(), 1.0);
        let ties: Vec<_> = (0..10).map(|i| ScoredSample::new(0.4, i % 3 == 0)).collect();
        assert_eq!(auroc(&ties).unwrap(), 0.5);
        let single: Vec<_> = (0..3).map(|_| ScoredSample::new(0.4, true)).collect();
        assert!(matches!(auroc(&single), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn f1_examples() {
        let samples = [
            ScoredSample::new(0.9, true),
            ScoredSample::new(0.8, false),
            ScoredSample::new(0.3, true),
            ScoredSample::new(0.1, false),
        ];
        let f1 = f1_at(&samples, 0.5, PositiveClass::Failure).unwrap();
        assert!((f1.precision - 0.5).abs() < 1e-12);
        assert!((f1.recall - 0.5).abs() < 1e-12);
        assert!((f1.f1 - 0.5).abs() < 1e-12);

        let perfect = [
            ScoredSample::new(0.9, true),
            ScoredSample::new(0.85, true),
            ScoredSample::new(0.2, false),
        ];
        assert_eq!(f1_at(&perfect, 0.5, PositiveClass::Failure).unwrap().f1, 1.0);
        assert_eq!(f1_at(&perfect, 0.5, PositiveClass::Success).unwrap().f1, 1.0);

        let all_negative = f1_at(&perfect, 0.95, PositiveClass::Failure).unwrap();
        assert_eq!(all_negative.f1, 0.0);
        assert!(all_negative.degenerate);
    }

    fn episode(n: u32) -> EpisodeRecord {
        EpisodeRecord {
            task_id: "t".into(),
            seed: 0,
            condition: Condition::Intervention,
            n_steps: 0,
            steps: vec![],
            outcome: Outcome::Success,
            n_interventions: n,
            latent_baseline_outcome: None,
        }
    }

    #[test]
    fn intervention_rate_is_mean_count() {
        let eps: Vec<_> = [3, 2, 3, 2, 3, 2, 3, 2, 3, 2].into_iter().map(episode).collect();
        assert_eq!(intervention_rate(&eps).unwrap(), 2.5);
        let zeros: Vec<_> = (0..4).map(|_| episode(0)).collect();
        assert_eq!(intervention_rate(&zeros).unwrap(), 0.0);
        assert!(intervention_rate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn apply_is_strictly_monotone(t in 0.01f64..50.0, a in 0.001f64..0.999, b in 0.001f64..0.999) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(apply_temperature(t, lo) < apply_temperature(t, hi));
        }

        #[test]
        fn ece_stays_in_unit_interval(scores in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..200), bins in 1usize..30) {
            let samples: Vec<_> = scores.into_iter().map(|(s, y)| ScoredSample::new(s, y)).collect();
            let e = ece(&samples, bins).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn auroc_survives_calibration_exactly() {
        let samples = synthetic(2.27, 2000, 9);
        let before = auroc(&samples).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            // Much sharper temperatures round distinct scores to 1.0.
            let t = rng.random_range(0.5..40.0);
            let model = CalibrationModel::with_temperature(t).unwrap();
            let after = auroc(&model.calibrate_samples(&samples)).unwrap();
            assert!((before - after).abs() <= 1e-12, "T={t}");
        }
    }
}
