use intervene_core::calibration::{
    apply_temperature, auroc, ece, f1_at, fit_temperature, intervention_rate, logistic, samples_from_episodes,
    PositiveClass, ScoredSample,
};
use intervene_core::episode::{Condition, EpisodeRecord, Outcome};
use intervene_core::seeding::stream_rng;
use intervene_core::simulator::{
    run_experiment, AgentSpec, CalibrationSpec, CriticSpec, MechanismKind, MechanismSpec, PolicySpec, SimConfig,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Beta, Continuous, ContinuousCDF};

#[test]
fn temperature_two_at_point_nine() {
    let expected = logistic(9f64.ln() / 2.0);
    assert!((apply_temperature(2.0, 0.9) - expected).abs() < 1e-15);
    assert!((expected - 0.75).abs() < 1e-12);
}

#[test]
fn single_bin_ece() {
    let samples: Vec<ScoredSample> = (0..10).map(|i| ScoredSample::new(0.9, i < 5)).collect();
    assert!((ece(&samples, 10).unwrap() - 0.4).abs() < 1e-12);
}

#[test]
fn f1_hand_enumeration() {
    let samples = [(0.9, true), (0.8, false), (0.3, true), (0.1, false)].map(|(s, f)| ScoredSample::new(s, f));
    let f1 = f1_at(&samples, 0.5, PositiveClass::Failure).unwrap();
    assert_eq!((f1.precision, f1.recall, f1.f1), (0.5, 0.5, 0.5));
}

fn record(n_interventions: u32) -> EpisodeRecord {
    EpisodeRecord {
        task_id: "t".into(),
        seed: 0,
        condition: Condition::Intervention,
        n_steps: 5,
        steps: Vec::new(),
        outcome: Outcome::Failure,
        n_interventions,
        latent_baseline_outcome: None,
    }
}

#[test]
fn mean_interventions() {
    let episodes: Vec<EpisodeRecord> = [3, 2, 3, 2, 2, 3, 2, 3, 2, 3].into_iter().map(record).collect();
    assert_eq!(intervention_rate(&episodes).unwrap(), 2.5);
}

#[test]
fn fit_recovers_a_range_of_temperatures() {
    let evidence = Normal::new(0.0, 0.8).unwrap();
    for (i, t_true) in [0.7, 1.5, 3.0, 5.0].into_iter().enumerate() {
        let mut rng = stream_rng(21, i as u64);
        let samples: Vec<ScoredSample> = (0..4000)
            .map(|_| {
                let z: f64 = evidence.sample(&mut rng);
                ScoredSample::new(logistic(t_true * z), rng.random::<f64>() < logistic(z))
            })
            .collect();
        let fitted = fit_temperature(&samples).unwrap().temperature;
        assert!((fitted - t_true).abs() / t_true < 0.10, "T {t_true}: fitted {fitted}");
    }
}

fn beta_critic_config(calibrated: bool) -> SimConfig {
    let mut policy = PolicySpec::threshold(0.6);
    policy.intervention_budget = 15;
    policy.calibrated = calibrated;
    SimConfig {
        agent: AgentSpec::new(0.5),
        critic: CriticSpec::beta((2.0, 0.5), (1.0, 4.0)),
        mechanism: MechanismSpec::new(MechanismKind::Append, 0.0, 0.0),
        policy,
        calibration: Some(CalibrationSpec { temperature: 8.81 }),
    }
}

#[test]
fn calibration_cuts_intervention_rate_as_configured() {
    let raw = run_experiment(&beta_critic_config(false), 5000, 1, 3).unwrap();
    let cal = run_experiment(&beta_critic_config(true), 5000, 1, 3).unwrap();
    let triggers =
        |e: &intervene_core::simulator::Experiment| e.intervention().map(|r| r.n_interventions as f64).sum::<f64>();
    let measured = 1.0 - triggers(&cal) / triggers(&raw);

    // Expected triggers: every step of a failing (succeeding) episode exceeds
    // the cutoff with the failing (succeeding) Beta tail probability.
    let fail = Beta::new(2.0, 0.5).unwrap();
    let succeed = Beta::new(1.0, 4.0).unwrap();
    let cutoff = logistic(8.81 * (0.6f64 / 0.4).ln());
    let expected_triggers = |tau: f64| {
        raw.intervention()
            .map(|e| {
                let dist = if e.outcome == Outcome::Success { &succeed } else { &fail };
                e.n_steps as f64 * (1.0 - dist.cdf(tau))
            })
            .sum::<f64>()
    };
    let configured = 1.0 - expected_triggers(cutoff) / expected_triggers(0.6);
    assert!((configured - 0.71).abs() < 0.01, "configured {configured}");
    assert!(
        (measured - configured).abs() < 0.10,
        "measured {measured} vs {configured}"
    );
}

/// P(fail score > succeed score) by Simpson integration of the succeeding
/// density against the failing survival function.
fn beta_auroc(fail: &Beta, succeed: &Beta) -> f64 {
    let n = 20_000;
    let h = 1.0 / n as f64;
    let f = |x: f64| succeed.pdf(x) * (1.0 - fail.cdf(x));
    let mut sum = f(0.0) + f(1.0);
    for i in 1..n {
        sum += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

#[test]
fn emitted_score_auroc_matches_beta_integral() {
    let exp = run_experiment(&beta_critic_config(false), 6000, 1, 4).unwrap();
    let samples = samples_from_episodes(exp.baseline()).unwrap();
    assert!(samples.len() >= 50_000, "{}", samples.len());
    let expected = beta_auroc(&Beta::new(2.0, 0.5).unwrap(), &Beta::new(1.0, 4.0).unwrap());
    let measured = auroc(&samples).unwrap();
    assert!((measured - expected).abs() < 0.02, "measured {measured} vs {expected}");
}
