//! Python bindings for `intervene-core`.

use intervene_core::calibration::{self, ScoredSample};
use intervene_core::episode::{match_pairs, outcome_table, Condition, EpisodeRecord};
use intervene_core::framework::{self, DEFAULT_MARGIN};
use intervene_core::pilot::{run_pilot_with, PilotOptions, PilotSource};
use intervene_core::{io, oracle, simulator, stats, Error, ErrorCategory};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match (&e, e.category()) {
        (Error::Io(_), _) => PyOSError::new_err(e.to_string()),
        (_, ErrorCategory::Degenerate) => DegenerateError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

pyo3::create_exception!(
    intervene,
    DegenerateError,
    PyValueError,
    "Statistic undefined for this input."
);

/// Serialize through JSON into plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn samples(scores: Vec<f64>, failed: Vec<bool>) -> PyResult<Vec<ScoredSample>> {
    if scores.len() != failed.len() {
        return Err(py_err(Error::LengthMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            failed.len()
        ))));
    }
    Ok(scores
        .into_iter()
        .zip(failed)
        .map(|(s, f)| ScoredSample::new(s, f))
        .collect())
}

/// Baseline-versus-intervention counts over paired tasks.
#[pyclass(name = "OutcomeTable", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyOutcomeTable(framework::OutcomeTable);

#[pymethods]
impl PyOutcomeTable {
    #[new]
    fn new(both_fail: u64, disruptions: u64, recoveries: u64, both_succeed: u64) -> PyResult<Self> {
        let n = both_fail + disruptions + recoveries + both_succeed;
        framework::OutcomeTable::new(n, both_fail, disruptions, recoveries, both_succeed)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn n_tasks(&self) -> u64 {
        self.0.n_tasks()
    }
    #[getter]
    fn both_fail(&self) -> u64 {
        self.0.both_fail
    }
    #[getter]
    fn disruptions(&self) -> u64 {
        self.0.disruptions
    }
    #[getter]
    fn recoveries(&self) -> u64 {
        self.0.recoveries
    }
    #[getter]
    fn both_succeed(&self) -> u64 {
        self.0.both_succeed
    }

    fn profile(&self) -> PyResult<PyProfile> {
        framework::compute_profile(&self.0).map(PyProfile).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "OutcomeTable(both_fail={}, disruptions={}, recoveries={}, both_succeed={})",
            self.0.both_fail, self.0.disruptions, self.0.recoveries, self.0.both_succeed
        )
    }
}

/// Failure, recovery and disruption rates of one agent/benchmark pair.
#[pyclass(name = "Profile", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProfile(framework::DrProfile);

#[pymethods]
impl PyProfile {
    #[new]
    #[pyo3(signature = (failure_rate, recovery_rate=None, disruption_rate=None))]
    fn new(failure_rate: f64, recovery_rate: Option<f64>, disruption_rate: Option<f64>) -> PyResult<Self> {
        framework::DrProfile::from_rates(failure_rate, recovery_rate, disruption_rate)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn failure_rate(&self) -> f64 {
        self.0.failure_rate
    }
    #[getter]
    fn recovery_rate(&self) -> Option<f64> {
        self.0.recovery_rate
    }
    #[getter]
    fn disruption_rate(&self) -> Option<f64> {
        self.0.disruption_rate
    }

    /// Break-even failure rate, as a float.
    fn threshold(&self) -> PyResult<f64> {
        match (self.0.recovery_rate, self.0.disruption_rate) {
            (Some(r), Some(d)) => framework::threshold(r, d).map_err(py_err),
            _ => Err(py_err(Error::UndefinedThreshold)),
        }
    }

    /// Exact break-even rate as `(numerator, denominator)` when built from counts.
    fn exact_threshold(&self) -> Option<(i64, i64)> {
        self.0.exact_threshold().map(|f| (*f.numer() as i64, *f.denom() as i64))
    }

    fn __repr__(&self) -> String {
        format!(
            "Profile(failure_rate={}, recovery_rate={:?}, disruption_rate={:?})",
            self.0.failure_rate, self.0.recovery_rate, self.0.disruption_rate
        )
    }
}

#[pyfunction]
fn threshold(recovery_rate: f64, disruption_rate: f64) -> PyResult<f64> {
    framework::threshold(recovery_rate, disruption_rate).map_err(py_err)
}

#[pyfunction]
fn delta_success(failure_rate: f64, recovery_rate: f64, disruption_rate: f64) -> f64 {
    framework::delta_success(failure_rate, recovery_rate, disruption_rate)
}

/// Decision tree verdict with its trace, as a dict.
#[pyfunction]
#[pyo3(signature = (profile, margin=DEFAULT_MARGIN))]
fn decide<'py>(py: Python<'py>, profile: &PyProfile, margin: f64) -> PyResult<Bound<'py, PyAny>> {
    let decision = framework::decide(&profile.0, margin).map_err(py_err)?;
    let out = to_py(py, &decision)?;
    let labels: Vec<&str> = decision.trace_labels();
    out.cast::<PyDict>()?.set_item("trace_labels", labels)?;
    Ok(out)
}

#[pyfunction]
fn fit_temperature(scores: Vec<f64>, failed: Vec<bool>) -> PyResult<f64> {
    calibration::fit_temperature(&samples(scores, failed)?)
        .map(|m| m.temperature)
        .map_err(py_err)
}

#[pyfunction]
fn apply_temperature(temperature: f64, score: f64) -> f64 {
    calibration::apply_temperature(temperature, score)
}

#[pyfunction]
#[pyo3(signature = (scores, failed, n_bins=10))]
fn ece(scores: Vec<f64>, failed: Vec<bool>, n_bins: usize) -> PyResult<f64> {
    calibration::ece(&samples(scores, failed)?, n_bins).map_err(py_err)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, failed: Vec<bool>) -> PyResult<f64> {
    calibration::auroc(&samples(scores, failed)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (baseline, intervention, n_iter=10_000, seed=0))]
fn paired_bootstrap<'py>(
    py: Python<'py>,
    baseline: Vec<bool>,
    intervention: Vec<bool>,
    n_iter: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let pairs = stats::PairedOutcomes::from_outcomes(baseline, intervention).map_err(py_err)?;
    let result = py
        .detach(|| stats::paired_bootstrap(&pairs, n_iter, seed))
        .map_err(py_err)?;
    to_py(py, &result)
}

#[pyfunction]
#[pyo3(signature = (p_values, alpha=0.05))]
fn holm_bonferroni(p_values: Vec<f64>, alpha: f64) -> PyResult<Vec<bool>> {
    stats::holm_bonferroni(&p_values, alpha).map_err(py_err)
}

/// Smallest detectable gain in success rate, or `None` when no gain reaches the power.
#[pyfunction]
#[pyo3(signature = (n_tasks, n_seeds, baseline_rate, alpha=0.05, power=0.8, seed=0))]
fn power_mde(
    py: Python<'_>,
    n_tasks: usize,
    n_seeds: usize,
    baseline_rate: f64,
    alpha: f64,
    power: f64,
    seed: u64,
) -> PyResult<Option<f64>> {
    py.detach(|| stats::power_mde(n_tasks, n_seeds, baseline_rate, alpha, power, seed))
        .map(|m| m.effect())
        .map_err(py_err)
}

#[pyfunction]
fn oracle_bo2(seed_a: Vec<bool>, seed_b: Vec<bool>) -> PyResult<f64> {
    oracle::oracle_bo2(&seed_a, &seed_b).map_err(py_err)
}

/// Paired episode records, simulated or read from a JSONL log.
#[pyclass(name = "EpisodeLog", frozen)]
struct PyEpisodeLog(Vec<EpisodeRecord>);

#[pymethods]
impl PyEpisodeLog {
    /// Simulate `n_tasks x n_seeds` paired runs of a TOML config.
    #[staticmethod]
    #[pyo3(signature = (config_toml, n_tasks, n_seeds=1, seed=0))]
    fn simulate(py: Python<'_>, config_toml: &str, n_tasks: usize, n_seeds: usize, seed: u64) -> PyResult<Self> {
        let config = io::parse_config(config_toml).map_err(py_err)?;
        let exp = py
            .detach(|| simulator::run_experiment(&config, n_tasks, n_seeds, seed))
            .map_err(py_err)?;
        Ok(Self(exp.episodes))
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        io::read_log(text.as_bytes()).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        io::read_log_file(path).map(Self).map_err(py_err)
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut bytes = Vec::new();
        io::write_log(&mut bytes, &self.0).map_err(py_err)?;
        Ok(String::from_utf8(bytes).expect("log lines are UTF-8"))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn outcome_table(&self) -> PyResult<PyOutcomeTable> {
        let pairs = match_pairs(&self.0).map_err(py_err)?;
        Ok(PyOutcomeTable(outcome_table(&pairs)))
    }

    /// Pilot decision report over the first `n_pilot` tasks, as a dict.
    #[pyo3(signature = (n_pilot, margin=DEFAULT_MARGIN, seed=0, bootstrap_iters=2000))]
    fn pilot<'py>(
        &self,
        py: Python<'py>,
        n_pilot: usize,
        margin: f64,
        seed: u64,
        bootstrap_iters: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut options = PilotOptions::new(n_pilot, seed);
        options.margin = margin;
        options.bootstrap_iters = bootstrap_iters;
        let source = PilotSource::Episodes(self.0.clone());
        let report = py.detach(|| run_pilot_with(&source, &options)).map_err(py_err)?;
        to_py(py, &report)
    }

    fn oracle_ceiling<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &oracle::oracle_intervention_ceiling(&self.0).map_err(py_err)?)
    }

    /// Best-of-two over the first two seeds of the baseline condition.
    fn bo2<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(
            py,
            &oracle::bo2_from_episodes(&self.0, Condition::Baseline).map_err(py_err)?,
        )
    }
}

#[pymodule]
fn intervene(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DegenerateError", m.py().get_type::<DegenerateError>())?;
    m.add_class::<PyOutcomeTable>()?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PyEpisodeLog>()?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(delta_success, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(fit_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(apply_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(paired_bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(holm_bonferroni, m)?)?;
    m.add_function(wrap_pyfunction!(power_mde, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_bo2, m)?)?;
    Ok(())
}
