// SPDX-License-Identifier: Apache-2.0

//! Python bindings for the reflect-fuzz core.

use std::path::PathBuf;
use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use reflect_fuzz::agents::HeuristicBackend;
use reflect_fuzz::campaign::{discover_corpus, emit_report, run_campaign, CampaignConfig, ReportFormat};
use reflect_fuzz::crp::{run_crp, CrpConfig, CrpOutcome, CrpStatus};
use reflect_fuzz::oracles::run_all;
use reflect_fuzz::txmodel::{decode_sequence, encode_sequence, validate_sequence, ProgramContext, SeedPool, TransactionSequence};
use reflect_fuzz::vm::{execute_sequence, load_model, ContractModel as CoreModel};

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A loaded contract model plus the context the agents see.
#[pyclass(name = "ContractModel", frozen)]
struct PyModel {
    model: CoreModel,
    ctx: ProgramContext,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        let model = load_model(document).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let ctx = ProgramContext::new(document, model.interface(), SeedPool::default());
        Ok(PyModel { model, ctx })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.model.name
    }

    /// Signatures of the externally callable functions.
    fn functions(&self) -> Vec<String> {
        self.ctx.interface.iter().map(|f| f.signature()).collect()
    }

    fn __repr__(&self) -> String {
        format!("ContractModel({:?}, {} functions)", self.model.name, self.ctx.interface.len())
    }
}

#[pyclass(name = "TransactionSequence", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySequence {
    seq: TransactionSequence,
}

#[pymethods]
impl PySequence {
    #[staticmethod]
    fn from_json(record: &str) -> PyResult<Self> {
        decode_sequence(record).map(|seq| PySequence { seq }).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> String {
        encode_sequence(&self.seq)
    }

    fn calls(&self) -> Vec<String> {
        self.seq.txs.iter().map(|t| t.call_signature()).collect()
    }

    #[getter]
    fn origin(&self) -> &'static str {
        self.seq.origin.name()
    }

    fn __len__(&self) -> usize {
        self.seq.len()
    }

    fn __repr__(&self) -> String {
        format!("TransactionSequence({})", self.calls().join("; "))
    }
}

/// Result of one fuzzing loop on one contract.
#[pyclass(name = "CrpOutcome", frozen)]
struct PyOutcome {
    outcome: CrpOutcome,
}

#[pymethods]
impl PyOutcome {
    #[getter]
    fn status(&self) -> &'static str {
        self.outcome.status.name()
    }

    #[getter]
    fn vuln_class(&self) -> Option<String> {
        match &self.outcome.status {
            CrpStatus::VulnerabilityFound { class, .. } => Some(class.to_string()),
            _ => None,
        }
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        match &self.outcome.status {
            CrpStatus::VulnerabilityFound { classes, .. } => classes.iter().map(|c| c.to_string()).collect(),
            _ => vec![],
        }
    }

    #[getter]
    fn witness(&self) -> Option<PySequence> {
        match &self.outcome.status {
            CrpStatus::VulnerabilityFound { witness, .. } => Some(PySequence { seq: witness.clone() }),
            _ => None,
        }
    }

    #[getter]
    fn rounds_used(&self) -> usize {
        self.outcome.rounds_used()
    }

    #[getter]
    fn fallbacks(&self) -> usize {
        self.outcome.fallbacks
    }

    #[getter]
    fn wall_time_secs(&self) -> f64 {
        self.outcome.wall_time.as_secs_f64()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.outcome)
    }

    fn __repr__(&self) -> String {
        let class = self.vuln_class().unwrap_or_else(|| "None".into());
        format!("CrpOutcome(status={:?}, class={class}, rounds={})", self.status(), self.rounds_used())
    }
}

/// Replays `seq` from genesis; returns `{"trace": ..., "oracles": ...}`.
#[pyfunction]
fn execute<'py>(py: Python<'py>, model: &PyModel, seq: &PySequence) -> PyResult<Bound<'py, PyAny>> {
    let trace = execute_sequence(&model.model, &model.ctx.seed_pool, &seq.seq);
    let report = run_all(&model.model, &trace, &model.ctx.seed_pool, &[]);
    to_py(py, &serde_json::json!({ "trace": trace, "oracles": report }))
}

/// Vulnerability classes the oracles report for `seq`, in priority order.
#[pyfunction]
fn detect(model: &PyModel, seq: &PySequence) -> Vec<String> {
    let trace = execute_sequence(&model.model, &model.ctx.seed_pool, &seq.seq);
    run_all(&model.model, &trace, &model.ctx.seed_pool, &[]).found().into_iter().map(|c| c.to_string()).collect()
}

/// Static faults of `seq` against the model's interface and seed pool.
#[pyfunction]
fn validate<'py>(py: Python<'py>, model: &PyModel, seq: &PySequence) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &validate_sequence(&seq.seq, &model.ctx))
}

fn crp_config(max_rounds: usize, max_seq_len: usize, budget_secs: f64, seed: u64) -> PyResult<CrpConfig> {
    if max_seq_len == 0 || budget_secs.is_nan() || budget_secs <= 0.0 {
        return Err(PyValueError::new_err("max_seq_len and budget_secs must be positive"));
    }
    Ok(CrpConfig {
        max_reflection_rounds: max_rounds,
        max_sequence_len: max_seq_len,
        per_contract_budget: Duration::from_secs_f64(budget_secs),
        rng_seed: seed,
        ..CrpConfig::default()
    })
}

/// Runs the reflection loop on one contract with the offline backend.
#[pyfunction]
#[pyo3(signature = (model, max_rounds=10, max_seq_len=10, budget_secs=600.0, seed=0))]
fn fuzz(py: Python<'_>, model: &PyModel, max_rounds: usize, max_seq_len: usize, budget_secs: f64, seed: u64) -> PyResult<PyOutcome> {
    let cfg = crp_config(max_rounds, max_seq_len, budget_secs, seed)?;
    let outcome = py.detach(|| run_crp(&model.model, &model.ctx, &mut HeuristicBackend::new(), &cfg));
    Ok(PyOutcome { outcome })
}

/// Fuzzes every contract under `corpus` and returns the report as a dict.
/// Writes the report files when `out` is given.
#[pyfunction]
#[pyo3(signature = (corpus, max_rounds=10, max_seq_len=10, budget_secs=600.0, seed=0, jobs=1, out=None))]
#[allow(clippy::too_many_arguments)]
fn campaign<'py>(
    py: Python<'py>,
    corpus: PathBuf,
    max_rounds: usize,
    max_seq_len: usize,
    budget_secs: f64,
    seed: u64,
    jobs: usize,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let files = discover_corpus(&corpus).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut cfg = CampaignConfig::new(files);
    cfg.crp = crp_config(max_rounds, max_seq_len, budget_secs, seed)?;
    cfg.jobs = jobs.max(1);
    let report = py.detach(|| run_campaign(&cfg)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    if let Some(dir) = &out {
        for format in [ReportFormat::Document, ReportFormat::Table] {
            emit_report(&report, format, dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        }
    }
    to_py(py, &report)
}

#[pymodule]
fn reflect_fuzz_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyOutcome>()?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(fuzz, m)?)?;
    m.add_function(wrap_pyfunction!(campaign, m)?)?;
    Ok(())
}
