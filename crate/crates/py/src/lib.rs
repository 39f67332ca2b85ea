//! Python bindings for the s7ttl pipeline.
//!
//! Plain data (records, probe outcomes, comparison outcomes) crosses the
//! boundary as dicts shaped like the NDJSON artifact rows.

use std::fs::File;
use std::net::Ipv4Addr;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use s7ttl::analysis::{self, CompareMode, ComparisonOutcome, LocalVerdict, VerdictKind};
use s7ttl::fingerprint::{self, Fingerprint, FingerprintKind, FingerprintSet};
use s7ttl::ingest::{self, DeviceRecord};
use s7ttl::netsim::{self, PopulationMix, PopulationParams, SimNetwork, TopologySpec};
use s7ttl::probe::{self, ProbeOptions, ProbeOutcome};
use s7ttl::report;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

#[pyclass(name = "Fingerprint", frozen, from_py_object)]
#[derive(Clone)]
struct PyFingerprint(Fingerprint);

#[pymethods]
impl PyFingerprint {
    #[getter]
    fn label(&self) -> &str {
        &self.0.label
    }

    /// `"device"` or `"os"`.
    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.file_token()
    }

    #[getter]
    fn ttl(&self) -> u8 {
        self.0.ttl
    }

    #[getter]
    fn range(&self) -> Option<&str> {
        self.0.range.as_deref()
    }

    fn __repr__(&self) -> String {
        format!("Fingerprint({:?}, kind={:?}, ttl={})", self.0.display_name(), self.kind(), self.0.ttl)
    }
}

#[pyclass(name = "FingerprintSet", frozen, from_py_object)]
#[derive(Clone)]
struct PyFingerprintSet(FingerprintSet);

#[pymethods]
impl PyFingerprintSet {
    #[staticmethod]
    fn builtin() -> Self {
        PyFingerprintSet(fingerprint::builtin_set())
    }

    /// Parses the `kind,label,ttl[,range]` file format.
    #[staticmethod]
    #[pyo3(signature = (text, provenance = "inline"))]
    fn from_text(text: &str, provenance: &str) -> PyResult<Self> {
        fingerprint::load_fingerprints(text.as_bytes(), provenance).map(PyFingerprintSet).map_err(value_error)
    }

    fn entries(&self) -> Vec<PyFingerprint> {
        self.0.entries().iter().cloned().map(PyFingerprint).collect()
    }

    fn to_text(&self) -> String {
        self.0.to_file_format()
    }

    #[getter]
    fn provenance(&self) -> &str {
        self.0.provenance()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn set_or_builtin(set: Option<&PyFingerprintSet>) -> FingerprintSet {
    set.map_or_else(fingerprint::builtin_set, |s| s.0.clone())
}

#[pyclass(name = "Verdict", frozen)]
struct PyVerdict(LocalVerdict);

#[pymethods]
impl PyVerdict {
    /// `"device"`, `"honeypot"` or `"inconclusive"`.
    #[getter]
    fn kind(&self) -> &'static str {
        match self.0.kind {
            VerdictKind::Device => "device",
            VerdictKind::Honeypot => "honeypot",
            VerdictKind::Inconclusive => "inconclusive",
        }
    }

    #[getter]
    fn reconstructed(&self) -> u16 {
        self.0.reconstructed.value
    }

    #[getter]
    fn distance(&self) -> u16 {
        self.0.matched.distance
    }

    #[getter]
    fn matched(&self) -> Vec<PyFingerprint> {
        self.0.matched.best.iter().cloned().map(PyFingerprint).collect()
    }

    #[getter]
    fn anomalous(&self) -> bool {
        self.0.reconstructed.is_anomalous()
    }

    fn __repr__(&self) -> String {
        format!("Verdict({:?}, reconstructed={}, distance={})", self.kind(), self.reconstructed(), self.distance())
    }
}

/// `ping_ttl + hop_count - 1`.
#[pyfunction]
fn reconstruct_ttl(ping_ttl: u8, hop_count: u8) -> PyResult<u16> {
    if hop_count == 0 {
        return Err(value_error("hop_count must be at least 1"));
    }
    Ok(analysis::reconstruct_from(ping_ttl, hop_count).value)
}

#[pyfunction]
#[pyo3(signature = (ping_ttl, hop_count, fingerprints = None))]
fn classify(ping_ttl: u8, hop_count: u8, fingerprints: Option<&PyFingerprintSet>) -> PyResult<PyVerdict> {
    reconstruct_ttl(ping_ttl, hop_count)?;
    let set = set_or_builtin(fingerprints);
    Ok(PyVerdict(analysis::classify(analysis::reconstruct_from(ping_ttl, hop_count), &set)))
}

/// Closest fingerprints to `value` and their distance.
#[pyfunction]
#[pyo3(signature = (value, fingerprints = None))]
fn nearest_match(value: u16, fingerprints: Option<&PyFingerprintSet>) -> (Vec<PyFingerprint>, u16) {
    let m = fingerprint::nearest_match(value, &set_or_builtin(fingerprints));
    (m.best.into_iter().map(PyFingerprint).collect(), m.distance)
}

#[pyfunction]
fn parse_export<'py>(py: Python<'py>, path: &str, query: &str) -> PyResult<Bound<'py, PyAny>> {
    let file = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    let rep = ingest::parse_export(file, query).map_err(value_error)?;
    let out = serde_json::json!({
        "records": rep.records,
        "lines": rep.lines,
        "skipped_malformed": rep.skipped_malformed,
        "skipped_ipv6": rep.skipped_ipv6,
        "truncated": rep.truncated,
    });
    to_py(py, &out)
}

/// Returns `(records, stats)`.
#[pyfunction]
fn deduplicate<'py>(py: Python<'py>, records: &Bound<'py, PyAny>) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let records: Vec<DeviceRecord> = from_py(records)?;
    let (kept, stats) = ingest::deduplicate(records);
    Ok((to_py(py, &kept)?, to_py(py, &stats)?))
}

#[pyfunction]
#[pyo3(signature = (address, salt = None))]
fn hash_address(address: &str, salt: Option<&str>) -> String {
    report::hash_address(address, salt)
}

/// Replaces addresses in comparison outcomes by their hashes.
#[pyfunction]
#[pyo3(signature = (outcomes, salt = None))]
fn anonymize<'py>(py: Python<'py>, outcomes: &Bound<'py, PyAny>, salt: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let outcomes: Vec<ComparisonOutcome> = from_py(outcomes)?;
    to_py(py, &report::anonymize(&outcomes, salt))
}

#[pyfunction]
#[pyo3(signature = (records, probes, strict = false, fingerprints = None))]
fn analyze<'py>(
    py: Python<'py>,
    records: &Bound<'py, PyAny>,
    probes: &Bound<'py, PyAny>,
    strict: bool,
    fingerprints: Option<&PyFingerprintSet>,
) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<DeviceRecord> = from_py(records)?;
    let probes: Vec<ProbeOutcome> = from_py(probes)?;
    let mode = if strict { CompareMode::Strict } else { CompareMode::Standard };
    let out = analysis::analyze(&records, &probes, &set_or_builtin(fingerprints), mode).map_err(value_error)?;
    to_py(py, &out)
}

/// `{origin_query: {category: count}}`.
#[pyfunction]
fn category_summary<'py>(py: Python<'py>, outcomes: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let outcomes: Vec<ComparisonOutcome> = from_py(outcomes)?;
    let summary = report::emit_category_summary(&outcomes);
    let rows: serde_json::Map<String, serde_json::Value> = summary
        .rows
        .iter()
        .map(|(q, counts)| {
            let cols: serde_json::Map<String, serde_json::Value> = analysis::Category::ALL
                .iter()
                .zip(counts)
                .map(|(c, n)| (c.snake_name().to_string(), (*n).into()))
                .collect();
            (q.clone(), cols.into())
        })
        .collect();
    to_py(py, &rows)
}

/// Simulated network with known ground truth.
#[pyclass(name = "SimNetwork", frozen)]
struct PySimNetwork {
    spec: TopologySpec,
    net: SimNetwork,
}

#[pymethods]
impl PySimNetwork {
    #[new]
    #[pyo3(signature = (hosts, seed = 0))]
    fn new(hosts: &Bound<'_, PyAny>, seed: u64) -> PyResult<Self> {
        let spec = TopologySpec { hosts: from_py(hosts)?, seed };
        let net = netsim::build_topology(&spec).map_err(value_error)?;
        Ok(PySimNetwork { spec, net })
    }

    /// Seeded population. `mix` maps `device`, `os`, labels or range names
    /// to shares summing to 1.
    #[staticmethod]
    #[pyo3(signature = (count, mix, depth = (1, 30), asymmetry = (0, 0), seed = 0, fingerprints = None))]
    fn generate(
        count: usize,
        mix: Vec<(String, f64)>,
        depth: (u8, u8),
        asymmetry: (i16, i16),
        seed: u64,
        fingerprints: Option<&PyFingerprintSet>,
    ) -> PyResult<Self> {
        let set = set_or_builtin(fingerprints);
        let shares: Vec<(&str, f64)> = mix.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let params = PopulationParams {
            count,
            mix: PopulationMix::from_shares(&set, &shares).map_err(value_error)?,
            depth: depth.0..=depth.1,
            asymmetry: asymmetry.0..=asymmetry.1,
            seed,
        };
        let spec = netsim::generate_population(&params).map_err(value_error)?;
        let net = netsim::build_topology(&spec).map_err(value_error)?;
        Ok(PySimNetwork { spec, net })
    }

    fn hosts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.spec.hosts)
    }

    fn addresses(&self) -> Vec<String> {
        self.spec.hosts.iter().map(|h| h.address.to_string()).collect()
    }

    /// Probes the given addresses, or every host when omitted.
    #[pyo3(signature = (addresses = None, max_hops = 64))]
    fn probe<'py>(&self, py: Python<'py>, addresses: Option<Vec<String>>, max_hops: u8) -> PyResult<Bound<'py, PyAny>> {
        let targets: Vec<Ipv4Addr> = match addresses {
            Some(list) => list.iter().map(|a| a.parse().map_err(value_error)).collect::<PyResult<_>>()?,
            None => self.spec.hosts.iter().map(|h| h.address).collect(),
        };
        let opts = ProbeOptions { max_hops, ..ProbeOptions::default() };
        opts.validate().map_err(value_error)?;
        let outcomes = probe::probe_batch(&targets, &self.net, &opts).map_err(value_error)?;
        to_py(py, &outcomes)
    }

    fn __len__(&self) -> usize {
        self.spec.hosts.len()
    }
}

/// Runs the command-line tool in-process; returns `(exit_code, stdout, stderr)`.
#[pyfunction]
fn run_cli(args: Vec<String>) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("s7ttl".to_string()).chain(args);
    let code = s7ttl::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

#[pymodule]
#[pyo3(name = "s7ttl")]
fn s7ttl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("DEVICE", FingerprintKind::Device.file_token())?;
    m.add("OPERATING_SYSTEM", FingerprintKind::OperatingSystem.file_token())?;
    m.add_class::<PyFingerprint>()?;
    m.add_class::<PyFingerprintSet>()?;
    m.add_class::<PyVerdict>()?;
    m.add_class::<PySimNetwork>()?;
    m.add_function(wrap_pyfunction!(reconstruct_ttl, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_match, m)?)?;
    m.add_function(wrap_pyfunction!(parse_export, m)?)?;
    m.add_function(wrap_pyfunction!(deduplicate, m)?)?;
    m.add_function(wrap_pyfunction!(hash_address, m)?)?;
    m.add_function(wrap_pyfunction!(anonymize, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(category_summary, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
