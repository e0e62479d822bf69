//! Python bindings: location codes, graph validation, the synthetic corpus
//! and checkpoint-backed generation.

use std::path::PathBuf;

use graphcover_core::checkpoint::load_model;
use graphcover_core::data::synthetic::write_synthetic_corpus;
use graphcover_core::generate::{parse_request, CoverPipeline};
use graphcover_core::graph::{self, CategoryVocabulary};
use graphcover_core::title::TitleBackend;
use graphcover_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// 35 location bits of a grid cell (0..=24) and size level (1..=10).
#[pyfunction]
fn encode_location(grid_cell: i64, size: i64) -> PyResult<Vec<u8>> {
    Ok(graph::encode_location(grid_cell, size).map_err(py_err)?.to_vec())
}

/// `(grid_cell, size)` of a 35-bit location code.
#[pyfunction]
fn decode_location(bits: Vec<u8>) -> PyResult<(usize, usize)> {
    let v = graph::decode_location(&bits).map_err(py_err)?;
    Ok((v.grid_cell(), v.size_level()))
}

/// Violations of a graph document as `(path, message)` pairs; empty when
/// valid. Malformed documents raise `ValueError`.
#[pyfunction]
fn validate_graph(document: &str, categories: Vec<String>) -> PyResult<Vec<(String, String)>> {
    let g = graph::parse_graph(document).map_err(py_err)?;
    let vocab = CategoryVocabulary::new(categories).map_err(py_err)?;
    Ok(graph::validate_graph(&g, &vocab)
        .violations
        .into_iter()
        .map(|v| (v.path, v.message))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (root, scenes, covers, seed = 0))]
fn synthetic_corpus(root: PathBuf, scenes: usize, covers: usize, seed: u64) -> PyResult<()> {
    write_synthetic_corpus(&root, scenes, covers, seed).map_err(py_err)
}

/// A trained checkpoint loaded for inference.
#[pyclass(frozen)]
struct Generator {
    pipeline: CoverPipeline,
}

#[pymethods]
impl Generator {
    #[new]
    fn new(checkpoint: PathBuf) -> PyResult<Self> {
        let (model, _) = load_model(&checkpoint).map_err(py_err)?;
        Ok(Self {
            pipeline: CoverPipeline::new(model, TitleBackend::Fallback),
        })
    }

    fn categories(&self) -> Vec<String> {
        self.pipeline.model.vocab.entries().to_vec()
    }

    fn checksum(&self) -> PyResult<String> {
        self.pipeline.model.gen_params.checksum().map_err(py_err)
    }

    /// Takes a request document (the HTTP body of `/generate`) and returns
    /// the response document.
    fn generate(&self, py: Python<'_>, request: &str) -> PyResult<String> {
        py.allow_threads(|| {
            let req = parse_request(request.as_bytes())?;
            self.pipeline.validate(&req.graph)?;
            let resp = self.pipeline.handle(&req)?;
            Ok(serde_json::to_string(&resp)?)
        })
        .map_err(py_err)
    }
}

#[pymodule]
fn graphcover(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(encode_location, m)?)?;
    m.add_function(wrap_pyfunction!(decode_location, m)?)?;
    m.add_function(wrap_pyfunction!(validate_graph, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_class::<Generator>()?;
    Ok(())
}
