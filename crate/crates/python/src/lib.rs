//! Python module `emotopic_py`: training, generation and the evaluation metrics.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use emotopic::corpus::tokenize;
use emotopic::metrics::{score_corpus, EmbeddingTable, TableSource};
use emotopic::numcore::{softmax as softmax_tensor, Tensor};
use emotopic::pipeline::{self, Config};
use emotopic::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::State(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Converts any serializable value to Python objects via `json.loads`.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyfunction]
fn tokenize_text(text: &str) -> Vec<String> {
    tokenize(text)
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    let t = softmax_tensor(&Tensor::vector(logits), None).map_err(py_err)?;
    Ok(t.data().to_vec())
}

#[pyfunction]
fn distinct_n(replies: Vec<Vec<String>>, n: usize) -> Option<f64> {
    emotopic::metrics::distinct_n(&replies, n)
}

/// Scores candidates against references with a `{word: vector}` table.
#[pyfunction]
fn score<'py>(
    py: Python<'py>,
    candidates: Vec<Vec<String>>,
    references: Vec<Vec<String>>,
    embeddings: Vec<(String, Vec<f64>)>,
) -> PyResult<Bound<'py, PyAny>> {
    let dim = embeddings.first().map_or(1, |(_, v)| v.len());
    let mut table = EmbeddingTable::new(dim, TableSource::ExternalFile);
    for (w, v) in embeddings {
        table.insert(w, v).map_err(py_err)?;
    }
    let report = score_corpus(&candidates, &references, &table).map_err(py_err)?;
    to_py(py, &report)
}

/// Writes a synthetic corpus, dictionaries and a config into `out`;
/// returns the config path.
#[pyfunction]
#[pyo3(signature = (out, pairs = 200, vocab = 120, seed = 0))]
fn synth_corpus(out: PathBuf, pairs: usize, vocab: usize, seed: u64) -> PyResult<PathBuf> {
    use emotopic::corpus::io::{write_corpus, write_table};
    let c = emotopic::corpus::synth_corpus(seed, pairs, vocab).map_err(py_err)?;
    std::fs::create_dir_all(&out)?;
    write_corpus(File::create(out.join("corpus.tsv"))?, &c.pairs).map_err(py_err)?;
    write_table(File::create(out.join("emotion.tsv"))?, &c.emotion_source).map_err(py_err)?;
    write_table(File::create(out.join("topic.tsv"))?, &c.topic_source).map_err(py_err)?;
    let held_out = (pairs / 10).max(1);
    let cfg = Config {
        corpus: Some("corpus.tsv".into()),
        emotion_dictionary: Some("emotion.tsv".into()),
        topic_dictionary: Some("topic.tsv".into()),
        work_dir: "run".into(),
        seed,
        hidden: 32,
        learning_rate: 3e-3,
        val_size: held_out,
        test_size: held_out,
        ..Config::default()
    };
    let path = out.join("config.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &cfg)
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(path)
}

/// A trained checkpoint.
#[pyclass(name = "Model", module = "emotopic_py", frozen)]
struct PyModel {
    inner: pipeline::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: pipeline::load_model(&path).map_err(py_err)?,
        })
    }

    /// Runs prepare, topic-model training and model training for a config
    /// file, then loads the resulting checkpoint.
    #[staticmethod]
    fn train(py: Python<'_>, config: PathBuf) -> PyResult<Self> {
        let inner = py
            .detach(|| -> emotopic::Result<pipeline::Model> {
                let cfg = Config::load(&config)?;
                pipeline::prepare(&cfg)?;
                pipeline::run_train_lda(&cfg)?;
                pipeline::run_train(&cfg)?;
                pipeline::load_model(&cfg.checkpoint_path())
            })
            .map_err(py_err)?;
        Ok(PyModel { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        pipeline::save_model(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.config.hidden
    }

    /// Returns `(reply, trace)` for a whitespace-tokenized post.
    fn generate<'py>(&self, py: Python<'py>, post: &str) -> PyResult<(String, Bound<'py, PyAny>)> {
        let g = self.inner.generate(&tokenize(post)).map_err(py_err)?;
        Ok((g.reply.join(" "), to_py(py, &g.trace)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(vocab_size={}, hidden={}, topics={})",
            self.inner.vocab.len(),
            self.inner.config.hidden,
            self.inner.lda.topics()
        )
    }
}

#[pymodule]
fn emotopic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize_text, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(distinct_n, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
