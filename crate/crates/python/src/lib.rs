//! Python bindings: trees, decoding, metrics, corpora and model training.

use std::path::PathBuf;

use arglink::corpus::{self, CorpusFormat, SamplingPolicy};
use arglink::embedding::{self, EmbeddingMatrix};
use arglink::eval::{self, RunSeries};
use arglink::experiment::{self, ExperimentConfig};
use arglink::model::{self, Checkpoint, ModelConfig, ModelParams, TrainConfig};
use arglink::{decoder, tree};
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: arglink::Error) -> PyErr {
    match e {
        arglink::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn py_to_json(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Head-vector tree: `heads[i] == i` marks a self-loop.
#[pyclass(name = "ArgTree", frozen, eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyArgTree(tree::ArgTree);

#[pymethods]
impl PyArgTree {
    #[new]
    fn new(heads: Vec<usize>) -> PyResult<Self> {
        tree::ArgTree::from_heads(heads).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_distances(distances: Vec<i64>) -> PyResult<Self> {
        tree::ArgTree::from_distances(&distances).map(Self).map_err(to_py)
    }

    #[getter]
    fn heads(&self) -> Vec<usize> {
        self.0.heads().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.n()
    }

    fn __repr__(&self) -> String {
        format!("ArgTree({:?})", self.0.heads())
    }

    fn distances(&self) -> Vec<i64> {
        self.0.heads_to_distances()
    }

    fn qact(&self) -> Vec<&'static str> {
        self.0.derive_qact().into_iter().map(|q| q.as_str()).collect()
    }

    fn depths(&self) -> Vec<usize> {
        self.0.depths()
    }

    fn depth_categories(&self) -> Vec<&'static str> {
        self.0.node_depths().into_iter().map(|d| d.as_str()).collect()
    }

    fn descendant_set(&self, node: usize) -> PyResult<Vec<usize>> {
        self.0
            .descendant_set(node)
            .map(|s| s.into_iter().collect())
            .map_err(to_py)
    }

    fn is_ac(&self, node: usize) -> PyResult<bool> {
        if node >= self.0.n() {
            return Err(PyValueError::new_err(format!("node {node} out of range")));
        }
        Ok(self.0.is_ac(node))
    }

    fn tree_depth(&self) -> usize {
        self.0.tree_depth()
    }

    fn leaf_ratio(&self) -> f64 {
        self.0.leaf_ratio()
    }
}

#[pyclass(name = "Essay", frozen, from_py_object)]
#[derive(Clone)]
struct PyEssay(corpus::Essay);

#[pymethods]
impl PyEssay {
    #[new]
    #[pyo3(signature = (essay_id, sentences, heads, corpus = "in"))]
    fn new(essay_id: String, sentences: Vec<String>, heads: Vec<usize>, corpus: &str) -> PyResult<Self> {
        let source = match corpus {
            "in" => corpus::SourceCorpus::InDomain,
            "out" => corpus::SourceCorpus::OutDomain,
            other => return Err(PyValueError::new_err(format!("corpus must be 'in' or 'out', got {other:?}"))),
        };
        let t = tree::ArgTree::from_heads(heads).map_err(to_py)?;
        corpus::Essay::new(essay_id, sentences, t, source)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn essay_id(&self) -> String {
        self.0.essay_id.clone()
    }

    #[getter]
    fn sentences(&self) -> Vec<String> {
        self.0.texts().map(str::to_owned).collect()
    }

    #[getter]
    fn gold(&self) -> PyArgTree {
        PyArgTree(self.0.gold.clone())
    }

    #[getter]
    fn corpus(&self) -> &'static str {
        match self.0.source_corpus {
            corpus::SourceCorpus::InDomain => "in",
            corpus::SourceCorpus::OutDomain => "out",
        }
    }

    fn non_ac_count(&self) -> usize {
        self.0.non_ac_count()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Essay({:?}, {} sentences)", self.0.essay_id, self.0.len())
    }
}

fn essays(items: &[PyEssay]) -> Vec<corpus::Essay> {
    items.iter().map(|e| e.0.clone()).collect()
}

fn trees(items: &[PyArgTree]) -> Vec<tree::ArgTree> {
    items.iter().map(|t| t.0.clone()).collect()
}

/// Maximum-score tree for an N x N score matrix (`scores[i][j]`: i links to j).
#[pyfunction]
fn decode(scores: Vec<Vec<f64>>) -> PyResult<PyArgTree> {
    decoder::decode(&matrix(scores)?).map(PyArgTree).map_err(to_py)
}

/// Exhaustive reference decoder for N <= 8.
#[pyfunction]
fn brute_force_decode(scores: Vec<Vec<f64>>) -> PyResult<PyArgTree> {
    decoder::brute_force_decode(&matrix(scores)?)
        .map(PyArgTree)
        .map_err(to_py)
}

#[pyfunction]
fn tree_score(scores: Vec<Vec<f64>>, tree: &PyArgTree) -> PyResult<f64> {
    let g = matrix(scores)?;
    if g.nrows() != tree.0.n() || g.ncols() != tree.0.n() {
        return Err(PyValueError::new_err("matrix and tree sizes differ"));
    }
    Ok(decoder::tree_score(&g, tree.0.heads()))
}

#[pyfunction]
fn mar_dset(pred: &PyArgTree, gold: &PyArgTree) -> PyResult<f64> {
    eval::mar_dset(&pred.0, &gold.0).map_err(to_py)
}

#[pyfunction]
fn mar_dset_vector(pred: &PyArgTree, gold: &PyArgTree) -> PyResult<Vec<u32>> {
    let v = eval::mar_dset_vector(&pred.0, &gold.0).map_err(to_py)?;
    Ok(v.into_iter().map(u32::from).collect())
}

/// Full evaluation report of aligned predicted and gold trees, as a dict.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pred: Vec<PyArgTree>, gold: Vec<PyArgTree>) -> PyResult<Bound<'py, PyAny>> {
    let report = eval::evaluate(&trees(&pred), &trees(&gold)).map_err(to_py)?;
    json_to_py(py, &serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

/// Paired sign-flip permutation test; returns `(p_value, significant)`.
#[pyfunction]
#[pyo3(signature = (a, b, alpha = 0.05, resamples = 10_000, seed = 0))]
fn permutation_test(a: Vec<f64>, b: Vec<f64>, alpha: f64, resamples: usize, seed: u64) -> PyResult<(f64, bool)> {
    let r = eval::permutation_test(&RunSeries::new("a", a), &RunSeries::new("b", b), alpha, resamples, seed)
        .map_err(to_py)?;
    Ok((r.p_value, r.significant))
}

#[pyfunction]
fn spos(n: usize) -> Vec<f64> {
    embedding::spos(n).0
}

#[pyfunction]
#[pyo3(signature = (essay, dim, seed = 0))]
fn pseudo_embed(essay: &PyEssay, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    rows(&embedding::pseudo_embed(&essay.0, dim, seed).rows)
}

/// Loads an essay corpus; `format="segment"` converts segment annotations.
#[pyfunction]
#[pyo3(signature = (path, format = "essay"))]
fn load_corpus(path: PathBuf, format: &str) -> PyResult<Vec<PyEssay>> {
    let format: CorpusFormat = format.parse().map_err(to_py)?;
    corpus::load_corpus(&path, format)
        .map(|v| v.into_iter().map(PyEssay).collect())
        .map_err(to_py)
}

#[pyfunction]
fn save_corpus(path: PathBuf, essays: Vec<PyEssay>) -> PyResult<()> {
    corpus::save_corpus(&path, &self::essays(&essays)).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (essays, max_sentences = 17, max_non_acs = 2))]
fn selective_sample(essays: Vec<PyEssay>, max_sentences: usize, max_non_acs: usize) -> Vec<PyEssay> {
    let policy = SamplingPolicy {
        max_sentences,
        max_non_acs,
    };
    corpus::selective_sample(&self::essays(&essays), &policy)
        .into_iter()
        .map(PyEssay)
        .collect()
}

/// A trained linker.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    config: ModelConfig,
    params: ModelParams,
}

impl PyModel {
    fn embedding(&self, essay: &corpus::Essay, embeddings: Option<Vec<Vec<f64>>>, seed: u64) -> PyResult<EmbeddingMatrix> {
        let m = match embeddings {
            Some(r) => EmbeddingMatrix::new(essay.essay_id.clone(), matrix(r)?).map_err(to_py)?,
            None => embedding::pseudo_embed(essay, self.config.input_dim, seed),
        };
        m.check_pairing(essay, self.config.input_dim).map_err(to_py)?;
        Ok(m)
    }
}

#[pymethods]
impl PyModel {
    /// Trains on `essays` with pseudo-embeddings. `config` and `train_config`
    /// are dicts of model and training options; omitted keys keep defaults.
    #[staticmethod]
    #[pyo3(signature = (essays, config = None, train_config = None, embedding_seed = 0))]
    fn train(
        essays: Vec<PyEssay>,
        config: Option<&Bound<'_, PyDict>>,
        train_config: Option<&Bound<'_, PyDict>>,
        embedding_seed: u64,
    ) -> PyResult<Self> {
        let parse_err = |e: serde_json::Error| PyValueError::new_err(e.to_string());
        let config: ModelConfig = match config {
            Some(d) => serde_json::from_str(&py_to_json(d.as_any())?).map_err(parse_err)?,
            None => ModelConfig::default(),
        };
        let tcfg: TrainConfig = match train_config {
            Some(d) => serde_json::from_str(&py_to_json(d.as_any())?).map_err(parse_err)?,
            None => TrainConfig::default(),
        };
        let es = self::essays(&essays);
        let embs: Vec<_> = es
            .iter()
            .map(|e| embedding::pseudo_embed(e, config.input_dim, embedding_seed))
            .collect();
        let out = model::train(&config, &tcfg, &es, &embs).map_err(to_py)?;
        Ok(PyModel {
            config,
            params: out.params,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(to_py)?;
        Ok(PyModel {
            config: ck.config,
            params: ck.params,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::new(self.config.clone(), self.params.clone())
            .save(&path)
            .map_err(to_py)
    }

    /// Decodes one essay, with explicit embeddings or pseudo-embeddings.
    #[pyo3(signature = (essay, embeddings = None, embedding_seed = 0))]
    fn predict(&self, essay: &PyEssay, embeddings: Option<Vec<Vec<f64>>>, embedding_seed: u64) -> PyResult<PyArgTree> {
        let m = self.embedding(&essay.0, embeddings, embedding_seed)?;
        model::predict(&self.params, &self.config, &m)
            .map(PyArgTree)
            .map_err(to_py)
    }

    /// Raw biaffine score matrix for one essay.
    #[pyo3(signature = (essay, embeddings = None, embedding_seed = 0))]
    fn scores(&self, essay: &PyEssay, embeddings: Option<Vec<Vec<f64>>>, embedding_seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let m = self.embedding(&essay.0, embeddings, embedding_seed)?;
        let out = model::forward(&self.params, &self.config, &m, model::Mode::Eval).map_err(to_py)?;
        Ok(rows(&out.scores))
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }
}

/// Runs an experiment from a JSON config file and returns its summary.
#[pyfunction]
#[pyo3(signature = (config_path, baseline_dir = None))]
fn run_experiment<'py>(py: Python<'py>, config_path: PathBuf, baseline_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::load(&config_path).map_err(to_py)?;
    let out = experiment::run_experiment(&cfg, baseline_dir.as_deref()).map_err(to_py)?;
    json_to_py(py, &serde_json::to_string(&out.summary).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

#[pymodule]
fn arglink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArgTree>()?;
    m.add_class::<PyEssay>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_decode, m)?)?;
    m.add_function(wrap_pyfunction!(tree_score, m)?)?;
    m.add_function(wrap_pyfunction!(mar_dset, m)?)?;
    m.add_function(wrap_pyfunction!(mar_dset_vector, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(spos, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_embed, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(save_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(selective_sample, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
