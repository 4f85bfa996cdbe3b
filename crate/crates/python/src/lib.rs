//! Python bindings: corpora, first-stage search, alignment, reranking and
//! evaluation, plus the full command line via [`run_cli`].

use std::collections::BTreeMap;
use std::path::PathBuf;

use biclir::corpus::{self, Corpus, RelevanceJudgments, Side};
use biclir::embeddings::{self, AlignmentMap, InductionMethod, RefinementOptions};
use biclir::evaluation::{self, EvalConfig};
use biclir::rankers::TextResources;
use biclir::retrieval::{self, InvertedIndex, SearchMode};
use biclir::run::{self, RankedList, RankedRun};
use biclir::training::{self, Checkpoint, FeatureChannel, RerankInputs};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(biclir_py, BiclirError, PyException);

fn err(e: biclir::Error) -> PyErr {
    BiclirError::new_err(format!("{e} (exit code {})", e.exit_code()))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| PyValueError::new_err(format!("bad {what} {s:?}: {e}")))
}

/// A document collection or query set loaded from JSON lines.
#[pyclass(name = "Corpus", frozen)]
pub struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus { inner: corpus::load_documents(path).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.iter().map(|r| r.id.clone()).collect()
    }

    /// Tokens of one record; `side` is "original" or "translated".
    fn tokens(&self, id: &str, side: &str) -> PyResult<Vec<String>> {
        let side: Side = parse(side, "side")?;
        let rec = self.inner.get(id).ok_or_else(|| PyValueError::new_err(format!("unknown id {id:?}")))?;
        Ok(rec.side(side).iter().map(|t| t.as_str().to_string()).collect())
    }
}

/// Graded relevance judgments in TREC qrels format.
#[pyclass(name = "Qrels", frozen)]
pub struct PyQrels {
    inner: RelevanceJudgments,
}

#[pymethods]
impl PyQrels {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyQrels { inner: corpus::load_qrels(path).map_err(err)? })
    }

    fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.inner.grade(query_id, doc_id)
    }
}

/// Ranked candidate lists per query.
#[pyclass(name = "Run", frozen)]
pub struct PyRun {
    inner: RankedRun,
}

#[pymethods]
impl PyRun {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRun { inner: run::load_run(path).map_err(err)? })
    }

    /// Builds a run from `{query_id: [(doc_id, score), ...]}`.
    #[staticmethod]
    fn from_dict(lists: BTreeMap<String, Vec<(String, f64)>>) -> PyResult<Self> {
        let mut out = RankedRun::new();
        for (qid, entries) in lists {
            out.insert(RankedList::new(qid, entries).map_err(err)?);
        }
        Ok(PyRun { inner: out })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn query_ids(&self) -> Vec<String> {
        self.inner.query_ids().map(str::to_string).collect()
    }

    fn entries(&self, query_id: &str) -> Vec<(String, f64)> {
        self.inner.get(query_id).map(|l| l.entries().to_vec()).unwrap_or_default()
    }

    #[pyo3(signature = (tag = "biclir"))]
    fn to_trec(&self, tag: &str) -> String {
        self.inner.to_trec(tag)
    }
}

/// Inverted index over one side of a collection.
#[pyclass(name = "Index", frozen)]
pub struct PyIndex {
    inner: InvertedIndex,
}

#[pymethods]
impl PyIndex {
    #[staticmethod]
    #[pyo3(signature = (docs, side = "translated"))]
    fn build(docs: &PyCorpus, side: &str) -> PyResult<Self> {
        let side: Side = parse(side, "side")?;
        Ok(PyIndex { inner: retrieval::build_index(&docs.inner, side).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyIndex { inner: retrieval::load_index(path).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.n_docs()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Query-likelihood retrieval; `mode` is "ql", "dbqt" (needs `lexicon`)
    /// or "psq" (needs `table`).
    #[pyo3(signature = (queries, mode = "ql", k = 100, mu = 1000.0, lexicon = None, table = None))]
    fn search(
        &self,
        queries: &PyCorpus,
        mode: &str,
        k: usize,
        mu: f64,
        lexicon: Option<PathBuf>,
        table: Option<PathBuf>,
    ) -> PyResult<PyRun> {
        let need = |p: Option<PathBuf>, what: &str| p.ok_or_else(|| PyValueError::new_err(format!("{mode} needs {what}")));
        let mode = match mode {
            "ql" => SearchMode::Ql,
            "dbqt" => SearchMode::Dbqt(embeddings::load_lexicon(need(lexicon, "lexicon")?).map_err(err)?.as_dictionary()),
            "psq" => SearchMode::Psq(retrieval::load_translation_table(need(table, "table")?).map_err(err)?),
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        };
        let out = retrieval::search(&self.inner, &queries.inner, &mode, k, mu).map_err(err)?;
        Ok(PyRun { inner: out })
    }
}

/// Orthogonal map from the target embedding space into the source space.
#[pyclass(name = "Alignment", frozen)]
pub struct PyAlignment {
    inner: AlignmentMap,
    #[pyo3(get)]
    accuracy: Vec<f64>,
    #[pyo3(get)]
    selected_round: usize,
}

#[pymethods]
impl PyAlignment {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyAlignment { inner: embeddings::load_alignment(path).map_err(err)?, accuracy: Vec::new(), selected_round: 0 })
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        let w = &self.inner.w;
        (0..w.rows()).map(|i| w.row(i).to_vec()).collect()
    }

    fn orthogonality_error(&self) -> f64 {
        self.inner.orthogonality_error()
    }

    fn apply(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        if v.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!("vector has dim {}, map has {}", v.len(), self.inner.dim())));
        }
        Ok(self.inner.apply(&v))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

/// Iterative Procrustes alignment from word2vec text files and a seed lexicon.
#[pyfunction]
#[pyo3(signature = (source, target, lexicon, test_lexicon = None, iters = 5, method = "nn", csls_k = 10))]
fn align(
    source: PathBuf,
    target: PathBuf,
    lexicon: PathBuf,
    test_lexicon: Option<PathBuf>,
    iters: usize,
    method: &str,
    csls_k: usize,
) -> PyResult<PyAlignment> {
    let src = embeddings::load_embeddings(source).map_err(err)?;
    let tgt = embeddings::load_embeddings(target).map_err(err)?;
    let seed = embeddings::load_lexicon(lexicon).map_err(err)?;
    let test = test_lexicon.map(embeddings::load_lexicon).transpose().map_err(err)?;
    let opts = RefinementOptions { iters, method: parse::<InductionMethod>(method, "method")?, k_csls: csls_k };
    let (map, report) = embeddings::iterative_procrustes(&src, &tgt, &seed, test.as_ref(), &opts).map_err(err)?;
    Ok(PyAlignment { inner: map, accuracy: report.accuracy, selected_round: report.selected_round })
}

/// Embeddings plus documents needed to rerank.
#[pyclass(name = "Resources", frozen)]
pub struct PyResources {
    docs: Corpus,
    queries: Corpus,
    inner: TextResources,
}

#[pymethods]
impl PyResources {
    #[new]
    #[pyo3(signature = (docs, queries, source, target, alignment = None))]
    fn new(docs: PathBuf, queries: PathBuf, source: PathBuf, target: PathBuf, alignment: Option<&PyAlignment>) -> PyResult<Self> {
        let docs = corpus::load_documents(docs).map_err(err)?;
        let queries = corpus::load_queries(queries).map_err(err)?;
        let src = embeddings::load_embeddings(source).map_err(err)?;
        let tgt = embeddings::load_embeddings(target).map_err(err)?;
        let map = alignment.map(|a| a.inner.clone()).unwrap_or_else(|| AlignmentMap::identity(tgt.dim()));
        let aligned = embeddings::apply_alignment(&map, &tgt).map_err(err)?;
        let inner = TextResources::new(&docs, src, aligned).map_err(err)?;
        Ok(PyResources { docs, queries, inner })
    }
}

impl PyResources {
    fn inputs(&self, channel: FeatureChannel) -> RerankInputs<'_> {
        RerankInputs { docs: &self.docs, queries: &self.queries, resources: &self.inner, channel }
    }
}

/// A trained reranker.
#[pyclass(name = "Checkpoint", frozen)]
pub struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCheckpoint { inner: training::load_checkpoint(path).map_err(err)? })
    }

    #[getter]
    fn arch(&self) -> String {
        self.inner.arch.to_string()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.meta.epoch
    }

    #[getter]
    fn dev_map(&self) -> f64 {
        self.inner.meta.dev_map
    }

    fn rerank(&self, run: &PyRun, resources: &PyResources) -> PyResult<PyRun> {
        let inputs = resources.inputs(self.inner.feature_stats.channel);
        Ok(PyRun { inner: training::rerank(&self.inner, &run.inner, &inputs).map_err(err)? })
    }
}

/// Averages the reranked scores of several checkpoints.
#[pyfunction]
fn ensemble(checkpoints: Vec<PyRef<'_, PyCheckpoint>>, run: &PyRun, resources: &PyResources) -> PyResult<PyRun> {
    let cks: Vec<Checkpoint> = checkpoints.iter().map(|c| c.inner.clone()).collect();
    let first = cks.first().ok_or_else(|| PyValueError::new_err("no checkpoints"))?;
    let inputs = resources.inputs(first.feature_stats.channel);
    Ok(PyRun { inner: training::ensemble(&cks, &run.inner, &inputs).map_err(err)? })
}

/// MAP, P@k, NDCG@k and AQWV; returns the summary as a dict.
#[pyfunction]
#[pyo3(signature = (run, qrels, n_docs, k = 20, beta = 40.0, threshold = None))]
fn evaluate(
    py: Python<'_>,
    run: &PyRun,
    qrels: &PyQrels,
    n_docs: usize,
    k: usize,
    beta: f64,
    threshold: Option<f64>,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let cfg = EvalConfig { cutoff_k: k, beta, aqwv_threshold: threshold };
    let qrels = qrels.inner.subset(run.inner.query_ids());
    let rep = evaluation::evaluate(&run.inner, &qrels, n_docs, &cfg).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("map", rep.map)?;
    d.set_item("p_at_k", rep.p_at_k)?;
    d.set_item("ndcg_at_k", rep.ndcg_at_k)?;
    d.set_item("aqwv", rep.aqwv)?;
    d.set_item("threshold", rep.threshold)?;
    d.set_item("n_queries", rep.per_query.len())?;
    Ok(d.unbind())
}

/// Runs the command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    biclir::cli::run(std::iter::once("biclir".to_string()).chain(args))
}

#[pymodule]
fn biclir_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BiclirError", m.py().get_type::<BiclirError>())?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyQrels>()?;
    m.add_class::<PyRun>()?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyAlignment>()?;
    m.add_class::<PyResources>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
