//! Python extension module exposing the engine's main types and operations:
//! TopK sparse autoencoding, late-interaction scoring, the neuron-level
//! inverted index with exact and coarse-to-fine retrieval, training, and the
//! distortion checks. Sparse codes cross the boundary as lists of
//! `(neuron_id, value)` pairs; dense vectors as lists of floats.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ssr_core::analysis;
use ssr_core::index;
use ssr_core::retrieval;
use ssr_core::sae;
use ssr_core::sparse;

fn to_py_err(err: ssr_core::Error) -> PyErr {
    use ssr_core::Error as E;
    match err {
        E::InvalidArgument(_) | E::InvalidConfig(_) => PyValueError::new_err(err.to_string()),
        E::Io(_) | E::CorruptFile { .. } => PyIOError::new_err(err.to_string()),
        E::TrainingDiverged { .. } | E::AppendOrderViolation { .. } => {
            PyRuntimeError::new_err(err.to_string())
        }
    }
}

type Code = Vec<(u32, f64)>;

fn code_to_sparse(dim: u32, code: Code) -> PyResult<sparse::SparseVector> {
    sparse::SparseVector::from_pairs(dim, code).map_err(to_py_err)
}

fn sparse_to_code(v: &sparse::SparseVector) -> Code {
    v.entries().collect()
}

fn bag_from_codes(dim: u32, tokens: Vec<Code>, global: Option<Code>) -> PyResult<sparse::TokenBag> {
    let vectors = tokens
        .into_iter()
        .map(|c| code_to_sparse(dim, c))
        .collect::<PyResult<Vec<_>>>()?;
    let global = global.map(|g| code_to_sparse(dim, g)).transpose()?;
    sparse::TokenBag::new(vectors, global).map_err(to_py_err)
}

fn dense_bag(tokens: Vec<Vec<f64>>) -> PyResult<sparse::DenseTokenBag> {
    let vectors = tokens
        .into_iter()
        .map(sparse::DenseVector::new)
        .collect::<ssr_core::Result<Vec<_>>>()
        .map_err(to_py_err)?;
    sparse::DenseTokenBag::new(vectors).map_err(to_py_err)
}

/// TopK sparse autoencoder.
#[pyclass(name = "SaeModel")]
struct PySaeModel {
    inner: sae::SaeModel,
}

#[pymethods]
impl PySaeModel {
    /// Tied random initialization: decoder columns on the unit sphere.
    #[staticmethod]
    fn init(d: usize, h: usize, k: usize, seed: u64) -> PyResult<Self> {
        Ok(PySaeModel {
            inner: sae::SaeModel::init(d, h, k, seed).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySaeModel {
            inner: sae::load_model(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        sae::save_model(&self.inner, &path).map_err(to_py_err)
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn h(&self) -> usize {
        self.inner.hidden_dim()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.sparsity()
    }

    /// Encode a dense vector into a TopK-sparse code (storage precision).
    #[pyo3(signature = (x, k=None))]
    fn encode(&self, x: Vec<f64>, k: Option<usize>) -> PyResult<Code> {
        let x = sparse::DenseVector::new(x).map_err(to_py_err)?;
        let z = self
            .inner
            .encode(&x, k.unwrap_or_else(|| self.inner.sparsity()))
            .map_err(to_py_err)?;
        Ok(sparse_to_code(&z))
    }

    fn decode(&self, code: Code) -> PyResult<Vec<f64>> {
        let z = code_to_sparse(self.inner.hidden_dim() as u32, code)?;
        Ok(self.inner.decode(&z).map_err(to_py_err)?.values().to_vec())
    }

    /// Combined training loss and its per-term breakdown for one batch of
    /// (query, positive, negatives) dense-token pairs.
    #[pyo3(signature = (pairs, **kwargs))]
    fn loss(
        &self,
        pairs: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)>,
        kwargs: Option<&Bound<'_, pyo3::types::PyDict>>,
    ) -> PyResult<HashMap<String, f64>> {
        let batch = build_pairs(pairs)?;
        let config = train_config_from_kwargs(kwargs, self.inner.sparsity())?;
        let b = sae::total_loss(&self.inner, &batch, &config).map_err(to_py_err)?;
        Ok(HashMap::from([
            ("reconstruction".to_string(), b.reconstruction),
            ("auxiliary".to_string(), b.auxiliary),
            ("contrastive".to_string(), b.contrastive),
            ("supervised".to_string(), b.supervised),
            ("total".to_string(), b.total),
        ]))
    }
}

fn build_pairs(
    pairs: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)>,
) -> PyResult<Vec<sae::TrainingPair>> {
    pairs
        .into_iter()
        .map(|(query, positive, negatives)| {
            Ok(sae::TrainingPair {
                query: dense_bag(query)?,
                positive: dense_bag(positive)?,
                negatives: negatives
                    .into_iter()
                    .map(dense_bag)
                    .collect::<PyResult<Vec<_>>>()?,
            })
        })
        .collect()
}

fn train_config_from_kwargs(
    kwargs: Option<&Bound<'_, pyo3::types::PyDict>>,
    default_k: usize,
) -> PyResult<sae::TrainConfig> {
    let mut config = sae::TrainConfig {
        k: default_k,
        ..sae::TrainConfig::default()
    };
    if let Some(kwargs) = kwargs {
        for (key, value) in kwargs.iter() {
            let key: String = key.extract()?;
            match key.as_str() {
                "k" => config.k = value.extract()?,
                "k_aux" => config.k_aux = value.extract()?,
                "alpha" => config.alpha = value.extract()?,
                "beta" => config.beta = value.extract()?,
                "gamma" => config.gamma = value.extract()?,
                "learning_rate" => config.learning_rate = value.extract()?,
                "batch_size" => config.batch_size = value.extract()?,
                "epochs" => config.epochs = value.extract()?,
                "warmup_steps" => config.warmup_steps = value.extract()?,
                "dead_threshold" => config.dead_threshold = value.extract()?,
                "temperature" => config.temperature = value.extract()?,
                "seed" => config.seed = value.extract()?,
                "supervised_mode" => {
                    let mode: String = value.extract()?;
                    config.supervised_mode = match mode.as_str() {
                        "token" => sae::SimMode::Token,
                        "cls" => sae::SimMode::Cls,
                        other => {
                            return Err(PyValueError::new_err(format!(
                                "supervised_mode must be token or cls, got {other:?}"
                            )))
                        }
                    };
                }
                other => {
                    return Err(PyValueError::new_err(format!(
                        "unknown training option {other:?}"
                    )))
                }
            }
        }
    }
    Ok(config)
}

/// Deterministic gradient-descent training; returns the trained model and
/// per-epoch mean losses.
#[pyfunction]
#[pyo3(signature = (model, pairs, **kwargs))]
fn train(
    model: &PySaeModel,
    pairs: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)>,
    kwargs: Option<&Bound<'_, pyo3::types::PyDict>>,
) -> PyResult<(PySaeModel, Vec<HashMap<String, f64>>)> {
    let batch = build_pairs(pairs)?;
    let config = train_config_from_kwargs(kwargs, model.inner.sparsity())?;
    let (trained, stats) = sae::train(&model.inner, &batch, &config).map_err(to_py_err)?;
    let stats = stats
        .into_iter()
        .map(|s| {
            HashMap::from([
                ("epoch".to_string(), s.epoch as f64),
                ("total".to_string(), s.mean.total),
                ("reconstruction".to_string(), s.mean.reconstruction),
                ("auxiliary".to_string(), s.mean.auxiliary),
                ("contrastive".to_string(), s.mean.contrastive),
                ("supervised".to_string(), s.mean.supervised),
            ])
        })
        .collect();
    Ok((PySaeModel { inner: trained }, stats))
}

/// Neuron-level inverted index over sparse token bags.
#[pyclass(name = "InvertedIndex")]
struct PyInvertedIndex {
    inner: index::InvertedIndex,
}

fn retrieval_config(
    k: usize,
    k_coarse: usize,
    cap: usize,
    top_k: usize,
    cls_weight: f64,
    block_skipping: bool,
) -> retrieval::RetrievalConfig {
    retrieval::RetrievalConfig {
        k,
        k_coarse,
        candidate_cap: cap,
        top_k,
        adaptive: None,
        cls_weight,
        mode: retrieval::RetrievalMode::CoarseFine,
        block_skipping,
    }
}

fn trace_dict(trace: &retrieval::RetrievalTrace) -> HashMap<String, u64> {
    HashMap::from([
        ("candidates_examined".to_string(), trace.candidates_examined),
        ("postings_scanned".to_string(), trace.postings_scanned),
        ("blocks_scanned".to_string(), trace.blocks_scanned),
        ("blocks_skipped".to_string(), trace.blocks_skipped),
        ("refinement_dots".to_string(), trace.refinement_dots),
        ("empty_query".to_string(), u64::from(trace.empty_query)),
    ])
}

#[pymethods]
impl PyInvertedIndex {
    #[new]
    #[pyo3(signature = (h, block_size=64))]
    fn new(h: u32, block_size: u32) -> PyResult<Self> {
        Ok(PyInvertedIndex {
            inner: index::InvertedIndex::new(h, block_size).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyInvertedIndex {
            inner: index::load_index(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        index::save_index(&self.inner, &path).map_err(to_py_err)
    }

    #[getter]
    fn doc_count(&self) -> u64 {
        self.inner.doc_count()
    }

    #[getter]
    fn h(&self) -> u32 {
        self.inner.h()
    }

    /// Append one document's sparse token codes (doc ids must increase).
    #[pyo3(signature = (doc_id, tokens, global_code=None))]
    fn append_doc(
        &mut self,
        doc_id: u64,
        tokens: Vec<Code>,
        global_code: Option<Code>,
    ) -> PyResult<()> {
        let bag = bag_from_codes(self.inner.h(), tokens, global_code)?;
        self.inner.append_doc(doc_id, &bag).map_err(to_py_err)
    }

    fn stats(&self) -> HashMap<String, f64> {
        let s = self.inner.stats();
        HashMap::from([
            ("doc_count".to_string(), s.doc_count as f64),
            ("nonempty_lists".to_string(), s.nonempty_lists as f64),
            ("total_postings".to_string(), s.total_postings as f64),
            ("mean_posting_length".to_string(), s.mean_posting_length),
            (
                "max_posting_length".to_string(),
                s.max_posting_length as f64,
            ),
            ("block_count".to_string(), s.block_count as f64),
            ("bytes".to_string(), s.bytes as f64),
        ])
    }

    /// Structural invariant violations (empty list means the index is sound).
    fn verify(&self) -> Vec<String> {
        self.inner.verify()
    }

    /// Exact retrieval; returns (results, trace) where results are
    /// (doc_id, score) pairs.
    #[pyo3(signature = (tokens, top_k=10))]
    fn retrieve_exact(
        &self,
        tokens: Vec<Code>,
        top_k: usize,
    ) -> PyResult<(Vec<(u64, f64)>, HashMap<String, u64>)> {
        let query = bag_from_codes(self.inner.h(), tokens, None)?;
        let cfg = retrieval_config(
            64,
            4,
            (self.inner.doc_count() as usize).max(top_k),
            top_k,
            1.0,
            true,
        );
        let out = retrieval::retrieve_exact(&self.inner, &query, &cfg).map_err(to_py_err)?;
        Ok((
            out.results.iter().map(|r| (r.doc_id, r.score)).collect(),
            trace_dict(&out.trace),
        ))
    }

    /// Coarse-to-fine retrieval under a candidate cap.
    #[pyo3(signature = (tokens, k_coarse=4, cap=2000, top_k=10, block_skipping=true))]
    fn retrieve_ssrpp(
        &self,
        tokens: Vec<Code>,
        k_coarse: usize,
        cap: usize,
        top_k: usize,
        block_skipping: bool,
    ) -> PyResult<(Vec<(u64, f64)>, HashMap<String, u64>)> {
        let query = bag_from_codes(self.inner.h(), tokens, None)?;
        let cfg = retrieval_config(k_coarse.max(64), k_coarse, cap, top_k, 1.0, block_skipping);
        let out = retrieval::retrieve_ssrpp(&self.inner, &query, &cfg).map_err(to_py_err)?;
        Ok((
            out.results.iter().map(|r| (r.doc_id, r.score)).collect(),
            trace_dict(&out.trace),
        ))
    }

    /// Coarse-to-fine retrieval with global-code cosine fusion.
    #[pyo3(signature = (tokens, global_code, k_coarse=4, cap=2000, top_k=10, cls_weight=1.0))]
    fn retrieve_with_cls(
        &self,
        tokens: Vec<Code>,
        global_code: Code,
        k_coarse: usize,
        cap: usize,
        top_k: usize,
        cls_weight: f64,
    ) -> PyResult<(Vec<(u64, f64)>, HashMap<String, u64>)> {
        let query = bag_from_codes(self.inner.h(), tokens, Some(global_code))?;
        let cfg = retrieval_config(k_coarse.max(64), k_coarse, cap, top_k, cls_weight, true);
        let out = retrieval::retrieve_with_cls(&self.inner, &query, &cfg).map_err(to_py_err)?;
        Ok((
            out.results.iter().map(|r| (r.doc_id, r.score)).collect(),
            trace_dict(&out.trace),
        ))
    }
}

/// Merge-join dot product of two sparse codes in a space of dimension `dim`.
#[pyfunction]
fn sparse_dot(a: Code, b: Code, dim: u32) -> PyResult<f64> {
    let a = code_to_sparse(dim, a)?;
    let b = code_to_sparse(dim, b)?;
    sparse::sparse_dot(&a, &b).map_err(to_py_err)
}

/// Sparse late interaction: sum over query tokens of the best dot against
/// any document token.
#[pyfunction]
fn late_interaction(query: Vec<Code>, doc: Vec<Code>, dim: u32) -> PyResult<f64> {
    let q = bag_from_codes(dim, query, None)?;
    let d = bag_from_codes(dim, doc, None)?;
    sparse::sparse_late_interaction(&q, &d).map_err(to_py_err)
}

/// Dense MaxSim over raw token embeddings.
#[pyfunction]
fn dense_maxsim(query: Vec<Vec<f64>>, doc: Vec<Vec<f64>>) -> PyResult<f64> {
    let q = dense_bag(query)?;
    let d = dense_bag(doc)?;
    sparse::dense_maxsim(&q, &d).map_err(to_py_err)
}

/// Keep the k largest positive entries of a pre-activation vector.
#[pyfunction]
fn topk_select(values: Vec<f64>, k: usize) -> PyResult<Code> {
    let dim = values.len() as u32;
    let z = sparse::topk_select(&values, k, dim).map_err(to_py_err)?;
    Ok(sparse_to_code(&z))
}

/// The per-token distortion bound `2*B*eps + eps^2 + delta*C^2`.
#[pyfunction(name = "eta")]
fn eta_py(b: f64, epsilon: f64, delta: f64, c: f64) -> f64 {
    analysis::eta(b, epsilon, delta, c)
}

/// Token-level distortion check: dense vs sparse dot with measured
/// constants; returns a dict including the `satisfied` flag.
#[pyfunction]
fn check_token_bound(
    model: &PySaeModel,
    x: Vec<f64>,
    y: Vec<f64>,
    k: usize,
) -> PyResult<HashMap<String, f64>> {
    let x = sparse::DenseVector::new(x).map_err(to_py_err)?;
    let y = sparse::DenseVector::new(y).map_err(to_py_err)?;
    let r = analysis::check_token_bound(&model.inner, &x, &y, k).map_err(to_py_err)?;
    Ok(HashMap::from([
        ("dense_dot".to_string(), r.dense_dot),
        ("sparse_dot".to_string(), r.sparse_dot),
        ("epsilon".to_string(), r.epsilon),
        ("b".to_string(), r.b),
        ("delta".to_string(), r.delta),
        ("lhs".to_string(), r.lhs),
        ("rhs".to_string(), r.rhs),
        ("satisfied".to_string(), f64::from(u8::from(r.satisfied))),
    ]))
}

#[pymodule]
fn ssr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySaeModel>()?;
    m.add_class::<PyInvertedIndex>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_dot, m)?)?;
    m.add_function(wrap_pyfunction!(late_interaction, m)?)?;
    m.add_function(wrap_pyfunction!(dense_maxsim, m)?)?;
    m.add_function(wrap_pyfunction!(topk_select, m)?)?;
    m.add_function(wrap_pyfunction!(eta_py, m)?)?;
    m.add_function(wrap_pyfunction!(check_token_bound, m)?)?;
    Ok(())
}
