//! Python bindings for the claim-verification pipeline: the lexical scoring
//! primitives, the adaptive loss weighting, the file-level workflow commands
//! (synth/annotate/train/evaluate/explain), and a Python-callable sentence
//! embedder that plugs into the pretrained-adapter boundary.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use cofced::annotator::{AnnotationConfig, Thresholds};
use cofced::cli::{cmd_annotate, cmd_evaluate, cmd_explain, cmd_synth, cmd_train, RunConfig};
use cofced::corpus::{load_corpus, save_corpus, LabelScheme};
use cofced::encoder::SentenceEmbedder;
use cofced::training::TaskLosses;

fn to_py_err(e: cofced::Error) -> PyErr {
    match e {
        cofced::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_loads(py: Python<'_>, s: &str) -> PyResult<Py<PyAny>> {
    let json = PyModule::import(py, "json")?;
    Ok(json.call_method1("loads", (s,))?.unbind())
}

/// Sentence embedder backed by a Python callable: text in, `dim` floats out.
struct PyEmbedder {
    callable: Py<PyAny>,
    dim: usize,
}

impl SentenceEmbedder for PyEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> cofced::Result<Vec<f64>> {
        Python::attach(|py| {
            let out = self
                .callable
                .bind(py)
                .call1((text,))
                .map_err(|e| cofced::Error::Embedder(format!("adapter call failed: {e}")))?;
            let v: Vec<f64> = out.extract().map_err(|e| {
                cofced::Error::Embedder(format!("adapter must return a sequence of floats: {e}"))
            })?;
            if v.len() != self.dim {
                return Err(cofced::Error::Embedder(format!(
                    "adapter returned {} values, expected {}",
                    v.len(),
                    self.dim
                )));
            }
            Ok(v)
        })
    }
}

/// Lowercase alphanumeric tokens, the tokenizer behind every lexical score.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    cofced::annotator::tokenize(text)
}

/// Split a gold justification into sentences.
#[pyfunction]
fn split_explanation(text: &str) -> Vec<String> {
    cofced::annotator::split_explanation(text)
}

/// ROUGE-N F1 between two texts.
#[pyfunction]
#[pyo3(signature = (candidate, reference, n = 1))]
fn rouge_n_f1(candidate: &str, reference: &str, n: usize) -> f64 {
    cofced::annotator::rouge_n_f1(
        &cofced::annotator::tokenize(candidate),
        &cofced::annotator::tokenize(reference),
        n,
    )
}

/// ROUGE-L (longest common subsequence) F1 between two texts.
#[pyfunction]
fn rouge_l_f1(candidate: &str, reference: &str) -> f64 {
    cofced::annotator::rouge_l_f1(
        &cofced::annotator::tokenize(candidate),
        &cofced::annotator::tokenize(reference),
    )
}

/// Collapse a source veracity label onto the three-way scheme.
#[pyfunction]
fn standardize_label(raw: &str) -> PyResult<String> {
    cofced::annotator::standardize_label(raw)
        .map(str::to_string)
        .map_err(to_py_err)
}

/// Class names of a label scheme ("rawfc", "liar", "synthetic-N").
#[pyfunction]
fn scheme_classes(name: &str) -> PyResult<Vec<String>> {
    Ok(LabelScheme::from_name(name).map_err(to_py_err)?.classes)
}

/// Adaptive per-task loss weights for epoch `t` given the per-epoch loss
/// history (list of (report, sentence, veracity) means). Weights sum to 3.
#[pyfunction]
#[pyo3(signature = (history, t, temperature = 8.0))]
fn maw_update(history: Vec<(f64, f64, f64)>, t: usize, temperature: f64) -> PyResult<(f64, f64, f64)> {
    if t == 0 {
        return Err(PyValueError::new_err("epochs are numbered from 1"));
    }
    if history.len() + 1 < t {
        return Err(PyValueError::new_err(format!(
            "epoch {t} needs at least {} history entries, got {}",
            t - 1,
            history.len()
        )));
    }
    let history: Vec<TaskLosses> = history
        .into_iter()
        .map(|(report, sentence, veracity)| TaskLosses {
            report,
            sentence,
            veracity,
        })
        .collect();
    Ok(cofced::training::maw_update(&history, t, temperature))
}

/// Generate a planted-evidence synthetic corpus; returns the case count.
#[pyfunction]
#[pyo3(signature = (out, claims = 60, classes = 3, reports = 4, seed = 7))]
fn synth(out: &str, claims: usize, classes: usize, reports: usize, seed: u64) -> PyResult<usize> {
    cmd_synth(std::path::Path::new(out), claims, classes, reports, seed).map_err(to_py_err)
}

#[allow(clippy::too_many_arguments)]
/// Annotate a corpus with oracle evidence labels. `embedder` may be a
/// Python callable (text -> sequence of `dim` floats) standing in for a
/// pretrained sentence encoder; by default the seeded hash embedder is used.
#[pyfunction]
#[pyo3(signature = (
    input, output, scheme = "rawfc", dim = 64, seed = 7, embedder = None,
    rouge1_min = 0.1, rouge2_min = 0.0, rougel_min = 0.1, cosine_min = 0.6,
    max_oracles = 30, recall_thresholds = false
))]
fn annotate(
    py: Python<'_>,
    input: &str,
    output: &str,
    scheme: &str,
    dim: usize,
    seed: u64,
    embedder: Option<Bound<'_, PyAny>>,
    rouge1_min: f64,
    rouge2_min: f64,
    rougel_min: f64,
    cosine_min: f64,
    max_oracles: usize,
    recall_thresholds: bool,
) -> PyResult<Py<PyAny>> {
    let config = AnnotationConfig {
        thresholds: Thresholds {
            rouge1_min,
            rouge2_min,
            rougel_min,
            cosine_min,
        },
        max_oracles,
        recall_thresholds,
    };
    let summary = match embedder {
        Some(callable) => {
            let adapter = PyEmbedder {
                callable: callable.unbind(),
                dim,
            };
            let label_scheme = LabelScheme::from_name(scheme).map_err(to_py_err)?;
            let cases = load_corpus(input, &label_scheme).map_err(to_py_err)?;
            let (annotated, summary) =
                cofced::annotator::annotate_corpus(&cases, &adapter, &config)
                    .map_err(to_py_err)?;
            save_corpus(output, &annotated).map_err(to_py_err)?;
            summary
        }
        None => {
            let mut rc = RunConfig::default();
            rc.scheme = scheme.to_string();
            rc.dim = dim;
            rc.train.seed = seed;
            rc.annotation = config;
            cmd_annotate(
                std::path::Path::new(input),
                std::path::Path::new(output),
                &rc,
            )
            .map_err(to_py_err)?
        }
    };
    let body = serde_json::to_string(&summary)
        .map_err(|e| PyValueError::new_err(format!("summary serialization failed: {e}")))?;
    json_loads(py, &body)
}

#[allow(clippy::too_many_arguments)]
/// Train on an annotated corpus; writes checkpoint.json, loss_log.jsonl and
/// metrics_valid.json into `out` and returns a small result dict.
#[pyfunction]
#[pyo3(signature = (
    train, out, valid = None, scheme = "rawfc", dim = 64, epochs = 8, k = 12,
    lr = 1e-5, dropout = 0.4, seed = 7, maw = true, grad_clip = None, lead_n = 5
))]
fn train(
    py: Python<'_>,
    train: &str,
    out: &str,
    valid: Option<&str>,
    scheme: &str,
    dim: usize,
    epochs: usize,
    k: usize,
    lr: f64,
    dropout: f64,
    seed: u64,
    maw: bool,
    grad_clip: Option<f64>,
    lead_n: usize,
) -> PyResult<Py<PyAny>> {
    let mut rc = RunConfig::default();
    rc.scheme = scheme.to_string();
    rc.dim = dim;
    rc.lead_n = lead_n;
    rc.train.max_epochs = epochs;
    rc.train.k = k;
    rc.train.learning_rate = lr;
    rc.train.dropout = dropout;
    rc.train.seed = seed;
    rc.train.maw_enabled = maw;
    rc.train.grad_clip = grad_clip;
    let outcome = cmd_train(
        std::path::Path::new(train),
        valid.map(std::path::Path::new),
        std::path::Path::new(out),
        &rc,
    )
    .map_err(to_py_err)?;
    let body = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best_metric": outcome.best_metric,
        "epochs_run": outcome.records.len(),
        "checkpoint": outcome.checkpoint.display().to_string(),
        "loss_log": outcome.loss_log.display().to_string(),
        "metrics": outcome.metrics.display().to_string(),
    });
    json_loads(py, &body.to_string())
}

/// Evaluate a checkpoint on a labeled corpus; writes metrics.json into
/// `out` and returns the full metrics document as a dict.
#[pyfunction]
#[pyo3(signature = (test, checkpoint, out, lead_n = 5, max_oracles = 30))]
fn evaluate(
    py: Python<'_>,
    test: &str,
    checkpoint: &str,
    out: &str,
    lead_n: usize,
    max_oracles: usize,
) -> PyResult<Py<PyAny>> {
    let mut rc = RunConfig::default();
    rc.lead_n = lead_n;
    rc.annotation.max_oracles = max_oracles;
    let (_path, doc) = cmd_evaluate(
        std::path::Path::new(test),
        std::path::Path::new(checkpoint),
        std::path::Path::new(out),
        &rc,
    )
    .map_err(to_py_err)?;
    let body = serde_json::to_string(&doc)
        .map_err(|e| PyValueError::new_err(format!("metrics serialization failed: {e}")))?;
    json_loads(py, &body)
}

/// Run one case (a JSON file) through a checkpoint; returns the printable
/// evidence breakdown.
#[pyfunction]
#[pyo3(signature = (case, checkpoint, claim = None))]
fn explain(case: &str, checkpoint: &str, claim: Option<&str>) -> PyResult<String> {
    cmd_explain(
        std::path::Path::new(case),
        std::path::Path::new(checkpoint),
        claim,
    )
    .map_err(to_py_err)
}

#[pymodule]
fn cofced_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(split_explanation, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_n_f1, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l_f1, m)?)?;
    m.add_function(wrap_pyfunction!(standardize_label, m)?)?;
    m.add_function(wrap_pyfunction!(scheme_classes, m)?)?;
    m.add_function(wrap_pyfunction!(maw_update, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(annotate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    Ok(())
}
