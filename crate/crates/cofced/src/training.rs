//! Joint training of the three sub-tasks (report selection, sentence
//! selection, veracity) with adaptive loss weighting, plus checkpointing.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, Graph, NodeId, ParamStore, Tensor};
use crate::corpus::{ClaimCase, LabelScheme};
use crate::encoder::{EncoderConfig, SentenceEmbedder};
use crate::metrics::macro_prf;
use crate::model::{Model, ModelConfig};
use crate::sentence_selector::SentenceDecision;
use crate::{Error, Result};

/// Probabilities are clamped at this floor before logs.
const LOG_FLOOR: f64 = 1e-12;

/// Hyperparameters of the optimization loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Cases per optimizer step; only 1 is supported.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Reports kept by the coarse selector.
    pub k: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Adaptive loss weighting; when false the fixed betas apply.
    pub maw_enabled: bool,
    /// Temperature T of the adaptive weighting schedule.
    pub maw_t: f64,
    pub beta_report: f64,
    pub beta_sentence: f64,
    pub beta_veracity: f64,
    pub grad_clip: Option<f64>,
    /// Use the literal positive-only loss forms instead of the extended ones.
    pub literal_losses: bool,
    /// Accumulate the redundancy state over all visited reports.
    pub cumulative_redundancy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 1,
            max_epochs: 8,
            k: 12,
            dropout: 0.4,
            seed: 7,
            maw_enabled: true,
            maw_t: 8.0,
            beta_report: 0.5,
            beta_sentence: 0.5,
            beta_veracity: 0.5,
            grad_clip: None,
            literal_losses: false,
            cumulative_redundancy: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size != 1 {
            return Err(Error::Config("only batch size 1 is supported".into()));
        }
        if self.k < 1 {
            return Err(Error::Config("top-K must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if self.maw_t <= 0.0 {
            return Err(Error::Config("weighting temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Mean losses of the three tasks for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub report: f64,
    pub sentence: f64,
    pub veracity: f64,
}

/// One epoch's log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss_report: f64,
    pub loss_sentence: f64,
    pub loss_veracity: f64,
    pub beta_report: f64,
    pub beta_sentence: f64,
    pub beta_veracity: f64,
    pub loss_total: f64,
}

/// Report-selection loss over the attention weights: mean negative
/// log-weight of the evidence-bearing reports (0 when there are none).
/// The literal form sums instead of averaging.
pub fn loss_report(graph: &mut Graph, alpha: NodeId, y_d: &[bool], literal: bool) -> NodeId {
    assert_eq!(graph.value(alpha).len(), y_d.len(), "one label per report");
    let positives: Vec<usize> = (0..y_d.len()).filter(|&i| y_d[i]).collect();
    if positives.is_empty() {
        return graph.scalar_const(0.0);
    }
    let terms: Vec<NodeId> = positives
        .iter()
        .map(|&i| {
            let a = graph.slice(alpha, i, 1);
            graph.log_clamped(a, LOG_FLOOR)
        })
        .collect();
    let summed = graph.sum_nodes(&terms);
    let scale = if literal {
        -1.0
    } else {
        -1.0 / positives.len() as f64
    };
    graph.affine(summed, scale, 0.0)
}

/// Sentence-selection loss over the visited reports' sentences: full binary
/// cross-entropy averaged over all their sentences. The literal form sums
/// `-log p` over the positive sentences only.
pub fn loss_sentence(
    graph: &mut Graph,
    decisions: &[SentenceDecision],
    labels: &[bool],
    literal: bool,
) -> NodeId {
    assert_eq!(decisions.len(), labels.len(), "one label per decision");
    if literal {
        let terms: Vec<NodeId> = decisions
            .iter()
            .zip(labels)
            .filter(|&(_, &y)| y)
            .map(|(d, _)| {
                let lp = graph.log_clamped(d.p_node, LOG_FLOOR);
                graph.affine(lp, -1.0, 0.0)
            })
            .collect();
        if terms.is_empty() {
            return graph.scalar_const(0.0);
        }
        return graph.sum_nodes(&terms);
    }
    if decisions.is_empty() {
        return graph.scalar_const(0.0);
    }
    let terms: Vec<NodeId> = decisions
        .iter()
        .zip(labels)
        .map(|(d, &y)| {
            let prob = if y {
                d.p_node
            } else {
                graph.affine(d.p_node, -1.0, 1.0)
            };
            let lp = graph.log_clamped(prob, LOG_FLOOR);
            graph.affine(lp, -1.0, 0.0)
        })
        .collect();
    graph.mean(&terms)
}

/// Veracity loss: clamped categorical cross-entropy of the gold class.
pub fn loss_veracity(graph: &mut Graph, probs: NodeId, gold: usize) -> Result<NodeId> {
    let classes = graph.value(probs).len();
    if gold >= classes {
        return Err(Error::Invalid(format!(
            "gold class {gold} outside the {classes}-class output"
        )));
    }
    let picked = graph.slice(probs, gold, 1);
    let lp = graph.log_clamped(picked, LOG_FLOOR);
    Ok(graph.affine(lp, -1.0, 0.0))
}

/// Per-epoch loss weights. Epochs 1 and 2 use 0.5 for every task; from epoch
/// 3 on, each task's weight follows the softmax of its loss ratio
/// `L(t-1)/L(t-2)` scaled by `ln(t-2)/T`, normalized to sum to 3.
pub fn maw_update(history: &[TaskLosses], t: usize, temperature: f64) -> (f64, f64, f64) {
    assert!(t >= 1, "epochs are 1-based");
    if t <= 2 {
        return (0.5, 0.5, 0.5);
    }
    assert!(
        history.len() >= t - 1,
        "need mean losses for epochs {} and {} before epoch {t}",
        t - 1,
        t - 2
    );
    let prev = history[t - 2];
    let prior = history[t - 3];
    let ratio = |a: f64, b: f64| a / b.max(LOG_FLOOR);
    let f = [
        ratio(prev.report, prior.report),
        ratio(prev.sentence, prior.sentence),
        ratio(prev.veracity, prior.veracity),
    ];
    let g = ((t - 2) as f64).ln() / temperature;
    let scaled: Vec<f64> = f.iter().map(|&fk| fk * g).collect();
    let top = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&s| (s - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    let beta = |i: usize| 3.0 * exps[i] / total;
    (beta(0), beta(1), beta(2))
}

/// Adam optimizer state, aligned with a parameter store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Adam {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| t.zeros_like()).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. When `clip` is set and the global gradient norm exceeds
    /// it, gradients are rescaled to that norm first.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &Grads, clip: Option<f64>) {
        let mut scale = 1.0;
        if let Some(limit) = clip {
            let norm = grads.global_norm();
            if norm > limit {
                scale = limit / norm;
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let m_corr = 1.0 - self.beta1.powi(t);
        let v_corr = 1.0 - self.beta2.powi(t);
        for id in 0..store.len() {
            let g = grads.tensor(id);
            let m = self.m[id].flat_mut();
            let v = self.v[id].flat_mut();
            let p = store.tensor_mut(id).flat_mut();
            for ((g, (m, v)), p) in g.flat().iter().zip(m.iter_mut().zip(v.iter_mut())).zip(p) {
                let g = g * scale;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / m_corr;
                let v_hat = *v / v_corr;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Per-report evidence labels derived from the sentence flags.
fn report_labels(case: &ClaimCase) -> Vec<bool> {
    case.reports
        .iter()
        .map(|r| r.sentences.iter().any(|s| s.is_evidence))
        .collect()
}

/// Sentence labels aligned with the forward pass's decisions.
fn decision_labels(case: &ClaimCase, decisions: &[SentenceDecision]) -> Vec<bool> {
    decisions
        .iter()
        .map(|d| case.reports[d.report].sentences[d.sentence].is_evidence)
        .collect()
}

/// One optimizer step on one case. Returns the three unweighted task losses.
pub fn train_step(
    model: &mut Model,
    embedder: &dyn SentenceEmbedder,
    case: &ClaimCase,
    gold_class: usize,
    betas: (f64, f64, f64),
    optimizer: &mut Adam,
    config: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TaskLosses> {
    let fwd = model.forward(embedder, case, true, Some(rng))?;
    let mut graph = fwd.graph;

    let l_d = loss_report(&mut graph, fwd.alpha, &report_labels(case), config.literal_losses);
    let labels = decision_labels(case, &fwd.decisions);
    let l_s = loss_sentence(&mut graph, &fwd.decisions, &labels, config.literal_losses);
    let l_c = loss_veracity(&mut graph, fwd.veracity.probs_node, gold_class)?;

    let weighted = [
        graph.affine(l_d, betas.0, 0.0),
        graph.affine(l_s, betas.1, 0.0),
        graph.affine(l_c, betas.2, 0.0),
    ];
    let total = graph.sum_nodes(&weighted);
    let value = graph.scalar(total);
    if !value.is_finite() {
        return Err(Error::Diverged {
            epoch,
            case_id: case.claim_id.clone(),
            message: format!("total loss is {value}"),
        });
    }

    let grads = graph.backward(&model.store, total);
    optimizer.apply(&mut model.store, &grads, config.grad_clip);

    Ok(TaskLosses {
        report: graph.scalar(l_d),
        sentence: graph.scalar(l_s),
        veracity: graph.scalar(l_c),
    })
}

/// Veracity macro-F1 of the model over a case set.
fn veracity_macro_f1(
    model: &Model,
    embedder: &dyn SentenceEmbedder,
    cases: &[ClaimCase],
    gold: &[usize],
    scheme: &LabelScheme,
) -> Result<f64> {
    let mut predicted = Vec::with_capacity(cases.len());
    for case in cases {
        predicted.push(model.predict(embedder, case)?.veracity.predicted);
    }
    Ok(macro_prf(gold, &predicted, &scheme.classes)?.macro_f1)
}

/// Result of a training run: final model, best-epoch parameters, and the
/// per-epoch loss log.
pub struct FitResult {
    pub model: Model,
    pub optimizer: Adam,
    /// Parameters of the epoch with the best validation macro-F1.
    pub best_params: ParamStore,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub records: Vec<LossRecord>,
}

/// Trains a fresh model. Validation cases drive checkpoint selection; when
/// empty, the training set is used instead.
pub fn fit(
    train: &[ClaimCase],
    valid: &[ClaimCase],
    scheme: &LabelScheme,
    embedder: &dyn SentenceEmbedder,
    config: &TrainConfig,
    encoder: &EncoderConfig,
) -> Result<FitResult> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }

    let model_config = ModelConfig {
        encoder: *encoder,
        classes: scheme.num_classes(),
        k: config.k,
        dropout: config.dropout,
        cumulative_redundancy: config.cumulative_redundancy,
    };
    let mut model = Model::new(model_config, config.seed)?;
    let mut optimizer = Adam::new(&model.store, config.learning_rate);

    // Fail on unknown labels before any training work.
    let train_gold: Vec<usize> = train
        .iter()
        .map(|c| scheme.label_index(&c.label))
        .collect::<Result<_>>()?;
    let eval_cases = if valid.is_empty() { train } else { valid };
    let eval_gold: Vec<usize> = eval_cases
        .iter()
        .map(|c| scheme.label_index(&c.label))
        .collect::<Result<_>>()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);

    let mut history: Vec<TaskLosses> = Vec::new();
    let mut records: Vec<LossRecord> = Vec::new();
    let mut best_params = model.store.clone();
    let mut best_epoch = 0usize;
    let mut best_metric = f64::NEG_INFINITY;

    for epoch in 1..=config.max_epochs {
        let betas = if config.maw_enabled {
            maw_update(&history, epoch, config.maw_t)
        } else {
            (config.beta_report, config.beta_sentence, config.beta_veracity)
        };

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut sums = TaskLosses {
            report: 0.0,
            sentence: 0.0,
            veracity: 0.0,
        };
        for &i in &order {
            let losses = train_step(
                &mut model,
                embedder,
                &train[i],
                train_gold[i],
                betas,
                &mut optimizer,
                config,
                epoch,
                &mut dropout_rng,
            )?;
            sums.report += losses.report;
            sums.sentence += losses.sentence;
            sums.veracity += losses.veracity;
        }
        let n = train.len() as f64;
        let means = TaskLosses {
            report: sums.report / n,
            sentence: sums.sentence / n,
            veracity: sums.veracity / n,
        };
        history.push(means);
        records.push(LossRecord {
            epoch,
            loss_report: means.report,
            loss_sentence: means.sentence,
            loss_veracity: means.veracity,
            beta_report: betas.0,
            beta_sentence: betas.1,
            beta_veracity: betas.2,
            loss_total: betas.0 * means.report + betas.1 * means.sentence + betas.2 * means.veracity,
        });

        let metric = veracity_macro_f1(&model, embedder, eval_cases, &eval_gold, scheme)?;
        if metric > best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best_params = model.store.clone();
        }
    }

    Ok(FitResult {
        model,
        optimizer,
        best_params,
        best_epoch,
        best_metric,
        records,
    })
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorRecord {
    fn of(name: &str, tensor: &Tensor) -> Result<TensorRecord> {
        if tensor.flat().iter().any(|x| !x.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "tensor {name} holds non-finite values"
            )));
        }
        Ok(TensorRecord {
            name: name.to_string(),
            shape: tensor.shape(),
            data: tensor.flat().to_vec(),
        })
    }

    fn restore(&self) -> Result<Tensor> {
        Tensor::from_parts(&self.shape, self.data.clone()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "tensor {} has shape {:?} but {} entries",
                self.name,
                self.shape,
                self.data.len()
            ))
        })
    }
}

#[derive(Serialize, Deserialize)]
struct OptimizerRecord {
    learning_rate: f64,
    step: u64,
    m: Vec<TensorRecord>,
    v: Vec<TensorRecord>,
}

/// On-disk training snapshot. Loading reproduces evaluation bit-exactly.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    pub scheme: LabelScheme,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub seed: u64,
    params: Vec<TensorRecord>,
    optimizer: OptimizerRecord,
}

/// Serializes model parameters and optimizer state to a JSON file.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    params: &ParamStore,
    scheme: &LabelScheme,
    train: &TrainConfig,
    optimizer: &Adam,
    epoch: usize,
) -> Result<()> {
    let path = path.as_ref();
    let mut records = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        records.push(TensorRecord::of(name, tensor)?);
    }
    let mut m = Vec::with_capacity(params.len());
    let mut v = Vec::with_capacity(params.len());
    for id in 0..params.len() {
        m.push(TensorRecord::of(params.name(id), &optimizer.m[id])?);
        v.push(TensorRecord::of(params.name(id), &optimizer.v[id])?);
    }
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        scheme: scheme.clone(),
        model: model.config.clone(),
        train: train.clone(),
        epoch,
        seed: train.seed,
        params: records,
        optimizer: OptimizerRecord {
            learning_rate: optimizer.learning_rate,
            step: optimizer.step,
            m,
            v,
        },
    };
    let body = serde_json::to_string(&checkpoint)
        .map_err(|e| Error::Checkpoint(format!("serialize failed: {e}")))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

/// A checkpoint restored into a usable model and optimizer.
pub struct LoadedCheckpoint {
    pub model: Model,
    pub scheme: LabelScheme,
    pub train: TrainConfig,
    pub optimizer: Adam,
    pub epoch: usize,
}

/// Reads a checkpoint and rebuilds the model with its exact parameters.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let body =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let checkpoint: Checkpoint = serde_json::from_str(&body)
        .map_err(|e| Error::Checkpoint(format!("parse failed: {e}")))?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            checkpoint.version
        )));
    }

    let mut model = Model::new(checkpoint.model.clone(), checkpoint.seed)?;
    if checkpoint.params.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            model.store.len(),
            checkpoint.params.len()
        )));
    }
    for record in &checkpoint.params {
        let id = model.store.id(&record.name).ok_or_else(|| {
            Error::Checkpoint(format!("unknown tensor {:?}", record.name))
        })?;
        let tensor = record.restore()?;
        if tensor.shape() != model.store.tensor(id).shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, expected {:?}",
                record.name,
                tensor.shape(),
                model.store.tensor(id).shape()
            )));
        }
        *model.store.tensor_mut(id) = tensor;
    }

    let mut optimizer = Adam::new(&model.store, checkpoint.optimizer.learning_rate);
    optimizer.step = checkpoint.optimizer.step;
    let restore_moments = |records: &[TensorRecord], into: &mut Vec<Tensor>| -> Result<()> {
        if records.len() != into.len() {
            return Err(Error::Checkpoint("optimizer state size mismatch".into()));
        }
        for (id, record) in records.iter().enumerate() {
            let tensor = record.restore()?;
            if tensor.shape() != into[id].shape() {
                return Err(Error::Checkpoint(format!(
                    "optimizer tensor {} has a mismatched shape",
                    record.name
                )));
            }
            into[id] = tensor;
        }
        Ok(())
    };
    restore_moments(&checkpoint.optimizer.m, &mut optimizer.m)?;
    restore_moments(&checkpoint.optimizer.v, &mut optimizer.v)?;

    Ok(LoadedCheckpoint {
        model,
        scheme: checkpoint.scheme,
        train: checkpoint.train,
        optimizer,
        epoch: checkpoint.epoch,
    })
}
