//! Hierarchical text encoding.
//!
//! Sentence level: a pluggable [`SentenceEmbedder`] maps text to a
//! d-dimensional vector. The built-in [`HashEmbedder`] derives deterministic
//! pseudo-random token vectors from a seeded hash and averages them
//! (bag-of-tokens, L2-normalized), so the whole pipeline runs on CPU with no
//! external weights. A pretrained contextual encoder can be plugged in
//! through the same trait; its failures must surface as errors, never as
//! silent zero vectors.
//!
//! Document level: a bidirectional LSTM over sentence vectors produces
//! cross-sentence contextual states (forward and backward halves
//! concatenated), and an elementwise max-pool over those states yields the
//! report vector.

use crate::annotator::tokenize;
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::corpus::ClaimCase;
use crate::{Error, Result};
use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which sentence embedder backs the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Hash,
    PretrainedAdapter,
}

impl EncoderKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hash" => Ok(EncoderKind::Hash),
            "pretrained-adapter" => Ok(EncoderKind::PretrainedAdapter),
            other => Err(Error::Config(format!(
                "unknown encoder kind {other:?} (expected hash or pretrained-adapter)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderKind::Hash => "hash",
            EncoderKind::PretrainedAdapter => "pretrained-adapter",
        }
    }
}

/// Encoder shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Sentence/report vector width d.
    pub dim: usize,
    pub kind: EncoderKind,
    /// Per-direction recurrent hidden size; both directions concatenated
    /// must reproduce d, i.e. `recurrent_hidden * 2 == dim`.
    pub recurrent_hidden: usize,
}

impl EncoderConfig {
    /// Hash-embedder config with `recurrent_hidden = dim / 2`.
    pub fn hash(dim: usize) -> Self {
        EncoderConfig {
            dim,
            kind: EncoderKind::Hash,
            recurrent_hidden: dim / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.recurrent_hidden == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.recurrent_hidden * 2 != self.dim {
            return Err(Error::Config(format!(
                "recurrent_hidden * 2 must equal dim (got {} * 2 != {})",
                self.recurrent_hidden, self.dim
            )));
        }
        Ok(())
    }
}

/// Maps sentence text to exactly `dim()` real numbers.
pub trait SentenceEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic seeded bag-of-tokens embedder.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbedder { dim, seed }
    }

    /// Pseudo-random vector in [-1, 1)^dim, a pure function of (token, seed).
    fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut state = fnv1a64(token.as_bytes()) ^ self.seed;
        Array1::from_shape_fn(self.dim, |_| {
            let u = splitmix64(&mut state) >> 11; // 53 random bits
            (u as f64 / (1u64 << 52) as f64) - 1.0
        })
    }
}

impl SentenceEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        let mut mean = Array1::<f64>::zeros(self.dim);
        if tokens.is_empty() {
            // Token-free text (e.g. pure punctuation) still gets a
            // deterministic unit vector rather than an error or zeros.
            mean = self.token_vector("");
        } else {
            for t in &tokens {
                mean += &self.token_vector(t);
            }
            mean /= tokens.len() as f64;
        }
        let norm = mean.dot(&mean).sqrt();
        if norm < 1e-12 {
            mean = self.token_vector("");
            let n = mean.dot(&mean).sqrt();
            mean /= n;
        } else {
            mean /= norm;
        }
        Ok(mean.to_vec())
    }
}

/// Resolve the configured embedder. The pretrained kind requires a caller
/// supplied adapter (e.g. from the Python bindings) and fails loudly without
/// one.
pub fn build_embedder(
    config: &EncoderConfig,
    seed: u64,
    adapter: Option<Box<dyn SentenceEmbedder>>,
) -> Result<Box<dyn SentenceEmbedder>> {
    config.validate()?;
    match config.kind {
        EncoderKind::Hash => Ok(Box::new(HashEmbedder::new(config.dim, seed))),
        EncoderKind::PretrainedAdapter => {
            let adapter = adapter.ok_or(Error::AdapterUnavailable)?;
            if adapter.dim() != config.dim {
                return Err(Error::Embedder(format!(
                    "adapter emits {} dims but config wants {}",
                    adapter.dim(),
                    config.dim
                )));
            }
            Ok(adapter)
        }
    }
}

/// Embed one sentence and check the width contract.
pub fn encode_sentence(text: &str, embedder: &dyn SentenceEmbedder) -> Result<Array1<f64>> {
    let v = embedder.embed(text)?;
    if v.len() != embedder.dim() {
        return Err(Error::Embedder(format!(
            "embedder returned {} values, expected {}",
            v.len(),
            embedder.dim()
        )));
    }
    let arr = Array1::from_vec(v);
    if arr.iter().any(|x| !x.is_finite()) {
        return Err(Error::Embedder("embedder returned non-finite values".into()));
    }
    Ok(arr)
}

/// Bidirectional LSTM + max-pool document encoder (parameter handles only;
/// tensors live in the shared [`ParamStore`]).
#[derive(Debug, Clone)]
pub struct DocumentEncoder {
    pub dim: usize,
    pub hidden: usize,
    w_ih_f: ParamId,
    w_hh_f: ParamId,
    b_f: ParamId,
    w_ih_b: ParamId,
    w_hh_b: ParamId,
    b_b: ParamId,
}

impl DocumentEncoder {
    /// Register fresh parameters, uniformly initialized in
    /// [-1/sqrt(hidden), 1/sqrt(hidden)].
    pub fn init(
        store: &mut ParamStore,
        config: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.dim, config.recurrent_hidden);
        let bound = 1.0 / (h as f64).sqrt();
        let w_ih_f = store.insert("enc.fwd.w_ih", Tensor::uniform_mat(4 * h, d, bound, rng));
        let w_hh_f = store.insert("enc.fwd.w_hh", Tensor::uniform_mat(4 * h, h, bound, rng));
        let b_f = store.insert("enc.fwd.b", Tensor::uniform_vec(4 * h, bound, rng));
        let w_ih_b = store.insert("enc.bwd.w_ih", Tensor::uniform_mat(4 * h, d, bound, rng));
        let w_hh_b = store.insert("enc.bwd.w_hh", Tensor::uniform_mat(4 * h, h, bound, rng));
        let b_b = store.insert("enc.bwd.b", Tensor::uniform_vec(4 * h, bound, rng));
        Ok(DocumentEncoder {
            dim: d,
            hidden: h,
            w_ih_f,
            w_hh_f,
            b_f,
            w_ih_b,
            w_hh_b,
            b_b,
        })
    }

    /// One LSTM step: gates from `W_ih x + W_hh h + b`, then the usual
    /// cell/state update.
    fn cell(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        w_ih: ParamId,
        w_hh: ParamId,
        b: ParamId,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> (NodeId, NodeId) {
        let h = self.hidden;
        let zx = g.matvec(store, w_ih, x);
        let zh = g.matvec(store, w_hh, h_prev);
        let bias = g.param(store, b);
        let z0 = g.add(zx, zh);
        let z = g.add(z0, bias);
        let i_raw = g.slice(z, 0, h);
        let f_raw = g.slice(z, h, h);
        let g_raw = g.slice(z, 2 * h, h);
        let o_raw = g.slice(z, 3 * h, h);
        let i = g.sigmoid(i_raw);
        let f = g.sigmoid(f_raw);
        let cand = g.tanh(g_raw);
        let o = g.sigmoid(o_raw);
        let keep = g.mul(f, c_prev);
        let write = g.mul(i, cand);
        let c = g.add(keep, write);
        let c_act = g.tanh(c);
        let h_new = g.mul(o, c_act);
        (h_new, c)
    }

    /// Run both directions over the sentence vectors; return the contextual
    /// state per sentence (forward ++ backward halves) and the max-pooled
    /// document vector.
    pub fn encode_document(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        sentences: &[NodeId],
    ) -> (Vec<NodeId>, NodeId) {
        assert!(!sentences.is_empty(), "document without sentences");
        let n = sentences.len();

        let mut fwd = Vec::with_capacity(n);
        let mut h = g.zeros(self.hidden);
        let mut c = g.zeros(self.hidden);
        for &x in sentences {
            let (nh, nc) = self.cell(g, store, self.w_ih_f, self.w_hh_f, self.b_f, x, h, c);
            fwd.push(nh);
            h = nh;
            c = nc;
        }

        let mut bwd = vec![0; n];
        let mut h = g.zeros(self.hidden);
        let mut c = g.zeros(self.hidden);
        for j in (0..n).rev() {
            let (nh, nc) =
                self.cell(g, store, self.w_ih_b, self.w_hh_b, self.b_b, sentences[j], h, c);
            bwd[j] = nh;
            h = nh;
            c = nc;
        }

        let contextual: Vec<NodeId> = (0..n).map(|j| g.concat(&[fwd[j], bwd[j]])).collect();
        let doc = g.max_pool(&contextual);
        (contextual, doc)
    }
}

/// Dense views of one encoded claim case, as tape nodes.
pub struct EncodedReport {
    /// Raw sentence embeddings (constants on the tape).
    pub sentences: Vec<NodeId>,
    /// Cross-sentence contextual states, one per sentence.
    pub contextual: Vec<NodeId>,
    /// Max-pooled report vector.
    pub doc: NodeId,
}

pub struct EncodedCase {
    pub claim: NodeId,
    pub reports: Vec<EncodedReport>,
}

/// Embed the claim and every report of `case` onto the tape.
pub fn encode_case(
    g: &mut Graph,
    store: &ParamStore,
    doc_encoder: &DocumentEncoder,
    embedder: &dyn SentenceEmbedder,
    case: &ClaimCase,
) -> Result<EncodedCase> {
    let claim = encode_sentence(&case.claim, embedder)?;
    let claim = g.constant(claim);
    let mut reports = Vec::with_capacity(case.reports.len());
    for report in &case.reports {
        let mut sent_nodes = Vec::with_capacity(report.sentences.len());
        for s in &report.sentences {
            let v = encode_sentence(&s.text, embedder)?;
            sent_nodes.push(g.constant(v));
        }
        let (contextual, doc) = doc_encoder.encode_document(g, store, &sent_nodes);
        reports.push(EncodedReport {
            sentences: sent_nodes,
            contextual,
            doc,
        });
    }
    Ok(EncodedCase { claim, reports })
}
