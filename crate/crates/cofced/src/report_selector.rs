//! Coarse selection stage: bilinear attention over report vectors against the
//! claim vector, followed by a hard top-K cut.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};

/// Learnable weights for the report attention.
pub struct AttentionParams {
    pub w_alpha: ParamId,
}

impl AttentionParams {
    /// Registers the bilinear attention matrix (`dim` x `dim`).
    pub fn init(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> AttentionParams {
        let bound = 1.0 / (dim as f64).sqrt();
        let w_alpha = store.insert("rsel.w_alpha", Tensor::uniform_mat(dim, dim, bound, rng));
        AttentionParams { w_alpha }
    }
}

/// Attention weights over a case's reports: `softmax([h_di . (W h_c)]_i)`.
///
/// Returns a node holding one probability per report, in report order.
pub fn score_reports(
    graph: &mut Graph,
    store: &ParamStore,
    params: &AttentionParams,
    claim: NodeId,
    report_docs: &[NodeId],
) -> NodeId {
    assert!(!report_docs.is_empty(), "cannot score an empty report list");
    let projected = graph.matvec(store, params.w_alpha, claim);
    let scores: Vec<NodeId> = report_docs
        .iter()
        .map(|&doc| graph.dot(doc, projected))
        .collect();
    let stacked = graph.stack(&scores);
    graph.softmax(stacked)
}

/// Outcome of the hard top-K cut over attention weights.
#[derive(Debug, Clone)]
pub struct ReportSelection {
    /// Softmax attention weight per report.
    pub alpha: Vec<f64>,
    /// Indices of the K highest-weight reports, ordered by descending weight
    /// (ties broken by ascending index).
    pub selected: Vec<usize>,
    /// Per-report soft target: the attention weight where selected, else 0.
    pub y_hat_d: Vec<f64>,
}

/// Keeps the `min(k, |reports|)` highest-weight reports.
pub fn select_top_k(alpha: &[f64], k: usize) -> ReportSelection {
    assert!(!alpha.is_empty(), "cannot select from an empty report list");
    let keep = k.min(alpha.len());
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| {
        alpha[b]
            .partial_cmp(&alpha[a])
            .expect("attention weights must be finite")
            .then(a.cmp(&b))
    });
    let selected: Vec<usize> = order[..keep].to_vec();
    let mut y_hat_d = vec![0.0; alpha.len()];
    for &i in &selected {
        y_hat_d[i] = alpha[i];
    }
    ReportSelection {
        alpha: alpha.to_vec(),
        selected,
        y_hat_d,
    }
}
