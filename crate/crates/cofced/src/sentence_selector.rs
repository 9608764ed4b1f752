//! Fine selection stage: per-sentence extraction scores built from four
//! bilinear features (relevance to the claim, lexical richness, salience
//! within the report, redundancy against already-visited material), with a
//! per-report probability threshold and an argmax fallback.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::corpus::ClaimCase;
use crate::encoder::EncodedCase;

/// Learnable weights for the sentence scorer.
pub struct SelectorParams {
    /// Bilinear form against the claim vector (`dim` x `dim`).
    pub w_c: ParamId,
    /// Linear richness weights (`dim`).
    pub w_s: ParamId,
    /// Bilinear form against the sentence's own report vector (`dim` x `dim`).
    pub w_r: ParamId,
    /// Bilinear form against the redundancy state (`dim` x `dim`).
    pub w_d: ParamId,
}

impl SelectorParams {
    pub fn init(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> SelectorParams {
        let bound = 1.0 / (dim as f64).sqrt();
        let w_c = store.insert("ssel.w_c", Tensor::uniform_mat(dim, dim, bound, rng));
        let w_s = store.insert("ssel.w_s", Tensor::uniform_vec(dim, bound, rng));
        let w_r = store.insert("ssel.w_r", Tensor::uniform_mat(dim, dim, bound, rng));
        let w_d = store.insert("ssel.w_d", Tensor::uniform_mat(dim, dim, bound, rng));
        SelectorParams { w_c, w_s, w_r, w_d }
    }
}

/// Graph nodes for one sentence's score and its four components.
pub struct SentenceScore {
    /// Extraction probability: `sigmoid(relevance + richness + salience - redundancy)`.
    pub p: NodeId,
    pub relevance: NodeId,
    pub richness: NodeId,
    pub salience: NodeId,
    pub redundancy: NodeId,
}

/// Scores one sentence given its contextual vector, its report vector, the
/// claim vector, and the current redundancy state.
pub fn score_sentence(
    graph: &mut Graph,
    store: &ParamStore,
    params: &SelectorParams,
    claim: NodeId,
    sentence: NodeId,
    report: NodeId,
    redundancy_state: NodeId,
) -> SentenceScore {
    let claim_proj = graph.matvec(store, params.w_c, claim);
    let relevance = graph.dot(sentence, claim_proj);
    let richness_weights = graph.param(store, params.w_s);
    let richness = graph.dot(sentence, richness_weights);
    let report_proj = graph.matvec(store, params.w_r, report);
    let salience = graph.dot(sentence, report_proj);
    let redundancy_proj = graph.matvec(store, params.w_d, redundancy_state);
    let redundancy = graph.dot(sentence, redundancy_proj);

    let gains = graph.add(relevance, richness);
    let gains = graph.add(gains, salience);
    let logit = graph.sub(gains, redundancy);
    let p = graph.sigmoid(logit);
    SentenceScore {
        p,
        relevance,
        richness,
        salience,
        redundancy,
    }
}

/// Redundancy state from previously visited sentences: elementwise `tanh` of
/// the probability-weighted sum of their contextual vectors. Empty input
/// yields the zero state.
pub fn update_redundancy(
    graph: &mut Graph,
    dim: usize,
    vectors: &[NodeId],
    probabilities: &[NodeId],
) -> NodeId {
    assert_eq!(
        vectors.len(),
        probabilities.len(),
        "each sentence vector needs exactly one probability"
    );
    if vectors.is_empty() {
        return graph.zeros(dim);
    }
    let weighted: Vec<NodeId> = vectors
        .iter()
        .zip(probabilities)
        .map(|(&v, &p)| graph.scale_by(v, p))
        .collect();
    let summed = graph.sum_nodes(&weighted);
    graph.tanh(summed)
}

/// Score and outcome for one sentence of a visited report.
#[derive(Debug, Clone)]
pub struct SentenceDecision {
    /// Report index within the case.
    pub report: usize,
    /// Sentence index within the report.
    pub sentence: usize,
    /// Extraction probability.
    pub p: f64,
    pub relevance: f64,
    pub richness: f64,
    pub salience: f64,
    pub redundancy: f64,
    /// Whether the sentence made it into the explanation.
    pub selected: bool,
    /// True when the sentence was selected only because its report would
    /// otherwise have contributed nothing.
    pub fallback: bool,
    /// Graph node for `p`, for loss construction.
    pub p_node: NodeId,
}

/// One extracted sentence.
#[derive(Debug, Clone)]
pub struct ExplanationItem {
    pub report: usize,
    pub sentence: usize,
    pub text: String,
}

/// The extracted explanation for one case.
pub struct ExplanationSet {
    /// Extracted sentences in (report visit order, sentence index) order.
    pub items: Vec<ExplanationItem>,
    /// Per visited report: max-pool over its extracted sentence vectors,
    /// in visit order.
    pub report_pooled: Vec<NodeId>,
    /// Extracted sentence texts joined with single spaces, in `items` order.
    pub text: String,
}

/// Knobs for the selection sweep.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelectorOptions {
    /// When set, the redundancy state accumulates over all previously visited
    /// reports instead of only the immediately preceding one.
    pub cumulative_redundancy: bool,
}

/// Runs the fine selection sweep over the given reports in visit order.
///
/// Per report: every sentence is scored against the current redundancy state,
/// sentences with probability strictly above `1/|report|` are extracted, and
/// if none clears the bar the single highest-probability sentence (ties to
/// the lowest index) is extracted as a fallback.
pub fn select_explanations(
    graph: &mut Graph,
    store: &ParamStore,
    params: &SelectorParams,
    claim: NodeId,
    encoded: &EncodedCase,
    case: &ClaimCase,
    visit_order: &[usize],
    options: SelectorOptions,
) -> (ExplanationSet, Vec<SentenceDecision>) {
    let dim = graph.value(claim).len();
    let mut decisions: Vec<SentenceDecision> = Vec::new();
    let mut items: Vec<ExplanationItem> = Vec::new();
    let mut report_pooled: Vec<NodeId> = Vec::new();

    // Sentence vectors and probability nodes feeding the redundancy state.
    let mut history_vectors: Vec<NodeId> = Vec::new();
    let mut history_probs: Vec<NodeId> = Vec::new();

    for &report_idx in visit_order {
        let report = &encoded.reports[report_idx];
        let sentence_count = report.contextual.len();
        assert!(sentence_count > 0, "reports must have at least one sentence");

        let redundancy_state =
            update_redundancy(graph, dim, &history_vectors, &history_probs);

        let first = decisions.len();
        let threshold = 1.0 / sentence_count as f64;
        for (t, &sentence_node) in report.contextual.iter().enumerate() {
            let score = score_sentence(
                graph,
                store,
                params,
                claim,
                sentence_node,
                report.doc,
                redundancy_state,
            );
            let p = graph.scalar(score.p);
            decisions.push(SentenceDecision {
                report: report_idx,
                sentence: t,
                p,
                relevance: graph.scalar(score.relevance),
                richness: graph.scalar(score.richness),
                salience: graph.scalar(score.salience),
                redundancy: graph.scalar(score.redundancy),
                selected: p > threshold,
                fallback: false,
                p_node: score.p,
            });
        }

        let report_decisions = &mut decisions[first..];
        if report_decisions.iter().all(|d| !d.selected) {
            let best = report_decisions
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| {
                    a.p.partial_cmp(&b.p)
                        .expect("sentence probabilities must be finite")
                        .then(ib.cmp(ia))
                })
                .map(|(i, _)| i)
                .expect("reports must have at least one sentence");
            report_decisions[best].selected = true;
            report_decisions[best].fallback = true;
        }

        let mut chosen_vectors: Vec<NodeId> = Vec::new();
        for d in decisions[first..].iter() {
            if d.selected {
                chosen_vectors.push(report.contextual[d.sentence]);
                items.push(ExplanationItem {
                    report: report_idx,
                    sentence: d.sentence,
                    text: case.reports[report_idx].sentences[d.sentence].text.clone(),
                });
            }
        }
        report_pooled.push(graph.max_pool(&chosen_vectors));

        if !options.cumulative_redundancy {
            history_vectors.clear();
            history_probs.clear();
        }
        for d in decisions[first..].iter() {
            history_vectors.push(report.contextual[d.sentence]);
            history_probs.push(d.p_node);
        }
    }

    let text = items
        .iter()
        .map(|item| item.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    (
        ExplanationSet {
            items,
            report_pooled,
            text,
        },
        decisions,
    )
}
