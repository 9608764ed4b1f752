//! Veracity classification head: pools all-report and explanation
//! representations, concatenates them with the claim vector, and classifies
//! through a small MLP with optional dropout.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::sentence_selector::ExplanationSet;
use crate::{Error, Result};

/// Weights of the classification head: one hidden layer `3d -> d` with tanh,
/// then `d -> classes`, softmax on top.
pub struct VeracityHeadParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    /// Dropout rate applied to the concatenated representation during training.
    pub dropout: f64,
}

impl VeracityHeadParams {
    pub fn init(
        store: &mut ParamStore,
        dim: usize,
        classes: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> VeracityHeadParams {
        assert!(classes >= 2, "need at least two classes");
        assert!((0.0..1.0).contains(&dropout), "dropout must be in [0, 1)");
        let hidden_bound = 1.0 / ((3 * dim) as f64).sqrt();
        let out_bound = 1.0 / (dim as f64).sqrt();
        let w1 = store.insert("head.w1", Tensor::uniform_mat(dim, 3 * dim, hidden_bound, rng));
        let b1 = store.insert("head.b1", Tensor::uniform_vec(dim, hidden_bound, rng));
        let w2 = store.insert("head.w2", Tensor::uniform_mat(classes, dim, out_bound, rng));
        let b2 = store.insert("head.b2", Tensor::uniform_vec(classes, out_bound, rng));
        VeracityHeadParams {
            w1,
            b1,
            w2,
            b2,
            dropout,
        }
    }
}

/// Elementwise max over all report vectors.
pub fn aggregate_reports(graph: &mut Graph, report_docs: &[NodeId]) -> NodeId {
    assert!(!report_docs.is_empty(), "need at least one report");
    graph.max_pool(report_docs)
}

/// Elementwise max over the per-report pooled explanation vectors.
pub fn aggregate_explanations(graph: &mut Graph, explanation: &ExplanationSet) -> Result<NodeId> {
    if explanation.report_pooled.is_empty() {
        return Err(Error::Invalid(
            "cannot aggregate an empty explanation set".into(),
        ));
    }
    Ok(graph.max_pool(&explanation.report_pooled))
}

/// Classification result for one case.
pub struct VeracityOutput {
    /// Class probabilities.
    pub probs: Vec<f64>,
    /// Argmax class (ties to the lowest index).
    pub predicted: usize,
    /// Graph node holding the probability vector, for loss construction.
    pub probs_node: NodeId,
    /// Concatenated `[h_c; h_D; h_E]` node.
    pub h_dagger: NodeId,
}

/// Concatenates the three representations, applies inverted dropout when
/// training, and classifies through the MLP head.
pub fn predict_veracity(
    graph: &mut Graph,
    store: &ParamStore,
    head: &VeracityHeadParams,
    claim: NodeId,
    reports_pooled: NodeId,
    explanation_pooled: NodeId,
    training: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> VeracityOutput {
    let h_dagger = graph.concat(&[claim, reports_pooled, explanation_pooled]);

    let dropped = if training && head.dropout > 0.0 {
        let rng = rng.expect("training with dropout requires an rng");
        let keep = 1.0 - head.dropout;
        let len = graph.value(h_dagger).len();
        let mask: Array1<f64> = Array1::from_iter(
            (0..len).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }),
        );
        let mask_node = graph.constant(mask);
        graph.mul(h_dagger, mask_node)
    } else {
        h_dagger
    };

    let z1 = graph.matvec(store, head.w1, dropped);
    let b1 = graph.param(store, head.b1);
    let z1 = graph.add(z1, b1);
    let a1 = graph.tanh(z1);
    let z2 = graph.matvec(store, head.w2, a1);
    let b2 = graph.param(store, head.b2);
    let logits = graph.add(z2, b2);
    let probs_node = graph.softmax(logits);

    let probs: Vec<f64> = graph.value(probs_node).to_vec();
    let predicted = probs
        .iter()
        .enumerate()
        .fold(0usize, |best, (i, &p)| if p > probs[best] { i } else { best });
    VeracityOutput {
        probs,
        predicted,
        probs_node,
        h_dagger,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentence_selector::ExplanationItem;
    use rand::SeedableRng;

    fn vector(graph: &mut Graph, entries: &[f64]) -> NodeId {
        graph.constant(Array1::from(entries.to_vec()))
    }

    fn head_fixture(dim: usize, classes: usize, dropout: f64) -> (ParamStore, VeracityHeadParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let head = VeracityHeadParams::init(&mut store, dim, classes, dropout, &mut rng);
        (store, head)
    }

    #[test]
    fn report_pool_takes_componentwise_max() {
        let mut graph = Graph::new();
        let a = vector(&mut graph, &[1.0, -2.0, 0.5]);
        let b = vector(&mut graph, &[0.0, 3.0, 0.5]);
        let pooled = aggregate_reports(&mut graph, &[a, b]);
        assert_eq!(graph.value(pooled).as_slice().unwrap(), &[1.0, 3.0, 0.5]);
    }

    #[test]
    fn report_pool_is_permutation_invariant() {
        let rows: Vec<Vec<f64>> = vec![
            vec![0.3, -1.0, 2.0, 0.1],
            vec![-0.5, 4.0, 1.0, 0.0],
            vec![0.9, 0.9, -3.0, 0.2],
        ];
        let mut graph = Graph::new();
        let fwd: Vec<NodeId> = rows.iter().map(|r| vector(&mut graph, r)).collect();
        let rev: Vec<NodeId> = rows.iter().rev().map(|r| vector(&mut graph, r)).collect();
        let a = aggregate_reports(&mut graph, &fwd);
        let b = aggregate_reports(&mut graph, &rev);
        assert_eq!(graph.value(a), graph.value(b));
    }

    #[test]
    fn single_report_pool_is_identity() {
        let mut graph = Graph::new();
        let a = vector(&mut graph, &[0.4, -0.7]);
        let pooled = aggregate_reports(&mut graph, &[a]);
        assert_eq!(graph.value(pooled), graph.value(a));
    }

    #[test]
    fn explanation_pool_rejects_empty_sets() {
        let mut graph = Graph::new();
        let set = ExplanationSet {
            items: Vec::new(),
            report_pooled: Vec::new(),
            text: String::new(),
        };
        assert!(aggregate_explanations(&mut graph, &set).is_err());
    }

    #[test]
    fn two_level_pool_equals_flat_pool() {
        // Group {s1, s2} | {s3} pooled per group then across groups must match
        // pooling all three sentences at once.
        let mut graph = Graph::new();
        let s1 = vector(&mut graph, &[1.0, -1.0, 0.0]);
        let s2 = vector(&mut graph, &[0.5, 2.0, -3.0]);
        let s3 = vector(&mut graph, &[-2.0, 0.0, 4.0]);
        let g1 = graph.max_pool(&[s1, s2]);
        let g2 = graph.max_pool(&[s3]);
        let set = ExplanationSet {
            items: vec![
                ExplanationItem { report: 0, sentence: 0, text: "a".into() },
                ExplanationItem { report: 0, sentence: 1, text: "b".into() },
                ExplanationItem { report: 1, sentence: 0, text: "c".into() },
            ],
            report_pooled: vec![g1, g2],
            text: "a b c".into(),
        };
        let two_level = aggregate_explanations(&mut graph, &set).unwrap();
        let flat = graph.max_pool(&[s1, s2, s3]);
        assert_eq!(graph.value(two_level), graph.value(flat));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let dim = 5;
        let (store, head) = head_fixture(dim, 4, 0.0);
        let mut graph = Graph::new();
        let c = vector(&mut graph, &[0.1, -0.3, 0.5, 0.7, -0.9]);
        let d = vector(&mut graph, &[1.0, 0.2, -0.1, 0.0, 0.3]);
        let e = vector(&mut graph, &[-0.4, 0.6, 0.8, -0.2, 0.1]);
        let out = predict_veracity(&mut graph, &store, &head, c, d, e, false, None);
        let total: f64 = out.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(out.predicted < 4);
        assert_eq!(graph.value(out.h_dagger).len(), 3 * dim);
    }

    #[test]
    fn inference_is_deterministic_even_with_dropout_configured() {
        let dim = 3;
        let (store, head) = head_fixture(dim, 3, 0.4);
        let run = || {
            let mut graph = Graph::new();
            let c = vector(&mut graph, &[0.1, 0.2, 0.3]);
            let d = vector(&mut graph, &[0.4, 0.5, 0.6]);
            let e = vector(&mut graph, &[0.7, 0.8, 0.9]);
            predict_veracity(&mut graph, &store, &head, c, d, e, false, None).probs
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_dropout_scales_or_zeroes_inputs() {
        // With dropout close to 1 most mask entries are zero; the output must
        // still be a valid distribution and differ between draws.
        let dim = 6;
        let (store, head) = head_fixture(dim, 3, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let mut graph = Graph::new();
            let c = vector(&mut graph, &[0.1, -0.2, 0.3, -0.4, 0.5, -0.6]);
            let d = vector(&mut graph, &[0.6, 0.5, 0.4, 0.3, 0.2, 0.1]);
            let e = vector(&mut graph, &[-0.1, 0.2, -0.3, 0.4, -0.5, 0.6]);
            let out =
                predict_veracity(&mut graph, &store, &head, c, d, e, true, Some(&mut rng));
            let total: f64 = out.probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            outputs.push(out.probs);
        }
        assert_ne!(outputs[0], outputs[1]);
    }

    #[test]
    fn cross_entropy_gradients_match_finite_differences() {
        let dim = 4;
        let classes = 3;
        let gold = 1usize;
        let (store, head) = head_fixture(dim, classes, 0.0);

        let c = [0.2, -0.5, 0.7, 0.1];
        let d = [0.9, 0.3, -0.2, 0.4];
        let e = [-0.6, 0.1, 0.5, -0.3];

        let eval = |store: &ParamStore| {
            let mut graph = Graph::new();
            let cn = graph.constant(Array1::from(c.to_vec()));
            let dn = graph.constant(Array1::from(d.to_vec()));
            let en = graph.constant(Array1::from(e.to_vec()));
            let out = predict_veracity(&mut graph, store, &head, cn, dn, en, false, None);
            let picked = graph.slice(out.probs_node, gold, 1);
            let logp = graph.log_clamped(picked, 1e-12);
            let loss = graph.affine(logp, -1.0, 0.0);
            let value = graph.scalar(loss);
            (graph, loss, value)
        };

        let (graph, loss, _) = eval(&store);
        let grads = graph.backward(&store, loss);
        let h = 1e-5;
        for pid in [head.w1, head.b1, head.w2, head.b2] {
            let analytic = grads.tensor(pid);
            let len = store.tensor(pid).len();
            let stride = (len / 7).max(1);
            for flat in (0..len).step_by(stride) {
                let (_, _, plus) = eval(&store.clone_with(pid, flat, h));
                let (_, _, minus) = eval(&store.clone_with(pid, flat, -h));
                let numeric = (plus - minus) / (2.0 * h);
                let got = analytic.get_flat(flat);
                let denom = numeric.abs().max(got.abs()).max(1.0);
                assert!(
                    ((numeric - got) / denom).abs() < 1e-4,
                    "{}[{flat}]: numeric {numeric} vs analytic {got}",
                    store.name(pid)
                );
            }
        }
    }
}
