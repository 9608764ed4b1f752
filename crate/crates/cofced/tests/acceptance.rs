//! Acceptance suite. Each test checks one release criterion and prints a
//! single PASS/FAIL verdict line (visible with `-- --nocapture`, or in the
//! failure output otherwise).

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cofced::annotator::{annotate_case, AnnotationConfig, Thresholds};
use cofced::autodiff::{Graph, ParamStore};
use cofced::cli::{cmd_annotate, cmd_evaluate, cmd_train, evaluate_model, RunConfig};
use cofced::corpus::{generate_synthetic, save_corpus, ClaimCase, LabelScheme, ReportDoc, Sentence};
use cofced::encoder::{build_embedder, encode_sentence, EncoderConfig, EncoderKind, SentenceEmbedder};
use cofced::metrics::{MetricsDoc, MetricsMeta};
use cofced::model::{Model, ModelConfig};
use cofced::report_selector::{score_reports, AttentionParams};
use cofced::sentence_selector::{score_sentence, SelectorParams};
use cofced::training::{
    fit, loss_report, loss_sentence, loss_veracity, maw_update, TaskLosses, TrainConfig,
};

fn criterion(n: usize, name: &str, failures: &[String]) {
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("criterion {n} ({name}): {verdict}");
    for f in failures {
        println!("  - {f}");
    }
    assert!(failures.is_empty(), "criterion {n} ({name}) failed");
}

fn hash_config(dim: usize) -> EncoderConfig {
    EncoderConfig {
        dim,
        kind: EncoderKind::Hash,
        recurrent_hidden: dim / 2,
    }
}

// ---------------------------------------------------------------------------
// 1. Adaptive weight conservation.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_adaptive_weight_conservation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = Vec::new();

    let random_history = |rng: &mut ChaCha8Rng, len: usize| -> Vec<TaskLosses> {
        (0..len)
            .map(|_| TaskLosses {
                report: rng.gen_range(1e-3..10.0),
                sentence: rng.gen_range(1e-3..10.0),
                veracity: rng.gen_range(1e-3..10.0),
            })
            .collect()
    };

    for trial in 0..1000 {
        let t = rng.gen_range(3..=50);
        let history = random_history(&mut rng, t - 1);
        let (bd, bs, bc) = maw_update(&history, t, 8.0);
        let sum = bd + bs + bc;
        if (sum - 3.0).abs() > 1e-6 {
            failures.push(format!("trial {trial}: t={t}, beta sum {sum} != 3"));
            break;
        }
        // Extreme loss ratios may saturate the softmax, driving a weight to
        // exactly 0; conservation is the invariant, positivity is not.
        if !(bd >= 0.0 && bs >= 0.0 && bc >= 0.0 && sum.is_finite()) {
            failures.push(format!("trial {trial}: t={t}, invalid betas ({bd}, {bs}, {bc})"));
            break;
        }
    }

    for t in [1usize, 2] {
        let history = random_history(&mut rng, t.saturating_sub(1));
        let betas = maw_update(&history, t, 8.0);
        if betas != (0.5, 0.5, 0.5) {
            failures.push(format!("t={t}: expected exactly (0.5, 0.5, 0.5), got {betas:?}"));
        }
    }

    for _ in 0..100 {
        let history = random_history(&mut rng, 2);
        let (bd, bs, bc) = maw_update(&history, 3, 8.0);
        for (name, b) in [("report", bd), ("sentence", bs), ("veracity", bc)] {
            if (b - 1.0).abs() > 1e-9 {
                failures.push(format!("t=3: beta_{name} = {b}, expected 1 within 1e-9"));
            }
        }
        if !failures.is_empty() {
            break;
        }
    }

    if start.elapsed() >= Duration::from_secs(5) {
        failures.push(format!("runtime {:?} exceeds 5 s", start.elapsed()));
    }
    criterion(1, "adaptive weight conservation", &failures);
}

// ---------------------------------------------------------------------------
// 2. Gradient correctness against central finite differences.
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
const FD_RTOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0))
}

/// Central finite difference of `eval` along one parameter entry.
fn central_diff(
    store: &ParamStore,
    id: cofced::autodiff::ParamId,
    idx: usize,
    eval: &dyn Fn(&ParamStore) -> f64,
) -> f64 {
    let plus = eval(&store.clone_with(id, idx, FD_STEP));
    let minus = eval(&store.clone_with(id, idx, -FD_STEP));
    (plus - minus) / (2.0 * FD_STEP)
}

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let start = Instant::now();
    let dim = 8;
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    // (a) Sentence score wrt the four selector parameter tensors.
    for case_idx in 0..20 {
        let mut store = ParamStore::new();
        let params = SelectorParams::init(&mut store, dim, &mut rng);
        let claim = random_vec(&mut rng, dim);
        let sentence = random_vec(&mut rng, dim);
        let report = random_vec(&mut rng, dim);
        let redundancy = random_vec(&mut rng, dim);

        let eval = |s: &ParamStore| -> f64 {
            let mut g = Graph::new();
            let c = g.constant(claim.clone());
            let x = g.constant(sentence.clone());
            let r = g.constant(report.clone());
            let d = g.constant(redundancy.clone());
            let score = score_sentence(&mut g, s, &params, c, x, r, d);
            g.scalar(score.p)
        };

        let mut g = Graph::new();
        let c = g.constant(claim.clone());
        let x = g.constant(sentence.clone());
        let r = g.constant(report.clone());
        let d = g.constant(redundancy.clone());
        let score = score_sentence(&mut g, &store, &params, c, x, r, d);
        let grads = g.backward(&store, score.p);

        for (name, id) in [
            ("w_c", params.w_c),
            ("w_s", params.w_s),
            ("w_r", params.w_r),
            ("w_d", params.w_d),
        ] {
            let len = store.tensor(id).flat().len();
            for idx in 0..len {
                let fd = central_diff(&store, id, idx, &eval);
                let an = grads.tensor(id).get_flat(idx);
                if rel_err(fd, an) >= FD_RTOL && (fd - an).abs() >= 1e-8 {
                    failures.push(format!(
                        "case {case_idx}, sentence score d/d{name}[{idx}]: fd {fd:.10e} vs analytic {an:.10e}"
                    ));
                }
            }
        }
        if !failures.is_empty() {
            break;
        }
    }

    // (b) Report attention wrt the bilinear matrix, probed through a fixed
    // random linear functional of alpha.
    for case_idx in 0..20 {
        let mut store = ParamStore::new();
        let params = AttentionParams::init(&mut store, dim, &mut rng);
        let claim = random_vec(&mut rng, dim);
        let n_docs = rng.gen_range(2..=5);
        let docs: Vec<Array1<f64>> = (0..n_docs).map(|_| random_vec(&mut rng, dim)).collect();
        let probe = random_vec(&mut rng, n_docs);

        let eval = |s: &ParamStore| -> f64 {
            let mut g = Graph::new();
            let c = g.constant(claim.clone());
            let doc_nodes: Vec<_> = docs.iter().map(|d| g.constant(d.clone())).collect();
            let alpha = score_reports(&mut g, s, &params, c, &doc_nodes);
            let probe_node = g.constant(probe.clone());
            let loss = g.dot(alpha, probe_node);
            g.scalar(loss)
        };

        let mut g = Graph::new();
        let c = g.constant(claim.clone());
        let doc_nodes: Vec<_> = docs.iter().map(|d| g.constant(d.clone())).collect();
        let alpha = score_reports(&mut g, &store, &params, c, &doc_nodes);
        let probe_node = g.constant(probe.clone());
        let loss = g.dot(alpha, probe_node);
        let grads = g.backward(&store, loss);

        let len = store.tensor(params.w_alpha).flat().len();
        for idx in 0..len {
            let fd = central_diff(&store, params.w_alpha, idx, &eval);
            let an = grads.tensor(params.w_alpha).get_flat(idx);
            if rel_err(fd, an) >= FD_RTOL && (fd - an).abs() >= 1e-8 {
                failures.push(format!(
                    "case {case_idx}, alpha d/dw_alpha[{idx}]: fd {fd:.10e} vs analytic {an:.10e}"
                ));
            }
        }
        if !failures.is_empty() {
            break;
        }
    }

    // (c) Weighted total loss wrt a random 32-entry parameter slice, on a
    // full forward pass. Entries whose perturbation flips a discrete
    // selection are re-drawn: the loss is not differentiable there.
    let scheme = LabelScheme::synthetic(3);
    let cases = generate_synthetic(20, 3, 3, 77).expect("synthetic corpus");
    let encoder = hash_config(dim);
    let embedder = build_embedder(&encoder, 7, None).expect("embedder");
    let config = ModelConfig {
        encoder,
        classes: 3,
        k: 2,
        dropout: 0.0,
        cumulative_redundancy: false,
    };

    #[derive(PartialEq, Clone)]
    struct Structure {
        reports: Vec<usize>,
        sentences: Vec<bool>,
    }
    let total_loss = |model: &Model, case: &ClaimCase, gold: usize| -> (f64, Structure) {
        let mut fwd = model
            .forward(embedder.as_ref(), case, false, None)
            .expect("forward");
        let y_d: Vec<bool> = case.reports.iter().map(|r| r.is_evidence_report).collect();
        let labels: Vec<bool> = fwd
            .decisions
            .iter()
            .map(|d| case.reports[d.report].sentences[d.sentence].is_evidence)
            .collect();
        let l_d = loss_report(&mut fwd.graph, fwd.alpha, &y_d, false);
        let l_s = loss_sentence(&mut fwd.graph, &fwd.decisions, &labels, false);
        let l_c = loss_veracity(&mut fwd.graph, fwd.veracity.probs_node, gold).expect("gold");
        let hd = fwd.graph.affine(l_d, 0.5, 0.0);
        let hs = fwd.graph.affine(l_s, 0.5, 0.0);
        let hc = fwd.graph.affine(l_c, 0.5, 0.0);
        let partial = fwd.graph.add(hd, hs);
        let total = fwd.graph.add(partial, hc);
        let structure = Structure {
            reports: fwd.selection.selected.clone(),
            sentences: fwd.decisions.iter().map(|d| d.selected).collect(),
        };
        (fwd.graph.scalar(total), structure)
    };

    for (case_idx, case) in cases.iter().enumerate() {
        let mut model = Model::new(config.clone(), 900 + case_idx as u64).expect("model");
        let gold = scheme.label_index(&case.label).expect("label");

        // Analytic gradients from one taped forward pass.
        let mut fwd = model
            .forward(embedder.as_ref(), case, false, None)
            .expect("forward");
        let y_d: Vec<bool> = case.reports.iter().map(|r| r.is_evidence_report).collect();
        let labels: Vec<bool> = fwd
            .decisions
            .iter()
            .map(|d| case.reports[d.report].sentences[d.sentence].is_evidence)
            .collect();
        let l_d = loss_report(&mut fwd.graph, fwd.alpha, &y_d, false);
        let l_s = loss_sentence(&mut fwd.graph, &fwd.decisions, &labels, false);
        let l_c = loss_veracity(&mut fwd.graph, fwd.veracity.probs_node, gold).expect("gold");
        let hd = fwd.graph.affine(l_d, 0.5, 0.0);
        let hs = fwd.graph.affine(l_s, 0.5, 0.0);
        let hc = fwd.graph.affine(l_c, 0.5, 0.0);
        let partial = fwd.graph.add(hd, hs);
        let total = fwd.graph.add(partial, hc);
        let grads = fwd.graph.backward(&model.store, total);
        let (_, base_structure) = total_loss(&model, case, gold);

        let names: Vec<String> = model.store.iter().map(|(n, _)| n.to_string()).collect();
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 32 && attempts < 500 {
            attempts += 1;
            let name = &names[rng.gen_range(0..names.len())];
            let id = model.store.id(name).expect("registered parameter");
            let len = model.store.tensor(id).flat().len();
            let idx = rng.gen_range(0..len);
            let an = grads.tensor(id).get_flat(idx);

            model.store.tensor_mut(id).add_flat(idx, FD_STEP);
            let (plus, s_plus) = total_loss(&model, case, gold);
            model.store.tensor_mut(id).add_flat(idx, -2.0 * FD_STEP);
            let (minus, s_minus) = total_loss(&model, case, gold);
            model.store.tensor_mut(id).add_flat(idx, FD_STEP);
            if s_plus != base_structure || s_minus != base_structure {
                continue; // crossed a selection boundary; not differentiable
            }
            checked += 1;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            if rel_err(fd, an) >= FD_RTOL && (fd - an).abs() >= 1e-8 {
                failures.push(format!(
                    "case {case_idx}, total loss d/d{name}[{idx}]: fd {fd:.10e} vs analytic {an:.10e}"
                ));
            }
        }
        if checked < 32 {
            failures.push(format!(
                "case {case_idx}: only {checked} differentiable entries found in {attempts} draws"
            ));
        }
        if !failures.is_empty() {
            break;
        }
    }

    if start.elapsed() >= Duration::from_secs(30) {
        failures.push(format!("runtime {:?} exceeds 30 s", start.elapsed()));
    }
    criterion(2, "gradients match finite differences", &failures);
}

// ---------------------------------------------------------------------------
// 3. Annotation oracle equivalence with an independent brute force.
// ---------------------------------------------------------------------------

fn bf_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn bf_split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        if matches!(chars[i], '.' | '!' | '?')
            && (i + 1 == chars.len() || chars[i + 1].is_whitespace())
        {
            pieces.push(chars[start..=i].iter().collect::<String>());
            start = i + 1;
        }
    }
    if start < chars.len() {
        pieces.push(chars[start..].iter().collect::<String>());
    }
    pieces
        .into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty() && !bf_tokenize(p).is_empty())
        .collect()
}

/// Multiset n-gram intersection via sorted two-pointer sweep.
fn bf_ngram_matches(a: &[String], b: &[String], n: usize) -> usize {
    let mut ga: Vec<&[String]> = a.windows(n).collect();
    let mut gb: Vec<&[String]> = b.windows(n).collect();
    ga.sort();
    gb.sort();
    let (mut i, mut j, mut matches) = (0, 0, 0);
    while i < ga.len() && j < gb.len() {
        match ga[i].cmp(gb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                matches += 1;
                i += 1;
                j += 1;
            }
        }
    }
    matches
}

fn bf_rouge_n(cand: &[String], reference: &[String], n: usize) -> f64 {
    if cand.len() < n || reference.len() < n {
        return 0.0;
    }
    let m = bf_ngram_matches(cand, reference, n) as f64;
    let p = m / (cand.len() - n + 1) as f64;
    let r = m / (reference.len() - n + 1) as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// LCS by memoized recursion (the library uses an iterative rolling table).
fn bf_lcs(a: &[String], b: &[String]) -> usize {
    fn go<'m>(
        a: &[String],
        b: &[String],
        i: usize,
        j: usize,
        memo: &'m mut Vec<Vec<Option<usize>>>,
    ) -> usize {
        if i == 0 || j == 0 {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i - 1] == b[j - 1] {
            go(a, b, i - 1, j - 1, memo) + 1
        } else {
            go(a, b, i - 1, j, memo).max(go(a, b, i, j - 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, a.len(), b.len(), &mut memo)
}

fn bf_rouge_l(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = bf_lcs(cand, reference) as f64;
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn bf_cosine(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len());
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for i in 0..u.len() {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    dot / (nu.sqrt() * nv.sqrt())
}

/// All (sentence, gold-sentence) pairs against all four thresholds, with the
/// same per-case cap rule, written from the contract rather than the code.
fn bf_annotate(
    case: &ClaimCase,
    embedder: &dyn SentenceEmbedder,
    config: &AnnotationConfig,
) -> Vec<Vec<bool>> {
    let golds = bf_split_sentences(&case.explain);
    assert!(!golds.is_empty(), "brute force needs a gold justification");
    let gold_toks: Vec<Vec<String>> = golds.iter().map(|g| bf_tokenize(g)).collect();
    let gold_embs: Vec<Vec<f64>> = golds
        .iter()
        .map(|g| encode_sentence(g, embedder).unwrap().to_vec())
        .collect();
    let thr = &config.thresholds;

    let mut qualifying: Vec<(usize, usize, f64)> = Vec::new();
    for (ri, report) in case.reports.iter().enumerate() {
        for (si, sent) in report.sentences.iter().enumerate() {
            let toks = bf_tokenize(&sent.text);
            let emb = encode_sentence(&sent.text, embedder).unwrap().to_vec();
            let mut passes = false;
            let mut rank = 0.0f64;
            for (gt, ge) in gold_toks.iter().zip(&gold_embs) {
                let r1 = bf_rouge_n(&toks, gt, 1);
                let r2 = bf_rouge_n(&toks, gt, 2);
                let rl = bf_rouge_l(&toks, gt);
                rank = rank.max(r1 + r2 + rl);
                if r1 >= thr.rouge1_min
                    && r2 >= thr.rouge2_min
                    && rl >= thr.rougel_min
                    && bf_cosine(&emb, ge) >= thr.cosine_min
                {
                    passes = true;
                }
            }
            if passes {
                qualifying.push((ri, si, rank));
            }
        }
    }
    if qualifying.len() > config.max_oracles {
        qualifying.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then((a.0, a.1).cmp(&(b.0, b.1)))
        });
        qualifying.truncate(config.max_oracles);
    }

    let mut flags: Vec<Vec<bool>> = case
        .reports
        .iter()
        .map(|r| vec![false; r.sentences.len()])
        .collect();
    for (ri, si, _) in qualifying {
        flags[ri][si] = true;
    }
    flags
}

#[test]
fn criterion_3_annotation_matches_brute_force() {
    let mut failures = Vec::new();
    let cases = generate_synthetic(10, 3, 3, 31).expect("synthetic corpus");
    let embedder = build_embedder(&hash_config(32), 7, None).expect("embedder");

    let configs = [
        AnnotationConfig::default(),
        AnnotationConfig {
            thresholds: Thresholds {
                rouge1_min: 0.15,
                rouge2_min: 0.05,
                rougel_min: 0.12,
                cosine_min: 0.5,
            },
            max_oracles: 4, // small enough to force the cap rule into play
            recall_thresholds: false,
        },
    ];

    for (ci, config) in configs.iter().enumerate() {
        let mut mismatches = 0;
        for case in &cases {
            let annotated = annotate_case(case, embedder.as_ref(), config).expect("annotate");
            let expected = bf_annotate(case, embedder.as_ref(), config);
            for (ri, report) in annotated.reports.iter().enumerate() {
                for (si, sent) in report.sentences.iter().enumerate() {
                    if sent.is_evidence != expected[ri][si] {
                        mismatches += 1;
                        if mismatches <= 3 {
                            failures.push(format!(
                                "config {ci}, claim {}, report {ri}, sentence {si}: library {} vs brute force {}",
                                case.claim_id, sent.is_evidence, expected[ri][si]
                            ));
                        }
                    }
                }
                let expected_report = expected[ri].iter().any(|&b| b);
                if report.is_evidence_report != expected_report {
                    mismatches += 1;
                    failures.push(format!(
                        "config {ci}, claim {}, report {ri}: report flag {} vs brute force {}",
                        case.claim_id, report.is_evidence_report, expected_report
                    ));
                }
            }
        }
        if mismatches > 0 {
            failures.push(format!("config {ci}: {mismatches} mismatches in total"));
        }
    }
    criterion(3, "annotation matches brute force", &failures);
}

// ---------------------------------------------------------------------------
// 4. ROUGE golden fixtures.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_rouge_golden_values() {
    use cofced::annotator::{rouge_l_f1, rouge_n_f1, tokenize};
    let mut failures = Vec::new();
    let fixtures: [(&str, f64, Box<dyn Fn() -> f64>); 5] = [
        (
            "rouge-1 of 'the cat sat on the mat' vs 'the cat'",
            0.5,
            Box::new(|| {
                rouge_n_f1(&tokenize("the cat sat on the mat"), &tokenize("the cat"), 1)
            }),
        ),
        (
            "rouge-1 of identical texts",
            1.0,
            Box::new(|| {
                rouge_n_f1(&tokenize("every word lines up"), &tokenize("every word lines up"), 1)
            }),
        ),
        (
            "rouge-2 with no shared bigram",
            0.0,
            Box::new(|| rouge_n_f1(&tokenize("a b"), &tokenize("b a"), 2)),
        ),
        (
            "rouge-l of 'the cat sat' vs 'the cat'",
            0.8,
            Box::new(|| rouge_l_f1(&tokenize("the cat sat"), &tokenize("the cat"))),
        ),
        (
            "rouge-l of reversed token order",
            1.0 / 3.0,
            Box::new(|| rouge_l_f1(&tokenize("c b a"), &tokenize("a b c"))),
        ),
    ];
    for (name, expected, compute) in &fixtures {
        let got = compute();
        if (got - expected).abs() > 1e-9 {
            failures.push(format!("{name}: got {got}, expected {expected}"));
        }
    }
    criterion(4, "rouge golden values", &failures);
}

// ---------------------------------------------------------------------------
// 5 & 8. End-to-end overfit and explanation baseline ordering (shared run).
// ---------------------------------------------------------------------------

struct OverfitRun {
    doc: MetricsDoc,
    train_seconds: f64,
}

static OVERFIT: OnceLock<OverfitRun> = OnceLock::new();

fn overfit_run() -> &'static OverfitRun {
    OVERFIT.get_or_init(|| {
        let raw = generate_synthetic(24, 3, 4, 5).expect("synthetic corpus");
        let scheme = LabelScheme::synthetic(3);
        let encoder = hash_config(64);
        let train = TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 60,
            k: 3,
            dropout: 0.0,
            seed: 7,
            ..TrainConfig::default()
        };
        let embedder = build_embedder(&encoder, train.seed, None).expect("embedder");
        let (cases, _) = cofced::annotator::annotate_corpus(
            &raw,
            embedder.as_ref(),
            &AnnotationConfig::default(),
        )
        .expect("annotation");

        let started = Instant::now();
        let result = fit(&cases, &[], &scheme, embedder.as_ref(), &train, &encoder)
            .expect("training");
        let train_seconds = started.elapsed().as_secs_f64();

        let mut best = Model::new(result.model.config.clone(), train.seed).expect("model");
        best.store = result.best_params.clone();
        let doc = evaluate_model(
            &best,
            embedder.as_ref(),
            &cases,
            &scheme,
            5,
            30,
            MetricsMeta {
                seed: train.seed,
                checkpoint: String::new(),
                dataset: String::new(),
            },
        )
        .expect("evaluation");
        OverfitRun { doc, train_seconds }
    })
}

#[test]
fn criterion_5_end_to_end_overfit() {
    let run = overfit_run();
    let mut failures = Vec::new();
    let accuracy = run.doc.veracity.accuracy;
    if accuracy < 0.95 {
        failures.push(format!("train veracity accuracy {accuracy:.4} < 0.95"));
    }
    let sentence_f1 = run.doc.sentence_selection.per_class[1].f1;
    if sentence_f1 < 0.80 {
        failures.push(format!("train sentence-selection F1 {sentence_f1:.4} < 0.80"));
    }
    if run.train_seconds >= 300.0 {
        failures.push(format!("training took {:.1} s, budget 300 s", run.train_seconds));
    }
    criterion(5, "end-to-end overfit", &failures);
}

#[test]
fn criterion_8_explanation_baseline_ordering() {
    let run = overfit_run();
    let mut failures = Vec::new();
    let model = run.doc.explanation.model.rouge1;
    let lead = run.doc.explanation.lead_n.rouge1;
    let oracle = run.doc.explanation.oracle.rouge1;
    if oracle < lead {
        failures.push(format!("oracle rouge-1 {oracle:.4} < lead-5 rouge-1 {lead:.4}"));
    }
    if model < lead {
        failures.push(format!("model rouge-1 {model:.4} < lead-5 rouge-1 {lead:.4}"));
    }
    criterion(8, "explanation baseline ordering", &failures);
}

// ---------------------------------------------------------------------------
// 6. Structural invariants on random inputs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_structural_invariants() {
    let mut failures = Vec::new();
    let dim = 16;
    let k = 3;
    let config = ModelConfig {
        encoder: hash_config(dim),
        classes: 3,
        k,
        dropout: 0.0,
        cumulative_redundancy: false,
    };
    let model = Model::new(config, 9).expect("model");
    let embedder = build_embedder(&hash_config(dim), 9, None).expect("embedder");
    let mut rng = ChaCha8Rng::seed_from_u64(606);

    const VOCAB: &[&str] = &[
        "moss", "river", "signal", "orbit", "quartz", "ember", "delta", "harbor", "lattice",
        "comet", "fjord", "saffron", "ridge", "pylon", "drift", "auburn", "cipher", "tundra",
        "velvet", "zenith", "basalt", "meadow", "onyx", "spire",
    ];
    let random_text = |rng: &mut ChaCha8Rng, words: usize| -> String {
        (0..words)
            .map(|_| *VOCAB.choose(rng).expect("vocab"))
            .collect::<Vec<_>>()
            .join(" ")
    };

    for case_idx in 0..200 {
        let n_reports = rng.gen_range(1..=6);
        let reports: Vec<ReportDoc> = (0..n_reports)
            .map(|ri| {
                let n_sents = rng.gen_range(1..=5);
                let sentences = (0..n_sents)
                    .map(|_| {
                        let words = rng.gen_range(3..=7);
                        Sentence::new(random_text(&mut rng, words))
                    })
                    .collect();
                ReportDoc::new(format!("case{case_idx}-r{ri}"), sentences)
            })
            .collect();
        let claim_words = rng.gen_range(3..=8);
        let case = ClaimCase {
            claim_id: format!("case-{case_idx}"),
            claim: random_text(&mut rng, claim_words),
            label: "class-0".into(),
            explain: String::new(),
            reports,
            extra: Default::default(),
        };

        let fwd = model.predict(embedder.as_ref(), &case).expect("forward");

        let expected = k.min(case.reports.len());
        if fwd.selection.selected.len() != expected {
            failures.push(format!(
                "case {case_idx}: selected {} reports, expected {expected}",
                fwd.selection.selected.len()
            ));
        }

        let covered: HashSet<usize> = fwd
            .decisions
            .iter()
            .filter(|d| d.selected)
            .map(|d| d.report)
            .collect();
        for &r in &fwd.selection.selected {
            if !covered.contains(&r) {
                failures.push(format!(
                    "case {case_idx}: selected report {r} contributed no sentence"
                ));
            }
        }

        let alpha_sum: f64 = fwd.selection.alpha.iter().sum();
        if (alpha_sum - 1.0).abs() > 1e-6 {
            failures.push(format!("case {case_idx}: alpha sums to {alpha_sum}"));
        }
        let prob_sum: f64 = fwd.veracity.probs.iter().sum();
        if (prob_sum - 1.0).abs() > 1e-6 {
            failures.push(format!(
                "case {case_idx}: class probabilities sum to {prob_sum}"
            ));
        }

        // Pooled report representation is invariant to report order.
        let h_dagger = fwd.graph.value(fwd.veracity.h_dagger).to_vec();
        let h_docs = &h_dagger[dim..2 * dim];
        let mut shuffled = case.clone();
        shuffled.reports.shuffle(&mut rng);
        let fwd2 = model.predict(embedder.as_ref(), &shuffled).expect("forward");
        let h_dagger2 = fwd2.graph.value(fwd2.veracity.h_dagger).to_vec();
        let h_docs2 = &h_dagger2[dim..2 * dim];
        for i in 0..dim {
            if (h_docs[i] - h_docs2[i]).abs() > 1e-12 {
                failures.push(format!(
                    "case {case_idx}: pooled report vector changed under permutation at {i}"
                ));
                break;
            }
        }

        // Two-level explanation pooling equals one flat max over all
        // selected sentence vectors.
        let h_expl = &h_dagger[2 * dim..3 * dim];
        let mut flat = vec![f64::NEG_INFINITY; dim];
        for item in &fwd.explanation.items {
            let v = fwd
                .graph
                .value(fwd.encoded.reports[item.report].contextual[item.sentence]);
            for i in 0..dim {
                flat[i] = flat[i].max(v[i]);
            }
        }
        for i in 0..dim {
            if (h_expl[i] - flat[i]).abs() > 1e-12 {
                failures.push(format!(
                    "case {case_idx}: two-level explanation pooling differs from flat at {i}"
                ));
                break;
            }
        }

        if failures.len() > 10 {
            break;
        }
    }
    criterion(6, "structural invariants", &failures);
}

// ---------------------------------------------------------------------------
// 7. Determinism and persistence round-trip.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_determinism_and_persistence() {
    let mut failures = Vec::new();
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();

    let mut rc = RunConfig::default();
    rc.scheme = "synthetic-3".into();
    rc.dim = 16;
    rc.train.max_epochs = 2;
    rc.train.k = 2;
    rc.train.learning_rate = 1e-3;
    rc.train.dropout = 0.1;
    rc.train.seed = 33;

    let raw = root.join("raw.jsonl");
    let annotated = root.join("annotated.jsonl");
    let cases = generate_synthetic(12, 3, 3, 21).expect("synthetic corpus");
    save_corpus(&raw, &cases).expect("save corpus");
    cmd_annotate(&raw, &annotated, &rc).expect("annotate");

    let run_a = root.join("run_a");
    let run_b = root.join("run_b");
    cmd_train(&annotated, Some(&annotated), &run_a, &rc).expect("train a");
    cmd_train(&annotated, Some(&annotated), &run_b, &rc).expect("train b");

    let log_a = std::fs::read(run_a.join("loss_log.jsonl")).expect("loss log a");
    let log_b = std::fs::read(run_b.join("loss_log.jsonl")).expect("loss log b");
    if log_a != log_b {
        failures.push("same-seed training runs wrote different loss logs".into());
    }
    let ckpt_a = std::fs::read(run_a.join("checkpoint.json")).expect("checkpoint a");
    let ckpt_b = std::fs::read(run_b.join("checkpoint.json")).expect("checkpoint b");
    if ckpt_a != ckpt_b {
        failures.push("same-seed training runs wrote different checkpoints".into());
    }

    // The metrics computed in memory right after training must be
    // reproduced bit-exact by an evaluation that loads the checkpoint from
    // disk (same data, same meta fields).
    let eval_a = root.join("eval_a");
    let eval_b = root.join("eval_b");
    let checkpoint = run_a.join("checkpoint.json");
    cmd_evaluate(&annotated, &checkpoint, &eval_a, &rc).expect("evaluate a");
    cmd_evaluate(&annotated, &checkpoint, &eval_b, &rc).expect("evaluate b");

    let trained_metrics = std::fs::read(run_a.join("metrics_valid.json")).expect("train metrics");
    let eval_metrics_a = std::fs::read(eval_a.join("metrics.json")).expect("eval metrics a");
    let eval_metrics_b = std::fs::read(eval_b.join("metrics.json")).expect("eval metrics b");
    if trained_metrics != eval_metrics_a {
        failures.push("post-load evaluation metrics differ from in-memory metrics".into());
    }
    if eval_metrics_a != eval_metrics_b {
        failures.push("two evaluations of the same checkpoint differ".into());
    }
    criterion(7, "determinism and persistence", &failures);
}
