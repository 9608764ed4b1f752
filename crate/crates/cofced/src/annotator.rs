//! Silver evidence annotation and explanation baselines.
//!
//! A report sentence becomes evidence when it is similar enough to SOME
//! sentence of the gold justification, judged by three lexical scores
//! (ROUGE-1/2/L) and one semantic score (cosine over sentence embeddings),
//! all of which must clear their thresholds against that same gold sentence.
//! When more sentences qualify than the per-case cap allows, the
//! highest-scoring ones win. The module also provides the greedy best-ROUGE
//! oracle selection and the LEAD-N prefix baseline used to bracket model
//! explanations during evaluation.

use crate::corpus::ClaimCase;
use crate::encoder::{encode_sentence, SentenceEmbedder};
use crate::{Error, Result};
use ndarray::Array1;
use std::collections::HashMap;

/// Lowercase, strip punctuation to spaces, split on whitespace.
/// This is the single tokenizer behind every lexical score in the crate.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Multiset of n-grams as count map; empty when the text has < n tokens.
fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Size of the clipped multiset intersection of n-grams.
fn clipped_matches(a: &[String], b: &[String], n: usize) -> usize {
    let ca = ngram_counts(a, n);
    let cb = ngram_counts(b, n);
    ca.iter()
        .map(|(gram, &count)| count.min(cb.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// Recall-style overlap: clipped matches over the reference's n-gram count.
/// Zero when the reference has fewer than `n` tokens.
pub fn ngram_overlap(candidate: &[String], reference: &[String], n: usize) -> f64 {
    let ref_total = reference.len().saturating_sub(n - 1);
    if n == 0 || reference.len() < n {
        return 0.0;
    }
    clipped_matches(candidate, reference, n) as f64 / ref_total as f64
}

/// F1 of clipped n-gram precision and recall; 0 when either side lacks
/// n-grams.
pub fn rouge_n_f1(candidate: &[String], reference: &[String], n: usize) -> f64 {
    if n == 0 || candidate.len() < n || reference.len() < n {
        return 0.0;
    }
    let matches = clipped_matches(candidate, reference, n) as f64;
    let p = matches / (candidate.len() - n + 1) as f64;
    let r = matches / (reference.len() - n + 1) as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Longest common subsequence length.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            cur[j] = if a[i - 1] == b[j - 1] {
                prev[j - 1] + 1
            } else {
                prev[j].max(cur[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1 from LCS precision (LCS/|candidate|) and recall (LCS/|reference|).
pub fn rouge_l_f1(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Recall-style LCS overlap (LCS over reference length), the L-analog of
/// [`ngram_overlap`].
pub fn lcs_overlap(candidate: &[String], reference: &[String]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    lcs_len(candidate, reference) as f64 / reference.len() as f64
}

/// Standard cosine; 0 when either vector is zero.
pub fn cosine_similarity(u: &Array1<f64>, v: &Array1<f64>) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine: dimension mismatch");
    let nu = u.dot(u).sqrt();
    let nv = v.dot(v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    u.dot(v) / (nu * nv)
}

/// Collapse a source veracity label onto the three-way scheme.
pub fn standardize_label(raw: &str) -> Result<&'static str> {
    match raw.trim().to_lowercase().as_str() {
        "true" | "correct attribute" | "mostly true" => Ok("true"),
        "false" | "misattribute" | "mostly false" => Ok("false"),
        "mixture" | "unproven" | "half" => Ok("half"),
        _ => Err(Error::UnknownLabel {
            label: raw.to_string(),
            scheme: "standardized-3".into(),
        }),
    }
}

/// Similarity thresholds a sentence must clear (all at once, against one
/// gold sentence) to be labeled evidence.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Thresholds {
    pub rouge1_min: f64,
    pub rouge2_min: f64,
    pub rougel_min: f64,
    pub cosine_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            rouge1_min: 0.1,
            rouge2_min: 0.0,
            rougel_min: 0.1,
            cosine_min: 0.6,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rouge1_min", self.rouge1_min),
            ("rouge2_min", self.rouge2_min),
            ("rougel_min", self.rougel_min),
            ("cosine_min", self.cosine_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-candidate similarity maxima over the gold sentences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rougel: f64,
    pub cosine: f64,
}

/// Full annotation options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationConfig {
    pub thresholds: Thresholds,
    /// Keep at most this many evidence sentences per case.
    pub max_oracles: usize,
    /// Threshold on recall-style overlaps instead of F1 scores.
    pub recall_thresholds: bool,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            thresholds: Thresholds::default(),
            max_oracles: 30,
            recall_thresholds: false,
        }
    }
}

/// Split a justification into sentences at '.', '!' or '?' followed by
/// whitespace (or end of text). Deliberately simple and deterministic;
/// abbreviation splits are accepted noise.
pub fn split_explanation(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let c = chars[i];
        let boundary = matches!(c, '.' | '!' | '?')
            && (i + 1 == chars.len() || chars[i + 1].is_whitespace());
        if boundary {
            let s: String = chars[start..=i].iter().collect();
            let s = s.trim();
            if !s.is_empty() && !tokenize(s).is_empty() {
                out.push(s.to_string());
            }
            start = i + 1;
        }
    }
    if start < chars.len() {
        let s: String = chars[start..].iter().collect();
        let s = s.trim();
        if !s.is_empty() && !tokenize(s).is_empty() {
            out.push(s.to_string());
        }
    }
    out
}

struct GoldSentence {
    tokens: Vec<String>,
    embedding: Array1<f64>,
}

fn gold_sentences(case: &ClaimCase, embedder: &dyn SentenceEmbedder) -> Result<Vec<GoldSentence>> {
    let split = split_explanation(&case.explain);
    if split.is_empty() {
        return Err(Error::Invalid(format!(
            "cannot annotate without gold justification (claim {:?})",
            case.claim_id
        )));
    }
    split
        .iter()
        .map(|s| {
            Ok(GoldSentence {
                tokens: tokenize(s),
                embedding: encode_sentence(s, embedder)?,
            })
        })
        .collect()
}

/// Max similarity of `candidate` against each gold sentence, per metric
/// (F1 variants). Intended for diagnostics and tests.
pub fn similarity_scores(
    candidate: &str,
    explain: &str,
    embedder: &dyn SentenceEmbedder,
) -> Result<SimilarityScores> {
    let golds = split_explanation(explain);
    if golds.is_empty() {
        return Err(Error::Invalid(
            "cannot score similarity without gold justification".into(),
        ));
    }
    let toks = tokenize(candidate);
    let emb = encode_sentence(candidate, embedder)?;
    let mut out = SimilarityScores {
        rouge1: 0.0,
        rouge2: 0.0,
        rougel: 0.0,
        cosine: -1.0,
    };
    for gold in &golds {
        let gt = tokenize(gold);
        let ge = encode_sentence(gold, embedder)?;
        out.rouge1 = out.rouge1.max(rouge_n_f1(&toks, &gt, 1));
        out.rouge2 = out.rouge2.max(rouge_n_f1(&toks, &gt, 2));
        out.rougel = out.rougel.max(rouge_l_f1(&toks, &gt));
        out.cosine = out.cosine.max(cosine_similarity(&emb, &ge));
    }
    Ok(out)
}

/// Label every report sentence of `case` by thresholded similarity to the
/// gold justification; cap the positives; refresh report-level flags.
/// Idempotent: flags depend only on text, thresholds, and the embedder.
pub fn annotate_case(
    case: &ClaimCase,
    embedder: &dyn SentenceEmbedder,
    config: &AnnotationConfig,
) -> Result<ClaimCase> {
    config.thresholds.validate()?;
    let golds = gold_sentences(case, embedder)?;
    let thr = &config.thresholds;

    struct Candidate {
        report: usize,
        sentence: usize,
        rank: f64, // summed ROUGE-1+2+L F1, for the cap
    }
    let mut qualifying = Vec::new();

    for (ri, report) in case.reports.iter().enumerate() {
        for (si, sent) in report.sentences.iter().enumerate() {
            let toks = tokenize(&sent.text);
            let emb = encode_sentence(&sent.text, embedder)?;
            let mut passes = false;
            let mut rank = 0.0f64;
            for gold in &golds {
                let r1_f1 = rouge_n_f1(&toks, &gold.tokens, 1);
                let r2_f1 = rouge_n_f1(&toks, &gold.tokens, 2);
                let rl_f1 = rouge_l_f1(&toks, &gold.tokens);
                rank = rank.max(r1_f1 + r2_f1 + rl_f1);
                let (r1, r2, rl) = if config.recall_thresholds {
                    (
                        ngram_overlap(&toks, &gold.tokens, 1),
                        ngram_overlap(&toks, &gold.tokens, 2),
                        lcs_overlap(&toks, &gold.tokens),
                    )
                } else {
                    (r1_f1, r2_f1, rl_f1)
                };
                if r1 >= thr.rouge1_min
                    && r2 >= thr.rouge2_min
                    && rl >= thr.rougel_min
                    && cosine_similarity(&emb, &gold.embedding) >= thr.cosine_min
                {
                    passes = true;
                }
            }
            if passes {
                qualifying.push(Candidate {
                    report: ri,
                    sentence: si,
                    rank,
                });
            }
        }
    }

    if qualifying.len() > config.max_oracles {
        qualifying.sort_by(|a, b| {
            b.rank
                .partial_cmp(&a.rank)
                .expect("finite ranks")
                .then((a.report, a.sentence).cmp(&(b.report, b.sentence)))
        });
        qualifying.truncate(config.max_oracles);
    }

    let mut annotated = case.clone();
    for r in &mut annotated.reports {
        for s in &mut r.sentences {
            s.is_evidence = false;
        }
    }
    for c in &qualifying {
        annotated.reports[c.report].sentences[c.sentence].is_evidence = true;
    }
    annotated.refresh_evidence_flags();
    Ok(annotated)
}

/// Counts describing one annotation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct AnnotationSummary {
    pub cases: usize,
    pub evidence_sentences: usize,
    pub evidence_reports: usize,
    /// Cases where more sentences qualified than the cap allowed.
    pub capped_cases: usize,
}

/// Annotate every case; see [`annotate_case`].
pub fn annotate_corpus(
    cases: &[ClaimCase],
    embedder: &dyn SentenceEmbedder,
    config: &AnnotationConfig,
) -> Result<(Vec<ClaimCase>, AnnotationSummary)> {
    let mut out = Vec::with_capacity(cases.len());
    let mut summary = AnnotationSummary {
        cases: cases.len(),
        evidence_sentences: 0,
        evidence_reports: 0,
        capped_cases: 0,
    };
    for case in cases {
        let annotated = annotate_case(case, embedder, config)?;
        let positives: usize = annotated
            .reports
            .iter()
            .map(|r| r.sentences.iter().filter(|s| s.is_evidence).count())
            .sum();
        if positives == config.max_oracles {
            // Re-run the qualification count cheaply: capped iff the cap bound.
            // (annotate_case truncated exactly to the cap when it was exceeded.)
            let uncapped = annotate_case(
                case,
                embedder,
                &AnnotationConfig {
                    max_oracles: usize::MAX,
                    ..*config
                },
            )?;
            let total: usize = uncapped
                .reports
                .iter()
                .map(|r| r.sentences.iter().filter(|s| s.is_evidence).count())
                .sum();
            if total > config.max_oracles {
                summary.capped_cases += 1;
            }
        }
        summary.evidence_sentences += positives;
        summary.evidence_reports += annotated
            .reports
            .iter()
            .filter(|r| r.is_evidence_report)
            .count();
        out.push(annotated);
    }
    Ok((out, summary))
}

/// Join the referenced sentences (in positional order) into one candidate
/// explanation text.
pub fn concat_selection(case: &ClaimCase, refs: &[(usize, usize)]) -> String {
    let mut refs = refs.to_vec();
    refs.sort_unstable();
    refs.iter()
        .map(|&(r, s)| case.reports[r].sentences[s].text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Greedy best-first sentence subset maximizing ROUGE-1 F1 + ROUGE-2 F1 of
/// the concatenated selection against the gold justification. Stops when no
/// sentence strictly improves the sum or when `cap` sentences are selected.
/// Ties break toward the smaller (report, sentence) position.
pub fn greedy_oracle(case: &ClaimCase, cap: usize) -> Result<Vec<(usize, usize)>> {
    let gold = tokenize(&case.explain);
    if gold.is_empty() {
        return Err(Error::Invalid(format!(
            "cannot build oracle selection without gold justification (claim {:?})",
            case.claim_id
        )));
    }
    let mut selected: Vec<(usize, usize)> = Vec::new();
    let mut best_score = 0.0f64;
    let score_of = |refs: &[(usize, usize)]| {
        let toks = tokenize(&concat_selection(case, refs));
        rouge_n_f1(&toks, &gold, 1) + rouge_n_f1(&toks, &gold, 2)
    };
    while selected.len() < cap {
        let mut best: Option<((usize, usize), f64)> = None;
        for (ri, report) in case.reports.iter().enumerate() {
            for si in 0..report.sentences.len() {
                if selected.contains(&(ri, si)) {
                    continue;
                }
                let mut trial = selected.clone();
                trial.push((ri, si));
                let s = score_of(&trial);
                let better = match best {
                    None => true,
                    Some((_, bs)) => s > bs,
                };
                if better {
                    best = Some(((ri, si), s));
                }
            }
        }
        match best {
            Some((pos, s)) if s > best_score => {
                selected.push(pos);
                best_score = s;
            }
            _ => break,
        }
    }
    selected.sort_unstable();
    Ok(selected)
}

/// First `n` sentences of the first report, spilling into later reports if
/// needed.
pub fn lead_n(case: &ClaimCase, n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n);
    for (ri, report) in case.reports.iter().enumerate() {
        for si in 0..report.sentences.len() {
            if out.len() == n {
                return out;
            }
            out.push((ri, si));
        }
    }
    out
}
