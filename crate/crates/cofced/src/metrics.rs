//! Evaluation metrics: macro precision/recall/F1 with confusion matrices for
//! classification tasks, and mean ROUGE F1 for extracted explanations.

use serde::Serialize;

use crate::annotator::{rouge_l_f1, rouge_n_f1, tokenize};
use crate::corpus::ClaimCase;
use crate::{Error, Result};

/// Precision/recall/F1 for one class.
#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold instances of this class.
    pub support: usize,
}

/// Macro-averaged classification metrics with the full confusion matrix.
#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub classes: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[gold][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Macro precision/recall/F1 over the given class list. Per-class ratios with
/// zero denominators are 0, and zero-support classes contribute 0 to the
/// macro means (they are not excluded).
pub fn macro_prf(gold: &[usize], predicted: &[usize], classes: &[String]) -> Result<ClassificationReport> {
    if gold.is_empty() || gold.len() != predicted.len() {
        return Err(Error::Invalid(format!(
            "need equal-length non-empty label vectors (gold {}, predicted {})",
            gold.len(),
            predicted.len()
        )));
    }
    let n = classes.len();
    for (&g, &p) in gold.iter().zip(predicted) {
        if g >= n || p >= n {
            return Err(Error::Invalid(format!(
                "label index {} outside the {n}-class scheme",
                g.max(p)
            )));
        }
    }

    let mut confusion = vec![vec![0usize; n]; n];
    for (&g, &p) in gold.iter().zip(predicted) {
        confusion[g][p] += 1;
    }

    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = confusion[c][c];
        let gold_count: usize = confusion[c].iter().sum();
        let pred_count: usize = (0..n).map(|g| confusion[g][c]).sum();
        let precision = safe_div(tp as f64, pred_count as f64);
        let recall = safe_div(tp as f64, gold_count as f64);
        let f1 = safe_div(2.0 * precision * recall, precision + recall);
        per_class.push(ClassMetrics {
            class: classes[c].clone(),
            precision,
            recall,
            f1,
            support: gold_count,
        });
    }

    let macro_precision = per_class.iter().map(|m| m.precision).sum::<f64>() / n as f64;
    let macro_recall = per_class.iter().map(|m| m.recall).sum::<f64>() / n as f64;
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / n as f64;
    let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / gold.len() as f64;

    Ok(ClassificationReport {
        classes: classes.to_vec(),
        per_class,
        macro_precision,
        macro_recall,
        macro_f1,
        accuracy,
        confusion,
    })
}

/// Binary classification metrics with the positive class second, so
/// `per_class[1]` carries the positive-class PRF.
pub fn binary_report(gold: &[bool], predicted: &[bool]) -> Result<ClassificationReport> {
    let classes = vec!["negative".to_string(), "positive".to_string()];
    let g: Vec<usize> = gold.iter().map(|&b| b as usize).collect();
    let p: Vec<usize> = predicted.iter().map(|&b| b as usize).collect();
    macro_prf(&g, &p, &classes)
}

/// Mean ROUGE F1 of candidate explanation texts against gold justifications.
#[derive(Debug, Clone, Serialize)]
pub struct ExplanationReport {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rougel: f64,
    /// Cases scored (non-empty gold justification).
    pub evaluated: usize,
    /// Cases skipped for lack of a gold justification.
    pub skipped: usize,
}

/// Scores one candidate text per case against that case's gold justification;
/// cases without a justification are skipped and counted.
pub fn evaluate_explanations(cases: &[ClaimCase], candidates: &[String]) -> Result<ExplanationReport> {
    if cases.len() != candidates.len() {
        return Err(Error::Invalid(format!(
            "{} cases but {} candidate explanations",
            cases.len(),
            candidates.len()
        )));
    }
    let mut sums = [0.0f64; 3];
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for (case, candidate) in cases.iter().zip(candidates) {
        let reference = tokenize(&case.explain);
        if reference.is_empty() {
            skipped += 1;
            continue;
        }
        let cand = tokenize(candidate);
        sums[0] += rouge_n_f1(&cand, &reference, 1);
        sums[1] += rouge_n_f1(&cand, &reference, 2);
        sums[2] += rouge_l_f1(&cand, &reference);
        evaluated += 1;
    }
    let denom = evaluated.max(1) as f64;
    Ok(ExplanationReport {
        rouge1: sums[0] / denom,
        rouge2: sums[1] / denom,
        rougel: sums[2] / denom,
        evaluated,
        skipped,
    })
}

/// What the model selected for one case.
#[derive(Debug, Clone, Default)]
pub struct SelectionOutcome {
    /// Report indices kept by the coarse selector.
    pub reports: Vec<usize>,
    /// (report, sentence) pairs extracted by the fine selector.
    pub sentences: Vec<(usize, usize)>,
}

/// Binary metrics for report selection (evidence-bearing vs not) and sentence
/// selection (oracle evidence vs not). Sentences of unselected reports count
/// as predicted-negative.
pub fn evaluate_selection(
    cases: &[ClaimCase],
    outcomes: &[SelectionOutcome],
) -> Result<(ClassificationReport, ClassificationReport)> {
    if cases.len() != outcomes.len() {
        return Err(Error::Invalid(format!(
            "{} cases but {} selection outcomes",
            cases.len(),
            outcomes.len()
        )));
    }
    let mut report_gold = Vec::new();
    let mut report_pred = Vec::new();
    let mut sentence_gold = Vec::new();
    let mut sentence_pred = Vec::new();
    for (case, outcome) in cases.iter().zip(outcomes) {
        for (r, report) in case.reports.iter().enumerate() {
            report_gold.push(report.sentences.iter().any(|s| s.is_evidence));
            report_pred.push(outcome.reports.contains(&r));
            for (t, sentence) in report.sentences.iter().enumerate() {
                sentence_gold.push(sentence.is_evidence);
                sentence_pred.push(outcome.sentences.contains(&(r, t)));
            }
        }
    }
    Ok((
        binary_report(&report_gold, &report_pred)?,
        binary_report(&sentence_gold, &sentence_pred)?,
    ))
}

/// Explanation quality for the model and the two reference baselines.
#[derive(Debug, Clone, Serialize)]
pub struct ExplanationSection {
    pub model: ExplanationReport,
    pub lead_n: ExplanationReport,
    pub oracle: ExplanationReport,
}

/// Provenance fields attached to a metrics document.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsMeta {
    pub seed: u64,
    pub checkpoint: String,
    pub dataset: String,
}

/// The full evaluation document written by the evaluate workflow.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsDoc {
    pub veracity: ClassificationReport,
    pub report_selection: ClassificationReport,
    pub sentence_selection: ClassificationReport,
    pub explanation: ExplanationSection,
    pub meta: MetricsMeta,
}
