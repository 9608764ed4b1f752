//! Claim corpus: JSONL records, label schemes, and deterministic splits.
//!
//! One line per claim case. A case carries the claim text, a veracity label,
//! a human-written explanation (may be empty), and up to
//! [`MAX_REPORTS_PER_CASE`] retrieved reports whose sentences hold binary
//! evidence flags. Unknown top-level fields round-trip untouched. Re-saving
//! a loaded corpus is byte-stable, which keeps annotation diffs and golden
//! files honest.

use crate::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Reports beyond this count are dropped on load (with a warning).
pub const MAX_REPORTS_PER_CASE: usize = 30;

/// One report sentence with its silver evidence flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    #[serde(
        serialize_with = "bool_as_int",
        deserialize_with = "int_as_bool",
        default
    )]
    pub is_evidence: bool,
}

impl Sentence {
    pub fn new(text: impl Into<String>) -> Self {
        Sentence {
            text: text.into(),
            is_evidence: false,
        }
    }
}

fn bool_as_int<S: Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn int_as_bool<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    match u8::deserialize(d)? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(serde::de::Error::custom(format!(
            "is_evidence must be 0 or 1, got {other}"
        ))),
    }
}

/// A retrieved report: an ordered list of sentences from one source domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub report_id: String,
    #[serde(default)]
    pub domain: String,
    pub sentences: Vec<Sentence>,
    /// True when any sentence is evidence. Derived, never trusted from disk.
    #[serde(skip)]
    pub is_evidence_report: bool,
}

impl ReportDoc {
    pub fn new(report_id: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        let mut doc = ReportDoc {
            report_id: report_id.into(),
            domain: String::new(),
            sentences,
            is_evidence_report: false,
        };
        doc.refresh_evidence_flag();
        doc
    }

    /// Recompute `is_evidence_report` from the sentence flags.
    pub fn refresh_evidence_flag(&mut self) {
        self.is_evidence_report = self.sentences.iter().any(|s| s.is_evidence);
    }
}

/// One claim with its label, gold explanation, and retrieved reports.
/// `claim_id`, `label`, and `explain` default to empty so a bare inference
/// case (claim + reports only) still parses; corpus loading re-validates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCase {
    #[serde(default)]
    pub claim_id: String,
    pub claim: String,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub explain: String,
    pub reports: Vec<ReportDoc>,
    /// Unknown top-level fields, preserved across round-trips.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ClaimCase {
    /// Recompute every derived report flag.
    pub fn refresh_evidence_flags(&mut self) {
        for r in &mut self.reports {
            r.refresh_evidence_flag();
        }
    }

    /// Gold evidence sentences as (report index, sentence index) pairs.
    pub fn evidence_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ri, r) in self.reports.iter().enumerate() {
            for (si, s) in r.sentences.iter().enumerate() {
                if s.is_evidence {
                    out.push((ri, si));
                }
            }
        }
        out
    }
}

/// An ordered set of veracity classes. Class index = position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub name: String,
    pub classes: Vec<String>,
}

impl LabelScheme {
    /// Three-way scheme: true / half / false.
    pub fn rawfc() -> Self {
        LabelScheme {
            name: "rawfc".into(),
            classes: ["true", "half", "false"].map(String::from).to_vec(),
        }
    }

    /// Six-way political fact-checking scheme.
    pub fn liar() -> Self {
        LabelScheme {
            name: "liar".into(),
            classes: [
                "pants-fire",
                "false",
                "barely-true",
                "half-true",
                "mostly-true",
                "true",
            ]
            .map(String::from)
            .to_vec(),
        }
    }

    /// Synthetic scheme with `n` classes named `class-0 .. class-(n-1)`.
    pub fn synthetic(n: usize) -> Self {
        LabelScheme {
            name: format!("synthetic-{n}"),
            classes: (0..n).map(|i| format!("class-{i}")).collect(),
        }
    }

    /// Parse `"rawfc"`, `"liar"`, or `"synthetic-N"`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "rawfc" => Ok(Self::rawfc()),
            "liar" => Ok(Self::liar()),
            other => {
                if let Some(n) = other.strip_prefix("synthetic-") {
                    let n: usize = n
                        .parse()
                        .map_err(|_| Error::UnknownScheme(other.to_string()))?;
                    if n == 0 {
                        return Err(Error::UnknownScheme(other.to_string()));
                    }
                    Ok(Self::synthetic(n))
                } else {
                    Err(Error::UnknownScheme(other.to_string()))
                }
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Index of `label`, or an error naming both label and scheme.
    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_string(),
                scheme: self.name.clone(),
            })
    }
}

/// Load a JSONL corpus, validating labels against `scheme`, capping reports
/// per case, and recomputing derived evidence flags.
pub fn load_corpus(path: impl AsRef<Path>, scheme: &LabelScheme) -> Result<Vec<ClaimCase>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);

    let mut cases = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut case: ClaimCase = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            path: display.clone(),
            line: lineno,
            message: e.to_string(),
        })?;
        let fail = |message: String| Error::Corpus {
            path: display.clone(),
            line: lineno,
            message,
        };
        scheme
            .label_index(&case.label)
            .map_err(|e| fail(e.to_string()))?;
        if case.claim_id.is_empty() {
            return Err(fail("missing claim_id".into()));
        }
        if case.claim.trim().is_empty() {
            return Err(fail("missing claim text".into()));
        }
        if !seen_ids.insert(case.claim_id.clone()) {
            return Err(fail(format!("duplicate claim_id {:?}", case.claim_id)));
        }
        if case.reports.is_empty() {
            return Err(fail("case has no reports".into()));
        }
        if case.reports.len() > MAX_REPORTS_PER_CASE {
            log::warn!(
                "{display}:{lineno}: case {:?} has {} reports, keeping the first {}",
                case.claim_id,
                case.reports.len(),
                MAX_REPORTS_PER_CASE
            );
            case.reports.truncate(MAX_REPORTS_PER_CASE);
        }
        for r in &case.reports {
            if r.sentences.is_empty() {
                return Err(fail(format!("report {:?} has no sentences", r.report_id)));
            }
            for s in &r.sentences {
                if s.text.trim().is_empty() || crate::annotator::tokenize(&s.text).is_empty() {
                    return Err(fail(format!(
                        "report {:?} has a sentence without tokens",
                        r.report_id
                    )));
                }
                if s.text.contains('\n') {
                    return Err(fail(format!(
                        "report {:?} has a sentence containing a newline",
                        r.report_id
                    )));
                }
            }
        }
        case.refresh_evidence_flags();
        cases.push(case);
    }
    Ok(cases)
}

/// Write cases as compact JSONL (LF line endings). Byte-stable: saving a
/// just-loaded corpus reproduces the previous save exactly.
pub fn save_corpus(path: impl AsRef<Path>, cases: &[ClaimCase]) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    for case in cases {
        let line = serde_json::to_string(case).map_err(|e| Error::Corpus {
            path: display.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(&display, e))?;
    }
    w.flush().map_err(|e| Error::io(&display, e))
}

/// Deterministic shuffled split. Each part gets `floor(n * ratio)` cases;
/// leftover cases go to train. Ratios must be non-negative and sum to 1.
pub fn split_cases(
    mut cases: Vec<ClaimCase>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<ClaimCase>, Vec<ClaimCase>, Vec<ClaimCase>)> {
    if cases.len() < 10 {
        return Err(Error::Config(format!(
            "too few cases to split: {} (need at least 10)",
            cases.len()
        )));
    }
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 {
        return Err(Error::Config("split ratios must be non-negative".into()));
    }
    if ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    cases.shuffle(&mut rng);

    let n = cases.len();
    let n_train = (n as f64 * rt).floor() as usize;
    let n_valid = (n as f64 * rv).floor() as usize;
    let n_test = (n as f64 * rs).floor() as usize;
    let remainder = n - n_train - n_valid - n_test;

    let mut iter = cases.into_iter();
    let train: Vec<_> = iter.by_ref().take(n_train + remainder).collect();
    let valid: Vec<_> = iter.by_ref().take(n_valid).collect();
    let test: Vec<_> = iter.collect();
    debug_assert_eq!(test.len(), n_test);
    Ok((train, valid, test))
}

/// Distinct topic keywords, one per synthetic class.
const CLASS_KEYWORDS: [&str; 12] = [
    "aurora", "basalt", "cipher", "dynamo", "ember", "fjord", "garnet", "harbor", "iris",
    "juniper", "krypton", "lagoon",
];

fn class_keyword(class: usize) -> String {
    CLASS_KEYWORDS
        .get(class)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("topic{class}"))
}

/// Generate a balanced desk-scale corpus with planted evidence.
///
/// Every claim of class `c` talks about that class's keyword. Evidence
/// sentences repeat the keyword inside a fixed template whose vocabulary is
/// disjoint from the distractor template, and the gold justification is the
/// concatenation of the case's evidence sentences — so silver annotation is
/// unambiguous and a well-trained selector can reach perfect recall.
/// Evidence lives in the first `reports_per_claim - 1` reports; the last
/// report is all distractors, giving the coarse selector a real negative.
pub fn generate_synthetic(
    n_claims: usize,
    n_classes: usize,
    reports_per_claim: usize,
    seed: u64,
) -> Result<Vec<ClaimCase>> {
    if n_classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if reports_per_claim < 2 {
        return Err(Error::Config("need at least 2 reports per claim".into()));
    }
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let scheme = LabelScheme::synthetic(n_classes);

    let mut cases = Vec::with_capacity(n_claims);
    for i in 0..n_claims {
        let class = i % n_classes;
        let kw = class_keyword(class);
        let claim = format!(
            "the {kw} signal was reported near site {}",
            rng.gen_range(1..100)
        );

        let evidence_reports = (reports_per_claim - 1).max(1);
        let mut reports = Vec::with_capacity(reports_per_claim);
        let mut evidence_texts = Vec::new();
        for j in 0..reports_per_claim {
            let n_sentences = rng.gen_range(3..=5);
            let n_evidence = if j < evidence_reports {
                rng.gen_range(1..=2usize).min(n_sentences)
            } else {
                0
            };
            // Scatter the evidence slots across the report.
            let mut slots: Vec<usize> = (0..n_sentences).collect();
            for k in (1..slots.len()).rev() {
                let swap = rng.gen_range(0..=k);
                slots.swap(k, swap);
            }
            let evidence_slots: std::collections::HashSet<usize> =
                slots.into_iter().take(n_evidence).collect();

            let mut sentences = Vec::with_capacity(n_sentences);
            for t in 0..n_sentences {
                if evidence_slots.contains(&t) {
                    let text = format!(
                        "the {kw} signal appears again with reading {}",
                        rng.gen_range(100..1000)
                    );
                    evidence_texts.push(text.clone());
                    sentences.push(Sentence {
                        text,
                        is_evidence: true,
                    });
                } else {
                    let mut other = rng.gen_range(0..n_classes);
                    if other == class {
                        other = (other + 1) % n_classes;
                    }
                    let text = format!(
                        "observers noted {} flux near station {}",
                        class_keyword(other),
                        rng.gen_range(1000..10000)
                    );
                    sentences.push(Sentence::new(text));
                }
            }
            let mut report = ReportDoc::new(format!("synth-{i:04}-r{j}"), sentences);
            report.domain = "synth.example".into();
            reports.push(report);
        }

        let explain = format!("{}.", evidence_texts.join(". "));
        cases.push(ClaimCase {
            claim_id: format!("synth-{i:04}"),
            claim,
            label: scheme.classes[class].clone(),
            explain,
            reports,
            extra: Default::default(),
        });
    }
    Ok(cases)
}
