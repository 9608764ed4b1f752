//! Command-line workflows: corpus synthesis, oracle annotation, training,
//! evaluation, and single-case explanation.
//!
//! Configuration precedence, lowest to highest: built-in defaults, config
//! file (`--config`), the `COFCED_ENCODER` environment variable (encoder
//! only), then command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use crate::annotator::{concat_selection, greedy_oracle, lead_n, AnnotationConfig, AnnotationSummary};
use crate::corpus::{generate_synthetic, load_corpus, save_corpus, ClaimCase, LabelScheme};
use crate::encoder::{build_embedder, EncoderConfig, EncoderKind, SentenceEmbedder};
use crate::metrics::{
    evaluate_explanations, evaluate_selection, macro_prf, ExplanationSection, MetricsDoc,
    MetricsMeta, SelectionOutcome,
};
use crate::model::Model;
use crate::training::{fit, load_checkpoint, save_checkpoint, LossRecord, TrainConfig};
use crate::{Error, Result};

/// Environment variable selecting the sentence embedder backend.
pub const ENCODER_ENV_VAR: &str = "COFCED_ENCODER";

/// Flag-level overrides shared by the subcommands. Every config-file key has
/// a flag of the same name; flags win over the file and the environment.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Label scheme: rawfc, liar, or synthetic-N.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Representation width d (even).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Sentence embedder: hash or pretrained-adapter.
    #[arg(long)]
    pub encoder: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Reports kept by the coarse selector.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adaptive loss weighting on/off.
    #[arg(long)]
    pub maw: Option<bool>,
    /// Adaptive weighting temperature.
    #[arg(long)]
    pub maw_t: Option<f64>,
    #[arg(long)]
    pub beta_report: Option<f64>,
    #[arg(long)]
    pub beta_sentence: Option<f64>,
    #[arg(long)]
    pub beta_veracity: Option<f64>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Use the literal positive-only loss forms.
    #[arg(long)]
    pub literal_losses: Option<bool>,
    /// Accumulate the redundancy state across all visited reports.
    #[arg(long)]
    pub cumulative_redundancy: Option<bool>,
    #[arg(long)]
    pub rouge1_min: Option<f64>,
    #[arg(long)]
    pub rouge2_min: Option<f64>,
    #[arg(long)]
    pub rougel_min: Option<f64>,
    #[arg(long)]
    pub cosine_min: Option<f64>,
    /// Threshold recall-style overlaps instead of F1 scores.
    #[arg(long)]
    pub recall_thresholds: Option<bool>,
    /// Evidence-sentence cap per case.
    #[arg(long)]
    pub max_oracles: Option<usize>,
    /// Sentence budget of the LEAD baseline.
    #[arg(long)]
    pub lead_n: Option<usize>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scheme: String,
    pub dim: usize,
    pub encoder: String,
    pub train: TrainConfig,
    pub annotation: AnnotationConfig,
    pub lead_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: "rawfc".into(),
            dim: 64,
            encoder: EncoderKind::Hash.as_str().into(),
            train: TrainConfig::default(),
            annotation: AnnotationConfig::default(),
            lead_n: 5,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, context: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!("{context}: invalid value {value:?} for {key}"))
    })
}

impl RunConfig {
    /// Defaults, then the config file, then the encoder environment
    /// variable, then flags.
    pub fn from_sources(
        file: Option<&Path>,
        env_encoder: Option<String>,
        overrides: &Overrides,
    ) -> Result<RunConfig> {
        let mut rc = RunConfig::default();
        if let Some(path) = file {
            rc.apply_file(path)?;
        }
        if let Some(encoder) = env_encoder.filter(|s| !s.is_empty()) {
            EncoderKind::parse(&encoder)?;
            rc.encoder = encoder;
        }
        rc.apply_overrides(overrides)?;
        Ok(rc)
    }

    /// Resolution against the real process environment.
    pub fn resolve(overrides: &Overrides) -> Result<RunConfig> {
        RunConfig::from_sources(
            overrides.config.as_deref(),
            std::env::var(ENCODER_ENV_VAR).ok(),
            overrides,
        )
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let body = fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
        for (i, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let context = format!("{display}:{}", i + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{context}: expected key = value, got {line:?}"))
            })?;
            self.apply_key(key.trim(), value.trim(), &context)?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str, context: &str) -> Result<()> {
        match key {
            "scheme" => self.scheme = value.to_string(),
            "dim" => self.dim = parse_value(key, value, context)?,
            "encoder" => {
                EncoderKind::parse(value)
                    .map_err(|e| Error::Config(format!("{context}: {e}")))?;
                self.encoder = value.to_string();
            }
            "seed" => self.train.seed = parse_value(key, value, context)?,
            "lr" => self.train.learning_rate = parse_value(key, value, context)?,
            "batch_size" => self.train.batch_size = parse_value(key, value, context)?,
            "epochs" => self.train.max_epochs = parse_value(key, value, context)?,
            "k" => self.train.k = parse_value(key, value, context)?,
            "dropout" => self.train.dropout = parse_value(key, value, context)?,
            "maw" => self.train.maw_enabled = parse_value(key, value, context)?,
            "maw_t" => self.train.maw_t = parse_value(key, value, context)?,
            "beta_report" => self.train.beta_report = parse_value(key, value, context)?,
            "beta_sentence" => self.train.beta_sentence = parse_value(key, value, context)?,
            "beta_veracity" => self.train.beta_veracity = parse_value(key, value, context)?,
            "grad_clip" => {
                self.train.grad_clip = if value == "none" {
                    None
                } else {
                    Some(parse_value(key, value, context)?)
                };
            }
            "literal_losses" => self.train.literal_losses = parse_value(key, value, context)?,
            "cumulative_redundancy" => {
                self.train.cumulative_redundancy = parse_value(key, value, context)?
            }
            "rouge1_min" => {
                self.annotation.thresholds.rouge1_min = parse_value(key, value, context)?
            }
            "rouge2_min" => {
                self.annotation.thresholds.rouge2_min = parse_value(key, value, context)?
            }
            "rougel_min" => {
                self.annotation.thresholds.rougel_min = parse_value(key, value, context)?
            }
            "cosine_min" => {
                self.annotation.thresholds.cosine_min = parse_value(key, value, context)?
            }
            "recall_thresholds" => {
                self.annotation.recall_thresholds = parse_value(key, value, context)?
            }
            "max_oracles" => self.annotation.max_oracles = parse_value(key, value, context)?,
            "lead_n" => self.lead_n = parse_value(key, value, context)?,
            other => {
                return Err(Error::Config(format!("{context}: unknown key {other:?}")));
            }
        }
        Ok(())
    }

    fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.scheme {
            self.scheme = v.clone();
        }
        if let Some(v) = o.dim {
            self.dim = v;
        }
        if let Some(v) = &o.encoder {
            EncoderKind::parse(v)?;
            self.encoder = v.clone();
        }
        if let Some(v) = o.seed {
            self.train.seed = v;
        }
        if let Some(v) = o.lr {
            self.train.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = o.epochs {
            self.train.max_epochs = v;
        }
        if let Some(v) = o.k {
            self.train.k = v;
        }
        if let Some(v) = o.dropout {
            self.train.dropout = v;
        }
        if let Some(v) = o.maw {
            self.train.maw_enabled = v;
        }
        if let Some(v) = o.maw_t {
            self.train.maw_t = v;
        }
        if let Some(v) = o.beta_report {
            self.train.beta_report = v;
        }
        if let Some(v) = o.beta_sentence {
            self.train.beta_sentence = v;
        }
        if let Some(v) = o.beta_veracity {
            self.train.beta_veracity = v;
        }
        if let Some(v) = o.grad_clip {
            self.train.grad_clip = Some(v);
        }
        if let Some(v) = o.literal_losses {
            self.train.literal_losses = v;
        }
        if let Some(v) = o.cumulative_redundancy {
            self.train.cumulative_redundancy = v;
        }
        if let Some(v) = o.rouge1_min {
            self.annotation.thresholds.rouge1_min = v;
        }
        if let Some(v) = o.rouge2_min {
            self.annotation.thresholds.rouge2_min = v;
        }
        if let Some(v) = o.rougel_min {
            self.annotation.thresholds.rougel_min = v;
        }
        if let Some(v) = o.cosine_min {
            self.annotation.thresholds.cosine_min = v;
        }
        if let Some(v) = o.recall_thresholds {
            self.annotation.recall_thresholds = v;
        }
        if let Some(v) = o.max_oracles {
            self.annotation.max_oracles = v;
        }
        if let Some(v) = o.lead_n {
            self.lead_n = v;
        }
        Ok(())
    }

    pub fn label_scheme(&self) -> Result<LabelScheme> {
        LabelScheme::from_name(&self.scheme)
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::Config(format!(
                "dim must be a positive even number, got {}",
                self.dim
            )));
        }
        Ok(EncoderConfig {
            dim: self.dim,
            kind: EncoderKind::parse(&self.encoder)?,
            recurrent_hidden: self.dim / 2,
        })
    }

    /// The embedder this run uses. The pretrained adapter is not available
    /// from the command line, so requesting it here fails cleanly.
    pub fn embedder(&self) -> Result<Box<dyn SentenceEmbedder>> {
        build_embedder(&self.encoder_config()?, self.train.seed, None)
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Generates a planted-evidence synthetic corpus.
pub fn cmd_synth(
    out: &Path,
    claims: usize,
    classes: usize,
    reports: usize,
    seed: u64,
) -> Result<usize> {
    let cases = generate_synthetic(claims, classes, reports, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    save_corpus(out, &cases)?;
    Ok(cases.len())
}

/// Annotates a corpus with oracle evidence labels.
pub fn cmd_annotate(input: &Path, output: &Path, rc: &RunConfig) -> Result<AnnotationSummary> {
    let scheme = rc.label_scheme()?;
    let cases = load_corpus(input, &scheme)?;
    let embedder = rc.embedder()?;
    let (annotated, summary) = crate::annotator::annotate_corpus(
        &cases,
        embedder.as_ref(),
        &rc.annotation,
    )?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    save_corpus(output, &annotated)?;
    Ok(summary)
}

/// Builds the evaluation document for a model over labeled, annotated cases.
pub fn evaluate_model(
    model: &Model,
    embedder: &dyn SentenceEmbedder,
    cases: &[ClaimCase],
    scheme: &LabelScheme,
    lead_budget: usize,
    oracle_cap: usize,
    meta: MetricsMeta,
) -> Result<MetricsDoc> {
    if cases.is_empty() {
        return Err(Error::Invalid("no cases to evaluate".into()));
    }
    let mut gold = Vec::with_capacity(cases.len());
    let mut predicted = Vec::with_capacity(cases.len());
    let mut outcomes = Vec::with_capacity(cases.len());
    let mut model_texts = Vec::with_capacity(cases.len());
    let mut lead_texts = Vec::with_capacity(cases.len());
    let mut oracle_texts = Vec::with_capacity(cases.len());

    for case in cases {
        gold.push(scheme.label_index(&case.label)?);
        let fwd = model.predict(embedder, case)?;
        predicted.push(fwd.veracity.predicted);
        outcomes.push(SelectionOutcome {
            reports: fwd.selection.selected.clone(),
            sentences: fwd
                .decisions
                .iter()
                .filter(|d| d.selected)
                .map(|d| (d.report, d.sentence))
                .collect(),
        });
        model_texts.push(fwd.explanation.text);
        lead_texts.push(concat_selection(case, &lead_n(case, lead_budget)));
        // The oracle needs a gold justification; cases without one are
        // skipped by the scorer, so any placeholder works.
        if crate::annotator::tokenize(&case.explain).is_empty() {
            oracle_texts.push(String::new());
        } else {
            oracle_texts.push(concat_selection(case, &greedy_oracle(case, oracle_cap)?));
        }
    }

    let veracity = macro_prf(&gold, &predicted, &scheme.classes)?;
    let (report_selection, sentence_selection) = evaluate_selection(cases, &outcomes)?;
    let explanation = ExplanationSection {
        model: evaluate_explanations(cases, &model_texts)?,
        lead_n: evaluate_explanations(cases, &lead_texts)?,
        oracle: evaluate_explanations(cases, &oracle_texts)?,
    };
    Ok(MetricsDoc {
        veracity,
        report_selection,
        sentence_selection,
        explanation,
        meta,
    })
}

/// Artifacts written by a training run.
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub metrics: PathBuf,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub records: Vec<LossRecord>,
}

/// Trains on an annotated corpus and writes checkpoint, loss log, and
/// validation metrics into `outdir`.
pub fn cmd_train(
    train_path: &Path,
    valid_path: Option<&Path>,
    outdir: &Path,
    rc: &RunConfig,
) -> Result<TrainOutcome> {
    let scheme = rc.label_scheme()?;
    let train_cases = load_corpus(train_path, &scheme)?;
    let valid_cases = match valid_path {
        Some(p) => load_corpus(p, &scheme)?,
        None => Vec::new(),
    };
    let encoder_config = rc.encoder_config()?;
    let embedder = rc.embedder()?;

    let result = fit(
        &train_cases,
        &valid_cases,
        &scheme,
        embedder.as_ref(),
        &rc.train,
        &encoder_config,
    )?;

    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir.display().to_string(), e))?;

    // Persist the best-epoch parameters.
    let mut best_model = Model::new(result.model.config.clone(), rc.train.seed)?;
    best_model.store = result.best_params.clone();
    let checkpoint = outdir.join("checkpoint.json");
    save_checkpoint(
        &checkpoint,
        &best_model,
        &best_model.store,
        &scheme,
        &rc.train,
        &result.optimizer,
        result.best_epoch,
    )?;

    let loss_log = outdir.join("loss_log.jsonl");
    let mut log_body = String::new();
    for record in &result.records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Invalid(format!("loss record serialization failed: {e}")))?;
        log_body.push_str(&line);
        log_body.push('\n');
    }
    write_file(&loss_log, &log_body)?;

    let eval_cases: &[ClaimCase] = if valid_cases.is_empty() {
        &train_cases
    } else {
        &valid_cases
    };
    let dataset = valid_path.unwrap_or(train_path).display().to_string();
    let doc = evaluate_model(
        &best_model,
        embedder.as_ref(),
        eval_cases,
        &scheme,
        rc.lead_n,
        rc.annotation.max_oracles,
        MetricsMeta {
            seed: rc.train.seed,
            checkpoint: checkpoint.display().to_string(),
            dataset,
        },
    )?;
    let metrics = outdir.join("metrics_valid.json");
    let body = serde_json::to_string(&doc)
        .map_err(|e| Error::Invalid(format!("metrics serialization failed: {e}")))?;
    write_file(&metrics, &(body + "\n"))?;

    Ok(TrainOutcome {
        checkpoint,
        loss_log,
        metrics,
        best_epoch: result.best_epoch,
        best_metric: result.best_metric,
        records: result.records,
    })
}

/// Evaluates a checkpoint on a labeled corpus and writes `metrics.json`.
pub fn cmd_evaluate(
    test_path: &Path,
    checkpoint_path: &Path,
    outdir: &Path,
    rc: &RunConfig,
) -> Result<(PathBuf, MetricsDoc)> {
    let loaded = load_checkpoint(checkpoint_path)?;
    let cases = load_corpus(test_path, &loaded.scheme)?;
    let embedder = build_embedder(&loaded.model.config.encoder, loaded.train.seed, None)?;
    let doc = evaluate_model(
        &loaded.model,
        embedder.as_ref(),
        &cases,
        &loaded.scheme,
        rc.lead_n,
        rc.annotation.max_oracles,
        MetricsMeta {
            seed: loaded.train.seed,
            checkpoint: checkpoint_path.display().to_string(),
            dataset: test_path.display().to_string(),
        },
    )?;
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir.display().to_string(), e))?;
    let path = outdir.join("metrics.json");
    let body = serde_json::to_string(&doc)
        .map_err(|e| Error::Invalid(format!("metrics serialization failed: {e}")))?;
    write_file(&path, &(body + "\n"))?;
    Ok((path, doc))
}

/// Min-max normalization over one displayed feature column; a constant
/// column maps to 0.5 everywhere.
fn normalize_column(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if (max - min).abs() < 1e-15 {
        return vec![0.5; values.len()];
    }
    values.iter().map(|&v| (v - min) / (max - min)).collect()
}

/// Runs one case through a checkpoint, producing a human-readable breakdown:
/// prediction, report attention, and per-sentence feature scores.
pub fn cmd_explain(
    case_path: &Path,
    checkpoint_path: &Path,
    claim_override: Option<&str>,
) -> Result<String> {
    let loaded = load_checkpoint(checkpoint_path)?;
    let body = fs::read_to_string(case_path)
        .map_err(|e| Error::io(case_path.display().to_string(), e))?;
    let mut case: ClaimCase = serde_json::from_str(&body).map_err(|e| {
        Error::Invalid(format!("{} is not a claim case: {e}", case_path.display()))
    })?;
    if let Some(claim) = claim_override {
        case.claim = claim.to_string();
    }
    if case.claim.trim().is_empty() {
        return Err(Error::Invalid("the case has no claim text".into()));
    }
    if case.reports.is_empty() {
        return Err(Error::Invalid("the case has no reports".into()));
    }

    let embedder = build_embedder(&loaded.model.config.encoder, loaded.train.seed, None)?;
    let fwd = loaded.model.predict(embedder.as_ref(), &case)?;

    let mut out = String::new();
    let predicted = &loaded.scheme.classes[fwd.veracity.predicted];
    let confidence = fwd.veracity.probs[fwd.veracity.predicted];
    writeln!(out, "claim: {}", case.claim).unwrap();
    writeln!(out, "prediction: {predicted} (p = {confidence:.4})").unwrap();
    writeln!(out, "selected reports:").unwrap();
    for &r in &fwd.selection.selected {
        writeln!(
            out,
            "  [{r}] {}  alpha = {:.4}",
            case.reports[r].report_id, fwd.selection.alpha[r]
        )
        .unwrap();
    }

    let relevance = normalize_column(&fwd.decisions.iter().map(|d| d.relevance).collect::<Vec<_>>());
    let richness = normalize_column(&fwd.decisions.iter().map(|d| d.richness).collect::<Vec<_>>());
    let salience = normalize_column(&fwd.decisions.iter().map(|d| d.salience).collect::<Vec<_>>());
    let non_redundancy =
        normalize_column(&fwd.decisions.iter().map(|d| -d.redundancy).collect::<Vec<_>>());

    writeln!(out, "sentences (features min-max normalized over shown rows):").unwrap();
    writeln!(
        out,
        "  {:<7} {:<9} {:<10} {:<9} {:<9} {:<15} {:<7} {:<4} text",
        "report", "sentence", "relevance", "richness", "salience", "non-redundancy", "p", "sel"
    )
    .unwrap();
    for (i, d) in fwd.decisions.iter().enumerate() {
        let mark = if d.fallback {
            "f"
        } else if d.selected {
            "*"
        } else {
            ""
        };
        writeln!(
            out,
            "  {:<7} {:<9} {:<10.3} {:<9.3} {:<9.3} {:<15.3} {:<7.4} {:<4} {}",
            d.report,
            d.sentence,
            relevance[i],
            richness[i],
            salience[i],
            non_redundancy[i],
            d.p,
            mark,
            case.reports[d.report].sentences[d.sentence].text
        )
        .unwrap();
    }
    writeln!(out, "explanation: {}", fwd.explanation.text).unwrap();
    Ok(out)
}
