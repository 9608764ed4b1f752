//! The full pipeline bundled behind one parameter store: document encoder,
//! report attention, sentence selector, and veracity head, with a single
//! forward pass per case.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::corpus::ClaimCase;
use crate::encoder::{encode_case, DocumentEncoder, EncoderConfig, EncodedCase, SentenceEmbedder};
use crate::report_selector::{score_reports, select_top_k, AttentionParams, ReportSelection};
use crate::sentence_selector::{
    select_explanations, ExplanationSet, SelectorOptions, SelectorParams, SentenceDecision,
};
use crate::veracity::{
    aggregate_explanations, aggregate_reports, predict_veracity, VeracityHeadParams,
    VeracityOutput,
};
use crate::{Error, Result};

/// Structural hyperparameters of the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Number of veracity classes.
    pub classes: usize,
    /// Reports kept by the coarse selector.
    pub k: usize,
    /// Dropout rate on the concatenated representation during training.
    pub dropout: f64,
    /// Redundancy state accumulates over all visited reports instead of only
    /// the previous one.
    #[serde(default)]
    pub cumulative_redundancy: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.k < 1 {
            return Err(Error::Config("top-K must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// All learnable stages sharing one parameter store.
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: DocumentEncoder,
    pub attention: AttentionParams,
    pub selector: SelectorParams,
    pub head: VeracityHeadParams,
}

/// Everything produced by one forward pass, including the tape for backprop.
pub struct Forward {
    pub graph: Graph,
    pub encoded: EncodedCase,
    /// Node holding the report attention weights.
    pub alpha: NodeId,
    pub selection: ReportSelection,
    pub decisions: Vec<SentenceDecision>,
    pub explanation: ExplanationSet,
    pub veracity: VeracityOutput,
}

impl Model {
    /// Fresh model with all parameters drawn from a seeded generator, in a
    /// fixed registration order (encoder, attention, selector, head).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = DocumentEncoder::init(&mut store, &config.encoder, &mut rng)?;
        let dim = config.encoder.dim;
        let attention = AttentionParams::init(&mut store, dim, &mut rng);
        let selector = SelectorParams::init(&mut store, dim, &mut rng);
        let head =
            VeracityHeadParams::init(&mut store, dim, config.classes, config.dropout, &mut rng);
        Ok(Model {
            config,
            store,
            encoder,
            attention,
            selector,
            head,
        })
    }

    /// Runs the full pipeline on one case. `rng` is consumed only when
    /// `training` is set and dropout is configured.
    pub fn forward(
        &self,
        embedder: &dyn SentenceEmbedder,
        case: &ClaimCase,
        training: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        if case.reports.is_empty() {
            return Err(Error::Invalid(format!(
                "claim {} has no reports",
                case.claim_id
            )));
        }
        let mut graph = Graph::new();
        let encoded = encode_case(&mut graph, &self.store, &self.encoder, embedder, case)?;

        let docs: Vec<NodeId> = encoded.reports.iter().map(|r| r.doc).collect();
        let alpha = score_reports(&mut graph, &self.store, &self.attention, encoded.claim, &docs);
        let selection = select_top_k(graph.value(alpha).as_slice().unwrap(), self.config.k);

        let (explanation, decisions) = select_explanations(
            &mut graph,
            &self.store,
            &self.selector,
            encoded.claim,
            &encoded,
            case,
            &selection.selected,
            SelectorOptions {
                cumulative_redundancy: self.config.cumulative_redundancy,
            },
        );

        let reports_pooled = aggregate_reports(&mut graph, &docs);
        let explanation_pooled = aggregate_explanations(&mut graph, &explanation)?;
        let veracity = predict_veracity(
            &mut graph,
            &self.store,
            &self.head,
            encoded.claim,
            reports_pooled,
            explanation_pooled,
            training,
            rng,
        );

        Ok(Forward {
            graph,
            encoded,
            alpha,
            selection,
            decisions,
            explanation,
            veracity,
        })
    }

    /// Inference pass: no dropout, no rng.
    pub fn predict(&self, embedder: &dyn SentenceEmbedder, case: &ClaimCase) -> Result<Forward> {
        self.forward(embedder, case, false, None)
    }
}
