//! The full pipeline: encoder, option comparator (before), relational
//! reasoning, option comparator (after), prediction head.

use crate::config::{ArcMode, ModelConfig};
use crate::data::DialogueExample;
use crate::encoder::{EncodedDialogue, Encoder};
use crate::error::{ModuleContext, Result};
use crate::head::{ce_loss, Head, ScoredExample};
use crate::odc::{Comparator, Which};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParameterStore, Tensor, Var};
use crate::urr::{Arc, Urr};

#[derive(Clone, Debug)]
pub struct Irrgn {
    config: ModelConfig,
    pub encoder: Encoder,
    pub odc_before: Option<Comparator>,
    pub urr: Option<Urr>,
    pub odc_after: Option<Comparator>,
    pub head: Head,
}

/// Intermediate outputs kept for inspection.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    pub odc_before: Option<Tensor<f64>>,
    pub odc_after: Option<Tensor<f64>>,
    pub arcs: Vec<Arc>,
    pub num_utterances: usize,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub encoded: EncodedDialogue,
    /// `1 × 4` option scores.
    pub scores: Var,
    /// One-element cross-entropy.
    pub loss: Var,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub scored: ScoredExample,
    pub loss: f64,
    pub diagnostics: Diagnostics,
}

impl Irrgn {
    /// Register every parameter of the configured variant in `store`.
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, config: ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(store, &config, vocab_size).in_module("encoder")?;
        let odc_before =
            config.odc_before.then(|| Comparator::new(store, &config, Which::Before)).transpose().in_module("odc")?;
        let urr = config.urr.then(|| Urr::new(store, &config)).transpose().in_module("urr")?;
        let odc_after =
            config.odc_after.then(|| Comparator::new(store, &config, Which::After)).transpose().in_module("odc")?;
        let head = Head::new(store, config.d, config.head_hidden()).in_module("head")?;
        Ok(Irrgn { config, encoder, odc_before, urr, odc_after, head })
    }

    /// Fresh parameter store seeded from the config, plus the model.
    pub fn init<S: Scalar>(config: ModelConfig, vocab_size: usize) -> Result<(Self, ParameterStore<S>)> {
        let mut store = ParameterStore::new(config.seed);
        let model = Irrgn::new(&mut store, config, vocab_size)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Override the arc-classifier temperature.
    pub fn set_temperature(&mut self, t: f64) {
        self.config.temperature = t;
        if let Some(urr) = &mut self.urr {
            urr.attention.set_temperature(t);
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        ex: &DialogueExample,
        mode: ArcMode,
    ) -> Result<Forward> {
        let mut diagnostics = Diagnostics { num_utterances: ex.num_utterances(), ..Default::default() };
        let encoded = self.encoder.encode(g, store, ex, &self.config).in_module("encoder")?;
        let mut options = encoded.options;
        if let Some(cmp) = &self.odc_before {
            let c = cmp.compare_options(g, store, options).in_module("odc")?;
            options = c.out;
            diagnostics.odc_before = Some(c.attention);
        }
        if let Some(urr) = &self.urr {
            let out = urr.forward(g, store, encoded.utterances, options, mode).in_module("urr")?;
            options = out.options;
            diagnostics.arcs = out.graph.arcs;
        }
        if let Some(cmp) = &self.odc_after {
            let c = cmp.compare_options(g, store, options).in_module("odc")?;
            options = c.out;
            diagnostics.odc_after = Some(c.attention);
        }
        let scores = self.head.score_options(g, store, options).in_module("head")?;
        let loss = ce_loss(g, scores, ex.answer).in_module("head")?;
        Ok(Forward { encoded, scores, loss, diagnostics })
    }

    /// Forward pass on a throwaway graph.
    pub fn predict<S: Scalar>(&self, store: &ParameterStore<S>, ex: &DialogueExample, mode: ArcMode) -> Result<Prediction> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, store, ex, mode)?;
        let s = g.value(f.scores);
        let scores = [0, 1, 2, 3].map(|i| s[i].to_f64_lossy());
        Ok(Prediction {
            scored: ScoredExample::new(scores, ex.answer)?,
            loss: g.scalar_value(f.loss).to_f64_lossy(),
            diagnostics: f.diagnostics,
        })
    }
}
