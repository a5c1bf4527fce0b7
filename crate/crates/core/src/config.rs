//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How arc types feed relational message passing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArcMode {
    /// Mix relations by the classifier's probabilities (differentiable).
    Soft,
    /// Route each arc through its argmax type only; no gradient reaches the
    /// arc classifier.
    Hard,
}

impl std::str::FromStr for ArcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(ArcMode::Soft),
            "hard" => Ok(ArcMode::Hard),
            other => Err(Error::config(format!("unknown arc mode `{other}` (soft|hard)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden size shared by every component.
    pub d: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    /// Feed-forward width as a multiple of `d`.
    pub ffn_mult: usize,
    /// Scalar projections per sentence in the relational attention.
    pub n_proj: usize,
    /// Number of implicit arc types.
    pub arc_types: usize,
    pub rgcn_layers: usize,
    /// Transformer blocks per option comparator.
    pub comparator_depth: usize,
    /// Prediction head hidden width; `None` means `d`.
    pub head_hidden: Option<usize>,
    /// Arc mode used while training.
    pub mode: ArcMode,
    /// Logits of the arc classifier are divided by this before the softmax.
    pub temperature: f64,
    pub odc_before: bool,
    pub odc_after: bool,
    pub urr: bool,
    pub max_turns: usize,
    pub max_sentence_tokens: usize,
    pub max_seq_len: usize,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            heads: 4,
            encoder_layers: 2,
            ffn_mult: 4,
            n_proj: 16,
            arc_types: 8,
            rgcn_layers: 2,
            comparator_depth: 1,
            head_hidden: None,
            mode: ArcMode::Soft,
            temperature: 1.0,
            odc_before: true,
            odc_after: true,
            urr: true,
            max_turns: 12,
            max_sentence_tokens: 32,
            max_seq_len: 512,
            layer_norm_eps: 1e-5,
            seed: 0,
        }
    }
}

/// Named component removals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoOdcAfter,
    NoOdcBefore,
    NoOdc,
    NoUrr,
    NoAll,
}

impl Ablation {
    pub const ALL: [Ablation; 6] =
        [Ablation::Full, Ablation::NoOdcAfter, Ablation::NoOdcBefore, Ablation::NoOdc, Ablation::NoUrr, Ablation::NoAll];

    /// Command-line spelling, accepted by `FromStr`.
    pub fn slug(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoOdcAfter => "no-odc-after",
            Ablation::NoOdcBefore => "no-odc-before",
            Ablation::NoOdc => "no-odc",
            Ablation::NoUrr => "no-urr",
            Ablation::NoAll => "no-all",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoOdcAfter => "w/o ODC (After)",
            Ablation::NoOdcBefore => "w/o ODC (Before)",
            Ablation::NoOdc => "w/o ODC",
            Ablation::NoUrr => "w/o URR",
            Ablation::NoAll => "w/o ALL",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Ablation::Full,
            "no-odc-after" => Ablation::NoOdcAfter,
            "no-odc-before" => Ablation::NoOdcBefore,
            "no-odc" => Ablation::NoOdc,
            "no-urr" => Ablation::NoUrr,
            "no-all" => Ablation::NoAll,
            other => match Ablation::ALL.iter().find(|a| a.label().eq_ignore_ascii_case(other)) {
                Some(&a) => a,
                None => return Err(Error::config(format!("unknown ablation `{other}`"))),
            },
        })
    }
}

impl ModelConfig {
    /// Small but complete configuration, handy for tests and gradient checks.
    pub fn tiny() -> Self {
        ModelConfig { d: 8, heads: 2, encoder_layers: 1, ffn_mult: 2, n_proj: 4, arc_types: 3, ..Default::default() }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        let (before, after, urr) = match ablation {
            Ablation::Full => (true, true, true),
            Ablation::NoOdcAfter => (true, false, true),
            Ablation::NoOdcBefore => (false, true, true),
            Ablation::NoOdc => (false, false, true),
            Ablation::NoUrr => (true, true, false),
            Ablation::NoAll => (false, false, false),
        };
        self.odc_before = before;
        self.odc_after = after;
        self.urr = urr;
        self
    }

    pub fn head_hidden(&self) -> usize {
        self.head_hidden.unwrap_or(self.d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.d == 0 {
            return bad("hidden size d must be positive".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("{} heads do not divide hidden size {}", self.heads, self.d));
        }
        if self.arc_types == 0 {
            return bad("at least one arc type is required".into());
        }
        if self.rgcn_layers == 0 {
            return bad("at least one relational graph layer is required".into());
        }
        if self.n_proj == 0 || self.ffn_mult == 0 || self.comparator_depth == 0 || self.head_hidden() == 0 {
            return bad("n_proj, ffn_mult, comparator_depth and head width must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.max_turns == 0 || self.max_sentence_tokens == 0 {
            return bad("max_turns and max_sentence_tokens must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(ModelConfig::default().arc_types, 8);
        assert_eq!(ModelConfig::default().rgcn_layers, 2);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ModelConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { arc_types: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { rgcn_layers: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.slug().parse::<Ablation>().unwrap(), a);
            assert_eq!(a.label().parse::<Ablation>().unwrap(), a);
        }
    }

    #[test]
    fn ablation_flags() {
        let c = ModelConfig::default().with_ablation(Ablation::NoAll);
        assert!(!c.odc_before && !c.odc_after && !c.urr);
        let c = ModelConfig::default().with_ablation(Ablation::NoUrr);
        assert!(c.odc_before && c.odc_after && !c.urr);
        assert_eq!("no-odc".parse::<Ablation>().unwrap(), Ablation::NoOdc);
    }

    #[test]
    fn json_fills_missing_fields_with_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"d": 32, "mode": "hard"}"#).unwrap();
        assert_eq!(c.d, 32);
        assert_eq!(c.mode, ArcMode::Hard);
        assert_eq!(c.heads, 4);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"dd": 1}"#).is_err());
    }
}
