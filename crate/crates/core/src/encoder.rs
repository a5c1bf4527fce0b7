//! Small trainable contextual encoder.
//!
//! The dialogue and the four options are laid out as one sequence,
//! `[CLS] u¹ … [CLS] uᴺ [CLS] oᵃ … [CLS] oᵈ`, and run through a stack of
//! self-attention blocks. The outputs at the `[CLS]` positions are the
//! per-sentence summary vectors.
//!
//! Dialogue tokens attend to the dialogue only; option tokens attend to the
//! dialogue and to their own option. Every option starts at the same
//! position index (right after the dialogue) and shares one segment id, so
//! the encoder treats the options as an unordered set.

use crate::config::ModelConfig;
use crate::data::{DialogueExample, CLS, PAD};
use crate::error::{Error, Result};
use crate::nn::{additive_mask, EncoderBlock};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Init, ParameterStore, Var};

pub const SEGMENT_EVEN: usize = 0;
pub const SEGMENT_ODD: usize = 1;
pub const SEGMENT_OPTION: usize = 2;
const SEGMENTS: usize = 3;

pub const DIALOGUE: usize = 0;

/// Unit-variance uniform init for lookup tables, so token identity is not
/// drowned by the unit-amplitude position signal.
const EMBEDDING_BOUND: f64 = 1.732_050_807_568_877_2;

/// Token layout of one example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderInput {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub segments: Vec<usize>,
    /// `false` marks padding, which no position may attend to.
    pub valid: Vec<bool>,
    /// Attention group: [`DIALOGUE`] or `1 + k` for option `k`.
    pub groups: Vec<usize>,
    pub utterance_cls: Vec<usize>,
    pub option_cls: [usize; 4],
}

impl EncoderInput {
    pub fn from_example(ex: &DialogueExample, cfg: &ModelConfig) -> Result<Self> {
        let n = ex.utterances.len();
        if n == 0 {
            return Err(Error::contract(format!("example `{}` has no utterances", ex.id)));
        }
        if n > cfg.max_turns {
            return Err(Error::Length { len: n, max: cfg.max_turns, detail: format!("turns in `{}`", ex.id) });
        }
        let longest = ex.utterances.iter().chain(ex.options.iter()).map(Vec::len).max().unwrap_or(0);
        if longest > cfg.max_sentence_tokens {
            return Err(Error::Length {
                len: longest,
                max: cfg.max_sentence_tokens,
                detail: format!("tokens in one sentence of `{}`", ex.id),
            });
        }
        let mut input = EncoderInput {
            tokens: Vec::new(),
            positions: Vec::new(),
            segments: Vec::new(),
            valid: Vec::new(),
            groups: Vec::new(),
            utterance_cls: Vec::with_capacity(n),
            option_cls: [0; 4],
        };
        for (i, u) in ex.utterances.iter().enumerate() {
            let seg = if i % 2 == 0 { SEGMENT_EVEN } else { SEGMENT_ODD };
            input.utterance_cls.push(input.tokens.len());
            let start = input.tokens.len();
            input.push_sentence(u, start, seg, DIALOGUE);
        }
        let option_start = input.tokens.len();
        for (k, o) in ex.options.iter().enumerate() {
            input.option_cls[k] = input.tokens.len();
            input.push_sentence(o, option_start, SEGMENT_OPTION, 1 + k);
        }
        if input.tokens.len() > cfg.max_seq_len {
            return Err(Error::Length {
                len: input.tokens.len(),
                max: cfg.max_seq_len,
                detail: format!("{} dialogue and option tokens in `{}`", input.tokens.len(), ex.id),
            });
        }
        Ok(input)
    }

    fn push_sentence(&mut self, words: &[u32], first_position: usize, segment: usize, group: usize) {
        for (offset, &t) in std::iter::once(&CLS).chain(words).enumerate() {
            self.tokens.push(t);
            self.positions.push(first_position + offset);
            self.segments.push(segment);
            self.valid.push(true);
            self.groups.push(group);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Whether query position `i` may attend to key position `j`.
    pub fn may_attend(&self, i: usize, j: usize) -> bool {
        self.valid[j] && (self.groups[j] == DIALOGUE || self.groups[j] == self.groups[i])
    }

    /// Append masked padding up to `len` positions using `fill` as the
    /// padding token ids (cycled).
    pub fn padded(&self, len: usize, fill: &[u32]) -> Self {
        let mut out = self.clone();
        let fill = if fill.is_empty() { &[PAD][..] } else { fill };
        let mut next_pos = self.positions.iter().max().map_or(0, |p| p + 1);
        let mut k = 0;
        while out.tokens.len() < len {
            out.tokens.push(fill[k % fill.len()]);
            out.positions.push(next_pos);
            out.segments.push(SEGMENT_EVEN);
            out.valid.push(false);
            out.groups.push(DIALOGUE);
            next_pos += 1;
            k += 1;
        }
        out
    }
}

/// Encoder outputs for one example.
#[derive(Clone, Debug)]
pub struct EncodedDialogue {
    /// Every position of the sequence, `len × d`.
    pub tokens: Var,
    /// `[CLS]` summaries of the utterances, `N × d`.
    pub utterances: Var,
    /// `[CLS]` summaries of the options, `4 × d`.
    pub options: Var,
    pub num_utterances: usize,
}

/// Sinusoidal position encoding value for `(pos, dim)`.
pub fn position_encoding(pos: usize, dim: usize, d: usize) -> f64 {
    let pair = (dim / 2) as f64;
    let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
    if dim % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    embedding: String,
    segment: String,
    blocks: Vec<EncoderBlock>,
    d: usize,
}

impl Encoder {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        let d = cfg.d;
        let embedding = "encoder.embedding".to_string();
        let segment = "encoder.segment".to_string();
        store.register(&embedding, &[vocab_size, d], Init::Uniform(EMBEDDING_BOUND))?;
        store.register(&segment, &[SEGMENTS, d], Init::Uniform(EMBEDDING_BOUND))?;
        let blocks = (0..cfg.encoder_layers)
            .map(|l| EncoderBlock::new(store, &format!("encoder.layer{l}"), d, cfg.heads, cfg.ffn_mult * d, cfg.layer_norm_eps))
            .collect::<Result<_>>()?;
        Ok(Encoder { embedding, segment, blocks, d })
    }

    pub fn embedding_name(&self) -> &str {
        &self.embedding
    }

    pub fn segment_name(&self) -> &str {
        &self.segment
    }

    /// Token + position + segment embedding of the input.
    pub fn embed<S: Scalar>(&self, g: &mut Graph<S>, store: &ParameterStore<S>, input: &EncoderInput) -> Result<Var> {
        let table = g.param(store, &self.embedding)?;
        let vocab = g.shape(table)[0];
        if let Some(&bad) = input.tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::contract(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let ids: Vec<usize> = input.tokens.iter().map(|&t| t as usize).collect();
        let tok = g.gather_rows(table, &ids)?;
        let pos: Vec<S> = input
            .positions
            .iter()
            .flat_map(|&p| (0..self.d).map(move |j| S::of(position_encoding(p, j, self.d))))
            .collect();
        let pos = g.constant_raw(vec![input.len(), self.d], pos)?;
        let seg_table = g.param(store, &self.segment)?;
        let seg = g.gather_rows(seg_table, &input.segments)?;
        let x = g.add(tok, pos)?;
        g.add(x, seg)
    }

    pub fn encode_input<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        input: &EncoderInput,
    ) -> Result<EncodedDialogue> {
        let mut x = self.embed(g, store, input)?;
        let mask = if self.blocks.is_empty() { None } else { Some(additive_mask(g, input.len(), |i, j| input.may_attend(i, j))?) };
        for block in &self.blocks {
            x = block.forward(g, store, x, mask)?.out;
        }
        let utterances = g.gather_rows(x, &input.utterance_cls)?;
        let options = g.gather_rows(x, &input.option_cls)?;
        Ok(EncodedDialogue { tokens: x, utterances, options, num_utterances: input.utterance_cls.len() })
    }

    pub fn encode<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        ex: &DialogueExample,
        cfg: &ModelConfig,
    ) -> Result<EncodedDialogue> {
        let input = EncoderInput::from_example(ex, cfg)?;
        self.encode_input(g, store, &input)
    }
}
