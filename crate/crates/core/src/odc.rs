//! Option comparators: self-attention over the four option vectors, once
//! before and once after graph reasoning. No positions are added, so the
//! comparison is equivariant under any reordering of the options.

use std::fmt;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{head_average, EncoderBlock};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParameterStore, Tensor, Var};

pub use crate::nn::MultiHeadAttention;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Before,
    After,
}

impl Which {
    pub fn prefix(self) -> &'static str {
        match self {
            Which::Before => "odc_before",
            Which::After => "odc_after",
        }
    }
}

impl fmt::Display for Which {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Which::Before => "before",
            Which::After => "after",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Comparator {
    which: Which,
    blocks: Vec<EncoderBlock>,
}

#[derive(Clone, Debug)]
pub struct Compared {
    pub out: Var,
    /// Head-averaged attention between the options in the last block, 4×4.
    pub attention: Tensor<f64>,
}

impl Comparator {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, which: Which) -> Result<Self> {
        let blocks = (0..cfg.comparator_depth)
            .map(|k| {
                EncoderBlock::new(
                    store,
                    &format!("{}.block{k}", which.prefix()),
                    cfg.d,
                    cfg.heads,
                    cfg.ffn_mult * cfg.d,
                    cfg.layer_norm_eps,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Comparator { which, blocks })
    }

    pub fn which(&self) -> Which {
        self.which
    }

    pub fn blocks(&self) -> &[EncoderBlock] {
        &self.blocks
    }

    pub fn compare_options<S: Scalar>(&self, g: &mut Graph<S>, store: &ParameterStore<S>, options: Var) -> Result<Compared> {
        if g.shape(options).len() != 2 || g.shape(options)[0] != 4 {
            return Err(Error::contract(format!(
                "option comparator ({}) needs 4 option rows, got shape {:?}",
                self.which,
                g.shape(options)
            )));
        }
        let mut x = options;
        let mut weights = Vec::new();
        for block in &self.blocks {
            let out = block.forward(g, store, x, None)?;
            x = out.out;
            weights = out.weights;
        }
        let avg = head_average(g, &weights);
        let attention = Tensor::new(avg.shape().to_vec(), avg.data().iter().map(|v| v.to_f64_lossy()).collect())?;
        Ok(Compared { out: x, attention })
    }

    /// The 4×4 attention map of [`Comparator::compare_options`] on its own.
    pub fn extract_attention<S: Scalar>(&self, store: &ParameterStore<S>, options: &Tensor<S>) -> Result<Tensor<f64>> {
        let mut g = Graph::new();
        let x = g.constant(options);
        Ok(self.compare_options(&mut g, store, x)?.attention)
    }
}
