//! Option scoring, cross-entropy and ranking metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParameterStore, Var};

/// `s = W₂·ReLU(W₁·o + b₁) + b₂`, shared across the four options.
#[derive(Clone, Debug)]
pub struct Head {
    pub hidden: Linear,
    pub out: Linear,
    d: usize,
}

impl Head {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, d: usize, hidden: usize) -> Result<Self> {
        Ok(Head {
            hidden: Linear::new(store, "head.l1", d, hidden, true)?,
            out: Linear::new(store, "head.l2", hidden, 1, true)?,
            d,
        })
    }

    /// Scores as a `1 × 4` row.
    pub fn score_options<S: Scalar>(&self, g: &mut Graph<S>, store: &ParameterStore<S>, options: Var) -> Result<Var> {
        if g.shape(options) != [4, self.d] {
            return Err(Error::contract(format!("head expects 4×{} options, got {:?}", self.d, g.shape(options))));
        }
        let h = self.hidden.forward(g, store, options)?;
        let h = g.relu(h);
        let s = self.out.forward(g, store, h)?;
        g.reshape(s, &[1, 4])
    }
}

/// `−log softmax(scores)[y]` for a `1 × 4` score row, as a one-element
/// tensor.
pub fn ce_loss<S: Scalar>(g: &mut Graph<S>, scores: Var, y: usize) -> Result<Var> {
    if y >= 4 {
        return Err(Error::contract(format!("gold index {y} outside 0..3")));
    }
    if g.shape(scores) != [1, 4] {
        return Err(Error::dim("ce_loss", format!("scores {:?}, expected [1, 4]", g.shape(scores))));
    }
    if g.value(scores).iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite option scores {:?}", g.value(scores))));
    }
    let logp = g.log_softmax(scores, 1)?;
    let picked = g.gather(logp, &[y])?;
    let picked = g.reshape(picked, &[1])?;
    Ok(g.scale(picked, -S::one()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    #[default]
    Mean,
    Sum,
}

/// Scores and probabilities of one ranked example.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredExample {
    pub scores: [f64; 4],
    pub probs: [f64; 4],
    pub gold: usize,
    pub rank_of_gold: usize,
}

/// `1 + |{j ≠ y : s_j ≥ s_y}|`; ties count against the gold option.
pub fn rank_of_gold(scores: &[f64; 4], gold: usize) -> usize {
    1 + (0..4).filter(|&j| j != gold && scores[j] >= scores[gold]).count()
}

impl ScoredExample {
    pub fn new(scores: [f64; 4], gold: usize) -> Result<Self> {
        if gold >= 4 {
            return Err(Error::contract(format!("gold index {gold} outside 0..3")));
        }
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = scores.map(|s| (s - m).exp());
        let z: f64 = e.iter().sum();
        Ok(ScoredExample { scores, probs: e.map(|x| x / z), gold, rank_of_gold: rank_of_gold(&scores, gold) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub r4_at_1: f64,
    pub r4_at_2: f64,
    pub mrr: f64,
    pub n: usize,
}

pub fn rank_metrics(batch: &[ScoredExample]) -> Result<RankMetrics> {
    if batch.is_empty() {
        return Err(Error::contract("ranking metrics of an empty batch"));
    }
    let n = batch.len() as f64;
    let frac = |k: usize| batch.iter().filter(|e| e.rank_of_gold <= k).count() as f64 / n;
    Ok(RankMetrics {
        r4_at_1: frac(1),
        r4_at_2: frac(2),
        mrr: batch.iter().map(|e| 1.0 / e.rank_of_gold as f64).sum::<f64>() / n,
        n: batch.len(),
    })
}
