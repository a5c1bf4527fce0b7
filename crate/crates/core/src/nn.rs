//! Building blocks shared by the encoder and the option comparators.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Init, ParameterStore, Tensor, Var};

/// `x · W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: String,
    b: Option<String>,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, prefix: &str, input: usize, output: usize, bias: bool) -> Result<Self> {
        let w = format!("{prefix}.w");
        store.register(&w, &[input, output], Init::Xavier)?;
        let b = if bias {
            let b = format!("{prefix}.b");
            store.register(&b, &[output], Init::Zeros)?;
            Some(b)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn weight_name(&self) -> &str {
        &self.w
    }

    pub fn bias_name(&self) -> Option<&str> {
        self.b.as_deref()
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParameterStore<S>, x: Var) -> Result<Var> {
        let w = g.param(store, &self.w)?;
        let y = g.matmul(x, w)?;
        match &self.b {
            Some(b) => {
                let b = g.param(store, b)?;
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
    eps: f64,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, prefix: &str, d: usize, eps: f64) -> Result<Self> {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        store.register(&gamma, &[d], Init::Ones)?;
        store.register(&beta, &[d], Init::Zeros)?;
        Ok(LayerNorm { gamma, beta, eps })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParameterStore<S>, x: Var) -> Result<Var> {
        let gamma = g.param(store, &self.gamma)?;
        let beta = g.param(store, &self.beta)?;
        g.layer_norm(x, gamma, beta, S::of(self.eps))
    }
}

/// Two linear layers with a ReLU in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, prefix: &str, d: usize, hidden: usize) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(store, &format!("{prefix}.ff1"), d, hidden, true)?,
            outer: Linear::new(store, &format!("{prefix}.ff2"), hidden, d, true)?,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParameterStore<S>, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, store, x)?;
        let h = g.relu(h);
        self.outer.forward(g, store, h)
    }
}

/// Output of a multi-head attention call.
#[derive(Clone, Debug)]
pub struct Attended {
    pub out: Var,
    /// Post-softmax weights of every head, each `rows × rows`.
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product self-attention without biases.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    wq: String,
    wk: String,
    wv: String,
    wo: String,
    d: usize,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, prefix: &str, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::config(format!("{heads} heads do not divide hidden size {d}")));
        }
        let names = ["wq", "wk", "wv", "wo"].map(|n| format!("{prefix}.{n}"));
        for n in &names {
            store.register(n, &[d, d], Init::Xavier)?;
        }
        let [wq, wk, wv, wo] = names;
        Ok(MultiHeadAttention { wq, wk, wv, wo, d, heads })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn param_names(&self) -> [&str; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    /// Self-attention over the rows of `x`. `mask` is added to the scaled
    /// scores before the softmax (`-inf` removes a key); it may be a full
    /// `rows × rows` matrix or a single `1 × rows` row shared by all queries.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        x: Var,
        mask: Option<Var>,
    ) -> Result<Attended> {
        let rows = g.shape(x)[0];
        if g.shape(x) != [rows, self.d] {
            return Err(Error::dim("attention", format!("input {:?}, hidden size {}", g.shape(x), self.d)));
        }
        if let Some(m) = mask {
            let ms = g.shape(m);
            if ms != [rows, rows] && ms != [1, rows] {
                return Err(Error::dim("attention", format!("mask {ms:?} for {rows} rows")));
            }
        }
        let wq = g.param(store, &self.wq)?;
        let wk = g.param(store, &self.wk)?;
        let wv = g.param(store, &self.wv)?;
        let wo = g.param(store, &self.wo)?;
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let dh = self.d / self.heads;
        let scale = S::one() / S::of_usize(dh).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice(q, 1, h * dh, dh)?, g.slice(k, 1, h * dh, dh)?, g.slice(v, 1, h * dh, dh)?)
            };
            let scores = g.matmul_nt(qh, kh)?;
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let p = g.softmax(scores, 1)?;
            outs.push(g.matmul(p, vh)?);
            weights.push(p);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        let out = g.matmul(cat, wo)?;
        Ok(Attended { out, weights })
    }
}

/// Mean of the per-head attention matrices, read off the graph.
pub fn head_average<S: Scalar>(g: &Graph<S>, weights: &[Var]) -> Tensor<S> {
    let shape = g.shape(weights[0]).to_vec();
    let mut acc = vec![S::zero(); g.value(weights[0]).len()];
    for &w in weights {
        acc.iter_mut().zip(g.value(w)).for_each(|(a, &x)| *a += x);
    }
    let n = S::of_usize(weights.len());
    acc.iter_mut().for_each(|a| *a /= n);
    Tensor::new(shape, acc).expect("shape taken from the graph")
}

/// Additive attention mask from a keep predicate: `0` where query `i` may
/// see key `j`, `-inf` elsewhere.
pub fn additive_mask<S: Scalar>(g: &mut Graph<S>, rows: usize, keep: impl Fn(usize, usize) -> bool) -> Result<Var> {
    let data = (0..rows * rows)
        .map(|k| if keep(k / rows, k % rows) { S::zero() } else { S::neg_infinity() })
        .collect();
    g.constant_raw(vec![rows, rows], data)
}

/// Post-norm transformer block: `LN(x + MHA(x))`, then `LN(y + FFN(y))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

/// Block output together with its attention weights.
#[derive(Clone, Debug)]
pub struct BlockOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

impl EncoderBlock {
    pub fn new<S: Scalar>(
        store: &mut ParameterStore<S>,
        prefix: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        ln_eps: f64,
    ) -> Result<Self> {
        Ok(EncoderBlock {
            attention: MultiHeadAttention::new(store, &format!("{prefix}.attn"), d, heads)?,
            norm1: LayerNorm::new(store, &format!("{prefix}.ln1"), d, ln_eps)?,
            ffn: FeedForward::new(store, prefix, d, ffn_hidden)?,
            norm2: LayerNorm::new(store, &format!("{prefix}.ln2"), d, ln_eps)?,
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        x: Var,
        mask: Option<Var>,
    ) -> Result<BlockOutput> {
        let att = self.attention.forward(g, store, x, mask)?;
        let y = g.add(x, att.out)?;
        let y = self.norm1.forward(g, store, y)?;
        let f = self.ffn.forward(g, store, y)?;
        let z = g.add(y, f)?;
        let out = self.norm2.forward(g, store, z)?;
        Ok(BlockOutput { out, weights: att.weights })
    }
}
