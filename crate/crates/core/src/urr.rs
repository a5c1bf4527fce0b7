//! Utterance relational reasoning.
//!
//! Every utterance `s` is paired with every other node `e` (utterances and
//! options). A scalar-projection attention turns the pair into a dependency
//! vector `z`, a small classifier maps `z` to a distribution over `T` arc
//! types, and the resulting typed graph is processed by relational graph
//! convolution layers.

use crate::config::{ArcMode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Init, ParameterStore, Tensor, Var};

/// Arc classification of one `(src, dst)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcTypeResult {
    pub z: Vec<f64>,
    pub probs: Vec<f64>,
    pub hard_type: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arc {
    pub src: usize,
    pub dst: usize,
    pub kind: ArcTypeResult,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<S: PartialOrd + Copy>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Ordered `(src, dst)` pairs of a dialogue with `n` utterances: every
/// utterance to every other utterance, then to each of the four options.
pub fn arc_pairs(n: usize) -> Result<Vec<(usize, usize)>> {
    if n == 0 {
        return Err(Error::contract("a graph needs at least one utterance"));
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) + 4 * n);
    for s in 0..n {
        for e in 0..n + 4 {
            if e != s {
                pairs.push((s, e));
            }
        }
    }
    Ok(pairs)
}

/// Per-relation normalized adjacency, stacked as a `(T·M) × M` matrix whose
/// block `r` holds `A_r[dst, src]`.
///
/// Soft mode weights each arc by its type probability. Hard mode puts weight
/// one on the argmax type only and builds a constant, so no gradient reaches
/// `probs`. Every row is divided by `max(incoming mass, 1)`: in hard mode
/// that is the in-degree of the relation, and in soft mode a relation that
/// holds almost no mass at a node sends almost no message, so soft
/// converges to hard as the probabilities sharpen.
pub fn typed_adjacency<S: Scalar>(
    g: &mut Graph<S>,
    pairs: &[(usize, usize)],
    probs: Var,
    nodes: usize,
    mode: ArcMode,
) -> Result<Var> {
    let t = g.shape(probs)[1];
    if g.shape(probs) != [pairs.len(), t] {
        return Err(Error::dim("typed_adjacency", format!("{} arcs, probabilities {:?}", pairs.len(), g.shape(probs))));
    }
    if let Some(&(s, e)) = pairs.iter().find(|&&(s, e)| s >= nodes || e >= nodes || s == e) {
        return Err(Error::contract(format!("arc ({s}, {e}) invalid for {nodes} nodes")));
    }
    let shape = [t * nodes, nodes];
    let at = |a: usize, r: usize| {
        let (s, e) = pairs[a];
        (r * nodes + e) * nodes + s
    };
    let raw = match mode {
        ArcMode::Soft => {
            let idx: Vec<usize> = (0..pairs.len()).flat_map(|a| (0..t).map(move |r| at(a, r))).collect();
            g.scatter_add(probs, &idx, &shape)?
        }
        ArcMode::Hard => {
            let mut dense = vec![S::zero(); t * nodes * nodes];
            for (a, row) in g.value(probs).chunks(t).enumerate() {
                dense[at(a, argmax(row))] += S::one();
            }
            g.constant_raw(shape.to_vec(), dense)?
        }
    };
    Ok(g.row_normalize_floor(raw, S::one()))
}

/// Scalar-projection attention and arc-type classifier.
#[derive(Clone, Debug)]
pub struct RelationalAttention {
    wq: String,
    wk: String,
    wv: String,
    hidden: Linear,
    logits: Linear,
    d: usize,
    n: usize,
    types: usize,
    temperature: f64,
}

/// Arc dependency vectors and type distributions for a list of pairs.
#[derive(Clone, Debug)]
pub struct ArcScores {
    /// `arcs × n`.
    pub z: Var,
    /// `arcs × T`, temperature applied.
    pub probs: Var,
}

impl RelationalAttention {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig) -> Result<Self> {
        let (d, n) = (cfg.d, cfg.n_proj);
        let names = ["wq", "wk", "wv"].map(|p| format!("urr.attn.{p}"));
        for name in &names {
            store.register(name, &[d, n], Init::Xavier)?;
        }
        let [wq, wk, wv] = names;
        Ok(RelationalAttention {
            wq,
            wk,
            wv,
            hidden: Linear::new(store, "urr.arc.mlp1", n, n, true)?,
            logits: Linear::new(store, "urr.arc.mlp2", n, cfg.arc_types, true)?,
            d,
            n,
            types: cfg.arc_types,
            temperature: cfg.temperature,
        })
    }

    pub fn projection_names(&self) -> [&str; 3] {
        [&self.wq, &self.wk, &self.wv]
    }

    pub fn classifier(&self) -> [&Linear; 2] {
        [&self.hidden, &self.logits]
    }

    pub fn num_types(&self) -> usize {
        self.types
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) {
        self.temperature = t;
    }

    /// Dependency vector of one pair: `(Σᵢ qᵢkᵢ / √d) · (v₁, …, vₙ)` where
    /// `qᵢ = h_s·w_i^q`, `kᵢ = h_e·w_i^k`, `vᵢ = h_e·w_i^v`.
    pub fn relational_scores<S: Scalar>(&self, store: &ParameterStore<S>, hs: &[S], he: &[S]) -> Result<Vec<S>> {
        let mut g = Graph::new();
        let s = g.constant_raw(vec![1, hs.len()], hs.to_vec())?;
        let e = g.constant_raw(vec![1, he.len()], he.to_vec())?;
        let out = self.pair_scores(&mut g, store, s, e, &[(0, 0)])?;
        Ok(g.value(out.z).to_vec())
    }

    /// Batched arc scoring: `sources` rows index `src`, `targets` rows index
    /// `dst` of each pair.
    pub fn pair_scores<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        sources: Var,
        targets: Var,
        pairs: &[(usize, usize)],
    ) -> Result<ArcScores> {
        for v in [sources, targets] {
            if g.shape(v).len() != 2 || g.shape(v)[1] != self.d {
                return Err(Error::dim("relational_scores", format!("node matrix {:?}, hidden size {}", g.shape(v), self.d)));
            }
        }
        let wq = g.param(store, &self.wq)?;
        let wk = g.param(store, &self.wk)?;
        let wv = g.param(store, &self.wv)?;
        let q = g.matmul(sources, wq)?;
        let k = g.matmul(targets, wk)?;
        let v = g.matmul(targets, wv)?;
        let compat = g.matmul_nt(q, k)?;
        let compat = g.scale(compat, S::one() / S::of_usize(self.d).sqrt());
        let cols = g.shape(targets)[0];
        let flat: Vec<usize> = pairs.iter().map(|&(s, e)| s * cols + e).collect();
        let c = g.gather(compat, &flat)?;
        let dst: Vec<usize> = pairs.iter().map(|&(_, e)| e).collect();
        let ve = g.gather_rows(v, &dst)?;
        let z = g.mul(c, ve)?;
        let probs = self.classify(g, store, z)?;
        Ok(ArcScores { z, probs })
    }

    /// Type distribution `softmax(MLP(z) / τ)` for each row of `z`.
    pub fn classify<S: Scalar>(&self, g: &mut Graph<S>, store: &ParameterStore<S>, z: Var) -> Result<Var> {
        if g.shape(z).len() != 2 || g.shape(z)[1] != self.n {
            return Err(Error::dim("classify_arc", format!("z {:?}, expected width {}", g.shape(z), self.n)));
        }
        let h = self.hidden.forward(g, store, z)?;
        let h = g.relu(h);
        let logits = self.logits.forward(g, store, h)?;
        let logits = g.scale(logits, S::of(1.0 / self.temperature));
        g.softmax(logits, 1)
    }

    /// Classify a single dependency vector.
    pub fn classify_arc<S: Scalar>(&self, store: &ParameterStore<S>, z: &[S]) -> Result<ArcTypeResult> {
        let mut g = Graph::new();
        let zv = g.constant_raw(vec![1, z.len()], z.to_vec())?;
        let p = self.classify(&mut g, store, zv)?;
        let probs: Vec<f64> = g.value(p).iter().map(|x| x.to_f64_lossy()).collect();
        Ok(ArcTypeResult { z: z.iter().map(|x| x.to_f64_lossy()).collect(), hard_type: argmax(&probs), probs })
    }
}

/// Typed graph over `N` utterance nodes followed by 4 option nodes.
#[derive(Clone, Debug)]
pub struct RelationalGraph {
    pub num_utterances: usize,
    pub num_nodes: usize,
    pub num_types: usize,
    pub mode: ArcMode,
    /// Initial node features, `(N+4) × d`.
    pub nodes: Var,
    pub arcs: Vec<Arc>,
    /// Stacked normalized adjacency, see [`typed_adjacency`].
    pub adjacency: Var,
}

impl RelationalGraph {
    pub fn relation<S: Scalar>(&self, g: &mut Graph<S>, r: usize) -> Result<Var> {
        let m = self.num_nodes;
        g.slice(self.adjacency, 0, r * m, m)
    }
}

/// Build the typed graph from utterance summaries (`N × d`) and option
/// vectors (`4 × d`).
pub fn build_graph<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    attention: &RelationalAttention,
    utterances: Var,
    options: Var,
    mode: ArcMode,
) -> Result<RelationalGraph> {
    let n = g.shape(utterances)[0];
    if g.shape(options)[0] != 4 {
        return Err(Error::contract(format!("graph needs 4 option nodes, got {:?}", g.shape(options))));
    }
    let pairs = arc_pairs(n)?;
    let nodes = g.concat(&[utterances, options], 0)?;
    let scores = attention.pair_scores(g, store, utterances, nodes, &pairs)?;
    let adjacency = typed_adjacency(g, &pairs, scores.probs, n + 4, mode)?;
    let t = attention.num_types();
    let width = g.shape(scores.z)[1];
    let zs = g.value(scores.z);
    let ps = g.value(scores.probs);
    let arcs = pairs
        .iter()
        .enumerate()
        .map(|(a, &(src, dst))| {
            let probs: Vec<f64> = ps[a * t..(a + 1) * t].iter().map(|x| x.to_f64_lossy()).collect();
            Arc {
                src,
                dst,
                kind: ArcTypeResult {
                    z: zs[a * width..(a + 1) * width].iter().map(|x| x.to_f64_lossy()).collect(),
                    hard_type: argmax(&probs),
                    probs,
                },
            }
        })
        .collect();
    Ok(RelationalGraph { num_utterances: n, num_nodes: n + 4, num_types: t, mode, nodes, arcs, adjacency })
}

/// One relational graph convolution:
/// `H' = ReLU(Σ_r A_r·H·W_rᵀ + H·W_0ᵀ)`.
#[derive(Clone, Debug)]
pub struct RgcnLayer {
    relations: Vec<String>,
    self_loop: String,
}

impl RgcnLayer {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, layer: usize, d: usize, types: usize) -> Result<Self> {
        let relations: Vec<String> = (0..types).map(|r| format!("urr.rgcn{layer}.rel{r}")).collect();
        for name in &relations {
            store.register(name, &[d, d], Init::Xavier)?;
        }
        let self_loop = format!("urr.rgcn{layer}.self");
        store.register(&self_loop, &[d, d], Init::XavierIdentity)?;
        Ok(RgcnLayer { relations, self_loop })
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn self_name(&self) -> &str {
        &self.self_loop
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        graph: &RelationalGraph,
        h: Var,
    ) -> Result<Var> {
        if graph.num_types != self.relations.len() {
            return Err(Error::contract(format!(
                "graph has {} arc types, layer expects {}",
                graph.num_types,
                self.relations.len()
            )));
        }
        let w0 = g.param(store, &self.self_loop)?;
        let mut acc = g.matmul_nt(h, w0)?;
        for (r, name) in self.relations.iter().enumerate() {
            let w = g.param(store, name)?;
            let a = graph.relation(g, r)?;
            if g.value(a).iter().all(|&x| x == S::zero()) && !g.requires_grad(a) {
                continue;
            }
            let hw = g.matmul_nt(h, w)?;
            let msg = g.matmul(a, hw)?;
            acc = g.add(acc, msg)?;
        }
        Ok(g.relu(acc))
    }
}

#[derive(Clone, Debug)]
pub struct Urr {
    pub attention: RelationalAttention,
    pub layers: Vec<RgcnLayer>,
}

#[derive(Clone, Debug)]
pub struct UrrOutput {
    pub graph: RelationalGraph,
    /// Final node features, `(N+4) × d`.
    pub nodes: Var,
    pub utterances: Var,
    pub options: Var,
}

impl Urr {
    pub fn new<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig) -> Result<Self> {
        let attention = RelationalAttention::new(store, cfg)?;
        let layers = (0..cfg.rgcn_layers).map(|l| RgcnLayer::new(store, l, cfg.d, cfg.arc_types)).collect::<Result<_>>()?;
        Ok(Urr { attention, layers })
    }

    /// Build the graph once, then run every layer over it.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        utterances: Var,
        options: Var,
        mode: ArcMode,
    ) -> Result<UrrOutput> {
        if self.layers.is_empty() {
            return Err(Error::contract("relational reasoning needs at least one layer"));
        }
        let graph = build_graph(g, store, &self.attention, utterances, options, mode)?;
        let mut h = graph.nodes;
        for layer in &self.layers {
            h = layer.forward(g, store, &graph, h)?;
        }
        let n = graph.num_utterances;
        let utt = g.slice(h, 0, 0, n)?;
        let opts = g.slice(h, 0, n, 4)?;
        Ok(UrrOutput { graph, nodes: h, utterances: utt, options: opts })
    }
}

/// Convert a graph value to a plain `f64` tensor.
pub fn to_f64<S: Scalar>(g: &Graph<S>, v: Var) -> Tensor<f64> {
    Tensor::new(g.shape(v).to_vec(), g.value(v).iter().map(|x| x.to_f64_lossy()).collect()).expect("shape taken from the graph")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn cfg(d: usize, n: usize, t: usize) -> ModelConfig {
        ModelConfig { d, n_proj: n, arc_types: t, heads: 1, ..ModelConfig::tiny() }
    }

    #[test]
    fn zero_projections_give_zero_z() {
        let mut store = ParameterStore::<f64>::new(0);
        let att = RelationalAttention::new(&mut store, &cfg(4, 2, 2)).unwrap();
        for name in att.projection_names() {
            store.assign(name, &[0.0; 8]).unwrap();
        }
        let z = att.relational_scores(&store, &[1.0, 2.0, 3.0, 4.0], &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn single_projection_closed_form() {
        let mut store = ParameterStore::<f64>::new(0);
        let att = RelationalAttention::new(&mut store, &cfg(4, 1, 2)).unwrap();
        for name in att.projection_names() {
            store.assign(name, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        }
        let e1 = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(att.relational_scores(&store, &e1, &e1).unwrap(), vec![0.5]);
    }

    #[test]
    fn scores_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParameterStore::<f64>::new(4);
        let att = RelationalAttention::new(&mut store, &cfg(8, 4, 3)).unwrap();
        let hs = random(&mut rng, &[8]);
        let he = random(&mut rng, &[8]);
        let [wq, wk, wv] = att.projection_names().map(|n| store.get(n).unwrap().clone());
        let proj = |h: &Tensor<f64>, w: &Tensor<f64>, i: usize| (0..8).map(|j| h.data()[j] * w.at(j, i)).sum::<f64>();
        let mut compat = 0.0;
        for i in 0..4 {
            compat += proj(&hs, &wq, i) * proj(&he, &wk, i);
        }
        compat /= 8f64.sqrt();
        let z = att.relational_scores(&store, hs.data(), he.data()).unwrap();
        for i in 0..4 {
            assert!((z[i] - compat * proj(&he, &wv, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn classifier_tie_breaks_low_and_follows_identity() {
        let mut store = ParameterStore::<f64>::new(0);
        let att = RelationalAttention::new(&mut store, &cfg(4, 3, 3)).unwrap();
        let [h, o] = att.classifier();
        for l in [h, o] {
            store.assign(l.weight_name(), Tensor::<f64>::identity(3).data()).unwrap();
        }
        let r = att.classify_arc(&store, &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.hard_type, 2);
        store.assign(o.weight_name(), &[0.0; 9]).unwrap();
        let r = att.classify_arc(&store, &[0.3, 0.1, 1.0]).unwrap();
        assert_eq!(r.hard_type, 0);
        assert!(r.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn random_arcs_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParameterStore::<f64>::new(8);
        let att = RelationalAttention::new(&mut store, &cfg(8, 4, 5)).unwrap();
        for _ in 0..100 {
            let z = random(&mut rng, &[4]);
            let r = att.classify_arc(&store, z.data()).unwrap();
            assert!((r.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let best = r.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let first = r.probs.iter().position(|&p| p == best).unwrap();
            assert_eq!(r.hard_type, first);
        }
    }

    #[test]
    fn arc_counts() {
        assert_eq!(arc_pairs(2).unwrap().len(), 10);
        let one = arc_pairs(1).unwrap();
        assert_eq!(one, vec![(0, 1), (0, 2), (0, 3), (0, 4)]);
        let five = arc_pairs(5).unwrap();
        assert_eq!(five.len(), 40);
        for o in 5..9 {
            assert_eq!(five.iter().filter(|&&(_, e)| e == o).count(), 5);
        }
        assert!(five.iter().all(|&(s, e)| s < 5 && s != e));
        for n in 1..=12 {
            assert_eq!(arc_pairs(n).unwrap().len(), n * (n - 1) + 4 * n);
        }
        assert!(arc_pairs(0).is_err());
    }

    #[test]
    fn built_graph_matches_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::<f64>::new(1);
        let att = RelationalAttention::new(&mut store, &cfg(8, 4, 3)).unwrap();
        let mut g = Graph::new();
        let u = g.constant(&random(&mut rng, &[3, 8]));
        let o = g.constant(&random(&mut rng, &[4, 8]));
        let graph = build_graph(&mut g, &store, &att, u, o, ArcMode::Soft).unwrap();
        assert_eq!(graph.arcs.len(), 18);
        let pairs: Vec<_> = graph.arcs.iter().map(|a| (a.src, a.dst)).collect();
        assert_eq!(pairs, arc_pairs(3).unwrap());
        assert!(graph.arcs.iter().all(|a| a.kind.z.len() == 4 && a.kind.probs.len() == 3));
    }

    fn set_identity_self(store: &mut ParameterStore<f64>, layer: &RgcnLayer, d: usize, self_w: f64, rel_w: f64) {
        let scaled = |c: f64| Tensor::<f64>::identity(d).data().iter().map(|x| x * c).collect::<Vec<_>>();
        store.assign(layer.self_name(), &scaled(self_w)).unwrap();
        for r in layer.relation_names() {
            store.assign(r, &scaled(rel_w)).unwrap();
        }
    }

    fn graph_from(
        g: &mut Graph<f64>,
        pairs: &[(usize, usize)],
        probs: &Tensor<f64>,
        nodes: usize,
        h: &Tensor<f64>,
        mode: ArcMode,
    ) -> RelationalGraph {
        let p = g.constant(probs);
        let adjacency = typed_adjacency(g, pairs, p, nodes, mode).unwrap();
        let nodes_v = g.constant(h);
        RelationalGraph {
            num_utterances: nodes.saturating_sub(4),
            num_nodes: nodes,
            num_types: probs.cols(),
            mode,
            nodes: nodes_v,
            arcs: Vec::new(),
            adjacency,
        }
    }

    #[test]
    fn isolated_node_keeps_nonnegative_features() {
        let mut store = ParameterStore::<f64>::new(0);
        let layer = RgcnLayer::new(&mut store, 0, 3, 2).unwrap();
        set_identity_self(&mut store, &layer, 3, 1.0, 0.0);
        let h = Tensor::from_f64(vec![5, 3], &[0.5, 1.0, 2.0, 0.1, 0.2, 0.3, 1.0, 1.0, 1.0, 0.0, 0.4, 0.0, 3.0, 0.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let probs = Tensor::from_f64(vec![1, 2], &[0.7, 0.3]).unwrap();
        let graph = graph_from(&mut g, &[(1, 2)], &probs, 5, &h, ArcMode::Soft);
        let out = layer.forward(&mut g, &store, &graph, graph.nodes).unwrap();
        assert_eq!(g.value(out)[..3], h.data()[..3]);
    }

    #[test]
    fn single_arc_copies_message() {
        let mut store = ParameterStore::<f64>::new(0);
        let layer = RgcnLayer::new(&mut store, 0, 2, 1).unwrap();
        set_identity_self(&mut store, &layer, 2, 0.0, 1.0);
        let h = Tensor::from_f64(vec![5, 2], &[9.0, 9.0, 0.25, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let probs = Tensor::from_f64(vec![1, 1], &[1.0]).unwrap();
        let graph = graph_from(&mut g, &[(1, 0)], &probs, 5, &h, ArcMode::Hard);
        let out = layer.forward(&mut g, &store, &graph, graph.nodes).unwrap();
        assert_eq!(g.value(out)[..2], [0.25, 4.0]);
    }

    #[test]
    fn gradients_reach_relational_attention_in_soft_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cfg(8, 4, 3);
        let mut store = ParameterStore::<f64>::new(2);
        let urr = Urr::new(&mut store, &c).unwrap();
        let mut g = Graph::new();
        let u = g.constant(&random(&mut rng, &[3, 8]));
        let o = g.constant(&random(&mut rng, &[4, 8]));
        let out = urr.forward(&mut g, &store, u, o, ArcMode::Soft).unwrap();
        let loss = g.sum(out.options);
        g.backward(loss).unwrap();
        store.accumulate_grads(&g).unwrap();
        let mut names: Vec<&str> = urr.attention.projection_names().to_vec();
        for l in urr.attention.classifier() {
            names.push(l.weight_name());
        }
        for name in names {
            let norm: f64 = store.get(name).unwrap().grad().unwrap().iter().map(|x| x * x).sum();
            assert!(norm > 0.0, "{name} received no gradient");
        }
    }

    #[test]
    fn hard_mode_blocks_classifier_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cfg(8, 4, 3);
        let mut store = ParameterStore::<f64>::new(2);
        let urr = Urr::new(&mut store, &c).unwrap();
        let mut g = Graph::new();
        let u = g.constant(&random(&mut rng, &[3, 8]));
        let o = g.constant(&random(&mut rng, &[4, 8]));
        let out = urr.forward(&mut g, &store, u, o, ArcMode::Hard).unwrap();
        let loss = g.sum(out.options);
        g.backward(loss).unwrap();
        store.accumulate_grads(&g).unwrap();
        let grad = store.get(urr.attention.classifier()[1].weight_name()).unwrap().grad().unwrap();
        assert!(grad.iter().all(|&x| x == 0.0));
    }
}
