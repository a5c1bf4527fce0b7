use irrgn::tensor::{Graph, ParameterStore, Tensor};
use irrgn::urr::{argmax, build_graph, typed_adjacency, Arc, ArcTypeResult, RelationalAttention, RelationalGraph, RgcnLayer};
use irrgn::{ArcMode, ModelConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Matrix = Vec<Vec<f64>>;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn tensor(m: &Matrix) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

fn param(store: &ParameterStore<f64>, name: &str) -> Matrix {
    store.get(name).unwrap().to_rows()
}

/// `ReLU(Σ_r A_r·H·W_rᵀ + H·W_0ᵀ)` with `A_r` rebuilt from the arc list
/// (rows divided by `max(mass, 1)`) and every product written as loops.
fn dense_oracle(arcs: &[(usize, usize, Vec<f64>)], h: &Matrix, w0: &Matrix, wr: &[Matrix], hard: bool) -> Matrix {
    let m = h.len();
    let d = h[0].len();
    let mut out = vec![vec![0.0; d]; m];
    for i in 0..m {
        for k in 0..d {
            out[i][k] = (0..d).map(|j| h[i][j] * w0[k][j]).sum();
        }
    }
    for (r, w) in wr.iter().enumerate() {
        let mut a = vec![vec![0.0; m]; m];
        for (s, e, p) in arcs {
            let weight = if hard {
                let best = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let first = p.iter().position(|&x| x == best).unwrap();
                if first == r { 1.0 } else { 0.0 }
            } else {
                p[r]
            };
            a[*e][*s] += weight;
        }
        for row in a.iter_mut() {
            let mass: f64 = row.iter().sum::<f64>().max(1.0);
            row.iter_mut().for_each(|x| *x /= mass);
        }
        for i in 0..m {
            for k in 0..d {
                let mut acc = 0.0;
                for j in 0..m {
                    if a[i][j] != 0.0 {
                        acc += a[i][j] * (0..d).map(|c| h[j][c] * w[k][c]).sum::<f64>();
                    }
                }
                out[i][k] += acc;
            }
        }
    }
    out.into_iter().map(|row| row.into_iter().map(|x| x.max(0.0)).collect()).collect()
}

fn max_diff(a: &[f64], b: &Matrix) -> f64 {
    a.iter().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random graph: `N ∈ 1..=4` utterances plus 4 options, a random subset of
/// the legal arcs, and random type distributions.
fn random_graph(
    rng: &mut ChaCha8Rng,
    g: &mut Graph<f64>,
    t: usize,
    d: usize,
    mode: ArcMode,
) -> (RelationalGraph, Vec<(usize, usize, Vec<f64>)>, Matrix) {
    let n = rng.gen_range(1..=4);
    let m = n + 4;
    let mut arcs = Vec::new();
    for s in 0..n {
        for e in 0..m {
            if e != s && rng.gen_bool(0.7) {
                let logits: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let z: f64 = logits.iter().map(|x| x.exp()).sum();
                arcs.push((s, e, logits.iter().map(|x| x.exp() / z).collect::<Vec<f64>>()));
            }
        }
    }
    let h = random_matrix(rng, m, d);
    let nodes = g.constant(&tensor(&h));
    let pairs: Vec<(usize, usize)> = arcs.iter().map(|(s, e, _)| (*s, *e)).collect();
    let flat: Vec<f64> = arcs.iter().flat_map(|(_, _, p)| p.clone()).collect();
    let probs = g.variable(&Tensor::new(vec![arcs.len(), t], flat).unwrap());
    let adjacency = typed_adjacency(g, &pairs, probs, m, mode).unwrap();
    let arc_list = arcs
        .iter()
        .map(|(s, e, p)| Arc { src: *s, dst: *e, kind: ArcTypeResult { z: vec![], probs: p.clone(), hard_type: argmax(p) } })
        .collect();
    let graph = RelationalGraph { num_utterances: n, num_nodes: m, num_types: t, mode, nodes, arcs: arc_list, adjacency };
    (graph, arcs, h)
}

fn layer_weights(store: &ParameterStore<f64>, layer: &RgcnLayer) -> (Matrix, Vec<Matrix>) {
    (param(store, layer.self_name()), layer.relation_names().iter().map(|n| param(store, n)).collect())
}

#[test]
fn rgcn_matches_dense_oracle_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let t = rng.gen_range(1..=4);
        let d = rng.gen_range(2..=6);
        let mut store = ParameterStore::<f64>::new(case);
        let layer = RgcnLayer::new(&mut store, 0, d, t).unwrap();
        let (w0, wr) = layer_weights(&store, &layer);
        for (mode, hard) in [(ArcMode::Soft, false), (ArcMode::Hard, true)] {
            let mut g = Graph::new();
            let (graph, arcs, h) = random_graph(&mut rng, &mut g, t, d, mode);
            let out = layer.forward(&mut g, &store, &graph, graph.nodes).unwrap();
            let diff = max_diff(g.value(out), &dense_oracle(&arcs, &h, &w0, &wr, hard));
            assert!(diff < 1e-10, "case {case} {mode:?}: {diff:e}");
            worst = worst.max(diff);
        }
    }
    assert!(worst < 1e-10);
}

#[test]
fn built_graphs_match_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..10u64 {
        let cfg = ModelConfig { d: 6, n_proj: 3, arc_types: 3, heads: 1, ..ModelConfig::tiny() };
        let mut store = ParameterStore::<f64>::new(case);
        let att = RelationalAttention::new(&mut store, &cfg).unwrap();
        let layer = RgcnLayer::new(&mut store, 0, 6, 3).unwrap();
        let (w0, wr) = layer_weights(&store, &layer);
        let n = 1 + case as usize % 4;
        let u = random_matrix(&mut rng, n, 6);
        let o = random_matrix(&mut rng, 4, 6);
        for (mode, hard) in [(ArcMode::Soft, false), (ArcMode::Hard, true)] {
            let mut g = Graph::new();
            let uv = g.constant(&tensor(&u));
            let ov = g.constant(&tensor(&o));
            let graph = build_graph(&mut g, &store, &att, uv, ov, mode).unwrap();
            assert_eq!(graph.arcs.len(), n * (n - 1) + 4 * n);
            let arcs: Vec<_> = graph.arcs.iter().map(|a| (a.src, a.dst, a.kind.probs.clone())).collect();
            let h: Matrix = u.iter().chain(o.iter()).cloned().collect();
            let out = layer.forward(&mut g, &store, &graph, graph.nodes).unwrap();
            assert!(max_diff(g.value(out), &dense_oracle(&arcs, &h, &w0, &wr, hard)) < 1e-10);
        }
    }
}

/// Plain graph convolution: mean over in-neighbours, one shared weight.
fn gcn_oracle(edges: &[(usize, usize)], h: &Matrix, w0: &Matrix, w: &Matrix) -> Matrix {
    let m = h.len();
    let d = h[0].len();
    let lin = |x: &[f64], w: &Matrix| (0..d).map(|k| (0..d).map(|j| x[j] * w[k][j]).sum::<f64>()).collect::<Vec<f64>>();
    (0..m)
        .map(|i| {
            let mut out = lin(&h[i], w0);
            let nbrs: Vec<usize> = edges.iter().filter(|&&(_, e)| e == i).map(|&(s, _)| s).collect();
            for &j in &nbrs {
                for (o, x) in out.iter_mut().zip(lin(&h[j], w)) {
                    *o += x / nbrs.len() as f64;
                }
            }
            out.into_iter().map(|x| x.max(0.0)).collect()
        })
        .collect()
}

#[test]
fn single_type_is_an_untyped_gcn() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..30 {
        let d = rng.gen_range(2..=6);
        let mut store = ParameterStore::<f64>::new(case);
        let layer = RgcnLayer::new(&mut store, 0, d, 1).unwrap();
        let (w0, wr) = layer_weights(&store, &layer);
        for mode in [ArcMode::Soft, ArcMode::Hard] {
            let mut g = Graph::new();
            let (graph, arcs, h) = random_graph(&mut rng, &mut g, 1, d, mode);
            let edges: Vec<(usize, usize)> = arcs.iter().map(|(s, e, _)| (*s, *e)).collect();
            let out = layer.forward(&mut g, &store, &graph, graph.nodes).unwrap();
            let diff = max_diff(g.value(out), &gcn_oracle(&edges, &h, &w0, &wr[0]));
            assert!(diff < 1e-10, "case {case}: {diff:e}");
        }
    }
}

/// Arc logits are distinct multiples of 0.5, so the limit has no ties.
#[test]
fn low_temperature_soft_graph_converges_to_hard() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let tau = 1e-3;
    let mut worst: f64 = 0.0;
    for case in 0..30u64 {
        let t = rng.gen_range(1..=4);
        let d = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=4);
        let mut store = ParameterStore::<f64>::new(case);
        let layer = RgcnLayer::new(&mut store, 0, d, t).unwrap();
        let pairs = irrgn::urr::arc_pairs(n).unwrap();
        let logits: Vec<f64> = pairs
            .iter()
            .flat_map(|_| {
                let mut grid: Vec<f64> = (0..t).map(|k| k as f64 * 0.5).collect();
                grid.shuffle(&mut rng);
                grid
            })
            .collect();
        let h = tensor(&random_matrix(&mut rng, n + 4, d));
        let run = |mode| {
            let mut g = Graph::new();
            let l = g.variable(&Tensor::new(vec![pairs.len(), t], logits.clone()).unwrap());
            let l = g.scale(l, 1.0 / tau);
            let probs = g.softmax(l, 1).unwrap();
            let adjacency = typed_adjacency(&mut g, &pairs, probs, n + 4, mode).unwrap();
            let nodes = g.constant(&h);
            let graph = RelationalGraph { num_utterances: n, num_nodes: n + 4, num_types: t, mode, nodes, arcs: vec![], adjacency };
            let out = layer.forward(&mut g, &store, &graph, nodes).unwrap();
            g.value(out).to_vec()
        };
        let (soft, hard) = (run(ArcMode::Soft), run(ArcMode::Hard));
        worst = worst.max(soft.iter().zip(&hard).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    assert!(worst < 1e-6, "soft and hard differ by {worst:e} at τ = {tau}");
}
