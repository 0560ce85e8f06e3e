#![allow(clippy::needless_range_loop, clippy::type_complexity)]
#![allow(dead_code)]

use multisense::gat::{GatConfig, GatLayer, LocalGraph};
use multisense::nn::{CausalTransformer, GruCell, Linear, TransformerConfig};
use multisense::tensor::{seeded_rng, Bound, ParamStore, Rng, Tape, Tensor, Var};
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;

/// Worst entry-wise relative error between the tape gradient and central
/// differences, over every parameter in `store`.
pub fn gradcheck<F>(store: &ParamStore<f64>, f: F) -> f64
where
    F: for<'t, 's> Fn(&Bound<'t, 's, f64>) -> multisense::Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let grads = {
        let p = store.bind(&tape, true);
        tape.backward(f(&p).unwrap()).unwrap()
    };
    let eval = |s: &ParamStore<f64>| {
        let t = Tape::new();
        let p = s.bind(&t, false);
        f(&p).unwrap().item().unwrap()
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for name in &names {
        let n = store.get(name).unwrap().numel();
        for i in 0..n {
            let orig = store.get(name).unwrap().data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.param(name).map_or(0.0, |g| g.data()[i]);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn random_rows(rng: &mut Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Erdős–Rényi edges over `n` nodes.
pub fn random_edges(rng: &mut Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn gat_layer(d_in: usize, d_out: usize, heads: usize, seed: u64) -> (ParamStore<f64>, GatLayer) {
    let mut store = ParamStore::new();
    let cfg = GatConfig {
        d_in,
        d_out,
        heads,
        negative_slope: 0.2,
        elu_alpha: 1.0,
        self_loops: true,
    };
    let layer = GatLayer::new(&mut store, "gat", cfg, &mut seeded_rng(seed)).unwrap();
    (store, layer)
}

pub struct DenseGat {
    /// `alpha[h][i][j]`, zero off the neighbourhood.
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub out: Vec<Vec<f64>>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn elu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * (x.exp() - 1.0)
    }
}

/// Textbook GAT over a dense adjacency matrix (self-loops included).
pub fn dense_gat(store: &ParamStore<f64>, cfg: &GatConfig, x: &[Vec<f64>], edges: &[(usize, usize)]) -> DenseGat {
    let n = x.len();
    let mut adj = vec![vec![false; n]; n];
    for &(i, j) in edges {
        adj[i][j] = true;
        adj[j][i] = true;
    }
    for (i, row) in adj.iter_mut().enumerate() {
        row[i] = true;
    }
    let mut alpha = Vec::new();
    let mut out = vec![Vec::new(); n];
    for h in 0..cfg.heads {
        let w = store.get(&format!("gat.head{h}.w")).unwrap();
        let a = store.get(&format!("gat.head{h}.a")).unwrap();
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|xi| (0..cfg.d_out).map(|r| (0..cfg.d_in).map(|c| w.at(r, c) * xi[c]).sum()).collect())
            .collect();
        let mut att = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut e = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if adj[i][j] {
                    let s: f64 = (0..cfg.d_out).map(|k| a.at(0, k) * z[i][k] + a.at(0, cfg.d_out + k) * z[j][k]).sum();
                    e[j] = leaky(s, cfg.negative_slope);
                }
            }
            let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = e.iter().map(|&v| (v - m).exp()).sum();
            for j in 0..n {
                att[i][j] = (e[j] - m).exp() / denom;
            }
            for k in 0..cfg.d_out {
                let v: f64 = (0..n).map(|j| att[i][j] * z[j][k]).sum();
                out[i].push(elu(v, cfg.elu_alpha));
            }
        }
        alpha.push(att);
    }
    DenseGat { alpha, out }
}

/// Uniform-looking random graph over `2..=max_n` nodes.
pub fn random_local_graph(rng: &mut Rng, max_n: usize) -> (usize, Vec<(usize, usize)>, LocalGraph) {
    let n = rng.random_range(2..=max_n);
    let p = rng.random_range(0.1..0.8);
    let edges = random_edges(rng, n, p);
    let g = LocalGraph::from_edges(n, &edges, true).unwrap();
    (n, edges, g)
}

/// Gradient check of one GRU cell step, inputs and state included.
pub fn gru_cell_error(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "cell", 4, 5, &mut rng).unwrap();
    store.insert("x", random_matrix(&mut rng, 3, 4)).unwrap();
    store.insert("h", random_matrix(&mut rng, 3, 5)).unwrap();
    let r = random_matrix(&mut rng, 3, 5);
    gradcheck(&store, |p| {
        let out = cell.forward(p, &p.get("x")?, &p.get("h")?)?;
        out.mul(&p.tape().constant(r.clone())?)?.sum()
    })
}

/// Two-layer tanh network under cross-entropy.
pub fn feed_forward_error(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::new();
    let l1 = Linear::new(&mut store, "l1", 6, 8, true, &mut rng).unwrap();
    let l2 = Linear::new(&mut store, "l2", 8, 5, true, &mut rng).unwrap();
    store.insert("x", random_matrix(&mut rng, 4, 6)).unwrap();
    gradcheck(&store, |p| {
        let h = l1.forward(p, &p.get("x")?)?.tanh()?;
        l2.forward(p, &h)?.cross_entropy(&[0, 3, 1, 4])
    })
}

/// One pre-norm causal transformer block.
pub fn attention_block_error(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::new();
    let cfg = TransformerConfig {
        d_model: 8,
        layers: 1,
        heads: 2,
        ff_dim: 12,
        context: 8,
    };
    let block = CausalTransformer::new(&mut store, "tf", cfg, &mut rng).unwrap();
    store.insert("x", random_matrix(&mut rng, 5, 8)).unwrap();
    let r = random_matrix(&mut rng, 5, 8);
    gradcheck(&store, |p| block.forward(p, &p.get("x")?)?.mul(&p.tape().constant(r.clone())?)?.sum())
}

/// GAT layer on a random graph, node states included.
pub fn gat_layer_error(seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let (mut store, layer) = gat_layer(6, 3, 2, seed);
    let (n, _, graph) = random_local_graph(&mut rng, 8);
    store.insert("x", random_matrix(&mut rng, n, 6)).unwrap();
    let r = random_matrix(&mut rng, n, 6);
    gradcheck(&store, |p| layer.forward(p, &p.get("x")?, &graph)?.mul(&p.tape().constant(r.clone())?)?.sum())
}

pub fn toy_config(out: &std::path::Path) -> multisense::config::RunConfig {
    let mut c = multisense::config::RunConfig::from_toml(multisense::toy::CONFIG).unwrap();
    c.out_dir = out.to_path_buf();
    c
}

pub fn toy_workspace(cfg: &multisense::config::RunConfig) -> multisense::Workspace {
    let t = multisense::toy::load::<f64>().unwrap();
    multisense::Workspace::from_parts(cfg, t.pretrain, t.labelled, t.inventory, t.vectors).unwrap()
}

/// Deterministic ranking: descending score, ties to the earlier index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}
