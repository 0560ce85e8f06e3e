//! Graph attention over a graph area.
//!
//! Per head, `z_j = W h_j`, `e_ij = LeakyReLU(a · [z_i; z_j])` over the
//! neighbours of `i`, `α_i = softmax(e_i)`, `h'_i = ELU(Σ_j α_ij z_j)`; the
//! heads are concatenated.

use std::sync::Arc;

use crate::corpus::WordId;
use crate::dictgraph::{DictGraph, GraphArea, MAX_AREA_NODES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{concat_cols, concat_rows, xavier_uniform, Bound, ParamStore, Rng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub heads: usize,
    pub negative_slope: f64,
    pub elu_alpha: f64,
    pub self_loops: bool,
}

impl GatConfig {
    /// Two heads of width `d_in / 2`, so the output width equals `d_in`.
    pub fn for_width(d_in: usize) -> Result<Self> {
        if d_in < 2 || !d_in.is_multiple_of(2) {
            return Err(Error::Config(format!("GAT input width must be even and >= 2, got {d_in}")));
        }
        Ok(Self {
            d_in,
            d_out: d_in / 2,
            heads: 2,
            negative_slope: 0.2,
            elu_alpha: 1.0,
            self_loops: true,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.heads * self.d_out
    }
}

/// Neighbour lists over local node positions, self-loops already applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalGraph {
    neighbours: Vec<Vec<usize>>,
}

impl LocalGraph {
    /// From undirected neighbour lists; with `self_loops`, every node also
    /// attends to itself.
    pub fn new(mut neighbours: Vec<Vec<usize>>, self_loops: bool) -> Result<Self> {
        let n = neighbours.len();
        if n == 0 {
            return Err(Error::Empty("local graph"));
        }
        for (i, list) in neighbours.iter_mut().enumerate() {
            if let Some(&bad) = list.iter().find(|&&j| j >= n) {
                return Err(Error::OutOfRange {
                    what: "local node",
                    id: bad,
                    size: n,
                });
            }
            if self_loops {
                list.push(i);
            }
            list.sort_unstable();
            list.dedup();
            if list.is_empty() {
                return Err(Error::Graph(format!("node {i} has no neighbours and self-loops are disabled")));
            }
        }
        Ok(Self { neighbours })
    }

    pub fn from_area(area: &GraphArea, self_loops: bool) -> Result<Self> {
        Self::new(area.neighbour_lists(), self_loops)
    }

    /// From an undirected edge list over `n` nodes.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], self_loops: bool) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i.max(j) >= n {
                return Err(Error::OutOfRange {
                    what: "local node",
                    id: i.max(j),
                    size: n,
                });
            }
            lists[i].push(j);
            lists[j].push(i);
        }
        Self::new(lists, self_loops)
    }

    pub fn len(&self) -> usize {
        self.neighbours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbours.is_empty()
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }
}

/// Single GAT layer; parameters `{name}.head{h}.w` (`[d_out, d_in]`) and
/// `{name}.head{h}.a` (`[1, 2 d_out]`).
#[derive(Clone, Debug)]
pub struct GatLayer {
    config: GatConfig,
    weights: Vec<String>,
    attn: Vec<String>,
}

impl GatLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, config: GatConfig, rng: &mut Rng) -> Result<Self> {
        if config.heads == 0 || config.d_in == 0 || config.d_out == 0 {
            return Err(Error::Config("GAT dimensions must be positive".into()));
        }
        let mut weights = Vec::new();
        let mut attn = Vec::new();
        for h in 0..config.heads {
            let w = format!("{name}.head{h}.w");
            let a = format!("{name}.head{h}.a");
            store.insert(&w, xavier_uniform(rng, config.d_out, config.d_in))?;
            store.insert(&a, xavier_uniform(rng, 1, 2 * config.d_out))?;
            weights.push(w);
            attn.push(a);
        }
        Ok(Self { config, weights, attn })
    }

    pub fn config(&self) -> &GatConfig {
        &self.config
    }

    /// Projected states `z` and the two attention score halves per head.
    fn project<'t, T: Scalar>(
        &self,
        p: &Bound<'t, '_, T>,
        x: &Var<'t, T>,
        head: usize,
    ) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>)> {
        let (_, d) = x.dims();
        if d != self.config.d_in {
            return Err(Error::shape("gat", format!("state width {d}, layer expects {}", self.config.d_in)));
        }
        let w = p.get(&self.weights[head])?;
        let a = p.get(&self.attn[head])?;
        let z = x.matmul(&w.transpose()?)?;
        let k = self.config.d_out;
        let src = z.matmul(&a.slice_cols(0, k)?.transpose()?)?;
        let dst = z.matmul(&a.slice_cols(k, 2 * k)?.transpose()?)?;
        Ok((z, src, dst))
    }

    fn attend<'t, T: Scalar>(
        &self,
        z: &Var<'t, T>,
        src: &Var<'t, T>,
        dst: &Var<'t, T>,
        graph: &LocalGraph,
        i: usize,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let nb = graph.neighbours(i);
        let e = src
            .gather_rows(&vec![i; nb.len()])?
            .add(&dst.gather_rows(nb)?)?
            .transpose()?
            .leaky_relu(T::lit(self.config.negative_slope))?;
        let alpha = e.softmax()?;
        Ok((alpha, alpha.matmul(&z.gather_rows(nb)?)?))
    }

    fn check<T: Scalar>(&self, x: &Var<'_, T>, graph: &LocalGraph) -> Result<()> {
        if x.dims().0 != graph.len() {
            return Err(Error::shape(
                "gat",
                format!("{} states for {} nodes", x.dims().0, graph.len()),
            ));
        }
        Ok(())
    }

    /// Updated states of every node, `[n, heads * d_out]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, '_, T>, x: &Var<'t, T>, graph: &LocalGraph) -> Result<Var<'t, T>> {
        self.check(x, graph)?;
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (z, src, dst) = self.project(p, x, h)?;
            let rows = (0..graph.len())
                .map(|i| self.attend(&z, &src, &dst, graph, i).map(|(_, out)| out))
                .collect::<Result<Vec<_>>>()?;
            heads.push(concat_rows(&rows)?.elu(T::lit(self.config.elu_alpha))?);
        }
        concat_cols(&heads)
    }

    /// Updated state of node `node` only, `[1, heads * d_out]`.
    pub fn forward_node<'t, T: Scalar>(
        &self,
        p: &Bound<'t, '_, T>,
        x: &Var<'t, T>,
        graph: &LocalGraph,
        node: usize,
    ) -> Result<Var<'t, T>> {
        self.check(x, graph)?;
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (z, src, dst) = self.project(p, x, h)?;
            let (_, out) = self.attend(&z, &src, &dst, graph, node)?;
            heads.push(out.elu(T::lit(self.config.elu_alpha))?);
        }
        concat_cols(&heads)
    }

    /// Attention weights `α[head][i]` over `graph.neighbours(i)`.
    pub fn attention<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, graph: &LocalGraph) -> Result<Vec<Vec<Vec<T>>>> {
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let xv = tape.constant(x.detached())?;
        self.check(&xv, graph)?;
        let mut out = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (z, src, dst) = self.project(&p, &xv, h)?;
            let rows = (0..graph.len())
                .map(|i| self.attend(&z, &src, &dst, graph, i).map(|(a, _)| a.value().into_data()))
                .collect::<Result<Vec<_>>>()?;
            out.push(rows);
        }
        Ok(out)
    }
}

/// GAT-updated global node of a word, used as an extra input signal.
///
/// States are the graph's initial node vectors; only the GAT parameters are
/// trained.
#[derive(Clone, Debug)]
pub struct GraphSignal<T> {
    graph: Arc<DictGraph<T>>,
    layer: GatLayer,
    max_nodes: usize,
}

impl<T: Scalar> GraphSignal<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, graph: Arc<DictGraph<T>>, rng: &mut Rng) -> Result<Self> {
        let layer = GatLayer::new(store, name, GatConfig::for_width(graph.dim())?, rng)?;
        Ok(Self {
            graph,
            layer,
            max_nodes: MAX_AREA_NODES,
        })
    }

    pub fn graph(&self) -> &Arc<DictGraph<T>> {
        &self.graph
    }

    pub fn layer(&self) -> &GatLayer {
        &self.layer
    }

    pub fn dim(&self) -> usize {
        self.layer.config().output_dim()
    }

    /// Area states and local structure for `word`.
    pub fn local(&self, word: WordId) -> Result<(Tensor<T>, LocalGraph)> {
        let area = self.graph.area_for_word(word, self.max_nodes)?;
        let d = self.graph.dim();
        let mut data = Vec::with_capacity(area.len() * d);
        for &n in &area.nodes {
            data.extend_from_slice(self.graph.vector(n));
        }
        let x = Tensor::matrix(area.len(), d, data)?;
        Ok((x, LocalGraph::from_area(&area, self.layer.config().self_loops)?))
    }

    /// `[1, dim]` signal for `word`.
    pub fn encode<'t>(&self, p: &Bound<'t, '_, T>, word: WordId) -> Result<Var<'t, T>> {
        let (x, g) = self.local(word)?;
        let xv = p.tape().constant(x)?;
        self.layer.forward_node(p, &xv, &g, 0)
    }

    /// `[n, dim]` signals for a sequence of words.
    pub fn encode_all<'t>(&self, p: &Bound<'t, '_, T>, words: &[WordId]) -> Result<Var<'t, T>> {
        let rows = words.iter().map(|&w| self.encode(p, w)).collect::<Result<Vec<_>>>()?;
        concat_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_rng;

    fn layer(d: usize, seed: u64) -> (ParamStore<f64>, GatLayer) {
        let mut store = ParamStore::new();
        let l = GatLayer::new(&mut store, "gat", GatConfig::for_width(d).unwrap(), &mut seeded_rng(seed)).unwrap();
        (store, l)
    }

    fn run(store: &ParamStore<f64>, l: &GatLayer, x: &Tensor<f64>, g: &LocalGraph) -> Tensor<f64> {
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let xv = tape.constant(x.clone()).unwrap();
        l.forward(&p, &xv, g).unwrap().value()
    }

    #[test]
    fn singleton_self_loop_is_elu_of_projection() {
        let (store, l) = layer(4, 1);
        let x = Tensor::row(vec![0.3, -0.2, 0.5, 1.0]);
        let g = LocalGraph::new(vec![vec![]], true).unwrap();
        assert_eq!(l.attention(&store, &x, &g).unwrap()[0][0], vec![1.0]);
        let out = run(&store, &l, &x, &g);
        for h in 0..2 {
            let w = store.get(&format!("gat.head{h}.w")).unwrap();
            for r in 0..2 {
                let z: f64 = (0..4).map(|c| w.at(r, c) * x.data()[c]).sum();
                let want = if z > 0.0 { z } else { z.exp() - 1.0 };
                assert!((out.at(0, h * 2 + r) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identical_symmetric_nodes_agree() {
        let (store, l) = layer(4, 2);
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        let g = LocalGraph::from_edges(2, &[(0, 1)], true).unwrap();
        let out = run(&store, &l, &x, &g);
        assert_eq!(out.row_slice(0), out.row_slice(1));
    }

    #[test]
    fn no_self_loop_isolated_node_is_an_error() {
        assert!(LocalGraph::new(vec![vec![1], vec![0], vec![]], false).is_err());
    }

    #[test]
    fn output_width_is_heads_times_d_out() {
        let (store, l) = layer(6, 3);
        let x = Tensor::full(&[3, 6], 0.5);
        let g = LocalGraph::from_edges(3, &[(0, 1), (0, 2)], true).unwrap();
        assert_eq!(run(&store, &l, &x, &g).shape(), &[3, 6]);
    }

    #[test]
    fn center_only_matches_full_forward() {
        let (store, l) = layer(4, 4);
        let x = Tensor::from_rows(&[vec![0.1, -0.4, 0.3, 0.0], vec![1.0, 0.2, -0.3, 0.4], vec![0.5, 0.5, 0.5, -1.0]]).unwrap();
        let g = LocalGraph::from_edges(3, &[(0, 1), (0, 2)], true).unwrap();
        let full = run(&store, &l, &x, &g);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let xv = tape.constant(x).unwrap();
        let c = l.forward_node(&p, &xv, &g, 0).unwrap().value();
        assert_eq!(c.data(), full.row_slice(0));
    }

    #[test]
    fn odd_width_is_rejected() {
        assert!(GatConfig::for_width(5).is_err());
    }
}
