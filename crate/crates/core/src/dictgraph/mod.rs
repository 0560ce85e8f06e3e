//! Dictionary graph of words, senses and glosses, and bounded areas around
//! a word's global node.

mod build;
mod inventory;
mod vectors;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use build::{build_graph, BuildReport, GraphSources};
pub use inventory::{Inventory, SenseRecord, WordRecord};
pub use vectors::{gloss_tokens, sentence_embed, WordVectors, FALLBACK_STD};

use crate::corpus::WordId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_AREA_NODES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Global,
    Sense,
    Definition,
    Example,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    HasSense,
    HasDefinition,
    HasExample,
    Synonym,
    Antonym,
    LemmaOf,
}

impl Relation {
    pub fn is_symmetric(self) -> bool {
        matches!(self, Relation::Synonym | Relation::Antonym)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    /// Word form, sense key, or gloss text.
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
}

/// Heterogeneous graph with one `d`-dimensional vector per node.
///
/// Adjacency is undirected for area extraction; edge direction is kept only
/// for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct DictGraph<T> {
    dim: usize,
    nodes: Vec<Node>,
    vectors: Vec<T>,
    edges: BTreeSet<Edge>,
    adjacency: Vec<BTreeSet<usize>>,
    globals: BTreeMap<String, usize>,
    senses: BTreeMap<String, usize>,
    word_nodes: Vec<usize>,
}

/// Bounded neighbourhood of a global node. `nodes[0]` is the center.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphArea {
    pub center: usize,
    pub nodes: Vec<usize>,
    /// Induced undirected edges as pairs of positions into `nodes`, `i < j`.
    pub edges: Vec<(usize, usize)>,
}

impl GraphArea {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Neighbour lists over area positions, without self-loops.
    pub fn neighbour_lists(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for &(i, j) in &self.edges {
            out[i].push(j);
            out[j].push(i);
        }
        out.iter_mut().for_each(|l| l.sort_unstable());
        out
    }
}

impl<T: Scalar> DictGraph<T> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Graph("node dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            nodes: Vec::new(),
            vectors: Vec::new(),
            edges: BTreeSet::new(),
            adjacency: Vec::new(),
            globals: BTreeMap::new(),
            senses: BTreeMap::new(),
            word_nodes: Vec::new(),
        })
    }

    /// Adds a node. Global labels and sense keys must be unique.
    pub fn add_node(&mut self, kind: NodeKind, label: impl Into<String>, vector: Vec<T>) -> Result<usize> {
        let label = label.into();
        if vector.len() != self.dim {
            return Err(Error::shape(
                "graph.add_node",
                format!("vector of `{label}` has dim {}, expected {}", vector.len(), self.dim),
            ));
        }
        let id = self.nodes.len();
        let index = match kind {
            NodeKind::Global => Some(&mut self.globals),
            NodeKind::Sense => Some(&mut self.senses),
            _ => None,
        };
        if let Some(index) = index {
            if index.insert(label.clone(), id).is_some() {
                return Err(Error::Graph(format!("duplicate {kind:?} node `{label}`")));
            }
        }
        self.nodes.push(Node { id, kind, label });
        self.vectors.extend(vector);
        self.adjacency.push(BTreeSet::new());
        Ok(id)
    }

    /// Adds an edge; duplicates are ignored and symmetric relations are
    /// stored with `src < dst`.
    pub fn add_edge(&mut self, src: usize, dst: usize, relation: Relation) -> Result<()> {
        let n = self.nodes.len();
        for id in [src, dst] {
            if id >= n {
                return Err(Error::OutOfRange {
                    what: "graph node",
                    id,
                    size: n,
                });
            }
        }
        if src == dst {
            return Err(Error::Graph(format!("self-edge on node {src}")));
        }
        let (src, dst) = if relation.is_symmetric() { (src.min(dst), src.max(dst)) } else { (src, dst) };
        self.edges.insert(Edge { src, dst, relation });
        self.adjacency[src].insert(dst);
        self.adjacency[dst].insert(src);
        Ok(())
    }

    /// Sets the node of each vocabulary word; entry 0 (`<unk>`) is the
    /// fallback for unknown ids.
    pub fn set_word_nodes(&mut self, word_nodes: Vec<usize>) -> Result<()> {
        for &id in &word_nodes {
            if self.nodes.get(id).map(|n| n.kind) != Some(NodeKind::Global) {
                return Err(Error::Graph(format!("word node {id} is not a global node")));
            }
        }
        self.word_nodes = word_nodes;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn vector(&self, id: usize) -> &[T] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    /// All node vectors as an `[N, d]` matrix.
    pub fn vectors(&self) -> Result<Tensor<T>> {
        Tensor::matrix(self.nodes.len(), self.dim, self.vectors.clone())
    }

    pub fn neighbours(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[id].iter().copied()
    }

    pub fn degree(&self, id: usize) -> usize {
        self.adjacency[id].len()
    }

    pub fn global(&self, label: &str) -> Option<usize> {
        self.globals.get(label).copied()
    }

    pub fn sense_node(&self, key: &str) -> Option<usize> {
        self.senses.get(key).copied()
    }

    pub fn word_nodes(&self) -> &[usize] {
        &self.word_nodes
    }

    /// Global node of a vocabulary word; unknown ids fall back to `<unk>`.
    pub fn word_node(&self, word: WordId) -> Result<usize> {
        self.word_nodes
            .get(word.0)
            .or_else(|| self.word_nodes.first())
            .copied()
            .ok_or_else(|| Error::Graph("graph has no word nodes".into()))
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Each sense touches a global node and every gloss node touches exactly
    /// one sense node.
    pub fn check_invariants(&self) -> Result<()> {
        for n in &self.nodes {
            let neighbour_kinds = || self.neighbours(n.id).map(|j| self.nodes[j].kind);
            match n.kind {
                NodeKind::Sense if !neighbour_kinds().any(|k| k == NodeKind::Global) => {
                    return Err(Error::Graph(format!("sense `{}` has no global node", n.label)));
                }
                NodeKind::Definition | NodeKind::Example => {
                    let senses = neighbour_kinds().filter(|&k| k == NodeKind::Sense).count();
                    if senses != 1 {
                        return Err(Error::Graph(format!("gloss node {} touches {senses} senses", n.id)));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// 1-hop area around `center` with at most `max_nodes` members.
    ///
    /// Neighbours are kept in priority order: sense nodes, other global
    /// nodes, definitions, examples; ascending id within each class.
    pub fn area(&self, center: usize, max_nodes: usize) -> Result<GraphArea> {
        if center >= self.nodes.len() {
            return Err(Error::OutOfRange {
                what: "graph node",
                id: center,
                size: self.nodes.len(),
            });
        }
        if max_nodes == 0 {
            return Err(Error::Config("area size must be positive".into()));
        }
        let class = |k: NodeKind| match k {
            NodeKind::Sense => 0,
            NodeKind::Global => 1,
            NodeKind::Definition => 2,
            NodeKind::Example => 3,
        };
        let mut ranked: Vec<(u8, usize)> = self.neighbours(center).map(|j| (class(self.nodes[j].kind), j)).collect();
        ranked.sort_unstable();
        let mut nodes = vec![center];
        nodes.extend(ranked.into_iter().take(max_nodes - 1).map(|(_, j)| j));
        let pos: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut edges = Vec::new();
        for (i, &n) in nodes.iter().enumerate() {
            for m in self.adjacency[n].range(n + 1..) {
                if let Some(&j) = pos.get(m) {
                    edges.push((i.min(j), i.max(j)));
                }
            }
        }
        edges.sort_unstable();
        Ok(GraphArea { center, nodes, edges })
    }

    /// Area around the global node of `word` (or of `<unk>`).
    pub fn area_for_word(&self, word: WordId, max_nodes: usize) -> Result<GraphArea> {
        self.area(self.word_node(word)?, max_nodes)
    }

    pub fn to_dump(&self) -> GraphDump {
        GraphDump {
            dim: self.dim,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDump {
                    id: n.id,
                    kind: n.kind,
                    label: n.label.clone(),
                    vector: self.vector(n.id).iter().map(|x| x.as_f64()).collect(),
                })
                .collect(),
            edges: self.edges.iter().copied().collect(),
            word_nodes: self.word_nodes.clone(),
        }
    }

    pub fn from_dump(dump: &GraphDump) -> Result<Self> {
        let mut g = Self::new(dump.dim)?;
        for (i, n) in dump.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::Graph(format!("node ids not dense at {i}")));
            }
            g.add_node(n.kind, n.label.clone(), n.vector.iter().map(|&x| T::lit(x)).collect())?;
        }
        for e in &dump.edges {
            g.add_edge(e.src, e.dst, e.relation)?;
        }
        g.set_word_nodes(dump.word_nodes.clone())?;
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_dump())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_dump(&serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Node/edge JSON for inspection and reloading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub dim: usize,
    pub nodes: Vec<NodeDump>,
    pub edges: Vec<Edge>,
    pub word_nodes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: usize,
    pub kind: NodeKind,
    pub label: String,
    pub vector: Vec<f64>,
}
