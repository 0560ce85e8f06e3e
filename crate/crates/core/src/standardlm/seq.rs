use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::WordId;
use crate::dictgraph::DictGraph;
use crate::error::{Error, Result};
use crate::gat::GraphSignal;
use crate::nn::{CausalTransformer, Embedding, GruStack, Linear, TransformerConfig};
use crate::scalar::Scalar;
use crate::tensor::{concat_cols, concat_rows, seeded_rng, Bound, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backbone {
    Gru { layers: usize, hidden: usize },
    Transformer(TransformerConfig),
}

impl Backbone {
    pub fn width(&self) -> usize {
        match self {
            Backbone::Gru { hidden, .. } => *hidden,
            Backbone::Transformer(c) => c.d_model,
        }
    }
}

/// One embedded input stream: `rows` ids of width `dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputTable {
    pub rows: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqModelConfig {
    pub inputs: Vec<InputTable>,
    pub backbone: Backbone,
    pub output: usize,
    /// Concatenate the GAT signal of the current word to the input.
    pub graph_input: bool,
    /// Start with an all-zero output layer (uniform predictions).
    pub zero_output: bool,
}

/// Aligned id streams feeding a [`SeqModel`]; `words` drives the graph
/// signal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeqInputs {
    pub streams: Vec<Vec<usize>>,
    pub words: Vec<WordId>,
}

impl SeqInputs {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> SeqInputs {
        SeqInputs {
            streams: self.streams.iter().map(|s| s[start..end].to_vec()).collect(),
            words: self.words[start..end].to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
enum Core {
    Gru(GruStack),
    Transformer { input: Option<Linear>, net: CausalTransformer },
}

/// Embeddings, optional graph signal, a GRU or causal-transformer backbone
/// and a linear output layer producing logits at every position.
#[derive(Clone, Debug)]
pub struct SeqModel<T> {
    config: SeqModelConfig,
    store: ParamStore<T>,
    embeddings: Vec<Embedding>,
    graph: Option<GraphSignal<T>>,
    core: Core,
    head: Linear,
}

/// Recurrent state (GRU) or input history (transformer) for step-wise
/// prediction.
#[derive(Clone, Debug)]
pub enum StepState<T> {
    Gru(Vec<Tensor<T>>),
    Window(Vec<(Vec<usize>, WordId)>),
}

impl<T: Scalar> SeqModel<T> {
    /// Parameters are named `{name}.*`; the graph signal lives under `gat.*`.
    pub fn new(name: &str, config: SeqModelConfig, graph: Option<Arc<DictGraph<T>>>, seed: u64) -> Result<Self> {
        if config.inputs.is_empty() || config.output == 0 {
            return Err(Error::Config("sequence model needs inputs and outputs".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let embeddings = config
            .inputs
            .iter()
            .enumerate()
            .map(|(i, t)| Embedding::random(&mut store, &format!("{name}.emb{i}"), t.rows, t.dim, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let graph = match (config.graph_input, graph) {
            (true, Some(g)) => Some(GraphSignal::new(&mut store, "gat", g, &mut rng)?),
            (true, None) => return Err(Error::Config("graph input requested but no graph supplied".into())),
            (false, _) => None,
        };
        let input_dim = config.inputs.iter().map(|t| t.dim).sum::<usize>() + graph.as_ref().map_or(0, |g| g.dim());
        let core = match config.backbone {
            Backbone::Gru { layers, hidden } => Core::Gru(GruStack::new(&mut store, &format!("{name}.gru"), input_dim, hidden, layers, &mut rng)?),
            Backbone::Transformer(tc) => {
                let input = (input_dim != tc.d_model)
                    .then(|| Linear::new(&mut store, &format!("{name}.in"), input_dim, tc.d_model, true, &mut rng))
                    .transpose()?;
                let net = CausalTransformer::new(&mut store, &format!("{name}.tf"), tc, &mut rng)?;
                Core::Transformer { input, net }
            }
        };
        let width = config.backbone.width();
        let head = if config.zero_output {
            Linear::zeroed(&mut store, &format!("{name}.out"), width, config.output)?
        } else {
            Linear::new(&mut store, &format!("{name}.out"), width, config.output, true, &mut rng)?
        };
        Ok(Self {
            config,
            store,
            embeddings,
            graph,
            core,
            head,
        })
    }

    pub fn config(&self) -> &SeqModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn output(&self) -> usize {
        self.config.output
    }

    /// Width of the top-layer states.
    pub fn width(&self) -> usize {
        self.config.backbone.width()
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self.core, Core::Gru(_))
    }

    /// Longest window processed at once; unbounded for the GRU.
    pub fn context(&self) -> Option<usize> {
        match &self.core {
            Core::Gru(_) => None,
            Core::Transformer { net, .. } => Some(net.config().context),
        }
    }

    pub fn check_inputs(&self, inputs: &SeqInputs) -> Result<()> {
        if inputs.streams.len() != self.embeddings.len() {
            return Err(Error::Config(format!(
                "{} input streams for {} tables",
                inputs.streams.len(),
                self.embeddings.len()
            )));
        }
        for (s, e) in inputs.streams.iter().zip(&self.embeddings) {
            if s.len() != inputs.words.len() {
                return Err(Error::Length(format!("input stream of {} for {} words", s.len(), inputs.words.len())));
            }
            if let Some(&bad) = s.iter().find(|&&i| i >= e.rows) {
                return Err(Error::OutOfRange {
                    what: "input id",
                    id: bad,
                    size: e.rows,
                });
            }
        }
        Ok(())
    }

    /// `[L, input_dim]` input rows for a window.
    fn embed<'t>(&self, p: &Bound<'t, '_, T>, inputs: &SeqInputs) -> Result<Var<'t, T>> {
        let mut parts = self
            .embeddings
            .iter()
            .zip(&inputs.streams)
            .map(|(e, ids)| e.lookup(p, ids))
            .collect::<Result<Vec<_>>>()?;
        if let Some(g) = &self.graph {
            parts.push(g.encode_all(p, &inputs.words)?);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            concat_cols(&parts)
        }
    }

    /// Top-layer states `[L, width]` for a window, and the final GRU state.
    /// The GRU starts from `state` (zero when `None`); the transformer
    /// ignores it.
    fn run_window<'t>(
        &self,
        p: &Bound<'t, '_, T>,
        inputs: &SeqInputs,
        state: Option<&[Tensor<T>]>,
    ) -> Result<(Var<'t, T>, Option<Vec<Tensor<T>>>)> {
        if inputs.is_empty() {
            return Err(Error::Empty("window"));
        }
        let x = self.embed(p, inputs)?;
        match &self.core {
            Core::Gru(gru) => {
                let zero;
                let init = match state {
                    Some(s) => s,
                    None => {
                        zero = gru.zero_state();
                        &zero
                    }
                };
                let mut h = gru.state_vars(p, init)?;
                let mut tops = Vec::with_capacity(inputs.len());
                for t in 0..inputs.len() {
                    h = gru.step(p, &x.slice_rows(t, t + 1)?, &h)?;
                    tops.push(*h.last().expect("at least one layer"));
                }
                Ok((concat_rows(&tops)?, Some(h.iter().map(|v| v.value()).collect())))
            }
            Core::Transformer { input, net } => {
                let x = match input {
                    Some(l) => l.forward(p, &x)?,
                    None => x,
                };
                Ok((net.forward(p, &x)?, None))
            }
        }
    }

    /// Logits `[L, output]` for a window, and the final GRU state.
    pub fn forward_window<'t>(
        &self,
        p: &Bound<'t, '_, T>,
        inputs: &SeqInputs,
        state: Option<&[Tensor<T>]>,
    ) -> Result<(Var<'t, T>, Option<Vec<Tensor<T>>>)> {
        let (h, next) = self.run_window(p, inputs, state)?;
        Ok((self.head.forward(p, &h)?, next))
    }

    fn collect_rows(&self, inputs: &SeqInputs, logits: bool) -> Result<Vec<Vec<T>>> {
        self.check_inputs(inputs)?;
        let chunk = self.context().unwrap_or(64);
        let mut out = Vec::with_capacity(inputs.len());
        let mut state: Option<Vec<Tensor<T>>> = None;
        let tape = Tape::new();
        let mut start = 0;
        while start < inputs.len() {
            let end = (start + chunk).min(inputs.len());
            let p = self.store.bind(&tape, false);
            let (h, next) = self.run_window(&p, &inputs.slice(start, end), state.as_deref())?;
            let v = if logits { self.head.forward(&p, &h)?.value() } else { h.value() };
            out.extend((0..v.rows()).map(|r| v.row_slice(r).to_vec()));
            state = next;
            drop(p);
            tape.clear();
            start = end;
        }
        Ok(out)
    }

    /// Top-layer states at every position, without gradients.
    pub fn predict_hidden(&self, inputs: &SeqInputs) -> Result<Vec<Vec<T>>> {
        self.collect_rows(inputs, false)
    }

    /// Logits at every position of `inputs`, without gradients. The GRU
    /// runs through the whole stream; the transformer sees consecutive
    /// windows of its context length.
    pub fn predict_logits(&self, inputs: &SeqInputs) -> Result<Vec<Vec<T>>> {
        self.collect_rows(inputs, true)
    }

    pub fn start(&self) -> StepState<T> {
        match &self.core {
            Core::Gru(g) => StepState::Gru(g.zero_state()),
            Core::Transformer { .. } => StepState::Window(Vec::new()),
        }
    }

    /// Consumes one input position and returns the logits predicted there.
    pub fn step(&self, state: &mut StepState<T>, ids: &[usize], word: WordId) -> Result<Vec<T>> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let single = SeqInputs {
            streams: ids.iter().map(|&i| vec![i]).collect(),
            words: vec![word],
        };
        self.check_inputs(&single)?;
        let logits = match state {
            StepState::Gru(h) => {
                let (logits, next) = self.forward_window(&p, &single, Some(h))?;
                *h = next.expect("recurrent state");
                logits.value().into_data()
            }
            StepState::Window(hist) => {
                hist.push((ids.to_vec(), word));
                let ctx = self.context().expect("windowed model");
                if hist.len() > ctx {
                    hist.remove(0);
                }
                let window = SeqInputs {
                    streams: (0..ids.len()).map(|k| hist.iter().map(|(v, _)| v[k]).collect()).collect(),
                    words: hist.iter().map(|(_, w)| *w).collect(),
                };
                let v = self.forward_window(&p, &window, None)?.0.value();
                v.row_slice(v.rows() - 1).to_vec()
            }
        };
        Ok(logits)
    }
}
