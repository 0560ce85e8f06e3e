use super::Linear;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Bound, ParamStore, Rng, Tensor, Var};

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// n  = tanh(x Wn + r ⊙ (h Un + bhn) + bn)
/// h' = n + z ⊙ (h − n)
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    xz: Linear,
    xr: Linear,
    xn: Linear,
    hz: Linear,
    hr: Linear,
    hn: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            xz: Linear::new(store, &format!("{name}.xz"), input, hidden, true, rng)?,
            xr: Linear::new(store, &format!("{name}.xr"), input, hidden, true, rng)?,
            xn: Linear::new(store, &format!("{name}.xn"), input, hidden, true, rng)?,
            hz: Linear::new(store, &format!("{name}.hz"), hidden, hidden, false, rng)?,
            hr: Linear::new(store, &format!("{name}.hr"), hidden, hidden, false, rng)?,
            hn: Linear::new(store, &format!("{name}.hn"), hidden, hidden, true, rng)?,
            input,
            hidden,
        })
    }

    /// One step for a batch of rows: `x` is `[b, input]`, `h` is `[b, hidden]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, '_, T>, x: &Var<'t, T>, h: &Var<'t, T>) -> Result<Var<'t, T>> {
        let z = self.xz.forward(p, x)?.add(&self.hz.forward(p, h)?)?.sigmoid()?;
        let r = self.xr.forward(p, x)?.add(&self.hr.forward(p, h)?)?.sigmoid()?;
        let n = self.xn.forward(p, x)?.add(&r.mul(&self.hn.forward(p, h)?)?)?.tanh()?;
        n.add(&z.mul(&h.sub(&n)?)?)
    }
}

/// Stack of GRU cells; the output of layer `l` feeds layer `l + 1`.
#[derive(Clone, Debug)]
pub struct GruStack {
    cells: Vec<GruCell>,
}

impl GruStack {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("GRU needs at least one layer".into()));
        }
        let cells = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                GruCell::new(store, &format!("{name}.l{l}"), inp, hidden, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { cells })
    }

    pub fn layers(&self) -> usize {
        self.cells.len()
    }

    pub fn hidden(&self) -> usize {
        self.cells[0].hidden
    }

    pub fn input(&self) -> usize {
        self.cells[0].input
    }

    /// Zero state, one `[1, hidden]` tensor per layer.
    pub fn zero_state<T: Scalar>(&self) -> Vec<Tensor<T>> {
        self.cells.iter().map(|c| Tensor::zeros(&[1, c.hidden])).collect()
    }

    /// Advances every layer by one step and returns the new per-layer states;
    /// the last entry is the top-layer output.
    pub fn step<'t, T: Scalar>(&self, p: &Bound<'t, '_, T>, x: &Var<'t, T>, state: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        if state.len() != self.cells.len() {
            return Err(Error::shape("gru_step", format!("{} states for {} layers", state.len(), self.cells.len())));
        }
        let mut input = *x;
        let mut next = Vec::with_capacity(self.cells.len());
        for (cell, h) in self.cells.iter().zip(state) {
            let h2 = cell.forward(p, &input, h)?;
            next.push(h2);
            input = h2;
        }
        Ok(next)
    }

    pub fn state_vars<'t, T: Scalar>(&self, p: &Bound<'t, '_, T>, state: &[Tensor<T>]) -> Result<Vec<Var<'t, T>>> {
        state.iter().map(|s| p.tape().constant(s.detached())).collect()
    }
}
