//! Layers built on the tape: linear maps, embeddings, a stacked GRU and a
//! pre-norm causal transformer.
//!
//! Layers hold only parameter names; values live in the model's
//! [`ParamStore`] and are looked up through a [`Bound`] per forward pass.

mod gru;
mod transformer;

pub use gru::{GruCell, GruStack};
pub use transformer::{CausalTransformer, TransformerConfig};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{xavier_uniform, Bound, ParamStore, Rng, Tensor, Var};

/// Affine map `x W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: String,
    bias: Option<String>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = format!("{name}.w");
        store.insert(&weight, xavier_uniform(rng, in_dim, out_dim))?;
        let bias = if bias {
            let b = format!("{name}.b");
            store.insert(&b, Tensor::zeros(&[1, out_dim]))?;
            Some(b)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Same as [`Linear::new`] but with every value set to zero.
    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = format!("{name}.w");
        let b = format!("{name}.b");
        store.insert(&weight, Tensor::zeros(&[in_dim, out_dim]))?;
        store.insert(&b, Tensor::zeros(&[1, out_dim]))?;
        Ok(Self {
            weight,
            bias: Some(b),
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.matmul(&p.get(&self.weight)?)?;
        match &self.bias {
            Some(b) => y.add_row(&p.get(b)?),
            None => Ok(y),
        }
    }
}

/// Lookup table of `rows` vectors of width `dim`.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: String,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn random<T: Scalar>(store: &mut ParamStore<T>, name: &str, rows: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        use rand::Rng as _;
        let data = (0..rows * dim).map(|_| T::lit(rng.random_range(-0.1..0.1))).collect();
        Self::from_tensor(store, name, Tensor::matrix(rows, dim, data)?)
    }

    /// Embedding initialised from an explicit `[rows, dim]` table.
    pub fn from_tensor<T: Scalar>(store: &mut ParamStore<T>, name: &str, table: Tensor<T>) -> Result<Self> {
        let (rows, dim) = table.dims2()?;
        let name = format!("{name}.table");
        store.insert(&name, table)?;
        Ok(Self { table: name, rows, dim })
    }

    pub fn lookup<'t, T: Scalar>(&self, p: &Bound<'t, '_, T>, ids: &[usize]) -> Result<Var<'t, T>> {
        p.get(&self.table)?.gather_rows(ids)
    }
}

/// Layer norm with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: String,
    bias: String,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gain = format!("{name}.g");
        let bias = format!("{name}.b");
        store.insert(&gain, Tensor::full(&[1, dim], T::one()))?;
        store.insert(&bias, Tensor::zeros(&[1, dim]))?;
        Ok(Self { gain, bias })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(T::lit(1e-5))?
            .mul_row(&p.get(&self.gain)?)?
            .add_row(&p.get(&self.bias)?)
    }
}
