use rand::Rng;

use super::params::{BoundParams, ParamId, ParamStore};
use crate::numerics::{Graph, NumericsError, Tensor, Var};
use crate::Scalar;

pub(crate) const LN_EPS: f64 = 1e-12;
pub(crate) const INIT_STD: f64 = 0.02;

/// `x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add_normal(&format!("{name}.weight"), &[d_in, d_out], INIT_STD, rng),
            bias: Some(store.add(format!("{name}.bias"), Tensor::zeros([d_out]))),
        }
    }

    pub fn without_bias<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add_normal(&format!("{name}.weight"), &[d_in, d_out], INIT_STD, rng),
            bias: None,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var, NumericsError> {
        let y = g.matmul(x, p.var(self.weight))?;
        match self.bias {
            Some(b) => g.add_bias(y, p.var(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones([d])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([d])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var, NumericsError> {
        g.layer_norm(x, p.var(self.gain), p.var(self.bias), T::lit(LN_EPS))
    }
}

/// Pre-norm transformer block: multi-head self-attention then a GELU MLP,
/// each wrapped in a residual connection.
#[derive(Clone, Debug)]
pub struct Block {
    heads: usize,
    norm1: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    dropout: f64,
}

impl Block {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            heads,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            query: Linear::new(store, &format!("{name}.attn.query"), dim, dim, rng),
            // a key bias shifts every score of a query row equally, which
            // softmax cancels: it would be a parameter with zero gradient
            key: Linear::without_bias(store, &format!("{name}.attn.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.attn.value"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.attn.out"), dim, dim, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), dim, mlp_dim, rng),
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), mlp_dim, dim, rng),
            dropout,
        }
    }

    pub fn set_dropout(&mut self, p: f64) {
        self.dropout = p;
    }

    /// `[n, dim] -> [heads, n, dim / heads]`
    fn split_heads<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, NumericsError> {
        let (n, d) = (g.shape(x)[0], g.shape(x)[1]);
        let r = g.reshape(x, &[n, self.heads, d / self.heads])?;
        g.permute(r, &[1, 0, 2])
    }

    fn merge_heads<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, NumericsError> {
        let (h, n, dh) = (g.shape(x)[0], g.shape(x)[1], g.shape(x)[2]);
        let p = g.permute(x, &[1, 0, 2])?;
        g.reshape(p, &[n, h * dh])
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var, NumericsError> {
        let h = self.norm1.forward(g, p, x)?;
        let q = self.query.forward(g, p, h)?;
        let k = self.key.forward(g, p, h)?;
        let v = self.value.forward(g, p, h)?;
        let (q, k, v) = (self.split_heads(g, q)?, self.split_heads(g, k)?, self.split_heads(g, v)?);
        let a = g.attention(q, k, v)?;
        let a = self.merge_heads(g, a)?;
        let a = self.out.forward(g, p, a)?;
        let a = g.dropout(a, self.dropout)?;
        let x = g.add(x, a)?;

        let h = self.norm2.forward(g, p, x)?;
        let h = self.fc1.forward(g, p, h)?;
        let h = g.gelu(h)?;
        let h = self.fc2.forward(g, p, h)?;
        let h = g.dropout(h, self.dropout)?;
        g.add(x, h)
    }
}
