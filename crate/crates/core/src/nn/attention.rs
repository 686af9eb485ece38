//! Multi-head self-attention block with a learned positional embedding.
//!
//! `x = tokens + PE(xyz)`, then per head `softmax(Q·Kᵀ/√d)·V`, heads are
//! concatenated and projected, and the block returns `layer_norm(x + out)`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::graph::{Graph, Var};
use crate::nn::layers::{LayerNorm, Mlp, MlpSpec};
use crate::nn::params::{Bound, Init, ParamId, ParamStore};
use crate::rng::RngStream;

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub pe: Mlp,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub norm: LayerNorm,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(format!(
                "feature width {dim} is not divisible by {heads} heads"
            )));
        }
        let pe = Mlp::new(store, &format!("{name}.pe"), MlpSpec::new(&[3, dim, dim]), rng)?;
        let mut proj = |suffix: &str, rng: &mut RngStream| {
            store.add(
                format!("{name}.{suffix}"),
                Init::FanIn(1.0).fill(dim, dim, dim, rng),
            )
        };
        let wq = proj("wq", rng)?;
        let wk = proj("wk", rng)?;
        let wv = proj("wv", rng)?;
        let wo = proj("wo", rng)?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), dim)?;
        Ok(Self {
            pe,
            wq,
            wk,
            wv,
            wo,
            norm,
            heads,
            dim,
        })
    }

    /// `tokens` is `[M × C]`, `positions` is `[M × 3]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, tokens: Var, positions: &Matrix) -> Result<Var> {
        let (m, c) = g.shape(tokens);
        if c != self.dim {
            return Err(Error::shape("attention", format!("width {c}, expected {}", self.dim)));
        }
        if positions.shape() != (m, 3) {
            return Err(Error::shape(
                "attention",
                format!("{m} tokens but positions {:?}", positions.shape()),
            ));
        }
        let pos = g.constant(positions.clone());
        let pe = self.pe.forward(g, p, pos)?;
        let x = g.add(tokens, pe)?;
        let d = c / self.heads;
        let q = g.matmul(x, p.var(self.wq))?;
        let q = g.scale(q, 1.0 / (d as f64).sqrt());
        let k = g.matmul(x, p.var(self.wk))?;
        let v = g.matmul(x, p.var(self.wv))?;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * d, d)?,
                    g.slice_cols(k, h * d, d)?,
                    g.slice_cols(v, h * d, d)?,
                )
            };
            let s = g.matmul_nt(qh, kh)?;
            let a = g.softmax_rows(s);
            outs.push(g.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let o = g.matmul(cat, p.var(self.wo))?;
        let r = g.add(x, o)?;
        self.norm.forward(g, p, r)
    }
}
