//! Parameterised building blocks: linear maps, layer norm and MLPs.

use crate::error::Result;
use crate::matrix::Matrix;
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{Bound, Init, ParamId, ParamStore};
use crate::rng::RngStream;

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), init.fill(in_dim, out_dim, in_dim, rng))?;
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, out_dim))?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.w))?;
        g.add_row(y, p.var(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Matrix::filled(1, dim, 1.0))?,
            beta: store.add(format!("{name}.beta"), Matrix::zeros(1, dim))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta))
    }
}

/// Stack of linear layers. Hidden layers are `linear → [layer-norm] → relu`;
/// the last layer is left linear unless `activate_last` is set.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    norms: Vec<Option<LayerNorm>>,
    activate_last: bool,
}

/// Shape and initialisation options for [`Mlp::new`].
#[derive(Clone, Copy, Debug)]
pub struct MlpSpec<'a> {
    pub dims: &'a [usize],
    pub layer_norm: bool,
    pub activate_last: bool,
    pub hidden_init: Init,
    pub last_init: Init,
}

impl<'a> MlpSpec<'a> {
    pub fn new(dims: &'a [usize]) -> Self {
        Self {
            dims,
            layer_norm: false,
            activate_last: false,
            hidden_init: Init::FanIn(1.0),
            last_init: Init::FanIn(1.0),
        }
    }

    pub fn layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }

    pub fn activate_last(mut self, on: bool) -> Self {
        self.activate_last = on;
        self
    }

    pub fn last_init(mut self, init: Init) -> Self {
        self.last_init = init;
        self
    }
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec<'_>, rng: &mut RngStream) -> Result<Self> {
        assert!(spec.dims.len() >= 2, "an MLP needs at least input and output widths");
        let n = spec.dims.len() - 1;
        let mut layers = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let last = i + 1 == n;
            let init = if last { spec.last_init } else { spec.hidden_init };
            layers.push(Linear::new(
                store,
                &format!("{name}.l{i}"),
                spec.dims[i],
                spec.dims[i + 1],
                init,
                rng,
            )?);
            let activated = !last || spec.activate_last;
            norms.push(if spec.layer_norm && activated {
                Some(LayerNorm::new(store, &format!("{name}.ln{i}"), spec.dims[i + 1])?)
            } else {
                None
            });
        }
        Ok(Self {
            layers,
            norms,
            activate_last: spec.activate_last,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty mlp")
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, (layer, norm)) in self.layers.iter().zip(&self.norms).enumerate() {
            x = layer.forward(g, p, x)?;
            if i + 1 < n || self.activate_last {
                if let Some(ln) = norm {
                    x = ln.forward(g, p, x)?;
                }
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}
