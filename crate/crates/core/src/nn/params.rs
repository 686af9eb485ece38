use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::graph::{Gradients, Graph, Var};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
}

/// Named parameters of one model. Names are unique within a store.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `±1/sqrt(fan_in)` scaled by the factor.
    FanIn(f64),
}

impl Init {
    pub fn fill(self, rows: usize, cols: usize, fan_in: usize, rng: &mut RngStream) -> Matrix {
        match self {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Constant(v) => Matrix::filled(rows, cols, v),
            Init::FanIn(k) => {
                let bound = k / (fan_in.max(1) as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| rng.uniform_range(-bound, bound))
                    .collect();
                Matrix::from_vec(rows, cols, data).expect("sized buffer")
            }
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on the graph. Frozen bindings are constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if trainable {
                    g.param(p.value.clone(), i)
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// FNV-1a over names and raw value bits; used to detect updates.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for v in p.value.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn l2_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Graph variables for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Gradient accumulator shaped like a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradStore {
    grads: Vec<Matrix>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.grads.iter()
    }

    /// Adds `scale ×` the gradients that reached the bound parameters.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients, scale: f64) {
        for (slot, &v) in self.grads.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn add(&mut self, other: &GradStore) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            g.scale_in_place(k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Matrix::all_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0))
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
