//! Minimal neural-network toolkit: shapes, parameter sets, an autodiff
//! graph and the Adam optimizer.

mod graph;
mod optim;

pub use graph::{BatchStats, Graph, Var};
pub use optim::{Adam, AdamState};

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// NCHW tensor shape. Dense activations use `h = w = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f32>,
}

/// Named trainable tensors plus non-trainable buffers (running statistics).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<ParamTensor>,
    pub buffers: Vec<ParamTensor>,
}

/// Parameters of one network registered in a graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uniform(±1/√fan_in) weights and biases, the usual default for
    /// convolution and dense layers. Returns the tensor index.
    pub fn add_weight(&mut self, name: &str, shape: Shape, fan_in: usize, rng: &mut Rng) -> usize {
        let bound = 1.0 / libm::sqrtf(fan_in as f32);
        let data = (0..shape.len()).map(|_| rng.random_range(-bound..bound)).collect();
        self.push(name, shape, data)
    }

    pub fn add_const(&mut self, name: &str, shape: Shape, value: f32) -> usize {
        self.push(name, shape, vec![value; shape.len()])
    }

    fn push(&mut self, name: &str, shape: Shape, data: Vec<f32>) -> usize {
        self.tensors.push(ParamTensor {
            name: name.to_string(),
            shape,
            data,
        });
        self.tensors.len() - 1
    }

    pub fn add_buffer(&mut self, name: &str, len: usize, value: f32) -> usize {
        self.buffers.push(ParamTensor {
            name: name.to_string(),
            shape: Shape::new(1, len, 1, 1),
            data: vec![value; len],
        });
        self.buffers.len() - 1
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Registers every tensor as a graph leaf.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| graph.leaf(t.shape, t.data.clone(), trainable))
                .collect(),
        }
    }

    /// Gradients of the bound leaves; zeros for leaves the objective never reached.
    pub fn grads(&self, graph: &mut Graph, bound: &Bound) -> Vec<Vec<f32>> {
        self.tensors
            .iter()
            .zip(&bound.vars)
            .map(|(t, &v)| graph.take_grad(v).unwrap_or_else(|| vec![0.0; t.data.len()]))
            .collect()
    }

    /// True when both sets have identical names and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        let same = |a: &[ParamTensor], b: &[ParamTensor]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.name == y.name && x.shape == y.shape)
        };
        same(&self.tensors, &other.tensors) && same(&self.buffers, &other.buffers)
    }
}
