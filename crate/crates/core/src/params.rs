//! Named parameter collections and their binding into a [`Graph`].

use crate::diffmath::{Graph, Tensor, Var};

/// A fixed, ordered set of trainable tensors.
///
/// `tensors` and `tensors_mut` must enumerate in the same order; binding,
/// gradient collection, optimizer state and checkpoints all rely on it.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// Adds every tensor as a trainable leaf, appending the vars to `registry`.
    fn bind_all(&self, g: &mut Graph, registry: &mut Vec<Var>) -> Vec<Var> {
        let vars: Vec<Var> = self.tensors().into_iter().map(|(_, t)| g.param(t)).collect();
        registry.extend_from_slice(&vars);
        vars
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// A weight matrix with its row-broadcast bias.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    pub fn glorot(rng: &mut impl rand::Rng, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: crate::seed::glorot(rng, fan_in, fan_out),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn fan_out(&self) -> usize {
        self.bias.numel()
    }

    pub(crate) fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Graph handles for a bound [`Affine`].
#[derive(Debug, Clone, Copy)]
pub struct AffineVars {
    pub weight: Var,
    pub bias: Var,
}

impl AffineVars {
    pub(crate) fn from_iter(it: &mut impl Iterator<Item = Var>) -> Self {
        Self {
            weight: it.next().expect("weight var"),
            bias: it.next().expect("bias var"),
        }
    }

    /// `x · W + b`.
    pub fn apply(&self, g: &mut Graph, x: Var) -> crate::Result<Var> {
        let y = g.matmul(x, self.weight)?;
        g.add_row(y, self.bias)
    }
}
