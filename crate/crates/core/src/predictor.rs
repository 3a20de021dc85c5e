//! Fused prediction head.
//!
//! `F = ReLU([z, ĉ_1, …, ĉ_S] · W_l + b_l)`, `logits = F · ω + b`. The concept
//! embeddings are flattened concept-major, so column block `s` of the concept
//! part holds `ĉ_s`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Graph, Tensor, Var};
use crate::error::Result;
use crate::params::{Affine, AffineVars, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    /// `(d_z + S·e) → d_f`
    pub fuse: Affine,
    /// `d_f → d_y`
    pub output: Affine,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub fuse: AffineVars,
    pub output: AffineVars,
}

impl FusionParams {
    pub fn init(rng: &mut impl Rng, input_width: usize, d_f: usize, n_classes: usize) -> Self {
        Self {
            fuse: Affine::glorot(rng, input_width, d_f),
            output: Affine::glorot(rng, d_f, n_classes),
        }
    }

    pub fn bind(&self, g: &mut Graph, registry: &mut Vec<Var>) -> FusionVars {
        self.attach(&mut self.bind_all(g, registry).into_iter())
    }

    /// Wraps vars already on a graph, taken in `tensors()` order.
    pub fn attach(&self, it: &mut impl Iterator<Item = Var>) -> FusionVars {
        FusionVars {
            fuse: AffineVars::from_iter(it),
            output: AffineVars::from_iter(it),
        }
    }

    /// Logits for a single `z` (`[d_z]`) and `Ĉ` (`S × e` rows).
    pub fn predict_one(&self, z: &Tensor, mixed: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, &mut Vec::new());
        let zv = g.constant(z.clone().reshape(vec![1, z.numel()])?);
        let cs = mixed
            .iter()
            .map(|r| g.constant(Tensor::row(r)))
            .collect::<Vec<_>>();
        let logits = vars.fuse_predict(&mut g, zv, &cs)?;
        Ok(g.value(logits).values().to_vec())
    }
}

impl FusionVars {
    /// `[batch × d_y]` logits from `z` and the per-concept mixed embeddings.
    pub fn fuse_predict(&self, g: &mut Graph, z: Var, mixed: &[Var]) -> Result<Var> {
        let mut parts = Vec::with_capacity(mixed.len() + 1);
        parts.push(z);
        parts.extend_from_slice(mixed);
        let x = g.concat_cols(&parts)?;
        let pre = self.fuse.apply(g, x)?;
        let hidden = g.relu(pre);
        self.output.apply(g, hidden)
    }
}

/// Batch-mean cross-entropy of the fused logits.
pub fn prediction_loss(g: &mut Graph, logits: Var, gold: &[usize]) -> Result<Var> {
    g.softmax_cross_entropy(logits, gold)
}

impl ParamSet for FusionParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.fuse.push_named("fusion.hidden", &mut out);
        self.output.push_named("fusion.output", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.fuse.push_mut(&mut out);
        self.output.push_mut(&mut out);
        out
    }
}
