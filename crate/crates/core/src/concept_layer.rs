//! Concept layer: per-concept state distributions and mixed concept embeddings.
//!
//! For concept `s` and state `k`, a state embedding
//! `C_s^k = sigmoid(z · W_s^k + b_s^k)` is computed. The `K` state embeddings
//! are concatenated and scored by a map shared across concepts,
//! `logits_s = [C_s^1, …, C_s^K] · W_q + b_q`; a softmax over the `K` logits
//! gives the state probabilities, and the concept embedding is the
//! probability-weighted mixture `ĉ_s = Σ_k p_{s,k} C_s^k`.
//!
//! With `K = 2` and a zero second scoring column this is exactly the binary
//! form `p = sigmoid(w · [C⁺; C⁻] + b)`, `ĉ = p C⁺ + (1 - p) C⁻`.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Affine, AffineVars, ParamSet};

pub const DEFAULT_STATES: [&str; 3] = ["positive", "negative", "unknown"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub names: Vec<String>,
    #[serde(default = "default_states")]
    pub states: Vec<String>,
}

fn default_states() -> Vec<String> {
    DEFAULT_STATES.iter().map(|s| s.to_string()).collect()
}

impl ConceptSpec {
    pub fn new(names: Vec<String>, states: Vec<String>) -> Result<Self> {
        let spec = Self { names, states };
        spec.validate()?;
        Ok(spec)
    }

    /// Concepts with the default positive/negative/unknown states.
    pub fn with_default_states<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(names.into_iter().map(Into::into).collect(), default_states())
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty() {
            return Err(Error::Config("concept spec declares no concepts".into()));
        }
        if self.states.len() < 2 {
            return Err(Error::Config("a concept needs at least two states".into()));
        }
        let mut seen = HashSet::new();
        for n in &self.names {
            if !seen.insert(n.to_lowercase()) {
                return Err(Error::Config(format!("duplicate concept name {n:?}")));
            }
        }
        let mut seen = HashSet::new();
        for s in &self.states {
            if !seen.insert(s.to_lowercase()) {
                return Err(Error::Config(format!("duplicate state name {s:?}")));
            }
        }
        Ok(())
    }

    pub fn n_concepts(&self) -> usize {
        self.names.len()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    /// Case-insensitive state lookup.
    pub fn state_index(&self, state: &str) -> Option<usize> {
        self.states.iter().position(|s| s.eq_ignore_ascii_case(state))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptLayerParams {
    /// `state_maps[s][k]`: `d_z → e`
    pub state_maps: Vec<Vec<Affine>>,
    /// `K·e → K`, shared by every concept
    pub scoring: Affine,
}

impl ConceptLayerParams {
    pub fn init(
        rng: &mut impl Rng,
        n_concepts: usize,
        n_states: usize,
        d_z: usize,
        width: usize,
    ) -> Self {
        let state_maps = (0..n_concepts)
            .map(|_| (0..n_states).map(|_| Affine::glorot(rng, d_z, width)).collect())
            .collect();
        let scoring = Affine::glorot(rng, n_states * width, n_states);
        Self {
            state_maps,
            scoring,
        }
    }

    pub fn n_concepts(&self) -> usize {
        self.state_maps.len()
    }

    pub fn n_states(&self) -> usize {
        self.scoring.fan_out()
    }

    /// Concept embedding width `e`.
    pub fn width(&self) -> usize {
        self.state_maps[0][0].fan_out()
    }

    pub fn bind(&self, g: &mut Graph, registry: &mut Vec<Var>) -> ConceptLayerVars {
        self.attach(&mut self.bind_all(g, registry).into_iter())
    }

    /// Wraps vars already on a graph, taken in `tensors()` order.
    pub fn attach(&self, it: &mut impl Iterator<Item = Var>) -> ConceptLayerVars {
        let state_maps = self
            .state_maps
            .iter()
            .map(|row| row.iter().map(|_| AffineVars::from_iter(it)).collect())
            .collect();
        ConceptLayerVars {
            state_maps,
            scoring: AffineVars::from_iter(it),
        }
    }

    /// Single-example forward on a `[d_z]` or `[1 × d_z]` latent vector.
    pub fn forward_one(&self, z: &Tensor) -> Result<ConceptLayerOutput> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, &mut Vec::new());
        let z = g.constant(z.clone().reshape(vec![1, z.numel()])?);
        let fwd = vars.forward(&mut g, z)?;
        Ok(fwd.output(&g, 0))
    }
}

impl ParamSet for ConceptLayerParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (s, row) in self.state_maps.iter().enumerate() {
            for (k, a) in row.iter().enumerate() {
                a.push_named(&format!("concept.state.{s}.{k}"), &mut out);
            }
        }
        self.scoring.push_named("concept.scoring", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for row in &mut self.state_maps {
            for a in row {
                a.push_mut(&mut out);
            }
        }
        self.scoring.push_mut(&mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct ConceptLayerVars {
    pub state_maps: Vec<Vec<AffineVars>>,
    pub scoring: AffineVars,
}

/// Graph handles from one batched concept-layer pass. Every entry is
/// `[batch × ·]`; the outer vectors run over concepts.
#[derive(Debug, Clone)]
pub struct ConceptForward {
    pub logits: Vec<Var>,
    pub probabilities: Vec<Var>,
    /// `states[s][k]`: `[batch × e]`
    pub states: Vec<Vec<Var>>,
    /// `ĉ_s`: `[batch × e]`
    pub mixed: Vec<Var>,
}

impl ConceptLayerVars {
    /// State embeddings and state probabilities for every concept.
    pub fn concept_states(
        &self,
        g: &mut Graph,
        z: Var,
    ) -> Result<(Vec<Var>, Vec<Var>, Vec<Vec<Var>>)> {
        let mut logits = Vec::with_capacity(self.state_maps.len());
        let mut probs = Vec::with_capacity(self.state_maps.len());
        let mut states = Vec::with_capacity(self.state_maps.len());
        for maps in &self.state_maps {
            let mut per_state = Vec::with_capacity(maps.len());
            for m in maps {
                let pre = m.apply(g, z)?;
                per_state.push(g.sigmoid(pre));
            }
            let stacked = g.concat_cols(&per_state)?;
            let l = self.scoring.apply(g, stacked)?;
            probs.push(g.softmax(l)?);
            logits.push(l);
            states.push(per_state);
        }
        Ok((logits, probs, states))
    }

    pub fn forward(&self, g: &mut Graph, z: Var) -> Result<ConceptForward> {
        let (logits, probabilities, states) = self.concept_states(g, z)?;
        let mixed = probabilities
            .iter()
            .zip(&states)
            .map(|(&p, st)| mix_embeddings(g, p, st))
            .collect::<Result<Vec<_>>>()?;
        Ok(ConceptForward {
            logits,
            probabilities,
            states,
            mixed,
        })
    }
}

/// `ĉ = Σ_k p[:, k] · C^k` for one concept.
pub fn mix_embeddings(g: &mut Graph, probabilities: Var, states: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (k, &st) in states.iter().enumerate() {
        let pk = g.slice_cols(probabilities, k, 1)?;
        let term = g.mul_col(st, pk)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    acc.ok_or_else(|| Error::dim("mix_embeddings", "no state embeddings"))
}

/// Mean over concepts of the batch-averaged cross-entropy against gold state
/// indices; `gold[s][b]` is the state of concept `s` in example `b`.
pub fn concept_loss(g: &mut Graph, fwd: &ConceptForward, gold: &[Vec<usize>]) -> Result<Var> {
    if gold.len() != fwd.logits.len() {
        return Err(Error::dim(
            "concept_loss",
            format!("{} concepts but {} gold columns", fwd.logits.len(), gold.len()),
        ));
    }
    let mut total: Option<Var> = None;
    for (&l, targets) in fwd.logits.iter().zip(gold) {
        let ce = g.softmax_cross_entropy(l, targets)?;
        total = Some(match total {
            None => ce,
            Some(t) => g.add(t, ce)?,
        });
    }
    let total = total.expect("spec has at least one concept");
    Ok(g.scale(total, 1.0 / gold.len() as f64))
}

/// Plain values for one example of a concept-layer pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptLayerOutput {
    /// `S × K`
    pub probabilities: Vec<Vec<f64>>,
    /// `S × e`
    pub mixed: Vec<Vec<f64>>,
    /// `S × K`
    pub logits: Vec<Vec<f64>>,
}

impl ConceptLayerOutput {
    pub fn predicted_states(&self) -> Vec<usize> {
        self.probabilities.iter().map(|p| argmax(p)).collect()
    }
}

fn row(g: &Graph, v: Var, b: usize) -> Vec<f64> {
    let t = g.value(v);
    let n = t.shape()[1];
    t.values()[b * n..(b + 1) * n].to_vec()
}

impl ConceptForward {
    /// Extracts example `b` of the batch.
    pub fn output(&self, g: &Graph, b: usize) -> ConceptLayerOutput {
        ConceptLayerOutput {
            probabilities: self.probabilities.iter().map(|&v| row(g, v, b)).collect(),
            mixed: self.mixed.iter().map(|&v| row(g, v, b)).collect(),
            logits: self.logits.iter().map(|&v| row(g, v, b)).collect(),
        }
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
