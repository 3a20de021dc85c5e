//! Bag-of-words text encoder: tokenize, embed, mean-pool, project.
//!
//! `z = ReLU(W_z · mean(E[tokens]) + b_z)`. Pooling makes the encoding
//! independent of token order.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Affine, AffineVars, ParamSet};
use crate::seed;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const DEFAULT_MAX_TOKENS: usize = 512;

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(ch.to_lowercase().collect());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Token text by id; ids 0 and 1 are `<pad>` and `<unk>`.
    tokens: Vec<String>,
    max_tokens: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ids are assigned by descending count, ties broken lexicographically.
    /// Tokens seen fewer than `min_count` times map to UNK.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = ["<pad>".to_string(), "<unk>".to_string()]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens, DEFAULT_MAX_TOKENS))
    }

    pub fn from_tokens(tokens: Vec<String>, max_tokens: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            max_tokens,
            index,
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_tokens(self.tokens, self.max_tokens)
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids of `text`, truncated to the first `max_tokens`.
    pub fn ids(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .take(self.max_tokens)
            .map(|t| self.id(t))
            .collect()
    }

    /// Like [`Vocabulary::ids`] but rejects texts with no tokens.
    pub fn encode_ids(&self, text: &str) -> Result<Vec<usize>> {
        let ids = self.ids(text);
        if ids.is_empty() {
            return Err(Error::Encode(format!("{text:?} has no tokens")));
        }
        Ok(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `|V| × d_emb`
    pub embedding: Tensor,
    /// `d_emb → d_z`
    pub projection: Affine,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub embedding: Var,
    pub projection: AffineVars,
}

impl EncoderParams {
    pub fn init(rng: &mut impl Rng, vocab_size: usize, d_emb: usize, d_z: usize) -> Self {
        Self {
            embedding: seed::glorot(rng, vocab_size, d_emb),
            projection: Affine::glorot(rng, d_emb, d_z),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.projection.fan_out()
    }

    pub fn bind(&self, g: &mut Graph, registry: &mut Vec<Var>) -> EncoderVars {
        self.attach(&mut self.bind_all(g, registry).into_iter())
    }

    /// Wraps vars already on a graph, taken in `tensors()` order.
    pub fn attach(&self, it: &mut impl Iterator<Item = Var>) -> EncoderVars {
        EncoderVars {
            embedding: it.next().expect("embedding"),
            projection: AffineVars::from_iter(it),
        }
    }

    /// Single-text encoding, returning `z` as a `[d_z]` tensor.
    pub fn encode(&self, vocab: &Vocabulary, text: &str) -> Result<Tensor> {
        let ids = vocab.encode_ids(text)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, &mut Vec::new());
        let z = EncoderVars::forward(&vars, &mut g, &[ids])?;
        let d = self.latent_dim();
        g.value(z).clone().reshape(vec![d])
    }
}

impl EncoderVars {
    /// Batched forward; one token-id bag per row, output `[bags × d_z]`.
    pub fn forward(&self, g: &mut Graph, bags: &[Vec<usize>]) -> Result<Var> {
        let pooled = g.embedding_bag(self.embedding, bags)?;
        let pre = self.projection.apply(g, pooled)?;
        Ok(g.relu(pre))
    }
}

impl ParamSet for EncoderParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("encoder.embedding".to_string(), &self.embedding)];
        self.projection.push_named("encoder.projection", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        self.projection.push_mut(&mut out);
        out
    }
}
