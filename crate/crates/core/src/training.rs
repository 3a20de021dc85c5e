//! Joint training of encoder, concept layer, fused head and reasoner.
//!
//! The objective is `L_pred + α1·L_concept + α2·L_neural`, each term averaged
//! over the batch. Parameters are updated with Adam.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::concept_layer::{argmax, concept_loss, ConceptForward, ConceptLayerParams, ConceptLayerVars, ConceptSpec};
use crate::data::ConceptRecord;
use crate::diffmath::{Graph, Tensor, Var};
use crate::encoder::{EncoderParams, EncoderVars, Vocabulary, DEFAULT_MAX_TOKENS};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport, Score};
use crate::params::ParamSet;
use crate::predictor::{prediction_loss, FusionParams, FusionVars};
use crate::reasoner::{
    explain_example, extract_rules, neural_loss, ExtractedRule, Explanation, ReasonerParams,
    ReasonerVars, RuleForward, SignalMeans, Thresholds, DEFAULT_TEMPERATURE,
};
use crate::seed;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Examples per graph when only running forward passes.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Concept loss weight.
    pub alpha1: f64,
    /// Neural (rule) loss weight.
    pub alpha2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub temperature: f64,
    pub embedding_dim: usize,
    pub latent_dim: usize,
    pub concept_width: usize,
    pub fused_dim: usize,
    pub reasoner_hidden: usize,
    pub min_count: usize,
    pub max_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha1: 100.0,
            alpha2: 10.0,
            epochs: 25,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 42,
            adam: AdamConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
            embedding_dim: 64,
            latent_dim: 128,
            concept_width: 16,
            fused_dim: 128,
            reasoner_hidden: 32,
            min_count: 1,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(a >= 0.0 && a.is_finite()) {
                return bad(format!("{name} must be a finite value ≥ 0, got {a}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0)
        {
            return bad(format!("invalid Adam hyperparameters {a:?}"));
        }
        let widths = [
            ("embedding_dim", self.embedding_dim),
            ("latent_dim", self.latent_dim),
            ("concept_width", self.concept_width),
            ("fused_dim", self.fused_dim),
            ("reasoner_hidden", self.reasoner_hidden),
            ("max_tokens", self.max_tokens),
        ];
        for (name, w) in widths {
            if w == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// A tokenized example with its gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub label: usize,
    pub states: Vec<usize>,
}

/// The full model: vocabulary, concept spec and every parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clmn {
    pub vocab: Vocabulary,
    pub spec: ConceptSpec,
    pub n_classes: usize,
    pub temperature: f64,
    pub encoder: EncoderParams,
    pub concepts: ConceptLayerParams,
    pub fusion: FusionParams,
    pub reasoner: ReasonerParams,
}

#[derive(Debug, Clone)]
pub struct ClmnVars {
    pub encoder: EncoderVars,
    pub concepts: ConceptLayerVars,
    pub fusion: FusionVars,
    pub reasoner: ReasonerVars,
}

/// Graph handles for one batched pass through the whole model.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub z: Var,
    pub concepts: ConceptForward,
    /// Fused-head logits, `[batch × d_y]`.
    pub logits: Var,
    pub rules: RuleForward,
}

/// Loss nodes of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub prediction: Var,
    pub concept: Var,
    pub neural: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub prediction: f64,
    pub concept: f64,
    pub neural: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn read(g: &Graph, l: &LossVars) -> Self {
        let v = |x: Var| g.value(x).values()[0];
        Self {
            prediction: v(l.prediction),
            concept: v(l.concept),
            neural: v(l.neural),
            total: v(l.total),
        }
    }

    fn add_weighted(&mut self, other: &Self, w: f64) {
        self.prediction += w * other.prediction;
        self.concept += w * other.concept;
        self.neural += w * other.neural;
        self.total += w * other.total;
    }
}

impl Clmn {
    /// Fresh model with Glorot weights and zero biases, one seed stream per
    /// parameter group.
    pub fn init(
        config: &TrainConfig,
        spec: ConceptSpec,
        n_classes: usize,
        vocab: Vocabulary,
    ) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let s = spec.n_concepts();
        let k = spec.n_states();
        let e = config.concept_width;
        let encoder = EncoderParams::init(
            &mut seed::stream(config.seed, "init.encoder"),
            vocab.len(),
            config.embedding_dim,
            config.latent_dim,
        );
        let concepts = ConceptLayerParams::init(
            &mut seed::stream(config.seed, "init.concepts"),
            s,
            k,
            config.latent_dim,
            e,
        );
        let fusion = FusionParams::init(
            &mut seed::stream(config.seed, "init.fusion"),
            config.latent_dim + s * e,
            config.fused_dim,
            n_classes,
        );
        let reasoner = ReasonerParams::init(
            &mut seed::stream(config.seed, "init.reasoner"),
            n_classes,
            e,
            config.reasoner_hidden,
        );
        Ok(Self {
            vocab,
            spec,
            n_classes,
            temperature: config.temperature,
            encoder,
            concepts,
            fusion,
            reasoner,
        })
    }

    pub fn bind(&self, g: &mut Graph, registry: &mut Vec<Var>) -> ClmnVars {
        self.attach(&mut self.bind_all(g, registry).into_iter())
    }

    /// Wraps vars already on a graph, taken in `tensors()` order.
    pub fn attach(&self, it: &mut impl Iterator<Item = Var>) -> ClmnVars {
        ClmnVars {
            encoder: self.encoder.attach(it),
            concepts: self.concepts.attach(it),
            fusion: self.fusion.attach(it),
            reasoner: self.reasoner.attach(it),
        }
    }

    /// Tokenizes and validates records against this model.
    pub fn prepare(&self, records: &[ConceptRecord]) -> Result<Vec<Example>> {
        records
            .iter()
            .map(|r| {
                if r.label >= self.n_classes {
                    return Err(Error::Input(format!(
                        "label {} outside [0, {})",
                        r.label, self.n_classes
                    )));
                }
                Ok(Example {
                    ids: self.vocab.encode_ids(&r.text)?,
                    label: r.label,
                    states: r.state_indices(&self.spec)?,
                })
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, vars: &ClmnVars, batch: &[&Example]) -> Result<BatchForward> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let bags: Vec<Vec<usize>> = batch.iter().map(|e| e.ids.clone()).collect();
        let z = vars.encoder.forward(g, &bags)?;
        let concepts = vars.concepts.forward(g, z)?;
        let logits = vars.fusion.fuse_predict(g, z, &concepts.mixed)?;
        let rules = vars.reasoner.forward(g, &concepts.mixed)?;
        Ok(BatchForward {
            z,
            concepts,
            logits,
            rules,
        })
    }

    /// `L_pred + α1·L_concept + α2·L_neural` for the batch.
    pub fn total_loss(
        &self,
        g: &mut Graph,
        fwd: &BatchForward,
        batch: &[&Example],
        alpha1: f64,
        alpha2: f64,
    ) -> Result<LossVars> {
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let gold_states: Vec<Vec<usize>> = (0..self.spec.n_concepts())
            .map(|s| batch.iter().map(|e| e.states[s]).collect())
            .collect();
        let prediction = prediction_loss(g, fwd.logits, &labels)?;
        let concept = concept_loss(g, &fwd.concepts, &gold_states)?;
        let neural = neural_loss(g, fwd.rules.yhat, &labels, self.temperature)?;
        let wc = g.scale(concept, alpha1);
        let wn = g.scale(neural, alpha2);
        let partial = g.add(prediction, wc)?;
        let total = g.add(partial, wn)?;
        Ok(LossVars {
            prediction,
            concept,
            neural,
            total,
        })
    }

    /// Mean loss over `examples`, forward passes only.
    pub fn dataset_loss(&self, examples: &[Example], alpha1: f64, alpha2: f64) -> Result<LossBreakdown> {
        if examples.is_empty() {
            return Err(Error::Input("no examples".into()));
        }
        let mut acc = LossBreakdown::default();
        for chunk in examples.chunks(EVAL_CHUNK) {
            let batch: Vec<&Example> = chunk.iter().collect();
            let mut g = Graph::new();
            let vars = self.bind(&mut g, &mut Vec::new());
            let fwd = self.forward(&mut g, &vars, &batch)?;
            let l = self.total_loss(&mut g, &fwd, &batch, alpha1, alpha2)?;
            acc.add_weighted(&LossBreakdown::read(&g, &l), chunk.len() as f64 / examples.len() as f64);
        }
        Ok(acc)
    }

    /// Runs `f` on every chunk's forward pass; `f` receives the graph, the
    /// pass and the chunk.
    fn for_each_chunk(
        &self,
        examples: &[Example],
        mut f: impl FnMut(&Graph, &BatchForward, &[Example]) -> Result<()>,
    ) -> Result<()> {
        for chunk in examples.chunks(EVAL_CHUNK) {
            let batch: Vec<&Example> = chunk.iter().collect();
            let mut g = Graph::new();
            let vars = self.bind(&mut g, &mut Vec::new());
            let fwd = self.forward(&mut g, &vars, &batch)?;
            f(&g, &fwd, chunk)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, records: &[ConceptRecord]) -> Result<MetricsReport> {
        if records.is_empty() {
            return Err(Error::Input("cannot evaluate on zero records".into()));
        }
        self.evaluate_examples(&self.prepare(records)?)
    }

    pub fn evaluate_examples(&self, examples: &[Example]) -> Result<MetricsReport> {
        let d_y = self.n_classes;
        let mut out_cm = ConfusionMatrix::new(d_y);
        let mut rule_cm = ConfusionMatrix::new(d_y);
        let mut concept_cm = ConfusionMatrix::new(self.spec.n_states());
        self.for_each_chunk(examples, |g, fwd, chunk| {
            let logits = g.value(fwd.logits).values();
            let yhat = g.value(fwd.rules.yhat).values();
            for (b, ex) in chunk.iter().enumerate() {
                out_cm.record(argmax(&logits[b * d_y..(b + 1) * d_y]), ex.label)?;
                rule_cm.record(argmax(&yhat[b * d_y..(b + 1) * d_y]), ex.label)?;
            }
            for (s, &p) in fwd.concepts.probabilities.iter().enumerate() {
                let probs = g.value(p);
                let k = probs.shape()[1];
                for (b, ex) in chunk.iter().enumerate() {
                    concept_cm.record(argmax(&probs.values()[b * k..(b + 1) * k]), ex.states[s])?;
                }
            }
            Ok(())
        })?;
        Ok(MetricsReport {
            output: Score::from(&out_cm),
            concept: Score::from(&concept_cm),
            reasoning: Score::from(&rule_cm),
        })
    }

    /// Fused-head class for each text.
    pub fn predict(&self, texts: &[&str]) -> Result<Vec<usize>> {
        let examples = texts
            .iter()
            .map(|t| {
                Ok(Example {
                    ids: self.vocab.encode_ids(t)?,
                    label: 0,
                    states: vec![0; self.spec.n_concepts()],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(texts.len());
        self.for_each_chunk(&examples, |g, fwd, chunk| {
            let logits = g.value(fwd.logits).values();
            let d_y = self.n_classes;
            out.extend((0..chunk.len()).map(|b| argmax(&logits[b * d_y..(b + 1) * d_y])));
            Ok(())
        })?;
        Ok(out)
    }

    /// Dataset means of the polarity and relevance signals.
    pub fn signal_means(&self, records: &[ConceptRecord]) -> Result<SignalMeans> {
        let examples = self.prepare(records)?;
        let mut means = SignalMeans::default();
        self.for_each_chunk(&examples, |g, fwd, chunk| {
            for b in 0..chunk.len() {
                means.add(&fwd.rules.signals(g, b));
            }
            Ok(())
        })?;
        Ok(means)
    }

    pub fn extract_rules(
        &self,
        records: &[ConceptRecord],
        thresholds: Thresholds,
    ) -> Result<Vec<ExtractedRule>> {
        extract_rules(&self.signal_means(records)?, &self.spec, thresholds)
    }

    pub fn explain(&self, records: &[ConceptRecord]) -> Result<Vec<Explanation>> {
        let examples = self.prepare(records)?;
        let mut out = Vec::with_capacity(records.len());
        let mut offset = 0;
        self.for_each_chunk(&examples, |g, fwd, chunk| {
            let logits = g.value(fwd.logits).values();
            let d_y = self.n_classes;
            for b in 0..chunk.len() {
                let rec = &records[offset + b];
                out.push(explain_example(
                    &self.spec,
                    &rec.text,
                    Some(rec.label),
                    &fwd.concepts.output(g, b),
                    &fwd.rules.signals(g, b),
                    argmax(&logits[b * d_y..(b + 1) * d_y]),
                ));
            }
            offset += chunk.len();
            Ok(())
        })?;
        Ok(out)
    }
}

impl ParamSet for Clmn {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.tensors();
        out.extend(self.concepts.tensors());
        out.extend(self.fusion.tensors());
        out.extend(self.reasoner.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.concepts.tensors_mut());
        out.extend(self.fusion.tensors_mut());
        out.extend(self.reasoner.tensors_mut());
        out
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub learning_rate: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &impl ParamSet, learning_rate: f64, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        Self {
            config,
            learning_rate,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update; `grads[i]` pairs with the i-th tensor of `params`.
    pub fn update(&mut self, params: &mut impl ParamSet, grads: &[&[f64]]) -> Result<()> {
        let tensors = params.tensors_mut();
        if tensors.len() != grads.len() || tensors.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "{} tensors, {} gradients, {} moment slots",
                tensors.len(),
                grads.len(),
                self.first.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((tensor, g), m), v) in tensors
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((w, &gi), mi), vi) in tensor
                .values_mut()
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss on the full training split after the epoch's updates.
    pub train_loss: LossBreakdown,
    pub val: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub model: Clmn,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mut ck: Checkpoint = serde_json::from_str(json)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.model.vocab = ck.model.vocab.reindexed();
        let expected = Clmn::init(
            &ck.config,
            ck.model.spec.clone(),
            ck.model.n_classes,
            ck.model.vocab.clone(),
        )?;
        let shapes = |m: &Clmn| -> Vec<(String, Vec<usize>)> {
            m.tensors()
                .into_iter()
                .map(|(n, t)| (n, t.shape().to_vec()))
                .collect()
        };
        if shapes(&expected) != shapes(&ck.model) {
            return Err(Error::Checkpoint(
                "parameter shapes do not match the stored configuration".into(),
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// History as one JSON object per line.
    pub fn history_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.history {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// One gradient step on `batch`; returns the batch losses.
pub fn train_step(
    model: &mut Clmn,
    optimizer: &mut Adam,
    batch: &[&Example],
    alpha1: f64,
    alpha2: f64,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let mut registry = Vec::new();
    let vars = model.bind(&mut g, &mut registry);
    let fwd = model.forward(&mut g, &vars, batch)?;
    let loss = model.total_loss(&mut g, &fwd, batch, alpha1, alpha2)?;
    let values = LossBreakdown::read(&g, &loss);
    if !values.total.is_finite() {
        return Ok(values);
    }
    g.backward(loss.total)?;
    let grads: Vec<&[f64]> = registry
        .iter()
        .map(|&v| g.grad(v).expect("parameters always receive a gradient buffer"))
        .collect();
    optimizer.update(model, &grads)?;
    Ok(values)
}

/// Trains from scratch. The vocabulary comes from the training texts.
pub fn fit(
    config: &TrainConfig,
    spec: &ConceptSpec,
    n_classes: usize,
    train: &[ConceptRecord],
    val: &[ConceptRecord],
) -> Result<Checkpoint> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training and validation splits must be non-empty".into()));
    }
    let texts: Vec<&str> = train.iter().map(|r| r.text.as_str()).collect();
    let vocab = Vocabulary::build(&texts, config.min_count)?.with_max_tokens(config.max_tokens);
    let mut model = Clmn::init(config, spec.clone(), n_classes, vocab)?;
    let train_ex = model.prepare(train)?;
    let val_ex = model.prepare(val)?;
    let mut optimizer = Adam::new(&model, config.learning_rate, config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::stream(config.seed, &format!("shuffle.{epoch}")));
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_ex[i]).collect();
            let l = train_step(&mut model, &mut optimizer, &batch, config.alpha1, config.alpha2)?;
            if !l.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite batch loss {l:?}"),
                });
            }
        }
        let train_loss = model.dataset_loss(&train_ex, config.alpha1, config.alpha2)?;
        if !train_loss.total.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("non-finite training loss {train_loss:?}"),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val: model.evaluate_examples(&val_ex)?,
        });
    }
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        epoch: config.epochs,
        model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PlantedTask;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            embedding_dim: 8,
            latent_dim: 12,
            concept_width: 4,
            fused_dim: 10,
            reasoner_hidden: 6,
            ..TrainConfig::default()
        }
    }

    fn data(n: usize) -> (PlantedTask, Vec<ConceptRecord>) {
        let task = PlantedTask::restaurant(0.0).unwrap();
        let recs = task.generate(n, 7).unwrap();
        (task, recs)
    }

    fn model(config: &TrainConfig, task: &PlantedTask, recs: &[ConceptRecord]) -> Clmn {
        let texts: Vec<&str> = recs.iter().map(|r| r.text.as_str()).collect();
        let vocab = Vocabulary::build(&texts, 1).unwrap();
        Clmn::init(config, task.spec.clone(), task.n_classes(), vocab).unwrap()
    }

    fn losses(m: &Clmn, ex: &[Example], a1: f64, a2: f64) -> LossBreakdown {
        let batch: Vec<&Example> = ex.iter().collect();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, &mut Vec::new());
        let fwd = m.forward(&mut g, &vars, &batch).unwrap();
        let l = m.total_loss(&mut g, &fwd, &batch, a1, a2).unwrap();
        LossBreakdown::read(&g, &l)
    }

    fn ce(logits: &[f64], gold: usize) -> f64 {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        lse - logits[gold]
    }

    #[test]
    fn zero_weights_leave_prediction_loss() {
        let (task, recs) = data(6);
        let m = model(&tiny_config(), &task, &recs);
        let ex = m.prepare(&recs).unwrap();
        let l = losses(&m, &ex, 0.0, 0.0);
        assert_eq!(l.total, l.prediction);
    }

    #[test]
    fn single_example_loss_matches_component_oracles() {
        let (task, recs) = data(1);
        let m = model(&tiny_config(), &task, &recs);
        let ex = m.prepare(&recs).unwrap();
        let l = losses(&m, &ex, 100.0, 10.0);

        let z = m.encoder.encode(&m.vocab, &recs[0].text).unwrap();
        let concepts = m.concepts.forward_one(&z).unwrap();
        let logits = m.fusion.predict_one(&z, &concepts.mixed).unwrap();
        let signals = m.reasoner.rule_signals(&concepts.mixed).unwrap();
        let label = recs[0].label;
        let lp = ce(&logits, label);
        let states = &ex[0].states;
        let lc = concepts
            .logits
            .iter()
            .zip(states)
            .map(|(l, &k)| ce(l, k))
            .sum::<f64>()
            / states.len() as f64;
        let scaled: Vec<f64> = signals.yhat.iter().map(|y| 10.0 * y).collect();
        let ln = ce(&scaled, label);

        assert!((l.prediction - lp).abs() < 1e-12);
        assert!((l.concept - lc).abs() < 1e-12);
        assert!((l.neural - ln).abs() < 1e-12);
        assert!((l.total - (lp + 100.0 * lc + 10.0 * ln)).abs() < 1e-9);
    }

    #[test]
    fn total_is_linear_in_alpha1() {
        let (task, recs) = data(5);
        let m = model(&tiny_config(), &task, &recs);
        let ex = m.prepare(&recs).unwrap();
        let a = losses(&m, &ex, 100.0, 10.0);
        let b = losses(&m, &ex, 200.0, 10.0);
        assert!((b.total - a.total - 100.0 * a.concept).abs() < 1e-9);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let (task, recs) = data(2);
        let mut m = model(&tiny_config(), &task, &recs);
        let before: Vec<f64> = m.fusion.output.bias.values().to_vec();
        let grads: Vec<Vec<f64>> = m
            .tensors()
            .iter()
            .map(|(name, t)| {
                let sign = if name.starts_with("fusion.output.bias") { -1.0 } else { 0.0 };
                vec![sign * 3.0; t.numel()]
            })
            .collect();
        let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut adam = Adam::new(&m, 0.01, AdamConfig::default());
        adam.update(&mut m, &refs).unwrap();
        for (a, b) in m.fusion.output.bias.values().iter().zip(&before) {
            // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε).
            let expect = b + 0.01 * 3.0 / (3.0 + 1e-8);
            assert!((a - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let (task, recs) = data(12);
        let config = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let ck = fit(&config, &task.spec, 5, &recs[..8], &recs[8..]).unwrap();
        assert_eq!(ck.model, model(&config, &task, &recs[..8]));
        assert!(ck.history.is_empty());
    }

    #[test]
    fn fit_is_deterministic() {
        let (task, recs) = data(40);
        let config = tiny_config();
        let a = fit(&config, &task.spec, 5, &recs[..30], &recs[30..]).unwrap();
        let b = fit(&config, &task.spec, 5, &recs[..30], &recs[30..]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let (task, recs) = data(20);
        let config = TrainConfig {
            learning_rate: 1e300,
            ..tiny_config()
        };
        match fit(&config, &task.spec, 5, &recs[..16], &recs[16..]) {
            Err(Error::Training { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let (task, recs) = data(4);
        for config in [
            TrainConfig {
                alpha1: -1.0,
                ..tiny_config()
            },
            TrainConfig {
                batch_size: 0,
                ..tiny_config()
            },
        ] {
            assert!(matches!(
                fit(&config, &task.spec, 5, &recs[..2], &recs[2..]),
                Err(Error::Config(_))
            ));
        }
        assert!(matches!(
            fit(&tiny_config(), &task.spec, 5, &recs, &[]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (task, recs) = data(30);
        let ck = fit(&tiny_config(), &task.spec, 5, &recs[..20], &recs[20..]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(
            back.model.evaluate(&recs).unwrap(),
            ck.model.evaluate(&recs).unwrap()
        );
    }

    #[test]
    fn checkpoint_rejects_other_versions() {
        let (task, recs) = data(10);
        let mut ck = fit(
            &TrainConfig {
                epochs: 0,
                ..tiny_config()
            },
            &task.spec,
            5,
            &recs[..8],
            &recs[8..],
        )
        .unwrap();
        ck.version = 99;
        assert!(matches!(
            Checkpoint::from_json(&ck.to_json().unwrap()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn evaluation_fields_are_consistent() {
        let (task, recs) = data(30);
        let ck = fit(&tiny_config(), &task.spec, 5, &recs[..20], &recs[20..]).unwrap();
        let report = ck.model.evaluate(&recs).unwrap();
        for v in report.values() {
            assert!((0.0..=1.0).contains(&v));
        }
        let preds = ck
            .model
            .predict(&recs.iter().map(|r| r.text.as_str()).collect::<Vec<_>>())
            .unwrap();
        let acc = preds.iter().zip(&recs).filter(|(p, r)| **p == r.label).count() as f64
            / recs.len() as f64;
        assert_eq!(acc, report.output.accuracy);
        let explained = ck.model.explain(&recs[..3]).unwrap();
        assert_eq!(explained.len(), 3);
        assert_eq!(explained[1].predicted_class, preds[1]);
    }
}
