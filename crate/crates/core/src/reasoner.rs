//! Neural-symbolic reasoning layer.
//!
//! For every class `j` two small networks read each concept embedding `ĉ_s`:
//! a polarity net giving `I_p[j,s]` and a relevance net giving `I_r[j,s]`,
//! both `sigmoid(w2 · ReLU(W1 ĉ_s + b1) + b2)`. The networks are shared by all
//! concepts and separate per class. The class rule score is the Gödel
//! conjunction of implications
//!
//! ```text
//! ŷ_j = min_s max(1 - I_p[j,s], I_r[j,s])
//! ```
//!
//! and is trained with cross-entropy on `τ · ŷ`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concept_layer::{argmax, ConceptLayerOutput, ConceptSpec};
use crate::diffmath::{Graph, ReduceOp, Tensor, Var};
use crate::error::{Error, Result};
use crate::fuzzy::{render_rule, ConceptId, RuleExpr};
use crate::params::{Affine, AffineVars, ParamSet};

pub const DEFAULT_TEMPERATURE: f64 = 10.0;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `e → h → 1` network with a sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalNet {
    pub hidden: Affine,
    pub output: Affine,
}

impl SignalNet {
    fn init(rng: &mut impl Rng, width: usize, hidden: usize) -> Self {
        Self {
            hidden: Affine::glorot(rng, width, hidden),
            output: Affine::glorot(rng, hidden, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassNets {
    pub polarity: SignalNet,
    pub relevance: SignalNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerParams {
    pub classes: Vec<ClassNets>,
}

impl ReasonerParams {
    pub fn init(rng: &mut impl Rng, n_classes: usize, width: usize, hidden: usize) -> Self {
        let classes = (0..n_classes)
            .map(|_| ClassNets {
                polarity: SignalNet::init(rng, width, hidden),
                relevance: SignalNet::init(rng, width, hidden),
            })
            .collect();
        Self { classes }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn bind(&self, g: &mut Graph, registry: &mut Vec<Var>) -> ReasonerVars {
        self.attach(&mut self.bind_all(g, registry).into_iter())
    }

    /// Wraps vars already on a graph, taken in `tensors()` order.
    pub fn attach(&self, it: &mut impl Iterator<Item = Var>) -> ReasonerVars {
        fn net(it: &mut impl Iterator<Item = Var>) -> SignalNetVars {
            SignalNetVars {
                hidden: AffineVars::from_iter(it),
                output: AffineVars::from_iter(it),
            }
        }
        let classes = self
            .classes
            .iter()
            .map(|_| ClassNetVars {
                polarity: net(it),
                relevance: net(it),
            })
            .collect();
        ReasonerVars { classes }
    }

    /// Signals for one example given its `S × e` concept embeddings.
    pub fn rule_signals(&self, mixed: &[Vec<f64>]) -> Result<RuleSignals> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, &mut Vec::new());
        let cs = mixed
            .iter()
            .map(|r| g.constant(Tensor::row(r)))
            .collect::<Vec<_>>();
        let fwd = vars.forward(&mut g, &cs)?;
        Ok(fwd.signals(&g, 0))
    }
}

impl ParamSet for ReasonerParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (j, c) in self.classes.iter().enumerate() {
            c.polarity.hidden.push_named(&format!("reasoner.{j}.polarity.hidden"), &mut out);
            c.polarity.output.push_named(&format!("reasoner.{j}.polarity.output"), &mut out);
            c.relevance.hidden.push_named(&format!("reasoner.{j}.relevance.hidden"), &mut out);
            c.relevance.output.push_named(&format!("reasoner.{j}.relevance.output"), &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.classes {
            c.polarity.hidden.push_mut(&mut out);
            c.polarity.output.push_mut(&mut out);
            c.relevance.hidden.push_mut(&mut out);
            c.relevance.output.push_mut(&mut out);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SignalNetVars {
    pub hidden: AffineVars,
    pub output: AffineVars,
}

impl SignalNetVars {
    fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.hidden.apply(g, x)?;
        let h = g.relu(h);
        let o = self.output.apply(g, h)?;
        Ok(g.sigmoid(o))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassNetVars {
    pub polarity: SignalNetVars,
    pub relevance: SignalNetVars,
}

#[derive(Debug, Clone)]
pub struct ReasonerVars {
    pub classes: Vec<ClassNetVars>,
}

/// Graph handles of one batched reasoning pass.
#[derive(Debug, Clone)]
pub struct RuleForward {
    /// Per class, `[batch × S]`.
    pub polarity: Vec<Var>,
    /// Per class, `[batch × S]`.
    pub relevance: Vec<Var>,
    /// Per class, `[batch × S]` implication terms `max(1 - I_p, I_r)`.
    pub terms: Vec<Var>,
    /// Per class, `[batch × 1]` min-reduction nodes.
    pub scores: Vec<Var>,
    /// `[batch × d_y]`
    pub yhat: Var,
}

impl ReasonerVars {
    /// Polarity and relevance for every class, each `[batch × S]`.
    pub fn rule_signals(&self, g: &mut Graph, mixed: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
        let n_concepts = mixed.len();
        let batch = g
            .shape(*mixed.first().ok_or_else(|| Error::dim("rule_signals", "no concepts"))?)[0];
        // Rows ordered concept-major: row s·B + b holds ĉ_s of example b.
        let stacked = g.concat_rows(mixed)?;
        let to_batch_major = |g: &mut Graph, col: Var| -> Result<Var> {
            let grid = g.reshape(col, vec![n_concepts, batch])?;
            g.transpose(grid)
        };
        let mut polarity = Vec::with_capacity(self.classes.len());
        let mut relevance = Vec::with_capacity(self.classes.len());
        for c in &self.classes {
            let p = c.polarity.apply(g, stacked)?;
            polarity.push(to_batch_major(g, p)?);
            let r = c.relevance.apply(g, stacked)?;
            relevance.push(to_batch_major(g, r)?);
        }
        Ok((polarity, relevance))
    }

    pub fn forward(&self, g: &mut Graph, mixed: &[Var]) -> Result<RuleForward> {
        let (polarity, relevance) = self.rule_signals(g, mixed)?;
        let mut terms = Vec::with_capacity(polarity.len());
        let mut scores = Vec::with_capacity(polarity.len());
        for (&p, &r) in polarity.iter().zip(&relevance) {
            let (t, s) = rule_aggregate(g, p, r)?;
            terms.push(t);
            scores.push(s);
        }
        let yhat = g.concat_cols(&scores)?;
        Ok(RuleForward {
            polarity,
            relevance,
            terms,
            scores,
            yhat,
        })
    }
}

/// `min_s max(1 - I_p, I_r)` row-wise; returns the term matrix and the
/// `[batch × 1]` scores.
pub fn rule_aggregate(g: &mut Graph, polarity: Var, relevance: Var) -> Result<(Var, Var)> {
    let not_p = g.complement(polarity);
    let terms = g.maximum(not_p, relevance)?;
    let score = g.reduce(ReduceOp::Min, terms, 1)?;
    Ok((terms, score))
}

/// Cross-entropy on temperature-scaled rule scores.
pub fn neural_loss(g: &mut Graph, yhat: Var, gold: &[usize], temperature: f64) -> Result<Var> {
    let scaled = g.scale(yhat, temperature);
    g.softmax_cross_entropy(scaled, gold)
}

/// Rule signals of one example, as plain values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSignals {
    /// `d_y × S`
    pub polarity: Vec<Vec<f64>>,
    /// `d_y × S`
    pub relevance: Vec<Vec<f64>>,
    /// `d_y`
    pub yhat: Vec<f64>,
}

impl RuleSignals {
    /// Builds signals from raw polarity/relevance, computing `yhat` in closed form.
    pub fn from_parts(polarity: Vec<Vec<f64>>, relevance: Vec<Vec<f64>>) -> Result<Self> {
        if polarity.len() != relevance.len()
            || polarity.iter().zip(&relevance).any(|(p, r)| p.len() != r.len())
        {
            return Err(Error::dim("rule_signals", "polarity and relevance shapes differ"));
        }
        let yhat = polarity
            .iter()
            .zip(&relevance)
            .map(|(p, r)| closed_form_score(p, r))
            .collect();
        Ok(Self {
            polarity,
            relevance,
            yhat,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.yhat.len()
    }

    /// `max(1 - I_p, I_r)` for class `j`, concept `s`.
    pub fn term(&self, j: usize, s: usize) -> f64 {
        (1.0 - self.polarity[j][s]).max(self.relevance[j][s])
    }

    /// First concept attaining the minimum term for class `j`.
    pub fn arg_min_concept(&self, j: usize) -> usize {
        let n = self.polarity[j].len();
        let mut best = 0;
        for s in 1..n {
            if self.term(j, s) < self.term(j, best) {
                best = s;
            }
        }
        best
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.yhat)
    }
}

/// `min_s max(1 - p_s, r_s)`; an empty concept set gives 1.
pub fn closed_form_score(polarity: &[f64], relevance: &[f64]) -> f64 {
    polarity
        .iter()
        .zip(relevance)
        .map(|(p, r)| (1.0 - p).max(*r))
        .fold(1.0, f64::min)
}

fn row(g: &Graph, v: Var, b: usize) -> Vec<f64> {
    let t = g.value(v);
    let n = t.shape()[1];
    t.values()[b * n..(b + 1) * n].to_vec()
}

impl RuleForward {
    /// Extracts example `b` of the batch.
    pub fn signals(&self, g: &Graph, b: usize) -> RuleSignals {
        RuleSignals {
            polarity: self.polarity.iter().map(|&v| row(g, v, b)).collect(),
            relevance: self.relevance.iter().map(|&v| row(g, v, b)).collect(),
            yhat: row(g, self.yhat, b),
        }
    }
}

/// Running per-class, per-concept signal sums; shards merge by addition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalMeans {
    polarity: Vec<Vec<f64>>,
    relevance: Vec<Vec<f64>>,
    count: usize,
}

impl SignalMeans {
    pub fn add(&mut self, s: &RuleSignals) {
        if self.count == 0 {
            self.polarity = vec![vec![0.0; s.polarity[0].len()]; s.n_classes()];
            self.relevance = self.polarity.clone();
        }
        for j in 0..s.n_classes() {
            for (acc, v) in self.polarity[j].iter_mut().zip(&s.polarity[j]) {
                *acc += v;
            }
            for (acc, v) in self.relevance[j].iter_mut().zip(&s.relevance[j]) {
                *acc += v;
            }
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &SignalMeans) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        for (a, b) in self.polarity.iter_mut().flatten().zip(other.polarity.iter().flatten()) {
            *a += b;
        }
        for (a, b) in self.relevance.iter_mut().flatten().zip(other.relevance.iter().flatten()) {
            *a += b;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean_polarity(&self, j: usize, s: usize) -> f64 {
        self.polarity[j][s] / self.count as f64
    }

    pub fn mean_relevance(&self, j: usize, s: usize) -> f64 {
        self.relevance[j][s] / self.count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub relevance: f64,
    pub polarity: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            relevance: DEFAULT_THRESHOLD,
            polarity: DEFAULT_THRESHOLD,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("relevance", self.relevance), ("polarity", self.polarity)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} threshold {v} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleLiteral {
    pub concept: usize,
    pub negated: bool,
    pub relevance: f64,
    pub polarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRule {
    pub class: usize,
    pub literals: Vec<RuleLiteral>,
    pub rendered: String,
}

impl ExtractedRule {
    pub fn expr(&self) -> RuleExpr {
        RuleExpr::And(
            self.literals
                .iter()
                .map(|l| RuleExpr::Literal {
                    concept: ConceptId(l.concept),
                    negated: l.negated,
                })
                .collect(),
        )
    }

    /// `(concept, negated)` pairs, sorted by concept.
    pub fn literal_set(&self) -> Vec<(usize, bool)> {
        let mut v: Vec<_> = self.literals.iter().map(|l| (l.concept, l.negated)).collect();
        v.sort();
        v
    }
}

/// Thresholds dataset-mean signals into one conjunction per class.
///
/// Concept `s` enters class `j`'s rule iff its mean relevance is at least
/// `thresholds.relevance`; the literal is negated iff its mean polarity is
/// below `thresholds.polarity`.
pub fn extract_rules(
    means: &SignalMeans,
    spec: &ConceptSpec,
    thresholds: Thresholds,
) -> Result<Vec<ExtractedRule>> {
    if means.count() == 0 {
        return Err(Error::Input("rule extraction needs at least one example".into()));
    }
    thresholds.validate()?;
    let n_classes = means.polarity.len();
    let mut rules = Vec::with_capacity(n_classes);
    for j in 0..n_classes {
        let literals: Vec<RuleLiteral> = (0..spec.n_concepts())
            .filter_map(|s| {
                let relevance = means.mean_relevance(j, s);
                let polarity = means.mean_polarity(j, s);
                (relevance >= thresholds.relevance).then_some(RuleLiteral {
                    concept: s,
                    negated: polarity < thresholds.polarity,
                    relevance,
                    polarity,
                })
            })
            .collect();
        let mut rule = ExtractedRule {
            class: j,
            literals,
            rendered: String::new(),
        };
        rule.rendered = render_rule(&rule.expr(), &spec.names)?;
        rules.push(rule);
    }
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptReport {
    pub concept: String,
    pub state: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub concept: String,
    pub not_polarity: f64,
    pub relevance: f64,
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub terms: Vec<TermReport>,
    pub deciding_concept: String,
    pub score: f64,
}

/// Per-example account of the concept predictions and rule evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub gold: Option<usize>,
    pub concepts: Vec<ConceptReport>,
    pub classes: Vec<ClassReport>,
    pub rule_prediction: usize,
    pub predicted_class: usize,
}

pub fn explain_example(
    spec: &ConceptSpec,
    text: &str,
    gold: Option<usize>,
    concepts: &ConceptLayerOutput,
    signals: &RuleSignals,
    predicted_class: usize,
) -> Explanation {
    let concept_reports = concepts
        .probabilities
        .iter()
        .enumerate()
        .map(|(s, probs)| {
            let k = argmax(probs);
            ConceptReport {
                concept: spec.names[s].clone(),
                state: spec.states[k].clone(),
                probability: probs[k],
            }
        })
        .collect();
    let classes = (0..signals.n_classes())
        .map(|j| ClassReport {
            class: j,
            terms: (0..spec.n_concepts())
                .map(|s| TermReport {
                    concept: spec.names[s].clone(),
                    not_polarity: 1.0 - signals.polarity[j][s],
                    relevance: signals.relevance[j][s],
                    term: signals.term(j, s),
                })
                .collect(),
            deciding_concept: spec.names[signals.arg_min_concept(j)].clone(),
            score: signals.yhat[j],
        })
        .collect();
    Explanation {
        text: text.to_string(),
        gold,
        concepts: concept_reports,
        classes,
        rule_prediction: signals.predicted_class(),
        predicted_class,
    }
}

impl Explanation {
    /// Human-readable block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "text: {}", self.text);
        if let Some(g) = self.gold {
            let _ = writeln!(out, "gold class: {g}");
        }
        let _ = writeln!(out, "predicted class: {}", self.predicted_class);
        let _ = writeln!(out, "rule prediction: {}", self.rule_prediction);
        let _ = writeln!(out, "concepts:");
        for c in &self.concepts {
            let _ = writeln!(out, "  {:<12} {:<10} p={:.4}", c.concept, c.state, c.probability);
        }
        for cls in &self.classes {
            let _ = writeln!(
                out,
                "class {}: score={:.4} decided by {}",
                cls.class, cls.score, cls.deciding_concept
            );
            for t in &cls.terms {
                let _ = writeln!(
                    out,
                    "  {:<12} 1-Ip={:.4} Ir={:.4} max={:.4}",
                    t.concept, t.not_polarity, t.relevance, t.term
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzy::{eval_rule, Semantics, TruthValue};
    use crate::seed::{stream, uniform};
    use rand::Rng;

    fn random_params(seed: u64, classes: usize, e: usize, h: usize) -> ReasonerParams {
        let mut rng = stream(seed, "reasoner-test");
        ReasonerParams::init(&mut rng, classes, e, h)
    }

    fn random_mixed(seed: u64, s: usize, e: usize) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, "mixed");
        (0..s).map(|_| uniform(&mut rng, 1, e, 1.0).into_values()).collect()
    }

    #[test]
    fn zero_output_layers_give_half() {
        let mut p = random_params(1, 3, 4, 5);
        for c in &mut p.classes {
            c.polarity.output = Affine::zeros(5, 1);
            c.relevance.output = Affine::zeros(5, 1);
        }
        let sig = p.rule_signals(&random_mixed(2, 4, 4)).unwrap();
        for v in sig.polarity.iter().chain(&sig.relevance).flatten() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn identical_rows_give_identical_columns() {
        let p = random_params(3, 2, 4, 6);
        let row = random_mixed(4, 1, 4).remove(0);
        let sig = p.rule_signals(&[row.clone(), row.clone(), row]).unwrap();
        for j in 0..2 {
            assert_eq!(sig.polarity[j][0], sig.polarity[j][1]);
            assert_eq!(sig.polarity[j][1], sig.polarity[j][2]);
            assert_eq!(sig.relevance[j][0], sig.relevance[j][2]);
        }
    }

    #[test]
    fn signals_match_two_layer_oracle() {
        let (e, h) = (4, 6);
        let p = random_params(5, 3, e, h);
        let mixed = random_mixed(6, 4, e);
        let sig = p.rule_signals(&mixed).unwrap();
        let net = |n: &SignalNet, x: &[f64]| {
            let hidden: Vec<f64> = (0..h)
                .map(|k| {
                    ((0..e).map(|i| x[i] * n.hidden.weight.at(i, k)).sum::<f64>()
                        + n.hidden.bias.values()[k])
                        .max(0.0)
                })
                .collect();
            let o = (0..h).map(|k| hidden[k] * n.output.weight.at(k, 0)).sum::<f64>()
                + n.output.bias.values()[0];
            1.0 / (1.0 + (-o).exp())
        };
        for j in 0..3 {
            for s in 0..4 {
                let ip = net(&p.classes[j].polarity, &mixed[s]);
                let ir = net(&p.classes[j].relevance, &mixed[s]);
                assert!((sig.polarity[j][s] - ip).abs() < 1e-12);
                assert!((sig.relevance[j][s] - ir).abs() < 1e-12);
            }
            let expect = closed_form_score(&sig.polarity[j], &sig.relevance[j]);
            assert_eq!(sig.yhat[j], expect);
        }
    }

    fn aggregate_values(p: &[Vec<f64>], r: &[Vec<f64>]) -> Vec<f64> {
        let mut g = Graph::new();
        let pv = g.constant(Tensor::from_rows(p).unwrap());
        let rv = g.constant(Tensor::from_rows(r).unwrap());
        let (_, s) = rule_aggregate(&mut g, pv, rv).unwrap();
        g.value(s).values().to_vec()
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_values(&[vec![1.0; 3]], &[vec![1.0; 3]]), vec![1.0]);
        let v = aggregate_values(&[vec![0.3]], &[vec![0.6]]);
        assert!((v[0] - 0.7).abs() < 1e-15);
    }

    /// Gödel tree `AND_s (NOT p_s OR r_s)` with `p_s` at id `2s`, `r_s` at `2s+1`.
    fn implication_tree(n: usize) -> RuleExpr {
        RuleExpr::And(
            (0..n)
                .map(|s| RuleExpr::Or(vec![RuleExpr::neg(2 * s), RuleExpr::lit(2 * s + 1)]))
                .collect(),
        )
    }

    #[test]
    fn closed_form_equals_godel_tree() {
        let mut rng = stream(7, "tree");
        for _ in 0..200 {
            let d_y = rng.gen_range(1..=5);
            let s = rng.gen_range(1..=8);
            let p: Vec<Vec<f64>> = (0..d_y).map(|_| (0..s).map(|_| rng.gen()).collect()).collect();
            let r: Vec<Vec<f64>> = (0..d_y).map(|_| (0..s).map(|_| rng.gen()).collect()).collect();
            let closed = aggregate_values(&p, &r);
            for j in 0..d_y {
                let assign: Vec<TruthValue> = (0..s)
                    .flat_map(|c| [p[j][c], r[j][c]])
                    .map(|v| TruthValue::new(v).unwrap())
                    .collect();
                let tree = eval_rule(&implication_tree(s), &assign, Semantics::Godel).unwrap();
                assert!((tree.get() - closed[j]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn monotone_in_relevance_and_polarity() {
        let mut rng = stream(8, "mono");
        for _ in 0..200 {
            let p: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
            let r: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
            let base = closed_form_score(&p, &r);
            let s = rng.gen_range(0..5);
            let mut r2 = r.clone();
            r2[s] = (r2[s] + rng.gen::<f64>()).min(1.0);
            assert!(closed_form_score(&p, &r2) >= base);
            let mut p2 = p.clone();
            p2[s] = (p2[s] + rng.gen::<f64>()).min(1.0);
            assert!(closed_form_score(&p2, &r) <= base);
        }
    }

    #[test]
    fn zero_polarity_is_neutral() {
        let sig = RuleSignals::from_parts(
            vec![vec![0.0, 0.8, 0.9]],
            vec![vec![0.0, 0.3, 0.5]],
        )
        .unwrap();
        assert_eq!(sig.term(0, 0), 1.0);
        assert_ne!(sig.arg_min_concept(0), 0);
        let all_one = RuleSignals::from_parts(vec![vec![0.0, 0.0]], vec![vec![0.2, 0.4]]).unwrap();
        assert_eq!(all_one.yhat[0], 1.0);
        assert_eq!(all_one.arg_min_concept(0), 0);
    }

    #[test]
    fn neural_loss_values() {
        let d_y = 4;
        let tau = DEFAULT_TEMPERATURE;
        let mut g = Graph::new();
        let y = g.constant(Tensor::full(&[1, d_y], 0.5));
        let l = neural_loss(&mut g, y, &[2], tau).unwrap();
        assert!((g.value(l).values()[0] - (d_y as f64).ln()).abs() < 1e-12);

        // Best achievable with [0,1] scores: ln(1 + (d_y - 1) e^{-τ}).
        let y = g.constant(Tensor::row(&[0.0, 1.0, 0.0, 0.0]));
        let l = neural_loss(&mut g, y, &[1], tau).unwrap();
        let best = (1.0 + (d_y as f64 - 1.0) * (-tau).exp()).ln();
        assert!((g.value(l).values()[0] - best).abs() < 1e-12);

        let mut rng = stream(9, "nl");
        let yv: Vec<f64> = (0..d_y).map(|_| rng.gen()).collect();
        let denom: f64 = yv.iter().map(|v| (tau * v).exp()).sum();
        let oracle = denom.ln() - tau * yv[3];
        let y = g.constant(Tensor::row(&yv));
        let l = neural_loss(&mut g, y, &[3], tau).unwrap();
        assert!((g.value(l).values()[0] - oracle).abs() < 1e-12);
        assert!(matches!(neural_loss(&mut g, y, &[4], tau), Err(Error::Index(_))));
    }

    fn spec() -> ConceptSpec {
        ConceptSpec::with_default_states(["food", "service", "noise"]).unwrap()
    }

    #[test]
    fn extraction_thresholds() {
        let spec = spec();
        let mut means = SignalMeans::default();
        means.add(
            &RuleSignals::from_parts(
                vec![vec![0.9, 0.1, 0.5], vec![0.5; 3]],
                vec![vec![0.8, 0.7, 0.2], vec![0.5; 3]],
            )
            .unwrap(),
        );
        let rules = extract_rules(&means, &spec, Thresholds::default()).unwrap();
        assert_eq!(rules[0].literal_set(), vec![(0, false), (1, true)]);
        assert_eq!(rules[0].rendered, "food AND NOT service");
        // Uniform 0.5 signals: the inclusive convention keeps every concept, positive.
        assert_eq!(rules[1].literal_set(), vec![(0, false), (1, false), (2, false)]);

        let mut low = SignalMeans::default();
        low.add(&RuleSignals::from_parts(vec![vec![0.9; 3]], vec![vec![0.1; 3]]).unwrap());
        let rules = extract_rules(&low, &spec, Thresholds::default()).unwrap();
        assert!(rules[0].literals.is_empty());
        assert_eq!(rules[0].rendered, "TRUE");

        assert!(matches!(
            extract_rules(&SignalMeans::default(), &spec, Thresholds::default()),
            Err(Error::Input(_))
        ));
        let bad = Thresholds {
            relevance: 1.0,
            polarity: 0.5,
        };
        assert!(extract_rules(&means, &spec, bad).is_err());
    }

    #[test]
    fn sharded_means_merge_to_serial() {
        let mut rng = stream(10, "shard");
        let sigs: Vec<RuleSignals> = (0..9)
            .map(|_| {
                let p = vec![(0..3).map(|_| rng.gen()).collect()];
                let r = vec![(0..3).map(|_| rng.gen()).collect()];
                RuleSignals::from_parts(p, r).unwrap()
            })
            .collect();
        let mut serial = SignalMeans::default();
        sigs.iter().for_each(|s| serial.add(s));
        let mut a = SignalMeans::default();
        let mut b = SignalMeans::default();
        sigs[..4].iter().for_each(|s| a.add(s));
        sigs[4..].iter().for_each(|s| b.add(s));
        a.merge(&b);
        assert_eq!(a.count(), serial.count());
        for s in 0..3 {
            assert!((a.mean_polarity(0, s) - serial.mean_polarity(0, s)).abs() < 1e-15);
            assert!((a.mean_relevance(0, s) - serial.mean_relevance(0, s)).abs() < 1e-15);
        }
    }

    #[test]
    fn explanation_passes_values_through() {
        let spec = spec();
        let concepts = ConceptLayerOutput {
            probabilities: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            mixed: vec![vec![0.0]; 3],
            logits: vec![vec![0.0; 3]; 3],
        };
        let signals = RuleSignals::from_parts(
            vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]],
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        let ex = explain_example(&spec, "t", Some(1), &concepts, &signals, 1);
        assert_eq!(ex.concepts[1].state, "negative");
        assert_eq!(ex.concepts[2].probability, 1.0);
        assert_eq!(ex.classes[0].score, 0.0);
        assert_eq!(ex.classes[0].deciding_concept, "noise");
        assert_eq!(ex.classes[1].deciding_concept, "service");
        for cls in &ex.classes {
            let decider = cls
                .terms
                .iter()
                .find(|t| t.concept == cls.deciding_concept)
                .unwrap();
            assert_eq!(decider.term, cls.score);
        }
        let text = ex.to_text();
        assert!(text.contains("decided by noise"));
    }
}
