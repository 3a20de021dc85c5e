//! Dataset records, JSONL ingestion, splits and the planted-rule generator.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concept_layer::ConceptSpec;
use crate::error::{Error, Result};
use crate::fuzzy::{eval_rule, render_rule, RuleExpr, Semantics, TruthValue};
use crate::seed;

pub const UNKNOWN_STATE: &str = "unknown";

/// One labelled example: text, task class and a state per concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub text: String,
    pub label: usize,
    #[serde(default)]
    pub concepts: BTreeMap<String, String>,
}

impl ConceptRecord {
    /// Gold state index of every concept, in spec order. Missing concepts
    /// read as `unknown`.
    pub fn state_indices(&self, spec: &ConceptSpec) -> Result<Vec<usize>> {
        spec.names
            .iter()
            .map(|name| {
                let state = self
                    .concepts
                    .get(name)
                    .map(String::as_str)
                    .unwrap_or(UNKNOWN_STATE);
                spec.state_index(state).ok_or_else(|| Error::Schema {
                    line: 0,
                    message: format!("concept {name:?} has undeclared state {state:?}"),
                })
            })
            .collect()
    }
}

/// Validates and canonicalizes a raw record against `spec`.
fn normalize(
    raw: ConceptRecord,
    spec: &ConceptSpec,
    n_classes: Option<usize>,
    line: usize,
) -> Result<ConceptRecord> {
    let schema = |message: String| Error::Schema { line, message };
    if let Some(n) = n_classes {
        if raw.label >= n {
            return Err(schema(format!("label {} outside [0, {n})", raw.label)));
        }
    }
    let mut concepts = BTreeMap::new();
    for (name, state) in &raw.concepts {
        let s = spec
            .concept_index(name)
            .ok_or_else(|| schema(format!("undeclared concept {name:?}")))?;
        let k = spec
            .state_index(state)
            .ok_or_else(|| schema(format!("unknown state {state:?} for concept {name:?}")))?;
        concepts.insert(spec.names[s].clone(), spec.states[k].clone());
    }
    for name in &spec.names {
        if !concepts.contains_key(name) {
            let k = spec.state_index(UNKNOWN_STATE).ok_or_else(|| {
                schema(format!("concept {name:?} missing and no {UNKNOWN_STATE:?} state declared"))
            })?;
            concepts.insert(name.clone(), spec.states[k].clone());
        }
    }
    Ok(ConceptRecord {
        text: raw.text,
        label: raw.label,
        concepts,
    })
}

/// Reads one record per non-blank line; `n_classes`, when given, bounds labels.
pub fn load_jsonl(
    path: impl AsRef<Path>,
    spec: &ConceptSpec,
    n_classes: Option<usize>,
) -> Result<Vec<ConceptRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ConceptRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(normalize(raw, spec, n_classes, line_no)?);
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[ConceptRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Shuffled train/val/test partition. Val and test sizes are floored and the
/// remainder goes to train.
pub fn split<T: Clone>(
    records: &[T],
    fractions: (f64, f64, f64),
    seed_value: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (tr, va, te) = fractions;
    if [tr, va, te].iter().any(|f| !(*f > 0.0)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let n = records.len();
    let n_val = (n as f64 * va + 1e-9).floor() as usize;
    let n_test = (n as f64 * te + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed_value, "split"));
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let n_train = n - n_val - n_test;
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

/// Synthetic task whose labels come from known per-class rules.
///
/// Each concept is a fuzzy atom whose truth is `state_truth[k]` in state `k`.
/// With crisp truths, exactly one class rule holds for every assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTask {
    pub spec: ConceptSpec,
    pub class_rules: Vec<RuleExpr>,
    pub state_truth: Vec<f64>,
    /// `lexicon[s][k]`: phrases signalling concept `s` in state `k`.
    pub lexicon: Vec<Vec<Vec<String>>>,
    pub filler: Vec<String>,
    pub noise: f64,
}

/// A generated record plus the concept states that produced its label.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRecord {
    pub record: ConceptRecord,
    pub true_states: Vec<usize>,
    pub recorded_states: Vec<usize>,
}

fn phrases(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl PlantedTask {
    pub fn new(
        spec: ConceptSpec,
        class_rules: Vec<RuleExpr>,
        state_truth: Vec<f64>,
        lexicon: Vec<Vec<Vec<String>>>,
        filler: Vec<String>,
        noise: f64,
    ) -> Result<Self> {
        let task = Self {
            spec,
            class_rules,
            state_truth,
            lexicon,
            filler,
            noise,
        };
        task.validate()?;
        Ok(task)
    }

    /// Restaurant-review task: four concepts, three states, five classes.
    ///
    /// A concept counts as true only when positive. Ambiance decides between
    /// the two lowest classes; noise never matters.
    pub fn restaurant(noise: f64) -> Result<Self> {
        let spec = ConceptSpec::with_default_states(["food", "ambiance", "service", "noise"])?;
        let (food, ambiance, service) = (0, 1, 2);
        let class_rules = vec![
            RuleExpr::And(vec![
                RuleExpr::neg(food),
                RuleExpr::neg(service),
                RuleExpr::neg(ambiance),
            ]),
            RuleExpr::And(vec![
                RuleExpr::neg(food),
                RuleExpr::neg(service),
                RuleExpr::lit(ambiance),
            ]),
            RuleExpr::And(vec![RuleExpr::neg(food), RuleExpr::lit(service)]),
            RuleExpr::And(vec![RuleExpr::lit(food), RuleExpr::neg(service)]),
            RuleExpr::And(vec![RuleExpr::lit(food), RuleExpr::lit(service)]),
        ];
        let lexicon = vec![
            vec![
                phrases(&[
                    "the food was delicious",
                    "every dish tasted fresh",
                    "the pasta was perfectly seasoned",
                    "flavorful entrees",
                    "the dessert was heavenly",
                ]),
                phrases(&[
                    "the food was bland",
                    "every dish tasted stale",
                    "the pasta was overcooked",
                    "soggy fries",
                    "the steak was tasteless",
                ]),
                vec![],
            ],
            vec![
                phrases(&[
                    "the room felt cozy",
                    "charming decor",
                    "an elegant dining room",
                    "the lighting was romantic",
                    "a lovely patio",
                ]),
                phrases(&[
                    "the room felt cramped",
                    "dingy decor",
                    "a drab dining room",
                    "the lighting was harsh",
                    "a gloomy basement",
                ]),
                vec![],
            ],
            vec![
                phrases(&[
                    "the waiter was attentive",
                    "friendly staff",
                    "our server was prompt",
                    "the host was courteous",
                    "helpful bartenders",
                ]),
                phrases(&[
                    "the waiter was rude",
                    "careless staff",
                    "our server was slow",
                    "the host was dismissive",
                    "inattentive bartenders",
                ]),
                vec![],
            ],
            vec![
                phrases(&[
                    "it was quiet",
                    "a peaceful atmosphere",
                    "calm and hushed",
                    "serene background music",
                    "easy to talk",
                ]),
                phrases(&[
                    "it was loud",
                    "a deafening atmosphere",
                    "noisy and chaotic",
                    "blaring background music",
                    "impossible to hear",
                ]),
                vec![],
            ],
        ];
        let filler = phrases(&[
            "we went there on a tuesday",
            "i ordered the special",
            "my friend recommended it",
            "we arrived at seven",
            "it was my first visit",
            "we came for a birthday",
        ]);
        Self::new(spec, class_rules, vec![1.0, 0.0, 0.0], lexicon, filler, noise)
    }

    pub fn n_classes(&self) -> usize {
        self.class_rules.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let (s, k) = (self.spec.n_concepts(), self.spec.n_states());
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise rate {} outside [0, 1)", self.noise)));
        }
        if self.state_truth.len() != k || self.state_truth.iter().any(|t| *t != 0.0 && *t != 1.0) {
            return Err(Error::Config(
                "state_truth needs one crisp 0/1 value per state".into(),
            ));
        }
        if self.lexicon.len() != s || self.lexicon.iter().any(|row| row.len() != k) {
            return Err(Error::Config("lexicon must be concepts × states".into()));
        }
        if self.filler.is_empty() {
            return Err(Error::Config("filler phrases must be non-empty".into()));
        }
        if self.class_rules.len() < 2 {
            return Err(Error::Config("a task needs at least two classes".into()));
        }
        for r in &self.class_rules {
            r.validate(s)?;
        }
        self.check_partition()
    }

    /// Enumerates every assignment and requires exactly one true class rule.
    fn check_partition(&self) -> Result<()> {
        let (s, k) = (self.spec.n_concepts(), self.spec.n_states());
        let total = k.checked_pow(s as u32).unwrap_or(usize::MAX);
        if total > 1 << 20 {
            return Err(Error::Config(format!("{total} assignments is too many to verify")));
        }
        let mut states = vec![0usize; s];
        for code in 0..total {
            let mut c = code;
            for slot in states.iter_mut() {
                *slot = c % k;
                c /= k;
            }
            let hits = self.matching_classes(&states)?;
            if hits.len() != 1 {
                return Err(Error::Config(format!(
                    "assignment {states:?} satisfies {} class rules {hits:?}",
                    hits.len()
                )));
            }
        }
        Ok(())
    }

    fn matching_classes(&self, states: &[usize]) -> Result<Vec<usize>> {
        let truth: Vec<TruthValue> = states
            .iter()
            .map(|&k| TruthValue::new(self.state_truth[k]))
            .collect::<Result<_>>()?;
        let mut hits = Vec::new();
        for (j, rule) in self.class_rules.iter().enumerate() {
            if eval_rule(rule, &truth, Semantics::Product)?.get() == 1.0 {
                hits.push(j);
            }
        }
        Ok(hits)
    }

    /// The class whose rule holds for `states`.
    pub fn label_of(&self, states: &[usize]) -> Result<usize> {
        let hits = self.matching_classes(states)?;
        match hits.as_slice() {
            [j] => Ok(*j),
            _ => Err(Error::Contract(format!(
                "assignment {states:?} matched classes {hits:?}"
            ))),
        }
    }

    /// Planted rule text per class.
    pub fn rendered_rules(&self) -> Result<Vec<String>> {
        self.class_rules
            .iter()
            .map(|r| render_rule(r, &self.spec.names))
            .collect()
    }

    /// `(concept, negated)` literals of a conjunctive class rule, sorted.
    pub fn literal_set(&self, class: usize) -> Option<Vec<(usize, bool)>> {
        fn collect(e: &RuleExpr, out: &mut Vec<(usize, bool)>) -> bool {
            match e {
                RuleExpr::Literal { concept, negated } => {
                    out.push((concept.0, *negated));
                    true
                }
                RuleExpr::And(cs) => cs.iter().all(|c| collect(c, out)),
                _ => false,
            }
        }
        let mut out = Vec::new();
        collect(&self.class_rules[class], &mut out).then(|| {
            out.sort();
            out
        })
    }

    pub fn generate(&self, n: usize, seed_value: u64) -> Result<Vec<ConceptRecord>> {
        Ok(self
            .generate_with_truth(n, seed_value)?
            .into_iter()
            .map(|g| g.record)
            .collect())
    }

    pub fn generate_with_truth(&self, n: usize, seed_value: u64) -> Result<Vec<GeneratedRecord>> {
        if n == 0 {
            return Err(Error::Input("cannot generate zero records".into()));
        }
        let mut rng = seed::stream(seed_value, "generate");
        let (s, k) = (self.spec.n_concepts(), self.spec.n_states());
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let true_states: Vec<usize> = (0..s).map(|_| rng.gen_range(0..k)).collect();
            let label = self.label_of(&true_states)?;

            let mut segments: Vec<&str> = Vec::new();
            for (c, &st) in true_states.iter().enumerate() {
                if let Some(p) = self.lexicon[c][st].choose(&mut rng) {
                    segments.push(p);
                }
            }
            let n_filler = rng.gen_range(1..=2);
            for _ in 0..n_filler {
                segments.push(self.filler.choose(&mut rng).expect("non-empty filler"));
            }
            segments.shuffle(&mut rng);
            let text = format!("{} .", segments.join(" , "));

            let recorded_states: Vec<usize> = true_states
                .iter()
                .map(|&st| {
                    if rng.gen_bool(self.noise) {
                        let other = rng.gen_range(0..k - 1);
                        if other >= st {
                            other + 1
                        } else {
                            other
                        }
                    } else {
                        st
                    }
                })
                .collect();
            let concepts = recorded_states
                .iter()
                .enumerate()
                .map(|(c, &st)| (self.spec.names[c].clone(), self.spec.states[st].clone()))
                .collect();
            out.push(GeneratedRecord {
                record: ConceptRecord {
                    text,
                    label,
                    concepts,
                },
                true_states,
                recorded_states,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ConceptSpec {
        ConceptSpec::with_default_states(["food", "ambiance", "service", "noise"]).unwrap()
    }

    fn write_tmp(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_fills_unknown() {
        let f = write_tmp(
            r#"{"text":"The food was good.","label":3,"concepts":{"food":"positive","noise":"negative"}}"#,
        );
        let recs = load_jsonl(f.path(), &spec(), Some(5)).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].concepts["service"], "unknown");
        assert_eq!(recs[0].concepts["ambiance"], "unknown");
        assert_eq!(recs[0].concepts["food"], "positive");
        assert_eq!(recs[0].state_indices(&spec()).unwrap(), vec![0, 2, 2, 1]);
    }

    #[test]
    fn load_empty_file() {
        let f = write_tmp("");
        assert!(load_jsonl(f.path(), &spec(), None).unwrap().is_empty());
    }

    #[test]
    fn states_are_case_insensitive() {
        let f = write_tmp(r#"{"text":"x","label":0,"concepts":{"Food":"Positive"}}"#);
        let recs = load_jsonl(f.path(), &spec(), None).unwrap();
        assert_eq!(recs[0].concepts["food"], "positive");
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let f = write_tmp("{\"text\":\"a\",\"label\":0}\n{not json}\n");
        match load_jsonl(f.path(), &spec(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp(r#"{"text":"a","label":0,"concepts":{"food":"great"}}"#);
        assert!(matches!(
            load_jsonl(f.path(), &spec(), None),
            Err(Error::Schema { line: 1, .. })
        ));
        let f = write_tmp(r#"{"text":"a","label":0,"concepts":{"parking":"positive"}}"#);
        assert!(matches!(
            load_jsonl(f.path(), &spec(), None),
            Err(Error::Schema { .. })
        ));
        let f = write_tmp(r#"{"text":"a","label":9}"#);
        assert!(matches!(
            load_jsonl(f.path(), &spec(), Some(5)),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let task = PlantedTask::restaurant(0.0).unwrap();
        let recs = task.generate(20, 3).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_jsonl(f.path(), &recs).unwrap();
        assert_eq!(load_jsonl(f.path(), &task.spec, Some(5)).unwrap(), recs);
    }

    #[test]
    fn split_sizes_and_partition() {
        let items: Vec<usize> = (0..10).collect();
        let (a, b, c) = split(&items, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).cloned().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split(&items, (0.8, 0.1, 0.1), 1).unwrap(), (a, b, c));
        assert!(matches!(
            split(&items, (0.8, 0.1, 0.2), 1),
            Err(Error::Config(_))
        ));
        assert!(split(&items, (1.0, 0.0, 0.0), 1).is_err());
    }

    #[test]
    fn restaurant_task_is_a_partition() {
        let task = PlantedTask::restaurant(0.0).unwrap();
        assert_eq!(task.n_classes(), 5);
        assert_eq!(
            task.rendered_rules().unwrap()[1],
            "NOT food AND NOT service AND ambiance"
        );
    }

    #[test]
    fn overlapping_rules_rejected() {
        let mut task = PlantedTask::restaurant(0.0).unwrap();
        task.class_rules[0] = RuleExpr::neg(0);
        assert!(matches!(task.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_labels_follow_rules() {
        let task = PlantedTask::restaurant(0.0).unwrap();
        for g in task.generate_with_truth(300, 9).unwrap() {
            assert_eq!(g.true_states, g.recorded_states);
            assert_eq!(task.label_of(&g.recorded_states).unwrap(), g.record.label);
            assert!(!g.record.text.is_empty());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let task = PlantedTask::restaurant(0.2).unwrap();
        assert_eq!(task.generate(50, 4).unwrap(), task.generate(50, 4).unwrap());
        assert_ne!(task.generate(50, 4).unwrap(), task.generate(50, 5).unwrap());
    }

    #[test]
    fn flip_rate_matches_noise() {
        let task = PlantedTask::restaurant(0.2).unwrap();
        let gen = task.generate_with_truth(10_000, 42).unwrap();
        let (mut flips, mut slots) = (0usize, 0usize);
        for g in &gen {
            assert_eq!(task.label_of(&g.true_states).unwrap(), g.record.label);
            for (a, b) in g.true_states.iter().zip(&g.recorded_states) {
                slots += 1;
                flips += usize::from(a != b);
            }
        }
        let rate = flips as f64 / slots as f64;
        assert!((rate - 0.2).abs() < 0.01, "flip rate {rate}");
    }

    #[test]
    fn literal_sets() {
        let task = PlantedTask::restaurant(0.0).unwrap();
        assert_eq!(task.literal_set(4), Some(vec![(0, false), (2, false)]));
        assert_eq!(
            task.literal_set(0),
            Some(vec![(0, true), (1, true), (2, true)])
        );
    }
}
