//! Fuzzy truth values, t-norm semantics and rule expressions.
//!
//! Two semantics are provided. [`Semantics::Product`] uses `a ∧ b = ab` and
//! `a ∨ b = a + b - ab`; [`Semantics::Godel`] uses `min`/`max`. Both share the
//! standard negation `¬a = 1 - a`. Rule text follows
//!
//! ```text
//! expr   := term (OR term)*
//! term   := factor (AND factor)*
//! factor := NOT factor | "(" expr ")" | IDENT
//! ```
//!
//! with every compound sub-expression parenthesized.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A truth degree in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TruthValue(f64);

impl TruthValue {
    pub const FALSE: TruthValue = TruthValue(0.0);
    pub const TRUE: TruthValue = TruthValue(1.0);

    pub fn new(v: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&v) {
            Ok(Self(v))
        } else {
            Err(Error::Input(format!("truth value {v} outside [0, 1]")))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn saturating(v: f64) -> Self {
        if v.is_nan() {
            Self(0.0)
        } else {
            Self(v.clamp(0.0, 1.0))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn not(self) -> Self {
        Self(1.0 - self.0)
    }

    pub fn and(self, other: Self, sem: Semantics) -> Self {
        match sem {
            Semantics::Product => Self(self.0 * other.0),
            Semantics::Godel => Self(self.0.min(other.0)),
        }
    }

    pub fn or(self, other: Self, sem: Semantics) -> Self {
        match sem {
            // Clamp guards the last ulp; a + b - ab never exceeds 1 in exact arithmetic.
            Semantics::Product => Self((self.0 + other.0 - self.0 * other.0).min(1.0)),
            Semantics::Godel => Self(self.0.max(other.0)),
        }
    }
}

impl From<TruthValue> for f64 {
    fn from(t: TruthValue) -> f64 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    #[default]
    Product,
    Godel,
}

/// Index into a declared concept set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConceptId(pub usize);

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "concept #{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RuleExpr {
    Literal { concept: ConceptId, negated: bool },
    And(Vec<RuleExpr>),
    Or(Vec<RuleExpr>),
    Not(Box<RuleExpr>),
}

impl RuleExpr {
    pub fn lit(concept: usize) -> Self {
        RuleExpr::Literal {
            concept: ConceptId(concept),
            negated: false,
        }
    }

    pub fn neg(concept: usize) -> Self {
        RuleExpr::Literal {
            concept: ConceptId(concept),
            negated: true,
        }
    }

    /// Concept ids referenced anywhere in the tree, sorted and deduplicated.
    pub fn concepts(&self) -> Vec<ConceptId> {
        let mut out = Vec::new();
        self.collect_concepts(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_concepts(&self, out: &mut Vec<ConceptId>) {
        match self {
            RuleExpr::Literal { concept, .. } => out.push(*concept),
            RuleExpr::And(cs) | RuleExpr::Or(cs) => {
                cs.iter().for_each(|c| c.collect_concepts(out))
            }
            RuleExpr::Not(c) => c.collect_concepts(out),
        }
    }

    /// Checks every literal against a concept set of size `n_concepts`.
    pub fn validate(&self, n_concepts: usize) -> Result<()> {
        match self.concepts().last() {
            Some(c) if c.0 >= n_concepts => Err(Error::Lookup(format!(
                "{c} in a set of {n_concepts} concepts"
            ))),
            _ => Ok(()),
        }
    }
}

/// Anything that can supply a truth value per concept.
pub trait Assignment {
    fn truth(&self, concept: ConceptId) -> Option<TruthValue>;
}

impl Assignment for HashMap<ConceptId, TruthValue> {
    fn truth(&self, concept: ConceptId) -> Option<TruthValue> {
        self.get(&concept).copied()
    }
}

/// Dense assignment indexed by concept id.
impl Assignment for [TruthValue] {
    fn truth(&self, concept: ConceptId) -> Option<TruthValue> {
        self.get(concept.0).copied()
    }
}

impl Assignment for Vec<TruthValue> {
    fn truth(&self, concept: ConceptId) -> Option<TruthValue> {
        self.as_slice().truth(concept)
    }
}

/// Evaluates `expr` under `sem`. Empty `And` is 1 and empty `Or` is 0.
pub fn eval_rule<A>(expr: &RuleExpr, assignment: &A, sem: Semantics) -> Result<TruthValue>
where
    A: Assignment + ?Sized,
{
    Ok(match expr {
        RuleExpr::Literal { concept, negated } => {
            let v = assignment
                .truth(*concept)
                .ok_or_else(|| Error::Lookup(concept.to_string()))?;
            if *negated {
                v.not()
            } else {
                v
            }
        }
        RuleExpr::And(children) => {
            let mut acc = TruthValue::TRUE;
            for c in children {
                acc = acc.and(eval_rule(c, assignment, sem)?, sem);
            }
            acc
        }
        RuleExpr::Or(children) => {
            let mut acc = TruthValue::FALSE;
            for c in children {
                acc = acc.or(eval_rule(c, assignment, sem)?, sem);
            }
            acc
        }
        RuleExpr::Not(child) => eval_rule(child, assignment, sem)?.not(),
    })
}

/// Anything that can name a concept.
pub trait ConceptNames {
    fn name(&self, concept: ConceptId) -> Option<&str>;
}

impl ConceptNames for HashMap<ConceptId, String> {
    fn name(&self, concept: ConceptId) -> Option<&str> {
        self.get(&concept).map(String::as_str)
    }
}

impl ConceptNames for [String] {
    fn name(&self, concept: ConceptId) -> Option<&str> {
        self.get(concept.0).map(String::as_str)
    }
}

impl ConceptNames for Vec<String> {
    fn name(&self, concept: ConceptId) -> Option<&str> {
        self.as_slice().name(concept)
    }
}

/// Renders `expr` as infix text, e.g. `(NOT red AND round) OR crisp`.
pub fn render_rule<N>(expr: &RuleExpr, names: &N) -> Result<String>
where
    N: ConceptNames + ?Sized,
{
    render(expr, names, true)
}

fn render<N>(expr: &RuleExpr, names: &N, top: bool) -> Result<String>
where
    N: ConceptNames + ?Sized,
{
    let wrap = |s: String| if top { s } else { format!("({s})") };
    Ok(match expr {
        RuleExpr::Literal { concept, negated } => {
            let name = names
                .name(*concept)
                .ok_or_else(|| Error::Lookup(concept.to_string()))?;
            if *negated {
                format!("NOT {name}")
            } else {
                name.to_string()
            }
        }
        RuleExpr::And(cs) if cs.is_empty() => "TRUE".to_string(),
        RuleExpr::Or(cs) if cs.is_empty() => "FALSE".to_string(),
        RuleExpr::And(cs) | RuleExpr::Or(cs) if cs.len() == 1 => render(&cs[0], names, top)?,
        RuleExpr::And(cs) => wrap(join(cs, names, " AND ")?),
        RuleExpr::Or(cs) => wrap(join(cs, names, " OR ")?),
        RuleExpr::Not(c) => format!("NOT {}", render(c, names, false)?),
    })
}

fn join<N>(children: &[RuleExpr], names: &N, sep: &str) -> Result<String>
where
    N: ConceptNames + ?Sized,
{
    let parts = children
        .iter()
        .map(|c| render(c, names, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.join(sep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RED: usize = 0;
    const ROUND: usize = 1;
    const CRISP: usize = 2;

    fn apple() -> RuleExpr {
        RuleExpr::Or(vec![
            RuleExpr::And(vec![RuleExpr::neg(RED), RuleExpr::lit(ROUND)]),
            RuleExpr::lit(CRISP),
        ])
    }

    fn tv(v: &[f64]) -> Vec<TruthValue> {
        v.iter().map(|&x| TruthValue::new(x).unwrap()).collect()
    }

    fn names() -> Vec<String> {
        ["red", "round", "crisp"].map(String::from).to_vec()
    }

    #[test]
    fn apple_product_is_088() {
        let v = eval_rule(&apple(), &tv(&[0.4, 1.0, 0.7]), Semantics::Product).unwrap();
        assert!((v.get() - 0.88).abs() < 1e-12);
    }

    #[test]
    fn apple_all_zero() {
        let v = eval_rule(&apple(), &tv(&[0.0, 0.0, 0.0]), Semantics::Product).unwrap();
        assert_eq!(v.get(), 0.0);
    }

    #[test]
    fn apple_godel() {
        // max(min(1 - 0.4, 1), 0.7) = max(0.6, 0.7)
        let v = eval_rule(&apple(), &tv(&[0.4, 1.0, 0.7]), Semantics::Godel).unwrap();
        assert_eq!(v.get(), 0.7);
    }

    #[test]
    fn missing_concept_is_named() {
        let err = eval_rule(&apple(), &tv(&[0.4, 1.0]), Semantics::Product).unwrap_err();
        assert!(err.to_string().contains("concept #2"), "{err}");

        let mut map = HashMap::new();
        map.insert(ConceptId(0), TruthValue::TRUE);
        assert!(matches!(
            eval_rule(&RuleExpr::lit(1), &map, Semantics::Godel),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_rule(&RuleExpr::neg(RED), &names()).unwrap(), "NOT red");
        assert_eq!(
            render_rule(&apple(), &names()).unwrap(),
            "(NOT red AND round) OR crisp"
        );
        assert_eq!(render_rule(&RuleExpr::And(vec![]), &names()).unwrap(), "TRUE");
        assert_eq!(render_rule(&RuleExpr::Or(vec![]), &names()).unwrap(), "FALSE");
        let nested = RuleExpr::Not(Box::new(RuleExpr::And(vec![
            RuleExpr::lit(RED),
            RuleExpr::lit(CRISP),
        ])));
        assert_eq!(render_rule(&nested, &names()).unwrap(), "NOT (red AND crisp)");
        assert!(matches!(
            render_rule(&RuleExpr::lit(7), &names()),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn empty_identities() {
        let a = tv(&[]);
        assert_eq!(
            eval_rule(&RuleExpr::And(vec![]), &a, Semantics::Godel).unwrap(),
            TruthValue::TRUE
        );
        assert_eq!(
            eval_rule(&RuleExpr::Or(vec![]), &a, Semantics::Product).unwrap(),
            TruthValue::FALSE
        );
    }

    #[test]
    fn truth_value_bounds() {
        assert!(TruthValue::new(1.2).is_err());
        assert!(TruthValue::new(-0.1).is_err());
        assert_eq!(TruthValue::saturating(f64::NAN).get(), 0.0);
        assert_eq!(TruthValue::saturating(3.0).get(), 1.0);
    }

    #[test]
    fn validate_checks_ids() {
        assert!(apple().validate(3).is_ok());
        assert!(apple().validate(2).is_err());
    }

    fn arb_expr() -> impl Strategy<Value = RuleExpr> {
        let leaf = (0usize..4, any::<bool>()).prop_map(|(c, n)| RuleExpr::Literal {
            concept: ConceptId(c),
            negated: n,
        });
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(RuleExpr::And),
                prop::collection::vec(inner.clone(), 0..4).prop_map(RuleExpr::Or),
                inner.prop_map(|e| RuleExpr::Not(Box::new(e))),
            ]
        })
    }

    proptest! {
        #[test]
        fn closure_in_unit_interval(
            expr in arb_expr(),
            vals in prop::collection::vec(0.0f64..=1.0, 4),
            godel in any::<bool>(),
        ) {
            let sem = if godel { Semantics::Godel } else { Semantics::Product };
            let v = eval_rule(&expr, &tv(&vals), sem).unwrap().get();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn godel_and_product_agree_on_crisp_inputs(
            expr in arb_expr(),
            bits in prop::collection::vec(any::<bool>(), 4),
        ) {
            let vals: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let p = eval_rule(&expr, &tv(&vals), Semantics::Product).unwrap();
            let g = eval_rule(&expr, &tv(&vals), Semantics::Godel).unwrap();
            prop_assert_eq!(p, g);
        }
    }
}
