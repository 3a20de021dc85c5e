//! Accuracy and macro F1 from a confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[gold][pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_pairs(n_classes: usize, pred: &[usize], gold: &[usize]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::Input(format!(
                "{} predictions for {} gold labels",
                pred.len(),
                gold.len()
            )));
        }
        let mut m = Self::new(n_classes);
        for (&p, &g) in pred.iter().zip(gold) {
            m.record(p, g)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, pred: usize, gold: usize) -> Result<()> {
        let n = self.counts.len();
        if pred >= n || gold >= n {
            return Err(Error::Index(format!(
                "class pair (pred {pred}, gold {gold}) outside [0, {n})"
            )));
        }
        self.counts[gold][pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, gold: usize, pred: usize) -> usize {
        self.counts[gold][pred]
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: usize = (0..self.n_classes()).map(|c| self.counts[c][c]).sum();
        hits as f64 / total as f64
    }

    /// Per-class F1; a class with no gold and no predicted items scores 0.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class] as f64;
        let gold: usize = self.counts[class].iter().sum();
        let pred: usize = self.counts.iter().map(|row| row[class]).sum();
        let denom = (gold + pred) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }

    /// Unweighted mean of per-class F1 over all declared classes.
    pub fn macro_f1(&self) -> f64 {
        let n = self.n_classes();
        if n == 0 {
            return 0.0;
        }
        (0..n).map(|c| self.f1(c)).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub accuracy: f64,
    pub macro_f1: f64,
}

impl From<&ConfusionMatrix> for Score {
    fn from(m: &ConfusionMatrix) -> Self {
        Self {
            accuracy: m.accuracy(),
            macro_f1: m.macro_f1(),
        }
    }
}

/// Output (fused head), concept and reasoning level scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub output: Score,
    pub concept: Score,
    pub reasoning: Score,
}

impl MetricsReport {
    pub const HEADER: [&'static str; 6] = ["O-Acc", "O-F1", "C-Acc", "C-F1", "R-Acc", "R-F1"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.output.accuracy,
            self.output.macro_f1,
            self.concept.accuracy,
            self.concept.macro_f1,
            self.reasoning.accuracy,
            self.reasoning.macro_f1,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;
    use rand::Rng;

    #[test]
    fn all_one_class_on_balanced_pair() {
        let m = ConfusionMatrix::from_pairs(2, &[1, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(m.accuracy(), 0.5);
        assert!((m.macro_f1() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let m = ConfusionMatrix::from_pairs(3, &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(m.accuracy(), 1.0);
        assert_eq!(m.macro_f1(), 1.0);
    }

    #[test]
    fn bad_input() {
        assert!(ConfusionMatrix::from_pairs(2, &[0], &[0, 1]).is_err());
        assert!(matches!(
            ConfusionMatrix::from_pairs(2, &[2], &[0]),
            Err(Error::Index(_))
        ));
    }

    // Counts straight from the pairs with precision/recall, no matrix.
    fn oracle(n: usize, pred: &[usize], gold: &[usize]) -> (f64, f64) {
        let acc = pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / pred.len() as f64;
        let mut f1s = 0.0;
        for c in 0..n {
            let tp = pred.iter().zip(gold).filter(|(p, g)| **p == c && **g == c).count() as f64;
            let fp = pred.iter().zip(gold).filter(|(p, g)| **p == c && **g != c).count() as f64;
            let fn_ = pred.iter().zip(gold).filter(|(p, g)| **p != c && **g == c).count() as f64;
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            if precision + recall > 0.0 {
                f1s += 2.0 * precision * recall / (precision + recall);
            }
        }
        (acc, f1s / n as f64)
    }

    #[test]
    fn matches_oracle_on_random_pairs() {
        let mut rng = stream(11, "metrics");
        for trial in 0..20 {
            let n = 2 + trial % 4;
            let pred: Vec<usize> = (0..50).map(|_| rng.gen_range(0..n)).collect();
            let gold: Vec<usize> = (0..50).map(|_| rng.gen_range(0..n)).collect();
            let m = ConfusionMatrix::from_pairs(n, &pred, &gold).unwrap();
            let (acc, f1) = oracle(n, &pred, &gold);
            assert!((m.accuracy() - acc).abs() < 1e-12);
            assert!((m.macro_f1() - f1).abs() < 1e-12);
        }
    }
}
