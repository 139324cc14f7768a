//! Confusion-matrix metrics with macro averaging.

use std::fmt::Write as _;

use crate::data::{EcgDataset, Split};
use crate::error::{Error, Result};
use crate::model::ScdnnModel;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when any of the three ratios had a zero denominator and was reported as 0.
    pub zero_denominator: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let n = confusion.len();
        if n == 0 || confusion.iter().any(|row| row.len() != n) {
            return Err(Error::invalid("confusion matrix must be square and non-empty"));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::invalid("confusion matrix is empty"));
        }
        let mut per_class = Vec::with_capacity(n);
        for c in 0..n {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let mut flag = false;
            let precision = ratio(tp, predicted as f64, &mut flag);
            let recall = ratio(tp, support as f64, &mut flag);
            let f1 = ratio(2.0 * precision * recall, precision + recall, &mut flag);
            per_class.push(ClassMetrics {
                precision,
                recall,
                f1,
                support,
                zero_denominator: flag,
            });
        }
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n as f64;
        let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
        Ok(MetricsReport {
            accuracy: correct as f64 / total as f64,
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid("truth and prediction lengths differ"));
        }
        let mut confusion = vec![vec![0; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::invalid(format!("class index out of range: {t} / {p}")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    /// Classes whose metrics used the zero-denominator convention.
    pub fn zero_denominator_classes(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&c| self.per_class[c].zero_denominator)
            .collect()
    }

    pub fn to_text(&self, class_names: &[String]) -> String {
        let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
        let mut out = String::new();
        let _ = writeln!(out, "accuracy        {:.4}", self.accuracy);
        let _ = writeln!(out, "macro precision {:.4}", self.macro_precision);
        let _ = writeln!(out, "macro recall    {:.4}", self.macro_recall);
        let _ = writeln!(out, "macro f1        {:.4}", self.macro_f1);
        let _ = writeln!(
            out,
            "\n{:<16} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f1", "support"
        );
        for (c, m) in self.per_class.iter().enumerate() {
            let mark = if m.zero_denominator { " *" } else { "" };
            let _ = writeln!(
                out,
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>8}{mark}",
                name(c),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        if self.per_class.iter().any(|m| m.zero_denominator) {
            out.push_str("* zero denominator, reported as 0\n");
        }
        out.push_str("\nconfusion (rows: true, columns: predicted)\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            let _ = writeln!(out, "{}", cells.join(""));
        }
        out
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy={}", self.accuracy);
        let _ = writeln!(out, "macro_precision={}", self.macro_precision);
        let _ = writeln!(out, "macro_recall={}", self.macro_recall);
        let _ = writeln!(out, "macro_f1={}", self.macro_f1);
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(out, "class{c}.precision={}", m.precision);
            let _ = writeln!(out, "class{c}.recall={}", m.recall);
            let _ = writeln!(out, "class{c}.f1={}", m.f1);
            let _ = writeln!(out, "class{c}.support={}", m.support);
            let _ = writeln!(out, "class{c}.zero_denominator={}", m.zero_denominator);
        }
        let rows: Vec<String> = self
            .confusion
            .iter()
            .map(|r| r.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
            .collect();
        let _ = writeln!(out, "confusion={}", rows.join(";"));
        out
    }
}

/// Index of the largest value in each row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let n = logits.shape().last().copied().unwrap_or(0);
    logits
        .data()
        .chunks(n.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Eval-mode predictions for the records at `indices`.
pub fn predict_indices(model: &ScdnnModel, dataset: &EcgDataset, indices: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, _) = dataset.batch(chunk)?;
        out.extend(argmax_rows(&model.predict(&x)?));
    }
    Ok(out)
}

pub fn evaluate(model: &ScdnnModel, dataset: &EcgDataset, split: Split) -> Result<MetricsReport> {
    let indices = dataset.indices(split);
    if indices.is_empty() {
        return Err(Error::invalid(format!("split {} is empty", split.as_str())));
    }
    if dataset.n_classes() != model.config.n_classes {
        return Err(Error::invalid(format!(
            "model has {} classes, dataset vocabulary has {}",
            model.config.n_classes,
            dataset.n_classes()
        )));
    }
    let predicted = predict_indices(model, dataset, &indices)?;
    let truth: Vec<usize> = indices.iter().map(|&i| dataset.records[i].label).collect();
    MetricsReport::from_predictions(&truth, &predicted, dataset.n_classes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn two_class_hand_example() {
        let r = MetricsReport::from_confusion(vec![vec![2, 0], vec![1, 1]]).unwrap();
        close(r.accuracy, 0.75);
        close(r.macro_precision, 5.0 / 6.0);
        close(r.macro_recall, 0.75);
        close(r.macro_f1, 11.0 / 15.0);
        assert!(r.zero_denominator_classes().is_empty());
    }

    #[test]
    fn single_predicted_class_uses_zero_rule() {
        let r = MetricsReport::from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        close(r.accuracy, 0.5);
        close(r.macro_f1, 1.0 / 3.0);
        assert_eq!(r.zero_denominator_classes(), vec![1]);
    }

    #[test]
    fn perfect_predictions() {
        let r = MetricsReport::from_predictions(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        for v in [r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 3.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }

    #[test]
    fn report_is_internally_consistent() {
        let r = MetricsReport::from_confusion(vec![vec![5, 1, 0], vec![2, 3, 1], vec![0, 0, 4]]).unwrap();
        let supports: Vec<usize> = r.per_class.iter().map(|m| m.support).collect();
        assert_eq!(supports, vec![6, 6, 4]);
        close(r.accuracy, 12.0 / 16.0);
        close(r.macro_f1, r.per_class.iter().map(|m| m.f1).sum::<f64>() / 3.0);
        let text = r.to_text(&[]);
        assert!(text.contains("macro f1") && text.contains("confusion"));
        assert!(r.to_key_values().contains("confusion=5,1,0;2,3,1;0,0,4"));
    }
}
