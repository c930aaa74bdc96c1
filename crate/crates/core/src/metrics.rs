//! Confusion matrices and per-class precision / recall / F1 reports.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        Self {
            class_names,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(class_names: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = class_names.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!("confusion matrix must be {k}×{k}")));
        }
        Ok(Self { class_names, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// True samples of class `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

/// `counts[i][j] = #{t : labels[t] = i, predictions[t] = j}`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(default_names(num_classes));
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class index {} out of range for {num_classes} classes",
                p.max(l)
            )));
        }
        cm.counts[l][p] += 1;
    }
    Ok(cm)
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (v * scale).round() / scale
}

fn four_decimals<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_to(*v, 4))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_name: String,
    #[serde(serialize_with = "four_decimals")]
    pub precision: f64,
    #[serde(serialize_with = "four_decimals")]
    pub recall: f64,
    #[serde(serialize_with = "four_decimals")]
    pub f1: f64,
    pub support: u64,
    /// Set when a precision or recall denominator was zero and 0 was substituted.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    #[serde(serialize_with = "four_decimals")]
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
}

/// Per class `c`: TP = counts[c][c], FP = column sum − TP, FN = row sum − TP;
/// precision = TP/(TP+FP), recall = TP/(TP+FN), F1 their harmonic mean.
/// Overall accuracy is trace / total.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("classification report of an empty confusion matrix".into()));
    }
    let classes = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted = cm.predicted(c);
            let support = cm.support(c);
            let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class_name: cm.class_names[c].clone(),
                precision,
                recall,
                f1,
                support,
                zero_division: predicted == 0 || support == 0,
            }
        })
        .collect();
    let correct = cm.trace();
    Ok(ClassificationReport {
        classes,
        accuracy: correct as f64 / total as f64,
        correct,
        total,
    })
}

impl ClassificationReport {
    pub fn has_zero_division(&self) -> bool {
        self.classes.iter().any(|c| c.zero_division)
    }

    /// Plain-text table with two-decimal metrics; overall accuracy sits on the middle row.
    pub fn to_table(&self) -> String {
        let name_width = self
            .classes
            .iter()
            .map(|c| c.class_name.chars().count())
            .max()
            .unwrap_or(0)
            .max("Classes".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_width$}  {:>8}  {:>9}  {:>6}  {:>8}  {:>7}",
            "Classes", "Accuracy", "Precision", "Recall", "F1-score", "Support"
        );
        let middle = self.classes.len().saturating_sub(1) / 2;
        for (i, c) in self.classes.iter().enumerate() {
            let acc = if i == middle {
                format!("{:.2}", round_to(self.accuracy, 2))
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{:<name_width$}  {:>8}  {:>9.2}  {:>6.2}  {:>8.2}  {:>7}",
                c.class_name,
                acc,
                round_to(c.precision, 2),
                round_to(c.recall, 2),
                round_to(c.f1, 2),
                c.support
            );
        }
        let _ = writeln!(
            out,
            "\noverall accuracy {:.4} ({}/{})",
            round_to(self.accuracy, 4),
            self.correct,
            self.total
        );
        if self.has_zero_division() {
            let _ = writeln!(out, "warning: some precision/recall values had a zero denominator and were set to 0");
        }
        out
    }
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

impl ConfusionMatrix {
    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "{} class names for a {}-class matrix",
                names.len(),
                self.num_classes()
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn to_table(&self) -> String {
        let w = self
            .class_names
            .iter()
            .map(|n| n.chars().count())
            .max()
            .unwrap_or(0)
            .max(8);
        let mut out = format!("{:<w$}", "true\\pred");
        for n in &self.class_names {
            let _ = write!(out, "  {n:>w$}");
        }
        out.push('\n');
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            let _ = write!(out, "{n:<w$}");
            for v in row {
                let _ = write!(out, "  {v:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [0, 1, 2, 2, 1, 0];
        let cm = confusion_matrix(&labels, &labels, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.counts[i][j], if i == j { 2 } else { 0 });
            }
        }
        let r = classification_report(&cm).unwrap();
        assert!(r.classes.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn empty_input_gives_zero_matrix() {
        let cm = confusion_matrix(&[], &[], 3).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(classification_report(&cm).is_err());
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(confusion_matrix(&[0, 1], &[0], 2).is_err());
        assert!(confusion_matrix(&[3], &[0], 2).is_err());
    }

    #[test]
    fn single_class_all_correct() {
        let cm = confusion_matrix(&[0, 0, 0], &[0, 0, 0], 1).unwrap();
        let r = classification_report(&cm).unwrap();
        let c = &r.classes[0];
        assert_eq!((c.precision, c.recall, c.f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn absent_class_is_flagged_not_nan() {
        // class 2 never occurs and is never predicted
        let cm = confusion_matrix(&[0, 1, 1], &[0, 1, 0], 3).unwrap();
        let r = classification_report(&cm).unwrap();
        assert!(r.classes[2].zero_division);
        assert_eq!(r.classes[2].precision, 0.0);
        assert_eq!(r.classes[2].recall, 0.0);
        assert!(r.has_zero_division());
        assert!(r.to_table().contains("warning"));
    }

    #[test]
    fn json_rounds_to_four_decimals() {
        let cm = ConfusionMatrix::from_counts(default_names(2), vec![vec![2, 1], vec![0, 0]]).unwrap();
        let r = classification_report(&cm).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"accuracy\":0.6667"), "{json}");
    }
}
