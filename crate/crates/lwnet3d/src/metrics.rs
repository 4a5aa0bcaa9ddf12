//! Classification metrics derived from the confusion matrix.

use thiserror::Error;

use crate::layers::Mode;
use crate::models::{ModelError, ModelGraph};
use crate::scalar::Scalar;
use crate::train::{argmax, LabeledSet, TrainError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty sample set")]
    EmptySampleSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// C x C counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), classes * classes);
        ConfusionMatrix { classes, counts }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ratio of correctly classified samples to all samples.
    pub fn overall_accuracy(&self) -> f64 {
        let trace: u64 = (0..self.classes).map(|i| self.count(i, i)).sum();
        trace as f64 / self.total() as f64
    }

    /// Mean per-class recall. Classes absent from the evaluated set are
    /// excluded; the number of excluded classes is returned alongside.
    pub fn average_accuracy(&self) -> (f64, usize) {
        let mut sum = 0.0;
        let mut present = 0usize;
        let mut absent = 0usize;
        for c in 0..self.classes {
            let row: u64 = (0..self.classes).map(|p| self.count(c, p)).sum();
            if row == 0 {
                absent += 1;
            } else {
                sum += self.count(c, c) as f64 / row as f64;
                present += 1;
            }
        }
        (if present > 0 { sum / present as f64 } else { f64::NAN }, absent)
    }

    /// Cohen's kappa: (p_o - p_e) / (1 - p_e) with p_e from the row and
    /// column marginals.
    pub fn kappa(&self) -> f64 {
        let total = self.total() as f64;
        let p_o = self.overall_accuracy();
        let mut p_e = 0.0;
        for c in 0..self.classes {
            let row: u64 = (0..self.classes).map(|p| self.count(c, p)).sum();
            let col: u64 = (0..self.classes).map(|t| self.count(t, c)).sum();
            p_e += row as f64 * col as f64;
        }
        p_e /= total * total;
        if (1.0 - p_e).abs() < f64::EPSILON {
            return 1.0;
        }
        (p_o - p_e) / (1.0 - p_e)
    }
}

pub fn confusion_from_predictions(
    truths: &[usize],
    predictions: &[usize],
    classes: usize,
) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truths.iter().zip(predictions) {
        cm.record(t, p);
    }
    cm
}

/// Full evaluation report for one split.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub absent_classes: usize,
    pub kappa: f64,
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let overall_accuracy = confusion.overall_accuracy();
        let (average_accuracy, absent_classes) = confusion.average_accuracy();
        let kappa = confusion.kappa();
        MetricsReport { confusion, overall_accuracy, average_accuracy, absent_classes, kappa }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("oa,{}\n", self.overall_accuracy));
        out.push_str(&format!("aa,{}\n", self.average_accuracy));
        out.push_str(&format!("kappa,{}\n", self.kappa));
        for t in 0..self.confusion.classes {
            for p in 0..self.confusion.classes {
                out.push_str(&format!("cm_{t}_{p},{}\n", self.confusion.count(t, p)));
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let c = self.confusion.classes;
        let mut out = String::from("confusion matrix (rows = truth):\n");
        for t in 0..c {
            let row: Vec<String> =
                (0..c).map(|p| format!("{:>7}", self.confusion.count(t, p))).collect();
            out.push_str(&format!("  {}\n", row.join(" ")));
        }
        out.push_str(&format!(
            "OA = {:.4}  AA = {:.4}  kappa = {:.4}\n",
            self.overall_accuracy, self.average_accuracy, self.kappa
        ));
        if self.absent_classes > 0 {
            out.push_str(&format!(
                "warning: {} class(es) absent from the evaluated set, excluded from AA\n",
                self.absent_classes
            ));
        }
        out
    }
}

/// Predict every sample in eval mode (ties broken toward the lowest
/// class index) and derive the metrics.
pub fn evaluate<T: Scalar>(
    model: &mut ModelGraph<T>,
    set: &LabeledSet<T>,
    batch_size: usize,
) -> Result<MetricsReport, MetricsError> {
    if set.is_empty() {
        return Err(MetricsError::EmptySampleSet);
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut predictions = Vec::with_capacity(set.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = set.batch(chunk).map_err(TrainError::from)?;
        let y = model.forward(&x, Mode::Eval)?;
        let c = y.shape()[1];
        for i in 0..chunk.len() {
            predictions.push(argmax(&y.data()[i * c..(i + 1) * c]));
        }
    }
    let cm = confusion_from_predictions(&set.labels, &predictions, model.num_classes);
    Ok(MetricsReport::from_confusion(cm))
}
