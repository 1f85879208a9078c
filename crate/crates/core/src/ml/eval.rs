use serde::{Deserialize, Serialize};

use super::dataset::ClientDataset;
use super::model::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Accuracy of a model on one evaluation dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub overall_accuracy: f64,
    /// `None` for classes absent from the evaluation data.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub eval_dataset_id: String,
    pub num_eval_samples: usize,
}

impl QualityReport {
    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        self.per_class_accuracy.get(class).copied().flatten()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict<T: Scalar>(model: &Model<T>, data: &ClientDataset<T>) -> Result<Vec<usize>> {
    let logits = model.forward(data.features())?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

pub fn evaluate<T: Scalar>(model: &Model<T>, data: &ClientDataset<T>) -> Result<QualityReport> {
    evaluate_named(model, data, "")
}

pub fn evaluate_named<T: Scalar>(model: &Model<T>, data: &ClientDataset<T>, dataset_id: &str) -> Result<QualityReport> {
    if data.is_empty() {
        return Err(Error::Precondition("evaluation data is empty".into()));
    }
    if data.num_classes() != model.arch().num_classes {
        return Err(Error::Shape(format!(
            "dataset has {} classes, model has {}",
            data.num_classes(),
            model.arch().num_classes
        )));
    }
    let predictions = predict(model, data)?;
    Ok(report_from_predictions(&predictions, data.labels(), data.num_classes(), dataset_id))
}

pub(crate) fn report_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
    dataset_id: &str,
) -> QualityReport {
    let mut correct = vec![0usize; num_classes];
    let mut count = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        count[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    let total_correct: usize = correct.iter().sum();
    QualityReport {
        overall_accuracy: total_correct as f64 / labels.len() as f64,
        per_class_accuracy: correct
            .iter()
            .zip(&count)
            .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
            .collect(),
        eval_dataset_id: dataset_id.to_string(),
        num_eval_samples: labels.len(),
    }
}
