use serde::{Deserialize, Serialize};

use super::features::{Dataset, OutcomeClass, N_CLASSES};
use super::forest::ReadinessModel;
use super::ReadinessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Per class; 0 when the class is never predicted.
    pub precision: [f64; N_CLASSES],
    /// Per class; 0 when the class never occurs.
    pub recall: [f64; N_CLASSES],
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
}

pub fn metrics_from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Metrics, ReadinessError> {
    if truth.is_empty() {
        return Err(ReadinessError::EmptyData);
    }
    if truth.len() != predicted.len() {
        return Err(ReadinessError::Params("truth and predictions differ in length".into()));
    }
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= N_CLASSES || p >= N_CLASSES {
            return Err(ReadinessError::Params(format!("class index out of range: {t}, {p}")));
        }
        confusion[t][p] += 1;
    }
    let n = truth.len();
    let correct: usize = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    let mut precision = [0.0; N_CLASSES];
    let mut recall = [0.0; N_CLASSES];
    for c in 0..N_CLASSES {
        let col: usize = (0..N_CLASSES).map(|r| confusion[r][c]).sum();
        let row: usize = confusion[c].iter().sum();
        if col > 0 {
            precision[c] = confusion[c][c] as f64 / col as f64;
        }
        if row > 0 {
            recall[c] = confusion[c][c] as f64 / row as f64;
        }
    }
    Ok(Metrics { n, accuracy: correct as f64 / n as f64, precision, recall, confusion })
}

pub fn evaluate(model: &ReadinessModel, test: &Dataset) -> Result<Metrics, ReadinessError> {
    if test.schema != model.schema {
        return Err(ReadinessError::Schema("test data schema differs from the model's".into()));
    }
    let predicted: Vec<usize> = test.rows.iter().map(|r| model.predict_row(r).class.index()).collect();
    metrics_from_predictions(&test.labels, &predicted)
}

impl Metrics {
    /// Confusion matrix as CSV with a `true_class` column and one column per
    /// predicted class.
    pub fn write_confusion_csv(&self, writer: impl std::io::Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["true_class".to_string()];
        header.extend(OutcomeClass::ALL.iter().map(|c| format!("pred_{}", c.name())));
        w.write_record(&header)?;
        for c in OutcomeClass::ALL {
            let mut row = vec![c.name().to_string()];
            row.extend(self.confusion[c.index()].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
