//! Confusion-matrix metrics and multi-run aggregation. Fake is the positive
//! class throughout.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::schema::Label;
use crate::error::{Error, Result};

pub const CONFIDENCE_LEVELS: [f64; 3] = [0.90, 0.95, 0.98];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(predicted: &[Label], actual: &[Label]) -> Result<Confusion> {
    if predicted.len() != actual.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let mut c = Confusion::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p == Label::Fake, a == Label::Fake) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_examples: usize,
    pub confusion: Confusion,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &Confusion) -> Result<MetricsReport> {
    let total = c.total();
    if total == 0 {
        return Err(Error::InvalidArgument("empty confusion matrix".into()));
    }
    let mut zero_division = false;
    let precision = ratio(c.tp, c.tp + c.fp, &mut zero_division);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut zero_division);
    let f1 = if precision + recall == 0.0 {
        zero_division = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport {
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
        n_examples: total,
        confusion: *c,
        zero_division,
    })
}

pub const METRIC_NAMES: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

impl MetricsReport {
    pub fn values(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    /// `(confidence, half-width)` pairs.
    pub half_widths: Vec<(f64, f64)>,
}

impl MetricSummary {
    pub fn half_width(&self, confidence: f64) -> Option<f64> {
        self.half_widths
            .iter()
            .find(|(c, _)| (c - confidence).abs() < 1e-12)
            .map(|&(_, h)| h)
    }

    /// `mean ± half-width` in the tabular style, e.g. `0.9234 ± 0.029`.
    pub fn row(&self, confidence: f64) -> Option<String> {
        self.half_width(confidence).map(|h| format_row(self.mean, h))
    }
}

pub fn format_row(mean: f64, half_width: f64) -> String {
    format!("{mean:.4} ± {half_width:.3}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub n_runs: usize,
    pub accuracy: MetricSummary,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub f1: MetricSummary,
}

impl RunAggregate {
    pub fn summaries(&self) -> [(&'static str, &MetricSummary); 4] {
        [
            ("accuracy", &self.accuracy),
            ("precision", &self.precision),
            ("recall", &self.recall),
            ("f1", &self.f1),
        ]
    }
}

fn summarize(values: &[f64], confidences: &[f64]) -> Result<MetricSummary> {
    let n = values.len() as f64;
    // shifted by the first value so identical runs give exactly zero spread
    let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let half_widths = confidences
        .iter()
        .map(|&c| (c, t.inverse_cdf(0.5 + c / 2.0) * std / n.sqrt()))
        .collect();
    Ok(MetricSummary { mean, std, half_widths })
}

/// Mean, sample standard deviation and Student-t interval half-widths of
/// each metric across runs.
pub fn aggregate_runs(reports: &[MetricsReport], confidences: &[f64]) -> Result<RunAggregate> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument("aggregation needs at least two runs".into()));
    }
    if confidences.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
        return Err(Error::InvalidArgument("confidence levels must lie in (0, 1)".into()));
    }
    let col = |i: usize| -> Vec<f64> { reports.iter().map(|r| r.values()[i]).collect() };
    Ok(RunAggregate {
        n_runs: reports.len(),
        accuracy: summarize(&col(0), confidences)?,
        precision: summarize(&col(1), confidences)?,
        recall: summarize(&col(2), confidences)?,
        f1: summarize(&col(3), confidences)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Fake, True};

    fn cm(tp: usize, tn: usize, fp: usize, fn_: usize) -> Confusion {
        Confusion { tp, tn, fp, fn_ }
    }

    #[test]
    fn confusion_examples() {
        let mut p = vec![Fake; 5];
        p.extend([True; 5]);
        assert_eq!(confusion(&p, &p).unwrap(), cm(5, 5, 0, 0));
        assert_eq!(confusion(&[Fake; 3], &[True; 3]).unwrap(), cm(0, 0, 3, 0));
        assert!(confusion(&[], &[]).is_err());
        assert!(confusion(&[Fake], &[]).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&cm(1, 1, 1, 1)).unwrap();
        assert_eq!(m.values(), [0.5; 4]);
        assert_eq!(metrics(&cm(3, 4, 0, 0)).unwrap().values(), [1.0; 4]);
        let m = metrics(&cm(9, 8, 1, 2)).unwrap();
        assert!((m.accuracy - 0.85).abs() < 1e-15);
        assert!((m.precision - 0.9).abs() < 1e-15);
        assert!((m.recall - 9.0 / 11.0).abs() < 1e-15);
        assert!((m.f1 - 0.857_142_857).abs() < 1e-9);
        let none = metrics(&cm(0, 5, 0, 0)).unwrap();
        assert_eq!(none.f1, 0.0);
        assert!(none.zero_division);
        assert!(metrics(&cm(0, 0, 0, 0)).is_err());
    }

    fn report(acc: f64) -> MetricsReport {
        MetricsReport {
            accuracy: acc,
            precision: acc,
            recall: acc,
            f1: acc,
            n_examples: 10,
            confusion: Confusion::default(),
            zero_division: false,
        }
    }

    #[test]
    fn aggregate_examples() {
        let same = aggregate_runs(&[report(0.8); 4], &CONFIDENCE_LEVELS).unwrap();
        assert_eq!(same.accuracy.std, 0.0);
        assert!(same.accuracy.half_widths.iter().all(|&(_, h)| h == 0.0));

        let two = aggregate_runs(&[report(0.9), report(1.0)], &CONFIDENCE_LEVELS).unwrap();
        assert!((two.accuracy.mean - 0.95).abs() < 1e-15);
        assert!((two.accuracy.std - 0.05 * 2f64.sqrt()).abs() < 1e-15);
        // t quantile with one degree of freedom at 0.95 is 12.7062
        let hw = two.accuracy.half_width(0.95).unwrap();
        assert!((hw - 12.706_204_736 * two.accuracy.std / 2f64.sqrt()).abs() < 1e-6);
        let h: Vec<f64> = two.accuracy.half_widths.iter().map(|p| p.1).collect();
        assert!(h[0] < h[1] && h[1] < h[2]);
        assert!(aggregate_runs(&[report(0.9)], &CONFIDENCE_LEVELS).is_err());
    }

    #[test]
    fn row_format() {
        assert_eq!(format_row(0.92341, 0.0291), "0.9234 ± 0.029");
    }
}
