use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// K x K counts, rows = true class, columns = predicted class (zero-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(invalid!("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { k, counts: rows.iter().flatten().copied().collect() })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(invalid!("cannot merge {}-class and {}-class matrices", self.k, other.k));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.k).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }
}

/// Overall accuracy, average accuracy, Cohen's kappa and F1 scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub f1_macro: f64,
    pub per_class_recall: Vec<f64>,
    pub per_class_precision: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    /// Classes with at least one true sample; AA and macro F1 average over these.
    pub present: Vec<bool>,
}

pub fn metrics_from_confusion(c: &ConfusionMatrix) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(invalid!("metrics of an empty confusion matrix"));
    }
    let k = c.num_classes();
    let n = total as f64;
    let trace: u64 = (0..k).map(|i| c.get(i, i)).sum();
    let oa = trace as f64 / n;

    let mut recall = vec![0.0; k];
    let mut precision = vec![0.0; k];
    let mut f1 = vec![0.0; k];
    let mut present = vec![false; k];
    let mut p_e = 0.0;
    for i in 0..k {
        let row = c.row_sum(i);
        let col = c.col_sum(i);
        let tp = c.get(i, i) as f64;
        present[i] = row > 0;
        if row > 0 {
            recall[i] = tp / row as f64;
        }
        if col > 0 {
            precision[i] = tp / col as f64;
        }
        let pr = precision[i] + recall[i];
        if pr > 0.0 {
            f1[i] = 2.0 * precision[i] * recall[i] / pr;
        }
        p_e += (row as f64 / n) * (col as f64 / n);
    }
    let n_present = present.iter().filter(|&&p| p).count() as f64;
    let mean_present = |v: &[f64]| v.iter().zip(&present).filter(|(_, &p)| p).map(|(x, _)| x).sum::<f64>() / n_present;
    let aa = mean_present(&recall);
    let f1_macro = mean_present(&f1);
    let kappa = if p_e < 1.0 {
        (oa - p_e) / (1.0 - p_e)
    } else if oa >= 1.0 {
        // a single class, perfectly predicted
        1.0
    } else {
        0.0
    };
    Ok(Metrics { oa, aa, kappa, f1_macro, per_class_recall: recall, per_class_precision: precision, per_class_f1: f1, present })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics formatted as percentages with two decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentReport {
    pub oa: String,
    pub aa: String,
    pub kappa: String,
    pub f1_macro: String,
}

/// Serialized form of [`Metrics`] with the confusion counts behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub f1_macro: f64,
    /// F1 aggregation over classes present in the evaluated set.
    pub f1_aggregation: String,
    pub per_class: Vec<ClassReport>,
    pub confusion: Vec<Vec<u64>>,
    pub percent: PercentReport,
}

impl MetricsReport {
    pub fn new(m: &Metrics, c: &ConfusionMatrix, class_names: &[String]) -> Self {
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        let per_class = (0..c.num_classes())
            .map(|i| ClassReport {
                name: class_names.get(i).cloned().unwrap_or_else(|| format!("class_{}", i + 1)),
                recall: m.per_class_recall[i],
                f1: m.per_class_f1[i],
            })
            .collect();
        MetricsReport {
            oa: m.oa,
            aa: m.aa,
            kappa: m.kappa,
            f1_macro: m.f1_macro,
            f1_aggregation: "macro".to_string(),
            per_class,
            confusion: c.rows(),
            percent: PercentReport { oa: pct(m.oa), aa: pct(m.aa), kappa: pct(m.kappa), f1_macro: pct(m.f1_macro) },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_perfect() {
        let c = ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![0, 3, 0], vec![0, 0, 9]]).unwrap();
        let m = metrics_from_confusion(&c).unwrap();
        assert_eq!((m.oa, m.aa, m.kappa, m.f1_macro), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn two_class_worked_example() {
        // p_o = 17/20; rows (10, 10), cols (9, 11): p_e = (90 + 110) / 400 = 0.5
        let c = ConfusionMatrix::from_rows(&[vec![8, 2], vec![1, 9]]).unwrap();
        let m = metrics_from_confusion(&c).unwrap();
        assert!((m.oa - 0.85).abs() < 1e-15);
        assert!((m.aa - 0.85).abs() < 1e-15);
        assert!((m.kappa - 0.70).abs() < 1e-15);
    }

    #[test]
    fn single_prediction_has_zero_kappa() {
        let c = ConfusionMatrix::from_rows(&[vec![10, 0], vec![10, 0]]).unwrap();
        let m = metrics_from_confusion(&c).unwrap();
        assert_eq!(m.kappa, 0.0);
        assert_eq!(m.oa, 0.5);
        assert_eq!(m.aa, 0.5);
    }

    #[test]
    fn empty_rejected() {
        assert!(metrics_from_confusion(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn absent_class_excluded_from_averages() {
        let c = ConfusionMatrix::from_rows(&[vec![4, 0, 0], vec![0, 0, 0], vec![0, 1, 3]]).unwrap();
        let m = metrics_from_confusion(&c).unwrap();
        assert_eq!(m.present, vec![true, false, true]);
        assert!((m.aa - (1.0 + 0.75) / 2.0).abs() < 1e-15);
    }
}
