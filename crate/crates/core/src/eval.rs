//! Classifier evaluation: confusion-matrix metrics, ROC/AUC, repeated k-fold
//! cross-validation, and boxplot summaries.
//!
//! `Failed` is the positive class everywhere. Metrics with a zero denominator
//! evaluate to 0 and set the `degenerate` flag rather than returning NaN.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stability::StabilityLabel;
use crate::Real;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

/// Binary confusion counts; positive = `Failed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        ConfusionMatrix { tn, fp, fn_, tp }
    }

    pub fn from_labels(actual: &[StabilityLabel], predicted: &[StabilityLabel]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::domain(format!(
                "label lengths differ: {} actual vs {} predicted",
                actual.len(),
                predicted.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(0, 0, 0, 0);
        for (&a, &p) in actual.iter().zip(predicted) {
            match (a.is_failed(), p.is_failed()) {
                (false, false) => cm.tn += 1,
                (false, true) => cm.fp += 1,
                (true, false) => cm.fn_ += 1,
                (true, true) => cm.tp += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

/// The five confusion-matrix metrics, plus the false positive rate used for
/// ROC reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet<F> {
    pub accuracy: F,
    pub precision: F,
    /// Recall of the positive class (sensitivity).
    pub recall: F,
    pub specificity: F,
    pub f1: F,
    pub fpr: F,
    /// True when any metric had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

/// Metrics from confusion counts. A zero denominator yields 0 for that metric
/// and sets the `degenerate` flag.
pub fn metrics<F: Scalar>(cm: &ConfusionMatrix) -> MetricSet<F> {
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            F::zero()
        } else {
            F::from_count(num as usize) / F::from_count(den as usize)
        }
    };
    let accuracy = ratio(cm.tp + cm.tn, cm.total());
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let specificity = ratio(cm.tn, cm.tn + cm.fp);
    let fpr = ratio(cm.fp, cm.tn + cm.fp);
    let f1 = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_);
    MetricSet {
        accuracy,
        precision,
        recall,
        specificity,
        f1,
        fpr,
        degenerate,
    }
}

/// ROC curve points (fpr, tpr) from (0,0) to (1,1) with tied scores grouped,
/// plus the trapezoid AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve<F> {
    pub points: Vec<(F, F)>,
    pub auc: F,
}

/// ROC/AUC for scores where larger means more likely failed. Tied scores move
/// along one diagonal segment, so the trapezoid AUC equals the pairwise
/// concordance statistic with ties counted half.
pub fn roc_auc<F: Scalar>(scores: &[F], actual: &[StabilityLabel]) -> Result<RocCurve<F>> {
    if scores.len() != actual.len() {
        return Err(Error::domain("scores and labels differ in length"));
    }
    let n_pos = actual.iter().filter(|l| l.is_failed()).count();
    let n_neg = actual.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::domain(
            "ROC needs at least one positive and one negative label",
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("scores must be finite"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap());

    let np = F::from_count(n_pos);
    let nn = F::from_count(n_neg);
    let mut points = vec![(F::zero(), F::zero())];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = F::zero();
    let two = F::from_count(2);
    let mut i = 0;
    while i < order.len() {
        // advance over one tie group as a single segment
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if actual[order[j]].is_failed() {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let (x0, y0) = *points.last().unwrap();
        let x1 = F::from_count(fp) / nn;
        let y1 = F::from_count(tp) / np;
        auc = auc + (x1 - x0) * (y0 + y1) / two;
        points.push((x1, y1));
        i = j;
    }
    Ok(RocCurve { points, auc })
}

/// One (repeat, fold) split of 0..n.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Repeated k-fold splits: each repeat shuffles 0..n with its own substream
/// of `seed` and deals the first `n mod k` folds one extra index, so fold
/// sizes differ by at most one and every index is tested exactly once per
/// repeat.
pub fn repeated_kfold(n: usize, k: usize, repeats: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 || k > n {
        return Err(Error::config(format!("k must be in 2..={n}, got {k}")));
    }
    if repeats == 0 {
        return Err(Error::config("repeats must be at least 1"));
    }
    let mut splits = Vec::with_capacity(k * repeats);
    for rep in 0..repeats {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut crate::rng::substream(seed, 0xF01D, rep as u64));
        let base = n / k;
        let extra = n % k;
        let mut start = 0;
        for fold in 0..k {
            let len = base + usize::from(fold < extra);
            let test: Vec<usize> = order[start..start + len].to_vec();
            let train: Vec<usize> = order[..start]
                .iter()
                .chain(&order[start + len..])
                .copied()
                .collect();
            splits.push(FoldSplit {
                repeat: rep,
                fold,
                train,
                test,
            });
            start += len;
        }
    }
    Ok(splits)
}

/// Five-number boxplot summary with 1.5·IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats<F> {
    pub min: F,
    pub q1: F,
    pub median: F,
    pub q3: F,
    pub max: F,
    /// Most extreme data points within 1.5·IQR of the box.
    pub whisker_lo: F,
    pub whisker_hi: F,
    pub outliers: Vec<F>,
}

/// Linear-interpolation quantile on sorted data (the R-7 convention).
fn quantile_sorted<F: Scalar>(sorted: &[F], p: F) -> F {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * F::from_count(n - 1);
    let lo = h.floor();
    let idx = lo.to_f64().unwrap() as usize;
    if idx + 1 >= n {
        return sorted[n - 1];
    }
    sorted[idx] + (h - lo) * (sorted[idx + 1] - sorted[idx])
}

/// Boxplot summary of a sample.
pub fn boxplot_stats<F: Scalar>(values: &[F]) -> Result<BoxplotStats<F>> {
    if values.is_empty() {
        return Err(Error::domain("boxplot of an empty sample"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("boxplot values must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let half = F::from_count(1) / F::from_count(2);
    let quarter = F::from_count(1) / F::from_count(4);
    let q1 = quantile_sorted(&sorted, quarter);
    let median = quantile_sorted(&sorted, half);
    let q3 = quantile_sorted(&sorted, quarter + half);
    let iqr = q3 - q1;
    let fence_lo = q1 - F::from_count(3) / F::from_count(2) * iqr;
    let fence_hi = q3 + F::from_count(3) / F::from_count(2) * iqr;
    let whisker_lo = *sorted.iter().find(|&&v| v >= fence_lo).unwrap();
    let whisker_hi = *sorted.iter().rev().find(|&&v| v <= fence_hi).unwrap();
    let outliers = sorted
        .iter()
        .filter(|&&v| v < fence_lo || v > fence_hi)
        .copied()
        .collect();
    Ok(BoxplotStats {
        min: sorted[0],
        q1,
        median,
        q3,
        max: sorted[sorted.len() - 1],
        whisker_lo,
        whisker_hi,
        outliers,
    })
}

/// One evaluation result row for CSV reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub model: String,
    pub repeat: usize,
    pub fold: usize,
    pub accuracy: Real,
    pub f1: Real,
    pub auc: Real,
    pub sensitivity: Real,
    pub specificity: Real,
    pub fpr: Real,
}

/// Writes metric rows as CSV with a fixed header.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "dataset,model,repeat,fold,accuracy,f1,auc,sensitivity,specificity,fpr"
    )?;
    for r in rows {
        if r.dataset.contains(',') || r.model.contains(',') {
            return Err(Error::data(
                "dataset and model names must not contain commas",
            ));
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.model,
            r.repeat,
            r.fold,
            r.accuracy,
            r.f1,
            r.auc,
            r.sensitivity,
            r.specificity,
            r.fpr
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use StabilityLabel::{Failed, Stable};

    #[test]
    fn metrics_on_large_reference_counts() {
        let cm = ConfusionMatrix::new(75255, 9548, 10408, 24289);
        assert_eq!(cm.total(), 119500);
        let m: MetricSet<f64> = metrics(&cm);
        assert!(!m.degenerate);
        assert_relative_eq!(m.accuracy, 0.833, epsilon = 5e-4);
        assert_relative_eq!(m.f1, 0.70882, epsilon = 5e-6);
        assert_relative_eq!(m.recall, 0.70003, epsilon = 5e-6);
        // 75255/84803 = 0.8874096..., sometimes quoted rounded as 0.88742
        assert_relative_eq!(m.specificity, 0.887410, epsilon = 5e-6);
        assert_relative_eq!(m.precision, 24289.0 / (24289.0 + 9548.0), epsilon = 1e-12);
        assert_relative_eq!(m.fpr, 1.0 - m.specificity, epsilon = 1e-12);
    }

    #[test]
    fn metrics_hand_counts() {
        let actual = [Failed, Failed, Stable, Stable, Failed, Stable];
        let predicted = [Failed, Stable, Stable, Failed, Failed, Stable];
        let cm = ConfusionMatrix::from_labels(&actual, &predicted).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(2, 1, 1, 2));
        let m: MetricSet<f64> = metrics(&cm);
        assert_relative_eq!(m.accuracy, 4.0 / 6.0);
        assert_relative_eq!(m.precision, 2.0 / 3.0);
        assert_relative_eq!(m.recall, 2.0 / 3.0);
        assert_relative_eq!(m.specificity, 2.0 / 3.0);
        assert_relative_eq!(m.f1, 2.0 / 3.0);
    }

    #[test]
    fn degenerate_denominators_flag_and_zero() {
        // all-stable predictions on all-stable actuals: no positives anywhere
        let cm = ConfusionMatrix::from_labels(&[Stable, Stable], &[Stable, Stable]).unwrap();
        let m: MetricSet<f64> = metrics(&cm);
        assert!(m.degenerate);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn roc_perfect_and_reversed() {
        let labels = [Stable, Stable, Failed, Failed];
        let up = roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap();
        assert_relative_eq!(up.auc, 1.0);
        assert_eq!(up.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(up.points.last(), Some(&(1.0, 1.0)));
        let down = roc_auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap();
        assert_relative_eq!(down.auc, 0.0);
        let flat = roc_auc(&[0.5, 0.5, 0.5, 0.5], &labels).unwrap();
        assert_relative_eq!(flat.auc, 0.5);
        assert_eq!(flat.points.len(), 2); // one diagonal segment
    }

    #[test]
    fn roc_rejects_one_class() {
        assert!(roc_auc(&[0.1, 0.2], &[Stable, Stable]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[Failed, Failed]).is_err());
        assert!(roc_auc(&[0.1], &[Stable, Failed]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.2], &[Stable, Failed]).is_err());
    }

    /// Exact-arithmetic oracle: trapezoid AUC must equal the pairwise
    /// concordance statistic (ties counted half) as a rational number.
    #[test]
    fn roc_auc_equals_pairwise_statistic_exactly() {
        use num_bigint::BigInt;
        use num_rational::BigRational;
        let ratio = |n: i64, d: i64| BigRational::new(BigInt::from(n), BigInt::from(d));

        // quantized scores force plenty of cross-class ties
        let mut rng = crate::rng::substream(5, 0, 0);
        use rand::Rng;
        let n = 60;
        let scores_q: Vec<i64> = (0..n).map(|_| rng.gen_range(0..8)).collect();
        let labels: Vec<StabilityLabel> = (0..n)
            .map(|_| if rng.gen_bool(0.4) { Failed } else { Stable })
            .collect();

        let mut conc = ratio(0, 1);
        let mut pairs = 0i64;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == Failed && labels[j] == Stable {
                    pairs += 1;
                    conc += match scores_q[i].cmp(&scores_q[j]) {
                        std::cmp::Ordering::Greater => ratio(1, 1),
                        std::cmp::Ordering::Equal => ratio(1, 2),
                        std::cmp::Ordering::Less => ratio(0, 1),
                    };
                }
            }
        }
        let want = conc / ratio(pairs, 1);

        // trapezoid sum recomputed in exact arithmetic over the curve points
        let scores: Vec<f64> = scores_q.iter().map(|&q| q as f64 / 8.0).collect();
        let curve = roc_auc(&scores, &labels).unwrap();
        let n_pos = labels.iter().filter(|l| l.is_failed()).count() as i64;
        let n_neg = n as i64 - n_pos;
        let mut got = ratio(0, 1);
        let exact_points: Vec<(BigRational, BigRational)> = curve
            .points
            .iter()
            .map(|&(x, y)| {
                (
                    ratio((x * n_neg as f64).round() as i64, n_neg),
                    ratio((y * n_pos as f64).round() as i64, n_pos),
                )
            })
            .collect();
        for w in exact_points.windows(2) {
            let (x0, y0) = &w[0];
            let (x1, y1) = &w[1];
            got += (x1 - x0) * (y0 + y1) / ratio(2, 1);
        }
        assert_eq!(got, want);
        use num_traits::ToPrimitive;
        assert_relative_eq!(curve.auc, want.to_f64().unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn kfold_partitions_each_repeat() {
        let splits = repeated_kfold(103, 10, 3, 9).unwrap();
        assert_eq!(splits.len(), 30);
        for rep in 0..3 {
            let mut seen = vec![0usize; 103];
            for s in splits.iter().filter(|s| s.repeat == rep) {
                assert!(s.test.len() == 10 || s.test.len() == 11);
                assert_eq!(s.train.len() + s.test.len(), 103);
                for &i in &s.test {
                    seen[i] += 1;
                }
                for &i in &s.train {
                    assert!(!s.test.contains(&i));
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
        // repeats shuffle differently
        assert_ne!(splits[0].test, splits[10].test);
        // deterministic in the seed
        assert_eq!(splits, repeated_kfold(103, 10, 3, 9).unwrap());
        assert_ne!(splits, repeated_kfold(103, 10, 3, 10).unwrap());
    }

    #[test]
    fn kfold_rejects_bad_shapes() {
        assert!(repeated_kfold(5, 1, 3, 0).is_err());
        assert!(repeated_kfold(5, 6, 3, 0).is_err());
        assert!(repeated_kfold(5, 5, 0, 0).is_err());
        assert!(repeated_kfold(5, 5, 1, 0).is_ok());
    }

    #[test]
    fn boxplot_known_quartiles() {
        let b = boxplot_stats(&[9.0, 1.0, 5.0, 3.0, 7.0, 8.0, 2.0, 6.0, 4.0]).unwrap();
        assert_relative_eq!(b.q1, 3.0);
        assert_relative_eq!(b.median, 5.0);
        assert_relative_eq!(b.q3, 7.0);
        assert_eq!(b.min, 1.0);
        assert_eq!(b.max, 9.0);
        assert_eq!(b.whisker_lo, 1.0);
        assert_eq!(b.whisker_hi, 9.0);
        assert!(b.outliers.is_empty());

        // interpolated quartiles on an even count
        let b = boxplot_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(b.q1, 1.75);
        assert_relative_eq!(b.median, 2.5);
        assert_relative_eq!(b.q3, 3.25);
    }

    #[test]
    fn boxplot_flags_outliers() {
        let mut v: Vec<f64> = (1..=11).map(|i| i as f64).collect();
        v.push(100.0);
        let b = boxplot_stats(&v).unwrap();
        assert_eq!(b.outliers, vec![100.0]);
        assert!(b.whisker_hi <= 11.0);
        assert_eq!(b.max, 100.0);
        assert!(boxplot_stats::<f64>(&[]).is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let rows = vec![MetricRow {
            dataset: "cov03-xi6".into(),
            model: "rf".into(),
            repeat: 0,
            fold: 4,
            accuracy: 0.9,
            f1: 0.8,
            auc: 0.95,
            sensitivity: 0.7,
            specificity: 0.96,
            fpr: 0.04,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "dataset,model,repeat,fold,accuracy,f1,auc,sensitivity,specificity,fpr"
        );
        assert_eq!(lines[1], "cov03-xi6,rf,0,4,0.9,0.8,0.95,0.7,0.96,0.04");
    }
}
