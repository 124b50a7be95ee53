//! Evaluation suite: top-1 error from averaged probabilities, oracle error,
//! predictive entropy, class-wise accuracy, and entropy histograms.
//!
//! Entropies and all other log quantities are in nats. Argmax ties break
//! toward the lowest class index.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::{forward_ensemble, Ensemble};
use crate::error::{Error, Result};
use crate::losses::PROB_FLOOR;
use crate::matrix::Matrix;

/// Class-wise accuracy above this marks a class as specialized.
pub const SPECIALIZATION_THRESHOLD: f64 = 0.9;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-example argmax predictions from a distribution matrix.
pub fn predictions(distribution: &Matrix) -> Vec<usize> {
    (0..distribution.rows())
        .map(|i| argmax(distribution.row(i)))
        .collect()
}

/// Error of the single prediction obtained by averaging the members'
/// probability outputs and taking the argmax.
pub fn top1_error(member_distributions: &[Matrix], labels: &[usize]) -> Result<f64> {
    let Some(first) = member_distributions.first() else {
        return Err(Error::Input("no member distributions given".into()));
    };
    if first.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} prediction rows",
            labels.len(),
            first.rows()
        )));
    }
    for d in member_distributions {
        if !d.same_shape(first) {
            return Err(Error::Shape("member distribution shapes differ".into()));
        }
    }
    let m = member_distributions.len() as f64;
    let mut wrong = 0usize;
    let mut mean = vec![0.0; first.cols()];
    for i in 0..labels.len() {
        mean.fill(0.0);
        for d in member_distributions {
            for (acc, &p) in mean.iter_mut().zip(d.row(i)) {
                *acc += p / m;
            }
        }
        if argmax(&mean) != labels[i] {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / labels.len() as f64)
}

/// Fraction of examples on which no member predicts the true class.
pub fn oracle_error(member_predictions: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    if member_predictions.is_empty() {
        return Err(Error::Input("no member predictions given".into()));
    }
    for preds in member_predictions {
        if preds.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
    }
    let mut failures = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if member_predictions.iter().all(|preds| preds[i] != label) {
            failures += 1;
        }
    }
    Ok(failures as f64 / labels.len() as f64)
}

/// Shannon entropy `-sum p log p` in nats.
pub fn predictive_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .map(|&p| if p > 0.0 { p * p.max(PROB_FLOOR).ln() } else { 0.0 })
        .sum::<f64>()
}

/// Entry `(m, c)`: accuracy of member `m` restricted to class `c`;
/// `None` for classes absent from the data.
pub fn classwise_accuracy(
    member_predictions: &[Vec<usize>],
    labels: &[usize],
    class_count: usize,
) -> Result<Vec<Vec<Option<f64>>>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {class_count} classes"
        )));
    }
    let mut counts = vec![0usize; class_count];
    for &l in labels {
        counts[l] += 1;
    }
    let mut out = Vec::with_capacity(member_predictions.len());
    for preds in member_predictions {
        if preds.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let mut hits = vec![0usize; class_count];
        for (&pred, &label) in preds.iter().zip(labels) {
            if pred == label {
                hits[label] += 1;
            }
        }
        out.push(
            (0..class_count)
                .map(|c| {
                    if counts[c] == 0 {
                        None
                    } else {
                        Some(hits[c] as f64 / counts[c] as f64)
                    }
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Fixed-width histogram over `[range.0, range.1]`; values at the upper
/// edge land in the last bin, out-of-range values clamp to the edge bins.
pub fn entropy_histogram(entropies: &[f64], bins: usize, range: (f64, f64)) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let (lo, hi) = range;
    if !(hi > lo) {
        return Err(Error::Config(format!("bad histogram range [{lo}, {hi}]")));
    }
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &e in entropies {
        let idx = (((e - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    Ok(counts)
}

/// Two-column export: `bin_center count` per line.
pub fn histogram_to_delimited(counts: &[usize], range: (f64, f64)) -> String {
    let width = (range.1 - range.0) / counts.len() as f64;
    let mut out = String::new();
    for (i, &c) in counts.iter().enumerate() {
        let center = range.0 + (i as f64 + 0.5) * width;
        let _ = writeln!(out, "{center}\t{c}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub examples: usize,
    pub members: usize,
    pub class_count: usize,
    pub top1_error: f64,
    pub oracle_error: f64,
    /// `[member][class]`, `None` for classes absent from the data.
    pub classwise_accuracy: Vec<Vec<Option<f64>>>,
    /// Predictive entropy of every member on every example, in nats.
    pub member_entropies: Vec<Vec<f64>>,
    /// Classes on which each member's accuracy exceeds the specialization
    /// threshold.
    pub specialization: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn mean_entropy(&self) -> f64 {
        let total: f64 = self.member_entropies.iter().flatten().sum();
        let n = self.member_entropies.iter().map(Vec::len).sum::<usize>();
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    /// Plain key-value rendering for stdout and text reports.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset {}", self.dataset);
        let _ = writeln!(out, "examples {}", self.examples);
        let _ = writeln!(out, "members {}", self.members);
        let _ = writeln!(out, "class_count {}", self.class_count);
        let _ = writeln!(out, "top1_error {}", self.top1_error);
        let _ = writeln!(out, "oracle_error {}", self.oracle_error);
        let _ = writeln!(out, "mean_entropy {}", self.mean_entropy());
        for (m, row) in self.classwise_accuracy.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .map(|v| match v {
                    Some(a) => format!("{a}"),
                    None => "na".to_owned(),
                })
                .collect();
            let _ = writeln!(out, "classwise_accuracy[{m}] {}", cells.join(" "));
        }
        for (m, classes) in self.specialization.iter().enumerate() {
            let cells: Vec<String> = classes.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "specialized_classes[{m}] {}", cells.join(" "));
        }
        for (m, ent) in self.member_entropies.iter().enumerate() {
            let mean = ent.iter().sum::<f64>() / ent.len().max(1) as f64;
            let _ = writeln!(out, "mean_entropy[{m}] {mean}");
        }
        out
    }
}

/// Runs a deterministic eval-mode forward pass over the dataset and fills
/// the full report.
pub fn evaluate(ensemble: &Ensemble, dataset: &Dataset) -> Result<EvalReport> {
    let traces = forward_ensemble(ensemble, &dataset.features, None, true)?;
    let distributions: Vec<Matrix> = traces.iter().map(|t| t.output().clone()).collect();
    let member_predictions: Vec<Vec<usize>> = distributions.iter().map(predictions).collect();

    let top1 = top1_error(&distributions, &dataset.labels)?;
    let oracle = oracle_error(&member_predictions, &dataset.labels)?;
    let classwise = classwise_accuracy(&member_predictions, &dataset.labels, dataset.class_count)?;
    let member_entropies: Vec<Vec<f64>> = distributions
        .iter()
        .map(|d| (0..d.rows()).map(|i| predictive_entropy(d.row(i))).collect())
        .collect();
    let specialization = classwise
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter_map(|(c, acc)| match acc {
                    Some(a) if *a > SPECIALIZATION_THRESHOLD => Some(c),
                    _ => None,
                })
                .collect()
        })
        .collect();

    Ok(EvalReport {
        dataset: dataset.name.clone(),
        examples: dataset.len(),
        members: ensemble.config.members,
        class_count: dataset.class_count,
        top1_error: top1,
        oracle_error: oracle,
        classwise_accuracy: classwise,
        member_entropies,
        specialization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn top1_error_averages_probabilities() {
        let a = Matrix::from_rows(&[vec![0.6, 0.4]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.2, 0.8]]).unwrap();
        // Average (0.4, 0.6): predicts class 1, which is the label.
        let err = top1_error(&[a, b], &[1]).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn top1_single_member_is_plain_argmax_error() {
        let d = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap();
        // Row 3 ties; tie-break picks class 0.
        let err = top1_error(&[d], &[0, 0, 1]).unwrap();
        assert!((err - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn top1_uniform_members_tie_break_to_class_zero() {
        let d = Matrix::from_rows(&[vec![0.25; 4], vec![0.25; 4]]).unwrap();
        let err = top1_error(&[d.clone(), d], &[0, 2]).unwrap();
        assert!((err - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_error_counts_total_failures_only() {
        assert_eq!(oracle_error(&[vec![1], vec![2]], &[1]).unwrap(), 0.0);
        assert_eq!(oracle_error(&[vec![0], vec![2]], &[1]).unwrap(), 1.0);
        let everyone_wrong = oracle_error(&[vec![0, 0], vec![2, 2]], &[1, 1]).unwrap();
        assert_eq!(everyone_wrong, 1.0);
    }

    #[test]
    fn entropy_examples() {
        let uniform10 = vec![0.1; 10];
        assert!((predictive_entropy(&uniform10) - 10.0_f64.ln()).abs() < 1e-12);
        let mut onehot = vec![0.0; 5];
        onehot[2] = 1.0;
        assert!(predictive_entropy(&onehot).abs() < 1e-10);
        let skew = predictive_entropy(&[0.9, 0.1]);
        assert!((skew - 0.325083).abs() < 1e-6, "got {skew}");
    }

    #[test]
    fn classwise_accuracy_examples() {
        // Perfect predictor.
        let perfect = classwise_accuracy(&[vec![0, 1, 2]], &[0, 1, 2], 3).unwrap();
        assert_eq!(perfect[0], vec![Some(1.0), Some(1.0), Some(1.0)]);
        // Constant predictor of class 0 on balanced data.
        let constant = classwise_accuracy(&[vec![0, 0, 0, 0]], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(constant[0], vec![Some(1.0), Some(0.0)]);
        // Absent class reports None.
        let absent = classwise_accuracy(&[vec![0, 0]], &[0, 0], 3).unwrap();
        assert_eq!(absent[0][2], None);
    }

    #[test]
    fn histogram_edges_and_counts() {
        let bins = entropy_histogram(&[0.0, 0.0, 0.0], 4, (0.0, 2.0)).unwrap();
        assert_eq!(bins, vec![3, 0, 0, 0]);
        let top = entropy_histogram(&[2.0, 2.0], 4, (0.0, 2.0)).unwrap();
        assert_eq!(top, vec![0, 0, 0, 2]);
        let spread = entropy_histogram(&[0.1, 0.6, 1.1, 1.6, 2.0], 4, (0.0, 2.0)).unwrap();
        assert_eq!(spread.iter().sum::<usize>(), 5);
        assert!(entropy_histogram(&[], 3, (0.0, 1.0)).unwrap() == vec![0, 0, 0]);
        assert!(entropy_histogram(&[0.0], 0, (0.0, 1.0)).is_err());
    }

    fn random_distribution(rng: &mut StdRng, c: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.01..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    proptest! {
        #[test]
        fn entropy_is_bounded_by_log_c(seed in 0u64..5000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let c = rng.gen_range(2..12);
            let p = random_distribution(&mut rng, c);
            let h = predictive_entropy(&p);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (c as f64).ln() + 1e-9);
        }

        #[test]
        fn classwise_weighted_mean_equals_overall_accuracy(seed in 0u64..2000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let c = rng.gen_range(2..6);
            let n = rng.gen_range(1..80usize);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let overall = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / n as f64;
            let table = classwise_accuracy(&[preds], &labels, c).unwrap();
            let mut weighted = 0.0;
            for class in 0..c {
                let freq = labels.iter().filter(|&&l| l == class).count() as f64 / n as f64;
                if let Some(acc) = table[0][class] {
                    weighted += freq * acc;
                }
            }
            prop_assert!((weighted - overall).abs() < 1e-12);
        }

        #[test]
        fn oracle_error_never_exceeds_any_member_error(seed in 0u64..2000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let c = rng.gen_range(2..5);
            let n = rng.gen_range(1..50usize);
            let m = rng.gen_range(1..5usize);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let preds: Vec<Vec<usize>> = (0..m)
                .map(|_| (0..n).map(|_| rng.gen_range(0..c)).collect())
                .collect();
            let oracle = oracle_error(&preds, &labels).unwrap();
            for member in &preds {
                let member_err = member
                    .iter()
                    .zip(&labels)
                    .filter(|(p, l)| p != l)
                    .count() as f64 / n as f64;
                prop_assert!(oracle <= member_err + 1e-12);
            }
        }
    }
}
