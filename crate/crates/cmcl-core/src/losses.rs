//! Scalar objectives and their logit gradients.
//!
//! Covers the per-example building blocks (cross-entropy, KL divergence from
//! the uniform distribution with exact and stochastic-label gradients), the
//! per-member composite loss used to rank members, the row-wise top-K
//! assignment solver, and the three ensemble objectives: oracle loss,
//! independent-ensemble loss, and the confident oracle loss.
//!
//! All losses and entropies are in nats. Probabilities are floored at
//! [`PROB_FLOOR`] inside every log so saturated softmax outputs keep losses
//! finite.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor applied to probabilities inside log terms.
pub const PROB_FLOOR: f64 = 1e-12;

fn ln_floored(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// A validated probability distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Input("probability vector is empty".into()));
        }
        if probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Input(
                "probability entries must lie in (0, 1]".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A loss value together with its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub logit_grad: Vec<f64>,
}

/// Cross-entropy `-log p[label]` with logit gradient `p - onehot(label)`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<LossGrad> {
    if label >= probs.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let value = -ln_floored(probs[label]);
    let mut logit_grad = probs.to_vec();
    logit_grad[label] -= 1.0;
    Ok(LossGrad { value, logit_grad })
}

/// Cross-entropy value only.
pub fn cross_entropy_value(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-ln_floored(probs[label]))
}

/// `KL(U || p) = -log C - (1/C) * sum_y log p_y`, clamped at zero because
/// summation rounding can land a few ulp below it on uniform input.
pub fn kl_from_uniform(probs: &[f64]) -> f64 {
    let c = probs.len() as f64;
    let mean_log: f64 = probs.iter().map(|&p| ln_floored(p)).sum::<f64>() / c;
    (-c.ln() - mean_log).max(0.0)
}

/// Exact logit gradient of `KL(U || p)` under a softmax head: `p - 1/C`.
pub fn kl_from_uniform_grad_exact(probs: &[f64]) -> Vec<f64> {
    let inv_c = 1.0 / probs.len() as f64;
    probs.iter().map(|&p| p - inv_c).collect()
}

/// Monte-Carlo logit gradient of the KL-to-uniform term: draws labels from
/// the uniform distribution and averages the cross-entropy gradients
/// `p - onehot(label)`. Unscaled; the caller applies the beta penalty.
pub fn stochastic_label_grad<R: Rng>(probs: &[f64], rng: &mut R, samples: usize) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::Input("sample count must be at least 1".into()));
    }
    let c = probs.len();
    let mut grad = probs.to_vec();
    let weight = 1.0 / samples as f64;
    for _ in 0..samples {
        let label = rng.gen_range(0..c);
        grad[label] -= weight;
    }
    Ok(grad)
}

/// Per-member composite loss for one example:
/// `L^m = ce[m] + beta * (sum of everyone else's KL terms)`.
pub fn composite_member_loss(ce: &[f64], kl: &[f64], beta: f64) -> Result<Vec<f64>> {
    if ce.len() != kl.len() {
        return Err(Error::Shape(format!(
            "cross-entropy vector has {} members, KL vector has {}",
            ce.len(),
            kl.len()
        )));
    }
    let kl_total: f64 = kl.iter().sum();
    Ok(ce
        .iter()
        .zip(kl)
        .map(|(&c, &k)| c + beta * (kl_total - k))
        .collect())
}

/// Binary flags `v[i][m]` selecting which members specialize on each example.
/// Every row sums to exactly the overlap `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    examples: usize,
    members: usize,
    overlap: usize,
    flags: Vec<u8>,
}

impl AssignmentMatrix {
    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn is_assigned(&self, example: usize, member: usize) -> bool {
        self.flags[example * self.members + member] == 1
    }

    pub fn row(&self, example: usize) -> &[u8] {
        &self.flags[example * self.members..(example + 1) * self.members]
    }

    /// True when every row sums to the overlap K.
    pub fn rows_sum_to_overlap(&self) -> bool {
        (0..self.examples).all(|i| {
            self.row(i).iter().map(|&v| v as usize).sum::<usize>() == self.overlap
        })
    }
}

/// Assignment with every member assigned to every example (K = M), the
/// shape independent-ensemble training uses.
pub fn assign_all(examples: usize, members: usize) -> AssignmentMatrix {
    AssignmentMatrix {
        examples,
        members,
        overlap: members,
        flags: vec![1u8; examples * members],
    }
}

/// Per example, assigns the K members with the smallest composite loss;
/// ties break toward the lowest member index. Because the confident oracle
/// objective is separable per example and the composite loss orders members
/// identically to `task - beta * kl`, this solves its inner minimization
/// exactly.
pub fn assign(composite: &Matrix, overlap: usize) -> Result<AssignmentMatrix> {
    let members = composite.cols();
    if overlap == 0 || overlap > members {
        return Err(Error::Config(format!(
            "overlap K={overlap} must satisfy 1 <= K <= M={members}"
        )));
    }
    let examples = composite.rows();
    let mut flags = vec![0u8; examples * members];
    let mut order: Vec<usize> = Vec::with_capacity(members);
    for i in 0..examples {
        let row = composite.row(i);
        order.clear();
        order.extend(0..members);
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        for &m in order.iter().take(overlap) {
            flags[i * members + m] = 1;
        }
    }
    Ok(AssignmentMatrix {
        examples,
        members,
        overlap,
        flags,
    })
}

/// Oracle loss: per example, the minimum member loss, summed over examples.
pub fn oracle_loss(task_losses: &Matrix) -> Result<f64> {
    if task_losses.rows() == 0 || task_losses.cols() == 0 {
        return Err(Error::Input("task loss matrix is empty".into()));
    }
    Ok((0..task_losses.rows())
        .map(|i| {
            task_losses
                .row(i)
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        })
        .sum())
}

/// Independent-ensemble loss: every member's loss on every example, summed.
/// Accumulated row-wise, matching [`confident_objective`] bit for bit in
/// the K = M reduction.
pub fn ie_loss(task_losses: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..task_losses.rows() {
        let mut row_value = 0.0;
        for &v in task_losses.row(i) {
            row_value += v;
        }
        total += row_value;
    }
    total
}

/// Confident oracle loss: minimizes
/// `sum_i sum_m [v * task + beta * (1 - v) * kl]` over assignments with row
/// sums K, and returns the optimum together with the assignment attaining it.
pub fn confident_oracle_loss(
    task_losses: &Matrix,
    kl_values: &Matrix,
    beta: f64,
    overlap: usize,
) -> Result<(f64, AssignmentMatrix)> {
    if !task_losses.same_shape(kl_values) {
        return Err(Error::Shape(format!(
            "task losses are {}x{}, KL values are {}x{}",
            task_losses.rows(),
            task_losses.cols(),
            kl_values.rows(),
            kl_values.cols()
        )));
    }
    let mut composite = Matrix::zeros(task_losses.rows(), task_losses.cols());
    for i in 0..task_losses.rows() {
        let row = composite_member_loss(task_losses.row(i), kl_values.row(i), beta)?;
        composite.row_mut(i).copy_from_slice(&row);
    }
    let assignment = assign(&composite, overlap)?;
    let value = confident_objective(task_losses, kl_values, beta, &assignment)?;
    Ok((value, assignment))
}

/// Evaluates the confident oracle objective at a fixed assignment.
pub fn confident_objective(
    task_losses: &Matrix,
    kl_values: &Matrix,
    beta: f64,
    assignment: &AssignmentMatrix,
) -> Result<f64> {
    if !task_losses.same_shape(kl_values)
        || assignment.examples() != task_losses.rows()
        || assignment.members() != task_losses.cols()
    {
        return Err(Error::Shape("objective inputs disagree on shape".into()));
    }
    // Row-wise accumulation: the objective is separable per example, and
    // summing each row before the grand total keeps the value bit-identical
    // to a per-row enumeration oracle.
    let mut total = 0.0;
    for i in 0..task_losses.rows() {
        let mut row_value = 0.0;
        for m in 0..task_losses.cols() {
            if assignment.is_assigned(i, m) {
                row_value += task_losses.at(i, m);
            } else {
                row_value += beta * kl_values.at(i, m);
            }
        }
        total += row_value;
    }
    Ok(total)
}

/// Per-example, per-member loss tables for one training batch.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// Cross-entropy of each member on each example.
    pub task: Matrix,
    /// KL-to-uniform of each member on each example.
    pub kl: Matrix,
    /// Composite ranking loss `L^m_i`.
    pub composite: Matrix,
    pub task_total: f64,
    pub kl_total: f64,
    /// Confident oracle objective at the chosen assignment.
    pub objective: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|e| e / sum).collect()
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.1, -0.1]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let sure = cross_entropy(&[1.0, 0.0], 0).unwrap();
        assert_eq!(sure.value, 0.0);
        let half = cross_entropy(&[0.5, 0.5], 1).unwrap();
        assert!((half.value - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = vec![0.3, -1.2, 0.7, 2.0];
        let label = 2;
        let probs = softmax(&logits);
        let analytic = cross_entropy(&probs, label).unwrap().logit_grad;
        let h = 1e-6;
        for j in 0..logits.len() {
            let mut up = logits.clone();
            up[j] += h;
            let mut down = logits.clone();
            down[j] -= h;
            let f_up = -softmax(&up)[label].ln();
            let f_down = -softmax(&down)[label].ln();
            let numeric = (f_up - f_down) / (2.0 * h);
            let rel = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(1.0);
            assert!(rel < 1e-6, "component {j}: {} vs {numeric}", analytic[j]);
        }
    }

    #[test]
    fn kl_from_uniform_examples() {
        // KL(U || U) = 0 for any C.
        for c in [2usize, 5, 10] {
            let uniform = vec![1.0 / c as f64; c];
            assert!(kl_from_uniform(&uniform).abs() < 1e-9);
        }
        // Hand value for C=2, p=(0.9, 0.1).
        let v = kl_from_uniform(&[0.9, 0.1]);
        assert!((v - 0.510826).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn kl_from_uniform_matches_definitional_sum() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..200 {
            let c = rng.gen_range(2..12);
            let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let probs = softmax(&logits);
            let direct = kl_from_uniform(&probs);
            let u = 1.0 / c as f64;
            let brute: f64 = probs.iter().map(|&p| u * (u / p).ln()).sum();
            assert!((direct - brute).abs() < 1e-12, "{direct} vs {brute}");
        }
    }

    #[test]
    fn exact_kl_gradient_examples() {
        // Uniform input: gradient vanishes.
        let uniform = vec![0.25; 4];
        assert!(kl_from_uniform_grad_exact(&uniform)
            .iter()
            .all(|g| g.abs() < 1e-15));
        // C=2, p=(0.9, 0.1) -> (0.4, -0.4).
        let g = kl_from_uniform_grad_exact(&[0.9, 0.1]);
        assert!((g[0] - 0.4).abs() < 1e-12 && (g[1] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn exact_kl_gradient_matches_finite_differences() {
        let logits = vec![1.4, -0.3, 0.2];
        let probs = softmax(&logits);
        let analytic = kl_from_uniform_grad_exact(&probs);
        let h = 1e-6;
        for j in 0..logits.len() {
            let mut up = logits.clone();
            up[j] += h;
            let mut down = logits.clone();
            down[j] -= h;
            let numeric =
                (kl_from_uniform(&softmax(&up)) - kl_from_uniform(&softmax(&down))) / (2.0 * h);
            let rel = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(1.0);
            assert!(rel < 1e-6);
        }
    }

    #[test]
    fn enumerating_all_labels_recovers_exact_kl_gradient() {
        let probs = softmax(&[0.5, -1.0, 2.0, 0.0, 1.3]);
        let c = probs.len();
        let mut mean = vec![0.0; c];
        for label in 0..c {
            let g = cross_entropy(&probs, label).unwrap().logit_grad;
            for (acc, gj) in mean.iter_mut().zip(&g) {
                *acc += gj / c as f64;
            }
        }
        let exact = kl_from_uniform_grad_exact(&probs);
        for (a, b) in mean.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn stochastic_label_grad_is_seeded_and_degenerate_safe() {
        let probs = softmax(&[0.1, 0.9, -0.4]);
        let mut rng_a = StdRng::seed_from_u64(77);
        let mut rng_b = StdRng::seed_from_u64(77);
        let a = stochastic_label_grad(&probs, &mut rng_a, 1).unwrap();
        let b = stochastic_label_grad(&probs, &mut rng_b, 1).unwrap();
        assert_eq!(a, b);
        assert!(stochastic_label_grad(&probs, &mut rng_a, 0).is_err());
        // C=1: p is always 1, gradient is exactly zero.
        let mut rng = StdRng::seed_from_u64(0);
        let g = stochastic_label_grad(&[1.0], &mut rng, 4).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn composite_member_loss_hand_case() {
        let l = composite_member_loss(&[0.4, 0.9], &[0.3, 0.2], 1.0).unwrap();
        assert!((l[0] - 0.6).abs() < 1e-15);
        assert!((l[1] - 1.2).abs() < 1e-15);
        // beta = 0 leaves the cross-entropy untouched.
        let plain = composite_member_loss(&[0.4, 0.9], &[0.3, 0.2], 0.0).unwrap();
        assert_eq!(plain, vec![0.4, 0.9]);
        assert!(composite_member_loss(&[0.1], &[0.1, 0.2], 1.0).is_err());
    }

    #[test]
    fn assign_picks_smallest_with_index_tiebreak() {
        let losses = Matrix::from_rows(&[vec![0.2, 0.5, 0.1]]).unwrap();
        let top1 = assign(&losses, 1).unwrap();
        assert_eq!(top1.row(0), &[0, 0, 1]);
        let top2 = assign(&losses, 2).unwrap();
        assert_eq!(top2.row(0), &[1, 0, 1]);
        let tied = Matrix::from_rows(&[vec![0.3, 0.3, 0.9]]).unwrap();
        assert_eq!(assign(&tied, 1).unwrap().row(0), &[1, 0, 0]);
        assert!(assign(&losses, 0).is_err());
        assert!(assign(&losses, 4).is_err());
    }

    #[test]
    fn oracle_and_ie_losses() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.5]]).unwrap();
        assert_eq!(oracle_loss(&m).unwrap(), 1.5);
        assert_eq!(ie_loss(&m), 6.5);
        let single = Matrix::from_rows(&[vec![0.7], vec![0.3]]).unwrap();
        assert_eq!(oracle_loss(&single).unwrap(), 1.0);
        assert!(oracle_loss(&Matrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn confident_oracle_loss_reductions() {
        let task = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.5]]).unwrap();
        let kl = Matrix::from_rows(&[vec![0.2, 0.1], vec![0.4, 0.3]]).unwrap();
        let (beta_zero, _) = confident_oracle_loss(&task, &kl, 0.0, 1).unwrap();
        assert_eq!(beta_zero, oracle_loss(&task).unwrap());
        let (full, assignment) = confident_oracle_loss(&task, &kl, 1.5, 2).unwrap();
        assert_eq!(full, ie_loss(&task));
        assert!(assignment.rows_sum_to_overlap());
    }

    fn brute_force_row_min(task: &[f64], kl: &[f64], beta: f64, k: usize) -> f64 {
        let m = task.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let mut value = 0.0;
            for j in 0..m {
                if mask & (1 << j) != 0 {
                    value += task[j];
                } else {
                    value += beta * kl[j];
                }
            }
            best = best.min(value);
        }
        best
    }

    proptest! {
        #[test]
        fn assignment_matches_exhaustive_enumeration(
            members in 1usize..=6,
            rows in 1usize..=5,
            k_raw in 1usize..=6,
            seed in 0u64..5000,
        ) {
            let k = k_raw.min(members);
            let mut rng = StdRng::seed_from_u64(seed);
            let task_rows: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..members).map(|_| rng.gen_range(0.0..8.0)).collect())
                .collect();
            let kl_rows: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..members).map(|_| rng.gen_range(0.0..3.0)).collect())
                .collect();
            let beta = rng.gen_range(0.0..2.0);
            let task = Matrix::from_rows(&task_rows).unwrap();
            let kl = Matrix::from_rows(&kl_rows).unwrap();

            let (value, assignment) = confident_oracle_loss(&task, &kl, beta, k).unwrap();
            prop_assert!(assignment.rows_sum_to_overlap());
            let brute: f64 = (0..rows)
                .map(|i| brute_force_row_min(&task_rows[i], &kl_rows[i], beta, k))
                .sum();
            prop_assert_eq!(value, brute);
        }

        #[test]
        fn kl_from_uniform_is_nonnegative(seed in 0u64..10000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let c = rng.gen_range(2..10);
            let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let probs = softmax(&logits);
            prop_assert!(kl_from_uniform(&probs) >= 0.0);
        }

        #[test]
        fn oracle_loss_never_exceeds_ie_loss(seed in 0u64..10000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let rows = rng.gen_range(1..6);
            let cols = rng.gen_range(1..6);
            let data: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.gen_range(0.0..5.0)).collect())
                .collect();
            let m = Matrix::from_rows(&data).unwrap();
            prop_assert!(oracle_loss(&m).unwrap() <= ie_loss(&m) + 1e-12);
        }
    }
}
