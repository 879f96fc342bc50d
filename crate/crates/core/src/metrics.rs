//! Continual-learning metrics and feature diagnostics.
//!
//! The accuracy matrix records, after finishing each task, the accuracy on
//! every task seen so far. Average accuracy summarizes the running means;
//! forgetting measures the drop from each task's historical peak to its
//! final accuracy. The diagnostics split pooled features into shortcut /
//! non-shortcut / inactive by thresholding their mean absolute activation
//! on seen versus unseen batches.

use crate::error::{arg_err, Result};
use crate::tensor::Real;

/// Lower-triangular accuracy record: `entry(i, j)` (0-based, j ≤ i) is the
/// accuracy on task j's test split right after task i finished training.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<Real>>,
}

impl AccuracyMatrix {
    pub fn new() -> AccuracyMatrix {
        AccuracyMatrix { rows: Vec::new() }
    }

    /// Appends the evaluation row after finishing the next task; the row
    /// must cover exactly the tasks seen so far.
    pub fn push_row(&mut self, row: Vec<Real>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(arg_err(
                "push_row",
                format!("row of {} entries after {} tasks", row.len(), self.rows.len()),
            ));
        }
        if row.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(arg_err("push_row", "accuracy outside [0,1]"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> Real {
        self.rows[i][j]
    }

    pub fn rows(&self) -> &[Vec<Real>] {
        &self.rows
    }
}

impl Default for AccuracyMatrix {
    fn default() -> Self {
        AccuracyMatrix::new()
    }
}

/// Mean over tasks of the running mean accuracy: at the end of task i the
/// model's accuracy is averaged over all tasks seen so far, and those
/// per-task summaries are averaged again.
pub fn avg_accuracy(m: &AccuracyMatrix) -> Result<Real> {
    if m.tasks() == 0 {
        return Err(arg_err("avg_accuracy", "empty accuracy matrix"));
    }
    let mut acc = 0.0;
    for row in m.rows() {
        acc += row.iter().sum::<Real>() / row.len() as Real;
    }
    Ok(acc / m.tasks() as Real)
}

/// Mean over non-final tasks of (peak accuracy while training later tasks −
/// final accuracy). Negative values mean backward transfer.
pub fn forgetting(m: &AccuracyMatrix) -> Result<Real> {
    let t = m.tasks();
    if t < 2 {
        return Err(arg_err("forgetting", "needs at least two tasks"));
    }
    let last = &m.rows()[t - 1];
    let mut total = 0.0;
    for (j, &final_acc) in last.iter().enumerate().take(t - 1) {
        let peak = (j..t - 1)
            .map(|k| m.entry(k, j))
            .fold(Real::NEG_INFINITY, Real::max);
        total += peak - final_acc;
    }
    Ok(total / (t - 1) as Real)
}

/// Activation thresholds for the feature diagnostics: ρ gates "highly
/// activated on seen data", ε gates "still activated on unseen data".
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticThresholds {
    pub rho: Real,
    pub epsilon: Real,
}

impl DiagnosticThresholds {
    pub fn new(rho: Real, epsilon: Real) -> Result<DiagnosticThresholds> {
        if rho < epsilon || epsilon < 0.0 {
            return Err(arg_err("thresholds", format!("need rho {rho} >= epsilon {epsilon} >= 0")));
        }
        Ok(DiagnosticThresholds { rho, epsilon })
    }

    /// Empirical default: the 75th and 25th percentiles (nearest-rank) of
    /// the seen-batch mean activations.
    pub fn from_seen_means(seen_means: &[Real]) -> Result<DiagnosticThresholds> {
        if seen_means.is_empty() {
            return Err(arg_err("thresholds", "no features"));
        }
        let mut sorted = seen_means.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
        let rank = |p: Real| -> Real {
            let idx = ((p * sorted.len() as Real).ceil() as usize).clamp(1, sorted.len());
            sorted[idx - 1]
        };
        DiagnosticThresholds::new(rank(0.75), rank(0.25))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLabel {
    Shortcut,
    NonShortcut,
    Inactive,
}

/// Per-feature mean |activation| over a batch of pooled feature vectors
/// (each of length d).
pub fn mean_abs_activation(features: &[Vec<Real>]) -> Result<Vec<Real>> {
    if features.is_empty() {
        return Err(arg_err("mean_abs_activation", "empty batch"));
    }
    let d = features[0].len();
    let mut means = vec![0.0; d];
    for z in features {
        if z.len() != d {
            return Err(arg_err("mean_abs_activation", "ragged feature batch"));
        }
        for (m, &v) in means.iter_mut().zip(z) {
            *m += v.abs();
        }
    }
    for m in &mut means {
        *m /= features.len() as Real;
    }
    Ok(means)
}

/// Labels every feature by its seen/unseen activation pattern: highly
/// activated on both → shortcut; highly activated only on seen data →
/// non-shortcut; everything else inactive.
pub fn classify_features(
    seen: &[Vec<Real>],
    unseen: &[Vec<Real>],
    th: DiagnosticThresholds,
) -> Result<Vec<FeatureLabel>> {
    let seen_means = mean_abs_activation(seen)?;
    let unseen_means = mean_abs_activation(unseen)?;
    if seen_means.len() != unseen_means.len() {
        return Err(arg_err("classify_features", "feature dimensionality differs"));
    }
    Ok(seen_means
        .iter()
        .zip(&unseen_means)
        .map(|(&s, &u)| {
            if s >= th.rho {
                if u >= th.epsilon {
                    FeatureLabel::Shortcut
                } else {
                    FeatureLabel::NonShortcut
                }
            } else {
                FeatureLabel::Inactive
            }
        })
        .collect())
}

/// Mean |activation| over the seen batch, grouped by diagnostic label.
/// A group with no members reports `None`.
pub fn activation_gap(
    seen: &[Vec<Real>],
    labels: &[FeatureLabel],
) -> Result<(Option<Real>, Option<Real>)> {
    let seen_means = mean_abs_activation(seen)?;
    if seen_means.len() != labels.len() {
        return Err(arg_err("activation_gap", "label count differs from features"));
    }
    let group = |want: FeatureLabel| -> Option<Real> {
        let vals: Vec<Real> = seen_means
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == want)
            .map(|(&v, _)| v)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<Real>() / vals.len() as Real)
        }
    };
    Ok((group(FeatureLabel::Shortcut), group(FeatureLabel::NonShortcut)))
}
