//! Performance metrics and the standard normal distribution function.
//!
//! AUC is computed from midranks (Mann-Whitney), so tied scores contribute
//! one half per positive/negative pair.

use std::fmt;
use std::str::FromStr;

use libm::erfc;

use crate::error::{Error, Result};

/// Metric computed on a scored test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Auc,
    Accuracy,
    Mse,
    Mae,
}

impl MetricKind {
    /// Metric value for scores against binary labels.
    pub fn evaluate(self, scores: &[f64], labels: &[f64]) -> Result<f64> {
        let s = ScoredTestSet::new(scores, labels)?;
        match self {
            MetricKind::Auc => auc(&s),
            MetricKind::Accuracy => mean_metric(MeanMetric::Accuracy, &s, 0.5),
            MetricKind::Mse => mean_metric(MeanMetric::Mse, &s, 0.5),
            MetricKind::Mae => mean_metric(MeanMetric::Mae, &s, 0.5),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Auc => "auc",
            MetricKind::Accuracy => "accuracy",
            MetricKind::Mse => "mse",
            MetricKind::Mae => "mae",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auc" => Ok(MetricKind::Auc),
            "accuracy" => Ok(MetricKind::Accuracy),
            "mse" => Ok(MetricKind::Mse),
            "mae" => Ok(MetricKind::Mae),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Metrics that are plain averages over test samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanMetric {
    Accuracy,
    Mse,
    Mae,
}

/// Scores paired with labels.
#[derive(Debug, Clone, Copy)]
pub struct ScoredTestSet<'a> {
    scores: &'a [f64],
    labels: &'a [f64],
}

impl<'a> ScoredTestSet<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [f64]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: scores.len(),
                got: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(Error::EmptyInput);
        }
        if scores.iter().chain(labels).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite score or label".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        self.scores
    }

    pub fn labels(&self) -> &[f64] {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// (negatives, positives); errors unless labels are binary.
    pub fn class_counts(&self) -> Result<(usize, usize)> {
        let mut counts = (0, 0);
        for &y in self.labels {
            if y == 0.0 {
                counts.0 += 1;
            } else if y == 1.0 {
                counts.1 += 1;
            } else {
                return Err(Error::InvalidArgument(format!("label {y} is not binary")));
            }
        }
        Ok(counts)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (nn, np) = self.class_counts()?;
        if nn == 0 || np == 0 {
            return Err(Error::SingleClass);
        }
        Ok((nn, np))
    }
}

/// Midranks (1-based) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share the average of ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve via the positive-class rank sum.
pub fn auc(s: &ScoredTestSet<'_>) -> Result<f64> {
    let (nn, np) = s.require_both_classes()?;
    let ranks = midranks(s.scores);
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(s.labels)
        .filter(|(_, &y)| y == 1.0)
        .map(|(r, _)| r)
        .sum();
    let (nn, np) = (nn as f64, np as f64);
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (nn * np))
}

/// AUC by explicit comparison of every positive/negative pair. O(n_p * n_n);
/// kept as an independent check on [`auc`].
pub fn auc_pairwise_oracle(s: &ScoredTestSet<'_>) -> Result<f64> {
    let (nn, np) = s.require_both_classes()?;
    let mut total = 0.0;
    for (sp, _) in s.scores.iter().zip(s.labels).filter(|(_, &y)| y == 1.0) {
        for (sn, _) in s.scores.iter().zip(s.labels).filter(|(_, &y)| y == 0.0) {
            total += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(total / (nn as f64 * np as f64))
}

/// Mann-Whitney U of the negative class from its rank sum, `R_n - n_n(n_n+1)/2`.
/// On tie-free data it equals `n_n * n_p * (1 - AUC)`.
pub fn mann_whitney_u(s: &ScoredTestSet<'_>) -> Result<f64> {
    let (nn, _) = s.require_both_classes()?;
    let ranks = midranks(s.scores);
    let rank_sum_neg: f64 = ranks
        .iter()
        .zip(s.labels)
        .filter(|(_, &y)| y == 0.0)
        .map(|(r, _)| r)
        .sum();
    let nn = nn as f64;
    Ok(rank_sum_neg - nn * (nn + 1.0) / 2.0)
}

/// Accuracy (score >= threshold predicts 1), mean squared or mean absolute error.
pub fn mean_metric(kind: MeanMetric, s: &ScoredTestSet<'_>, threshold: f64) -> Result<f64> {
    let m = s.len() as f64;
    let pairs = s.scores.iter().zip(s.labels);
    let total: f64 = match kind {
        MeanMetric::Accuracy => {
            s.class_counts()?;
            pairs
                .filter(|(&p, &y)| (p >= threshold) == (y == 1.0))
                .count() as f64
        }
        MeanMetric::Mse => pairs.map(|(p, y)| (p - y) * (p - y)).sum(),
        MeanMetric::Mae => pairs.map(|(p, y)| (p - y).abs()).sum(),
    };
    Ok(total / m)
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(x)`, accurate far into the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}
