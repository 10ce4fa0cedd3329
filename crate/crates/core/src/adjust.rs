//! Confounding adjustment: exact 1:1 matching within confounder levels and
//! inverse probability weighting with logistic propensity scores.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;

use crate::data::{Confounder, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::learners::{fit_logistic, LogisticConfig, LogisticModel};
use crate::rng;

/// Propensity scores are clipped to `[PROPENSITY_CLIP, 1 - PROPENSITY_CLIP]`.
pub const PROPENSITY_CLIP: f64 = 1e-3;

/// Within each confounder level keep every row of the minority class and a
/// uniform subsample of the majority class of the same size. Levels missing
/// a class are dropped. Returns sorted row indices.
pub fn match_exact(ds: &Dataset, seed: u64) -> Result<Vec<usize>> {
    let mut rng = rng::stream(seed, 0);
    let n_levels = ds.confounder().n_levels();
    let mut by_level: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; n_levels];
    for (i, (&c, &y)) in ds.confounder().levels().iter().zip(ds.labels()).enumerate() {
        by_level[c][usize::from(y)].push(i);
    }
    let mut keep = Vec::new();
    for [controls, cases] in &mut by_level {
        let k = controls.len().min(cases.len());
        if k == 0 {
            continue;
        }
        for group in [controls, cases] {
            if group.len() > k {
                group.shuffle(&mut rng);
            }
            keep.extend_from_slice(&group[..k]);
        }
    }
    if keep.is_empty() {
        return Err(Error::Infeasible(
            "no confounder level contains both classes".into(),
        ));
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Estimated `P(label = 1 | confounders)` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityScores {
    scores: Vec<f64>,
    model: LogisticModel,
}

impl PropensityScores {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn model(&self) -> &LogisticModel {
        &self.model
    }
}

/// Reference-coded indicators (first level dropped) for a categorical variable.
pub fn one_hot(c: &Confounder) -> Matrix {
    let cols = c.n_levels().saturating_sub(1).max(1);
    let mut m = Matrix::zeros(c.len(), cols);
    for (i, &level) in c.levels().iter().enumerate() {
        if level > 0 {
            m.set(i, level - 1, 1.0);
        }
    }
    m
}

/// Logistic regression of the label on confounder level indicators. With one
/// indicator per level the model is saturated and reproduces the per-level
/// case fractions.
pub fn estimate_propensity(
    c: &Confounder,
    labels: &[u8],
    cfg: &LogisticConfig,
) -> Result<PropensityScores> {
    estimate_propensity_from_covariates(&one_hot(c), labels, cfg)
}

/// Logistic propensity model on arbitrary numeric covariates.
pub fn estimate_propensity_from_covariates(
    covariates: &Matrix,
    labels: &[u8],
    cfg: &LogisticConfig,
) -> Result<PropensityScores> {
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::SingleClass);
    }
    let fit = fit_logistic(covariates, labels, &vec![1.0; labels.len()], cfg)?;
    let scores = (0..covariates.rows())
        .map(|i| {
            fit.model
                .score(covariates.row(i))
                .clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
        })
        .collect();
    Ok(PropensityScores {
        scores,
        model: fit.model,
    })
}

/// `1/ps` for cases, `1/(1-ps)` for controls.
pub fn ipw_weights(labels: &[u8], ps: &PropensityScores) -> Result<Vec<f64>> {
    if labels.len() != ps.scores.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            got: ps.scores.len(),
        });
    }
    Ok(labels
        .iter()
        .zip(&ps.scores)
        .map(|(&y, &p)| if y == 1 { 1.0 / p } else { 1.0 / (1.0 - p) })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpwMode {
    /// Attach inverse-probability weights normalized to mean 1.
    Weights,
    /// Draw rows with replacement, probability ∝ weight. `None` keeps the
    /// input size.
    Resample { size: Option<usize> },
}

/// Inverse probability weighting, either as attached weights or as an
/// augmented (resampled) dataset.
pub fn ipw_augment(
    ds: &Dataset,
    ps: &PropensityScores,
    mode: IpwMode,
    seed: u64,
) -> Result<Dataset> {
    let w = ipw_weights(ds.labels(), ps)?;
    match mode {
        IpwMode::Weights => {
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            ds.clone()
                .with_weights(w.iter().map(|v| v / mean).collect())
        }
        IpwMode::Resample { size } => {
            let rows = ipw_resample_indices(&w, size.unwrap_or(ds.n()), seed)?;
            Ok(ds.subset(&rows).without_weights())
        }
    }
}

/// Row indices drawn with replacement with probability proportional to `w`.
pub fn ipw_resample_indices(w: &[f64], size: usize, seed: u64) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(Error::InvalidArgument(
            "resample size must be positive".into(),
        ));
    }
    let dist = WeightedIndex::new(w)
        .map_err(|e| Error::InvalidArgument(format!("resampling weights: {e}")))?;
    let mut rng = rng::stream(seed, 0);
    Ok((0..size).map(|_| dist.sample(&mut rng)).collect())
}

/// One row of a [`BalanceTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub level: usize,
    pub name: String,
    pub controls: f64,
    pub cases: f64,
}

impl BalanceRow {
    pub fn total(&self) -> f64 {
        self.controls + self.cases
    }

    pub fn case_fraction(&self) -> f64 {
        self.cases / self.total()
    }
}

/// Confounder level by label masses (row weights when present, else counts),
/// observed levels only.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceTable {
    pub rows: Vec<BalanceRow>,
}

impl BalanceTable {
    pub fn total(&self) -> f64 {
        self.rows.iter().map(BalanceRow::total).sum()
    }

    pub fn case_fraction(&self) -> f64 {
        self.rows.iter().map(|r| r.cases).sum::<f64>() / self.total()
    }

    /// Sample-weighted mean absolute deviation of per-level case fractions
    /// from the overall case fraction; zero when perfectly balanced.
    pub fn imbalance(&self) -> f64 {
        let overall = self.case_fraction();
        self.rows
            .iter()
            .map(|r| r.total() * (r.case_fraction() - overall).abs())
            .sum::<f64>()
            / self.total()
    }

    /// `level, controls, cases, case_fraction` as TSV.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("level\tcontrols\tcases\tcase_fraction\n");
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.name,
                r.controls,
                r.cases,
                r.case_fraction()
            )
            .unwrap();
        }
        out
    }
}

pub fn balance_table(ds: &Dataset) -> BalanceTable {
    let c = ds.confounder();
    let w = ds.weights_or_ones();
    let mut counts = vec![[0.0f64; 2]; c.n_levels()];
    let mut seen = vec![false; c.n_levels()];
    for ((&level, &y), &wi) in c.levels().iter().zip(ds.labels()).zip(&w) {
        counts[level][usize::from(y)] += wi;
        seen[level] = true;
    }
    BalanceTable {
        rows: counts
            .into_iter()
            .enumerate()
            .filter(|(level, _)| seen[*level])
            .map(|(level, [controls, cases])| BalanceRow {
                level,
                name: c.names()[level].clone(),
                controls,
                cases,
            })
            .collect(),
    }
}
