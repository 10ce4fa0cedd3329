//! Unconfounded-metric estimation and the confounding test.
//!
//! The restricted null (labels shuffled within confounder levels) keeps the
//! confounder/response association; the reference null (standard shuffle,
//! its normal approximation for AUC, or a baseline matched to a target
//! population) does not. Mapping the observed metric through both Gaussian
//! approximations gives the unconfounded estimate; the location of the
//! restricted null relative to the reference gives the confounding p-value.

use std::fmt;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::{largest_remainder, Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::metrics::{normal_sf, MetricKind};
use crate::par::Execution;
use crate::perm::{
    observed_metric, permutation_null, summarize, NullConfig, NullDistribution, NullSummary, Scheme,
};
use crate::rng;

/// Where a reference null came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    EmpiricalStandard,
    AnalyticAuc,
    BaselineTarget,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::EmpiricalStandard => "empirical-standard",
            Provenance::AnalyticAuc => "analytic-auc",
            Provenance::BaselineTarget => "baseline-target",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn require_spread(restricted: &NullSummary) -> Result<()> {
    if restricted.sd > 0.0 {
        Ok(())
    } else {
        Err(Error::DegenerateNull(
            "restricted null has zero standard deviation".into(),
        ))
    }
}

/// `(m_o - a*) * s** / s* + a**`: the value whose reference-null tail
/// probability equals the observed metric's restricted-null tail probability.
pub fn unconfounded_metric(
    observed: f64,
    restricted: &NullSummary,
    reference: &NullSummary,
) -> Result<f64> {
    require_spread(restricted)?;
    Ok((observed - restricted.mean) * (reference.sd / restricted.sd) + reference.mean)
}

/// Normal approximation of the standard AUC null: mean 1/2, variance
/// `(n_n + n_p + 1) / (12 n_n n_p)`.
pub fn analytic_auc_null(n_neg: usize, n_pos: usize) -> Result<NullSummary> {
    NullSummary::new(0.5, analytic_auc_variance(n_neg, n_pos)?.sqrt(), None)
}

fn analytic_auc_variance(n_neg: usize, n_pos: usize) -> Result<f64> {
    if n_neg == 0 || n_pos == 0 {
        return Err(Error::InvalidArgument(
            "AUC null needs at least one negative and one positive".into(),
        ));
    }
    let (nn, np) = (n_neg as f64, n_pos as f64);
    Ok((nn + np + 1.0) / (12.0 * nn * np))
}

/// Unconfounded AUC against the analytic standard null.
pub fn unconfounded_auc(
    auc_observed: f64,
    restricted: &NullSummary,
    n_neg: usize,
    n_pos: usize,
) -> Result<f64> {
    require_spread(restricted)?;
    let sd = analytic_auc_variance(n_neg, n_pos)?.sqrt();
    Ok((auc_observed - restricted.mean) * sd / restricted.sd + 0.5)
}

/// One-sided confounding p-value `1 - Φ((a* - a**) / (s** / √n))`, with `n`
/// the test-set size (not the number of permutations).
pub fn confounding_pvalue(
    restricted: &NullSummary,
    reference: &NullSummary,
    n_test: usize,
) -> Result<f64> {
    if reference.sd.is_nan() || reference.sd <= 0.0 {
        return Err(Error::DegenerateNull(
            "reference null has zero standard deviation".into(),
        ));
    }
    if n_test == 0 {
        return Err(Error::InvalidArgument("test size must be positive".into()));
    }
    let z = (restricted.mean - reference.mean) / (reference.sd / (n_test as f64).sqrt());
    Ok(normal_sf(z))
}

/// AUC specialization of [`confounding_pvalue`] with the analytic reference.
pub fn auc_confounding_pvalue(
    restricted_mean: f64,
    n_neg: usize,
    n_pos: usize,
    n_test: usize,
) -> Result<f64> {
    if n_test == 0 {
        return Err(Error::InvalidArgument("test size must be positive".into()));
    }
    let var = analytic_auc_variance(n_neg, n_pos)?;
    let z = (restricted_mean - 0.5) / (var / n_test as f64).sqrt();
    Ok(normal_sf(z))
}

/// Joint probabilities of (confounder level, label) in a target population.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetJoint {
    levels: Vec<String>,
    /// `probs[k] = [P(level k, label 0), P(level k, label 1)]`
    probs: Vec<[f64; 2]>,
}

impl TargetJoint {
    pub fn new(levels: Vec<String>, probs: Vec<[f64; 2]>) -> Result<Self> {
        if levels.len() != probs.len() || levels.is_empty() {
            return Err(Error::InvalidArgument(
                "target joint needs one row per level".into(),
            ));
        }
        if probs.iter().flatten().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(
                "target probabilities must be >= 0".into(),
            ));
        }
        let total: f64 = probs.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "target probabilities sum to {total}, not 1"
            )));
        }
        let mut sorted = levels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != levels.len() {
            return Err(Error::InvalidArgument("duplicate target level".into()));
        }
        Ok(Self { levels, probs })
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn probs(&self) -> &[[f64; 2]] {
        &self.probs
    }

    /// Product of this table's marginals: same level and label frequencies,
    /// no association.
    pub fn independence(&self) -> TargetJoint {
        let p1: f64 = self.probs.iter().map(|p| p[1]).sum();
        let probs = self
            .probs
            .iter()
            .map(|p| {
                let level = p[0] + p[1];
                [level * (1.0 - p1), level * p1]
            })
            .collect();
        TargetJoint {
            levels: self.levels.clone(),
            probs,
        }
    }

    /// Whitespace-separated `level label probability` lines; `#` starts a comment.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut levels: Vec<String> = Vec::new();
        let mut probs: Vec<[f64; 2]> = Vec::new();
        for (row, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<target joint>", e))?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Config(format!("target joint line {}: {line:?}", row + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let label: usize = match parts[1] {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad()),
            };
            let p: f64 = parts[2].parse().map_err(|_| bad())?;
            let k = match levels.iter().position(|l| l == parts[0]) {
                Some(k) => k,
                None => {
                    levels.push(parts[0].to_string());
                    probs.push([0.0, 0.0]);
                    levels.len() - 1
                }
            };
            probs[k][label] += p;
        }
        Self::new(levels, probs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}

/// Sizes and seed for [`baseline_subsample`] / [`baseline_null`].
#[derive(Debug, Clone)]
pub struct BaselineOptions {
    /// Must equal the test size behind the development restricted null.
    pub test_size: usize,
    /// `None` takes the largest training set the development data supports.
    pub train_size: Option<usize>,
    pub seed: u64,
}

/// Draw a training and a test set whose (level, label) counts realize the
/// target joint (largest-remainder rounding). Returns the subsample and its
/// split (training rows first).
pub fn baseline_subsample(
    target: &TargetJoint,
    ds: &Dataset,
    opts: &BaselineOptions,
) -> Result<(Dataset, SplitIndices)> {
    let names = ds.confounder().names();
    let mut cells = ds.cells();
    // flatten the target into (dataset level, label, probability) cells
    let mut keys = Vec::new();
    let mut shares = Vec::new();
    for (name, p) in target.levels.iter().zip(&target.probs) {
        let level = names.iter().position(|n| n == name);
        for (label, &share) in p.iter().enumerate() {
            if share == 0.0 {
                continue;
            }
            let level = level.ok_or_else(|| {
                Error::Infeasible(format!("target level {name:?} not present in the data"))
            })?;
            keys.push((level, label as u8));
            shares.push(share);
        }
    }
    let available: Vec<usize> = keys
        .iter()
        .map(|k| cells.get(k).map_or(0, Vec::len))
        .collect();
    let test_counts = largest_remainder(&shares, opts.test_size);
    let spare: Vec<usize> = available
        .iter()
        .zip(&test_counts)
        .map(|(&a, &t)| a.saturating_sub(t))
        .collect();
    if let Some(k) = (0..keys.len()).find(|&k| test_counts[k] > available[k]) {
        return Err(Error::Infeasible(format!(
            "cell ({}, {}) needs {} test rows but has {}",
            names[keys[k].0], keys[k].1, test_counts[k], available[k]
        )));
    }
    let fits = |n: usize| {
        largest_remainder(&shares, n)
            .iter()
            .zip(&spare)
            .all(|(c, s)| c <= s)
    };
    let train_size = match opts.train_size {
        Some(n) => {
            if !fits(n) {
                return Err(Error::Infeasible(format!(
                    "not enough rows for a baseline training set of {n}"
                )));
            }
            n
        }
        None => {
            let total: f64 = shares.iter().sum();
            let mut n = shares
                .iter()
                .zip(&spare)
                .map(|(s, &a)| (a as f64 / (s / total)).floor() as usize)
                .min()
                .unwrap_or(0);
            while n > 0 && !fits(n) {
                n -= 1;
            }
            n
        }
    };
    let train_counts = largest_remainder(&shares, train_size);
    let mut rng = rng::stream(opts.seed, rng::tag::SUBSAMPLE);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (k, key) in keys.iter().enumerate() {
        let members = cells.get_mut(key).expect("feasibility checked above");
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..test_counts[k]]);
        train.extend_from_slice(&members[test_counts[k]..test_counts[k] + train_counts[k]]);
    }
    let has_both = |rows: &[usize]| {
        rows.iter().any(|&i| ds.labels()[i] == 1) && rows.iter().any(|&i| ds.labels()[i] == 0)
    };
    if !has_both(&train) || !has_both(&test) {
        return Err(Error::Infeasible(
            "baseline train and test sets need both classes".into(),
        ));
    }
    train.sort_unstable();
    test.sort_unstable();
    let n_train = train.len();
    let rows: Vec<usize> = train.into_iter().chain(test).collect();
    let sub = ds.subset(&rows);
    let split = SplitIndices::new(
        (0..n_train).collect(),
        (n_train..rows.len()).collect(),
        rows.len(),
    )?;
    Ok((sub, split))
}

/// Restricted permutation null on a subsample realizing the target joint.
pub fn baseline_null(
    target: &TargetJoint,
    ds: &Dataset,
    learner: &LearnerSpec,
    metric: MetricKind,
    permutations: usize,
    opts: &BaselineOptions,
    execution: Execution,
) -> Result<NullDistribution> {
    let (sub, split) = baseline_subsample(target, ds, opts)?;
    let cfg = NullConfig {
        metric,
        scheme: Scheme::Baseline,
        permutations,
        seed: rng::child_seed(opts.seed, rng::tag::BASELINE),
        execution,
    };
    permutation_null(learner, &sub, &split, &cfg)
}

/// Unconfounded estimate and p-value against one reference null.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceResult {
    pub provenance: Provenance,
    pub summary: NullSummary,
    pub unconfounded: f64,
    pub pvalue: f64,
}

impl ReferenceResult {
    pub fn new(
        provenance: Provenance,
        observed: f64,
        restricted: &NullSummary,
        reference: NullSummary,
        n_test: usize,
    ) -> Result<Self> {
        Ok(Self {
            provenance,
            summary: reference,
            unconfounded: unconfounded_metric(observed, restricted, &reference)?,
            pvalue: confounding_pvalue(restricted, &reference, n_test)?,
        })
    }
}

/// Outcome of one confounding analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundingReport {
    pub metric: MetricKind,
    pub learner: String,
    pub permutations: usize,
    pub seed: u64,
    pub observed: f64,
    pub restricted: NullSummary,
    /// Primary reference.
    pub reference: ReferenceResult,
    /// Other references computed alongside (e.g. analytic AUC next to empirical).
    pub alternatives: Vec<ReferenceResult>,
    pub n_test: usize,
    pub n_negative: usize,
    pub n_positive: usize,
    pub notes: Vec<String>,
}

pub const REPORT_VERSION: &str = "1";

impl ConfoundingReport {
    pub fn unconfounded(&self) -> f64 {
        self.reference.unconfounded
    }

    pub fn pvalue(&self) -> f64 {
        self.reference.pvalue
    }

    /// Sectioned `key = value` report.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "# confound report v{REPORT_VERSION}").unwrap();
        writeln!(w, "[analysis]").unwrap();
        writeln!(w, "metric = {}", self.metric).unwrap();
        writeln!(w, "learner = {}", self.learner).unwrap();
        writeln!(w, "permutations = {}", self.permutations).unwrap();
        writeln!(w, "seed = {}", self.seed).unwrap();
        writeln!(w, "n_test = {}", self.n_test).unwrap();
        writeln!(w, "n_negative = {}", self.n_negative).unwrap();
        writeln!(w, "n_positive = {}", self.n_positive).unwrap();
        writeln!(w, "observed = {}", self.observed).unwrap();
        writeln!(w, "\n[restricted]").unwrap();
        write_summary(w, &self.restricted);
        for (i, r) in std::iter::once(&self.reference)
            .chain(&self.alternatives)
            .enumerate()
        {
            if i == 0 {
                writeln!(w, "\n[reference]").unwrap();
            } else {
                writeln!(w, "\n[alternative {}]", r.provenance).unwrap();
            }
            writeln!(w, "provenance = {}", r.provenance).unwrap();
            write_summary(w, &r.summary);
            writeln!(w, "unconfounded = {}", r.unconfounded).unwrap();
            writeln!(w, "pvalue = {}", r.pvalue).unwrap();
        }
        if !self.notes.is_empty() {
            writeln!(w, "\n[notes]").unwrap();
            for (i, note) in self.notes.iter().enumerate() {
                writeln!(w, "note{} = {note}", i + 1).unwrap();
            }
        }
        out
    }

    /// Single tab-separated line for pipelines.
    pub fn summary_line(&self) -> String {
        format!(
            "CONFOUND\tv{REPORT_VERSION}\tmetric={}\tobserved={}\trestricted_mean={}\trestricted_sd={}\treference={}\treference_mean={}\treference_sd={}\tunconfounded={}\tpvalue={}\tn_test={}",
            self.metric,
            self.observed,
            self.restricted.mean,
            self.restricted.sd,
            self.reference.provenance,
            self.reference.summary.mean,
            self.reference.summary.sd,
            self.reference.unconfounded,
            self.reference.pvalue,
            self.n_test
        )
    }
}

fn write_summary(w: &mut String, s: &NullSummary) {
    writeln!(w, "mean = {}", s.mean).unwrap();
    writeln!(w, "sd = {}", s.sd).unwrap();
    match s.count {
        Some(b) => writeln!(w, "count = {b}").unwrap(),
        None => writeln!(w, "count = analytic").unwrap(),
    }
}

/// Which reference null the primary result uses.
#[derive(Debug, Clone)]
pub enum ReferenceChoice {
    EmpiricalStandard,
    /// AUC only; skips the empirical standard null.
    AnalyticAuc,
    /// Baseline null on a subsample matched to the target joint; its test
    /// set has the same size as the development test set.
    Baseline(TargetJoint),
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub learner: LearnerSpec,
    pub metric: MetricKind,
    pub permutations: usize,
    pub seed: u64,
    pub reference: ReferenceChoice,
    pub execution: Execution,
}

/// Report plus the raw null samples behind it.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: ConfoundingReport,
    pub restricted: NullDistribution,
    pub standard: Option<NullDistribution>,
    pub baseline: Option<NullDistribution>,
}

/// Observed metric, restricted null, reference null(s), unconfounded
/// estimate and confounding p-value for one train/test split.
pub fn analyze(ds: &Dataset, split: &SplitIndices, cfg: &AnalysisConfig) -> Result<Analysis> {
    if matches!(cfg.reference, ReferenceChoice::AnalyticAuc) && cfg.metric != MetricKind::Auc {
        return Err(Error::InvalidArgument(
            "the analytic reference exists only for AUC".into(),
        ));
    }
    let observed = observed_metric(&cfg.learner, ds, split, cfg.metric)?;
    let null_cfg = |scheme, tag| NullConfig {
        metric: cfg.metric,
        scheme,
        permutations: cfg.permutations,
        seed: rng::child_seed(cfg.seed, tag),
        execution: cfg.execution,
    };
    let restricted = permutation_null(
        &cfg.learner,
        ds,
        split,
        &null_cfg(Scheme::Restricted, rng::tag::RESTRICTED),
    )?;
    let restricted_summary = summarize(&restricted)?;
    require_spread(&restricted_summary)?;

    let n_test = split.test.len();
    let n_positive = split.test.iter().filter(|&&i| ds.labels()[i] == 1).count();
    let n_negative = n_test - n_positive;
    let reference_result =
        |prov, summary| ReferenceResult::new(prov, observed, &restricted_summary, summary, n_test);

    let mut results = Vec::new();
    let mut standard = None;
    let mut baseline = None;
    match &cfg.reference {
        ReferenceChoice::EmpiricalStandard => {
            let nd = permutation_null(
                &cfg.learner,
                ds,
                split,
                &null_cfg(Scheme::Standard, rng::tag::STANDARD),
            )?;
            results.push(reference_result(
                Provenance::EmpiricalStandard,
                summarize(&nd)?,
            )?);
            standard = Some(nd);
        }
        ReferenceChoice::AnalyticAuc => {}
        ReferenceChoice::Baseline(target) => {
            let opts = BaselineOptions {
                test_size: n_test,
                train_size: None,
                seed: rng::child_seed(cfg.seed, rng::tag::BASELINE),
            };
            let nd = baseline_null(
                target,
                ds,
                &cfg.learner,
                cfg.metric,
                cfg.permutations,
                &opts,
                cfg.execution,
            )?;
            results.push(reference_result(
                Provenance::BaselineTarget,
                summarize(&nd)?,
            )?);
            baseline = Some(nd);
        }
    }
    if cfg.metric == MetricKind::Auc {
        let analytic = analytic_auc_null(n_negative, n_positive)?;
        let mut r = reference_result(Provenance::AnalyticAuc, analytic)?;
        // the dedicated AUC forms, identical up to rounding
        r.unconfounded = unconfounded_auc(observed, &restricted_summary, n_negative, n_positive)?;
        r.pvalue = auc_confounding_pvalue(restricted_summary.mean, n_negative, n_positive, n_test)?;
        results.push(r);
    }
    let mut results = results.into_iter();
    let reference = results
        .next()
        .expect("at least one reference is always computed");

    let mut notes = Vec::new();
    let dup = duplicate_rows(ds, &split.test);
    if dup > 0 {
        notes.push(format!(
            "test set contains {dup} duplicated rows (expected after resampling adjustment)"
        ));
    }
    Ok(Analysis {
        report: ConfoundingReport {
            metric: cfg.metric,
            learner: cfg.learner.name().to_string(),
            permutations: cfg.permutations,
            seed: cfg.seed,
            observed,
            restricted: restricted_summary,
            reference,
            alternatives: results.collect(),
            n_test,
            n_negative,
            n_positive,
            notes,
        },
        restricted,
        standard,
        baseline,
    })
}

fn duplicate_rows(ds: &Dataset, rows: &[usize]) -> usize {
    let mut keys: Vec<(Vec<u64>, u8, usize)> = rows
        .iter()
        .map(|&i| {
            (
                ds.features().row(i).iter().map(|v| v.to_bits()).collect(),
                ds.labels()[i],
                ds.confounder().levels()[i],
            )
        })
        .collect();
    keys.sort();
    keys.windows(2).filter(|w| w[0] == w[1]).count()
}
