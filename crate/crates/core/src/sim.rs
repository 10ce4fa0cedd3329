//! Synthetic data and the power / type-I error harness for the confounding
//! test.
//!
//! The generative model has a binary confounder `C` and response `Y` drawn
//! jointly from a 2x2 table, and features
//! `X_ij = beta_y * Y_i + beta_c * C_i + e_ij` with standard normal noise.

use std::fmt::Write as _;

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Normal, StandardNormal};

use crate::data::{
    combine_confounders, discretize, stratified_split, Confounder, Dataset, DiscretizationSpec,
    Matrix, SplitIndices, Table,
};
use crate::error::{Error, Result};
use crate::inference::auc_confounding_pvalue;
use crate::learners::{LearnerSpec, LogisticConfig};
use crate::metrics::MetricKind;
use crate::par::Execution;
use crate::perm::{permutation_null, summarize, NullConfig, Scheme};
use crate::rng;

/// `joint[c][y] = P(C = c, Y = y)`.
pub type JointTable = [[f64; 2]; 2];

pub fn validate_joint(joint: &JointTable) -> Result<()> {
    let cells = joint.iter().flatten();
    if cells.clone().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(
            "joint table entries must be >= 0".into(),
        ));
    }
    let total: f64 = cells.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "joint table sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// 2x2 table with the given margins `P(C=1)`, `P(Y=1)` and odds ratio.
pub fn joint_from_odds_ratio(p_c: f64, p_y: f64, odds_ratio: f64) -> Result<JointTable> {
    if !(0.0 < p_c && p_c < 1.0 && 0.0 < p_y && p_y < 1.0 && odds_ratio > 0.0) {
        return Err(Error::InvalidArgument(
            "margins in (0,1) and odds ratio > 0".into(),
        ));
    }
    // p11 solves (p11 (1 - p_c - p_y + p11)) = OR (p_c - p11)(p_y - p11)
    let p11 = if (odds_ratio - 1.0).abs() < 1e-12 {
        p_c * p_y
    } else {
        let a = 1.0 - odds_ratio;
        let b = 1.0 - p_c - p_y + odds_ratio * (p_c + p_y);
        let c = -odds_ratio * p_c * p_y;
        let disc = (b * b - 4.0 * a * c).sqrt();
        let r1 = (-b + disc) / (2.0 * a);
        let r2 = (-b - disc) / (2.0 * a);
        let lo = (p_c + p_y - 1.0).max(0.0);
        let hi = p_c.min(p_y);
        if (lo..=hi).contains(&r1) {
            r1
        } else {
            r2
        }
    };
    let joint = [[1.0 - p_c - p_y + p11, p_y - p11], [p_c - p11, p11]];
    validate_joint(&joint)?;
    Ok(joint)
}

/// `n` i.i.d. draws of `(C, Y)` from the four-cell categorical distribution.
pub fn sample_bivariate_bernoulli(
    joint: &JointTable,
    n: usize,
    seed: u64,
) -> Result<(Vec<u8>, Vec<u8>)> {
    validate_joint(joint)?;
    let mut rng = rng::stream(seed, 0);
    let cum = [
        joint[0][0],
        joint[0][0] + joint[0][1],
        joint[0][0] + joint[0][1] + joint[1][0],
    ];
    let mut c = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let cell = cum.iter().take_while(|&&t| u >= t).count();
        // guard against a last cell of zero mass absorbing rounding
        let cell = if cell == 3 && joint[1][1] == 0.0 {
            (0..3)
                .rev()
                .find(|&k| joint[k / 2][k % 2] > 0.0)
                .unwrap_or(0)
        } else {
            cell
        };
        c.push((cell / 2) as u8);
        y.push((cell % 2) as u8);
    }
    Ok((c, y))
}

/// Parameters of one simulated data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub id: String,
    pub joint: JointTable,
    pub n_samples: usize,
    pub n_features: usize,
    pub beta_y: f64,
    pub beta_c: f64,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        validate_joint(&self.joint)?;
        if self.n_samples < 4 {
            return Err(Error::InvalidArgument("n_samples must be >= 4".into()));
        }
        if self.n_features == 0 {
            return Err(Error::InvalidArgument("n_features must be >= 1".into()));
        }
        if !self.beta_y.is_finite() || !self.beta_c.is_finite() {
            return Err(Error::InvalidArgument("effect sizes must be finite".into()));
        }
        Ok(())
    }
}

/// `X_ij = beta_y * Y_i + beta_c * C_i + e_ij`, `e ~ N(0, 1)`.
pub fn generate_features(c: &[u8], y: &[u8], scenario: &SimScenario, seed: u64) -> Result<Matrix> {
    if c.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: c.len(),
            got: y.len(),
        });
    }
    let p = scenario.n_features;
    let mut rng = rng::stream(seed, 1);
    let mut data = Vec::with_capacity(c.len() * p);
    for (&ci, &yi) in c.iter().zip(y) {
        let mean = scenario.beta_y * f64::from(yi) + scenario.beta_c * f64::from(ci);
        for _ in 0..p {
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(mean + e);
        }
    }
    Matrix::new(c.len(), p, data)
}

/// A full synthetic dataset for `scenario`; confounder levels are named
/// `"0"` and `"1"` after the value of `C`.
pub fn simulate_dataset(scenario: &SimScenario, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    let (c, y) = sample_bivariate_bernoulli(&scenario.joint, scenario.n_samples, seed)?;
    let x = generate_features(&c, &y, scenario, seed)?;
    let conf = Confounder::new(
        c.iter().map(|&v| usize::from(v)).collect(),
        vec!["0".into(), "1".into()],
    )?;
    Dataset::new(x, y, conf)
}

/// Harness settings shared by all replicates.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub replicates: usize,
    pub permutations: usize,
    pub test_fraction: f64,
    pub alphas: Vec<f64>,
    pub learner: LearnerSpec,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            permutations: 300,
            test_fraction: 0.5,
            alphas: default_alpha_grid(),
            learner: LearnerSpec::Logistic(LogisticConfig::default()),
            execution: Execution::default(),
        }
    }
}

/// `0, 0.01, ..., 0.15`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=15).map(|k| f64::from(k) / 100.0).collect()
}

/// C-Y odds ratio of the default scenarios.
pub const DEFAULT_ODDS_RATIO: f64 = 1.5;

/// The default scenario set: strong / moderate / weak confounding
/// (`beta_c` 0.8 / 0.4 / 0.2), then two scenarios without confounding
/// signal, with and without response signal. All share balanced margins and
/// [`DEFAULT_ODDS_RATIO`].
pub fn default_scenarios() -> Vec<SimScenario> {
    let joint = joint_from_odds_ratio(0.5, 0.5, DEFAULT_ODDS_RATIO).expect("valid margins");
    let base = |id: &str, joint, beta_y, beta_c| SimScenario {
        id: id.into(),
        joint,
        n_samples: 600,
        n_features: 10,
        beta_y,
        beta_c,
    };
    vec![
        base("strong", joint, 0.3, 0.8),
        base("moderate", joint, 0.3, 0.4),
        base("weak", joint, 0.3, 0.2),
        base("null", joint, 0.0, 0.0),
        base("null-signal", joint, 0.3, 0.0),
    ]
}

/// Confounding p-value for one simulated dataset: split, restricted AUC null,
/// analytic reference.
pub fn replicate_pvalue(scenario: &SimScenario, cfg: &ExperimentConfig, seed: u64) -> Result<f64> {
    let ds = simulate_dataset(scenario, rng::child_seed(seed, rng::tag::DATA))?;
    let split = stratified_split(
        &ds,
        cfg.test_fraction,
        rng::child_seed(seed, rng::tag::SPLIT),
    )?;
    replicate_pvalue_on(&ds, &split, cfg, seed)
}

fn replicate_pvalue_on(
    ds: &Dataset,
    split: &SplitIndices,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<f64> {
    let null_cfg = NullConfig {
        metric: MetricKind::Auc,
        scheme: Scheme::Restricted,
        permutations: cfg.permutations,
        seed: rng::child_seed(seed, rng::tag::RESTRICTED),
        execution: cfg.execution,
    };
    let nd = permutation_null(&cfg.learner, ds, split, &null_cfg)?;
    let summary = summarize(&nd)?;
    let n_test = split.test.len();
    let n_pos = split.test.iter().filter(|&&i| ds.labels()[i] == 1).count();
    auc_confounding_pvalue(summary.mean, n_test - n_pos, n_pos, n_test)
}

fn validate_experiment(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be >= 1".into()));
    }
    if cfg.permutations < 2 {
        return Err(Error::InvalidArgument("permutations must be >= 2".into()));
    }
    if cfg.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidArgument(
            "alpha grid must lie in [0,1]".into(),
        ));
    }
    Ok(())
}

/// Raw p-values of `scenario` over `cfg.replicates` simulated datasets.
/// Replicates are seeded by index, so results do not depend on scheduling.
pub fn scenario_pvalues(
    scenario: &SimScenario,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    validate_experiment(cfg)?;
    scenario.validate()?;
    let base = rng::child_seed(seed, rng::tag::REPLICATE);
    cfg.execution.try_map(cfg.replicates, |r| {
        replicate_pvalue(scenario, cfg, rng::child_seed(base, r as u64)).map_err(|e| {
            Error::Replicate {
                replicate: r,
                source: Box::new(e),
            }
        })
    })
}

/// P-values under no confounding signal (`beta_c = 0`).
pub fn run_type1_experiment(
    scenario: &SimScenario,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if scenario.beta_c != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "type I experiment needs beta_c = 0, scenario {:?} has {}",
            scenario.id, scenario.beta_c
        )));
    }
    scenario_pvalues(scenario, cfg, seed)
}

/// Empirical rejection rate over a grid of significance levels.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCurve {
    pub scenario: String,
    pub alphas: Vec<f64>,
    pub power: Vec<f64>,
    pub replicates: usize,
    pub pvalues: Vec<f64>,
}

impl PowerCurve {
    /// Rejection means `p <= alpha`; `alpha = 0` therefore rejects only exact zeros.
    pub fn from_pvalues(scenario: impl Into<String>, pvalues: Vec<f64>, alphas: &[f64]) -> Self {
        let n = pvalues.len() as f64;
        let power: Vec<f64> = alphas
            .iter()
            .map(|&a| {
                if a == 0.0 {
                    0.0
                } else {
                    pvalues.iter().filter(|&&p| p <= a).count() as f64 / n
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..alphas.len()).collect();
        order.sort_by(|&i, &j| alphas[i].total_cmp(&alphas[j]));
        debug_assert!(order.windows(2).all(|w| power[w[0]] <= power[w[1]]));
        Self {
            scenario: scenario.into(),
            alphas: alphas.to_vec(),
            power,
            replicates: pvalues.len(),
            pvalues,
        }
    }

    pub fn power_at(&self, alpha: f64) -> Option<f64> {
        self.alphas
            .iter()
            .position(|&a| (a - alpha).abs() < 1e-12)
            .map(|i| self.power[i])
    }
}

/// Power curves for each scenario; scenario `s` is seeded from
/// `child_seed(seed, s)`.
pub fn run_power_experiment(
    scenarios: &[SimScenario],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<PowerCurve>> {
    scenarios
        .iter()
        .enumerate()
        .map(|(s, scenario)| {
            let p = scenario_pvalues(scenario, cfg, rng::child_seed(seed, s as u64))?;
            Ok(PowerCurve::from_pvalues(
                scenario.id.clone(),
                p,
                &cfg.alphas,
            ))
        })
        .collect()
}

/// `scenario, replicate, pvalue` TSV.
pub fn pvalues_tsv(curves: &[PowerCurve]) -> String {
    let mut out = String::from("scenario\treplicate\tpvalue\n");
    for c in curves {
        for (r, p) in c.pvalues.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", c.scenario, r, p).unwrap();
        }
    }
    out
}

/// `scenario, alpha, power, replicates` TSV.
pub fn power_tsv(curves: &[PowerCurve]) -> String {
    let mut out = String::from("scenario\talpha\tpower\treplicates\n");
    for c in curves {
        for (a, p) in c.alphas.iter().zip(&c.power) {
            writeln!(out, "{}\t{}\t{}\t{}", c.scenario, a, p, c.replicates).unwrap();
        }
    }
    out
}

/// A clinical-style cohort where age and gender confound a disease label:
/// cases are older and more often female, and every feature mixes disease,
/// age and gender signal.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub train_cases: usize,
    pub train_controls: usize,
    pub test_cases: usize,
    pub test_controls: usize,
    pub n_features: usize,
    pub case_age: (f64, f64),
    pub control_age: (f64, f64),
    pub case_female: f64,
    pub control_female: f64,
    pub beta_disease: f64,
    /// Per 10 years of age.
    pub beta_age: f64,
    pub beta_female: f64,
    /// Age bins for the combined gender/age confounder.
    pub age_bins: DiscretizationSpec,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            train_cases: 658,
            train_controls: 2144,
            test_cases: 331,
            test_controls: 1255,
            n_features: 10,
            case_age: (62.0, 10.0),
            control_age: (38.0, 13.0),
            case_female: 0.4,
            control_female: 0.2,
            beta_disease: 0.15,
            beta_age: 0.25,
            beta_female: 0.3,
            age_bins: DiscretizationSpec::parse("18-44,45-65,66-99").expect("valid bins"),
        }
    }
}

/// A generated cohort. `dataset` carries the combined gender:age-bin
/// confounder; raw age and gender are kept for propensity modelling.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub dataset: Dataset,
    pub split: SplitIndices,
    pub age: Vec<f64>,
    pub female: Vec<u8>,
}

impl Cohort {
    /// Raw columns `x1..xp, label, gender, age`, suitable for CSV export.
    pub fn table(&self) -> Table {
        let ds = &self.dataset;
        let mut header = ds.feature_names().to_vec();
        header.extend(["label".to_string(), "gender".to_string(), "age".to_string()]);
        let rows = (0..ds.n())
            .map(|i| {
                let mut row: Vec<String> =
                    ds.features().row(i).iter().map(f64::to_string).collect();
                row.push(ds.labels()[i].to_string());
                row.push(
                    if self.female[i] == 1 {
                        "female"
                    } else {
                        "male"
                    }
                    .to_string(),
                );
                row.push(self.age[i].to_string());
                row
            })
            .collect();
        Table { header, rows }
    }
}

pub fn generate_cohort(spec: &CohortSpec, seed: u64) -> Result<Cohort> {
    let mut rng = rng::stream(seed, rng::tag::DATA);
    let case_age = Normal::new(spec.case_age.0, spec.case_age.1)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let control_age = Normal::new(spec.control_age.0, spec.control_age.1)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n_train = spec.train_cases + spec.train_controls;
    let n = n_train + spec.test_cases + spec.test_controls;
    let blocks = [
        (spec.train_cases, 1u8),
        (spec.train_controls, 0u8),
        (spec.test_cases, 1u8),
        (spec.test_controls, 0u8),
    ];
    let p = spec.n_features;
    let (mut labels, mut age, mut female) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut data = Vec::with_capacity(n * p);
    for (count, y) in blocks {
        for _ in 0..count {
            let (dist, p_female) = if y == 1 {
                (&case_age, spec.case_female)
            } else {
                (&control_age, spec.control_female)
            };
            let a = dist.sample(&mut rng).round().clamp(18.0, 99.0);
            let f = u8::from(rng.random::<f64>() < p_female);
            let mean = spec.beta_disease * f64::from(y)
                + spec.beta_age * (a - 50.0) / 10.0
                + spec.beta_female * f64::from(f);
            for _ in 0..p {
                let e: f64 = StandardNormal.sample(&mut rng);
                data.push(mean + e);
            }
            labels.push(y);
            age.push(a);
            female.push(f);
        }
    }
    let gender = Confounder::from_values(
        &female
            .iter()
            .map(|&f| if f == 1 { "female" } else { "male" })
            .collect::<Vec<_>>(),
    );
    let age_level = Confounder::new(
        discretize(&age, &spec.age_bins)?,
        spec.age_bins.level_names(),
    )?;
    let conf = combine_confounders(&gender, &age_level)?;
    let dataset = Dataset::new(Matrix::new(n, p, data)?, labels, conf)?;
    let split = SplitIndices::new((0..n_train).collect(), (n_train..n).collect(), n)?;
    Ok(Cohort {
        dataset,
        split,
        age,
        female,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_association_copies_c_into_y() {
        let (c, y) = sample_bivariate_bernoulli(&[[0.5, 0.0], [0.0, 0.5]], 500, 3).unwrap();
        assert_eq!(c, y);
        assert!(c.contains(&0) && c.contains(&1));
    }

    #[test]
    fn invalid_table_rejected() {
        assert!(sample_bivariate_bernoulli(&[[0.5, 0.5], [0.5, 0.0]], 5, 0).is_err());
        assert!(sample_bivariate_bernoulli(&[[1.5, -0.5], [0.0, 0.0]], 5, 0).is_err());
    }

    #[test]
    fn odds_ratio_table_has_requested_margins() {
        for or in [0.3, 1.0, 3.0, 12.0] {
            let j = joint_from_odds_ratio(0.4, 0.3, or).unwrap();
            assert!((j[1][0] + j[1][1] - 0.4).abs() < 1e-12);
            assert!((j[0][1] + j[1][1] - 0.3).abs() < 1e-12);
            let got = j[1][1] * j[0][0] / (j[1][0] * j[0][1]);
            assert!((got - or).abs() < 1e-9 * or);
        }
    }

    #[test]
    fn zero_effects_give_pure_noise() {
        let s = SimScenario {
            id: "n".into(),
            joint: [[0.25; 2]; 2],
            n_samples: 2000,
            n_features: 2,
            beta_y: 0.0,
            beta_c: 0.0,
        };
        let ds = simulate_dataset(&s, 5).unwrap();
        let mean: f64 = ds.features().as_slice().iter().sum::<f64>() / 4000.0;
        assert!(mean.abs() < 0.1);
        assert_eq!(ds, simulate_dataset(&s, 5).unwrap());
    }

    #[test]
    fn power_curve_edges() {
        let c = PowerCurve::from_pvalues("s", vec![0.0, 0.02, 0.5, 0.9], &[0.0, 0.05, 0.6, 1.0]);
        assert_eq!(c.power, vec![0.0, 0.5, 0.75, 1.0]);
        assert_eq!(c.power_at(0.05), Some(0.5));
    }

    #[test]
    fn type1_requires_null_scenario() {
        let s = &default_scenarios()[0];
        assert!(run_type1_experiment(s, &ExperimentConfig::default(), 1).is_err());
        let cfg = ExperimentConfig {
            replicates: 0,
            ..Default::default()
        };
        assert!(run_type1_experiment(&default_scenarios()[3], &cfg, 1).is_err());
    }

    #[test]
    fn cohort_has_requested_sizes() {
        let c = generate_cohort(&CohortSpec::default(), 1).unwrap();
        assert_eq!(c.split.train.len(), 658 + 2144);
        assert_eq!(c.split.test.len(), 331 + 1255);
        assert!(c.dataset.confounder().n_levels() <= 6);
        let t = c.table();
        assert_eq!(t.header.len(), 13);
        assert_eq!(t.rows.len(), c.dataset.n());
    }
}
