//! Acceptance criteria, run by a custom harness that prints one
//! `criterion N: PASS|FAIL` line each and exits non-zero on any failure.
//! Positional arguments select criteria by number.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use confound::cli::{cmd_adjust, cmd_analyze, cmd_simulate};
use confound::config::{AdjustMethod, ReferenceKind, RunConfig};
use confound::data::{stratified_split, stratified_split_sized, DiscretizationSpec, SplitIndices};
use confound::inference::{
    analytic_auc_null, auc_confounding_pvalue, baseline_null, baseline_subsample,
    confounding_pvalue, unconfounded_auc, unconfounded_metric, BaselineOptions, ConfoundingReport,
    TargetJoint,
};
use confound::learners::{LearnerSpec, LogisticConfig};
use confound::metrics::{auc, mann_whitney_u, normal_cdf, MetricKind, ScoredTestSet};
use confound::par::with_threads;
use confound::perm::{
    permutation_null, restricted_shuffle, summarize, NullConfig, NullSummary, Scheme,
};
use confound::sim::{
    default_scenarios, generate_cohort, scenario_pvalues, simulate_dataset, CohortSpec,
    ExperimentConfig, PowerCurve, SimScenario,
};
use confound::stattest::{chi_square_gof, ks_two_sample, ks_uniform};

struct Outcome {
    pass: bool,
    limit: Duration,
    detail: String,
}

fn outcome(pass: bool, limit_secs: u64, detail: String) -> Outcome {
    Outcome {
        pass,
        limit: Duration::from_secs(limit_secs),
        detail,
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 8] = [
    (
        1,
        "rank AUC vs pairwise oracle, U identity",
        criterion_1_auc_oracle_equivalence,
    ),
    (
        2,
        "unconfounded AUC and p-value identities",
        criterion_2_algebraic_identities,
    ),
    (
        3,
        "restricted shuffle conserves strata and is uniform",
        criterion_3_restricted_shuffle_uniformity,
    ),
    (
        4,
        "type I error under no confounding signal",
        criterion_4_type_one_error,
    ),
    (
        5,
        "power increases with confounding strength",
        criterion_5_power_ordering,
    ),
    (
        6,
        "unadjusted / matched / misspecified IPW pattern",
        criterion_6_adjustment_pattern,
    ),
    (7, "baseline null workflow", criterion_7_baseline_null),
    (
        8,
        "byte-identical outputs across reruns and thread counts",
        criterion_8_determinism,
    ),
];

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let (mut ran, mut failed) = (0, 0);
    for (n, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = std::panic::catch_unwind(run);
        let elapsed = start.elapsed();
        let (pass, detail, limit) = match result {
            Ok(o) => (
                o.pass && elapsed <= o.limit,
                o.detail,
                format!("{}s", o.limit.as_secs()),
            ),
            Err(e) => (
                false,
                format!("panicked: {}", panic_message(&*e)),
                "-".into(),
            ),
        };
        println!(
            "criterion {n}: {} | {name} | {detail} | {:.1}s (limit {limit})",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failed += usize::from(!pass);
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Exhaustive pairwise AUC: P(score_pos > score_neg) + 0.5 P(tie).
fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1.0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0.0 {
                continue;
            }
            pairs += 1.0;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    num / pairs
}

fn criterion_1_auc_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut u_failures, mut tie_free) = (0.0f64, 0, 0);
    for k in 0..1000 {
        let m = rng.random_range(2..80);
        let mut labels: Vec<f64> = (0..m)
            .map(|_| f64::from(rng.random_bool(0.4) as u8))
            .collect();
        labels[0] = 0.0;
        labels[1] = 1.0;
        let with_ties = k % 2 == 0;
        let scores: Vec<f64> = (0..m)
            .map(|_| {
                if with_ties {
                    f64::from(rng.random_range(0..6u8)) / 5.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let s = ScoredTestSet::new(&scores, &labels).unwrap();
        let a = auc(&s).unwrap();
        worst = worst.max((a - pairwise_auc(&scores, &labels)).abs());
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[0] != w[1]) {
            tie_free += 1;
            let n_pos = labels.iter().filter(|&&l| l == 1.0).count() as f64;
            let n_neg = m as f64 - n_pos;
            // U counts (negative, positive) pairs with the negative scored higher
            let mut u = 0.0;
            for (i, &si) in scores.iter().enumerate() {
                for (j, &sj) in scores.iter().enumerate() {
                    if labels[i] == 0.0 && labels[j] == 1.0 && si > sj {
                        u += 1.0;
                    }
                }
            }
            let identity = n_neg * n_pos * (1.0 - a);
            if mann_whitney_u(&s).unwrap() != u || (identity - u).abs() > 1e-9 {
                u_failures += 1;
            }
        }
    }
    let pass = worst <= 1e-12 && u_failures == 0 && tie_free >= 400;
    outcome(
        pass,
        10,
        format!("max |diff| {worst:.2e}, U mismatches {u_failures} of {tie_free} tie-free sets"),
    )
}

fn criterion_2_algebraic_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut eq4, mut eq5, mut pres) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let n_neg = rng.random_range(1..2000);
        let n_pos = rng.random_range(1..2000);
        let n_test = rng.random_range(1..5000);
        let restricted = NullSummary::new(
            rng.random_range(0.3..0.95),
            rng.random_range(0.002..0.1),
            Some(1000),
        )
        .unwrap();
        let observed = rng.random_range(0.3..1.0);
        let analytic = analytic_auc_null(n_neg, n_pos).unwrap();

        let direct = unconfounded_auc(observed, &restricted, n_neg, n_pos).unwrap();
        let composed = unconfounded_metric(observed, &restricted, &analytic).unwrap();
        eq4 = eq4.max((direct - composed).abs());

        let p_auc = auc_confounding_pvalue(restricted.mean, n_neg, n_pos, n_test).unwrap();
        let p_gen = confounding_pvalue(&restricted, &analytic, n_test).unwrap();
        eq5 = eq5.max((p_auc - p_gen).abs());

        let reference = NullSummary::new(
            rng.random_range(0.3..0.7),
            rng.random_range(0.002..0.1),
            Some(1000),
        )
        .unwrap();
        let mu = unconfounded_metric(observed, &restricted, &reference).unwrap();
        let lhs = normal_cdf((mu - reference.mean) / reference.sd);
        let rhs = normal_cdf((observed - restricted.mean) / restricted.sd);
        pres = pres.max((lhs - rhs).abs());
    }
    let pass = eq4 <= 1e-12 && eq5 <= 1e-12 && pres <= 1e-9;
    outcome(
        pass,
        5,
        format!(
            "max diffs: AUC form {eq4:.1e}, p-value form {eq5:.1e}, tail preservation {pres:.1e}"
        ),
    )
}

fn criterion_3_restricted_shuffle_uniformity() -> Outcome {
    // strata of 7 and 9 samples holding 4 and 2 positives
    let c: Vec<usize> = (0..16).map(|i| usize::from(i >= 7)).collect();
    let y: Vec<u8> = (0..16)
        .map(|i| u8::from(i < 4 || (7..9).contains(&i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 200_000;
    let mut counts: HashMap<u16, u64> = HashMap::new();
    let mut conserved = true;
    for _ in 0..draws {
        let s = restricted_shuffle(&y, &c, &mut rng).unwrap();
        let a: u8 = s[..7].iter().sum();
        let b: u8 = s[7..].iter().sum();
        conserved &= a == 4 && b == 2;
        let mask = s
            .iter()
            .enumerate()
            .fold(0u16, |m, (i, &v)| m | (u16::from(v) << i));
        *counts.entry(mask).or_default() += 1;
    }
    let outcomes = 35 * 36; // C(7,4) * C(9,2)
    let mut observed: Vec<u64> = counts.values().copied().collect();
    observed.resize(outcomes, 0);
    let expected = vec![draws as f64 / outcomes as f64; outcomes];
    let gof = chi_square_gof(&observed, &expected).unwrap();
    let pass = conserved && counts.len() == outcomes && gof.pvalue > 0.001;
    outcome(
        pass,
        30,
        format!(
            "{} of {outcomes} outcomes seen, chi2 {:.1} p={:.3}",
            counts.len(),
            gof.statistic,
            gof.pvalue
        ),
    )
}

fn experiment() -> ExperimentConfig {
    ExperimentConfig {
        replicates: 200,
        permutations: 300,
        test_fraction: 0.5,
        ..Default::default()
    }
}

fn scenario(id: &str) -> SimScenario {
    default_scenarios()
        .into_iter()
        .find(|s| s.id == id)
        .expect("default scenario")
}

fn criterion_4_type_one_error() -> Outcome {
    let cfg = experiment();
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, id) in ["null", "null-signal"].into_iter().enumerate() {
        let s = scenario(id);
        assert_eq!(s.beta_c, 0.0);
        assert_eq!(s.n_samples, 600);
        let p = scenario_pvalues(&s, &cfg, 40 + k as u64).unwrap();
        let ks = ks_uniform(&p).unwrap();
        let reject = p.iter().filter(|&&v| v <= 0.05).count() as f64 / p.len() as f64;
        pass &= ks.pvalue > 0.01 && (0.02..=0.09).contains(&reject);
        detail.push(format!(
            "{id} (beta_y={}): KS p={:.3}, reject@0.05={reject:.3}",
            s.beta_y, ks.pvalue
        ));
    }
    outcome(pass, 600, detail.join("; "))
}

fn criterion_5_power_ordering() -> Outcome {
    let cfg = experiment();
    let curves: Vec<PowerCurve> = ["weak", "moderate", "strong"]
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let p = scenario_pvalues(&scenario(id), &cfg, 50 + k as u64).unwrap();
            PowerCurve::from_pvalues(*id, p, &cfg.alphas)
        })
        .collect();
    let r = cfg.replicates as f64;
    let mut violations = 0;
    for pair in curves.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        for (a, b) in lo.power.iter().zip(&hi.power) {
            let se = (a * (1.0 - a) / r + b * (1.0 - b) / r).sqrt();
            if a - b > 2.0 * se {
                violations += 1;
            }
        }
    }
    let strong = curves[2].power_at(0.05).unwrap();
    let pass = violations == 0 && strong >= 0.8;
    let summary: Vec<String> = curves
        .iter()
        .map(|c| format!("{}={:.3}", c.scenario, c.power_at(0.05).unwrap()))
        .collect();
    outcome(
        pass,
        900,
        format!(
            "power@0.05 {} (beta_c 0.2/0.4/0.8), ordering violations beyond 2 SE: {violations}",
            summary.join(" ")
        ),
    )
}

fn cohort_config(train: &Path, test: &Path) -> RunConfig {
    let mut discretize = HashMap::new();
    discretize.insert(
        "age".to_string(),
        DiscretizationSpec::parse("18-44,45-65,66-99").unwrap(),
    );
    RunConfig {
        train: Some(train.to_path_buf()),
        test: Some(test.to_path_buf()),
        label: Some("label".into()),
        confounders: vec!["gender".into(), "age".into()],
        discretize,
        // the learner never sees age or gender directly
        propensity_covariates: vec!["gender".into(), "age".into()],
        reference: ReferenceKind::Analytic,
        permutations: 1000,
        seed: Some(6),
        ..Default::default()
    }
}

fn criterion_6_adjustment_pattern() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate_cohort(&CohortSpec::default(), 1).unwrap();
    let table = cohort.table();
    let (train, test) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    for (path, rows) in [(&train, &cohort.split.train), (&test, &cohort.split.test)] {
        table
            .write_rows(fs::File::create(path).unwrap(), rows, None)
            .unwrap();
    }
    let base = cohort_config(&train, &test);
    let unadjusted = cmd_analyze(&base, &dir.path().join("unadjusted")).unwrap();

    let adjusted = |method: AdjustMethod, name: &str| -> ConfoundingReport {
        let out = dir.path().join(name);
        let cfg = RunConfig {
            adjust: Some(method),
            ..base.clone()
        };
        cmd_adjust(&cfg, &out).unwrap();
        let cfg = RunConfig {
            train: Some(out.join("train.csv")),
            test: Some(out.join("test.csv")),
            ..base.clone()
        };
        cmd_analyze(&cfg, &out.join("analysis")).unwrap()
    };
    let matched = adjusted(AdjustMethod::Match, "matched");
    // a linear logit in age and gender cannot capture the case/control age
    // distributions, so weighting leaves residual imbalance
    let ipw = adjusted(AdjustMethod::IpwResample, "ipw");

    let (u, m, w) = (&unadjusted, &matched, &ipw);
    let checks = [
        u.restricted.mean >= 0.6,
        u.pvalue() < 1e-6,
        u.unconfounded() < u.observed - 0.05,
        m.pvalue() > 0.05,
        (m.unconfounded() - m.observed).abs() < 0.03,
        m.restricted.mean < w.restricted.mean && w.restricted.mean < u.restricted.mean,
        w.pvalue() < 0.01,
    ];
    let line = |name: &str, r: &ConfoundingReport| {
        format!(
            "{name}: m_o={:.3} a*={:.3} m_u={:.3} p={:.2e}",
            r.observed,
            r.restricted.mean,
            r.unconfounded(),
            r.pvalue()
        )
    };
    outcome(
        checks.iter().all(|&c| c),
        600,
        format!(
            "{}; {}; {}; checks {:?}",
            line("unadjusted", u),
            line("matched", m),
            line("ipw", w),
            checks
        ),
    )
}

fn criterion_7_baseline_null() -> Outcome {
    let learner = LearnerSpec::Logistic(LogisticConfig::default());
    // self-selected development cohort; level "1" is male
    let dev = SimScenario {
        id: "self-selected".into(),
        joint: [[0.5, 0.05], [0.15, 0.3]],
        n_samples: 10_000,
        n_features: 10,
        beta_y: 0.3,
        beta_c: 0.5,
    };
    let ds = simulate_dataset(&dev, 7).unwrap();
    // prevalence 1/3, disease twice as common in males
    let target = TargetJoint::new(
        vec!["0".into(), "1".into()],
        vec![[7.0 / 18.0, 2.0 / 18.0], [5.0 / 18.0, 4.0 / 18.0]],
    )
    .unwrap();
    let independent = target.independence();
    let (b, test_size) = (300, 1000);
    let opts = BaselineOptions {
        test_size,
        train_size: None,
        seed: 7,
    };
    let exec = Default::default();

    let baseline_indep =
        baseline_null(&independent, &ds, &learner, MetricKind::Auc, b, &opts, exec).unwrap();
    let (sub, sub_split) = baseline_subsample(&independent, &ds, &opts).unwrap();
    let standard = permutation_null(
        &learner,
        &sub,
        &sub_split,
        &NullConfig::new(MetricKind::Auc, Scheme::Standard, b, 70),
    )
    .unwrap();
    let ks = ks_two_sample(&baseline_indep.samples, &standard.samples).unwrap();

    let baseline_assoc =
        baseline_null(&target, &ds, &learner, MetricKind::Auc, b, &opts, exec).unwrap();
    let dev_split = stratified_split_sized(&ds, test_size, 7).unwrap();
    let restricted = permutation_null(
        &learner,
        &ds,
        &dev_split,
        &NullConfig::new(MetricKind::Auc, Scheme::Restricted, b, 71),
    )
    .unwrap();
    let base_mean = summarize(&baseline_assoc).unwrap().mean;
    let dev_mean = summarize(&restricted).unwrap().mean;
    let pass = ks.pvalue > 0.01 && base_mean > 0.5 && dev_mean > base_mean;
    outcome(
        pass,
        300,
        format!(
            "independent target vs standard KS p={:.3}; associated baseline mean {base_mean:.3}, development restricted mean {dev_mean:.3}",
            ks.pvalue
        ),
    )
}

fn read_tsvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "tsv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let s = SimScenario {
        id: "det".into(),
        joint: [[0.35, 0.15], [0.15, 0.35]],
        n_samples: 400,
        n_features: 5,
        beta_y: 0.4,
        beta_c: 0.4,
    };
    let ds = simulate_dataset(&s, 8).unwrap();
    let split: SplitIndices = stratified_split(&ds, 0.3, 8).unwrap();
    let (train, test) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    ds.subset(&split.train).save_csv(&train).unwrap();
    ds.subset(&split.test).save_csv(&test).unwrap();
    let mut small = s.clone();
    small.n_samples = 200;
    let cfg = RunConfig {
        train: Some(train),
        test: Some(test),
        label: Some("label".into()),
        confounders: vec!["confounder".into()],
        permutations: 200,
        seed: Some(8),
        replicates: 12,
        scenarios: vec![small],
        ..Default::default()
    };
    let runs = [
        ("sequential", false, 0),
        ("1 thread", true, 1),
        ("4 threads", true, 4),
        ("rerun 4 threads", true, 4),
    ];
    let mut outputs = Vec::new();
    for (k, (_, parallel, threads)) in runs.iter().enumerate() {
        let cfg = RunConfig {
            parallel: *parallel,
            ..cfg.clone()
        };
        let out = dir.path().join(format!("run{k}"));
        with_threads(*threads, || {
            cmd_analyze(&cfg, &out.join("analyze")).unwrap();
            let sim = RunConfig {
                permutations: 50,
                ..cfg.clone()
            };
            cmd_simulate(&sim, &out.join("simulate")).unwrap();
        })
        .unwrap();
        let mut files = read_tsvs(&out.join("analyze"));
        files.extend(read_tsvs(&out.join("simulate")));
        outputs.push(files);
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    let n_files = outputs[0].len();
    outcome(
        identical && n_files >= 6,
        120,
        format!(
            "{n_files} TSVs compared over {}",
            runs.iter().map(|r| r.0).collect::<Vec<_>>().join(", ")
        ),
    )
}
