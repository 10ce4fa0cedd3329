//! Command implementations behind the `confound` binary. Every command reads
//! a [`RunConfig`] and writes its outputs into a caller-chosen directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adjust::{
    balance_table, estimate_propensity, estimate_propensity_from_covariates, ipw_resample_indices,
    ipw_weights, match_exact, BalanceTable, PropensityScores,
};
use crate::config::{AdjustMethod, ReferenceKind, RunConfig};
use crate::data::{stratified_split, Confounder, Dataset, Matrix, Table};
use crate::error::{Error, Result};
use crate::inference::{analyze, AnalysisConfig, ConfoundingReport, ReferenceChoice, TargetJoint};
use crate::rng;
use crate::sim::{power_tsv, pvalues_tsv, run_power_experiment, ExperimentConfig, PowerCurve};
use crate::stattest::ks_uniform;

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_rows(
    table: &Table,
    path: &Path,
    idx: &[usize],
    extra: Option<(&str, &[f64])>,
) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    table.write_rows(std::io::BufWriter::new(f), idx, extra)
}

fn require_path<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| Error::Config(format!("no {key} file configured ({key} = ...)")))?;
    if !p.exists() {
        return Err(Error::Config(format!(
            "{key} file {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

/// Outcome of [`cmd_split`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutcome {
    pub n_train: usize,
    pub n_test: usize,
}

/// Stratified split of `input` into `train.csv`, `test.csv` and
/// `split_manifest.tsv` (per-cell counts).
pub fn cmd_split(cfg: &RunConfig, out: &Path) -> Result<SplitOutcome> {
    let seed = cfg.require_seed()?;
    let table = Table::load(require_path(&cfg.input, "input")?)?;
    let ds = table.dataset(&cfg.schema(&table.header)?)?;
    let split = stratified_split(&ds, cfg.test_fraction, seed)?;
    create_dir(out)?;
    write_rows(&table, &out.join("train.csv"), &split.train, None)?;
    write_rows(&table, &out.join("test.csv"), &split.test, None)?;

    let mut manifest = String::new();
    writeln!(manifest, "# seed\t{seed}").unwrap();
    writeln!(manifest, "# test_fraction\t{}", cfg.test_fraction).unwrap();
    writeln!(
        manifest,
        "# rows\t{}\t{}",
        split.train.len(),
        split.test.len()
    )
    .unwrap();
    manifest.push_str("level\tlabel\ttotal\ttrain\ttest\n");
    let mut in_test = vec![false; ds.n()];
    for &i in &split.test {
        in_test[i] = true;
    }
    for ((level, label), rows) in ds.cells() {
        let test = rows.iter().filter(|&&i| in_test[i]).count();
        writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{}",
            ds.confounder().names()[level],
            label,
            rows.len(),
            rows.len() - test,
            test
        )
        .unwrap();
    }
    write_file(&out.join("split_manifest.tsv"), &manifest)?;
    Ok(SplitOutcome {
        n_train: split.train.len(),
        n_test: split.test.len(),
    })
}

/// Covariates for a user-specified propensity model: numeric columns as-is,
/// text columns as reference-coded indicators.
fn covariate_matrix(table: &Table, columns: &[String]) -> Result<Matrix> {
    let n = table.rows.len();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for name in columns {
        match table.numeric_column(name) {
            Ok(v) => cols.push(v),
            Err(Error::NonNumeric { .. }) => {
                let c = Confounder::from_values(&table.text_column(name)?);
                for level in 1..c.n_levels() {
                    cols.push(
                        c.levels()
                            .iter()
                            .map(|&l| f64::from(u8::from(l == level)))
                            .collect(),
                    );
                }
            }
            Err(e) => return Err(e),
        }
    }
    let mut m = Matrix::zeros(n, cols.len());
    for (j, col) in cols.iter().enumerate() {
        // standardize so the ridge penalty treats columns alike
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for (i, v) in col.iter().enumerate() {
            m.set(i, j, (v - mean) / sd);
        }
    }
    Ok(m)
}

fn propensity(cfg: &RunConfig, table: &Table, ds: &Dataset) -> Result<PropensityScores> {
    if cfg.propensity_covariates.is_empty() {
        estimate_propensity(ds.confounder(), ds.labels(), &cfg.logistic)
    } else {
        let x = covariate_matrix(table, &cfg.propensity_covariates)?;
        estimate_propensity_from_covariates(&x, ds.labels(), &cfg.logistic)
    }
}

/// Balance before and after adjustment of one file.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustOutcome {
    pub set: String,
    pub before: BalanceTable,
    pub after: BalanceTable,
}

fn adjust_one(
    cfg: &RunConfig,
    method: AdjustMethod,
    table: &Table,
    seed: u64,
    dest: &Path,
    set: &str,
) -> Result<AdjustOutcome> {
    let ds = table.dataset(&cfg.schema(&table.header)?)?;
    let before = balance_table(&ds);
    let after = match method {
        AdjustMethod::Match => {
            let keep = match_exact(&ds, seed)?;
            write_rows(table, dest, &keep, None)?;
            balance_table(&ds.subset(&keep))
        }
        AdjustMethod::IpwWeights => {
            let w = ipw_weights(ds.labels(), &propensity(cfg, table, &ds)?)?;
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let w: Vec<f64> = w.iter().map(|v| v / mean).collect();
            let all: Vec<usize> = (0..ds.n()).collect();
            let name = cfg.weight.as_deref().unwrap_or("weight");
            write_rows(table, dest, &all, Some((name, &w)))?;
            balance_table(&ds.clone().with_weights(w)?)
        }
        AdjustMethod::IpwResample => {
            let w = ipw_weights(ds.labels(), &propensity(cfg, table, &ds)?)?;
            let rows = ipw_resample_indices(&w, cfg.resample_size.unwrap_or(ds.n()), seed)?;
            write_rows(table, dest, &rows, None)?;
            balance_table(&ds.subset(&rows).without_weights())
        }
    };
    Ok(AdjustOutcome {
        set: set.to_string(),
        before,
        after,
    })
}

/// Adjust `train` and `test` independently (or a single `input`) and write
/// the adjusted CSVs plus `balance.tsv`.
pub fn cmd_adjust(cfg: &RunConfig, out: &Path) -> Result<Vec<AdjustOutcome>> {
    let seed = cfg.require_seed()?;
    let method = cfg.adjust.ok_or_else(|| {
        Error::Config("no adjustment method (adjust = match|ipw-weights|ipw-resample)".into())
    })?;
    let inputs: Vec<(&str, &Path)> = if cfg.train.is_some() || cfg.test.is_some() {
        vec![
            ("train", require_path(&cfg.train, "train")?),
            ("test", require_path(&cfg.test, "test")?),
        ]
    } else {
        vec![("adjusted", require_path(&cfg.input, "input")?)]
    };
    let tables = inputs
        .iter()
        .map(|(_, p)| Table::load(p))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let mut outcomes = Vec::new();
    for (k, ((set, _), table)) in inputs.iter().zip(&tables).enumerate() {
        let dest = out.join(format!("{set}.csv"));
        outcomes.push(adjust_one(
            cfg,
            method,
            table,
            rng::child_seed(seed, k as u64),
            &dest,
            set,
        )?);
    }
    let mut tsv = String::from("set\tstage\tlevel\tcontrols\tcases\tcase_fraction\n");
    for o in &outcomes {
        for (stage, t) in [("before", &o.before), ("after", &o.after)] {
            for r in &t.rows {
                writeln!(
                    tsv,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    o.set,
                    stage,
                    r.name,
                    r.controls,
                    r.cases,
                    r.case_fraction()
                )
                .unwrap();
            }
        }
    }
    for o in &outcomes {
        writeln!(
            tsv,
            "# imbalance\t{}\t{}\t{}",
            o.set,
            o.before.imbalance(),
            o.after.imbalance()
        )
        .unwrap();
    }
    write_file(&out.join("balance.tsv"), &tsv)?;
    Ok(outcomes)
}

/// Confounding analysis of a train/test pair. Writes `report.txt`,
/// `summary.tsv` and one `<scheme>_null.tsv` per empirical null.
pub fn cmd_analyze(cfg: &RunConfig, out: &Path) -> Result<ConfoundingReport> {
    let seed = cfg.require_seed()?;
    let train = require_path(&cfg.train, "train")?;
    let test = require_path(&cfg.test, "test")?;
    let mut table = Table::load(train)?;
    let n_train = table.rows.len();
    table.append(Table::load(test)?, &test.display().to_string())?;
    let ds = table.dataset(&cfg.schema(&table.header)?)?;
    let n = ds.n();
    let split = crate::data::SplitIndices::new((0..n_train).collect(), (n_train..n).collect(), n)?;
    let reference = match (&cfg.target_joint, cfg.reference) {
        (Some(_), _) => ReferenceChoice::Baseline(TargetJoint::load(require_path(
            &cfg.target_joint,
            "target_joint",
        )?)?),
        (None, ReferenceKind::Analytic) => ReferenceChoice::AnalyticAuc,
        (None, ReferenceKind::Standard) => ReferenceChoice::EmpiricalStandard,
    };
    let analysis = analyze(
        &ds,
        &split,
        &AnalysisConfig {
            learner: cfg.learner(),
            metric: cfg.metric,
            permutations: cfg.permutations,
            seed,
            reference,
            execution: cfg.execution(),
        },
    )?;
    create_dir(out)?;
    write_file(&out.join("report.txt"), &analysis.report.to_text())?;
    write_file(
        &out.join("summary.tsv"),
        &format!("{}\n", analysis.report.summary_line()),
    )?;
    for nd in [
        Some(&analysis.restricted),
        analysis.standard.as_ref(),
        analysis.baseline.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        nd.save_tsv(out.join(format!("{}_null.tsv", nd.scheme.as_str())))?;
    }
    Ok(analysis.report)
}

/// Power / type-I simulation over the configured scenarios. Writes
/// `pvalues.tsv`, `power.tsv` and `summary.tsv` (KS uniformity of each
/// scenario's p-values, rejection rate at 0.05).
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PowerCurve>> {
    let seed = cfg.require_seed()?;
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be >= 1".into()));
    }
    let exp = ExperimentConfig {
        replicates: cfg.replicates,
        permutations: cfg.permutations,
        test_fraction: cfg.test_fraction,
        alphas: cfg.alphas.clone(),
        learner: cfg.learner(),
        execution: cfg.execution(),
    };
    let curves = run_power_experiment(&cfg.scenarios, &exp, seed)?;
    create_dir(out)?;
    write_file(&out.join("pvalues.tsv"), &pvalues_tsv(&curves))?;
    write_file(&out.join("power.tsv"), &power_tsv(&curves))?;
    let mut summary =
        String::from("scenario\tbeta_y\tbeta_c\tks_statistic\tks_pvalue\treject_0.05\n");
    for (c, s) in curves.iter().zip(&cfg.scenarios) {
        let ks = ks_uniform(&c.pvalues)?;
        let reject = c.pvalues.iter().filter(|&&p| p <= 0.05).count() as f64 / c.replicates as f64;
        writeln!(
            summary,
            "{}\t{}\t{}\t{}\t{}\t{}",
            c.scenario, s.beta_y, s.beta_c, ks.statistic, ks.pvalue, reject
        )
        .unwrap();
    }
    write_file(&out.join("summary.tsv"), &summary)?;
    Ok(curves)
}
