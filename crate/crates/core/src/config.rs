//! Line-oriented run configuration.
//!
//! ```text
//! # comment
//! key = value
//! [scenario strong]
//! key = value
//! ```
//!
//! Keys before the first section header are global. Each `[scenario ID]`
//! section defines one simulation scenario. Unknown or repeated keys are
//! errors. Relative paths resolve against the directory of the config file.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DiscretizationSpec, Schema};
use crate::error::{Error, Result};
use crate::learners::{ForestConfig, LearnerSpec, LogisticConfig};
use crate::metrics::MetricKind;
use crate::par::Execution;
use crate::perm::DEFAULT_PERMUTATIONS;
use crate::sim::{default_alpha_grid, default_scenarios, joint_from_odds_ratio, SimScenario};

/// Keys accepted outside sections. `discretize.<column>` is also accepted.
pub const GLOBAL_KEYS: &[&str] = &[
    "input",
    "train",
    "test",
    "label",
    "features",
    "confounders",
    "weight",
    "learner",
    "metric",
    "permutations",
    "seed",
    "test_fraction",
    "adjust",
    "resample_size",
    "propensity_covariates",
    "reference",
    "target_joint",
    "replicates",
    "alphas",
    "threads",
    "parallel",
    "logistic.max_iterations",
    "logistic.tolerance",
    "logistic.ridge",
    "forest.n_trees",
    "forest.max_depth",
    "forest.min_leaf",
    "forest.features_per_split",
    "forest.bootstrap",
    "forest.seed",
];

/// Keys accepted inside `[scenario ID]`. A scenario gives either `joint`
/// (four cells `c0y0, c0y1, c1y0, c1y1`) or `p_c`, `p_y` and `odds_ratio`.
pub const SCENARIO_KEYS: &[&str] = &[
    "joint",
    "p_c",
    "p_y",
    "odds_ratio",
    "n_samples",
    "n_features",
    "beta_y",
    "beta_c",
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// A parsed but not yet interpreted config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    global: BTreeMap<String, Entry>,
    scenarios: Vec<(String, BTreeMap<String, Entry>)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        let mut current: Option<usize> = None;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let inner = header.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {line_no}: unclosed section header"))
                })?;
                let mut parts = inner.split_whitespace();
                match (parts.next(), parts.next(), parts.next()) {
                    (Some("scenario"), Some(id), None) => {
                        if cfg.scenarios.iter().any(|(s, _)| s == id) {
                            return Err(Error::Config(format!(
                                "line {line_no}: scenario {id:?} defined twice"
                            )));
                        }
                        cfg.scenarios.push((id.to_string(), BTreeMap::new()));
                        current = Some(cfg.scenarios.len() - 1);
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "line {line_no}: expected [scenario ID], got [{inner}]"
                        )))
                    }
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected key = value")))?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            let allowed = match current {
                None => GLOBAL_KEYS.contains(&key.as_str()) || key.starts_with("discretize."),
                Some(_) => SCENARIO_KEYS.contains(&key.as_str()),
            };
            if !allowed {
                return Err(Error::Config(format!(
                    "line {line_no}: unknown key {key:?}"
                )));
            }
            let map = match current {
                None => &mut cfg.global,
                Some(i) => &mut cfg.scenarios[i].1,
            };
            if map.contains_key(&key) {
                return Err(Error::Config(format!(
                    "line {line_no}: duplicate key {key:?}"
                )));
            }
            map.insert(
                key,
                Entry {
                    value,
                    line: line_no,
                },
            );
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Raw value of a global key.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.global.get(key).map(|e| e.value.as_str())
    }
}

fn parse_value<T: FromStr>(map: &BTreeMap<String, Entry>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|e| {
            e.value.parse::<T>().map_err(|_| {
                Error::Config(format!(
                    "line {}: invalid value {:?} for {key}",
                    e.line, e.value
                ))
            })
        })
        .transpose()
}

fn parse_list<T: FromStr>(map: &BTreeMap<String, Entry>, key: &str) -> Result<Option<Vec<T>>> {
    map.get(key)
        .map(|e| {
            e.value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>().map_err(|_| {
                        Error::Config(format!(
                            "line {}: invalid list item {s:?} for {key}",
                            e.line
                        ))
                    })
                })
                .collect()
        })
        .transpose()
}

/// Adjustment methods offered by the `adjust` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjustMethod {
    Match,
    IpwWeights,
    IpwResample,
}

impl FromStr for AdjustMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "match" => Ok(Self::Match),
            "ipw-weights" => Ok(Self::IpwWeights),
            "ipw-resample" => Ok(Self::IpwResample),
            _ => Err(Error::Config(format!(
                "unknown adjustment {s:?} (match|ipw-weights|ipw-resample)"
            ))),
        }
    }
}

/// Unconfounded reference for `analyze` when no target joint is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceKind {
    #[default]
    Standard,
    Analytic,
}

impl FromStr for ReferenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "analytic" => Ok(Self::Analytic),
            _ => Err(Error::Config(format!(
                "unknown reference {s:?} (standard|analytic)"
            ))),
        }
    }
}

/// Fully resolved settings for one CLI run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub label: Option<String>,
    /// Empty means every column not used in another role.
    pub features: Vec<String>,
    pub confounders: Vec<String>,
    pub discretize: HashMap<String, DiscretizationSpec>,
    pub weight: Option<String>,
    pub learner_kind: String,
    pub logistic: LogisticConfig,
    pub forest: ForestConfig,
    pub metric: MetricKind,
    pub permutations: usize,
    pub seed: Option<u64>,
    pub test_fraction: f64,
    pub adjust: Option<AdjustMethod>,
    pub resample_size: Option<usize>,
    /// Empty means indicators of the (combined) confounder.
    pub propensity_covariates: Vec<String>,
    pub reference: ReferenceKind,
    pub target_joint: Option<PathBuf>,
    pub replicates: usize,
    pub alphas: Vec<f64>,
    pub scenarios: Vec<SimScenario>,
    pub threads: usize,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            train: None,
            test: None,
            label: None,
            features: Vec::new(),
            confounders: Vec::new(),
            discretize: HashMap::new(),
            weight: None,
            learner_kind: "logistic".into(),
            logistic: LogisticConfig::default(),
            forest: ForestConfig::default(),
            metric: MetricKind::Auc,
            permutations: DEFAULT_PERMUTATIONS,
            seed: None,
            test_fraction: 0.5,
            adjust: None,
            resample_size: None,
            propensity_covariates: Vec::new(),
            reference: ReferenceKind::default(),
            target_joint: None,
            replicates: 200,
            alphas: default_alpha_grid(),
            scenarios: default_scenarios(),
            threads: 0,
            parallel: true,
        }
    }
}

impl RunConfig {
    /// Interpret a parsed file; `base` is the directory relative paths resolve against.
    pub fn from_file(file: &ConfigFile, base: &Path) -> Result<Self> {
        let g = &file.global;
        let mut cfg = RunConfig::default();
        let path = |key: &str| g.get(key).map(|e| base.join(&e.value));
        cfg.input = path("input");
        cfg.train = path("train");
        cfg.test = path("test");
        cfg.target_joint = path("target_joint");
        cfg.label = g.get("label").map(|e| e.value.clone());
        cfg.features = parse_list(g, "features")?.unwrap_or_default();
        cfg.confounders = parse_list(g, "confounders")?.unwrap_or_default();
        cfg.propensity_covariates = parse_list(g, "propensity_covariates")?.unwrap_or_default();
        cfg.weight = g.get("weight").map(|e| e.value.clone());
        for (key, e) in g {
            if let Some(col) = key.strip_prefix("discretize.") {
                let spec = DiscretizationSpec::parse(&e.value)
                    .map_err(|err| Error::Config(format!("line {}: {err}", e.line)))?;
                cfg.discretize.insert(col.to_string(), spec);
            }
        }
        if let Some(l) = g.get("learner") {
            cfg.set_learner(&l.value)?;
        }
        if let Some(m) = parse_value(g, "metric")? {
            cfg.metric = m;
        }
        if let Some(v) = parse_value(g, "permutations")? {
            cfg.permutations = v;
        }
        cfg.seed = parse_value(g, "seed")?;
        if let Some(v) = parse_value(g, "test_fraction")? {
            cfg.test_fraction = v;
        }
        cfg.adjust = parse_value(g, "adjust")?;
        cfg.resample_size = parse_value(g, "resample_size")?;
        if let Some(v) = parse_value(g, "reference")? {
            cfg.reference = v;
        }
        if let Some(v) = parse_value(g, "replicates")? {
            cfg.replicates = v;
        }
        if let Some(v) = parse_list(g, "alphas")? {
            cfg.alphas = v;
        }
        if let Some(v) = parse_value(g, "threads")? {
            cfg.threads = v;
        }
        if let Some(v) = parse_value(g, "parallel")? {
            cfg.parallel = v;
        }
        let l = &mut cfg.logistic;
        if let Some(v) = parse_value(g, "logistic.max_iterations")? {
            l.max_iterations = v;
        }
        if let Some(v) = parse_value(g, "logistic.tolerance")? {
            l.tolerance = v;
        }
        if let Some(v) = parse_value(g, "logistic.ridge")? {
            l.ridge = v;
        }
        let f = &mut cfg.forest;
        if let Some(v) = parse_value(g, "forest.n_trees")? {
            f.n_trees = v;
        }
        if let Some(v) = parse_value(g, "forest.max_depth")? {
            f.max_depth = v;
        }
        if let Some(v) = parse_value(g, "forest.min_leaf")? {
            f.min_leaf = v;
        }
        if let Some(v) = parse_value::<usize>(g, "forest.features_per_split")? {
            f.features_per_split = Some(v);
        }
        if let Some(v) = parse_value(g, "forest.bootstrap")? {
            f.bootstrap = v;
        }
        if let Some(v) = parse_value(g, "forest.seed")? {
            f.seed = v;
        }
        if !file.scenarios.is_empty() {
            cfg.scenarios = file
                .scenarios
                .iter()
                .map(|(id, map)| scenario_from(id, map))
                .collect::<Result<_>>()?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(&ConfigFile::load(path)?, base)
    }

    pub fn set_learner(&mut self, kind: &str) -> Result<()> {
        match kind {
            "logistic" | "forest" => {
                self.learner_kind = kind.to_string();
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "unknown learner {kind:?} (logistic|forest)"
            ))),
        }
    }

    pub fn learner(&self) -> LearnerSpec {
        if self.learner_kind == "forest" {
            LearnerSpec::Forest(self.forest.clone())
        } else {
            LearnerSpec::Logistic(self.logistic.clone())
        }
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    /// Seed for stochastic commands; absence is a configuration error.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (seed = N or --seed N)".into()))
    }

    /// Column roles, with features defaulting to every column of `header`
    /// not used as label, confounder, weight or propensity covariate.
    pub fn schema(&self, header: &[String]) -> Result<Schema> {
        let label = self
            .label
            .clone()
            .ok_or_else(|| Error::Config("no label column configured (label = ...)".into()))?;
        if self.confounders.is_empty() {
            return Err(Error::Config(
                "no confounder columns configured (confounders = ...)".into(),
            ));
        }
        let features = if self.features.is_empty() {
            header
                .iter()
                .filter(|h| {
                    **h != label
                        && !self.confounders.contains(h)
                        && self.weight.as_ref() != Some(h)
                        && !self.propensity_covariates.contains(h)
                })
                .cloned()
                .collect()
        } else {
            self.features.clone()
        };
        Ok(Schema {
            label,
            features,
            confounders: self.confounders.clone(),
            discretize: self.discretize.clone(),
            weight: self.weight.clone(),
        })
    }
}

fn scenario_from(id: &str, map: &BTreeMap<String, Entry>) -> Result<SimScenario> {
    let required = |key: &str| Error::Config(format!("scenario {id:?}: missing {key}"));
    let joint = match parse_list::<f64>(map, "joint")? {
        Some(cells) => {
            if ["p_c", "p_y", "odds_ratio"]
                .iter()
                .any(|k| map.contains_key(*k))
            {
                return Err(Error::Config(format!(
                    "scenario {id:?}: give either joint or p_c/p_y/odds_ratio"
                )));
            }
            match cells.as_slice() {
                &[a, b, c, d] => [[a, b], [c, d]],
                _ => {
                    return Err(Error::Config(format!(
                        "scenario {id:?}: joint needs four cells c0y0,c0y1,c1y0,c1y1"
                    )))
                }
            }
        }
        None => {
            let p_c = parse_value(map, "p_c")?.ok_or_else(|| required("p_c"))?;
            let p_y = parse_value(map, "p_y")?.ok_or_else(|| required("p_y"))?;
            let or = parse_value(map, "odds_ratio")?.ok_or_else(|| required("odds_ratio"))?;
            joint_from_odds_ratio(p_c, p_y, or)
                .map_err(|e| Error::Config(format!("scenario {id:?}: {e}")))?
        }
    };
    let s = SimScenario {
        id: id.to_string(),
        joint,
        n_samples: parse_value(map, "n_samples")?.ok_or_else(|| required("n_samples"))?,
        n_features: parse_value(map, "n_features")?.ok_or_else(|| required("n_features"))?,
        beta_y: parse_value(map, "beta_y")?.ok_or_else(|| required("beta_y"))?,
        beta_c: parse_value(map, "beta_c")?.ok_or_else(|| required("beta_c"))?,
    };
    s.validate()
        .map_err(|e| Error::Config(format!("scenario {id:?}: {e}")))?;
    Ok(s)
}
