//! Built-in classifiers behind one fit/score interface.

mod forest;
mod logistic;

use std::fmt::Write as _;

pub use forest::{fit_forest, ForestConfig, ForestModel, Node, Tree};
pub use logistic::{fit_logistic, sigmoid, LogisticConfig, LogisticFit, LogisticModel};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Which learner to train, with frozen hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSpec {
    Logistic(LogisticConfig),
    Forest(ForestConfig),
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::Logistic(LogisticConfig::default())
    }
}

impl LearnerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Logistic(_) => "logistic",
            LearnerSpec::Forest(_) => "forest",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Logistic(c) => c.validate(),
            LearnerSpec::Forest(c) => c.validate(),
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[u8], w: &[f64]) -> Result<LearnerModel> {
        let model = match self {
            LearnerSpec::Logistic(cfg) => LearnerModel {
                n_features: x.cols(),
                kind: ModelKind::Logistic(fit_logistic(x, y, w, cfg)?.model),
            },
            LearnerSpec::Forest(cfg) => LearnerModel {
                n_features: x.cols(),
                kind: ModelKind::Forest(fit_forest(x, y, w, cfg)?),
            },
        };
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Logistic(LogisticModel),
    Forest(ForestModel),
}

/// A fitted classifier. Immutable; scoring is a pure function of the model
/// and the feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerModel {
    n_features: usize,
    kind: ModelKind,
}

const MODEL_HEADER: &str = "# confound model v1";

impl LearnerModel {
    pub fn logistic(model: LogisticModel) -> Self {
        Self {
            n_features: model.coefficients.len(),
            kind: ModelKind::Logistic(model),
        }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Class-1 probabilities for every row of `x`.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(Error::LengthMismatch {
                expected: self.n_features,
                got: x.cols(),
            });
        }
        Ok((0..x.rows())
            .map(|i| match &self.kind {
                ModelKind::Logistic(m) => m.score(x.row(i)),
                ModelKind::Forest(m) => m.score(x.row(i)),
            })
            .collect())
    }

    /// Plain-text export. Floats are written in shortest round-trip form.
    ///
    /// ```text
    /// # confound model v1
    /// kind logistic
    /// features 2
    /// intercept -0.25
    /// coefficients 1.5 0.75
    /// ```
    ///
    /// Forests list `trees <count>`, then per tree `tree <nodes>` followed by
    /// one line per node: `leaf <value>` or `split <feature> <threshold> <left> <right>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MODEL_HEADER}").unwrap();
        match &self.kind {
            ModelKind::Logistic(m) => {
                writeln!(out, "kind logistic").unwrap();
                writeln!(out, "features {}", self.n_features).unwrap();
                writeln!(out, "intercept {}", m.intercept).unwrap();
                let coefs: Vec<String> = m.coefficients.iter().map(f64::to_string).collect();
                writeln!(out, "coefficients {}", coefs.join(" ")).unwrap();
            }
            ModelKind::Forest(f) => {
                writeln!(out, "kind forest").unwrap();
                writeln!(out, "features {}", self.n_features).unwrap();
                writeln!(out, "trees {}", f.trees.len()).unwrap();
                for t in &f.trees {
                    writeln!(out, "tree {}", t.nodes.len()).unwrap();
                    for node in &t.nodes {
                        match node {
                            Node::Leaf { value } => writeln!(out, "leaf {value}").unwrap(),
                            Node::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => {
                                writeln!(out, "split {feature} {threshold} {left} {right}").unwrap()
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        fn expect<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::ModelFormat(format!("expected {key:?}, got end of input")))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some(k) if k == key => Ok(parts.map(str::to_string).collect()),
                _ => Err(Error::ModelFormat(format!(
                    "expected {key:?}, got {line:?}"
                ))),
            }
        }
        fn num<T: std::str::FromStr>(s: Option<&String>) -> Result<T> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::ModelFormat(format!("bad number {s:?}")))
        }
        let kind = expect(&mut lines, "kind")?;
        let n_features: usize = num(expect(&mut lines, "features")?.first())?;
        let kind = match kind.first().map(String::as_str) {
            Some("logistic") => {
                let intercept = num(expect(&mut lines, "intercept")?.first())?;
                let coefficients = expect(&mut lines, "coefficients")?
                    .iter()
                    .map(|c| num(Some(c)))
                    .collect::<Result<Vec<f64>>>()?;
                if coefficients.len() != n_features {
                    return Err(Error::ModelFormat("coefficient count mismatch".into()));
                }
                ModelKind::Logistic(LogisticModel {
                    intercept,
                    coefficients,
                })
            }
            Some("forest") => {
                let n_trees: usize = num(expect(&mut lines, "trees")?.first())?;
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    let n_nodes: usize = num(expect(&mut lines, "tree")?.first())?;
                    let mut nodes = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        let line = lines
                            .next()
                            .ok_or_else(|| Error::ModelFormat("truncated tree".into()))?;
                        let parts: Vec<String> =
                            line.split_whitespace().map(str::to_string).collect();
                        let node = match parts.first().map(String::as_str) {
                            Some("leaf") => Node::Leaf {
                                value: num(parts.get(1))?,
                            },
                            Some("split") => Node::Split {
                                feature: num(parts.get(1))?,
                                threshold: num(parts.get(2))?,
                                left: num(parts.get(3))?,
                                right: num(parts.get(4))?,
                            },
                            _ => return Err(Error::ModelFormat(format!("bad node {line:?}"))),
                        };
                        nodes.push(node);
                    }
                    validate_tree(&nodes, n_features)?;
                    trees.push(Tree { nodes });
                }
                if trees.is_empty() {
                    return Err(Error::ModelFormat("forest without trees".into()));
                }
                ModelKind::Forest(ForestModel { trees })
            }
            other => return Err(Error::ModelFormat(format!("unknown model kind {other:?}"))),
        };
        Ok(Self { n_features, kind })
    }
}

fn validate_tree(nodes: &[Node], n_features: usize) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::ModelFormat("empty tree".into()));
    }
    for (i, node) in nodes.iter().enumerate() {
        match *node {
            Node::Leaf { value } if !(0.0..=1.0).contains(&value) => {
                return Err(Error::ModelFormat(format!(
                    "leaf value {value} outside [0,1]"
                )))
            }
            // children must come after their parent, which also rules out cycles
            Node::Split {
                feature,
                left,
                right,
                ..
            } if feature >= n_features
                || left <= i
                || right <= i
                || left >= nodes.len()
                || right >= nodes.len() =>
            {
                return Err(Error::ModelFormat(format!("bad split at node {i}")))
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coefficient_model_scores_half() {
        let m = LearnerModel::logistic(LogisticModel {
            intercept: 0.0,
            coefficients: vec![0.0, 0.0],
        });
        let x = Matrix::new(2, 2, vec![1.0, 2.0, -3.0, 4.0]).unwrap();
        assert_eq!(m.predict_proba(&x).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(
            m.predict_proba(&Matrix::zeros(1, 3)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let x = Matrix::new(
            8,
            2,
            vec![
                0.1, 1.0, 0.4, 0.2, 0.5, 0.9, 0.8, 0.3, 0.2, 0.7, 0.9, 0.1, 0.3, 0.3, 0.6, 0.6,
            ],
        )
        .unwrap();
        let y = [0, 0, 1, 1, 0, 1, 0, 1];
        let w = [1.0; 8];
        let forest = LearnerSpec::Forest(ForestConfig {
            n_trees: 3,
            min_leaf: 1,
            ..Default::default()
        });
        for spec in [LearnerSpec::default(), forest] {
            let m = spec.fit(&x, &y, &w).unwrap();
            let back = LearnerModel::from_text(&m.to_text()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn malformed_text_rejected() {
        assert!(LearnerModel::from_text("kind tree\nfeatures 1\n").is_err());
        assert!(LearnerModel::from_text(
            "kind logistic\nfeatures 2\nintercept 0\ncoefficients 1\n"
        )
        .is_err());
        let cyclic = "kind forest\nfeatures 1\ntrees 1\ntree 2\nsplit 0 0.5 0 1\nleaf 0.5\n";
        assert!(LearnerModel::from_text(cyclic).is_err());
    }
}
