//! Random forest of CART classification trees (Gini impurity).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// `None` means `ceil(sqrt(p))`.
    pub features_per_split: Option<usize>,
    /// Draw each tree's training rows with replacement, probability ∝ weight.
    /// Without it every tree sees all rows with their weights.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 8,
            min_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument("n_trees must be positive".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidArgument("min_leaf must be positive".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::InvalidArgument(
                "features_per_split must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        /// Weighted class-1 fraction of the training rows reaching the leaf.
        value: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes stored flat; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.score(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Clone, Copy)]
struct Sample {
    row: usize,
    weight: f64,
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

fn class_mass(samples: &[Sample], y: &[u8]) -> (f64, f64) {
    samples.iter().fold((0.0, 0.0), |(w0, w1), s| {
        if y[s.row] == 1 {
            (w0, w1 + s.weight)
        } else {
            (w0 + s.weight, w1)
        }
    })
}

fn gini_mass(w0: f64, w1: f64) -> f64 {
    let t = w0 + w1;
    if t <= 0.0 {
        0.0
    } else {
        // total mass times Gini impurity
        t - (w0 * w0 + w1 * w1) / t
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    cost: f64,
    n_left: usize,
}

impl Builder<'_> {
    fn grow(&mut self, samples: &mut [Sample], depth: usize, rng: &mut rng::StreamRng) -> usize {
        let (w0, w1) = class_mass(samples, self.y);
        let id = self.nodes.len();
        let value = if w0 + w1 > 0.0 { w1 / (w0 + w1) } else { 0.5 };
        self.nodes.push(Node::Leaf { value });
        if depth >= self.cfg.max_depth
            || samples.len() < 2 * self.cfg.min_leaf
            || w0 == 0.0
            || w1 == 0.0
        {
            return id;
        }
        let parent = gini_mass(w0, w1);
        let Some(best) = self.best_split(samples, rng) else {
            return id;
        };
        if best.cost >= parent - 1e-12 * parent.max(1.0) {
            return id;
        }
        let f = best.feature;
        samples.sort_by(|a, b| self.x.get(a.row, f).total_cmp(&self.x.get(b.row, f)));
        let (l, r) = samples.split_at_mut(best.n_left);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: f,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, samples: &mut [Sample], rng: &mut rng::StreamRng) -> Option<BestSplit> {
        let p = self.x.cols();
        let (tot0, tot1) = class_mass(samples, self.y);
        let mut best: Option<BestSplit> = None;
        for f in index::sample(rng, p, self.mtry).into_iter() {
            samples.sort_by(|a, b| self.x.get(a.row, f).total_cmp(&self.x.get(b.row, f)));
            let (mut l0, mut l1) = (0.0, 0.0);
            for k in 0..samples.len() - 1 {
                let s = samples[k];
                if self.y[s.row] == 1 {
                    l1 += s.weight;
                } else {
                    l0 += s.weight;
                }
                let (here, next) = (self.x.get(s.row, f), self.x.get(samples[k + 1].row, f));
                let n_left = k + 1;
                if here == next
                    || n_left < self.cfg.min_leaf
                    || samples.len() - n_left < self.cfg.min_leaf
                {
                    continue;
                }
                let cost = gini_mass(l0, l1) + gini_mass(tot0 - l0, tot1 - l1);
                if best.as_ref().is_none_or(|b| cost < b.cost) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: here + (next - here) / 2.0,
                        cost,
                        n_left,
                    });
                }
            }
        }
        best
    }
}

pub fn fit_forest(x: &Matrix, y: &[u8], w: &[f64], cfg: &ForestConfig) -> Result<ForestModel> {
    cfg.validate()?;
    let n = x.rows();
    for len in [y.len(), w.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: len,
            });
        }
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "forest needs at least two rows".into(),
        ));
    }
    let positive = |i: &usize| y[*i] == 1 && w[*i] > 0.0;
    let negative = |i: &usize| y[*i] == 0 && w[*i] > 0.0;
    if !(0..n).any(|i| positive(&i)) || !(0..n).any(|i| negative(&i)) {
        return Err(Error::SingleClass);
    }
    let p = x.cols();
    let mtry = cfg
        .features_per_split
        .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
        .clamp(1, p);
    let sampler = if cfg.bootstrap {
        Some(
            WeightedIndex::new(w)
                .map_err(|e| Error::InvalidArgument(format!("bootstrap weights: {e}")))?,
        )
    } else {
        None
    };
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let mut rng = rng::stream(cfg.seed, t as u64);
            let mut samples: Vec<Sample> = match &sampler {
                Some(dist) => (0..n)
                    .map(|_| Sample {
                        row: dist.sample(&mut rng),
                        weight: 1.0,
                    })
                    .collect(),
                None => (0..n)
                    .filter(|&i| w[i] > 0.0)
                    .map(|i| Sample {
                        row: i,
                        weight: w[i],
                    })
                    .collect(),
            };
            let mut builder = Builder {
                x,
                y,
                cfg,
                mtry,
                nodes: Vec::new(),
            };
            builder.grow(&mut samples, 0, &mut rng);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();
    Ok(ForestModel { trees })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_bootstrap(depth: usize) -> ForestConfig {
        ForestConfig {
            n_trees: 1,
            max_depth: depth,
            min_leaf: 1,
            bootstrap: false,
            ..Default::default()
        }
    }

    #[test]
    fn depth_zero_is_class_fraction() {
        let x = Matrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let f = fit_forest(&x, &[1, 1, 0], &[1.0; 3], &no_bootstrap(0)).unwrap();
        assert!((f.score(&[5.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.trees[0].depth(), 0);
    }

    #[test]
    fn one_split_separates_threshold_data() {
        let x = Matrix::new(
            6,
            2,
            vec![0.1, 9.0, 0.2, 1.0, 0.3, 5.0, 0.7, 2.0, 0.8, 7.0, 0.9, 3.0],
        )
        .unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let cfg = ForestConfig {
            features_per_split: Some(2),
            ..no_bootstrap(1)
        };
        let f = fit_forest(&x, &y, &[1.0; 6], &cfg).unwrap();
        for (i, &label) in y.iter().enumerate() {
            assert_eq!(u8::from(f.score(x.row(i)) >= 0.5), label);
        }
        match f.trees[0].nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(feature, 0);
                assert!((threshold - 0.5).abs() < 1e-12);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn weights_shift_leaf_values() {
        let x = Matrix::new(2, 1, vec![0.0, 0.0]).unwrap();
        let f = fit_forest(&x, &[1, 0], &[3.0, 1.0], &no_bootstrap(3)).unwrap();
        assert!((f.score(&[0.0]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::zeros(3, 1);
        assert!(matches!(
            fit_forest(&x, &[1, 1, 1], &[1.0; 3], &ForestConfig::default()),
            Err(Error::SingleClass)
        ));
        // a class carried only by zero-weight rows does not count
        assert!(matches!(
            fit_forest(&x, &[1, 1, 0], &[1.0, 1.0, 0.0], &ForestConfig::default()),
            Err(Error::SingleClass)
        ));
    }
}
