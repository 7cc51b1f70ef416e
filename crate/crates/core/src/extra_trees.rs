//! Extremely randomized trees for binary classification.
//!
//! At each node `k` candidate features are drawn without replacement; each
//! gets one threshold drawn uniformly between its minimum and maximum over
//! the node's samples, and the candidate with the largest Gini decrease is
//! kept. Trees are grown on the full training set (no bootstrap) and the
//! ensemble predicts by majority vote.

use rand::seq::index::sample;
use rand::Rng;

use crate::par;
use crate::rng::{seeded, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExtraTreesParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Candidate features per node; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ExtraTreesParams {
    fn default() -> Self {
        ExtraTreesParams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        positive: bool,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> bool {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { positive } => return positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraTreesClassifier {
    params: ExtraTreesParams,
    n_features: usize,
    trees: Vec<Tree>,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    max_features: usize,
    params: ExtraTreesParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        // Ties go to the non-performant class.
        self.nodes.push(Node::Leaf {
            positive: 2 * pos > idx.len(),
        });
        self.nodes.len() - 1
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut SimRng) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let min_leaf = self.params.min_samples_leaf.max(1);
        if pos == 0 || pos == n || n < 2 * min_leaf || self.params.max_depth.is_some_and(|d| depth >= d) {
            return self.leaf(idx);
        }

        let d = self.x[idx[0]].len();
        let mut ranges: Vec<(usize, f64, f64)> = Vec::new();
        for f in 0..d {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(self.x[i][f]), hi.max(self.x[i][f]))
            });
            if hi > lo {
                ranges.push((f, lo, hi));
            }
        }
        if ranges.is_empty() {
            return self.leaf(idx);
        }

        let k = self.max_features.min(ranges.len());
        let parent = gini(pos, n);
        let mut best: Option<(f64, usize, f64)> = None;
        for c in sample(rng, ranges.len(), k) {
            let (f, lo, hi) = ranges[c];
            let threshold = lo + rng.random::<f64>() * (hi - lo);
            let threshold = if threshold <= lo { (lo + hi) / 2.0 } else { threshold };
            let (mut ln, mut lp) = (0, 0);
            for &i in idx.iter() {
                if self.x[i][f] < threshold {
                    ln += 1;
                    lp += self.y[i] as usize;
                }
            }
            let (rn, rp) = (n - ln, pos - lp);
            if ln < min_leaf || rn < min_leaf {
                continue;
            }
            let child = (ln as f64 * gini(lp, ln) + rn as f64 * gini(rp, rn)) / n as f64;
            let gain = parent - child;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, threshold));
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };

        let mut split = 0;
        for j in 0..n {
            if self.x[idx[j]][feature] < threshold {
                idx.swap(j, split);
                split += 1;
            }
        }
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { positive: false });
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

impl ExtraTreesClassifier {
    /// Grows the ensemble; tree `t` uses seed `params.seed + t`.
    ///
    /// Panics if `x` is empty or rows differ in length.
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: ExtraTreesParams) -> Self {
        assert!(
            !x.is_empty() && x.len() == y.len(),
            "training set is empty or misaligned"
        );
        let n_features = x[0].len();
        assert!(x.iter().all(|r| r.len() == n_features), "ragged feature matrix");
        let max_features = params
            .max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .max(1);
        let trees = par::map_indexed(params.n_trees, |t| {
            let mut rng = seeded(params.seed.wrapping_add(t as u64), &[]);
            let mut builder = Builder {
                x,
                y,
                max_features,
                params,
                nodes: Vec::new(),
            };
            let mut idx: Vec<usize> = (0..x.len()).collect();
            builder.build(&mut idx, 0, &mut rng);
            Tree { nodes: builder.nodes }
        });
        ExtraTreesClassifier {
            params,
            n_features,
            trees,
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> &ExtraTreesParams {
        &self.params
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Fraction of trees voting for the positive class.
    pub fn positive_fraction(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        votes as f64 / self.trees.len() as f64
    }

    /// Majority vote; ties go to the negative class.
    pub fn predict(&self, x: &[f64]) -> bool {
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        2 * votes > self.trees.len()
    }
}

/// Mean per-class recall over the classes present in `truth`.
pub fn balanced_accuracy(truth: &[bool], predicted: &[bool]) -> f64 {
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (&t, &p) in truth.iter().zip(predicted) {
        totals[t as usize] += 1;
        hits[t as usize] += (t == p) as usize;
    }
    let recalls: Vec<f64> = (0..2)
        .filter(|&c| totals[c] > 0)
        .map(|c| hits[c] as f64 / totals[c] as f64)
        .collect();
    if recalls.is_empty() {
        return f64::NAN;
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, d: usize, shift: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = seeded(seed, &[]);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = i % 2 == 0;
            let row = (0..d)
                .map(|f| noise.sample(&mut rng) + if label && f == 0 { shift } else { 0.0 })
                .collect();
            x.push(row);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn separable_data_is_learned() {
        let (x, y) = blobs(400, 4, 8.0, 1);
        let (xt, yt) = blobs(200, 4, 8.0, 2);
        let clf = ExtraTreesClassifier::fit(
            &x,
            &y,
            ExtraTreesParams {
                n_trees: 30,
                ..Default::default()
            },
        );
        let pred: Vec<bool> = xt.iter().map(|r| clf.predict(r)).collect();
        assert!(balanced_accuracy(&yt, &pred) > 0.95);
    }

    #[test]
    fn noise_is_not_learned() {
        let (x, y) = blobs(400, 4, 0.0, 3);
        let (xt, yt) = blobs(400, 4, 0.0, 4);
        let clf = ExtraTreesClassifier::fit(
            &x,
            &y,
            ExtraTreesParams {
                n_trees: 30,
                ..Default::default()
            },
        );
        let pred: Vec<bool> = xt.iter().map(|r| clf.predict(r)).collect();
        assert!((balanced_accuracy(&yt, &pred) - 0.5).abs() < 0.1);
    }

    #[test]
    fn depth_and_leaf_limits_hold() {
        let (x, y) = blobs(300, 3, 1.0, 5);
        let params = ExtraTreesParams {
            n_trees: 10,
            max_depth: Some(3),
            min_samples_leaf: 5,
            ..Default::default()
        };
        let clf = ExtraTreesClassifier::fit(&x, &y, params);
        assert!(clf.trees().iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn fitting_and_prediction_are_deterministic() {
        let (x, y) = blobs(200, 3, 1.5, 6);
        let params = ExtraTreesParams {
            n_trees: 20,
            seed: 77,
            ..Default::default()
        };
        let a = ExtraTreesClassifier::fit(&x, &y, params);
        let b = ExtraTreesClassifier::fit(&x, &y, params);
        assert_eq!(a, b);
        for r in &x {
            assert_eq!(a.predict(r), a.predict(r));
        }
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[true, false], &[true, false]), 1.0);
        assert_eq!(
            balanced_accuracy(&[true, true, true, false], &[true, true, true, true]),
            0.5
        );
    }
}
