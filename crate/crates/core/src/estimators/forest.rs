//! Random forest of Gini decision trees for a binary label.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means `round(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 8,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        p1: f64,
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
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p1 } => return *p1,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Builder<'a, R> {
    x: &'a [f64],
    dim: usize,
    y: &'a [bool],
    params: &'a ForestParams,
    mtry: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
    scratch: Vec<(f64, bool)>,
}

fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| self.y[r]).count();
        let p1 = pos as f64 / n as f64;
        self.nodes.push(Node::Leaf { p1 });
        if depth >= self.params.max_depth
            || n < self.params.min_samples_split.max(2)
            || pos == 0
            || pos == n
        {
            return id;
        }

        let parent = gini(pos as f64, n as f64) * n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let features = index::sample(self.rng, self.dim, self.mtry);
        for f in features.iter() {
            self.scratch.clear();
            self.scratch
                .extend(rows.iter().map(|&r| (self.x[r * self.dim + f], self.y[r])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0usize;
            for i in 0..n - 1 {
                if self.scratch[i].1 {
                    left_pos += 1;
                }
                let (v, next) = (self.scratch[i].0, self.scratch[i + 1].0);
                if v == next {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = (n - i - 1) as f64;
                let impurity = gini(left_pos as f64, nl) * nl
                    + gini((pos - left_pos) as f64, nr) * nr;
                if impurity < parent - 1e-12 && best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, f, 0.5 * (v + next)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let mut split = 0;
        for i in 0..n {
            if self.x[rows[i] * self.dim + feature] <= threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
    oob_accuracy: Option<f64>,
}

impl RandomForest {
    pub fn fit<R: Rng>(
        x: &[f64],
        dim: usize,
        y: &[bool],
        params: &ForestParams,
        rng: &mut R,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 || dim == 0 || x.len() != n * dim {
            return Err(invalid("forest needs a non-empty, rectangular training set"));
        }
        if params.n_trees == 0 {
            return Err(invalid("n_trees must be positive"));
        }
        let mtry = params
            .max_features
            .unwrap_or_else(|| libm::round(libm::sqrt(dim as f64)) as usize)
            .clamp(1, dim);
        let mut trees = Vec::with_capacity(params.n_trees);
        let mut oob_sum = vec![0.0; n];
        let mut oob_count = vec![0u32; n];
        let mut in_bag = vec![false; n];
        for _ in 0..params.n_trees {
            let mut rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            in_bag.iter_mut().for_each(|b| *b = false);
            rows.iter().for_each(|&r| in_bag[r] = true);
            let mut builder = Builder {
                x,
                dim,
                y,
                params,
                mtry,
                rng: &mut *rng,
                nodes: Vec::new(),
                scratch: Vec::with_capacity(n),
            };
            builder.build(&mut rows, 0);
            let tree = Tree {
                nodes: builder.nodes,
            };
            if params.bootstrap {
                for r in (0..n).filter(|&r| !in_bag[r]) {
                    oob_sum[r] += tree.predict(&x[r * dim..(r + 1) * dim]);
                    oob_count[r] += 1;
                }
            }
            trees.push(tree);
        }
        let scored: Vec<usize> = (0..n).filter(|&r| oob_count[r] > 0).collect();
        let oob_accuracy = (!scored.is_empty()).then(|| {
            let correct = scored
                .iter()
                .filter(|&&r| (oob_sum[r] / oob_count[r] as f64 >= 0.5) == y[r])
                .count();
            correct as f64 / scored.len() as f64
        });
        Ok(RandomForest {
            trees,
            oob_accuracy,
        })
    }

    /// Mean of the trees' leaf frequencies of the positive class.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn oob_accuracy(&self) -> Option<f64> {
        self.oob_accuracy
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}
