//! Gradient-boosted regression trees with exact greedy variance-reduction
//! splits.
//!
//! Every feature is presorted once per fit. Trees grow level by level: one
//! pass over each feature's sorted order evaluates the candidate splits of
//! all open nodes of that level at once.

use crate::error::{invalid, CoreError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Huber loss with this delta instead of squared error.
    pub huber_delta: Option<f64>,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            huber_delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostedTrees {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

#[derive(Clone, Copy, Default)]
struct NodeStats {
    count: usize,
    sum: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct ScanState {
    left: NodeStats,
    last: Option<f64>,
}

fn gain(left: NodeStats, right: NodeStats, total: NodeStats) -> f64 {
    left.sum * left.sum / left.count as f64 + right.sum * right.sum / right.count as f64
        - total.sum * total.sum / total.count as f64
}

fn build_tree(
    x: &[Vec<f64>],
    order: &[Vec<usize>],
    grad: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> (RegressionTree, Vec<usize>) {
    let n = x.len();
    let n_features = order.len();
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut node_of = vec![0usize; n];
    let mut stats = vec![NodeStats {
        count: n,
        sum: grad.iter().sum(),
    }];
    let mut open: Vec<usize> = vec![0];
    for _ in 0..max_depth {
        if open.is_empty() {
            break;
        }
        let mut slot = vec![usize::MAX; nodes.len()];
        for (i, &nd) in open.iter().enumerate() {
            slot[nd] = i;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        for f in 0..n_features {
            let mut scan: Vec<ScanState> = open
                .iter()
                .map(|_| ScanState {
                    left: NodeStats::default(),
                    last: None,
                })
                .collect();
            for &row in &order[f] {
                let s = slot[node_of[row]];
                if s == usize::MAX {
                    continue;
                }
                let v = x[row][f];
                let st = &mut scan[s];
                if let Some(last) = st.last {
                    if v > last {
                        let total = stats[open[s]];
                        let right = NodeStats {
                            count: total.count - st.left.count,
                            sum: total.sum - st.left.sum,
                        };
                        if st.left.count >= min_leaf && right.count >= min_leaf {
                            let g = gain(st.left, right, total);
                            if best[s].is_none_or(|b| g > b.gain) {
                                best[s] = Some(Candidate {
                                    gain: g,
                                    feature: f,
                                    threshold: last + (v - last) / 2.0,
                                });
                            }
                        }
                    }
                }
                st.left.count += 1;
                st.left.sum += grad[row];
                st.last = Some(v);
            }
        }
        let mut next_open = Vec::new();
        let mut children = vec![None; open.len()];
        for (s, &nd) in open.iter().enumerate() {
            let Some(c) = best[s] else { continue };
            if !(c.gain > 1e-12 * (1.0 + stats[nd].sum.abs())) {
                continue;
            }
            let left = nodes.len();
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            stats.push(NodeStats::default());
            stats.push(NodeStats::default());
            nodes[nd] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right: left + 1,
            };
            children[s] = Some((c.feature, c.threshold, left));
            next_open.push(left);
            next_open.push(left + 1);
        }
        for row in 0..n {
            let s = slot[node_of[row]];
            if s == usize::MAX {
                continue;
            }
            if let Some((f, thr, left)) = children[s] {
                let child = if x[row][f] <= thr { left } else { left + 1 };
                node_of[row] = child;
                stats[child].count += 1;
                stats[child].sum += grad[row];
            }
        }
        open = next_open;
    }
    for (nd, st) in stats.iter().enumerate() {
        if let Node::Leaf(_) = nodes[nd] {
            let v = if st.count > 0 { st.sum / st.count as f64 } else { 0.0 };
            nodes[nd] = Node::Leaf(v);
        }
    }
    (RegressionTree { nodes }, node_of)
}

impl GradientBoostedTrees {
    /// Fits on row-major features. The base score is the target mean, or the
    /// median under Huber loss.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &GbtParams) -> Result<Self> {
        if x.is_empty() || x[0].is_empty() {
            return Err(CoreError::EmptyInput("feature matrix"));
        }
        if x.len() != y.len() {
            return Err(invalid("targets", "row count mismatch"));
        }
        if !(params.learning_rate > 0.0) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        let n_features = x[0].len();
        let order: Vec<Vec<usize>> = (0..n_features)
            .map(|f| {
                let mut idx: Vec<usize> = (0..x.len()).collect();
                idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let base_score = match params.huber_delta {
            Some(_) => crate::num::median(y).unwrap_or(0.0),
            None => y.iter().sum::<f64>() / y.len() as f64,
        };
        let mut pred = vec![base_score; y.len()];
        let mut trees = Vec::with_capacity(params.n_trees);
        let mut grad = vec![0.0; y.len()];
        for _ in 0..params.n_trees {
            for i in 0..y.len() {
                let r = y[i] - pred[i];
                grad[i] = match params.huber_delta {
                    Some(d) => r.clamp(-d, d),
                    None => r,
                };
            }
            let (tree, node_of) = build_tree(
                x,
                &order,
                &grad,
                params.max_depth,
                params.min_samples_leaf.max(1),
            );
            for (i, &nd) in node_of.iter().enumerate() {
                if let Node::Leaf(v) = tree.nodes[nd] {
                    pred[i] += params.learning_rate * v;
                }
            }
            trees.push(tree);
        }
        Ok(Self {
            base_score,
            learning_rate: params.learning_rate,
            trees,
        })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.base_score
            + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lag_dataset(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let lag1 = rng.random_range(0..10) as f64;
            let row = vec![lag1, rng.random_range(0..10) as f64, rng.random_range(1..13) as f64];
            y.push(lag1);
            x.push(row);
        }
        (x, y)
    }

    fn rmse(m: &GradientBoostedTrees, x: &[Vec<f64>], y: &[f64]) -> f64 {
        let se: f64 = x.iter().zip(y).map(|(r, t)| (m.predict(r) - t).powi(2)).sum();
        (se / y.len() as f64).sqrt()
    }

    #[test]
    fn learns_identity_on_lag() {
        let (x, y) = lag_dataset(500);
        let m = GradientBoostedTrees::fit(&x, &y, &GbtParams::default()).unwrap();
        assert!(rmse(&m, &x, &y) <= 1e-3, "rmse {}", rmse(&m, &x, &y));
        let m = GradientBoostedTrees::fit(&x, &y, &GbtParams { n_trees: 100, max_depth: 2, ..Default::default() }).unwrap();
        assert!(rmse(&m, &x, &y) <= 1e-3, "rmse {}", rmse(&m, &x, &y));
    }

    #[test]
    fn depth_zero_predicts_mean() {
        let (x, y) = lag_dataset(50);
        let p = GbtParams { n_trees: 1, max_depth: 0, ..Default::default() };
        let m = GradientBoostedTrees::fit(&x, &y, &p).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((m.predict(&x[0]) - mean).abs() < 1e-12);
        assert_eq!(m.trees[0].depth(), 0);
    }

    #[test]
    fn duplicated_rows_give_identical_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..120).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0] - r[1] * r[2] + rng.random::<f64>() * 0.1).collect();
        let p = GbtParams { n_trees: 50, min_samples_leaf: 1, ..Default::default() };
        let a = GradientBoostedTrees::fit(&x, &y, &p).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().flat_map(|r| [r.clone(), r.clone()]).collect();
        let y2: Vec<f64> = y.iter().flat_map(|&v| [v, v]).collect();
        let b = GradientBoostedTrees::fit(&x2, &y2, &p).unwrap();
        for r in &x {
            assert!((a.predict(r) - b.predict(r)).abs() <= 1e-9);
        }
    }

    #[test]
    fn huber_limits_outlier_influence() {
        let (x, y) = lag_dataset(200);
        let mut dirty = y.clone();
        dirty[0] += 1e4;
        let shift = |p: GbtParams| {
            let clean = GradientBoostedTrees::fit(&x, &y, &p).unwrap();
            let noisy = GradientBoostedTrees::fit(&x, &dirty, &p).unwrap();
            x[1..]
                .iter()
                .map(|r| (clean.predict(r) - noisy.predict(r)).abs())
                .fold(0.0, f64::max)
        };
        let p = GbtParams { n_trees: 20, ..Default::default() };
        let squared = shift(p);
        let huber = shift(GbtParams { huber_delta: Some(1.0), ..p });
        assert!(huber < squared, "huber {huber} squared {squared}");
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(GradientBoostedTrees::fit(&[], &[], &GbtParams::default()).is_err());
    }

    #[test]
    fn trees_respect_depth_and_min_leaf() {
        let (x, y) = lag_dataset(300);
        let m = GradientBoostedTrees::fit(&x, &y, &GbtParams { n_trees: 10, ..Default::default() }).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
    }
}
