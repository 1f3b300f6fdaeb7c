//! Least-squares gradient boosting with depth-limited regression trees.
//!
//! Trees greedily minimize squared error with exact split search. Ties are
//! broken toward the lower feature index, then the lower threshold, so
//! training is deterministic without any sampling.

#[derive(Clone, Debug)]
pub(crate) enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_by(&self, get: &impl Fn(usize) -> f64) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if get(*feature) <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BoostedModel {
    base: f64,
    shrinkage: f64,
    trees: Vec<Tree>,
}

impl BoostedModel {
    pub(crate) fn predict_by(&self, get: impl Fn(usize) -> f64) -> f64 {
        let mut acc = self.base;
        for tree in &self.trees {
            acc += self.shrinkage * tree.predict_by(&get);
        }
        acc
    }

    pub(crate) fn predict_staged_by(&self, get: impl Fn(usize) -> f64, iterations: usize) -> f64 {
        let mut acc = self.base;
        for tree in self.trees.iter().take(iterations) {
            acc += self.shrinkage * tree.predict_by(&get);
        }
        acc
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Exact greedy split over all features and midpoints between consecutive
/// distinct values. Returns `None` when nothing strictly reduces the node
/// squared error.
fn find_split(features: &[f64], d: usize, target: &[f64], idx: &[usize]) -> Option<BestSplit> {
    let n = idx.len();
    if n < 2 {
        return None;
    }
    let total: f64 = idx.iter().map(|&i| target[i]).sum();
    let mut best: Option<BestSplit> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for f in 0..d {
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (features[i * d + f], target[i])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let mut left_sum = 0.0f64;
        for cut in 0..n - 1 {
            left_sum += pairs[cut].1;
            let (lo, hi) = (pairs[cut].0, pairs[cut + 1].0);
            if lo == hi {
                continue;
            }
            let threshold = lo + (hi - lo) * 0.5;
            if threshold <= lo || threshold >= hi {
                continue;
            }
            let nl = (cut + 1) as f64;
            let nr = (n - cut - 1) as f64;
            let right_sum = total - left_sum;
            let gain =
                left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n as f64;
            if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

fn grow(
    features: &[f64],
    d: usize,
    target: &[f64],
    idx: Vec<usize>,
    depth: u32,
    nodes: &mut Vec<Node>,
) -> usize {
    let mean = idx.iter().map(|&i| target[i]).sum::<f64>() / idx.len() as f64;
    if depth == 0 {
        nodes.push(Node::Leaf { value: mean });
        return nodes.len() - 1;
    }
    match find_split(features, d, target, &idx) {
        None => {
            nodes.push(Node::Leaf { value: mean });
            nodes.len() - 1
        }
        Some(split) => {
            let (mut left_idx, mut right_idx) = (Vec::new(), Vec::new());
            for &i in &idx {
                if features[i * d + split.feature] <= split.threshold {
                    left_idx.push(i);
                } else {
                    right_idx.push(i);
                }
            }
            let at = nodes.len();
            nodes.push(Node::Leaf { value: mean });
            let left = grow(features, d, target, left_idx, depth - 1, nodes);
            let right = grow(features, d, target, right_idx, depth - 1, nodes);
            nodes[at] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
            at
        }
    }
}

/// Fits `iterations` residual trees of the given depth starting from the
/// target mean. `features` is row-major with `d` columns.
pub(crate) fn fit_boosted(
    features: &[f64],
    n: usize,
    d: usize,
    y: &[f64],
    iterations: u32,
    shrinkage: f64,
    depth: u32,
) -> BoostedModel {
    let base = y.iter().sum::<f64>() / n as f64;
    let mut residual: Vec<f64> = y.iter().map(|&v| v - base).collect();
    let mut trees = Vec::with_capacity(iterations as usize);
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..iterations {
        let mut nodes = Vec::new();
        grow(features, d, &residual, all.clone(), depth, &mut nodes);
        let tree = Tree { nodes };
        for i in 0..n {
            let row = &features[i * d..(i + 1) * d];
            residual[i] -= shrinkage * tree.predict_by(&|f| row[f]);
        }
        trees.push(tree);
    }
    BoostedModel {
        base,
        shrinkage,
        trees,
    }
}
