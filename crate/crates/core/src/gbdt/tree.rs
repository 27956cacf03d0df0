use serde::{Deserialize, Serialize};

use super::{leaf_weight, split_gain, structure_gain, BoostHyperParams, GbdtError, GradHess, TreeShape};
use crate::matrix::Matrix;

/// Node of an axis-aligned tree. Rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObliviousLevel {
    pub feature: usize,
    pub threshold: f64,
}

/// Preorder node list rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AxisRepr", into = "AxisRepr")]
pub struct AxisTree {
    nodes: Vec<Node>,
}

#[derive(Serialize, Deserialize)]
struct AxisRepr {
    nodes: Vec<Node>,
}

impl From<AxisTree> for AxisRepr {
    fn from(t: AxisTree) -> Self {
        Self { nodes: t.nodes }
    }
}

impl TryFrom<AxisRepr> for AxisTree {
    type Error = String;

    fn try_from(r: AxisRepr) -> Result<Self, String> {
        AxisTree::new(r.nodes)
    }
}

impl AxisTree {
    /// Checks that `nodes` is a preorder layout in which every node is
    /// reached exactly once from the root.
    pub fn new(nodes: Vec<Node>) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut next = 0usize;
        fn walk(nodes: &[Node], i: usize, next: &mut usize) -> Result<(), String> {
            if i != *next || i >= nodes.len() {
                return Err(format!("node {i} is not in preorder position"));
            }
            *next += 1;
            match &nodes[i] {
                Node::Leaf { weight } if !weight.is_finite() => Err(format!("leaf {i} weight is not finite")),
                Node::Leaf { .. } => Ok(()),
                Node::Split { threshold, left, right, .. } => {
                    if !threshold.is_finite() {
                        return Err(format!("node {i} threshold is not finite"));
                    }
                    walk(nodes, *left, next)?;
                    walk(nodes, *right, next)
                }
            }
        }
        walk(&nodes, 0, &mut next)?;
        if next != nodes.len() {
            return Err("unreachable nodes".into());
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Index of the leaf `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Tree whose nodes at each depth share one split. Leaf `k` is reached by
/// the bit pattern of `k` (most significant bit = first level, 1 = right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObliviousRepr", into = "ObliviousRepr")]
pub struct ObliviousTree {
    levels: Vec<ObliviousLevel>,
    leaf_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ObliviousRepr {
    levels: Vec<ObliviousLevel>,
    leaf_weights: Vec<f64>,
}

impl From<ObliviousTree> for ObliviousRepr {
    fn from(t: ObliviousTree) -> Self {
        Self {
            levels: t.levels,
            leaf_weights: t.leaf_weights,
        }
    }
}

impl TryFrom<ObliviousRepr> for ObliviousTree {
    type Error = String;

    fn try_from(r: ObliviousRepr) -> Result<Self, String> {
        ObliviousTree::new(r.levels, r.leaf_weights)
    }
}

impl ObliviousTree {
    pub fn new(levels: Vec<ObliviousLevel>, leaf_weights: Vec<f64>) -> Result<Self, String> {
        if levels.len() > super::MAX_OBLIVIOUS_DEPTH {
            return Err(format!("{} levels exceeds the depth cap", levels.len()));
        }
        if leaf_weights.len() != 1 << levels.len() {
            return Err(format!(
                "{} levels need {} leaves, got {}",
                levels.len(),
                1usize << levels.len(),
                leaf_weights.len()
            ));
        }
        if levels.iter().any(|l| !l.threshold.is_finite()) || leaf_weights.iter().any(|w| !w.is_finite()) {
            return Err("non-finite threshold or weight".into());
        }
        Ok(Self { levels, leaf_weights })
    }

    pub fn levels(&self) -> &[ObliviousLevel] {
        &self.levels
    }

    pub fn leaf_weights(&self) -> &[f64] {
        &self.leaf_weights
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        self.levels
            .iter()
            .fold(0, |idx, l| 2 * idx + usize::from(x[l.feature] >= l.threshold))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum RegressionTree {
    Axis(AxisTree),
    Oblivious(ObliviousTree),
}

impl RegressionTree {
    pub fn single_leaf(weight: f64) -> Self {
        RegressionTree::Axis(AxisTree {
            nodes: vec![Node::Leaf { weight }],
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            RegressionTree::Axis(t) => match t.nodes[t.leaf_index(x)] {
                Node::Leaf { weight } => weight,
                Node::Split { .. } => unreachable!("leaf_index returns leaves"),
            },
            RegressionTree::Oblivious(t) => t.leaf_weights[t.leaf_index(x)],
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            RegressionTree::Axis(t) => t.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count(),
            RegressionTree::Oblivious(t) => t.leaf_weights.len(),
        }
    }

    /// Every (feature, threshold) the tree tests.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        match self {
            RegressionTree::Axis(t) => t
                .nodes
                .iter()
                .filter_map(|n| match n {
                    Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
                    Node::Leaf { .. } => None,
                })
                .collect(),
            RegressionTree::Oblivious(t) => t.levels.iter().map(|l| (l.feature, l.threshold)).collect(),
        }
    }

    pub fn split_features(&self) -> Vec<usize> {
        self.splits().into_iter().map(|(f, _)| f).collect()
    }

    pub fn depth(&self) -> usize {
        match self {
            RegressionTree::Axis(t) => {
                fn d(nodes: &[Node], i: usize) -> usize {
                    match &nodes[i] {
                        Node::Leaf { .. } => 0,
                        Node::Split { left, right, .. } => 1 + d(nodes, *left).max(d(nodes, *right)),
                    }
                }
                d(&t.nodes, 0)
            }
            RegressionTree::Oblivious(t) => t.levels.len(),
        }
    }
}

/// Midpoint between two adjacent distinct values that still separates them
/// under the `x < threshold` rule.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = 0.5 * (lo + hi);
    if m > lo {
        m
    } else {
        hi
    }
}

fn presort(x: &Matrix, rows: &[usize], features: &[usize]) -> Vec<Vec<usize>> {
    features
        .iter()
        .map(|&f| {
            let mut r = rows.to_vec();
            r.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
            r
        })
        .collect()
}

/// Every row ordered by each feature, computed once per ensemble.
pub(crate) struct ColumnOrder(Vec<Vec<usize>>);

impl ColumnOrder {
    pub(crate) fn new(x: &Matrix) -> Self {
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let features: Vec<usize> = (0..x.n_cols()).collect();
        Self(presort(x, &rows, &features))
    }

    fn restrict(&self, n_rows: usize, rows: &[usize], features: &[usize]) -> Vec<Vec<usize>> {
        if rows.len() == n_rows {
            return features.iter().map(|&f| self.0[f].clone()).collect();
        }
        let mut keep = vec![false; n_rows];
        for &r in rows {
            keep[r] = true;
        }
        features
            .iter()
            .map(|&f| self.0[f].iter().copied().filter(|&r| keep[r]).collect())
            .collect()
    }
}

/// Grows one tree on the sampled `rows` using only the sampled `features`.
pub fn build_tree(
    x: &Matrix,
    grad: &GradHess,
    rows: &[usize],
    features: &[usize],
    hyper: &BoostHyperParams,
) -> Result<RegressionTree, GbdtError> {
    build_tree_ordered(x, grad, rows, features, hyper, &ColumnOrder::new(x))
}

pub(crate) fn build_tree_ordered(
    x: &Matrix,
    grad: &GradHess,
    rows: &[usize],
    features: &[usize],
    hyper: &BoostHyperParams,
    order: &ColumnOrder,
) -> Result<RegressionTree, GbdtError> {
    if rows.is_empty() {
        return Err(GbdtError::DegenerateInput("no rows to build a tree on".into()));
    }
    let mut rows = rows.to_vec();
    rows.sort_unstable();
    rows.dedup();
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    let sorted = order.restrict(x.n_rows(), &rows, &features);
    match hyper.tree_shape {
        TreeShape::Axis => {
            let mut b = AxisBuilder {
                x,
                grad,
                features: &features,
                hyper,
                nodes: Vec::new(),
                go_left: vec![false; x.n_rows()],
            };
            b.grow(sorted, 0)?;
            Ok(RegressionTree::Axis(AxisTree { nodes: b.nodes }))
        }
        TreeShape::Oblivious => build_oblivious(x, grad, &rows, &features, sorted, hyper).map(RegressionTree::Oblivious),
    }
}

struct AxisBuilder<'a> {
    x: &'a Matrix,
    grad: &'a GradHess,
    features: &'a [usize],
    hyper: &'a BoostHyperParams,
    nodes: Vec<Node>,
    go_left: Vec<bool>,
}

struct SplitChoice {
    slot: usize,
    threshold: f64,
}

impl AxisBuilder<'_> {
    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> Result<usize, GbdtError> {
        let rows = &sorted[0];
        let (mut g, mut h) = (0.0, 0.0);
        for &r in rows {
            g += self.grad.g[r];
            h += self.grad.h[r];
        }
        let me = self.nodes.len();
        let choice = if depth < self.hyper.max_depth && rows.len() >= 2 {
            self.best_split(&sorted, g, h)?
        } else {
            None
        };
        let Some(SplitChoice { slot, threshold }) = choice else {
            self.nodes.push(Node::Leaf {
                weight: leaf_weight(g, h, self.hyper.reg_lambda)?,
            });
            return Ok(me);
        };

        let feature = self.features[slot];
        for &r in rows {
            self.go_left[r] = self.x.get(r, feature) < threshold;
        }
        let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for list in &sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = list.iter().partition(|&&r| self.go_left[r]);
            left.push(l);
            right.push(r);
        }
        drop(sorted);

        self.nodes.push(Node::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let l = self.grow(left, depth + 1)?;
        let r = self.grow(right, depth + 1)?;
        if let Node::Split { left, right, .. } = &mut self.nodes[me] {
            *left = l;
            *right = r;
        }
        Ok(me)
    }

    /// Highest-gain admissible split; ties keep the lowest feature, then the
    /// lowest threshold.
    fn best_split(&self, sorted: &[Vec<usize>], g: f64, h: f64) -> Result<Option<SplitChoice>, GbdtError> {
        let hp = self.hyper;
        let mut best_gain = 0.0;
        let mut best = None;
        for (slot, list) in sorted.iter().enumerate() {
            let f = self.features[slot];
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..list.len() - 1 {
                let r = list[k];
                gl += self.grad.g[r];
                hl += self.grad.h[r];
                let v = self.x.get(r, f);
                let v_next = self.x.get(list[k + 1], f);
                if v_next <= v {
                    continue;
                }
                let hr = h - hl;
                if hl < hp.min_child_weight || hr < hp.min_child_weight {
                    continue;
                }
                let gain = split_gain(gl, hl, g - gl, hr, hp.reg_lambda, hp.gamma_complexity)?;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some(SplitChoice {
                        slot,
                        threshold: midpoint(v, v_next),
                    });
                }
            }
        }
        Ok(best)
    }
}

#[derive(Clone, Copy, Default)]
struct NodeScan {
    gl: f64,
    hl: f64,
    cl: usize,
    contrib: f64,
    split: bool,
    bad: bool,
}

fn build_oblivious(
    x: &Matrix,
    grad: &GradHess,
    rows: &[usize],
    features: &[usize],
    sorted: Vec<Vec<usize>>,
    hyper: &BoostHyperParams,
) -> Result<ObliviousTree, GbdtError> {
    let lambda = hyper.reg_lambda;
    let mcw = hyper.min_child_weight;
    // leaf index of each row, plus a dense index over the occupied leaves
    let mut node_of = vec![0usize; x.n_rows()];
    let mut slot_of = vec![0usize; x.n_rows()];
    let mut levels = Vec::new();

    for _ in 0..hyper.max_depth {
        let mut occupied: Vec<usize> = rows.iter().map(|&r| node_of[r]).collect();
        occupied.sort_unstable();
        occupied.dedup();
        let n_nodes = occupied.len();
        let mut gn = vec![0.0; n_nodes];
        let mut hn = vec![0.0; n_nodes];
        let mut cn = vec![0usize; n_nodes];
        for &r in rows {
            let k = occupied.binary_search(&node_of[r]).expect("row leaf is occupied");
            slot_of[r] = k;
            gn[k] += grad.g[r];
            hn[k] += grad.h[r];
            cn[k] += 1;
        }

        let status = |k: usize, s: &mut NodeScan| {
            let cr = cn[k] - s.cl;
            let hr = hn[k] - s.hl;
            s.split = s.cl > 0 && cr > 0;
            s.bad = (s.cl > 0 && s.hl < mcw) || (cr > 0 && hr < mcw);
            s.contrib = if s.split {
                structure_gain(s.gl, s.hl, gn[k] - s.gl, hr, lambda) - hyper.gamma_complexity
            } else {
                0.0
            };
        };

        let mut best_total = 0.0;
        let mut best: Option<ObliviousLevel> = None;
        for (slot, list) in sorted.iter().enumerate() {
            let f = features[slot];
            let mut scan = vec![NodeScan::default(); n_nodes];
            let (mut total, mut n_split, mut n_bad) = (0.0, 0usize, 0usize);
            for (k, s) in scan.iter_mut().enumerate() {
                status(k, s);
                n_bad += usize::from(s.bad);
            }
            for idx in 0..list.len() - 1 {
                let r = list[idx];
                let k = slot_of[r];
                let s = &mut scan[k];
                total -= s.contrib;
                n_split -= usize::from(s.split);
                n_bad -= usize::from(s.bad);
                s.gl += grad.g[r];
                s.hl += grad.h[r];
                s.cl += 1;
                status(k, s);
                total += s.contrib;
                n_split += usize::from(s.split);
                n_bad += usize::from(s.bad);

                let v = x.get(r, f);
                let v_next = x.get(list[idx + 1], f);
                if v_next > v && n_bad == 0 && n_split > 0 && total > best_total {
                    best_total = total;
                    best = Some(ObliviousLevel {
                        feature: f,
                        threshold: midpoint(v, v_next),
                    });
                }
            }
        }

        let Some(level) = best else { break };
        for &r in rows {
            node_of[r] = 2 * node_of[r] + usize::from(x.get(r, level.feature) >= level.threshold);
        }
        levels.push(level);
    }

    let n_leaves = 1usize << levels.len();
    let mut g = vec![0.0; n_leaves];
    let mut h = vec![0.0; n_leaves];
    let mut c = vec![0usize; n_leaves];
    for &r in rows {
        let k = node_of[r];
        g[k] += grad.g[r];
        h[k] += grad.h[r];
        c[k] += 1;
    }
    // an empty leaf takes the weight of its deepest ancestor that holds rows
    let depth = levels.len();
    let mut stats = vec![(g, h, c)];
    for _ in 0..depth {
        let (cg, ch, cc) = stats.last().expect("leaf level");
        let half = cc.len() / 2;
        let pair = |v: &[f64], p: usize| v[2 * p] + v[2 * p + 1];
        stats.push((
            (0..half).map(|p| pair(cg, p)).collect(),
            (0..half).map(|p| pair(ch, p)).collect(),
            (0..half).map(|p| cc[2 * p] + cc[2 * p + 1]).collect(),
        ));
    }
    let mut weights = vec![0.0];
    for (g, h, c) in stats.iter().rev() {
        let mut next = Vec::with_capacity(c.len());
        for k in 0..c.len() {
            next.push(if c[k] > 0 { leaf_weight(g[k], h[k], lambda)? } else { weights[k / 2] });
        }
        weights = next;
    }
    Ok(ObliviousTree {
        levels,
        leaf_weights: weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::grad_hess_squared;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hyper(shape: TreeShape, depth: usize, lambda: f64) -> BoostHyperParams {
        BoostHyperParams {
            max_depth: depth,
            reg_lambda: lambda,
            gamma_complexity: 0.0,
            tree_shape: shape,
            ..Default::default()
        }
    }

    fn all_rows(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn equal_residuals_give_one_leaf() {
        let x = Matrix::from_rows(&[[0.0, 5.0], [1.0, 4.0], [2.0, 3.0]]);
        let gh = grad_hess_squared(&[2.0, 2.0, 2.0], &[0.0, 0.0, 0.0]);
        for shape in [TreeShape::Axis, TreeShape::Oblivious] {
            let t = build_tree(&x, &gh, &all_rows(3), &[0, 1], &hyper(shape, 3, 1.0)).unwrap();
            assert_eq!(t.n_leaves(), 1);
            assert_eq!(t.predict(&[0.0, 0.0]), leaf_weight(-6.0, 3.0, 1.0).unwrap());
        }
    }

    #[test]
    fn step_data_splits_at_class_midpoint() {
        // y = sign(x); exhaustive enumeration of thresholds picks the gap
        let xs = [-3.0, -2.0, -0.5, 1.0, 2.5, 4.0];
        let y: Vec<f64> = xs.iter().map(|v: &f64| v.signum()).collect();
        let x = Matrix::column_vector(&xs);
        let gh = grad_hess_squared(&y, &[0.0; 6]);
        let t = build_tree(&x, &gh, &all_rows(6), &[0], &hyper(TreeShape::Axis, 1, 0.0)).unwrap();

        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 1..6 {
            let thr = 0.5 * (xs[k - 1] + xs[k]);
            let (gl, gr): (f64, f64) = (gh.g[..k].iter().sum(), gh.g[k..].iter().sum());
            let gain = split_gain(gl, k as f64, gr, (6 - k) as f64, 0.0, 0.0).unwrap();
            if gain > best.0 {
                best = (gain, thr);
            }
        }
        assert_eq!(t.splits(), vec![(0, best.1)]);
        assert_eq!(best.1, 0.25);
        assert_eq!(t.predict(&[-1.0]), -1.0);
        assert_eq!(t.predict(&[1.0]), 1.0);
    }

    /// Regularized second-order objective of a partition (lower is better):
    /// sum over leaves of -1/2 G^2/(H + lambda) + gamma.
    fn partition_objective(groups: &[Vec<usize>], g: &[f64], lambda: f64, gamma: f64) -> f64 {
        groups
            .iter()
            .filter(|grp| !grp.is_empty())
            .map(|grp| {
                let gs: f64 = grp.iter().map(|&r| g[r]).sum();
                -0.5 * gs * gs / (grp.len() as f64 + lambda) + gamma
            })
            .sum()
    }

    #[test]
    fn oblivious_levels_match_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(0..5) as f64).collect()).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x = Matrix::from_rows(&rows);
            let gh = grad_hess_squared(&y, &[0.0; 6]);
            let lambda = 0.5;
            let t = build_tree(&x, &gh, &all_rows(6), &[0, 1, 2], &hyper(TreeShape::Oblivious, 2, lambda)).unwrap();
            let RegressionTree::Oblivious(tree) = &t else { panic!() };

            // brute force, one level at a time, over every (feature, threshold)
            let mut groups = vec![all_rows(6)];
            for level in 0..2 {
                let before = partition_objective(&groups, &gh.g, lambda, 0.0);
                let mut best: Option<(f64, usize, f64)> = None;
                for f in 0..3 {
                    let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
                    vals.sort_by(f64::total_cmp);
                    vals.dedup();
                    for w in vals.windows(2) {
                        let thr = 0.5 * (w[0] + w[1]);
                        let mut next = Vec::new();
                        let mut n_split = 0;
                        for grp in &groups {
                            let (l, r): (Vec<usize>, Vec<usize>) = grp.iter().partition(|&&i| rows[i][f] < thr);
                            n_split += usize::from(!l.is_empty() && !r.is_empty());
                            next.push(l);
                            next.push(r);
                        }
                        let gain = before - partition_objective(&next, &gh.g, lambda, 0.0);
                        if n_split > 0 && gain > 1e-12 && best.is_none_or(|b| gain > b.0 + 1e-12) {
                            best = Some((gain, f, thr));
                        }
                    }
                }
                match best {
                    None => {
                        assert_eq!(tree.levels().len(), level);
                        break;
                    }
                    Some((_, f, thr)) => {
                        let got = &tree.levels()[level];
                        assert_eq!((got.feature, got.threshold), (f, thr));
                        groups = groups
                            .iter()
                            .flat_map(|grp| {
                                let (l, r): (Vec<usize>, Vec<usize>) = grp.iter().partition(|&&i| rows[i][f] < thr);
                                [l, r]
                            })
                            .collect();
                    }
                }
            }
        }
    }

    #[test]
    fn leaf_weights_match_routed_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 5.0 + r[3]).collect();
        let x = Matrix::from_rows(&rows);
        let gh = grad_hess_squared(&y, &[1.0; 50]);
        let sample: Vec<usize> = (0..50).filter(|i| i % 3 != 0).collect();
        for shape in [TreeShape::Axis, TreeShape::Oblivious] {
            let t = build_tree(&x, &gh, &sample, &[0, 1, 3], &hyper(shape, 4, 0.7)).unwrap();
            let mut stats: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
            for &r in &sample {
                let leaf = match &t {
                    RegressionTree::Axis(a) => a.leaf_index(x.row(r)),
                    RegressionTree::Oblivious(o) => o.leaf_index(x.row(r)),
                };
                let e = stats.entry(leaf).or_default();
                e.0 += gh.g[r];
                e.1 += gh.h[r];
            }
            for (&leaf, &(g, h)) in &stats {
                let w = match &t {
                    RegressionTree::Axis(a) => match a.nodes()[leaf] {
                        Node::Leaf { weight } => weight,
                        _ => unreachable!(),
                    },
                    RegressionTree::Oblivious(o) => o.leaf_weights()[leaf],
                };
                assert!((w - leaf_weight(g, h, 0.7).unwrap()).abs() < 1e-12);
            }
            assert!(t.split_features().iter().all(|f| [0, 1, 3].contains(f)));
            assert!(t.n_leaves() <= 1 << 4);
        }
    }

    #[test]
    fn empty_oblivious_leaves_use_nearest_occupied_ancestor() {
        // x0 and x1 move together, so the second level leaves two leaves empty
        let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [2.0, 5.0]]);
        let y = [0.0, 0.0, 4.0, 4.0, 9.0];
        let gh = grad_hess_squared(&y, &[0.0; 5]);
        let t = build_tree(&x, &gh, &all_rows(5), &[0, 1], &hyper(TreeShape::Oblivious, 2, 0.0)).unwrap();
        let RegressionTree::Oblivious(o) = &t else { panic!() };
        assert_eq!(o.levels().len(), 2);
        let w = o.leaf_weights();
        for r in 0..5 {
            assert_eq!(t.predict(x.row(r)), y[r]);
        }
        let occupied: Vec<usize> = (0..5).map(|r| o.leaf_index(x.row(r))).collect();
        assert!((0..4).any(|k| !occupied.contains(&k)));
        for k in 0..4 {
            if !occupied.contains(&k) {
                let parent: Vec<usize> = (0..5).filter(|&r| occupied[r] / 2 == k / 2).collect();
                let (g, h) = parent.iter().fold((0.0, 0.0), |(g, h), &r| (g + gh.g[r], h + gh.h[r]));
                assert_eq!(w[k], leaf_weight(g, h, 0.0).unwrap());
            }
        }
    }

    #[test]
    fn min_child_weight_blocks_small_children() {
        let x = Matrix::column_vector(&[0.0, 1.0, 2.0, 3.0]);
        let gh = grad_hess_squared(&[10.0, 0.0, 0.0, 0.0], &[0.0; 4]);
        let mut h = hyper(TreeShape::Axis, 3, 0.0);
        h.min_child_weight = 2.0;
        let t = build_tree(&x, &gh, &all_rows(4), &[0], &h).unwrap();
        // the only split with both sides >= 2 rows is at 1.5
        assert_eq!(t.splits(), vec![(0, 1.5)]);
    }

    #[test]
    fn serde_rejects_malformed_trees() {
        let bad_oblivious = r#"{"shape":"oblivious","levels":[{"feature":0,"threshold":1.0}],"leaf_weights":[1.0]}"#;
        assert!(serde_json::from_str::<RegressionTree>(bad_oblivious).is_err());
        let bad_axis = r#"{"shape":"axis","nodes":[{"kind":"split","feature":0,"threshold":1.0,"left":1,"right":1},{"kind":"leaf","weight":0.0}]}"#;
        assert!(serde_json::from_str::<RegressionTree>(bad_axis).is_err());
        let good = r#"{"shape":"axis","nodes":[{"kind":"split","feature":0,"threshold":1.0,"left":1,"right":2},{"kind":"leaf","weight":0.0},{"kind":"leaf","weight":2.0}]}"#;
        let t: RegressionTree = serde_json::from_str(good).unwrap();
        assert_eq!(t.predict(&[3.0]), 2.0);
        assert_eq!(t.depth(), 1);
    }
}
