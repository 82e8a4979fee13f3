//! Gradient-boosted regression trees with the second-order (XGBoost) split gain
//! under squared loss.
//!
//! With squared loss every hessian is 1, so node hessian sums are row counts.
//! Splits are exact (node-local midpoints between consecutive distinct values)
//! up to `exact_max_rows` training rows and histogram-based above it.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GuslError, Result};
use crate::features::FeatureMatrix;

const NO_NODE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbrtParams {
    pub max_depth: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    pub histogram_bins: usize,
    /// Largest training set that still uses exact split enumeration.
    pub exact_max_rows: usize,
}

impl GbrtParams {
    /// Per-level residual regressor.
    pub fn residual() -> Self {
        Self {
            max_depth: 6,
            rounds: 300,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            subsample: 0.8,
            histogram_bins: 256,
            exact_max_rows: 50_000,
        }
    }

    /// Shallow ensemble whose tree paths seed feature generation.
    pub fn auxiliary() -> Self {
        Self { max_depth: 3, rounds: 20, learning_rate: 0.3, ..Self::residual() }
    }

    /// No shrinkage, regularization or sampling: every quantity is exact.
    pub fn plain(max_depth: usize, rounds: usize) -> Self {
        Self {
            max_depth,
            rounds,
            learning_rate: 1.0,
            lambda: 0.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            subsample: 1.0,
            histogram_bins: 256,
            exact_max_rows: 50_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GuslError::InvalidConfig(m));
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return bad(format!("lambda and gamma must be >= 0 (got {}, {})", self.lambda, self.gamma));
        }
        if self.rounds == 0 {
            return bad("at least one boosting round is required".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning rate must be in (0, 1], got {}", self.learning_rate));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!("subsample must be in (0, 1], got {}", self.subsample));
        }
        if !(self.min_child_weight >= 0.0) {
            return bad("min_child_weight must be >= 0".into());
        }
        if !(2..=256).contains(&self.histogram_bins) {
            return bad(format!("histogram bins must be in 2..=256, got {}", self.histogram_bins));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { weight: f64 },
}

/// One regression tree, nodes stored in preorder (root first, left subtree before right).
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

/// Serialized node: `feature` is `None` for leaves; `value` is threshold or leaf weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreorderNode {
    pub feature: Option<usize>,
    pub value: f64,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Self { nodes: vec![TreeNode::Leaf { weight }] }
    }

    /// Re-lays an arena (root at 0) out in preorder.
    fn from_arena(arena: &[TreeNode]) -> Self {
        let mut nodes = Vec::with_capacity(arena.len());
        fn walk(arena: &[TreeNode], i: usize, out: &mut Vec<TreeNode>) -> usize {
            let at = out.len();
            match arena[i] {
                TreeNode::Leaf { weight } => out.push(TreeNode::Leaf { weight }),
                TreeNode::Split { feature, threshold, left, right } => {
                    out.push(TreeNode::Leaf { weight: 0.0 });
                    let l = walk(arena, left, out);
                    let r = walk(arena, right, out);
                    out[at] = TreeNode::Split { feature, threshold, left: l, right: r };
                }
            }
            at
        }
        walk(arena, 0, &mut nodes);
        Self { nodes }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn split_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Split { .. })).count()
    }

    pub fn leaf_count(&self) -> usize {
        self.node_count() - self.split_count()
    }

    /// Number of comparisons on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn d(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + d(nodes, left).max(d(nodes, right)),
            }
        }
        d(&self.nodes, 0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .max()
    }

    /// Index of the leaf reached by `row`.
    #[inline]
    pub fn leaf_index(&self, x: &FeatureMatrix, row: usize) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x.get(row, feature) <= threshold { left } else { right };
                }
            }
        }
    }

    #[inline]
    pub fn predict_row(&self, x: &FeatureMatrix, row: usize) -> f64 {
        match self.nodes[self.leaf_index(x, row)] {
            TreeNode::Leaf { weight } => weight,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    /// Root-to-leaf paths as `(leaf index, distinct split features in first-encounter order)`,
    /// left before right.
    pub fn paths(&self) -> Vec<(usize, Vec<usize>)> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        fn walk(nodes: &[TreeNode], i: usize, stack: &mut Vec<usize>, out: &mut Vec<(usize, Vec<usize>)>) {
            match nodes[i] {
                TreeNode::Leaf { .. } => out.push((i, stack.clone())),
                TreeNode::Split { feature, left, right, .. } => {
                    let pushed = !stack.contains(&feature);
                    if pushed {
                        stack.push(feature);
                    }
                    walk(nodes, left, stack, out);
                    walk(nodes, right, stack, out);
                    if pushed {
                        stack.pop();
                    }
                }
            }
        }
        walk(&self.nodes, 0, &mut stack, &mut out);
        out
    }

    pub fn preorder(&self) -> Vec<PreorderNode> {
        self.nodes
            .iter()
            .map(|n| match *n {
                TreeNode::Leaf { weight } => PreorderNode { feature: None, value: weight },
                TreeNode::Split { feature, threshold, .. } => PreorderNode { feature: Some(feature), value: threshold },
            })
            .collect()
    }

    /// Parses one tree from the front of `nodes`, returning it and the number consumed.
    pub fn from_preorder(nodes: &[PreorderNode]) -> Result<(Self, usize)> {
        fn parse(src: &[PreorderNode], pos: &mut usize, out: &mut Vec<TreeNode>, depth: usize) -> Result<usize> {
            if depth > 64 {
                return Err(GuslError::Corruption("tree deeper than 64 levels".into()));
            }
            let Some(node) = src.get(*pos) else {
                return Err(GuslError::Corruption("truncated tree".into()));
            };
            *pos += 1;
            let at = out.len();
            match node.feature {
                None => out.push(TreeNode::Leaf { weight: node.value }),
                Some(feature) => {
                    out.push(TreeNode::Leaf { weight: 0.0 });
                    let left = parse(src, pos, out, depth + 1)?;
                    let right = parse(src, pos, out, depth + 1)?;
                    out[at] = TreeNode::Split { feature, threshold: node.value, left, right };
                }
            }
            Ok(at)
        }
        let mut out = Vec::new();
        let mut pos = 0;
        parse(nodes, &mut pos, &mut out, 0)?;
        Ok((Self { nodes: out }, pos))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbrtModel {
    trees: Vec<Tree>,
    learning_rate: f64,
    base_score: f64,
    params: GbrtParams,
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Second-order split gain; `gamma` is the per-split penalty.
#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda)) - gamma
}

#[inline]
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

/// Pre-sorted and binned view of the training columns.
struct Prepared {
    /// Row indices of each column sorted by value, and the sorted values (exact mode).
    order: Vec<Vec<u32>>,
    sorted: Vec<Vec<f64>>,
    /// Per column and row: histogram bin (histogram mode).
    keys: Vec<Vec<u8>>,
    /// Histogram cut points per column; left side is `x <= cuts[b]`.
    cuts: Vec<Vec<f64>>,
    exact: bool,
}

/// Sort order, sorted values, bin keys and cuts of one column.
type ColumnPrep = (Vec<u32>, Vec<f64>, Vec<u8>, Vec<f64>);

impl Prepared {
    fn new(x: &FeatureMatrix, params: &GbrtParams) -> Self {
        let n = x.rows();
        let exact = n <= params.exact_max_rows;
        let per_col: Vec<ColumnPrep> = (0..x.cols())
            .into_par_iter()
            .map(|j| {
                let col = x.column(j);
                if exact {
                    let mut pairs: Vec<(f64, u32)> = col.iter().copied().zip(0..n as u32).collect();
                    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let (sorted, order) = pairs.into_iter().unzip();
                    (order, sorted, Vec::new(), Vec::new())
                } else {
                    let mut sorted = col.to_vec();
                    sorted.sort_unstable_by(f64::total_cmp);
                    let cuts = histogram_cuts(&sorted, params.histogram_bins);
                    let keys = col.iter().map(|&v| cuts.partition_point(|&c| c < v) as u8).collect();
                    (Vec::new(), Vec::new(), keys, cuts)
                }
            })
            .collect();
        let mut prep = Self { order: Vec::new(), sorted: Vec::new(), keys: Vec::new(), cuts: Vec::new(), exact };
        for (o, s, k, c) in per_col {
            prep.order.push(o);
            prep.sorted.push(s);
            prep.keys.push(k);
            prep.cuts.push(c);
        }
        prep
    }
}

/// Cut points for one column: midpoints of consecutive distinct values when there
/// are few of them, otherwise quantile positions (never the maximum).
fn histogram_cuts(sorted: &[f64], bins: usize) -> Vec<f64> {
    let mut distinct = sorted.to_vec();
    distinct.dedup();
    if distinct.len() <= bins {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = sorted.len();
    let max = sorted[n - 1];
    let mut cuts: Vec<f64> = (1..bins).map(|k| sorted[k * n / bins - 1]).filter(|&c| c < max).collect();
    cuts.dedup();
    cuts
}

#[inline]
fn midpoint(a: f64, b: f64) -> f64 {
    let m = (a + b) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Debug)]
struct Active {
    arena: usize,
    g: f64,
    h: f64,
    /// In-sample rows reaching this node, ascending.
    rows: Vec<u32>,
    /// Position of the parent in the previous level and whether this node's
    /// histogram is derived from it by subtraction.
    parent: Option<(usize, bool)>,
}

/// Per-node gradient and count histograms of one feature, `(g, h)` per bin.
type Hist = Vec<(f64, f64)>;

struct Builder<'a> {
    x: &'a FeatureMatrix,
    prep: &'a Prepared,
    params: &'a GbrtParams,
}

impl Builder<'_> {
    #[inline]
    fn consider(
        &self,
        best: &mut Option<Candidate>,
        node: &Active,
        feature: usize,
        gl: f64,
        hl: f64,
        threshold: impl FnOnce() -> f64,
    ) {
        let (gr, hr) = (node.g - gl, node.h - hl);
        let p = self.params;
        if hl < p.min_child_weight || hr < p.min_child_weight {
            return;
        }
        let gain = split_gain(gl, hl, gr, hr, p.lambda, p.gamma);
        if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
            *best = Some(Candidate { gain, feature, threshold: threshold() });
        }
    }

    /// Best split of every active node on one feature, scanning the presorted column.
    fn scan_exact(&self, f: usize, active: &[Active], node_of: &[u32], grad: &[f64]) -> Vec<Option<Candidate>> {
        let mut best = vec![None; active.len()];
        // (g, h, last value); h == 0 marks an untouched node
        let mut acc = vec![(0.0, 0.0, 0.0); active.len()];
        for (&r, &v) in self.prep.order[f].iter().zip(&self.prep.sorted[f]) {
            let k = node_of[r as usize];
            if k == NO_NODE {
                continue;
            }
            let k = k as usize;
            let (g, h, last) = acc[k];
            if h > 0.0 && v != last {
                self.consider(&mut best[k], &active[k], f, g, h, || midpoint(last, v));
            }
            acc[k] = (g + grad[r as usize], h + 1.0, v);
        }
        best
    }

    /// Histograms of one feature for every active node, building the smaller child
    /// of each split directly and its sibling by subtraction from the parent.
    fn histograms(&self, f: usize, active: &[Active], parents: Option<&Hist>, grad: &[f64]) -> Hist {
        let nb = self.prep.cuts[f].len() + 1;
        let keys = &self.prep.keys[f];
        let mut hist = vec![(0.0, 0.0); active.len() * nb];
        for (k, node) in active.iter().enumerate() {
            if matches!(node.parent, Some((_, true))) {
                continue;
            }
            let cells = &mut hist[k * nb..(k + 1) * nb];
            for &r in &node.rows {
                let cell = &mut cells[keys[r as usize] as usize];
                cell.0 += grad[r as usize];
                cell.1 += 1.0;
            }
        }
        for (k, node) in active.iter().enumerate() {
            if let Some((p, true)) = node.parent {
                let sibling = if k % 2 == 0 { k + 1 } else { k - 1 };
                let parent = &parents.expect("derived histogram without parent")[p * nb..(p + 1) * nb];
                for b in 0..nb {
                    let (pg, ph) = parent[b];
                    let (sg, sh) = hist[sibling * nb + b];
                    hist[k * nb + b] = (pg - sg, ph - sh);
                }
            }
        }
        hist
    }

    fn scan_hist(&self, f: usize, active: &[Active], hist: &Hist) -> Vec<Option<Candidate>> {
        let cuts = &self.prep.cuts[f];
        let nb = cuts.len() + 1;
        let mut best = vec![None; active.len()];
        for (k, node) in active.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for b in 0..nb - 1 {
                let (g, h) = hist[k * nb + b];
                gl += g;
                hl += h;
                if hl == 0.0 || hl == node.h {
                    continue;
                }
                self.consider(&mut best[k], node, f, gl, hl, || cuts[b]);
            }
        }
        best
    }

    fn build(&self, grad: &[f64], in_sample: &[bool]) -> Tree {
        let p = self.params;
        let n = self.x.rows();
        let rows: Vec<u32> = (0..n as u32).filter(|&r| in_sample[r as usize]).collect();
        let g0 = rows.iter().map(|&r| grad[r as usize]).sum();
        let h0 = rows.len() as f64;
        let mut arena = vec![TreeNode::Leaf { weight: 0.0 }];
        let mut active = vec![Active { arena: 0, g: g0, h: h0, rows, parent: None }];
        let mut node_of = vec![NO_NODE; if self.prep.exact { n } else { 0 }];
        let mut hists: Vec<Hist> = Vec::new();

        for _depth in 0..p.max_depth {
            if active.is_empty() {
                break;
            }
            let per_feature: Vec<Vec<Option<Candidate>>> = if self.prep.exact {
                node_of.iter_mut().for_each(|k| *k = NO_NODE);
                for (k, node) in active.iter().enumerate() {
                    for &r in &node.rows {
                        node_of[r as usize] = k as u32;
                    }
                }
                (0..self.x.cols()).into_par_iter().map(|f| self.scan_exact(f, &active, &node_of, grad)).collect()
            } else {
                let (cands, next_hists): (Vec<_>, Vec<_>) = (0..self.x.cols())
                    .into_par_iter()
                    .map(|f| {
                        let hist = self.histograms(f, &active, hists.get(f), grad);
                        (self.scan_hist(f, &active, &hist), hist)
                    })
                    .unzip();
                hists = next_hists;
                cands
            };
            let mut chosen: Vec<Option<Candidate>> = vec![None; active.len()];
            for cands in &per_feature {
                for (k, c) in cands.iter().enumerate() {
                    if let Some(c) = c {
                        if chosen[k].is_none_or(|b| c.gain > b.gain) {
                            chosen[k] = Some(*c);
                        }
                    }
                }
            }

            let mut next = Vec::new();
            for (k, node) in active.into_iter().enumerate() {
                match chosen[k] {
                    Some(c) => {
                        let left = arena.len();
                        arena.push(TreeNode::Leaf { weight: 0.0 });
                        arena.push(TreeNode::Leaf { weight: 0.0 });
                        arena[node.arena] =
                            TreeNode::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                        let col = self.x.column(c.feature);
                        let (lrows, rrows): (Vec<u32>, Vec<u32>) =
                            node.rows.iter().partition(|&&r| col[r as usize] <= c.threshold);
                        // exact child sums from the rows, not by subtraction
                        let lg = lrows.iter().map(|&r| grad[r as usize]).sum();
                        let rg = rrows.iter().map(|&r| grad[r as usize]).sum();
                        let left_smaller = lrows.len() <= rrows.len();
                        next.push(Active {
                            arena: left,
                            g: lg,
                            h: lrows.len() as f64,
                            rows: lrows,
                            parent: Some((k, !left_smaller)),
                        });
                        next.push(Active {
                            arena: left + 1,
                            g: rg,
                            h: rrows.len() as f64,
                            rows: rrows,
                            parent: Some((k, left_smaller)),
                        });
                    }
                    None => {
                        arena[node.arena] = TreeNode::Leaf { weight: leaf_weight(node.g, node.h, p.lambda) };
                    }
                }
            }
            active = next;
        }
        for node in &active {
            arena[node.arena] = TreeNode::Leaf { weight: leaf_weight(node.g, node.h, p.lambda) };
        }
        Tree::from_arena(&arena)
    }
}

impl GbrtModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64], params: &GbrtParams, seed: u64) -> Result<Self> {
        Self::fit_traced(x, y, params, seed).map(|(m, _)| m)
    }

    /// Fits and also returns the training MSE after every round.
    pub fn fit_traced(x: &FeatureMatrix, y: &[f64], params: &GbrtParams, seed: u64) -> Result<(Self, Vec<f64>)> {
        params.validate()?;
        let n = x.rows();
        if y.len() != n {
            return Err(GuslError::Shape(format!("{n} feature rows vs {} targets", y.len())));
        }
        if n < 2 {
            return Err(GuslError::InsufficientData("boosting needs at least 2 rows".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(GuslError::InvalidInput("non-finite target".into()));
        }
        if x.cols() >= NO_NODE as usize || n >= NO_NODE as usize {
            return Err(GuslError::InvalidInput("feature matrix too large".into()));
        }
        let prep = Prepared::new(x, params);
        let builder = Builder { x, prep: &prep, params };
        let base_score = 0.0;
        let mut pred = vec![base_score; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trees = Vec::with_capacity(params.rounds);
        let mut trace = Vec::with_capacity(params.rounds);
        let mut grad = vec![0.0; n];
        let take = ((params.subsample * n as f64).ceil() as usize).clamp(1, n);
        for _ in 0..params.rounds {
            let in_sample = if take < n {
                let mut mask = vec![false; n];
                for i in sample(&mut rng, n, take) {
                    mask[i] = true;
                }
                mask
            } else {
                vec![true; n]
            };
            for r in 0..n {
                grad[r] = pred[r] - y[r];
            }
            let tree = builder.build(&grad, &in_sample);
            for (r, p) in pred.iter_mut().enumerate() {
                *p += params.learning_rate * tree.predict_row(x, r);
            }
            trace.push(pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64);
            trees.push(tree);
        }
        Ok((Self { trees, learning_rate: params.learning_rate, base_score, params: params.clone() }, trace))
    }

    pub fn from_parts(trees: Vec<Tree>, learning_rate: f64, base_score: f64, params: GbrtParams) -> Self {
        Self { trees, learning_rate, base_score, params }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn params(&self) -> &GbrtParams {
        &self.params
    }

    /// Smallest column count a feature matrix needs for this model.
    pub fn required_columns(&self) -> usize {
        self.trees.iter().filter_map(Tree::max_feature).max().map_or(0, |f| f + 1)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.cols() < self.required_columns() {
            return Err(GuslError::Shape(format!(
                "model uses {} columns, matrix has {}",
                self.required_columns(),
                x.cols()
            )));
        }
        let rows: Vec<usize> = (0..x.rows()).collect();
        Ok(rows
            .par_chunks(4096)
            .flat_map_iter(|chunk| {
                chunk.iter().map(|&r| {
                    let sum: f64 = self.trees.iter().map(|t| t.predict_row(x, r)).sum();
                    self.base_score + self.learning_rate * sum
                })
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn column(values: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn depth_zero_single_round_is_the_mean() {
        let x = column(&[0.0, 1.0, 2.0]);
        let m = GbrtModel::fit(&x, &[1.0, 2.0, 3.0], &GbrtParams::plain(0, 1), 0).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn one_split_separates_perfectly() {
        let x = column(&[-2.0, -1.0, 1.0, 2.0]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let m = GbrtModel::fit(&x, &y, &GbrtParams::plain(1, 1), 0).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y.to_vec());
        match m.trees()[0].nodes()[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.0);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn lambda_shrinks_leaf() {
        let x = column(&[0.0, 0.0]);
        let params = GbrtParams { lambda: 2.0, ..GbrtParams::plain(0, 1) };
        let m = GbrtModel::fit(&x, &[2.0, 2.0], &params, 0).unwrap();
        assert_eq!(m.trees()[0].nodes()[0], TreeNode::Leaf { weight: 1.0 });
    }

    #[test]
    fn empty_model_predicts_base_score() {
        let m = GbrtModel::from_parts(vec![], 0.1, 0.0, GbrtParams::residual());
        assert_eq!(m.predict(&column(&[1.0, 2.0])).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn duplicated_rows_get_duplicated_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 2.0 - r[1]).collect();
        let m = GbrtModel::fit(&FeatureMatrix::from_rows(&rows).unwrap(), &y, &GbrtParams::auxiliary(), 1).unwrap();
        let probe = FeatureMatrix::from_rows(&[rows[3].clone(), rows[3].clone()]).unwrap();
        let p = m.predict(&probe).unwrap();
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn invalid_params_and_inputs() {
        let x = column(&[0.0, 1.0]);
        let bad = GbrtParams { learning_rate: 0.0, ..GbrtParams::plain(1, 1) };
        assert!(matches!(GbrtModel::fit(&x, &[0.0, 1.0], &bad, 0), Err(GuslError::InvalidConfig(_))));
        let bad = GbrtParams { rounds: 0, ..GbrtParams::plain(1, 1) };
        assert!(matches!(GbrtModel::fit(&x, &[0.0, 1.0], &bad, 0), Err(GuslError::InvalidConfig(_))));
        assert!(matches!(
            GbrtModel::fit(&x, &[0.0, f64::NAN], &GbrtParams::plain(1, 1), 0),
            Err(GuslError::InvalidInput(_))
        ));
        let m = GbrtModel::fit(
            &FeatureMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            &[0.0, 1.0],
            &GbrtParams::plain(1, 1),
            0,
        )
        .unwrap();
        assert!(matches!(m.predict(&x), Err(GuslError::Shape(_))));
    }

    #[test]
    fn histogram_mode_fits_large_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 3000;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[1] > 0.3 { 1.0 } else { -1.0 } + 0.1 * r[0]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let params = GbrtParams { exact_max_rows: 100, histogram_bins: 64, ..GbrtParams::plain(3, 10) };
        let (m, trace) = GbrtModel::fit_traced(&x, &y, &params, 0).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        // residual error is bounded by rows falling between a bin cut and the step
        assert!(*trace.last().unwrap() < 0.03);
        match m.trees()[0].nodes()[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 1);
                assert!((threshold - 0.3).abs() < 0.03);
            }
            _ => panic!("expected a split"),
        }
        // training predictions reproduce the in-fit accumulation
        let pred = m.predict(&x).unwrap();
        let mse = pred.iter().zip(&y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64;
        assert!((mse - trace.last().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn subsampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (r[0] * 6.0).sin() + r[1]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let p = GbrtParams { rounds: 15, ..GbrtParams::residual() };
        let a = GbrtModel::fit(&x, &y, &p, 7).unwrap();
        let b = GbrtModel::fit(&x, &y, &p, 7).unwrap();
        let c = GbrtModel::fit(&x, &y, &p, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn preorder_round_trip_and_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * r[3] + r[2]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let m = GbrtModel::fit(&x, &y, &GbrtParams::plain(3, 2), 0).unwrap();
        for t in m.trees() {
            let (back, used) = Tree::from_preorder(&t.preorder()).unwrap();
            assert_eq!(&back, t);
            assert_eq!(used, t.node_count());
            assert_eq!(t.paths().len(), t.leaf_count());
            assert!(t.depth() <= 3);
        }
        assert!(matches!(Tree::from_preorder(&m.trees()[0].preorder()[..1]), Err(GuslError::Corruption(_))));
    }
}
