#![allow(dead_code)]

use gusl_core::codebook::Codebook;
use gusl_core::gbrt::{GbrtModel, GbrtParams, PreorderNode, Tree, TreeNode};
use gusl_core::generate::{LntProjection, SfgModel};
use gusl_core::pipeline::{GuslModel, LevelModel, MODEL_VERSION};
use gusl_core::saab::SaabKernels;
use gusl_core::synth::{phantom, synth_degrade, DegradeParams};
use gusl_core::{Image, TrainConfig};

/// Exhaustive RFT: every bin centre as a threshold, both sides scored around their own means.
pub fn brute_rft(x: &[f64], y: &[f64], bins: usize) -> f64 {
    let n = x.len() as f64;
    let sse = |vals: &[f64]| {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    };
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best = f64::INFINITY;
    if hi > lo {
        let w = (hi - lo) / bins as f64;
        for k in 0..bins {
            let t = lo + (k as f64 + 0.5) * w;
            let left: Vec<f64> = x.iter().zip(y).filter(|(a, _)| **a <= t).map(|(_, b)| *b).collect();
            let right: Vec<f64> = x.iter().zip(y).filter(|(a, _)| **a > t).map(|(_, b)| *b).collect();
            if left.is_empty() || right.is_empty() {
                continue;
            }
            best = best.min((sse(&left) + sse(&right)) / n);
        }
    }
    if best.is_finite() {
        best
    } else {
        sse(y) / n
    }
}

/// First boosting tree by recursive exhaustive search over (feature, midpoint) pairs,
/// in preorder as (feature or None, threshold or leaf weight).
pub fn brute_tree(rows: &[Vec<f64>], y: &[f64], params: &GbrtParams) -> Vec<(Option<usize>, f64)> {
    let mut out = Vec::new();
    let idx: Vec<usize> = (0..rows.len()).collect();
    grow(rows, y, &idx, params.max_depth, params, &mut out);
    out
}

#[allow(clippy::needless_range_loop)]
fn grow(
    rows: &[Vec<f64>],
    y: &[f64],
    idx: &[usize],
    depth: usize,
    p: &GbrtParams,
    out: &mut Vec<(Option<usize>, f64)>,
) {
    let grad = |i: usize| -y[i];
    let g: f64 = idx.iter().map(|&i| grad(i)).sum();
    let h = idx.len() as f64;
    let leaf = (None, -g / (h + p.lambda));
    if depth == 0 {
        out.push(leaf);
        return;
    }
    let score = |g: f64, h: f64| g * g / (h + p.lambda);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..rows[0].len() {
        let mut vals: Vec<f64> = idx.iter().map(|&i| rows[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for pair in vals.windows(2) {
            let mid = (pair[0] + pair[1]) / 2.0;
            let t = if mid < pair[1] { mid } else { pair[0] };
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] <= t);
            let (hl, hr) = (l.len() as f64, r.len() as f64);
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gl: f64 = l.iter().map(|&i| grad(i)).sum();
            let gr: f64 = r.iter().map(|&i| grad(i)).sum();
            let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(g, h)) - p.gamma;
            if gain > 0.0 && best.is_none_or(|b| gain > b.0) {
                best = Some((gain, f, t));
            }
        }
    }
    match best {
        None => out.push(leaf),
        Some((_, f, t)) => {
            out.push((Some(f), t));
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] <= t);
            grow(rows, y, &l, depth - 1, p, out);
            grow(rows, y, &r, depth - 1, p, out);
        }
    }
}

/// Plain Lloyd iterations from `init` until assignments stop changing; returns
/// (centroids, assignment, final inertia).
pub fn brute_lloyd(points: &[Vec<f64>], init: &[Vec<f64>], max_iters: usize) -> (Vec<Vec<f64>>, Vec<usize>, f64) {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let assign = |cs: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = 0;
                for k in 1..cs.len() {
                    if dist(p, &cs[k]) < dist(p, &cs[best]) {
                        best = k;
                    }
                }
                best
            })
            .collect()
    };
    let mut cs = init.to_vec();
    let mut labels = assign(&cs);
    for _ in 0..max_iters {
        for (k, c) in cs.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(p, _)| p).collect();
            if !members.is_empty() {
                for d in 0..c.len() {
                    c[d] = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let next = assign(&cs);
        let done = next == labels;
        labels = next;
        if done {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| dist(p, &cs[l])).sum();
    (cs, labels, inertia)
}

/// Clean phantoms and their blurred, noisy versions.
pub fn phantom_set(count: usize, size: usize, seed: u64, blur: f64, noise: f64) -> (Vec<Image>, Vec<Image>) {
    let clean: Vec<Image> = (0..count).map(|i| phantom(size, seed + i as u64)).collect();
    let noisy = clean
        .iter()
        .enumerate()
        .map(|(i, c)| {
            synth_degrade(c, &DegradeParams { blur_sigma: blur, noise_sigma: noise, seed: seed + 1000 + i as u64 })
                .unwrap()
        })
        .collect();
    (clean, noisy)
}

/// Small, quick configuration for pipeline tests.
pub fn quick_config(levels: usize) -> TrainConfig {
    let mut cfg = TrainConfig { level_count: levels, codebook_k: 32, seed: 11, ..Default::default() };
    cfg.residual.rounds = 8;
    cfg.residual.learning_rate = 0.3;
    cfg.auxiliary.rounds = 4;
    cfg
}

fn bank(window: usize, channels: usize) -> SaabKernels {
    SaabKernels::from_parts(window, vec![0.0; channels * window * window], vec![1.0; channels], false).unwrap()
}

fn tree(nodes: &[(Option<usize>, f64)]) -> Tree {
    let pre: Vec<PreorderNode> = nodes.iter().map(|&(feature, value)| PreorderNode { feature, value }).collect();
    Tree::from_preorder(&pre).unwrap().0
}

/// Two-level model small enough to count by hand.
pub fn tiny_model() -> GuslModel {
    let config = TrainConfig { level_count: 2, ..Default::default() };
    let coarse = LevelModel {
        level: 2,
        saab_ldct: bank(3, 2),
        saab_diff: bank(3, 1),
        selected: vec![0, 4],
        candidate_width: 9 * 5,
        sfg: Some(SfgModel::new(vec![LntProjection::new(vec![0, 1], vec![0.5, -0.5], 0.1).unwrap()], 2).unwrap()),
        regressor: GbrtModel::from_parts(vec![Tree::leaf(0.2)], 1.0, 0.0, GbrtParams::plain(0, 1)),
    };
    let fine = LevelModel {
        level: 1,
        saab_ldct: bank(3, 1),
        saab_diff: bank(3, 1),
        selected: vec![3],
        candidate_width: 9 * 4,
        sfg: None,
        regressor: GbrtModel::from_parts(
            vec![tree(&[(Some(0), 0.5), (None, -1.0), (None, 1.0)]), Tree::leaf(0.3)],
            1.0,
            0.0,
            GbrtParams::plain(1, 2),
        ),
    };
    GuslModel {
        version: MODEL_VERSION.into(),
        config,
        codebook: Codebook::from_parts(vec![0.5; 16], None).unwrap(),
        levels: vec![coarse, fine],
        diagnostics: vec![],
        warnings: vec![],
    }
}

fn subtree(nodes: &[TreeNode], i: usize) -> (u64, u64, u64) {
    match nodes[i] {
        TreeNode::Leaf { .. } => (0, 1, 0),
        TreeNode::Split { left, right, .. } => {
            let (sl, ll, dl) = subtree(nodes, left);
            let (sr, lr, dr) = subtree(nodes, right);
            (sl + sr + 1, ll + lr, 1 + dl.max(dr))
        }
    }
}

/// Parameter count and MACs per pixel by walking the model structure directly.
pub fn manual_complexity(m: &GuslModel) -> (u64, f64) {
    let cb = &m.codebook;
    let mut params = cb.centroids().len() as u64 + cb.targets().map_or(0, |t| t.len() as u64);
    let mut macs = cb.k() as f64 / 4f64.powi(m.config.level_count as i32 - 1);
    for lm in &m.levels {
        let mut level_macs = 0u64;
        for bank in [&lm.saab_ldct, &lm.saab_diff] {
            params += bank.kernels().len() as u64;
            level_macs += bank.kernels().len() as u64;
        }
        if let Some(sfg) = &lm.sfg {
            for p in sfg.projections() {
                params += p.weights.len() as u64 + 1;
                level_macs += p.weights.len() as u64;
            }
        }
        for t in lm.regressor.trees() {
            let (splits, leaves, depth) = subtree(t.nodes(), 0);
            params += 2 * splits + leaves;
            level_macs += depth;
        }
        macs += level_macs as f64 / 4f64.powi(lm.level as i32 - 1);
    }
    (params, macs)
}
