//! Parameter and multiply-accumulate counts of a fitted model.
//!
//! Parameters:
//! - codebook: 16 per centroid, plus 16 per output patch when separate targets are stored
//! - Saab: every kernel entry (C x W^2 per bank); eigenvalues are not counted
//! - LNT: one weight per subset member plus the intercept
//! - trees: 2 per split node (feature index, threshold), 1 per leaf (weight)
//!
//! MACs per output pixel, level `i` (1 = finest) weighted by `4^-(i-1)`:
//! - W^2 x C per Saab bank
//! - |subset| per LNT projection
//! - one comparison per level of each tree's depth
//! - codebook matching: 16 x k per 4x4 patch, i.e. k per pixel at the coarsest level
//!
//! Neighborhood gathering, upscaling and clipping are free.

use serde::Serialize;

use crate::pipeline::{GuslModel, LevelModel};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelComplexity {
    pub level: usize,
    pub saab_params: u64,
    pub lnt_params: u64,
    pub tree_params: u64,
    /// Per pixel of this level.
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Complexity {
    pub param_count: u64,
    pub macs_per_pixel: f64,
    pub codebook_params: u64,
    pub levels: Vec<LevelComplexity>,
}

fn level_complexity(lm: &LevelModel) -> LevelComplexity {
    let banks = [&lm.saab_ldct, &lm.saab_diff];
    let saab_params: u64 = banks.iter().map(|b| (b.channels() * b.window().pow(2)) as u64).sum();
    let projections = lm.sfg.as_ref().map_or(&[][..], |s| s.projections());
    let lnt_weights: u64 = projections.iter().map(|p| p.subset.len() as u64).sum();
    let lnt_params = lnt_weights + projections.len() as u64;
    let trees = lm.regressor.trees();
    let tree_params: u64 = trees.iter().map(|t| (2 * t.split_count() + t.leaf_count()) as u64).sum();
    let tree_macs: u64 = trees.iter().map(|t| t.depth() as u64).sum();
    LevelComplexity {
        level: lm.level,
        saab_params,
        lnt_params,
        tree_params,
        macs: saab_params + lnt_weights + tree_macs,
    }
}

pub fn report_complexity(model: &GuslModel) -> Complexity {
    let cb = &model.codebook;
    let codebook_params = (cb.centroids().len() + cb.targets().map_or(0, |t| t.len())) as u64;
    let levels: Vec<LevelComplexity> = model.levels.iter().map(level_complexity).collect();
    let scale = |level: usize| 0.25f64.powi(level as i32 - 1);
    let coarsest = model.config.level_count;
    let mut macs_per_pixel = cb.k() as f64 * scale(coarsest);
    for l in &levels {
        macs_per_pixel += l.macs as f64 * scale(l.level);
    }
    let param_count =
        codebook_params + levels.iter().map(|l| l.saab_params + l.lnt_params + l.tree_params).sum::<u64>();
    Complexity { param_count, macs_per_pixel, codebook_params, levels }
}
