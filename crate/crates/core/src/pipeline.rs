//! Per-level training and inference over the residual pyramid.

use log::{info, warn};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{self, fit_codebook, image_patches, quantize_predict, Codebook};
use crate::error::{GuslError, Result};
use crate::features::{ColumnOrigin, FeatureMatrix, FeatureStack, NeighborhoodLayout, PooledNeighborhood, Source};
use crate::gbrt::{GbrtModel, GbrtParams};
use crate::generate::{SfgConfig, SfgModel, DEFAULT_RIDGE_SCALE};
use crate::image::{
    check_pyramid_dims, compose_prediction, ensure_same_dims, pyramid_dims, upscale, Image, Pyramid, MIN_COARSEST_EDGE,
};
use crate::saab::{sample_patches, SaabKernels};
use crate::select::{joint_select, rft_loss, JointSelection, DEFAULT_BINS};

pub const MODEL_VERSION: &str = "gusl-model/1";

/// Hyperparameters of a training run. Missing keys in a config file take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub level_count: usize,
    pub bins: usize,
    pub split: f64,
    pub seed: u64,
    /// Row sampling fraction per level, finest first; the last entry repeats.
    pub pixel_subsample: Vec<f64>,
    pub saab_patch_cap: usize,
    pub ldct_window: usize,
    pub diff_window: usize,
    pub nc_window: usize,
    /// Prepend the raw pixel value to each coefficient stack.
    pub include_raw: bool,
    pub auxiliary: GbrtParams,
    pub residual: GbrtParams,
    pub ridge_scale: f64,
    pub lnt_leaf_rows: bool,
    pub codebook_k: usize,
    pub codebook_max_iters: usize,
    /// Predict with mean NDCT patches of each cluster instead of the LDCT centroids.
    pub codebook_ndct_targets: bool,
    pub clip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            level_count: 4,
            bins: DEFAULT_BINS,
            split: 0.8,
            seed: 0,
            pixel_subsample: vec![0.25, 1.0],
            saab_patch_cap: 100_000,
            ldct_window: 5,
            diff_window: 7,
            nc_window: 5,
            include_raw: true,
            auxiliary: GbrtParams::auxiliary(),
            residual: GbrtParams::residual(),
            ridge_scale: DEFAULT_RIDGE_SCALE,
            lnt_leaf_rows: false,
            codebook_k: codebook::DEFAULT_K,
            codebook_max_iters: codebook::DEFAULT_MAX_ITERS,
            codebook_ndct_targets: false,
            clip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GuslError::InvalidConfig(m));
        if self.level_count < 2 {
            return bad(format!("level_count must be at least 2, got {}", self.level_count));
        }
        if self.bins < 2 {
            return bad(format!("bins must be at least 2, got {}", self.bins));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad(format!("split must be in (0, 1), got {}", self.split));
        }
        if self.pixel_subsample.is_empty() || self.pixel_subsample.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad("pixel_subsample fractions must be in (0, 1]".into());
        }
        for (name, w) in
            [("ldct_window", self.ldct_window), ("diff_window", self.diff_window), ("nc_window", self.nc_window)]
        {
            if w % 2 == 0 {
                return bad(format!("{name} must be odd, got {w}"));
            }
        }
        if self.ldct_window < 2 || self.diff_window < 2 {
            return bad("Saab windows must be at least 3".into());
        }
        if self.codebook_k == 0 || self.codebook_max_iters == 0 || self.saab_patch_cap == 0 {
            return bad("codebook_k, codebook_max_iters and saab_patch_cap must be positive".into());
        }
        if !(self.ridge_scale >= 0.0 && self.ridge_scale.is_finite()) {
            return bad(format!("ridge_scale must be finite and non-negative, got {}", self.ridge_scale));
        }
        self.auxiliary.validate()?;
        self.residual.validate()
    }

    /// Sampling fraction for 1-based `level` (1 = finest).
    pub fn subsample_for(&self, level: usize) -> f64 {
        let i = (level - 1).min(self.pixel_subsample.len() - 1);
        self.pixel_subsample[i]
    }

    fn sfg(&self) -> SfgConfig {
        SfgConfig { auxiliary: self.auxiliary.clone(), ridge_scale: self.ridge_scale, leaf_rows: self.lnt_leaf_rows }
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Codebook,
    SaabLdct,
    SaabDiff,
    Sample,
    Select,
    Generate,
    Regress,
}

/// Independent stream per (level, stage) derived from the run seed.
fn stage_seed(seed: u64, level: usize, stage: Stage) -> u64 {
    let mut z = seed ^ ((level as u64) << 32 | stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelModel {
    /// 1 = finest.
    pub level: usize,
    pub saab_ldct: SaabKernels,
    pub saab_diff: SaabKernels,
    /// Neighborhood columns kept by joint selection.
    pub selected: Vec<usize>,
    /// Number of neighborhood columns the selection indexes into.
    pub candidate_width: usize,
    pub sfg: Option<SfgModel>,
    pub regressor: GbrtModel,
}

/// What a level saw during training, for export and inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub candidates: Vec<ColumnOrigin>,
    pub selection: JointSelection,
    /// RFT loss of each generated column against the target.
    pub lnt_losses: Vec<f64>,
    pub sfg_degenerate: bool,
    pub target_mse: f64,
    pub fitted_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuslModel {
    pub version: String,
    pub config: TrainConfig,
    pub codebook: Codebook,
    /// Coarsest first.
    pub levels: Vec<LevelModel>,
    pub diagnostics: Vec<LevelDiagnostics>,
    pub warnings: Vec<String>,
}

pub struct TrainOutput {
    pub model: GuslModel,
    /// `predictions[k][j]`: prediction of level model `k` (coarsest first) on training image `j`.
    pub predictions: Vec<Vec<Image>>,
    /// Codebook seed per training image.
    pub seeds: Vec<Image>,
}

impl GuslModel {
    pub fn check(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(GuslError::IncompatibleModel(format!(
                "model version {} (expected {MODEL_VERSION})",
                self.version
            )));
        }
        if self.levels.len() != self.config.level_count {
            return Err(GuslError::IncompatibleModel(format!(
                "{} level models for level_count {}",
                self.levels.len(),
                self.config.level_count
            )));
        }
        for (k, lm) in self.levels.iter().enumerate() {
            if lm.level != self.config.level_count - k {
                return Err(GuslError::InvalidModel("level models out of order".into()));
            }
            if lm.selected.is_empty() || lm.selected.iter().any(|&j| j >= lm.candidate_width) {
                return Err(GuslError::InvalidModel(format!("bad selection at level {}", lm.level)));
            }
            let width = self.candidate_width(lm);
            if width != lm.candidate_width {
                return Err(GuslError::InvalidModel(format!(
                    "level {} expects {} candidates, layout gives {width}",
                    lm.level, lm.candidate_width
                )));
            }
            let inputs = lm.selected.len() + lm.sfg.as_ref().map_or(0, |s| s.projections().len());
            if lm.regressor.required_columns() > inputs {
                return Err(GuslError::InvalidModel(format!(
                    "regressor at level {} reads beyond its inputs",
                    lm.level
                )));
            }
            if let Some(s) = &lm.sfg {
                if s.source_dims() != lm.selected.len() {
                    return Err(GuslError::InvalidModel(format!(
                        "feature generator at level {} has wrong source width",
                        lm.level
                    )));
                }
            }
        }
        Ok(())
    }

    fn candidate_width(&self, lm: &LevelModel) -> usize {
        let raw = usize::from(self.config.include_raw);
        self.config.nc_window.pow(2) * (lm.saab_ldct.channels() + lm.saab_diff.channels() + 2 * raw)
    }
}

fn stacks_for(
    cfg: &TrainConfig,
    lm_ldct: &SaabKernels,
    lm_diff: &SaabKernels,
    l: &Image,
    diff: &Image,
) -> Result<Vec<FeatureStack>> {
    let mut a = lm_ldct.apply(l, Source::Ldct)?;
    let mut b = lm_diff.apply(diff, Source::Diff)?;
    if cfg.include_raw {
        a = a.with_raw(l)?;
        b = b.with_raw(diff)?;
    }
    Ok(vec![a, b])
}

fn level_matrix(cfg: &TrainConfig, lm: &LevelModel, stacks: &[FeatureStack]) -> Result<FeatureMatrix> {
    let layout = NeighborhoodLayout::new(stacks, cfg.nc_window)?;
    let pixels: Vec<usize> = (0..stacks[0].pixels()).collect();
    let x = layout.materialize(stacks, &lm.selected, &pixels)?;
    match &lm.sfg {
        Some(sfg) => {
            let generated = sfg.generate(&x)?;
            x.hstack(&generated)
        }
        None => Ok(x),
    }
}

/// One level of the recursion: P = clip(P' + R(features of L and L - P')).
pub fn level_forward(cfg: &TrainConfig, lm: &LevelModel, l: &Image, p_prev: &Image) -> Result<Image> {
    let diff = l.difference(p_prev)?;
    let stacks = stacks_for(cfg, &lm.saab_ldct, &lm.saab_diff, l, &diff)?;
    let x = level_matrix(cfg, lm, &stacks)?;
    let r = lm.regressor.predict(&x)?;
    let residual = Image::new(l.height(), l.width(), r)?;
    compose_prediction(p_prev, &residual, cfg.clip)
}

fn seed_prediction(model: &GuslModel, coarsest: &Image) -> Result<Image> {
    let mut seed = quantize_predict(coarsest, &model.codebook)?;
    if model.config.clip {
        seed.clip_unit();
    }
    Ok(seed)
}

/// Smallest edge at least `n` whose pyramid keeps the coarsest level large enough.
fn padded_edge(n: usize, level_count: usize) -> usize {
    let coarsest = |e: usize| pyramid_dims(e, e, level_count).last().expect("levels").0;
    let mut e = n;
    while coarsest(e) < MIN_COARSEST_EDGE {
        e += 1;
    }
    e
}

/// Codebook seed followed by every level's prediction, coarsest first.
/// Inputs too small for the pyramid are mirror-padded; predictions then cover the padded grid.
pub fn restore_levels(model: &GuslModel, ldct: &Image) -> Result<(Image, Vec<Image>)> {
    model.check()?;
    let cfg = &model.config;
    let (h, w) = (padded_edge(ldct.height(), cfg.level_count), padded_edge(ldct.width(), cfg.level_count));
    let padded;
    let ldct = if (h, w) != ldct.dims() {
        padded = ldct.pad_reflect(h, w)?;
        &padded
    } else {
        ldct
    };
    let pyr = Pyramid::build(ldct, cfg.level_count)?;
    let seed = seed_prediction(model, pyr.level(cfg.level_count))?;
    let mut p_prev = seed.clone();
    let mut out = Vec::with_capacity(cfg.level_count);
    for lm in &model.levels {
        let l = pyr.level(lm.level);
        if p_prev.dims() != l.dims() {
            p_prev = upscale(&p_prev, l.height(), l.width())?;
        }
        let p = level_forward(cfg, lm, l, &p_prev)?;
        out.push(p.clone());
        p_prev = p;
    }
    Ok((seed, out))
}

/// Restores `ldct`; the output has the input's dims.
pub fn restore(model: &GuslModel, ldct: &Image) -> Result<Image> {
    let (_, mut levels) = restore_levels(model, ldct)?;
    let out = levels.pop().expect("at least two levels");
    if out.dims() == ldct.dims() {
        Ok(out)
    } else {
        out.crop(ldct.height(), ldct.width())
    }
}

fn sample_rows(dims: &[(usize, usize)], fraction: f64, seed: u64) -> Vec<(usize, usize)> {
    let total: usize = dims.iter().map(|(h, w)| h * w).sum();
    let want = ((fraction * total as f64).round() as usize).clamp(total.min(10), total);
    let mut picked: Vec<usize> = if want == total {
        (0..total).collect()
    } else {
        index::sample(&mut ChaCha8Rng::seed_from_u64(seed), total, want).into_vec()
    };
    picked.sort_unstable();
    let mut out = Vec::with_capacity(picked.len());
    let mut img = 0;
    let mut offset = 0;
    for g in picked {
        while g >= offset + dims[img].0 * dims[img].1 {
            offset += dims[img].0 * dims[img].1;
            img += 1;
        }
        out.push((img, g - offset));
    }
    out
}

/// Trains every level, coarsest first, on (LDCT, NDCT) pairs.
pub fn train(pairs: &[(Image, Image)], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let Some((first, _)) = pairs.first() else {
        return Err(GuslError::InsufficientData("no training pairs".into()));
    };
    for (l, n) in pairs {
        ensure_same_dims(l, n)?;
        if l.dims() != first.dims() {
            return Err(GuslError::Shape(format!(
                "training images differ in size: {:?} vs {:?}",
                l.dims(),
                first.dims()
            )));
        }
    }
    check_pyramid_dims(first.height(), first.width(), cfg.level_count)?;
    let coarsest_level = cfg.level_count;
    let mut warnings = Vec::new();

    let l_pyr: Vec<Pyramid> = pairs.iter().map(|(l, _)| Pyramid::build(l, cfg.level_count)).collect::<Result<_>>()?;
    let n_pyr: Vec<Pyramid> = pairs.iter().map(|(_, n)| Pyramid::build(n, cfg.level_count)).collect::<Result<_>>()?;

    let patches: Vec<f64> = l_pyr.iter().flat_map(|p| image_patches(p.level(coarsest_level))).collect();
    let fit = fit_codebook(
        &patches,
        cfg.codebook_k,
        stage_seed(cfg.seed, coarsest_level, Stage::Codebook),
        cfg.codebook_max_iters,
    )?;
    let mut codebook = fit.codebook;
    if let Some(k) = fit.reduced_from {
        warnings.push(format!("codebook reduced from {k} to {} clusters", codebook.k()));
    }
    if cfg.codebook_ndct_targets {
        let targets: Vec<f64> = n_pyr.iter().flat_map(|p| image_patches(p.level(coarsest_level))).collect();
        codebook.attach_targets(&targets, &fit.assignment)?;
    }

    let mut model = GuslModel {
        version: MODEL_VERSION.to_string(),
        config: cfg.clone(),
        codebook,
        levels: Vec::with_capacity(cfg.level_count),
        diagnostics: Vec::with_capacity(cfg.level_count),
        warnings: Vec::new(),
    };
    let seeds: Vec<Image> =
        l_pyr.iter().map(|p| seed_prediction(&model, p.level(coarsest_level))).collect::<Result<_>>()?;
    let mut p_prev: Vec<Image> = seeds.clone();
    let mut predictions = Vec::with_capacity(cfg.level_count);

    for level in (1..=cfg.level_count).rev() {
        let ls: Vec<&Image> = l_pyr.iter().map(|p| p.level(level)).collect();
        let ns: Vec<&Image> = n_pyr.iter().map(|p| p.level(level)).collect();
        let (h, w) = ls[0].dims();
        for p in p_prev.iter_mut() {
            if p.dims() != (h, w) {
                *p = upscale(p, h, w)?;
            }
        }
        info!("level {level}: {h}x{w}, {} images", ls.len());
        let diffs: Vec<Image> = ls.iter().zip(&p_prev).map(|(l, p)| l.difference(p)).collect::<Result<_>>()?;

        let saab_ldct = SaabKernels::fit(
            &sample_patches(&ls, cfg.ldct_window, cfg.saab_patch_cap, stage_seed(cfg.seed, level, Stage::SaabLdct)),
            cfg.ldct_window,
        )?;
        let diff_refs: Vec<&Image> = diffs.iter().collect();
        let saab_diff = SaabKernels::fit(
            &sample_patches(
                &diff_refs,
                cfg.diff_window,
                cfg.saab_patch_cap,
                stage_seed(cfg.seed, level, Stage::SaabDiff),
            ),
            cfg.diff_window,
        )?;
        for (name, bank) in [("LDCT", &saab_ldct), ("difference", &saab_diff)] {
            if bank.is_degenerate() {
                warnings.push(format!("level {level}: degenerate {name} Saab bank"));
            }
        }

        let stacks: Vec<Vec<FeatureStack>> = ls
            .par_iter()
            .zip(diffs.par_iter())
            .map(|(l, d)| stacks_for(cfg, &saab_ldct, &saab_diff, l, d))
            .collect::<Result<_>>()?;
        let layout = NeighborhoodLayout::new(&stacks[0], cfg.nc_window)?;
        let dims = vec![(h, w); ls.len()];
        let samples = sample_rows(&dims, cfg.subsample_for(level), stage_seed(cfg.seed, level, Stage::Sample));
        let target: Vec<f64> = samples.iter().map(|&(i, p)| ns[i].data()[p] - p_prev[i].data()[p]).collect();
        let pooled = PooledNeighborhood::new(&layout, &stacks, &samples)?;

        let selection =
            joint_select(&pooled, &target, cfg.bins, cfg.split, stage_seed(cfg.seed, level, Stage::Select))?;
        info!(
            "level {level}: {} of {} columns selected (radius {})",
            selection.selected.len(),
            layout.width(),
            selection.radius
        );
        let x_sel = pooled.materialize(&selection.selected)?;

        let sfg = SfgModel::fit(&x_sel, &target, &cfg.sfg(), stage_seed(cfg.seed, level, Stage::Generate))?;
        let (x_full, lnt_losses) = match &sfg {
            Some(sfg) => {
                let generated = sfg.generate(&x_sel)?;
                let losses = (0..generated.cols())
                    .map(|j| rft_loss(generated.column(j), &target, cfg.bins))
                    .collect::<Result<Vec<f64>>>()?;
                (x_sel.hstack(&generated)?, losses)
            }
            None => {
                warn!("level {level}: feature generation degenerate, using selected features only");
                warnings.push(format!("level {level}: degenerate feature generation"));
                (x_sel, Vec::new())
            }
        };

        let regressor = GbrtModel::fit(&x_full, &target, &cfg.residual, stage_seed(cfg.seed, level, Stage::Regress))?;
        let fitted = regressor.predict(&x_full)?;
        let n = target.len() as f64;
        let target_mse = target.iter().map(|t| t * t).sum::<f64>() / n;
        let fitted_mse = target.iter().zip(&fitted).map(|(t, f)| (t - f).powi(2)).sum::<f64>() / n;
        info!("level {level}: residual MSE {target_mse:.3e} -> {fitted_mse:.3e}");

        let lm = LevelModel {
            level,
            saab_ldct,
            saab_diff,
            selected: selection.selected.clone(),
            candidate_width: layout.width(),
            sfg,
            regressor,
        };
        drop(stacks);
        let preds: Vec<Image> =
            ls.par_iter().zip(p_prev.par_iter()).map(|(l, p)| level_forward(cfg, &lm, l, p)).collect::<Result<_>>()?;
        model.diagnostics.push(LevelDiagnostics {
            level,
            height: h,
            width: w,
            rows: samples.len(),
            candidates: layout.col_meta().to_vec(),
            selection,
            sfg_degenerate: lm.sfg.is_none(),
            lnt_losses,
            target_mse,
            fitted_mse,
        });
        model.levels.push(lm);
        p_prev = preds.clone();
        predictions.push(preds);
    }
    model.warnings = warnings;
    Ok(TrainOutput { model, predictions, seeds })
}
