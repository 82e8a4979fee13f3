//! Supervised feature generation: feature subsets read off the root-to-leaf
//! paths of a shallow boosted ensemble, each projected onto the target by
//! least squares (LNT features).

use std::collections::HashSet;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GuslError, Result};
use crate::features::{ColumnOrigin, FeatureMatrix};
use crate::gbrt::{GbrtModel, GbrtParams};

pub const DEFAULT_RIDGE_SCALE: f64 = 1e-8;
const REFINE_STEPS: usize = 30;

/// Linear map from a column subset to one new feature.
#[derive(Clone, Debug, PartialEq)]
pub struct LntProjection {
    pub subset: Vec<usize>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LntProjection {
    pub fn new(subset: Vec<usize>, weights: Vec<f64>, intercept: f64) -> Result<Self> {
        if subset.len() != weights.len() || subset.is_empty() {
            return Err(GuslError::InvalidModel(format!(
                "projection with {} indices and {} weights",
                subset.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) || !intercept.is_finite() {
            return Err(GuslError::InvalidModel("non-finite projection weight".into()));
        }
        Ok(Self { subset, weights, intercept })
    }

    #[inline]
    pub fn eval_row(&self, x: &FeatureMatrix, row: usize) -> f64 {
        self.subset.iter().zip(&self.weights).fold(self.intercept, |acc, (&j, w)| acc + w * x.get(row, j))
    }
}

/// A feature subset from one tree path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathSubset {
    pub features: Vec<usize>,
    pub tree: usize,
    pub leaf: usize,
}

/// Fits the auxiliary ensemble and returns the distinct non-empty path subsets,
/// in tree order, left paths first. An empty list means no splits were learned.
pub fn extract_subsets(
    x: &FeatureMatrix,
    y: &[f64],
    params: &GbrtParams,
    seed: u64,
) -> Result<(Vec<PathSubset>, GbrtModel)> {
    if params.max_depth < 1 {
        return Err(GuslError::InvalidConfig("subset extraction needs depth >= 1".into()));
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(GuslError::InvalidInput("empty feature matrix".into()));
    }
    let model = GbrtModel::fit(x, y, params, seed)?;
    let subsets = subsets_from_model(&model);
    Ok((subsets, model))
}

pub fn subsets_from_model(model: &GbrtModel) -> Vec<PathSubset> {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::new();
    for (t, tree) in model.trees().iter().enumerate() {
        for (leaf, features) in tree.paths() {
            if features.is_empty() {
                continue;
            }
            let mut key = features.clone();
            key.sort_unstable();
            if seen.insert(key) {
                out.push(PathSubset { features, tree: t, leaf });
            }
        }
    }
    out
}

/// Least-squares weights and intercept of `y` on the `subset` columns, optionally
/// restricted to `rows`. The ridge term `ridge_scale * trace / |subset|` keeps the
/// Cholesky factorization stable; iterative refinement then removes its bias.
pub fn fit_lnt(x: &FeatureMatrix, y: &[f64], subset: &[usize], ridge_scale: f64) -> Result<LntProjection> {
    fit_lnt_on_rows(x, y, subset, ridge_scale, None)
}

pub fn fit_lnt_on_rows(
    x: &FeatureMatrix,
    y: &[f64],
    subset: &[usize],
    ridge_scale: f64,
    rows: Option<&[usize]>,
) -> Result<LntProjection> {
    if subset.is_empty() {
        return Err(GuslError::InvalidInput("empty subset".into()));
    }
    if y.len() != x.rows() {
        return Err(GuslError::Shape(format!("{} rows vs {} targets", x.rows(), y.len())));
    }
    if let Some(&bad) = subset.iter().find(|&&j| j >= x.cols()) {
        return Err(GuslError::Shape(format!("subset column {bad} out of range ({})", x.cols())));
    }
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..x.rows()).collect();
            &all
        }
    };
    let n = rows.len();
    let s = subset.len();
    if n <= s {
        return Err(GuslError::InsufficientData(format!("{n} rows for a {s}-column projection")));
    }
    let y_mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n as f64;
    let means: Vec<f64> = subset.iter().map(|&j| rows.iter().map(|&r| x.get(r, j)).sum::<f64>() / n as f64).collect();
    let centred: Vec<Vec<f64>> =
        subset.iter().zip(&means).map(|(&j, m)| rows.iter().map(|&r| x.get(r, j) - m).collect()).collect();
    let yc: Vec<f64> = rows.iter().map(|&r| y[r] - y_mean).collect();

    let mut gram = DMatrix::<f64>::zeros(s, s);
    for a in 0..s {
        for b in a..s {
            let v: f64 = centred[a].iter().zip(&centred[b]).map(|(p, q)| p * q).sum();
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let rhs = DVector::from_iterator(s, centred.iter().map(|c| c.iter().zip(&yc).map(|(p, q)| p * q).sum::<f64>()));
    let trace = gram.trace();
    let eps = ridge_scale * trace / s as f64;
    let mut regularized = gram.clone();
    for a in 0..s {
        regularized[(a, a)] += eps;
    }
    let chol = regularized
        .cholesky()
        .ok_or_else(|| GuslError::NumericalFailure(format!("singular normal equations for subset {subset:?}")))?;
    let mut w = chol.solve(&rhs);
    for _ in 0..REFINE_STEPS {
        let resid = &rhs - &gram * &w;
        let step = chol.solve(&resid);
        let done = step.norm() <= 1e-15 * w.norm().max(f64::MIN_POSITIVE);
        w += step;
        if done {
            break;
        }
    }
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&means).map(|(a, b)| a * b).sum::<f64>();
    if weights.iter().any(|v| !v.is_finite()) || !intercept.is_finite() {
        return Err(GuslError::NumericalFailure("non-finite projection".into()));
    }
    Ok(LntProjection { subset: subset.to_vec(), weights, intercept })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfgConfig {
    pub auxiliary: GbrtParams,
    pub ridge_scale: f64,
    /// Fit each projection only on the rows reaching its path's leaf.
    pub leaf_rows: bool,
}

impl Default for SfgConfig {
    fn default() -> Self {
        Self { auxiliary: GbrtParams::auxiliary(), ridge_scale: DEFAULT_RIDGE_SCALE, leaf_rows: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SfgModel {
    projections: Vec<LntProjection>,
    source_dims: usize,
}

impl SfgModel {
    pub fn new(projections: Vec<LntProjection>, source_dims: usize) -> Result<Self> {
        if projections.is_empty() {
            return Err(GuslError::InvalidModel("feature generator without projections".into()));
        }
        if projections.iter().flat_map(|p| &p.subset).any(|&j| j >= source_dims) {
            return Err(GuslError::InvalidModel("projection index beyond source columns".into()));
        }
        Ok(Self { projections, source_dims })
    }

    /// `Ok(None)` when the auxiliary ensemble learned no splits or no subset
    /// could be projected.
    pub fn fit(x: &FeatureMatrix, y: &[f64], cfg: &SfgConfig, seed: u64) -> Result<Option<Self>> {
        let (subsets, aux) = extract_subsets(x, y, &cfg.auxiliary, seed)?;
        if subsets.is_empty() {
            return Ok(None);
        }
        let fitted: Vec<Option<LntProjection>> = subsets
            .par_iter()
            .map(|s| {
                let leaf_rows: Option<Vec<usize>> = cfg.leaf_rows.then(|| {
                    let tree = &aux.trees()[s.tree];
                    (0..x.rows()).filter(|&r| tree.leaf_index(x, r) == s.leaf).collect()
                });
                let rows = leaf_rows.as_deref().filter(|r| r.len() > s.features.len() + 1);
                match fit_lnt_on_rows(x, y, &s.features, cfg.ridge_scale, rows) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        warn!("skipping subset {:?}: {e}", s.features);
                        None
                    }
                }
            })
            .collect();
        let projections: Vec<LntProjection> = fitted.into_iter().flatten().collect();
        if projections.is_empty() {
            return Ok(None);
        }
        Ok(Some(Self { projections, source_dims: x.cols() }))
    }

    pub fn projections(&self) -> &[LntProjection] {
        &self.projections
    }

    pub fn source_dims(&self) -> usize {
        self.source_dims
    }

    pub fn generate(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        generate(x, self)
    }
}

/// One new column per projection.
pub fn generate(x: &FeatureMatrix, model: &SfgModel) -> Result<FeatureMatrix> {
    if let Some(&bad) = model.projections.iter().flat_map(|p| &p.subset).find(|&&j| j >= x.cols()) {
        return Err(GuslError::Shape(format!("projection uses column {bad}, matrix has {}", x.cols())));
    }
    let n = x.rows();
    let mut data = Vec::with_capacity(n * model.projections.len());
    for p in &model.projections {
        let mut col = vec![p.intercept; n];
        for (&j, &w) in p.subset.iter().zip(&p.weights) {
            for (c, v) in col.iter_mut().zip(x.column(j)) {
                *c += w * v;
            }
        }
        data.extend_from_slice(&col);
    }
    let meta = (0..model.projections.len()).map(|i| ColumnOrigin::Lnt { projection: i }).collect();
    FeatureMatrix::from_column_major(n, data, meta)
}
