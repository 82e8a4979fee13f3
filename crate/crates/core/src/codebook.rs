//! K-means codebook over non-overlapping 4x4 patches; nearest-centroid
//! quantization gives the coarsest-level seed prediction.

use std::collections::HashSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GuslError, Result};
use crate::image::Image;

pub const PATCH: usize = 4;
pub const DIM: usize = PATCH * PATCH;
pub const DEFAULT_K: usize = 1024;
pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    centroids: Vec<f64>,
    /// Per-centroid output patches when predictions differ from the match space.
    targets: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodebookFit {
    pub codebook: Codebook,
    /// Assignment of every training patch.
    pub assignment: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
    /// Set when fewer distinct patches than requested clusters were available.
    pub reduced_from: Option<usize>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid index (lowest index on ties) and its squared distance.
#[inline]
fn nearest(centroids: &[f64], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(DIM).enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign(centroids: &[f64], patches: &[f64]) -> Vec<(usize, f64)> {
    patches.par_chunks_exact(DIM).map(|p| nearest(centroids, p)).collect()
}

fn count_distinct(patches: &[f64]) -> usize {
    patches.chunks_exact(DIM).map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>()).collect::<HashSet<_>>().len()
}

fn kmeans_pp(patches: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = patches.len() / DIM;
    let mut centroids = Vec::with_capacity(k * DIM);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&patches[first * DIM..(first + 1) * DIM]);
    let mut d2: Vec<f64> = patches.chunks_exact(DIM).map(|p| sq_dist(p, &centroids[..DIM])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    acc += d;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total implies a candidate")
        } else {
            rng.random_range(0..n)
        };
        let c = &patches[pick * DIM..(pick + 1) * DIM];
        centroids.extend_from_slice(c);
        d2.par_iter_mut().zip(patches.par_chunks_exact(DIM)).for_each(|(d, p)| *d = d.min(sq_dist(p, c)));
    }
    centroids
}

/// Lloyd iterations from the given initial centroids until the assignment stops
/// changing or `max_iters` updates have run.
pub fn lloyd(patches: &[f64], mut centroids: Vec<f64>, max_iters: usize) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
    let k = centroids.len() / DIM;
    let mut inertia = Vec::new();
    let mut labels = assign(&centroids, patches);
    inertia.push(labels.iter().map(|l| l.1).sum());
    for _ in 0..max_iters {
        let mut sums = vec![0.0; k * DIM];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in patches.chunks_exact(DIM).zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c * DIM..(c + 1) * DIM].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids[c * DIM..(c + 1) * DIM].iter_mut().zip(&sums[c * DIM..(c + 1) * DIM]) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            // distances to the updated centroids of each point's own cluster
            let mut far: Vec<(f64, usize)> = patches
                .chunks_exact(DIM)
                .zip(&labels)
                .enumerate()
                .map(|(i, (p, &(c, _)))| (sq_dist(p, &centroids[c * DIM..(c + 1) * DIM]), i))
                .collect();
            far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (&c, &(_, i)) in empty.iter().zip(&far) {
                let p = patches[i * DIM..(i + 1) * DIM].to_vec();
                centroids[c * DIM..(c + 1) * DIM].copy_from_slice(&p);
            }
        }
        let next = assign(&centroids, patches);
        inertia.push(next.iter().map(|l| l.1).sum());
        let changed = next.iter().zip(&labels).any(|(a, b)| a.0 != b.0);
        labels = next;
        if !changed && empty.is_empty() {
            break;
        }
    }
    (centroids, labels.into_iter().map(|l| l.0).collect(), inertia)
}

/// k-means++ seeding followed by Lloyd iterations. `patches` holds 16-D vectors end to end.
pub fn fit_codebook(patches: &[f64], k: usize, seed: u64, max_iters: usize) -> Result<CodebookFit> {
    if k == 0 {
        return Err(GuslError::InvalidConfig("codebook needs at least one cluster".into()));
    }
    if !patches.len().is_multiple_of(DIM) {
        return Err(GuslError::Shape(format!("patch buffer length {} is not a multiple of {DIM}", patches.len())));
    }
    if patches.is_empty() {
        return Err(GuslError::InsufficientData("no patches for the codebook".into()));
    }
    if patches.iter().any(|v| !v.is_finite()) {
        return Err(GuslError::InvalidInput("non-finite patch value".into()));
    }
    let n = patches.len() / DIM;
    let mut reduced_from = None;
    let mut k_eff = k;
    if n < k || count_distinct(patches) < k {
        k_eff = count_distinct(patches);
        warn!("only {k_eff} distinct patches for {k} clusters; reducing k");
        reduced_from = Some(k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_pp(patches, k_eff, &mut rng);
    let (centroids, assignment, inertia) = lloyd(patches, init, max_iters);
    Ok(CodebookFit { codebook: Codebook { centroids, targets: None }, assignment, inertia, reduced_from })
}

impl Codebook {
    pub fn from_parts(centroids: Vec<f64>, targets: Option<Vec<f64>>) -> Result<Self> {
        if centroids.is_empty() || !centroids.len().is_multiple_of(DIM) {
            return Err(GuslError::InvalidModel(format!("codebook with {} values", centroids.len())));
        }
        if targets.as_ref().is_some_and(|t| t.len() != centroids.len()) {
            return Err(GuslError::InvalidModel("codebook targets do not match centroids".into()));
        }
        Ok(Self { centroids, targets })
    }

    pub fn k(&self) -> usize {
        self.centroids.len() / DIM
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * DIM..(i + 1) * DIM]
    }

    pub fn targets(&self) -> Option<&[f64]> {
        self.targets.as_deref()
    }

    /// Replaces each cluster's output with the mean of the paired `outputs` patches
    /// assigned to it (cluster matching still uses the original centroids).
    pub fn attach_targets(&mut self, outputs: &[f64], assignment: &[usize]) -> Result<()> {
        if outputs.len() != assignment.len() * DIM {
            return Err(GuslError::Shape("paired patches do not match the assignment".into()));
        }
        let k = self.k();
        let mut sums = vec![0.0; k * DIM];
        let mut counts = vec![0usize; k];
        for (p, &c) in outputs.chunks_exact(DIM).zip(assignment) {
            counts[c] += 1;
            for (s, v) in sums[c * DIM..(c + 1) * DIM].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut targets = self.centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for (t, s) in targets[c * DIM..(c + 1) * DIM].iter_mut().zip(&sums[c * DIM..(c + 1) * DIM]) {
                    *t = s / counts[c] as f64;
                }
            }
        }
        self.targets = Some(targets);
        Ok(())
    }

    /// Index of the nearest centroid (lowest index on ties).
    pub fn nearest(&self, patch: &[f64]) -> usize {
        nearest(&self.centroids, patch).0
    }

    fn output(&self, i: usize) -> &[f64] {
        match &self.targets {
            Some(t) => &t[i * DIM..(i + 1) * DIM],
            None => self.centroid(i),
        }
    }
}

/// Non-overlapping 4x4 blocks of `img`, reflect-padded to a multiple of 4,
/// in raster order of blocks, each flattened row-major.
pub fn image_patches(img: &Image) -> Vec<f64> {
    let ph = img.height().div_ceil(PATCH) * PATCH;
    let pw = img.width().div_ceil(PATCH) * PATCH;
    let mut out = Vec::with_capacity(ph * pw);
    for br in (0..ph).step_by(PATCH) {
        for bc in (0..pw).step_by(PATCH) {
            for r in br..br + PATCH {
                for c in bc..bc + PATCH {
                    out.push(img.get_reflect(r as isize, c as isize));
                }
            }
        }
    }
    out
}

/// Replaces every 4x4 block by its nearest codeword.
pub fn quantize_predict(img: &Image, cb: &Codebook) -> Result<Image> {
    if cb.centroids.is_empty() {
        return Err(GuslError::InvalidModel("empty codebook".into()));
    }
    let (h, w) = img.dims();
    let bw = w.div_ceil(PATCH);
    let patches = image_patches(img);
    let choice: Vec<usize> = patches.par_chunks_exact(DIM).map(|p| cb.nearest(p)).collect();
    Ok(Image::from_fn(h, w, |r, c| {
        let b = (r / PATCH) * bw + c / PATCH;
        cb.output(choice[b])[(r % PATCH) * PATCH + c % PATCH]
    }))
}
