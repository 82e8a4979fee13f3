//! Saab filter banks (fixed DC kernel plus PCA kernels of the DC-removed
//! patch space) and the sliding-window PixelHop transform built on them.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GuslError, Result};
use crate::features::{Channel, FeatureStack, Source};
use crate::image::Image;

/// Orthonormal filter bank for one window size. Row 0 is the DC kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct SaabKernels {
    window: usize,
    kernels: Vec<f64>,
    eigenvalues: Vec<f64>,
    degenerate: bool,
}

/// Summary written to model metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaabShape {
    pub window: usize,
    pub channels: usize,
    pub degenerate: bool,
}

impl SaabKernels {
    /// Fits the bank on row-major flattened `window` x `window` patches laid end to end.
    pub fn fit(patches: &[f64], window: usize) -> Result<Self> {
        if window == 0 {
            return Err(GuslError::InvalidConfig("saab window must be positive".into()));
        }
        let dim = window * window;
        if !patches.len().is_multiple_of(dim) {
            return Err(GuslError::Shape(format!(
                "patch buffer of {} values is not a multiple of {dim}",
                patches.len()
            )));
        }
        let count = patches.len() / dim;
        if count < dim {
            return Err(GuslError::InsufficientData(format!("saab fit needs at least {dim} patches, got {count}")));
        }
        if patches.iter().any(|v| !v.is_finite()) {
            return Err(GuslError::InvalidInput("non-finite patch value".into()));
        }

        let basis = ac_basis(dim);
        let ac_dim = dim - 1;
        let dc_norm = 1.0 / (dim as f64).sqrt();

        // Coordinates of every patch in the AC subspace; DC energy on the side.
        let mut coords = vec![0.0; count * ac_dim];
        let mut dc_energy = 0.0;
        for (p, out) in patches.chunks_exact(dim).zip(coords.chunks_exact_mut(ac_dim.max(1))) {
            let dc: f64 = p.iter().sum::<f64>() * dc_norm;
            dc_energy += dc * dc;
            if ac_dim > 0 {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = (0..dim).map(|i| basis[i * ac_dim + j] * p[i]).sum();
                }
            }
        }
        dc_energy /= count as f64;

        let mut kernels = vec![dc_norm; dim];
        let mut eigenvalues = vec![dc_energy];
        if ac_dim == 0 {
            return Ok(Self { window, kernels, eigenvalues, degenerate: false });
        }

        let mut mean = vec![0.0; ac_dim];
        for z in coords.chunks_exact(ac_dim) {
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut cov = vec![0.0; ac_dim * ac_dim];
        let mut centred = vec![0.0; ac_dim];
        for z in coords.chunks_exact(ac_dim) {
            for ((c, v), m) in centred.iter_mut().zip(z).zip(&mean) {
                *c = v - m;
            }
            for a in 0..ac_dim {
                let ca = centred[a];
                let row = &mut cov[a * ac_dim..(a + 1) * ac_dim];
                for b in a..ac_dim {
                    row[b] += ca * centred[b];
                }
            }
        }
        for a in 0..ac_dim {
            for b in a..ac_dim {
                let v = cov[a * ac_dim + b] / count as f64;
                cov[a * ac_dim + b] = v;
                cov[b * ac_dim + a] = v;
            }
        }

        let trace: f64 = (0..ac_dim).map(|a| cov[a * ac_dim + a]).sum();
        let mean_energy = patches.iter().map(|v| v * v).sum::<f64>() / count as f64;
        let degenerate = trace <= 1e-14 * mean_energy.max(f64::MIN_POSITIVE);

        let (vectors, values): (Vec<Vec<f64>>, Vec<f64>) = if degenerate {
            let vecs = (0..ac_dim).map(|j| (0..dim).map(|i| basis[i * ac_dim + j]).collect()).collect();
            (vecs, vec![0.0; ac_dim])
        } else {
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(ac_dim, ac_dim, &cov));
            let mut order: Vec<usize> = (0..ac_dim).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
            let vecs = order
                .iter()
                .map(|&e| {
                    (0..dim)
                        .map(|i| (0..ac_dim).map(|j| basis[i * ac_dim + j] * eig.eigenvectors[(j, e)]).sum())
                        .collect()
                })
                .collect();
            let vals = order.iter().map(|&e| eig.eigenvalues[e].max(0.0)).collect();
            (vecs, vals)
        };

        for mut v in vectors {
            fix_sign(&mut v);
            kernels.extend_from_slice(&v);
        }
        eigenvalues.extend(values);
        Ok(Self { window, kernels, eigenvalues, degenerate })
    }

    /// Rebuilds a bank from stored parts, checking shapes.
    pub fn from_parts(window: usize, kernels: Vec<f64>, eigenvalues: Vec<f64>, degenerate: bool) -> Result<Self> {
        let dim = window * window;
        if dim == 0 || !kernels.len().is_multiple_of(dim) || kernels.len() / dim != eigenvalues.len() || eigenvalues.is_empty() {
            return Err(GuslError::InvalidModel(format!(
                "saab bank with window {window}: {} kernel values, {} eigenvalues",
                kernels.len(),
                eigenvalues.len()
            )));
        }
        if eigenvalues.len() > dim {
            return Err(GuslError::InvalidModel("more saab channels than window pixels".into()));
        }
        Ok(Self { window, kernels, eigenvalues, degenerate })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn channels(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn kernel(&self, i: usize) -> &[f64] {
        let dim = self.window * self.window;
        &self.kernels[i * dim..(i + 1) * dim]
    }

    pub fn kernels(&self) -> &[f64] {
        &self.kernels
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn shape(&self) -> SaabShape {
        SaabShape { window: self.window, channels: self.channels(), degenerate: self.degenerate }
    }

    /// Coefficients of one flattened patch.
    pub fn transform_patch(&self, patch: &[f64], out: &mut [f64]) {
        let dim = self.window * self.window;
        for (o, k) in out.iter_mut().zip(self.kernels.chunks_exact(dim)) {
            *o = k.iter().zip(patch).map(|(a, b)| a * b).sum();
        }
    }

    /// Stride-1 transform over reflect-padded windows centred on every pixel.
    pub fn apply(&self, img: &Image, source: Source) -> Result<FeatureStack> {
        let w = self.window;
        if w.is_multiple_of(2) {
            return Err(GuslError::InvalidConfig(format!("sliding window must be odd, got {w}")));
        }
        if img.height() < w || img.width() < w {
            return Err(GuslError::InvalidDimension(format!(
                "{}x{} image is smaller than the {w}x{w} window",
                img.height(),
                img.width()
            )));
        }
        let c = self.channels();
        let (h, wd) = img.dims();
        let mut data = vec![0.0; h * wd * c];
        let mut patch = vec![0.0; w * w];
        for r in 0..h {
            for col in 0..wd {
                extract_patch(img, r, col, w, &mut patch);
                let p = r * wd + col;
                self.transform_patch(&patch, &mut data[p * c..(p + 1) * c]);
            }
        }
        let channels = (0..c).map(Channel::Saab).collect();
        FeatureStack::new(source, h, wd, channels, data)
    }
}

/// Reflect-padded `window` x `window` patch centred on `(row, col)`.
pub fn extract_patch(img: &Image, row: usize, col: usize, window: usize, out: &mut [f64]) {
    let half = (window / 2) as isize;
    let (h, w) = img.dims();
    let interior = row as isize >= half
        && col as isize >= half
        && (row as isize + half) < h as isize
        && (col as isize + half) < w as isize;
    let mut k = 0;
    for dy in -half..=half {
        for dx in -half..=half {
            let (rr, cc) = (row as isize + dy, col as isize + dx);
            out[k] = if interior { img.get(rr as usize, cc as usize) } else { img.get_reflect(rr, cc) };
            k += 1;
        }
    }
}

/// Patches on a seeded uniform grid over all images, at most `cap` of them.
pub fn sample_patches(images: &[&Image], window: usize, cap: usize, seed: u64) -> Vec<f64> {
    let cap = cap.max(1);
    let mut stride = 1usize;
    loop {
        let n: usize = images.iter().map(|im| im.height().div_ceil(stride) * im.width().div_ceil(stride)).sum();
        if n <= cap {
            break;
        }
        stride += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut patch = vec![0.0; window * window];
    for im in images {
        let oy = rng.random_range(0..stride.min(im.height()));
        let ox = rng.random_range(0..stride.min(im.width()));
        for r in (oy..im.height()).step_by(stride) {
            for c in (ox..im.width()).step_by(stride) {
                extract_patch(im, r, c, window, &mut patch);
                out.extend_from_slice(&patch);
            }
        }
    }
    out
}

/// Orthonormal basis of the complement of the all-ones direction, from the
/// Householder reflection that swaps e1 with 1/sqrt(n). Stored row-major n x (n-1).
fn ac_basis(n: usize) -> Vec<f64> {
    if n == 1 {
        return Vec::new();
    }
    let u = 1.0 / (n as f64).sqrt();
    let mut v = vec![u; n];
    v[0] -= 1.0;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let mut basis = vec![0.0; n * (n - 1)];
    for i in 0..n {
        for j in 1..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            basis[i * (n - 1) + (j - 1)] = delta - 2.0 * v[i] * v[j] / vv;
        }
    }
    basis
}

/// Flips `v` so that its largest-magnitude entry (earliest on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
