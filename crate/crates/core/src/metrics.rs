//! Full-reference quality metrics.

use crate::error::{GuslError, Result};
use crate::image::{ensure_same_dims, Image};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    ensure_same_dims(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB. Identical images have no finite PSNR and
/// yield [`GuslError::IdenticalImages`].
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(GuslError::InvalidConfig(format!("psnr peak must be positive, got {peak}")));
    }
    let err = mse(a, b)?;
    psnr_from_mse(err, peak)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if mse == 0.0 {
        return Err(GuslError::IdenticalImages);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable "valid" correlation: output is (h - 10) x (w - 10).
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        let row = &data[r * w..(r + 1) * w];
        for c in 0..ow {
            tmp[r * ow + c] = k.iter().zip(&row[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(r + i) * ow + c];
            }
            out[r * ow + c] = acc;
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11x11 Gaussian windows (sigma 1.5), peak 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ensure_same_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(GuslError::InvalidDimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let (xa, xb) = (a.data(), b.data());
    let aa: Vec<f64> = xa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = xb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = xa.iter().zip(xb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(xa, h, w, &k);
    let mu_b = filter_valid(xb, h, w, &k);
    let e_aa = filter_valid(&aa, h, w, &k);
    let e_bb = filter_valid(&bb, h, w, &k);
    let e_ab = filter_valid(&ab, h, w, &k);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}
