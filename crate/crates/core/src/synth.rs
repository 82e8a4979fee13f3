//! Synthetic phantoms and a blur-plus-noise degradation used as a stand-in
//! for low-dose acquisitions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GuslError, Result};
use crate::image::{reflect_index, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeParams {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DegradeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("blur_sigma", self.blur_sigma), ("noise_sigma", self.noise_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GuslError::InvalidConfig(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Normalized Gaussian taps over [-ceil(3 sigma), ceil(3 sigma)].
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma == 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dims();
    let rows = Image::from_fn(h, w, |y, x| {
        k.iter().enumerate().map(|(i, t)| t * img.get(y, reflect_index(x as isize + i as isize - r, w))).sum()
    });
    Image::from_fn(h, w, |y, x| {
        k.iter().enumerate().map(|(i, t)| t * rows.get(reflect_index(y as isize + i as isize - r, h), x)).sum()
    })
}

/// Blur, add seeded Gaussian noise, clamp to [0, 1].
pub fn synth_degrade(clean: &Image, p: &DegradeParams) -> Result<Image> {
    p.validate()?;
    let mut out = gaussian_blur(clean, p.blur_sigma);
    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma).map_err(|e| GuslError::InvalidConfig(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let (h, w) = out.dims();
        for r in 0..h {
            for c in 0..w {
                out.set(r, c, out.get(r, c) + normal.sample(&mut rng));
            }
        }
    }
    out.clip_unit();
    Ok(out)
}

/// Random ellipses and rectangles of varying intensity on a dim disc.
pub fn phantom(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut img = Image::from_fn(size, size, |r, c| {
        let (y, x) = ((r as f64 + 0.5) / s - 0.5, (c as f64 + 0.5) / s - 0.5);
        if x * x + y * y < 0.2 {
            0.2
        } else {
            0.0
        }
    });
    let shapes = rng.random_range(4..=9);
    for _ in 0..shapes {
        let cy = rng.random_range(0.2..0.8) * s;
        let cx = rng.random_range(0.2..0.8) * s;
        let ay = rng.random_range(0.04..0.25) * s;
        let ax = rng.random_range(0.04..0.25) * s;
        let value: f64 = rng.random_range(0.3..0.95);
        let ellipse = rng.random_bool(0.6);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = theta.sin_cos();
        for r in 0..size {
            for c in 0..size {
                let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
                let inside = if ellipse {
                    let u = dx * cos + dy * sin;
                    let v = -dx * sin + dy * cos;
                    (u / ax).powi(2) + (v / ay).powi(2) <= 1.0
                } else {
                    dy.abs() <= ay && dx.abs() <= ax
                };
                if inside {
                    img.set(r, c, value);
                }
            }
        }
    }
    img
}
