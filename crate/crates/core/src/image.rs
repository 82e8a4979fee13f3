//! Grayscale rasters and the pyramid operations used by the residual chain.
//!
//! Intensities are `f64`. Inputs and predictions live in `[0, 1]`; residuals and
//! difference maps are signed, so [`Image`] itself only requires finite values.

use serde::{Deserialize, Serialize};

use crate::error::{GuslError, Result};

/// Smallest edge length allowed at the coarsest pyramid level.
pub const MIN_COARSEST_EDGE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(GuslError::InvalidDimension(format!("image must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(GuslError::Shape(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GuslError::InvalidInput("image contains non-finite values".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    /// Pixel value at a possibly out-of-range position, mirrored at the borders
    /// without repeating the edge sample.
    #[inline]
    pub fn get_reflect(&self, row: isize, col: isize) -> f64 {
        self.get(reflect_index(row, self.height), reflect_index(col, self.width))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn clip_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Elementwise `self - other`.
    pub fn difference(&self, other: &Image) -> Result<Image> {
        ensure_same_dims(self, other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Image { height: self.height, width: self.width, data })
    }

    /// Copy of the `height` x `width` window whose top-left corner is at the origin.
    pub fn crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height || width > self.width || height == 0 || width == 0 {
            return Err(GuslError::InvalidDimension(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |r, c| self.get(r, c)))
    }

    /// Extends the image to `height` x `width` by mirror padding at the bottom and right.
    pub fn pad_reflect(&self, height: usize, width: usize) -> Result<Image> {
        if height < self.height || width < self.width {
            return Err(GuslError::InvalidDimension(format!(
                "cannot pad {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |r, c| self.get_reflect(r as isize, c as isize)))
    }
}

pub(crate) fn ensure_same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(GuslError::Shape(format!("{}x{} vs {}x{}", a.height, a.width, b.height, b.width)));
    }
    Ok(())
}

/// Mirror an index into `0..n` (numpy "reflect" mode, any distance).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

/// 2x2 mean pooling. Odd trailing rows/columns average only the pixels that exist.
pub fn downsample_mean(img: &Image) -> Result<Image> {
    let (h, w) = img.dims();
    if h < 2 || w < 2 {
        return Err(GuslError::InvalidDimension(format!("cannot downsample {h}x{w}")));
    }
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Ok(Image::from_fn(oh, ow, |r, c| {
        let (r0, c0) = (2 * r, 2 * c);
        let (r1, c1) = ((r0 + 2).min(h), (c0 + 2).min(w));
        let mut sum = 0.0;
        for rr in r0..r1 {
            for cc in c0..c1 {
                sum += img.get(rr, cc);
            }
        }
        sum / ((r1 - r0) * (c1 - c0)) as f64
    }))
}

/// Source sample positions for half-pixel-centred resampling of `src` samples onto `dst`.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear upscaling with half-pixel-centred sampling.
pub fn upscale(img: &Image, target_h: usize, target_w: usize) -> Result<Image> {
    let (h, w) = img.dims();
    if target_h < h || target_w < w {
        return Err(GuslError::InvalidDimension(format!(
            "upscale target {target_h}x{target_w} is smaller than source {h}x{w}"
        )));
    }
    let rows = bilinear_taps(h, target_h);
    let cols = bilinear_taps(w, target_w);
    Ok(Image::from_fn(target_h, target_w, |r, c| {
        let (r0, r1, fy) = rows[r];
        let (c0, c1, fx) = cols[c];
        let top = lerp(img.get(r0, c0), img.get(r0, c1), fx);
        let bottom = lerp(img.get(r1, c0), img.get(r1, c1), fx);
        lerp(top, bottom, fy)
    }))
}

/// Dimensions of every level of a pyramid over an `h` x `w` image, finest first.
pub fn pyramid_dims(h: usize, w: usize, level_count: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(level_count);
    let (mut ch, mut cw) = (h, w);
    for _ in 0..level_count {
        dims.push((ch, cw));
        ch = ch.div_ceil(2);
        cw = cw.div_ceil(2);
    }
    dims
}

pub(crate) fn check_pyramid_dims(h: usize, w: usize, level_count: usize) -> Result<()> {
    if level_count < 2 {
        return Err(GuslError::InvalidConfig(format!("pyramid needs at least 2 levels, got {level_count}")));
    }
    let (ch, cw) = *pyramid_dims(h, w, level_count).last().expect("level_count >= 2");
    if ch < MIN_COARSEST_EDGE || cw < MIN_COARSEST_EDGE {
        return Err(GuslError::InvalidConfig(format!(
            "{h}x{w} with {level_count} levels gives a {ch}x{cw} coarsest level (minimum {MIN_COARSEST_EDGE}x{MIN_COARSEST_EDGE})"
        )));
    }
    Ok(())
}

/// Mean-pool pyramid; index 0 holds level 1 (the source image).
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    levels: Vec<Image>,
}

impl Pyramid {
    pub fn build(img: &Image, level_count: usize) -> Result<Self> {
        check_pyramid_dims(img.height(), img.width(), level_count)?;
        let mut levels = Vec::with_capacity(level_count);
        levels.push(img.clone());
        for i in 1..level_count {
            let next = downsample_mean(&levels[i - 1])?;
            levels.push(next);
        }
        Ok(Self { levels })
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Level `i`, 1-based (1 = finest).
    pub fn level(&self, i: usize) -> &Image {
        &self.levels[i - 1]
    }

    pub fn levels(&self) -> &[Image] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<Image> {
        self.levels
    }
}

pub fn build_pyramid(img: &Image, level_count: usize) -> Result<Pyramid> {
    Pyramid::build(img, level_count)
}

/// `p_prev + residual`, optionally clamped to `[0, 1]`.
pub fn compose_prediction(p_prev: &Image, residual: &Image, clip: bool) -> Result<Image> {
    ensure_same_dims(p_prev, residual)?;
    let data = p_prev
        .data
        .iter()
        .zip(&residual.data)
        .map(|(p, r)| if clip { (p + r).clamp(0.0, 1.0) } else { p + r })
        .collect();
    Ok(Image { height: p_prev.height, width: p_prev.width, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(rows: &[&[f64]]) -> Image {
        let h = rows.len();
        let w = rows[0].len();
        Image::new(h, w, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn downsample_two_by_two() {
        let out = downsample_mean(&img(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(out, img(&[&[2.5]]));
    }

    #[test]
    fn downsample_odd_uses_partial_blocks() {
        let src = Image::from_fn(3, 3, |r, c| (r * 3 + c + 1) as f64);
        let out = downsample_mean(&src).unwrap();
        assert_eq!(out, img(&[&[3.0, 4.5], &[7.5, 9.0]]));
    }

    #[test]
    fn downsample_constant_and_too_small() {
        let out = downsample_mean(&Image::filled(6, 10, 0.3)).unwrap();
        assert_eq!(out.dims(), (3, 5));
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(matches!(downsample_mean(&Image::filled(1, 5, 0.0)), Err(GuslError::InvalidDimension(_))));
    }

    #[test]
    fn upscale_constant_is_exact() {
        let out = upscale(&Image::filled(2, 2, 0.5), 4, 4).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn upscale_column_is_monotone() {
        let out = upscale(&img(&[&[0.0], &[1.0]]), 4, 1).unwrap();
        let d = out.data();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[3], 1.0);
        assert!(d.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn upscale_row_half_pixel_values() {
        // centres at -0.25, 0.25, 0.75, 1.25 in source coordinates, clamped to [0, 1]
        let out = upscale(&img(&[&[0.0, 1.0]]), 1, 4).unwrap();
        assert_eq!(out.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn upscale_rejects_shrinking() {
        assert!(matches!(upscale(&Image::filled(4, 4, 0.0), 2, 4), Err(GuslError::InvalidDimension(_))));
    }

    #[test]
    fn pyramid_dims_follow_ceil_halving() {
        let p = build_pyramid(&Image::filled(512, 512, 0.1), 4).unwrap();
        let dims: Vec<_> = p.levels().iter().map(Image::dims).collect();
        assert_eq!(dims, vec![(512, 512), (256, 256), (128, 128), (64, 64)]);

        let p = build_pyramid(&Image::filled(100, 64, 0.1), 3).unwrap();
        let dims: Vec<_> = p.levels().iter().map(Image::dims).collect();
        assert_eq!(dims, vec![(100, 64), (50, 32), (25, 16)]);
    }

    #[test]
    fn pyramid_two_levels_is_definition() {
        let src = Image::from_fn(20, 18, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        let p = build_pyramid(&src, 2).unwrap();
        assert_eq!(p.level(1), &src);
        assert_eq!(p.level(2), &downsample_mean(&src).unwrap());
    }

    #[test]
    fn pyramid_rejects_tiny_coarsest() {
        assert!(matches!(build_pyramid(&Image::filled(32, 32, 0.0), 4), Err(GuslError::InvalidConfig(_))));
        assert!(matches!(build_pyramid(&Image::filled(32, 32, 0.0), 1), Err(GuslError::InvalidConfig(_))));
    }

    #[test]
    fn compose_examples() {
        let one = img(&[&[1.0]]);
        assert_eq!(compose_prediction(&one, &img(&[&[0.0]]), false).unwrap(), one);
        let out = compose_prediction(&img(&[&[0.4]]), &img(&[&[0.1]]), false).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < 1e-15);
        let out = compose_prediction(&img(&[&[0.95]]), &img(&[&[0.2]]), true).unwrap();
        assert_eq!(out.get(0, 0), 1.0);
        assert!(matches!(compose_prediction(&one, &Image::filled(1, 2, 0.0), true), Err(GuslError::Shape(_))));
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<_> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    fn arb_image(max: usize) -> impl Strategy<Value = Image> {
        (2..max, 2..max).prop_flat_map(|(h, w)| {
            prop::collection::vec(0.0f64..1.0, h * w).prop_map(move |d| Image::new(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn downsample_preserves_mean_for_even_dims(h in 1usize..8, w in 1usize..8, seed in any::<u64>()) {
            let src = Image::from_fn(2 * h, 2 * w, |r, c| {
                ((seed ^ (r as u64 * 31 + c as u64 * 17)) % 1000) as f64 / 1000.0
            });
            let out = downsample_mean(&src).unwrap();
            prop_assert!((out.mean() - src.mean()).abs() < 1e-12);
        }

        #[test]
        fn upscale_stays_in_input_range(src in arb_image(9), dh in 0usize..9, dw in 0usize..9) {
            let (lo, hi) = src.min_max();
            let out = upscale(&src, src.height() + dh, src.width() + dw).unwrap();
            prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }

        #[test]
        fn compose_with_zero_is_identity(src in arb_image(9)) {
            let zero = Image::filled(src.height(), src.width(), 0.0);
            prop_assert_eq!(compose_prediction(&src, &zero, false).unwrap(), src);
        }
    }
}
