//! Raster types shared by every stage of the pipeline.
//!
//! Pixels are stored row-major ("lines after lines"): pixel `(i, j)` is row `i`,
//! column `j`, at flat index `i * width + j`.

use crate::error::{Result, SpriteError};

/// A 2-D real raster with its pixel pitch expressed relative to the
/// high-resolution reference grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    pitch_scale: f64,
}

impl ImageGrid {
    /// All-zero image on the reference pitch.
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        ImageGrid {
            width,
            height,
            pixels: vec![0.0; width * height],
            pitch_scale: 1.0,
        }
    }

    /// Builds an image from row-major pixels (the inverse of [`ImageGrid::flatten`]).
    pub fn from_vec(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(SpriteError::Input(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != width * height {
            return Err(SpriteError::dims(width * height, pixels.len()));
        }
        if let Some(k) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(SpriteError::Input(format!(
                "non-finite pixel at flat index {k}"
            )));
        }
        Ok(ImageGrid {
            width,
            height,
            pixels,
            pitch_scale: 1.0,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = ImageGrid::zeros(height, width);
        for i in 0..height {
            for j in 0..width {
                img.pixels[i * width + j] = f(i, j);
            }
        }
        img
    }

    pub fn with_pitch_scale(mut self, pitch_scale: f64) -> Self {
        assert!(pitch_scale > 0.0, "pitch scale must be positive");
        self.pitch_scale = pitch_scale;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pitch_scale(&self) -> f64 {
        self.pitch_scale
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// Row-major copy of the pixels.
    pub fn flatten(&self) -> Vec<f64> {
        self.pixels.clone()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.pixels[i * self.width + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.pixels[i * self.width..(i + 1) * self.width]
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Position of the largest pixel as `(row, col)`; first occurrence wins.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, &v) in self.pixels.iter().enumerate() {
            if v > self.pixels[best] {
                best = k;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn scaled(&self, factor: f64) -> ImageGrid {
        let mut out = self.clone();
        out.pixels.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn same_dims(&self, other: &ImageGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(SpriteError::dims(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    /// Pixel-wise sum with another image of the same size.
    pub fn add(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.same_dims(other)?;
        let mut out = self.clone();
        for (a, b) in out.pixels.iter_mut().zip(&other.pixels) {
            *a += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.same_dims(other)?;
        let mut out = self.clone();
        for (a, b) in out.pixels.iter_mut().zip(&other.pixels) {
            *a -= b;
        }
        Ok(out)
    }
}

/// Selects every `d`-th pixel along both axes: `out(i, j) = hr(d·i, d·j)`.
pub fn decimate(hr: &ImageGrid, d: usize) -> Result<ImageGrid> {
    if d == 0 {
        return Err(SpriteError::Input("decimation factor must be >= 1".into()));
    }
    if hr.height % d != 0 || hr.width % d != 0 {
        return Err(SpriteError::Input(format!(
            "{}x{} image is not divisible by decimation factor {d}",
            hr.height, hr.width
        )));
    }
    let (h, w) = (hr.height / d, hr.width / d);
    let mut out = ImageGrid::from_fn(h, w, |i, j| hr.get(d * i, d * j));
    out.pitch_scale = hr.pitch_scale * d as f64;
    Ok(out)
}

/// Places `lr(i, j)` at `(d·i, d·j)` and zeros elsewhere; the transpose of [`decimate`].
pub fn zero_pad_upsample(lr: &ImageGrid, d: usize) -> Result<ImageGrid> {
    if d == 0 {
        return Err(SpriteError::Input("upsampling factor must be >= 1".into()));
    }
    let mut out = ImageGrid::zeros(lr.height * d, lr.width * d);
    for i in 0..lr.height {
        for j in 0..lr.width {
            out.set(d * i, d * j, lr.get(i, j));
        }
    }
    out.pitch_scale = lr.pitch_scale / d as f64;
    Ok(out)
}

/// Translates by whole pixels: `out(i, j) = image(i − di, j − dj)`, zero where the
/// source falls off the raster.
pub fn integer_shift(image: &ImageGrid, di: isize, dj: isize) -> ImageGrid {
    let (h, w) = (image.height as isize, image.width as isize);
    let mut out = ImageGrid::zeros(image.height, image.width);
    out.pitch_scale = image.pitch_scale;
    for i in 0..h {
        let si = i - di;
        if si < 0 || si >= h {
            continue;
        }
        for j in 0..w {
            let sj = j - dj;
            if sj < 0 || sj >= w {
                continue;
            }
            out.pixels[(i * w + j) as usize] = image.pixels[(si * w + sj) as usize];
        }
    }
    out
}

/// One low-resolution observation with its data-fidelity parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LRExposure {
    pub image: ImageGrid,
    /// Noise standard deviation.
    pub sigma: f64,
    /// Photometric factor relative to the reference exposure.
    pub flux: f64,
    /// Centroid offset `(row, col)` in low-resolution pixels.
    pub shift: (f64, f64),
}

impl LRExposure {
    pub fn new(image: ImageGrid, sigma: f64, flux: f64, shift: (f64, f64)) -> Result<Self> {
        let e = LRExposure {
            image,
            sigma,
            flux,
            shift,
        };
        e.validate()?;
        Ok(e)
    }

    /// Exposure with unit noise and flux and no shift; parameters are filled in later.
    pub fn from_image(image: ImageGrid) -> Self {
        LRExposure {
            image,
            sigma: 1.0,
            flux: 1.0,
            shift: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(SpriteError::Input(format!(
                "noise level must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.flux > 0.0 && self.flux.is_finite()) {
            return Err(SpriteError::Input(format!(
                "flux must be positive, got {}",
                self.flux
            )));
        }
        let (h, w) = self.image.dims();
        if !(self.shift.0.abs() < h as f64 && self.shift.1.abs() < w as f64) {
            return Err(SpriteError::Input(format!(
                "shift ({}, {}) lies outside the {h}x{w} raster",
                self.shift.0, self.shift.1
            )));
        }
        Ok(())
    }
}

/// `n` same-sized exposures of one source and the target upsampling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LRStack {
    exposures: Vec<LRExposure>,
    upsampling: usize,
}

impl LRStack {
    pub fn new(exposures: Vec<LRExposure>, upsampling: usize) -> Result<Self> {
        if exposures.is_empty() {
            return Err(SpriteError::Input("stack needs at least one exposure".into()));
        }
        if upsampling == 0 {
            return Err(SpriteError::Input("upsampling factor must be >= 1".into()));
        }
        let dims = exposures[0].image.dims();
        for (k, e) in exposures.iter().enumerate() {
            if e.image.dims() != dims {
                return Err(SpriteError::dims(
                    format!("{}x{}", dims.0, dims.1),
                    format!("{}x{} (exposure {k})", e.image.height(), e.image.width()),
                ));
            }
            e.validate()?;
        }
        Ok(LRStack {
            exposures,
            upsampling,
        })
    }

    pub fn exposures(&self) -> &[LRExposure] {
        &self.exposures
    }

    pub fn exposures_mut(&mut self) -> &mut [LRExposure] {
        &mut self.exposures
    }

    pub fn len(&self) -> usize {
        self.exposures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exposures.is_empty()
    }

    pub fn upsampling(&self) -> usize {
        self.upsampling
    }

    pub fn set_upsampling(&mut self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(SpriteError::Input("upsampling factor must be >= 1".into()));
        }
        self.upsampling = d;
        Ok(())
    }

    /// `(height, width)` of each exposure.
    pub fn lr_dims(&self) -> (usize, usize) {
        self.exposures[0].image.dims()
    }

    /// `(height, width)` of the super-resolved grid.
    pub fn hr_dims(&self) -> (usize, usize) {
        let (h, w) = self.lr_dims();
        (h * self.upsampling, w * self.upsampling)
    }
}
