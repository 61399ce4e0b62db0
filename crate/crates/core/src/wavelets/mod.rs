//! Undecimated multiscale dictionaries.
//!
//! Two transforms are provided, both undecimated (every band has the image's
//! dimensions) with mirror boundaries:
//!
//! * `Starlet2`: second-generation starlet built on the B3-spline. Each level
//!   smooths twice, `c_{j+1} = H_j c_j` and `w_j = c_j − H_j c_{j+1}`, and
//!   reconstructs by `c_j = H_j c_{j+1} + w_j`.
//! * `Bior79`: separable à-trous CDF 9/7 filter bank with three oriented
//!   detail bands per level.
//!
//! Coefficients are stored flat: band after band, each band row-major. The last
//! band is always the coarse approximation, which is never thresholded.

mod filter;

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SpriteError};
use crate::image::ImageGrid;
use crate::operator::{spectral_radius, PowerIterationOptions};
use crate::stats::mad_sigma;

use filter::{filter_2d, Filter};

/// A linear analysis operator `Φ` on flat images, with its exact adjoint.
pub trait Dictionary {
    fn image_len(&self) -> usize;
    fn coeff_len(&self) -> usize;
    /// `Φ x`.
    fn analyze(&self, x: &[f64]) -> Vec<f64>;
    /// `Φᵀ u`.
    fn adjoint(&self, u: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DictionaryKind {
    Starlet2,
    Bior79,
}

impl DictionaryKind {
    /// Transform code used on the command line.
    pub fn code(self) -> u32 {
        match self {
            DictionaryKind::Starlet2 => 2,
            DictionaryKind::Bior79 => 24,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            2 => Ok(DictionaryKind::Starlet2),
            24 => Ok(DictionaryKind::Bior79),
            other => Err(SpriteError::Input(format!(
                "unknown transform code {other} (expected 2 or 24)"
            ))),
        }
    }

    /// Bands per detail level.
    pub fn bands_per_level(self) -> usize {
        match self {
            DictionaryKind::Starlet2 => 1,
            DictionaryKind::Bior79 => 3,
        }
    }
}

impl fmt::Display for DictionaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DictionaryKind::Starlet2 => "starlet2",
            DictionaryKind::Bior79 => "bior79",
        })
    }
}

impl FromStr for DictionaryKind {
    type Err = SpriteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "starlet2" | "starlet" | "2" => Ok(DictionaryKind::Starlet2),
            "bior79" | "bior" | "24" => Ok(DictionaryKind::Bior79),
            other => Err(SpriteError::Input(format!("unknown dictionary '{other}'"))),
        }
    }
}

// CDF 9/7 lowpass pair, analysis summing to 1 and synthesis summing to 2.
const CDF97_ANALYSIS_LOW: [f64; 5] = [
    0.602_949_018_236_357_9,
    0.266_864_118_442_872_3,
    -0.078_223_266_528_987_85,
    -0.016_864_118_442_874_95,
    0.026_748_757_410_809_76,
];
const CDF97_SYNTHESIS_LOW: [f64; 4] = [
    1.115_087_052_456_994,
    0.591_271_763_114_247,
    -0.057_543_526_228_499_57,
    -0.091_271_763_114_249_48,
];

fn mirror_taps(half: &[f64], scale: f64, alternate: bool) -> Filter {
    let r = half.len() - 1;
    let taps = (0..=2 * r)
        .map(|k| {
            let t = k.abs_diff(r);
            let sign = if alternate && t % 2 == 1 { -1.0 } else { 1.0 };
            sign * scale * half[t]
        })
        .collect();
    Filter::symmetric(taps)
}

#[derive(Debug, Clone)]
struct FilterBank {
    low: Filter,
    high: Filter,
    synth_low: Filter,
    synth_high: Filter,
}

fn bior_bank() -> FilterBank {
    // Highpass filters are the modulated opposite lowpass, centred at zero, so that
    // synth_low·low + synth_high·high = 1 at every frequency.
    FilterBank {
        low: mirror_taps(&CDF97_ANALYSIS_LOW, 1.0, false),
        high: mirror_taps(&CDF97_SYNTHESIS_LOW, 0.5, true),
        synth_low: mirror_taps(&CDF97_SYNTHESIS_LOW, 0.5, false),
        synth_high: mirror_taps(&CDF97_ANALYSIS_LOW, 1.0, true),
    }
}

fn b3_spline() -> Filter {
    Filter::symmetric(vec![1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0])
}

/// A configured transform for a fixed image size and number of scales.
#[derive(Debug, Clone)]
pub struct WaveletTransform {
    kind: DictionaryKind,
    levels: usize,
    dims: (usize, usize),
    b3: Filter,
    bank: FilterBank,
}

impl WaveletTransform {
    /// `levels` detail scales; each image side must be at least `2^levels`.
    pub fn new(kind: DictionaryKind, levels: usize, dims: (usize, usize)) -> Result<Self> {
        if levels == 0 {
            return Err(SpriteError::Input("at least one wavelet scale is required".into()));
        }
        let need = 1usize.checked_shl(levels as u32).unwrap_or(usize::MAX);
        if dims.0 < need || dims.1 < need {
            return Err(SpriteError::Input(format!(
                "{} scales need an image of at least {need}x{need}, got {}x{}",
                levels, dims.0, dims.1
            )));
        }
        Ok(WaveletTransform {
            kind,
            levels,
            dims,
            b3: b3_spline(),
            bank: bior_bank(),
        })
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn num_bands(&self) -> usize {
        self.kind.bands_per_level() * self.levels + 1
    }

    pub fn band_len(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    /// Detail level of band `b`; the coarse band reports `levels`.
    pub fn band_level(&self, b: usize) -> usize {
        if b + 1 == self.num_bands() {
            self.levels
        } else {
            b / self.kind.bands_per_level()
        }
    }

    pub fn is_coarse(&self, b: usize) -> bool {
        b + 1 == self.num_bands()
    }

    /// Left inverse of [`Dictionary::analyze`].
    pub fn reconstruct(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.coeff_len(), "coefficient length");
        let n = self.band_len();
        let dims = self.dims;
        let nb = self.num_bands();
        let mut c = u[(nb - 1) * n..].to_vec();
        for j in (0..self.levels).rev() {
            let step = 1 << j;
            match self.kind {
                DictionaryKind::Starlet2 => {
                    let w = &u[j * n..(j + 1) * n];
                    c = filter_2d(&c, dims, &self.b3, &self.b3, step, false);
                    for (a, b) in c.iter_mut().zip(w) {
                        *a += b;
                    }
                }
                DictionaryKind::Bior79 => {
                    let bk = &self.bank;
                    let base = 3 * j;
                    let mut acc = filter_2d(&c, dims, &bk.synth_low, &bk.synth_low, step, false);
                    let parts = [
                        (&bk.synth_low, &bk.synth_high),
                        (&bk.synth_high, &bk.synth_low),
                        (&bk.synth_high, &bk.synth_high),
                    ];
                    for (o, (rf, cf)) in parts.into_iter().enumerate() {
                        let band = &u[(base + o) * n..(base + o + 1) * n];
                        let part = filter_2d(band, dims, rf, cf, step, false);
                        for (a, b) in acc.iter_mut().zip(&part) {
                            *a += b;
                        }
                    }
                    c = acc;
                }
            }
        }
        c
    }

    /// `ρ(ΦᵀΦ) = ρ(ΦΦᵀ)` by power iteration.
    pub fn frame_bound(&self) -> f64 {
        let est = spectral_radius(
            |v| self.adjoint(&self.analyze(v)),
            self.image_len(),
            &PowerIterationOptions::default(),
        );
        est.value
    }

    /// Per-band standard deviation of the coefficients of unit white noise,
    /// from the l2 norm of each band's equivalent filter (interior value).
    pub fn white_noise_levels(&self) -> Vec<f64> {
        let side = 12 * (1usize << self.levels) + 1;
        let probe = WaveletTransform::new(self.kind, self.levels, (side, side))
            .expect("probe grid is large enough");
        let mut delta = vec![0.0; side * side];
        delta[(side / 2) * side + side / 2] = 1.0;
        let coeffs = probe.analyze(&delta);
        let n = side * side;
        (0..probe.num_bands())
            .map(|b| coeffs[b * n..(b + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

impl Dictionary for WaveletTransform {
    fn image_len(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    fn coeff_len(&self) -> usize {
        self.num_bands() * self.band_len()
    }

    fn analyze(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.image_len(), "image length");
        let n = self.band_len();
        let dims = self.dims;
        let mut out = Vec::with_capacity(self.coeff_len());
        let mut c = x.to_vec();
        for j in 0..self.levels {
            let step = 1 << j;
            match self.kind {
                DictionaryKind::Starlet2 => {
                    let c1 = filter_2d(&c, dims, &self.b3, &self.b3, step, false);
                    let c2 = filter_2d(&c1, dims, &self.b3, &self.b3, step, false);
                    out.extend(c.iter().zip(&c2).map(|(a, b)| a - b));
                    c = c1;
                }
                DictionaryKind::Bior79 => {
                    let bk = &self.bank;
                    out.extend(filter_2d(&c, dims, &bk.low, &bk.high, step, false));
                    out.extend(filter_2d(&c, dims, &bk.high, &bk.low, step, false));
                    out.extend(filter_2d(&c, dims, &bk.high, &bk.high, step, false));
                    c = filter_2d(&c, dims, &bk.low, &bk.low, step, false);
                }
            }
        }
        out.extend(c);
        debug_assert_eq!(out.len(), self.num_bands() * n);
        out
    }

    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.coeff_len(), "coefficient length");
        let n = self.band_len();
        let dims = self.dims;
        let nb = self.num_bands();
        let mut g = u[(nb - 1) * n..].to_vec();
        for j in (0..self.levels).rev() {
            let step = 1 << j;
            match self.kind {
                DictionaryKind::Starlet2 => {
                    // g_j = H_jᵀ g_{j+1} + w_j − H_jᵀ H_jᵀ w_j
                    let w = &u[j * n..(j + 1) * n];
                    let hw = filter_2d(w, dims, &self.b3, &self.b3, step, true);
                    let mut t = g;
                    for (a, b) in t.iter_mut().zip(&hw) {
                        *a -= b;
                    }
                    let mut next = filter_2d(&t, dims, &self.b3, &self.b3, step, true);
                    for (a, b) in next.iter_mut().zip(w) {
                        *a += b;
                    }
                    g = next;
                }
                DictionaryKind::Bior79 => {
                    let bk = &self.bank;
                    let base = 3 * j;
                    let mut acc = filter_2d(&g, dims, &bk.low, &bk.low, step, true);
                    let parts = [(&bk.low, &bk.high), (&bk.high, &bk.low), (&bk.high, &bk.high)];
                    for (o, (rf, cf)) in parts.into_iter().enumerate() {
                        let band = &u[(base + o) * n..(base + o + 1) * n];
                        let part = filter_2d(band, dims, rf, cf, step, true);
                        for (a, b) in acc.iter_mut().zip(&part) {
                            *a += b;
                        }
                    }
                    g = acc;
                }
            }
        }
        g
    }
}

/// Analysis coefficients of one image together with their noise bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub kind: DictionaryKind,
    pub levels: usize,
    pub dims: (usize, usize),
    /// Flat band-major coefficients; the coarse band is last.
    pub data: Vec<f64>,
    /// Noise level per band.
    pub sigma_per_band: Vec<f64>,
    /// Optional per-coefficient weights in `(0, 1]`.
    pub weights: Option<Vec<f64>>,
}

impl WaveletCoeffs {
    pub fn transform(&self) -> WaveletTransform {
        WaveletTransform::new(self.kind, self.levels, self.dims).expect("validated at analysis")
    }

    pub fn num_bands(&self) -> usize {
        self.kind.bands_per_level() * self.levels + 1
    }

    pub fn band_len(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.band_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_image(&self, b: usize) -> ImageGrid {
        ImageGrid::from_vec(self.dims.0, self.dims.1, self.band(b).to_vec())
            .expect("band shape matches")
    }
}

/// `Φ x` for the chosen dictionary with `levels` detail scales.
pub fn analyze(image: &ImageGrid, kind: DictionaryKind, levels: usize) -> Result<WaveletCoeffs> {
    let t = WaveletTransform::new(kind, levels, image.dims())?;
    let data = t.analyze(image.pixels());
    Ok(WaveletCoeffs {
        kind,
        levels,
        dims: image.dims(),
        data,
        sigma_per_band: vec![0.0; t.num_bands()],
        weights: None,
    })
}

/// `Φᵀ u`, the exact adjoint of [`analyze`].
pub fn synthesize_adjoint(coeffs: &WaveletCoeffs) -> ImageGrid {
    let t = coeffs.transform();
    ImageGrid::from_vec(coeffs.dims.0, coeffs.dims.1, t.adjoint(&coeffs.data))
        .expect("adjoint keeps the image shape")
}

/// Left inverse of [`analyze`].
pub fn reconstruct(coeffs: &WaveletCoeffs) -> ImageGrid {
    let t = coeffs.transform();
    ImageGrid::from_vec(coeffs.dims.0, coeffs.dims.1, t.reconstruct(&coeffs.data))
        .expect("reconstruction keeps the image shape")
}

/// Per-band noise level of the transform of white noise with std `sigma_pixel`.
pub fn scale_noise_from_white(sigma_pixel: f64, kind: DictionaryKind, levels: usize) -> Result<Vec<f64>> {
    if !(sigma_pixel >= 0.0) {
        return Err(SpriteError::Input(format!(
            "pixel noise must be nonnegative, got {sigma_pixel}"
        )));
    }
    let probe = WaveletTransform::new(kind, levels, (1 << levels, 1 << levels))?;
    Ok(probe
        .white_noise_levels()
        .into_iter()
        .map(|s| s * sigma_pixel)
        .collect())
}

/// Robust per-band noise estimate for correlated noise.
///
/// Starts from `1.4826·MAD` of the band, then repeatedly soft-thresholds the band
/// at `k_thresh` times the current estimate and re-measures the MAD of the
/// residual (at most five passes).
pub fn correlated_scale_noise(coeffs: &WaveletCoeffs, k_thresh: f64) -> Vec<f64> {
    (0..coeffs.num_bands())
        .map(|b| correlated_band_noise(coeffs.band(b), k_thresh))
        .collect()
}

pub(crate) fn correlated_band_noise(band: &[f64], k_thresh: f64) -> f64 {
    const MAX_PASSES: usize = 5;
    let mut sigma = mad_sigma(band);
    let mut residual = vec![0.0; band.len()];
    for _ in 0..MAX_PASSES {
        if sigma == 0.0 {
            break;
        }
        let t = k_thresh * sigma;
        // residual of the soft-threshold denoiser is the band clamped to [-t, t]
        for (r, &v) in residual.iter_mut().zip(band) {
            *r = v.clamp(-t, t);
        }
        let next = mad_sigma(&residual);
        let done = (next - sigma).abs() <= 1e-6 * sigma;
        sigma = next;
        if done {
            break;
        }
    }
    sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Thresholds {
    PerBand(Vec<f64>),
    PerCoefficient(Vec<f64>),
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v.abs() <= t {
        0.0
    } else {
        v - t * v.signum()
    }
}

#[inline]
pub fn hard_threshold(v: f64, t: f64) -> f64 {
    if v.abs() >= t {
        v
    } else {
        0.0
    }
}

/// Thresholds every detail coefficient; the coarse band passes through.
pub fn threshold_coeffs(coeffs: &WaveletCoeffs, thresholds: &Thresholds, mode: ThresholdMode) -> Result<WaveletCoeffs> {
    let n = coeffs.band_len();
    let nb = coeffs.num_bands();
    let lookup: Box<dyn Fn(usize) -> f64> = match thresholds {
        Thresholds::PerBand(t) => {
            if t.len() < nb - 1 {
                return Err(SpriteError::dims(format!("{} band thresholds", nb - 1), t.len()));
            }
            Box::new(move |k| t[k / n])
        }
        Thresholds::PerCoefficient(t) => {
            if t.len() != coeffs.data.len() {
                return Err(SpriteError::dims(coeffs.data.len(), t.len()));
            }
            Box::new(move |k| t[k])
        }
    };
    let mut out = coeffs.clone();
    for (k, v) in out.data[..(nb - 1) * n].iter_mut().enumerate() {
        let t = lookup(k);
        if t < 0.0 {
            return Err(SpriteError::Input(format!("negative threshold {t}")));
        }
        *v = match mode {
            ThresholdMode::Soft => soft_threshold(*v, t),
            ThresholdMode::Hard => hard_threshold(*v, t),
        };
    }
    Ok(out)
}
