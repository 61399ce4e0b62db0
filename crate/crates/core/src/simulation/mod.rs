//! Synthetic PSFs and low-resolution stacks with controlled SNR.

pub mod benchmark;

pub use benchmark::{
    aggregate, run_benchmark, AggregateRow, BenchmarkFailure, BenchmarkResult, BenchmarkRow, BenchmarkSpec, Method, PsfFamily,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Result, SpriteError};
use crate::image::{ImageGrid, LRExposure, LRStack};
use crate::operator::predict_exposure;

/// Side of the square patch used for the signal level.
pub const SNR_PATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsfKind {
    /// `σx` along rows, `σy` along columns, rotated by `theta` radians.
    EllipticalGaussian { sigma_x: f64, sigma_y: f64, theta: f64 },
    /// Annular pupil with a three-vane spider. `lambda_over_d` is the
    /// diffraction scale in pixels; `obscuration` the inner/outer radius
    /// ratio; `vane_width` the vane width as a fraction of the pupil diameter.
    ObscuredAiry {
        lambda_over_d: f64,
        obscuration: f64,
        vane_width: f64,
        vane_angle: f64,
    },
}

impl PsfKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpriteError::Input(m));
        match *self {
            PsfKind::EllipticalGaussian { sigma_x, sigma_y, theta } => {
                if !(sigma_x > 0.0 && sigma_y > 0.0 && sigma_x.is_finite() && sigma_y.is_finite() && theta.is_finite()) {
                    return bad(format!("invalid Gaussian widths ({sigma_x}, {sigma_y}) or angle {theta}"));
                }
            }
            PsfKind::ObscuredAiry {
                lambda_over_d,
                obscuration,
                vane_width,
                vane_angle,
            } => {
                if !(lambda_over_d > 1.0 && lambda_over_d.is_finite()) {
                    return bad(format!("lambda/D must exceed one pixel, got {lambda_over_d}"));
                }
                if !(0.0..1.0).contains(&obscuration) || !(0.0..0.5).contains(&vane_width) || !vane_angle.is_finite() {
                    return bad(format!(
                        "invalid pupil: obscuration {obscuration}, vane width {vane_width}, angle {vane_angle}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Peak-normalized PSF centred on pixel `(h/2, w/2)`.
pub fn make_psf(kind: PsfKind, dims: (usize, usize)) -> Result<ImageGrid> {
    kind.validate()?;
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(SpriteError::Input("PSF grid must be nonempty".into()));
    }
    let c = ((h / 2) as f64, (w / 2) as f64);
    let img = match kind {
        PsfKind::EllipticalGaussian { sigma_x, sigma_y, theta } => {
            let (ct, st) = (theta.cos(), theta.sin());
            ImageGrid::from_fn(h, w, |i, j| {
                let (x, y) = (i as f64 - c.0, j as f64 - c.1);
                let u = ct * x + st * y;
                let v = -st * x + ct * y;
                (-0.5 * (u * u / (sigma_x * sigma_x) + v * v / (sigma_y * sigma_y))).exp()
            })
        }
        PsfKind::ObscuredAiry {
            lambda_over_d,
            obscuration,
            vane_width,
            vane_angle,
        } => airy(dims, lambda_over_d, obscuration, vane_width, vane_angle),
    };
    let peak = img.max();
    Ok(img.scaled(1.0 / peak))
}

const PUPIL_SUPERSAMPLE: usize = 4;

fn pupil_transmission(u: f64, v: f64, obscuration: f64, vane_half: f64, angle: f64) -> bool {
    let r = u.hypot(v);
    if r > 1.0 || r < obscuration {
        return false;
    }
    (0..3).all(|m| {
        let a = angle + m as f64 * 2.0 * std::f64::consts::PI / 3.0;
        let along = u * a.cos() + v * a.sin();
        let across = -u * a.sin() + v * a.cos();
        along <= 0.0 || across.abs() >= vane_half
    })
}

fn airy(dims: (usize, usize), lambda_over_d: f64, obscuration: f64, vane_width: f64, angle: f64) -> ImageGrid {
    let (h, w) = dims;
    // pupil radius in frequency samples so that λ/D spans `lambda_over_d` pixels
    let (ri, rj) = (h as f64 / (2.0 * lambda_over_d), w as f64 / (2.0 * lambda_over_d));
    let s = PUPIL_SUPERSAMPLE;
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for ki in 0..h {
        let fi = ki as f64 - (h / 2) as f64;
        for kj in 0..w {
            let fj = kj as f64 - (w / 2) as f64;
            let mut open = 0usize;
            for a in 0..s {
                for b in 0..s {
                    let u = (fi + (a as f64 + 0.5) / s as f64 - 0.5) / ri;
                    let v = (fj + (b as f64 + 0.5) / s as f64 - 0.5) / rj;
                    open += pupil_transmission(u, v, obscuration, vane_width, angle) as usize;
                }
            }
            buf[ki * w + kj].re = open as f64 / (s * s) as f64;
        }
    }
    fft2(&mut buf, h, w);
    ImageGrid::from_fn(h, w, |i, j| {
        // move the zero-frequency sample to (h/2, w/2)
        let (si, sj) = ((i + h - h / 2) % h, (j + w - w / 2) % w);
        buf[si * w + sj].norm_sqr()
    })
}

fn fft2(buf: &mut [Complex64], h: usize, w: usize) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(w).process(buf);
    let col = planner.plan_fft_forward(h);
    let mut tmp = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            tmp[i] = buf[i * w + j];
        }
        col.process(&mut tmp);
        for i in 0..h {
            buf[i * w + j] = tmp[i];
        }
    }
}

/// Variance of the 50×50 patch around the peak pixel. The patch is moved
/// inward when the peak is near an edge.
pub fn snr_signal_level(hr: &ImageGrid) -> Result<f64> {
    let (h, w) = hr.dims();
    if h < SNR_PATCH || w < SNR_PATCH {
        return Err(SpriteError::Input(format!(
            "{h}x{w} image is smaller than the {SNR_PATCH}x{SNR_PATCH} signal patch"
        )));
    }
    let (pi, pj) = hr.argmax();
    let start = |p: usize, n: usize| p.saturating_sub(SNR_PATCH / 2).min(n - SNR_PATCH);
    let (i0, j0) = (start(pi, h), start(pj, w));
    let vals: Vec<f64> = (i0..i0 + SNR_PATCH)
        .flat_map(|i| (j0..j0 + SNR_PATCH).map(move |j| (i, j)))
        .map(|(i, j)| hr.get(i, j))
        .collect();
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    Ok(vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64)
}

/// Noise standard deviation giving `snr_db` for a signal level.
pub fn noise_sigma(signal_level: f64, snr_db: f64) -> f64 {
    (signal_level / 10f64.powf(snr_db / 10.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub psf: PsfKind,
    pub hr_dims: (usize, usize),
    pub n_exposures: usize,
    pub d: usize,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Shifts are uniform in `[−max_shift, max_shift)` LR pixels per axis;
    /// exposure 0 is the unshifted reference.
    pub max_shift: f64,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            psf: PsfKind::EllipticalGaussian {
                sigma_x: 2.0,
                sigma_y: 1.6,
                theta: 0.3,
            },
            hr_dims: (168, 168),
            n_exposures: 4,
            d: 2,
            snr_db: 30.0,
            max_shift: 0.5,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        self.psf.validate()?;
        let (h, w) = self.hr_dims;
        if self.n_exposures == 0 || self.d == 0 {
            return Err(SpriteError::Input("need at least one exposure and d >= 1".into()));
        }
        if h == 0 || w == 0 || h % self.d != 0 || w % self.d != 0 {
            return Err(SpriteError::Input(format!("{h}x{w} grid is not a positive multiple of d = {}", self.d)));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(SpriteError::Input(format!("invalid SNR {}", self.snr_db)));
        }
        if !(self.max_shift >= 0.0 && self.max_shift <= 0.5) {
            return Err(SpriteError::Input(format!("shift range must lie in [0, 0.5], got {}", self.max_shift)));
        }
        Ok(())
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        (self.hr_dims.0 / self.d, self.hr_dims.1 / self.d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStack {
    pub stack: LRStack,
    pub shifts: Vec<(f64, f64)>,
    pub fluxes: Vec<f64>,
    /// Noise standard deviation actually added (0 when noise-free).
    pub noise_sigma: f64,
    pub signal_level: f64,
}

/// Warps, decimates and adds white Gaussian noise to `truth` for each exposure.
///
/// Exposure noise parameters are set to the true values; noise-free stacks
/// carry a nominal σ of 1e−6 × peak.
pub fn synthesize_stack(truth: &ImageGrid, spec: &SimSpec) -> Result<SimulatedStack> {
    spec.validate()?;
    if truth.dims() != spec.hr_dims {
        return Err(SpriteError::dims(spec.hr_dims.0 * spec.hr_dims.1, truth.len()));
    }
    let level = snr_signal_level(truth)?;
    let sigma = if spec.snr_db.is_finite() { noise_sigma(level, spec.snr_db) } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).map_err(|e| SpriteError::Input(e.to_string()))?;
    let nominal = if sigma > 0.0 { sigma } else { crate::estimation::NOISE_FLOOR_REL * truth.max().abs().max(1.0) };

    let mut shifts = Vec::with_capacity(spec.n_exposures);
    let mut exposures = Vec::with_capacity(spec.n_exposures);
    for k in 0..spec.n_exposures {
        let shift = if k == 0 || spec.max_shift == 0.0 {
            (0.0, 0.0)
        } else {
            (
                rng.gen_range(-spec.max_shift..spec.max_shift),
                rng.gen_range(-spec.max_shift..spec.max_shift),
            )
        };
        let mut img = predict_exposure(truth, shift, spec.d)?;
        if sigma > 0.0 {
            for v in img.pixels_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        shifts.push(shift);
        exposures.push(LRExposure::new(img, nominal, 1.0, shift)?);
    }
    Ok(SimulatedStack {
        stack: LRStack::new(exposures, spec.d)?,
        fluxes: vec![1.0; spec.n_exposures],
        shifts,
        noise_sigma: sigma,
        signal_level: level,
    })
}

/// Mixes a base seed with stream indices (splitmix64 finalizer).
pub fn derive_seed(base: u64, streams: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    };
    streams
        .iter()
        .fold(mix(base.wrapping_add(0x9e3779b97f4a7c15)), |acc, &s| mix(acc ^ s.wrapping_add(0x9e3779b97f4a7c15)))
}
