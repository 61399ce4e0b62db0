//! Image quality measures: weighted second moments and ellipticity, FWHM from
//! a modified-Lorentzian fit, Pearson correlation and error maps.
//!
//! Coordinates follow array indices; the first moment axis is the row index.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpriteError};
use crate::image::ImageGrid;
use crate::stats::{mean, std_dev};

/// Default Gaussian weight width in high-resolution pixels.
pub const DEFAULT_WEIGHT_SIGMA: f64 = 7.5;

const CENTROID_PASSES: usize = 20;
const LM_MAX_ITERS: usize = 200;
const CORE_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mu20: f64,
    pub mu02: f64,
    pub mu11: f64,
    pub centroid: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMeasurement {
    pub e1: f64,
    pub e2: f64,
    pub centroid: (f64, f64),
    pub fwhm: f64,
    pub moments: (f64, f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticityErrors {
    pub e1: f64,
    pub e2: f64,
    pub std1: f64,
    pub std2: f64,
}

fn gaussian_weight(c: (f64, f64), sigma: Option<f64>) -> impl Fn(usize, usize) -> f64 {
    let inv = sigma.map(|s| 1.0 / (2.0 * s * s));
    move |i, j| match inv {
        Some(inv) => {
            let (di, dj) = (i as f64 - c.0, j as f64 - c.1);
            (-(di * di + dj * dj) * inv).exp()
        }
        None => 1.0,
    }
}

fn weighted_centroid(image: &ImageGrid, w: impl Fn(usize, usize) -> f64) -> Result<((f64, f64), f64)> {
    let (h, wd) = image.dims();
    let (mut s, mut si, mut sj) = (0.0, 0.0, 0.0);
    for i in 0..h {
        for j in 0..wd {
            let v = image.get(i, j) * w(i, j);
            s += v;
            si += v * i as f64;
            sj += v * j as f64;
        }
    }
    if !(s > 0.0) {
        return Err(SpriteError::Input(format!("weighted flux {s} is not positive")));
    }
    Ok(((si / s, sj / s), s))
}

/// Central second moments under a Gaussian window of width `weight_sigma`
/// recentred on the weighted centroid; `None` gives uniform weights.
/// Moments are normalized by the weighted flux.
pub fn weighted_moments(image: &ImageGrid, weight_sigma: Option<f64>) -> Result<Moments> {
    if let Some(s) = weight_sigma {
        if !(s > 0.0) {
            return Err(SpriteError::Input(format!("weight width must be positive, got {s}")));
        }
    }
    let (mut c, _) = weighted_centroid(image, |_, _| 1.0)?;
    if weight_sigma.is_some() {
        for _ in 0..CENTROID_PASSES {
            let (next, _) = weighted_centroid(image, gaussian_weight(c, weight_sigma))?;
            let moved = (next.0 - c.0).hypot(next.1 - c.1);
            c = next;
            if moved < 1e-10 {
                break;
            }
        }
    }
    let w = gaussian_weight(c, weight_sigma);
    let (h, wd) = image.dims();
    let (mut s, mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..h {
        for j in 0..wd {
            let v = image.get(i, j) * w(i, j);
            let (di, dj) = (i as f64 - c.0, j as f64 - c.1);
            s += v;
            m20 += v * di * di;
            m02 += v * dj * dj;
            m11 += v * di * dj;
        }
    }
    if !(s > 0.0) {
        return Err(SpriteError::Input(format!("weighted flux {s} is not positive")));
    }
    Ok(Moments {
        mu20: m20 / s,
        mu02: m02 / s,
        mu11: m11 / s,
        centroid: c,
    })
}

/// `e1 = (μ20 − μ02)/(μ20 + μ02)`, `e2 = 2μ11/(μ20 + μ02)`.
pub fn ellipticity(m: &Moments) -> Result<(f64, f64)> {
    let t = m.mu20 + m.mu02;
    if t == 0.0 || !t.is_finite() {
        return Err(SpriteError::Input("second moments sum to zero".into()));
    }
    Ok(((m.mu20 - m.mu02) / t, 2.0 * m.mu11 / t))
}

/// Parameters `[A, i_c, j_c, ln a, ln b, ln β]` of `A / (1 + s^{β/2})`,
/// `s = ((i − i_c)/a)² + ((j − j_c)/b)²`.
fn lorentzian(p: &[f64], i: f64, j: f64) -> f64 {
    let (a, b, beta) = (p[3].exp(), p[4].exp(), p[5].exp());
    let s = ((i - p[1]) / a).powi(2) + ((j - p[2]) / b).powi(2);
    let g = if s > 0.0 { (0.5 * beta * s.ln()).exp() } else { 0.0 };
    p[0] / (1.0 + g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub center: (f64, f64),
    pub widths: (f64, f64),
    pub index: f64,
    pub iterations: usize,
    /// `2√(ab)`: the geometric-mean full width at half the fitted peak.
    pub fwhm: f64,
}

/// Levenberg-Marquardt fit of an axis-aligned modified Lorentzian over the
/// core of the profile (pixels at or above a quarter of the peak).
pub fn fit_lorentzian(image: &ImageGrid) -> Result<LorentzianFit> {
    let (h, w) = image.dims();
    let peak = image.max();
    if !(peak > 0.0) {
        return Err(SpriteError::Fit("image has no positive peak".into()));
    }
    let m = weighted_moments(image, Some(DEFAULT_WEIGHT_SIGMA))
        .map_err(|e| SpriteError::Fit(format!("initialization failed: {e}")))?;
    let above_half = image.pixels().iter().filter(|&&v| v >= 0.5 * peak).count() as f64;
    let r0 = (above_half / std::f64::consts::PI).sqrt().max(0.5);
    let ratio = if m.mu20 > 0.0 && m.mu02 > 0.0 { (m.mu20 / m.mu02).sqrt().sqrt() } else { 1.0 };
    let mut p = vec![peak, m.centroid.0, m.centroid.1, (r0 * ratio).ln(), (r0 / ratio).ln(), 2.0_f64.ln()];
    let coords: Vec<(f64, f64, f64)> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .map(|(i, j)| (i as f64, j as f64, image.get(i, j)))
        .filter(|&(_, _, v)| v >= CORE_FRACTION * peak)
        .collect();
    if coords.len() < p.len() {
        return Err(SpriteError::Fit(format!("only {} pixels in the fitted core", coords.len())));
    }
    let residuals = |p: &[f64]| -> DVector<f64> {
        DVector::from_iterator(coords.len(), coords.iter().map(|&(i, j, v)| lorentzian(p, i, j) - v))
    };
    let cost = |r: &DVector<f64>| 0.5 * r.norm_squared();

    let mut r = residuals(&p);
    let mut c = cost(&r);
    let mut damping = 1e-3;
    let np = p.len();
    for it in 1..=LM_MAX_ITERS {
        let mut jac = DMatrix::zeros(coords.len(), np);
        for k in 0..np {
            let step = 1e-6 * p[k].abs().max(1.0);
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[k] += step;
            lo[k] -= step;
            let col = (residuals(&hi) - residuals(&lo)) / (2.0 * step);
            jac.set_column(k, &col);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += damping * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
            let rt = residuals(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let small_step = delta.iter().zip(&p).all(|(d, x)| d.abs() <= 1e-10 * x.abs().max(1.0));
                let small_gain = c - ct <= 1e-14 * c.max(f64::MIN_POSITIVE);
                p = trial;
                r = rt;
                c = ct;
                damping = (damping / 10.0).max(1e-12);
                accepted = true;
                if small_step || small_gain {
                    return finish(&p, it);
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: a stationary point
            return finish(&p, it);
        }
    }
    Err(SpriteError::Fit(format!(
        "no convergence after {LM_MAX_ITERS} iterations (cost {c:.3e}, params {p:?})"
    )))
}

fn finish(p: &[f64], iterations: usize) -> Result<LorentzianFit> {
    let (a, b) = (p[3].exp(), p[4].exp());
    let fit = LorentzianFit {
        amplitude: p[0],
        center: (p[1], p[2]),
        widths: (a, b),
        index: p[5].exp(),
        iterations,
        fwhm: 2.0 * (a * b).sqrt(),
    };
    if !(fit.fwhm.is_finite() && fit.fwhm > 0.0 && fit.amplitude > 0.0) {
        return Err(SpriteError::Fit(format!("degenerate fit {fit:?}")));
    }
    Ok(fit)
}

/// Full width at half maximum in pixels.
pub fn fwhm_lorentzian(image: &ImageGrid) -> Result<f64> {
    Ok(fit_lorentzian(image)?.fwhm)
}

pub fn measure_shape(image: &ImageGrid, weight_sigma: Option<f64>) -> Result<ShapeMeasurement> {
    let m = weighted_moments(image, weight_sigma)?;
    let (e1, e2) = ellipticity(&m)?;
    Ok(ShapeMeasurement {
        e1,
        e2,
        centroid: m.centroid,
        fwhm: fwhm_lorentzian(image)?,
        moments: (m.mu20, m.mu02, m.mu11),
    })
}

/// Mean absolute ellipticity errors and their population standard deviations.
pub fn mean_abs_ellipticity_error(truths: &[(f64, f64)], recons: &[(f64, f64)]) -> Result<EllipticityErrors> {
    if truths.len() != recons.len() {
        return Err(SpriteError::dims(truths.len(), recons.len()));
    }
    if truths.is_empty() {
        return Err(SpriteError::Input("no ellipticities to compare".into()));
    }
    let d1: Vec<f64> = truths.iter().zip(recons).map(|(t, r)| (t.0 - r.0).abs()).collect();
    let d2: Vec<f64> = truths.iter().zip(recons).map(|(t, r)| (t.1 - r.1).abs()).collect();
    Ok(EllipticityErrors {
        e1: mean(&d1),
        e2: mean(&d2),
        std1: std_dev(&d1),
        std2: std_dev(&d2),
    })
}

pub fn pearson_correlation(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.same_dims(b)?;
    let (ma, mb) = (mean(a.pixels()), mean(b.pixels()));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.pixels().iter().zip(b.pixels()) {
        let (u, v) = (x - ma, y - mb);
        sab += u * v;
        saa += u * u;
        sbb += v * v;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(SpriteError::Input("correlation of a constant image".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `|truth − recon|` and its standard deviation.
pub fn error_map_stats(truth: &ImageGrid, recon: &ImageGrid) -> Result<(ImageGrid, f64)> {
    truth.same_dims(recon)?;
    let (h, w) = truth.dims();
    let map = ImageGrid::from_fn(h, w, |i, j| (truth.get(i, j) - recon.get(i, j)).abs());
    let s = std_dev(map.pixels());
    Ok((map, s))
}
