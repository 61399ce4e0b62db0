//! Data-fidelity parameters estimated from the exposures themselves: noise
//! level, sub-pixel shift and relative flux of each exposure.

use crate::error::{Result, SpriteError};
use crate::image::{ImageGrid, LRStack};
use crate::stats::mad_sigma;

/// Default aperture radius in low-resolution pixels.
pub const DEFAULT_APERTURE_RADIUS: f64 = 3.0;

/// Relative floor applied to noise estimates of (near) noise-free exposures.
pub const NOISE_FLOOR_REL: f64 = 1e-6;

const CENTROID_MAX_ITERS: usize = 50;
const CENTROID_TOL: f64 = 1e-4;
const FWHM_TO_SIGMA: f64 = 2.3548;
const IQR_TO_SIGMA: f64 = 1.349;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub sigma: f64,
    /// Set when the MAD vanishes (constant or near-constant image).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub sigmas: Vec<f64>,
    pub shifts: Vec<(f64, f64)>,
    pub fluxes: Vec<f64>,
    pub centroids: Vec<(f64, f64)>,
    pub aperture_radius: f64,
    /// Indices of exposures whose noise level hit the floor.
    pub degenerate_noise: Vec<usize>,
}

/// `1.4826 · MAD` of the pixels.
pub fn estimate_sigma_mad(image: &ImageGrid) -> Result<NoiseEstimate> {
    if image.len() < 2 {
        return Err(SpriteError::Input("noise estimation needs at least 2 pixels".into()));
    }
    let sigma = mad_sigma(image.pixels());
    Ok(NoiseEstimate {
        sigma,
        degenerate: sigma == 0.0,
    })
}

/// `min(4σ, (max|x|/σ − 1)σ)`; zero when `σ` is zero.
pub fn centroid_threshold(image: &ImageGrid, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let peak = image.pixels().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (4.0 * sigma).min((peak / sigma - 1.0) * sigma)
}

/// Position along one axis where the cumulative marginal reaches `q`.
fn marginal_quantile(marginal: &[f64], q: f64) -> f64 {
    let total: f64 = marginal.iter().sum();
    let target = q * total;
    let mut acc = 0.0;
    for (k, &m) in marginal.iter().enumerate() {
        if m > 0.0 && acc + m >= target {
            // linear interpolation inside pixel k, which spans [k − ½, k + ½]
            return k as f64 - 0.5 + (target - acc) / m;
        }
        acc += m;
    }
    marginal.len() as f64 - 0.5
}

/// Gaussian window width from the quartile spread of the thresholded blob.
fn window_sigma(kept: &ImageGrid) -> f64 {
    let (h, w) = kept.dims();
    let mut rows = vec![0.0; h];
    let mut cols = vec![0.0; w];
    for i in 0..h {
        for j in 0..w {
            let v = kept.get(i, j);
            rows[i] += v;
            cols[j] += v;
        }
    }
    let spread = |m: &[f64]| (marginal_quantile(m, 0.75) - marginal_quantile(m, 0.25)) / IQR_TO_SIGMA;
    let sigma = 0.5 * (spread(&rows) + spread(&cols));
    let fwhm = FWHM_TO_SIGMA * sigma;
    (fwhm / FWHM_TO_SIGMA).max(1.0)
}

fn first_moment(kept: &ImageGrid, weight: impl Fn(usize, usize) -> f64) -> Option<(f64, f64)> {
    let (h, w) = kept.dims();
    let (mut s, mut si, mut sj) = (0.0, 0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            let v = kept.get(i, j) * weight(i, j);
            s += v;
            si += v * i as f64;
            sj += v * j as f64;
        }
    }
    (s > 0.0).then(|| (si / s, sj / s))
}

/// Sub-pixel centroid in array-index coordinates.
///
/// Pixels below [`centroid_threshold`] are dropped, then first moments are
/// iterated under a Gaussian window recentred on the previous estimate.
pub fn estimate_centroid(image: &ImageGrid, sigma: f64) -> Result<(f64, f64)> {
    let k = centroid_threshold(image, sigma);
    let (h, w) = image.dims();
    let kept = ImageGrid::from_fn(h, w, |i, j| {
        let v = image.get(i, j);
        if v > 0.0 && v >= k {
            v
        } else {
            0.0
        }
    });
    let no_pixels = || SpriteError::Estimation {
        index: 0,
        reason: "no pixel above the centroiding threshold".into(),
    };
    let mut c = first_moment(&kept, |_, _| 1.0).ok_or_else(no_pixels)?;
    let sw = window_sigma(&kept);
    let inv = 1.0 / (2.0 * sw * sw);
    for _ in 0..CENTROID_MAX_ITERS {
        let (ci, cj) = c;
        let next = first_moment(&kept, |i, j| {
            let (di, dj) = (i as f64 - ci, j as f64 - cj);
            (-(di * di + dj * dj) * inv).exp()
        })
        .ok_or_else(no_pixels)?;
        let moved = ((next.0 - c.0).powi(2) + (next.1 - c.1).powi(2)).sqrt();
        c = next;
        if moved < CENTROID_TOL {
            break;
        }
    }
    Ok(c)
}

/// Sum of pixels whose centres lie within `radius` of `centroid`.
pub fn estimate_flux(image: &ImageGrid, centroid: (f64, f64), radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(SpriteError::Input(format!("aperture radius must be positive, got {radius}")));
    }
    let (h, w) = image.dims();
    let r2 = radius * radius;
    let lo = |c: f64| (c - radius).ceil().max(0.0) as usize;
    let hi = |c: f64, n: usize| ((c + radius).floor() as isize).min(n as isize - 1);
    let mut count = 0usize;
    let mut sum = 0.0;
    let (i_hi, j_hi) = (hi(centroid.0, h), hi(centroid.1, w));
    if i_hi >= 0 && j_hi >= 0 {
        for i in lo(centroid.0)..=i_hi as usize {
            for j in lo(centroid.1)..=j_hi as usize {
                let (di, dj) = (i as f64 - centroid.0, j as f64 - centroid.1);
                if di * di + dj * dj <= r2 {
                    count += 1;
                    sum += image.get(i, j);
                }
            }
        }
    }
    if count == 0 {
        return Err(SpriteError::Estimation {
            index: 0,
            reason: format!("aperture of radius {radius} at {centroid:?} contains no pixel"),
        });
    }
    Ok(sum)
}

fn tag(err: SpriteError, index: usize) -> SpriteError {
    match err {
        SpriteError::Estimation { reason, .. } => SpriteError::Estimation { index, reason },
        other => other,
    }
}

/// Noise of every exposure, floored at `1e−6 · peak` for noise-free input.
pub fn estimate_sigmas(stack: &LRStack) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut sigmas = Vec::with_capacity(stack.len());
    let mut degenerate = Vec::new();
    for (k, e) in stack.exposures().iter().enumerate() {
        let est = estimate_sigma_mad(&e.image)?;
        let peak = e.image.pixels().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let floor = NOISE_FLOOR_REL * peak;
        if est.degenerate || est.sigma < floor {
            degenerate.push(k);
        }
        let sigma = est.sigma.max(floor);
        if !(sigma > 0.0) {
            return Err(SpriteError::Estimation {
                index: k,
                reason: "exposure is identically zero".into(),
            });
        }
        sigmas.push(sigma);
    }
    Ok((sigmas, degenerate))
}

/// Centroid of each exposure relative to exposure 0.
pub fn estimate_shifts(stack: &LRStack) -> Result<Vec<(f64, f64)>> {
    let (sigmas, _) = estimate_sigmas(stack)?;
    let centroids = centroids_with(stack, &sigmas)?;
    Ok(relative(&centroids))
}

fn centroids_with(stack: &LRStack, sigmas: &[f64]) -> Result<Vec<(f64, f64)>> {
    stack
        .exposures()
        .iter()
        .zip(sigmas)
        .enumerate()
        .map(|(k, (e, &s))| estimate_centroid(&e.image, s).map_err(|err| tag(err, k)))
        .collect()
}

fn relative(centroids: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let c0 = centroids[0];
    centroids.iter().map(|c| (c.0 - c0.0, c.1 - c0.1)).collect()
}

/// Full estimation pass: noise, centroids, shifts and fluxes normalized to exposure 0.
pub fn estimate_all(stack: &LRStack, aperture_radius: f64) -> Result<EstimationReport> {
    let (sigmas, degenerate_noise) = estimate_sigmas(stack)?;
    let centroids = centroids_with(stack, &sigmas)?;
    let raw: Vec<f64> = stack
        .exposures()
        .iter()
        .zip(&centroids)
        .enumerate()
        .map(|(k, (e, &c))| estimate_flux(&e.image, c, aperture_radius).map_err(|err| tag(err, k)))
        .collect::<Result<_>>()?;
    for (k, &f) in raw.iter().enumerate() {
        if !(f > 0.0) {
            return Err(SpriteError::Estimation {
                index: k,
                reason: format!("aperture flux {f} is not positive"),
            });
        }
    }
    let fluxes = raw.iter().map(|f| f / raw[0]).collect();
    Ok(EstimationReport {
        shifts: relative(&centroids),
        sigmas,
        fluxes,
        centroids,
        aperture_radius,
        degenerate_noise,
    })
}

/// Writes the estimated parameters into the stack.
pub fn apply_report(stack: &mut LRStack, report: &EstimationReport) {
    for (k, e) in stack.exposures_mut().iter_mut().enumerate() {
        e.sigma = report.sigmas[k];
        e.flux = report.fluxes[k];
        e.shift = report.shifts[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::LRExposure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_blob(h: usize, w: usize, c: (f64, f64), s: f64, amp: f64) -> ImageGrid {
        ImageGrid::from_fn(h, w, |i, j| {
            let (di, dj) = (i as f64 - c.0, j as f64 - c.1);
            amp * (-(di * di + dj * dj) / (2.0 * s * s)).exp()
        })
    }

    fn add_noise(img: &ImageGrid, sigma: f64, rng: &mut ChaCha8Rng) -> ImageGrid {
        let n = Normal::new(0.0, sigma).unwrap();
        let (h, w) = img.dims();
        ImageGrid::from_fn(h, w, |i, j| img.get(i, j) + n.sample(rng))
    }

    #[test]
    fn mad_basics() {
        let c = ImageGrid::from_fn(5, 5, |_, _| 2.0);
        let est = estimate_sigma_mad(&c).unwrap();
        assert_eq!(est.sigma, 0.0);
        assert!(est.degenerate);
        assert!(estimate_sigma_mad(&ImageGrid::zeros(1, 1)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = add_noise(&ImageGrid::zeros(84, 84), 1.0, &mut rng);
        let s = estimate_sigma_mad(&noise).unwrap().sigma;
        assert!((0.95..=1.05).contains(&s), "{s}");

        let shifted = ImageGrid::from_fn(84, 84, |i, j| noise.get(i, j) + 7.0);
        let scaled = noise.scaled(3.0);
        assert!((estimate_sigma_mad(&shifted).unwrap().sigma - s).abs() < 1e-12);
        assert!((estimate_sigma_mad(&scaled).unwrap().sigma - 3.0 * s).abs() < 1e-12);
    }

    #[test]
    fn mad_ignores_a_bright_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut img = add_noise(&ImageGrid::zeros(84, 84), 2.0, &mut rng);
        img.set(40, 40, 1000.0);
        let s = estimate_sigma_mad(&img).unwrap().sigma;
        assert!((s - 2.0).abs() / 2.0 < 0.05, "{s}");
    }

    #[test]
    fn threshold_formula() {
        let mut img = ImageGrid::zeros(4, 4);
        img.set(1, 1, 10.0);
        assert_eq!(centroid_threshold(&img, 1.0), 4.0);
        img.set(1, 1, -3.0);
        assert_eq!(centroid_threshold(&img, 1.0), 2.0);
        img.set(1, 1, 20.0);
        assert_eq!(centroid_threshold(&img, 2.0), 8.0);
        assert_eq!(centroid_threshold(&img, 0.0), 0.0);
    }

    #[test]
    fn centroid_symmetric_and_shifted() {
        let blob = gaussian_blob(84, 84, (41.5, 41.5), 2.0, 100.0);
        let c = estimate_centroid(&blob, 0.1).unwrap();
        assert!((c.0 - 41.5).abs() < 1e-3 && (c.1 - 41.5).abs() < 1e-3, "{c:?}");
        let moved = gaussian_blob(84, 84, (41.8, 41.3), 2.0, 100.0);
        let m = estimate_centroid(&moved, 0.1).unwrap();
        assert!((m.0 - c.0 - 0.3).abs() < 0.02 && (m.1 - c.1 + 0.2).abs() < 0.02, "{m:?}");
        assert!(matches!(
            estimate_centroid(&ImageGrid::zeros(8, 8), 1.0),
            Err(SpriteError::Estimation { .. })
        ));
    }

    #[test]
    fn shifts_under_noise() {
        // 30 dB relative to the blob variance over the stamp
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = gaussian_blob(48, 48, (23.7, 24.1), 2.0, 1.0);
        let shifted = gaussian_blob(48, 48, (23.95, 24.6), 2.0, 1.0);
        let var = crate::stats::std_dev(base.pixels()).powi(2);
        let sigma = (var / 1e3).sqrt();
        let mut errs = Vec::new();
        for _ in 0..100 {
            let stack = LRStack::new(
                vec![
                    LRExposure::from_image(add_noise(&base, sigma, &mut rng)),
                    LRExposure::from_image(add_noise(&shifted, sigma, &mut rng)),
                ],
                1,
            )
            .unwrap();
            let s = estimate_shifts(&stack).unwrap();
            assert_eq!(s[0], (0.0, 0.0));
            errs.push(((s[1].0 - 0.25).powi(2) + (s[1].1 - 0.5).powi(2)).sqrt());
        }
        let med = crate::stats::median(&errs);
        assert!(med < 0.05, "median shift error {med}");
    }

    #[test]
    fn shifts_trivial_cases() {
        let blob = gaussian_blob(24, 24, (11.2, 12.4), 1.5, 5.0);
        let one = LRStack::new(vec![LRExposure::from_image(blob.clone())], 1).unwrap();
        assert_eq!(estimate_shifts(&one).unwrap(), vec![(0.0, 0.0)]);
        let same = LRStack::new(vec![LRExposure::from_image(blob.clone()); 3], 1).unwrap();
        assert!(estimate_shifts(&same).unwrap().iter().all(|s| *s == (0.0, 0.0)));

        // a common integer offset leaves relative shifts unchanged
        let a = gaussian_blob(32, 32, (12.0, 14.0), 1.5, 5.0);
        let b = gaussian_blob(32, 32, (12.3, 13.6), 1.5, 5.0);
        let s1 = estimate_shifts(&LRStack::new(vec![LRExposure::from_image(a.clone()), LRExposure::from_image(b.clone())], 1).unwrap()).unwrap();
        let a2 = crate::image::integer_shift(&a, 3, -2);
        let b2 = crate::image::integer_shift(&b, 3, -2);
        let s2 = estimate_shifts(&LRStack::new(vec![LRExposure::from_image(a2), LRExposure::from_image(b2)], 1).unwrap()).unwrap();
        assert!((s1[1].0 - s2[1].0).abs() < 1e-3 && (s1[1].1 - s2[1].1).abs() < 1e-3);
    }

    #[test]
    fn aperture_flux() {
        let mut delta = ImageGrid::zeros(11, 11);
        delta.set(5, 5, 5.0);
        assert_eq!(estimate_flux(&delta, (5.0, 5.0), 3.0).unwrap(), 5.0);

        let ones = ImageGrid::from_fn(11, 11, |_, _| 1.0);
        let mut count = 0;
        for i in -3i32..=3 {
            for j in -3i32..=3 {
                if i * i + j * j <= 9 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 29);
        assert_eq!(estimate_flux(&ones, (5.0, 5.0), 3.0).unwrap(), count as f64);
        assert!(estimate_flux(&ones, (50.0, 50.0), 3.0).is_err());
        assert!(estimate_flux(&ones, (5.0, 5.0), 0.0).is_err());
    }

    #[test]
    fn flux_ratio_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = gaussian_blob(32, 32, (15.3, 16.1), 1.5, 1.0);
        let var = crate::stats::std_dev(base.pixels()).powi(2);
        let sigma = (var / 1e3).sqrt();
        let a = add_noise(&base, sigma, &mut rng);
        let b = add_noise(&base.scaled(2.0), sigma, &mut rng);
        let stack = LRStack::new(vec![LRExposure::from_image(a.clone()), LRExposure::from_image(b.clone())], 1).unwrap();
        let rep = estimate_all(&stack, DEFAULT_APERTURE_RADIUS).unwrap();
        assert_eq!(rep.fluxes[0], 1.0);
        assert!((rep.fluxes[1] - 2.0).abs() / 2.0 < 0.05, "{}", rep.fluxes[1]);
        assert!(rep.sigmas.iter().all(|&s| s > 0.0));

        let scaled = LRStack::new(vec![LRExposure::from_image(a.scaled(7.0)), LRExposure::from_image(b.scaled(7.0))], 1).unwrap();
        let rep2 = estimate_all(&scaled, DEFAULT_APERTURE_RADIUS).unwrap();
        assert!((rep2.fluxes[1] - rep.fluxes[1]).abs() < 1e-9);
    }

    #[test]
    fn noise_free_floor_and_error_index() {
        let mut img = ImageGrid::zeros(16, 16);
        img.set(8, 8, 4.0);
        let stack = LRStack::new(vec![LRExposure::from_image(img.clone())], 1).unwrap();
        let (s, deg) = estimate_sigmas(&stack).unwrap();
        assert_eq!(deg, vec![0]);
        assert!((s[0] - 4e-6).abs() < 1e-18);

        let bad = LRStack::new(vec![LRExposure::from_image(img), LRExposure::from_image(ImageGrid::from_fn(16, 16, |_, _| -1.0))], 1).unwrap();
        match estimate_all(&bad, 3.0) {
            Err(SpriteError::Estimation { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
