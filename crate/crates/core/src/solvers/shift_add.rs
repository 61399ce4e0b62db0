//! Shift-and-add stacking, the registered median image and the wavelet-denoised
//! first guess.

use crate::error::{Result, SpriteError};
use crate::image::{integer_shift, zero_pad_upsample, ImageGrid, LRStack};
use crate::stats::median;
use crate::wavelets::{self, DictionaryKind, ThresholdMode, Thresholds};

/// What to do with high-resolution pixels no exposure lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HoleFill {
    /// Average of already populated 3×3 neighbours, grown outward until filled.
    #[default]
    Interpolate,
    /// Leave them at zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftAddOutput {
    pub image: ImageGrid,
    /// Diagonal of `R`: summed `f_k²/σ_k²` of the exposures hitting each pixel.
    pub hit_weight: Vec<f64>,
    /// Row-major indices of pixels that no exposure populated.
    pub holes: Vec<usize>,
}

/// Integer high-resolution offset that registers exposure `k` onto exposure 0.
fn registration_offset(shift: (f64, f64), d: usize) -> (isize, isize) {
    let d = d as f64;
    (-(d * shift.0).round() as isize, -(d * shift.1).round() as isize)
}

/// Zero-pad-upsampled exposures moved onto the common frame, with their masks.
fn registered(stack: &LRStack, d: usize) -> Result<Vec<(ImageGrid, ImageGrid)>> {
    let ones = ImageGrid::from_fn(stack.lr_dims().0, stack.lr_dims().1, |_, _| 1.0);
    let up_mask = zero_pad_upsample(&ones, d)?;
    stack
        .exposures()
        .iter()
        .map(|e| {
            let (di, dj) = registration_offset(e.shift, d);
            let up = zero_pad_upsample(&e.image, d)?;
            Ok((integer_shift(&up, di, dj), integer_shift(&up_mask, di, dj)))
        })
        .collect()
}

fn fill_holes(pixels: &mut [f64], known: &mut [bool], dims: (usize, usize)) -> Result<()> {
    let (h, w) = dims;
    if !known.iter().any(|&k| k) {
        return Err(SpriteError::Input("no exposure contributes to any pixel".into()));
    }
    while known.iter().any(|&k| !k) {
        let mut updates = Vec::new();
        for i in 0..h {
            for j in 0..w {
                if known[i * w + j] {
                    continue;
                }
                let (mut s, mut c) = (0.0, 0usize);
                for ni in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                    for nj in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                        if known[ni * w + nj] {
                            s += pixels[ni * w + nj];
                            c += 1;
                        }
                    }
                }
                if c > 0 {
                    updates.push((i * w + j, s / c as f64));
                }
            }
        }
        for (k, v) in updates {
            pixels[k] = v;
            known[k] = true;
        }
    }
    Ok(())
}

/// Weighted shift-and-add onto the `d×` grid.
///
/// Each exposure is zero-pad-upsampled, moved by its rounded high-resolution
/// shift and accumulated with weight `f_k/σ_k²`; every pixel is then divided by
/// the matching diagonal entry of `R`.
pub fn shift_and_add_with(stack: &LRStack, d: usize, fill: HoleFill) -> Result<ShiftAddOutput> {
    if d == 0 {
        return Err(SpriteError::Input("upsampling factor must be >= 1".into()));
    }
    let (lh, lw) = stack.lr_dims();
    let dims = (lh * d, lw * d);
    let n = dims.0 * dims.1;
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for (e, (img, mask)) in stack.exposures().iter().zip(registered(stack, d)?) {
        let a = e.flux / (e.sigma * e.sigma);
        let b = e.flux * a;
        for k in 0..n {
            num[k] += a * img.pixels()[k];
            den[k] += b * mask.pixels()[k];
        }
    }
    let mut known: Vec<bool> = den.iter().map(|&r| r > 0.0).collect();
    let holes: Vec<usize> = (0..n).filter(|&k| !known[k]).collect();
    if holes.len() == n {
        return Err(SpriteError::Input("no exposure contributes to any pixel".into()));
    }
    let mut pixels: Vec<f64> = num.iter().zip(&den).map(|(a, r)| if *r > 0.0 { a / r } else { 0.0 }).collect();
    if fill == HoleFill::Interpolate && !holes.is_empty() {
        fill_holes(&mut pixels, &mut known, dims)?;
    }
    Ok(ShiftAddOutput {
        image: ImageGrid::from_vec(dims.0, dims.1, pixels)?,
        hit_weight: den,
        holes,
    })
}

/// [`shift_and_add_with`] with interpolated holes.
pub fn shift_and_add(stack: &LRStack, d: usize) -> Result<ImageGrid> {
    Ok(shift_and_add_with(stack, d, HoleFill::Interpolate)?.image)
}

/// Per-pixel median of the flux-normalized registered exposures that land on
/// each pixel; holes are interpolated.
pub fn registered_median(stack: &LRStack, d: usize) -> Result<ImageGrid> {
    let (lh, lw) = stack.lr_dims();
    let dims = (lh * d, lw * d);
    let n = dims.0 * dims.1;
    let reg = registered(stack, d)?;
    let mut pixels = vec![0.0; n];
    let mut known = vec![false; n];
    let mut samples = Vec::with_capacity(stack.len());
    for k in 0..n {
        samples.clear();
        for (e, (img, mask)) in stack.exposures().iter().zip(&reg) {
            if mask.pixels()[k] > 0.0 {
                samples.push(img.pixels()[k] / e.flux);
            }
        }
        if !samples.is_empty() {
            pixels[k] = median(&samples);
            known[k] = true;
        }
    }
    fill_holes(&mut pixels, &mut known, dims)?;
    ImageGrid::from_vec(dims.0, dims.1, pixels)
}

/// Wavelet-denoised shift-and-add image: detail bands are hard-thresholded at
/// `k_sigma` times their robust noise level, then the transform is inverted.
pub fn first_guess_from(sa: &ImageGrid, kind: DictionaryKind, levels: usize, k_sigma: f64) -> Result<ImageGrid> {
    let mut coeffs = wavelets::analyze(sa, kind, levels)?;
    let sigma = wavelets::correlated_scale_noise(&coeffs, 5.0);
    let thr: Vec<f64> = sigma.iter().map(|s| k_sigma * s).collect();
    coeffs.sigma_per_band = sigma;
    let kept = wavelets::threshold_coeffs(&coeffs, &Thresholds::PerBand(thr), ThresholdMode::Hard)?;
    Ok(wavelets::reconstruct(&kept))
}

/// `first_guess_from` applied to the shift-and-add image of `stack` at `5σ`.
pub fn first_guess(stack: &LRStack, d: usize, kind: DictionaryKind, levels: usize) -> Result<ImageGrid> {
    let sa = shift_and_add(stack, d).map_err(|e| e.at("shift-and-add"))?;
    first_guess_from(&sa, kind, levels, 5.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{decimate, LRExposure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn phase_stack(hr: &ImageGrid) -> LRStack {
        // phase (a, b) samples hr(2i + a, 2j + b), i.e. a shift of (−a/2, −b/2)
        let exps = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&(a, b)| {
                let moved = integer_shift(hr, -a, -b);
                let lr = decimate(&moved, 2).unwrap();
                LRExposure::new(lr, 1.0, 1.0, (-(a as f64) / 2.0, -(b as f64) / 2.0)).unwrap()
            })
            .collect();
        LRStack::new(exps, 2).unwrap()
    }

    #[test]
    fn identity_for_single_exposure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = ImageGrid::from_fn(9, 7, |_, _| rng.gen_range(-1.0..1.0));
        let stack = LRStack::new(vec![LRExposure::from_image(img.clone())], 1).unwrap();
        assert_eq!(shift_and_add(&stack, 1).unwrap(), img);
    }

    #[test]
    fn all_phases_recover_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hr = ImageGrid::from_fn(16, 20, |_, _| rng.gen_range(0.0..1.0));
        let out = shift_and_add_with(&phase_stack(&hr), 2, HoleFill::Interpolate).unwrap();
        for i in 0..16 {
            for j in 0..20 {
                assert!((out.image.get(i, j) - hr.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identical_exposures_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imgs: Vec<ImageGrid> = (0..3).map(|_| ImageGrid::from_fn(6, 6, |_, _| rng.gen_range(0.0..1.0))).collect();
        let stack = LRStack::new(imgs.iter().cloned().map(LRExposure::from_image).collect(), 2).unwrap();
        let out = shift_and_add_with(&stack, 2, HoleFill::Zero).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let k = i * 12 + j;
                if i % 2 == 0 && j % 2 == 0 {
                    let mean = imgs.iter().map(|m| m.get(i / 2, j / 2)).sum::<f64>() / 3.0;
                    assert_eq!(out.hit_weight[k], 3.0);
                    assert!((out.image.get(i, j) - mean).abs() < 1e-14);
                } else {
                    assert_eq!(out.hit_weight[k], 0.0);
                    assert_eq!(out.image.get(i, j), 0.0);
                }
            }
        }
        assert_eq!(out.holes.len(), 144 - 36);
        let filled = shift_and_add_with(&stack, 2, HoleFill::Interpolate).unwrap();
        assert_eq!(filled.holes.len(), 144 - 36);
        assert!(filled.image.pixels().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn weights_by_flux_and_noise() {
        // two zero-shift exposures of the same scene, second twice as bright
        let base = ImageGrid::from_fn(4, 4, |i, j| (i + j) as f64);
        let e0 = LRExposure::new(base.clone(), 1.0, 1.0, (0.0, 0.0)).unwrap();
        let e1 = LRExposure::new(base.scaled(2.0), 3.0, 2.0, (0.0, 0.0)).unwrap();
        let out = shift_and_add(&LRStack::new(vec![e0, e1], 1).unwrap(), 1).unwrap();
        for (a, b) in out.pixels().iter().zip(base.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn median_image() {
        let base = ImageGrid::from_fn(5, 5, |i, j| (i * 5 + j) as f64);
        let mut odd = base.clone();
        odd.set(2, 2, 1000.0);
        let stack = LRStack::new(
            vec![LRExposure::from_image(base.clone()), LRExposure::from_image(odd), LRExposure::from_image(base.clone())],
            1,
        )
        .unwrap();
        assert_eq!(registered_median(&stack, 1).unwrap(), base);
    }

    #[test]
    fn first_guess_noise_free_and_pure_noise() {
        // compact source: most detail coefficients are exactly zero, so every
        // robust noise level vanishes
        let hr = ImageGrid::from_fn(64, 64, |i, j| {
            let (di, dj) = (i as f64 - 31.5, j as f64 - 32.0);
            (16.0 - di * di - dj * dj).max(0.0)
        });
        let stack = phase_stack(&hr);
        let sa = shift_and_add(&stack, 2).unwrap();
        let fg = first_guess(&stack, 2, DictionaryKind::Starlet2, 2).unwrap();
        for (a, b) in fg.pixels().iter().zip(sa.pixels()) {
            assert!((a - b).abs() < 1e-8);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<LRExposure> = (0..4)
            .map(|_| LRExposure::from_image(ImageGrid::from_fn(32, 32, |_, _| rng.sample(StandardNormal))))
            .collect();
        let stack = LRStack::new(noise, 2).unwrap();
        let fg = first_guess(&stack, 2, DictionaryKind::Starlet2, 3).unwrap();
        let sa = shift_and_add(&stack, 2).unwrap();
        let peak = fg.pixels().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let sa_sigma = crate::stats::std_dev(sa.pixels());
        assert!(peak < 5.0 * sa_sigma, "{peak} vs {sa_sigma}");
        assert!(crate::stats::std_dev(fg.pixels()) < 0.5 * sa_sigma);
    }

    #[test]
    fn empty_grid_is_an_error() {
        // the rounded shift moves every sample off the grid
        let e = LRExposure::new(ImageGrid::from_fn(4, 4, |_, _| 1.0), 1.0, 1.0, (3.9, 3.9)).unwrap();
        let stack = LRStack::new(vec![e], 4).unwrap();
        assert!(shift_and_add(&stack, 4).is_err());
    }
}
