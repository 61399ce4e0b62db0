//! Separable dilated filtering with whole-sample mirror boundaries, and its
//! exact transpose.

/// Odd-length symmetric filter stored from `-radius` to `+radius`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Filter {
    taps: Vec<f64>,
}

impl Filter {
    pub fn symmetric(taps: Vec<f64>) -> Self {
        assert!(taps.len() % 2 == 1, "filter length must be odd");
        Filter { taps }
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    /// `(offset, weight)` pairs for dilation `step`.
    fn offsets(&self, step: usize) -> impl Iterator<Item = (isize, f64)> + '_ {
        let r = self.radius() as isize;
        self.taps
            .iter()
            .enumerate()
            .map(move |(k, &w)| ((k as isize - r) * step as isize, w))
    }
}

/// Whole-sample symmetric reflection of `k` into `[0, n)`.
#[inline]
pub(crate) fn reflect(k: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = k.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Axis {
    /// Along each row (varying column index).
    Rows,
    /// Along each column (varying row index).
    Cols,
}

/// Contributions to each output sample as `(input index, weight)` pairs.
fn line_map(n: usize, filter: &Filter, step: usize, transpose: bool) -> Vec<Vec<(usize, f64)>> {
    let mut map: Vec<Vec<(usize, f64)>> = (0..n).map(|_| Vec::with_capacity(filter.taps.len() + 2)).collect();
    for j in 0..n {
        for (off, wt) in filter.offsets(step) {
            let k = reflect(j as isize + off, n);
            if transpose {
                map[k].push((j, wt));
            } else {
                map[j].push((k, wt));
            }
        }
    }
    map
}

/// Applies `filter` dilated by `step` along `axis`; `transpose` selects the adjoint.
pub(crate) fn filter_axis(
    input: &[f64],
    dims: (usize, usize),
    filter: &Filter,
    step: usize,
    axis: Axis,
    transpose: bool,
) -> Vec<f64> {
    let (h, w) = dims;
    let mut out = Vec::with_capacity(h * w);
    match axis {
        Axis::Rows => {
            let pad = filter.radius() * step;
            let mut ext = vec![0.0; w + 2 * pad];
            for i in 0..h {
                let src = &input[i * w..(i + 1) * w];
                let start = out.len();
                if transpose {
                    row_transpose(src, &mut ext, pad, filter, step);
                    out.extend_from_slice(&ext[pad..pad + w]);
                    let dst = &mut out[start..];
                    for p in (0..pad).chain(pad + w..w + 2 * pad) {
                        dst[reflect(p as isize - pad as isize, w)] += ext[p];
                    }
                } else {
                    ext[pad..pad + w].copy_from_slice(src);
                    for p in (0..pad).chain(pad + w..w + 2 * pad) {
                        ext[p] = src[reflect(p as isize - pad as isize, w)];
                    }
                    let mut taps = filter.offsets(step);
                    let (o0, w0) = taps.next().expect("nonempty filter");
                    let b0 = (pad as isize + o0) as usize;
                    out.extend_from_slice(&ext[b0..b0 + w]);
                    let dst = &mut out[start..];
                    dst.iter_mut().for_each(|o| *o *= w0);
                    for (off, wt) in taps {
                        let b = (pad as isize + off) as usize;
                        for (o, v) in dst.iter_mut().zip(&ext[b..b + w]) {
                            *o += wt * v;
                        }
                    }
                }
            }
        }
        Axis::Cols => {
            for (k, entry) in line_map(h, filter, step, transpose).iter().enumerate() {
                let (r0, w0) = entry[0];
                out.extend_from_slice(&input[r0 * w..(r0 + 1) * w]);
                let dst = &mut out[k * w..(k + 1) * w];
                dst.iter_mut().for_each(|o| *o *= w0);
                for &(r, wt) in &entry[1..] {
                    for (o, v) in dst.iter_mut().zip(&input[r * w..(r + 1) * w]) {
                        *o += wt * v;
                    }
                }
            }
        }
    }
    out
}

/// Scatters `src` through the filter into the padded line `ext`.
fn row_transpose(src: &[f64], ext: &mut [f64], pad: usize, filter: &Filter, step: usize) {
    let n = src.len();
    ext.iter_mut().for_each(|e| *e = 0.0);
    for (off, wt) in filter.offsets(step) {
        let b = (pad as isize + off) as usize;
        for (e, v) in ext[b..b + n].iter_mut().zip(src) {
            *e += wt * v;
        }
    }
}

#[cfg(test)]
fn filter_line(src: &[f64], dst: &mut [f64], filter: &Filter, step: usize, transpose: bool) {
    let out = filter_axis(src, (1, src.len()), filter, step, Axis::Rows, transpose);
    dst.iter_mut().zip(out).for_each(|(d, o)| *d += o);
}

/// Separable 2-D filtering, rows then columns (or the transpose of that map).
pub(crate) fn filter_2d(
    input: &[f64],
    dims: (usize, usize),
    row_filter: &Filter,
    col_filter: &Filter,
    step: usize,
    transpose: bool,
) -> Vec<f64> {
    let tmp = filter_axis(input, dims, row_filter, step, Axis::Rows, transpose);
    filter_axis(&tmp, dims, col_filter, step, Axis::Cols, transpose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reflection() {
        let got: Vec<usize> = (-4..9).map(|k| reflect(k, 4)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect(-3, 1), 0);
    }

    fn naive_line(src: &[f64], filter: &Filter, step: usize) -> Vec<f64> {
        let n = src.len();
        (0..n)
            .map(|j| {
                filter
                    .offsets(step)
                    .map(|(off, w)| w * src[reflect(j as isize + off, n)])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fast_path_matches_naive_and_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Filter::symmetric(vec![0.1, -0.3, 0.7, -0.3, 0.1]);
        for n in [1usize, 2, 3, 7, 20] {
            for step in [1usize, 2, 4, 8] {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut fx = vec![0.0; n];
                filter_line(&x, &mut fx, &f, step, false);
                let naive = naive_line(&x, &f, step);
                for (a, b) in fx.iter().zip(&naive) {
                    assert!((a - b).abs() < 1e-14);
                }
                let mut fty = vec![0.0; n];
                filter_line(&y, &mut fty, &f, step, true);
                let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
                let rhs: f64 = x.iter().zip(&fty).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn column_pass_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = Filter::symmetric(vec![1.0, 4.0, 6.0, 4.0, 1.0]);
        let dims = (9, 6);
        let x: Vec<f64> = (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for axis in [Axis::Rows, Axis::Cols] {
            let fx = filter_axis(&x, dims, &f, 2, axis, false);
            let fty = filter_axis(&y, dims, &f, 2, axis, true);
            let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&fty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
