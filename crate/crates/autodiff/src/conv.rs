//! 2D cross-correlation with "same-ceil" zero padding.
//!
//! Output extents are `ceil(in / stride)` on both spatial axes. The total
//! padding per axis is `max((out - 1) * stride + kernel - in, 0)`; the odd
//! unit, if any, goes to the bottom/right.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::linalg::{matmul, Trans};
use crate::real::Real;

/// Below this many multiply-adds per batch element the batch loop stays serial.
const PAR_THRESHOLD: usize = 1 << 15;

pub fn same_ceil_extent(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

/// `(before, after)` zero padding along one axis.
pub fn same_ceil_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = same_ceil_extent(input, stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (total / 2, total - total / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub c_out: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Conv2dGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: (usize, usize)) -> Result<Self> {
        let (&[batch, c_in, in_h, in_w], &[c_out, w_in, k_h, k_w]) = (input, weight) else {
            return shape_err(format!(
                "conv2d expects 4-d input and weight, got {input:?} and {weight:?}"
            ));
        };
        if w_in != c_in {
            return shape_err(format!(
                "conv2d weight expects {w_in} input channels, input has {c_in}"
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return shape_err("conv2d stride must be positive");
        }
        Ok(Self {
            batch,
            c_in,
            in_h,
            in_w,
            c_out,
            k_h,
            k_w,
            stride_h: stride.0,
            stride_w: stride.1,
            out_h: same_ceil_extent(in_h, stride.0),
            out_w: same_ceil_extent(in_w, stride.1),
            pad_top: same_ceil_padding(in_h, k_h, stride.0).0,
            pad_left: same_ceil_padding(in_w, k_w, stride.1).0,
        })
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.k_h * self.k_w
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.c_out, self.out_h, self.out_w]
    }

    fn in_len(&self) -> usize {
        self.c_in * self.in_h * self.in_w
    }

    fn out_len(&self) -> usize {
        self.c_out * self.out_positions()
    }

    fn parallel(&self) -> bool {
        self.batch > 1 && self.c_out * self.patch_len() * self.out_positions() >= PAR_THRESHOLD
    }

    /// Maps an output coordinate plus kernel offset to an input coordinate.
    #[inline]
    fn src(o: usize, stride: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < extent)
    }
}

fn im2col<T: Real>(g: &Conv2dGeometry, x: &[T], cols: &mut [T]) {
    let p = g.out_positions();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for i in 0..g.k_h {
            for j in 0..g.k_w {
                let row = &mut cols[((ci * g.k_h + i) * g.k_w + j) * p..][..p];
                for oy in 0..g.out_h {
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    match Conv2dGeometry::src(oy, g.stride_h, i, g.pad_top, g.in_h) {
                        None => dst.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = Conv2dGeometry::src(ox, g.stride_w, j, g.pad_left, g.in_w)
                                    .map_or(T::zero(), |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &Conv2dGeometry, cols: &[T], dx: &mut [T]) {
    let p = g.out_positions();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for i in 0..g.k_h {
            for j in 0..g.k_w {
                let row = &cols[((ci * g.k_h + i) * g.k_w + j) * p..][..p];
                for oy in 0..g.out_h {
                    let Some(iy) = Conv2dGeometry::src(oy, g.stride_h, i, g.pad_top, g.in_h)
                    else {
                        continue;
                    };
                    let src = &row[oy * g.out_w..(oy + 1) * g.out_w];
                    let dst = &mut plane[iy * g.in_w..(iy + 1) * g.in_w];
                    for (ox, &v) in src.iter().enumerate() {
                        if let Some(ix) = Conv2dGeometry::src(ox, g.stride_w, j, g.pad_left, g.in_w)
                        {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(
    g: &Conv2dGeometry,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (k, p) = (g.patch_len(), g.out_positions());
    let mut out = vec![T::zero(); g.batch * g.out_len()];
    let one = |(b, out_b): (usize, &mut [T])| {
        let mut cols = vec![T::zero(); k * p];
        im2col(g, &x[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
        matmul(g.c_out, k, p, w, Trans::No, &cols, Trans::No, T::zero(), out_b);
        if let Some(bias) = bias {
            for (row, &bv) in out_b.chunks_mut(p).zip(bias) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    };
    if g.parallel() {
        out.par_chunks_mut(g.out_len()).enumerate().for_each(one);
    } else {
        out.chunks_mut(g.out_len()).enumerate().for_each(one);
    }
    out
}

pub struct Conv2dGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of a conv2d given the upstream gradient `dout`.
///
/// Per-sample weight gradients are reduced in batch order, so the result
/// does not depend on how many threads ran the batch loop.
pub fn conv2d_backward<T: Real>(
    g: &Conv2dGeometry,
    x: &[T],
    w: &[T],
    dout: &[T],
    need_input: bool,
) -> Conv2dGrads<T> {
    let (k, p) = (g.patch_len(), g.out_positions());
    let mut dx = if need_input {
        vec![T::zero(); g.batch * g.in_len()]
    } else {
        Vec::new()
    };
    let per_sample = |b: usize, dx_b: Option<&mut [T]>| -> Vec<T> {
        let dout_b = &dout[b * g.out_len()..(b + 1) * g.out_len()];
        let mut cols = vec![T::zero(); k * p];
        im2col(g, &x[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
        let mut dw_b = vec![T::zero(); g.c_out * k];
        matmul(g.c_out, p, k, dout_b, Trans::No, &cols, Trans::Yes, T::zero(), &mut dw_b);
        if let Some(dx_b) = dx_b {
            matmul(k, g.c_out, p, w, Trans::Yes, dout_b, Trans::No, T::zero(), &mut cols);
            col2im(g, &cols, dx_b);
        }
        dw_b
    };
    let partial: Vec<Vec<T>> = match (need_input, g.parallel()) {
        (true, true) => dx
            .par_chunks_mut(g.in_len())
            .enumerate()
            .map(|(b, dx_b)| per_sample(b, Some(dx_b)))
            .collect(),
        (true, false) => dx
            .chunks_mut(g.in_len())
            .enumerate()
            .map(|(b, dx_b)| per_sample(b, Some(dx_b)))
            .collect(),
        (false, true) => (0..g.batch)
            .into_par_iter()
            .map(|b| per_sample(b, None))
            .collect(),
        (false, false) => (0..g.batch).map(|b| per_sample(b, None)).collect(),
    };
    let mut dw = vec![T::zero(); g.c_out * k];
    for dw_b in &partial {
        for (a, &v) in dw.iter_mut().zip(dw_b) {
            *a += v;
        }
    }
    let mut db = vec![T::zero(); g.c_out];
    for dout_b in dout.chunks(g.out_len()) {
        for (acc, row) in db.iter_mut().zip(dout_b.chunks(p)) {
            for &v in row {
                *acc += v;
            }
        }
    }
    Conv2dGrads {
        input: need_input.then_some(dx),
        weight: dw,
        bias: db,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct quadruple loop over output positions and kernel taps.
    fn naive(g: &Conv2dGeometry, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.c_out * g.out_h * g.out_w];
        for b in 0..g.batch {
            for co in 0..g.c_out {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = bias[co];
                        for ci in 0..g.c_in {
                            for i in 0..g.k_h {
                                for j in 0..g.k_w {
                                    let iy = (oy * g.stride_h + i) as isize - g.pad_top as isize;
                                    let ix = (ox * g.stride_w + j) as isize - g.pad_left as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= g.in_h as isize
                                        || ix >= g.in_w as isize
                                    {
                                        continue;
                                    }
                                    let xi = ((b * g.c_in + ci) * g.in_h + iy as usize) * g.in_w
                                        + ix as usize;
                                    let wi = ((co * g.c_in + ci) * g.k_h + i) * g.k_w + j;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                        out[((b * g.c_out + co) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 12.9898).sin() * 0.7).collect()
    }

    #[test]
    fn full_size_strides_give_ceil_extents() {
        let g = Conv2dGeometry::new(&[1, 1, 35, 201], &[8, 1, 8, 4], (3, 2)).unwrap();
        assert_eq!((g.out_h, g.out_w), (12, 101));
        assert_eq!(same_ceil_padding(35, 8, 3), (3, 3));
        assert_eq!(same_ceil_padding(201, 4, 2), (1, 2));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        assert!(Conv2dGeometry::new(&[1, 2, 5, 5], &[3, 1, 3, 3], (1, 1)).is_err());
    }

    #[test]
    fn forward_matches_quadruple_loop() {
        for &(h, w, kh, kw, sh, sw) in &[
            (5, 5, 3, 3, 1, 1),
            (5, 4, 2, 3, 2, 1),
            (4, 5, 4, 4, 3, 2),
            (3, 3, 1, 1, 2, 2),
            (5, 5, 5, 2, 1, 3),
        ] {
            let g = Conv2dGeometry::new(&[2, 3, h, w], &[4, 3, kh, kw], (sh, sw)).unwrap();
            let x = pseudo(2 * 3 * h * w, 1.0);
            let wt = pseudo(4 * 3 * kh * kw, 2.0);
            let bias = pseudo(4, 3.0);
            let got = conv2d_forward(&g, &x, &wt, Some(&bias));
            let want = naive(&g, &x, &wt, &bias);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_kernel_copies_input() {
        let g = Conv2dGeometry::new(&[1, 2, 3, 4], &[2, 2, 1, 1], (1, 1)).unwrap();
        let x = pseudo(24, 0.5);
        let w = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(conv2d_forward(&g, &x, &w, None), x);
    }

    proptest! {
        #[test]
        fn output_extent_is_ceil(h in 1usize..40, w in 1usize..40, kh in 1usize..6, kw in 1usize..6,
                                 sh in 1usize..4, sw in 1usize..4) {
            let g = Conv2dGeometry::new(&[1, 1, h, w], &[1, 1, kh, kw], (sh, sw)).unwrap();
            prop_assert_eq!(g.out_h, h.div_ceil(sh));
            prop_assert_eq!(g.out_w, w.div_ceil(sw));
            let x = vec![1.0f64; h * w];
            let out = conv2d_forward(&g, &x, &vec![1.0; kh * kw], None);
            prop_assert_eq!(out.len(), g.out_h * g.out_w);
        }

        #[test]
        fn linear_in_input(seed in 0.0f64..10.0) {
            let g = Conv2dGeometry::new(&[1, 2, 5, 4], &[3, 2, 3, 2], (2, 1)).unwrap();
            let a = pseudo(40, seed);
            let b = pseudo(40, seed + 7.0);
            let wt = pseudo(36, seed + 1.0);
            let bias = pseudo(3, seed + 2.0);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let fa = conv2d_forward(&g, &a, &wt, Some(&bias));
            let fb = conv2d_forward(&g, &b, &wt, Some(&bias));
            let fs = conv2d_forward(&g, &sum, &wt, Some(&bias));
            for (i, v) in fs.iter().enumerate() {
                let want = fa[i] + fb[i] - bias[i / g.out_positions()];
                prop_assert!((v - want).abs() < 1e-5);
            }
        }
    }
}
