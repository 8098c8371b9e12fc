//! Flat-slice kernels behind the graph operations.
//!
//! All three convolution kernels are phrased against one geometry: a
//! convolution from an `n x cin x ih x iw` input to an `n x cout x oh x ow`
//! output with a `cout x cin x k x k` filter. Transposed convolution reuses
//! them with the roles of input and output swapped.
//!
//! Every kernel writes whole output planes from a fixed summation order, so
//! results do not depend on the rayon thread count, and forward results for
//! one batch item do not depend on the rest of the batch.

use std::ops::Range;

use rayon::prelude::*;

use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub ih: usize,
    pub iw: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    fn in_plane(&self) -> usize {
        self.ih * self.iw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output indices `o` in `0..out_len` for which `o * stride + offset` lands
/// inside `0..in_len`.
pub(crate) fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> Range<usize> {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let last_in = in_len as isize - 1 - offset;
    let hi = if last_in < 0 { 0 } else { (last_in / s + 1).min(out_len as isize) };
    let lo = lo.min(out_len as isize) as usize;
    lo..(hi.max(lo as isize) as usize)
}

/// `y[n,co] = bias[co] + sum_{ci,kh,kw} w[co,ci,kh,kw] * x[n,ci, oy*s+kh-p, ox*s+kw-p]`
pub(crate) fn conv_forward<T: Element>(x: &[T], w: &[T], bias: Option<&[T]>, g: ConvGeom) -> Vec<T> {
    let k = g.k;
    let mut y = vec![T::zero(); g.n * g.cout * g.out_plane()];
    y.par_chunks_mut(g.out_plane()).enumerate().for_each(|(idx, plane)| {
        let (n, co) = (idx / g.cout, idx % g.cout);
        if let Some(b) = bias {
            plane.fill(b[co]);
        }
        for ci in 0..g.cin {
            let xp = &x[(n * g.cin + ci) * g.in_plane()..][..g.in_plane()];
            let wk = &w[(co * g.cin + ci) * k * k..][..k * k];
            for kh in 0..k {
                let rows = valid_range(g.oh, g.ih, g.stride, kh as isize - g.pad as isize);
                for kw in 0..k {
                    let wv = wk[kh * k + kw];
                    let off = kw as isize - g.pad as isize;
                    let cols = valid_range(g.ow, g.iw, g.stride, off);
                    if cols.is_empty() {
                        continue;
                    }
                    let x0 = ((cols.start * g.stride) as isize + off) as usize;
                    for oy in rows.clone() {
                        let iy = (oy * g.stride + kh) - g.pad;
                        let xr = xp[iy * g.iw..][x0..g.iw].iter().step_by(g.stride);
                        let yr = &mut plane[oy * g.ow..][cols.clone()];
                        for (yv, &xv) in yr.iter_mut().zip(xr) {
                            *yv = *yv + wv * xv;
                        }
                    }
                }
            }
        }
    });
    y
}

/// Adjoint of [`conv_forward`] with respect to its input: scatters `gy`
/// back onto an `n x cin x ih x iw` plane. This is also the forward pass of
/// a transposed convolution.
pub(crate) fn conv_backward_data<T: Element>(gy: &[T], w: &[T], g: ConvGeom) -> Vec<T> {
    let k = g.k;
    let mut gx = vec![T::zero(); g.n * g.cin * g.in_plane()];
    gx.par_chunks_mut(g.in_plane()).enumerate().for_each(|(idx, plane)| {
        let (n, ci) = (idx / g.cin, idx % g.cin);
        for co in 0..g.cout {
            let gp = &gy[(n * g.cout + co) * g.out_plane()..][..g.out_plane()];
            let wk = &w[(co * g.cin + ci) * k * k..][..k * k];
            for kh in 0..k {
                let rows = valid_range(g.oh, g.ih, g.stride, kh as isize - g.pad as isize);
                for kw in 0..k {
                    let wv = wk[kh * k + kw];
                    let off = kw as isize - g.pad as isize;
                    let cols = valid_range(g.ow, g.iw, g.stride, off);
                    if cols.is_empty() {
                        continue;
                    }
                    let x0 = ((cols.start * g.stride) as isize + off) as usize;
                    for oy in rows.clone() {
                        let iy = (oy * g.stride + kh) - g.pad;
                        let gr = &gp[oy * g.ow..][cols.clone()];
                        let xr = plane[iy * g.iw..][x0..g.iw].iter_mut().step_by(g.stride);
                        for (xv, &gv) in xr.zip(gr) {
                            *xv = *xv + wv * gv;
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Gradient of [`conv_forward`] with respect to its filter.
pub(crate) fn conv_backward_filter<T: Element>(x: &[T], gy: &[T], g: ConvGeom) -> Vec<T> {
    let k = g.k;
    let mut gw = vec![T::zero(); g.cout * g.cin * k * k];
    gw.par_chunks_mut(g.cin * k * k).enumerate().for_each(|(co, filt)| {
        for ci in 0..g.cin {
            for kh in 0..k {
                let rows = valid_range(g.oh, g.ih, g.stride, kh as isize - g.pad as isize);
                for kw in 0..k {
                    let off = kw as isize - g.pad as isize;
                    let cols = valid_range(g.ow, g.iw, g.stride, off);
                    let mut acc = T::zero();
                    if cols.is_empty() {
                        filt[(ci * k + kh) * k + kw] = acc;
                        continue;
                    }
                    let x0 = ((cols.start * g.stride) as isize + off) as usize;
                    for n in 0..g.n {
                        let xp = &x[(n * g.cin + ci) * g.in_plane()..][..g.in_plane()];
                        let gp = &gy[(n * g.cout + co) * g.out_plane()..][..g.out_plane()];
                        for oy in rows.clone() {
                            let iy = (oy * g.stride + kh) - g.pad;
                            let xr = xp[iy * g.iw..][x0..g.iw].iter().step_by(g.stride);
                            let gr = &gp[oy * g.ow..][cols.clone()];
                            for (&gv, &xv) in gr.iter().zip(xr) {
                                acc = acc + gv * xv;
                            }
                        }
                    }
                    filt[(ci * k + kh) * k + kw] = acc;
                }
            }
        }
    });
    gw
}

/// Per-channel sum of `gy` over batch and space: the bias gradient.
pub(crate) fn channel_sums<T: Element>(gy: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let p = &gy[(b * c + ch) * plane..][..plane];
            *o = *o + p.iter().copied().sum::<T>();
        }
    }
    out
}

/// Mean of squared differences, accumulated left to right.
pub(crate) fn mean_squared_error<T: Element>(a: &[T], b: &[T]) -> T {
    let sum = a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    });
    sum / T::from_usize(a.len()).expect("length fits float")
}

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for out_len in 1..6 {
            for in_len in 1..9 {
                for stride in 1..4 {
                    for offset in -4..5isize {
                        let expect: Vec<usize> = (0..out_len)
                            .filter(|&o| {
                                let i = (o * stride) as isize + offset;
                                i >= 0 && i < in_len as isize
                            })
                            .collect();
                        let got: Vec<usize> = valid_range(out_len, in_len, stride, offset).collect();
                        assert_eq!(got, expect, "out {out_len} in {in_len} s {stride} off {offset}");
                    }
                }
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!(sigmoid(-800.0f64).is_finite());
    }
}
