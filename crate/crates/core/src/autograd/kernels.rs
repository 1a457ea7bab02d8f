//! Raw numeric kernels behind the differentiable ops. Everything here works
//! on plain slices; shape checking happens in the graph layer.

use super::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

/// Output columns `ox` whose input column `ox * stride + k - pad` lies
/// inside `0..w`.
fn valid_cols(g: &ConvGeom, k: usize, ow: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(k).div_ceil(g.stride);
    let hi = if g.w + g.pad > k {
        ((g.w + g.pad - k - 1) / g.stride + 1).min(ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col<S: Element>(x: &[S], g: &ConvGeom, cols: &mut [S]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npix = oh * ow;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                let (lo, hi) = valid_cols(g, kx, ow);
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        drow.fill(S::zero());
                        continue;
                    }
                    drow[..lo].fill(S::zero());
                    drow[hi..].fill(S::zero());
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let first = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        drow[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (d, s) in drow[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<S: Element>(cols: &[S], g: &ConvGeom, dx: &mut [S]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npix = oh * ow;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * npix..(row + 1) * npix];
                let (lo, hi) = valid_cols(g, kx, ow);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * ow + lo..oy * ow + hi];
                    for (d, &s) in drow[first..].iter_mut().step_by(g.stride).zip(srow) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Cross-correlation of one `[cin, h, w]` image with `[cout, cin, kh, kw]`
/// weights, returning `[cout, oh, ow]`.
pub fn conv2d_forward<S: Element>(x: &[S], w: &[S], b: Option<&[S]>, g: &ConvGeom) -> Vec<S> {
    let npix = g.out_h() * g.out_w();
    let mut out = vec![S::zero(); g.cout * npix];
    if let Some(b) = b {
        for (co, chunk) in out.chunks_mut(npix).enumerate() {
            chunk.fill(b[co]);
        }
    }
    let beta = if b.is_some() { S::one() } else { S::zero() };
    if g.is_pointwise() {
        S::gemm(g.cout, g.cin, npix, w, false, x, false, beta, &mut out);
    } else {
        let mut cols = vec![S::zero(); g.patch() * npix];
        im2col(x, g, &mut cols);
        S::gemm(g.cout, g.patch(), npix, w, false, &cols, false, beta, &mut out);
    }
    out
}

/// Accumulates input/weight/bias gradients for one image.
pub fn conv2d_backward<S: Element>(
    x: &[S],
    w: &[S],
    gout: &[S],
    g: &ConvGeom,
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    let npix = g.out_h() * g.out_w();
    if let Some(db) = db {
        for (co, chunk) in gout.chunks(npix).enumerate() {
            db[co] = db[co] + chunk.iter().copied().sum();
        }
    }
    if g.is_pointwise() {
        if let Some(dw) = dw {
            S::gemm(g.cout, npix, g.cin, gout, false, x, true, S::one(), dw);
        }
        if let Some(dx) = dx {
            S::gemm(g.cin, g.cout, npix, w, true, gout, false, S::one(), dx);
        }
        return;
    }
    if let Some(dw) = dw {
        let mut cols = vec![S::zero(); g.patch() * npix];
        im2col(x, g, &mut cols);
        S::gemm(g.cout, npix, g.patch(), gout, false, &cols, true, S::one(), dw);
    }
    if let Some(dx) = dx {
        let mut dcols = vec![S::zero(); g.patch() * npix];
        S::gemm(g.patch(), g.cout, npix, w, true, gout, false, S::zero(), &mut dcols);
        col2im(&dcols, g, dx);
    }
}

/// Source index pair and blend weight for align-corners-false resampling.
pub fn bilinear_taps(out_idx: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((out_idx as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    let lambda = if i0 == i1 { 0.0 } else { src - i0 as f64 };
    (i0, i1, lambda)
}
