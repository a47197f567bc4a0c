//! Raw numeric kernels behind the graph ops.

use alloc::vec;
use alloc::vec::Vec;

/// `c = a · b + beta · c` for logical shapes `a: [m, k]`, `b: [k, n]`,
/// `c: [m, n]`. `a_t` / `b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, beta: f32, c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds of all three operands were checked above and the
    // strides describe dense row-major (or transposed) storage within them.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        ((self.h + 2 * self.pad - self.k) / self.stride + 1, (self.w + 2 * self.pad - self.k) / self.stride + 1)
    }

    /// A 1×1, stride-1, unpadded convolution reads its input as the column
    /// matrix directly.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) fn im2col(x: &[f32], g: ConvGeom) -> Vec<f32> {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    let mut cols = vec![0.0f32; g.ci * g.k * g.k * n];
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * n;
                let dst = &mut cols[row..row + n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        // contiguous run of valid columns
                        let lo = g.pad.saturating_sub(kx);
                        let hi = (g.w + g.pad - kx).min(wo);
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_add(cols: &[f32], g: ConvGeom, dx: &mut [f32]) {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * n;
                let src = &cols[row..row + n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        let lo = g.pad.saturating_sub(kx);
                        let hi = (g.w + g.pad - kx).min(wo);
                        if lo < hi {
                            let d0 = lo + kx - g.pad;
                            for (d, v) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&s[lo..hi]) {
                                *d += *v;
                            }
                        }
                        continue;
                    }
                    for (ox, v) in s.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// Source taps of one output coordinate under half-pixel-centre bilinear
/// resampling.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w1: f32,
}

pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f32 / dst as f32;
    (0..dst)
        .map(|o| {
            let s = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            Tap { i0, i1, w1: s - i0 as f32 }
        })
        .collect()
}

pub(crate) fn resize_bilinear(x: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
            let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
            for (ox, b) in tx.iter().enumerate() {
                let top = r0[b.i0] * (1.0 - b.w1) + r0[b.i1] * b.w1;
                let bot = r1[b.i0] * (1.0 - b.w1) + r1[b.i1] * b.w1;
                dst[oy * ow + ox] = top * (1.0 - a.w1) + bot * a.w1;
            }
        }
    }
    out
}

pub(crate) fn resize_bilinear_backward(dy: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut dx = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let g = &dy[ch * oh * ow..(ch + 1) * oh * ow];
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (1.0 - a.w1);
                let bot = v * a.w1;
                d[a.i0 * w + b.i0] += top * (1.0 - b.w1);
                d[a.i0 * w + b.i1] += top * b.w1;
                d[a.i1 * w + b.i0] += bot * (1.0 - b.w1);
                d[a.i1 * w + b.i1] += bot * b.w1;
            }
        }
    }
    dx
}
