//! Direct 2-D convolution (cross-correlation) via im2col + GEMM.

use super::element::gemm;
use super::Element;

/// Output columns processed per GEMM call; several images share one call.
const COLS_PER_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn pixels_out(&self) -> usize {
        self.h_out * self.w_out
    }

    fn images_per_chunk(&self) -> usize {
        (COLS_PER_CHUNK / self.pixels_out()).clamp(1, self.batch)
    }
}

/// Spatial output size with floor semantics; `None` when the kernel does not fit.
pub fn out_size(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Output columns `[lo, hi)` whose input column `ox·stride + kx − pad` lies inside `[0, size)`.
fn valid_range(size: usize, out: usize, k_off: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k_off { (pad - k_off).div_ceil(stride) } else { 0 };
    let hi = if size + pad > k_off { ((size + pad - k_off - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Writes the patches of image `x` (shape `[c_in,h,w]`) into `col`, a
/// `[patch, ld]` row-major matrix, starting at column `col_off`.
fn im2col<E: Element>(x: &[E], g: &ConvGeom, col: &mut [E], ld: usize, col_off: usize) {
    let p_out = g.pixels_out();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (y_lo, y_hi) = valid_range(g.h, g.h_out, ky, g.stride, g.pad);
            for kx in 0..g.k {
                let (x_lo, x_hi) = valid_range(g.w, g.w_out, kx, g.stride, g.pad);
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * ld + col_off..row * ld + col_off + p_out];
                dst[..y_lo * g.w_out].fill(E::zero());
                dst[y_hi * g.w_out..].fill(E::zero());
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    line[..x_lo].fill(E::zero());
                    line[x_hi..].fill(E::zero());
                    let ix0 = x_lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[x_lo..x_hi].copy_from_slice(&src[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for (v, &s) in line[x_lo..x_hi].iter_mut().zip(src[ix0..].iter().step_by(g.stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto image gradient `dx` (`[c_in,h,w]`).
fn col2im<E: Element>(col: &[E], g: &ConvGeom, ld: usize, col_off: usize, dx: &mut [E]) {
    let p_out = g.pixels_out();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (y_lo, y_hi) = valid_range(g.h, g.h_out, ky, g.stride, g.pad);
            for kx in 0..g.k {
                let (x_lo, x_hi) = valid_range(g.w, g.w_out, kx, g.stride, g.pad);
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * ld + col_off..row * ld + col_off + p_out];
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let line = &src[oy * g.w_out + x_lo..oy * g.w_out + x_hi];
                    let ix0 = x_lo * g.stride + kx - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        for (d, &v) in dst[ix0..ix0 + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[ix0..].iter_mut().step_by(g.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<E: Element>(x: &[E], w: &[E], bias: Option<&[E]>, g: &ConvGeom) -> Vec<E> {
    let p_out = g.pixels_out();
    let img_in = g.c_in * g.h * g.w;
    let img_out = g.c_out * p_out;
    let per_chunk = g.images_per_chunk();
    let mut out = vec![E::zero(); g.batch * img_out];
    let mut col = vec![E::zero(); g.patch() * per_chunk * p_out];
    let mut y = vec![E::zero(); g.c_out * per_chunk * p_out];

    let mut start = 0;
    while start < g.batch {
        let nb = per_chunk.min(g.batch - start);
        let ld = nb * p_out;
        for i in 0..nb {
            let b = start + i;
            im2col(&x[b * img_in..(b + 1) * img_in], g, &mut col, ld, i * p_out);
        }
        gemm(g.c_out, g.patch(), ld, E::one(), w, false, &col, false, E::zero(), &mut y);
        for i in 0..nb {
            let dst = &mut out[(start + i) * img_out..(start + i + 1) * img_out];
            for co in 0..g.c_out {
                let src = &y[co * ld + i * p_out..co * ld + (i + 1) * p_out];
                let b0 = bias.map_or(E::zero(), |b| b[co]);
                for (d, &s) in dst[co * p_out..(co + 1) * p_out].iter_mut().zip(src) {
                    *d = s + b0;
                }
            }
        }
        start += nb;
    }
    out
}

/// Accumulates gradients for whichever of input, weight and bias are requested.
pub(crate) fn backward<E: Element>(
    x: &[E],
    w: &[E],
    dy: &[E],
    g: &ConvGeom,
    mut dx: Option<&mut [E]>,
    mut dw: Option<&mut [E]>,
    db: Option<&mut [E]>,
) {
    let p_out = g.pixels_out();
    let img_in = g.c_in * g.h * g.w;
    let img_out = g.c_out * p_out;

    if let Some(db) = db {
        for b in 0..g.batch {
            for co in 0..g.c_out {
                let s: E = dy[b * img_out + co * p_out..b * img_out + (co + 1) * p_out].iter().copied().sum();
                db[co] += s;
            }
        }
    }
    if dx.is_none() && dw.is_none() {
        return;
    }

    let per_chunk = g.images_per_chunk();
    let mut col = vec![E::zero(); g.patch() * per_chunk * p_out];
    let mut dyc = vec![E::zero(); g.c_out * per_chunk * p_out];
    let mut start = 0;
    while start < g.batch {
        let nb = per_chunk.min(g.batch - start);
        let ld = nb * p_out;
        for i in 0..nb {
            let src = &dy[(start + i) * img_out..(start + i + 1) * img_out];
            for co in 0..g.c_out {
                dyc[co * ld + i * p_out..co * ld + (i + 1) * p_out]
                    .copy_from_slice(&src[co * p_out..(co + 1) * p_out]);
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            for i in 0..nb {
                let b = start + i;
                im2col(&x[b * img_in..(b + 1) * img_in], g, &mut col, ld, i * p_out);
            }
            // dW[c_out, patch] += dY[c_out, ld] · col[patch, ld]^T
            gemm(g.c_out, ld, g.patch(), E::one(), &dyc, false, &col, true, E::one(), dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcol[patch, ld] = W[c_out, patch]^T · dY[c_out, ld]
            gemm(g.patch(), g.c_out, ld, E::one(), w, true, &dyc, false, E::zero(), &mut col);
            for i in 0..nb {
                let b = start + i;
                col2im(&col, g, ld, i * p_out, &mut dx[b * img_in..(b + 1) * img_in]);
            }
        }
        start += nb;
    }
}
