//! Raw numeric kernels on row-major slices. Shape validation happens in the
//! tape methods; these functions assume consistent extents.

use super::Real;

pub fn conv_out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    let span = padded - k;
    (span % stride == 0).then_some(span / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Output columns `ox` whose source column `ox + kx − pad` lies inside a
/// row of width `w` (stride 1).
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).min(g.wo);
    let hi = (g.w + g.pad).saturating_sub(kx).min(g.wo).max(lo);
    (lo, hi)
}

fn im2col<R: Real>(g: &ConvGeom, img: &[R], col: &mut [R]) {
    let hw_o = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * hw_o..(row + 1) * hw_o];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(R::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        drow[..lo].fill(R::zero());
                        drow[hi..].fill(R::zero());
                        let s0 = lo + kx - g.pad;
                        drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        continue;
                    }
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            R::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<R: Real>(g: &ConvGeom, col: &[R], img: &mut [R]) {
    let hw_o = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * hw_o..(row + 1) * hw_o];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let s0 = lo + kx - g.pad;
                        let srow = &src[oy * g.wo + lo..oy * g.wo + hi];
                        for (d, v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(srow) {
                            *d += *v;
                        }
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation forward pass. `input` is `[B,Cin,H,W]`, `kernel`
/// `[Cout,Cin,k,k]`; the result is `[B,Cout,Ho,Wo]` row-major.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<R: Real>(
    input: &[R],
    kernel: &[R],
    bias: Option<&[R]>,
    [b, cin, h, w]: [usize; 4],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<R> {
    let ho = conv_out_dim(h, k, stride, pad).expect("validated geometry");
    let wo = conv_out_dim(w, k, stride, pad).expect("validated geometry");
    let g = ConvGeom {
        b,
        cin,
        h,
        w,
        cout,
        k,
        stride,
        pad,
        ho,
        wo,
    };
    conv_forward_geom(&g, input, kernel, bias)
}

pub(crate) fn conv_forward_geom<R: Real>(
    g: &ConvGeom,
    input: &[R],
    kernel: &[R],
    bias: Option<&[R]>,
) -> Vec<R> {
    let hw_o = g.ho * g.wo;
    let rows = g.col_rows();
    let mut out = vec![R::zero(); g.b * g.cout * hw_o];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![R::zero(); rows * hw_o]
    };
    for bi in 0..g.b {
        let img = &input[bi * g.cin * g.h * g.w..(bi + 1) * g.cin * g.h * g.w];
        let cols: &[R] = if g.is_pointwise() {
            img
        } else {
            im2col(g, img, &mut col);
            &col
        };
        let dst = &mut out[bi * g.cout * hw_o..(bi + 1) * g.cout * hw_o];
        if let Some(bias) = bias {
            for (co, plane) in dst.chunks_mut(hw_o).enumerate() {
                plane.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { R::one() } else { R::zero() };
        R::gemm(
            g.cout,
            rows,
            hw_o,
            R::one(),
            kernel,
            rows as isize,
            1,
            cols,
            hw_o as isize,
            1,
            beta,
            dst,
            hw_o as isize,
            1,
        );
    }
    out
}

/// Gradients of the convolution. Returns `(d_input, d_kernel, d_bias)`,
/// each only when requested.
pub(crate) fn conv_backward_geom<R: Real>(
    g: &ConvGeom,
    input: &[R],
    kernel: &[R],
    dout: &[R],
    need_dx: bool,
    need_dk: bool,
    need_db: bool,
) -> (Option<Vec<R>>, Option<Vec<R>>, Option<Vec<R>>) {
    let hw_o = g.ho * g.wo;
    let rows = g.col_rows();
    let mut dx = need_dx.then(|| vec![R::zero(); input.len()]);
    let mut dk = need_dk.then(|| vec![R::zero(); kernel.len()]);
    let mut db = need_db.then(|| vec![R::zero(); g.cout]);
    let mut col = if g.is_pointwise() || !need_dk {
        Vec::new()
    } else {
        vec![R::zero(); rows * hw_o]
    };
    let mut dcol = if g.is_pointwise() || !need_dx {
        Vec::new()
    } else {
        vec![R::zero(); rows * hw_o]
    };
    let in_sz = g.cin * g.h * g.w;
    for bi in 0..g.b {
        let go = &dout[bi * g.cout * hw_o..(bi + 1) * g.cout * hw_o];
        if let Some(db) = db.as_mut() {
            for (co, plane) in go.chunks(hw_o).enumerate() {
                db[co] += plane.iter().copied().sum::<R>();
            }
        }
        if let Some(dk) = dk.as_mut() {
            let img = &input[bi * in_sz..(bi + 1) * in_sz];
            let cols: &[R] = if g.is_pointwise() {
                img
            } else {
                im2col(g, img, &mut col);
                &col
            };
            // dk[Cout, rows] += go[Cout, hw] · colsᵀ
            R::gemm(
                g.cout,
                hw_o,
                rows,
                R::one(),
                go,
                hw_o as isize,
                1,
                cols,
                1,
                hw_o as isize,
                R::one(),
                dk,
                rows as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dimg = &mut dx[bi * in_sz..(bi + 1) * in_sz];
            if g.is_pointwise() {
                // dimg[Cin, hw] = kernelᵀ · go
                R::gemm(
                    rows,
                    g.cout,
                    hw_o,
                    R::one(),
                    kernel,
                    1,
                    rows as isize,
                    go,
                    hw_o as isize,
                    1,
                    R::zero(),
                    dimg,
                    hw_o as isize,
                    1,
                );
            } else {
                R::gemm(
                    rows,
                    g.cout,
                    hw_o,
                    R::one(),
                    kernel,
                    1,
                    rows as isize,
                    go,
                    hw_o as isize,
                    1,
                    R::zero(),
                    &mut dcol,
                    hw_o as isize,
                    1,
                );
                col2im(g, &dcol, dimg);
            }
        }
    }
    (dx, dk, db)
}

/// 2×2 stride-2 transposed convolution; kernel `[Cin,Cout,2,2]`.
pub(crate) fn conv_transpose2_forward<R: Real>(
    input: &[R],
    kernel: &[R],
    bias: Option<&[R]>,
    [b, cin, h, w]: [usize; 4],
    cout: usize,
) -> Vec<R> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![R::zero(); b * cout * ho * wo];
    for bi in 0..b {
        for co in 0..cout {
            let plane = &mut out[(bi * cout + co) * ho * wo..(bi * cout + co + 1) * ho * wo];
            if let Some(bias) = bias {
                plane.fill(bias[co]);
            }
            for ci in 0..cin {
                let src = &input[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                let kk = &kernel[(ci * cout + co) * 4..(ci * cout + co) * 4 + 4];
                for y in 0..h {
                    for x in 0..w {
                        let v = src[y * w + x];
                        if v.is_zero() {
                            continue;
                        }
                        let base = 2 * y * wo + 2 * x;
                        plane[base] += v * kk[0];
                        plane[base + 1] += v * kk[1];
                        plane[base + wo] += v * kk[2];
                        plane[base + wo + 1] += v * kk[3];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
pub(crate) fn conv_transpose2_backward<R: Real>(
    input: &[R],
    kernel: &[R],
    dout: &[R],
    [b, cin, h, w]: [usize; 4],
    cout: usize,
) -> (Vec<R>, Vec<R>, Vec<R>) {
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![R::zero(); input.len()];
    let mut dk = vec![R::zero(); kernel.len()];
    let mut db = vec![R::zero(); cout];
    for bi in 0..b {
        for co in 0..cout {
            let go = &dout[(bi * cout + co) * ho * wo..(bi * cout + co + 1) * ho * wo];
            db[co] += go.iter().copied().sum::<R>();
            for ci in 0..cin {
                let src = &input[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                let kidx = (ci * cout + co) * 4;
                let dsrc = &mut dx[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let base = 2 * y * wo + 2 * x;
                        let g = [go[base], go[base + 1], go[base + wo], go[base + wo + 1]];
                        let v = src[y * w + x];
                        let mut acc = R::zero();
                        for q in 0..4 {
                            acc += g[q] * kernel[kidx + q];
                            dk[kidx + q] += g[q] * v;
                        }
                        dsrc[y * w + x] += acc;
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// Source taps for ×2 bilinear upsampling with the align-corners-false
/// convention: output index `o` samples input coordinate `(o + 0.5)/2 - 0.5`.
pub fn bilinear_source(o: usize, n_in: usize) -> (usize, usize, f64) {
    let s = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, s - i0 as f64)
}

pub(crate) fn upsample_nearest<R: Real>(input: &[R], planes: usize, h: usize, w: usize) -> Vec<R> {
    let wo = 2 * w;
    let mut out = vec![R::zero(); planes * 4 * h * w];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let v = src[y * w + x];
                let base = 2 * y * wo + 2 * x;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + wo] = v;
                dst[base + wo + 1] = v;
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest_backward<R: Real>(
    dout: &[R],
    planes: usize,
    h: usize,
    w: usize,
) -> Vec<R> {
    let wo = 2 * w;
    let mut dx = vec![R::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dout[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let base = 2 * y * wo + 2 * x;
                dx[p * h * w + y * w + x] =
                    src[base] + src[base + 1] + src[base + wo] + src[base + wo + 1];
            }
        }
    }
    dx
}

fn bilinear_table(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n).map(|o| bilinear_source(o, n)).collect()
}

pub(crate) fn upsample_bilinear<R: Real>(input: &[R], planes: usize, h: usize, w: usize) -> Vec<R> {
    let (ho, wo) = (2 * h, 2 * w);
    let ty = bilinear_table(h);
    let tx = bilinear_table(w);
    let mut out = vec![R::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = R::lit(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = R::lit(lx);
                let top = src[y0 * w + x0] * (R::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (R::one() - lx) + src[y1 * w + x1] * lx;
                out[p * ho * wo + oy * wo + ox] = top * (R::one() - ly) + bot * ly;
            }
        }
    }
    out
}

pub(crate) fn upsample_bilinear_backward<R: Real>(
    dout: &[R],
    planes: usize,
    h: usize,
    w: usize,
) -> Vec<R> {
    let (ho, wo) = (2 * h, 2 * w);
    let ty = bilinear_table(h);
    let tx = bilinear_table(w);
    let mut dx = vec![R::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = R::lit(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = R::lit(lx);
                let g = dout[p * ho * wo + oy * wo + ox];
                let gt = g * (R::one() - ly);
                let gb = g * ly;
                dst[y0 * w + x0] += gt * (R::one() - lx);
                dst[y0 * w + x1] += gt * lx;
                dst[y1 * w + x0] += gb * (R::one() - lx);
                dst[y1 * w + x1] += gb * lx;
            }
        }
    }
    dx
}

/// 2×2 max pooling. Returns the pooled values and, per output, the flat
/// input index that won (first in row-major window order on ties).
pub(crate) fn max_pool2<R: Real>(input: &[R], planes: usize, h: usize, w: usize) -> (Vec<R>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let cand = [
                    base + 2 * oy * w + 2 * ox,
                    base + 2 * oy * w + 2 * ox + 1,
                    base + (2 * oy + 1) * w + 2 * ox,
                    base + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = cand[0];
                for &c in &cand[1..] {
                    if input[c] > input[best] {
                        best = c;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Per-channel batch statistics over (B, H, W): returns (mean, biased var).
pub(crate) fn channel_stats<R: Real>(input: &[R], [b, c, h, w]: [usize; 4]) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let n = (b * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut s = 0.0;
        for bi in 0..b {
            s += input[(bi * c + ci) * hw..(bi * c + ci + 1) * hw]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        let m = s / n;
        let mut q = 0.0;
        for bi in 0..b {
            q += input[(bi * c + ci) * hw..(bi * c + ci + 1) * hw]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ci] = m;
        var[ci] = q / n;
    }
    (mean, var)
}
