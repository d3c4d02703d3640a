//! Convolution, pooling, bilinear upsampling, and bilinear sampling.

use super::{numel, Op, Padding, Tensor};
use crate::elem::Elem;
use crate::error::{Error, Result};

/// Output size and leading pad for one spatial dim.
pub(crate) fn conv_dim(size: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(size);
            (out, total / 2)
        }
        Padding::Valid => ((size - k) / stride + 1, 0),
    }
}

/// input [B,C,H,W] laid out into columns [C*kh*kw, Ho*Wo] for one batch item.
pub(crate) fn im2col<E: Elem>(
    input: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    ho: usize,
    wo: usize,
    col: &mut [E],
) {
    let cols = ho * wo;
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let out_row = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad_h as isize;
                    let dst = &mut out_row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(E::ZERO);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad_w as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            E::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add columns back into an input-shaped buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add<E: Elem>(
    col: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    ho: usize,
    wo: usize,
    input_grad: &mut [E],
) {
    let cols = ho * wo;
    for ch in 0..c {
        let plane = &mut input_grad[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let col_row = &col[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &col_row[oy * wo..(oy + 1) * wo];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad_w as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGeom {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn conv_geometry<E: Elem>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    let is = input.shape();
    let ks = kernel.shape();
    if is.len() != 4 || ks.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d expects input [B,C,H,W] and kernel [O,C,kh,kw], got {:?} and {:?}",
            is, ks
        )));
    }
    let (b, c, h, w) = (is[0], is[1], is[2], is[3]);
    let (o, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if c != kc {
        return Err(Error::ShapeMismatch(format!(
            "conv2d channel mismatch: input has {c}, kernel expects {kc}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel dims must be odd, got {kh}x{kw}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    let (ho, pad_h) = conv_dim(h, kh, stride, padding);
    let (wo, pad_w) = conv_dim(w, kw, stride, padding);
    Ok(ConvGeom {
        b,
        c,
        h,
        w,
        o,
        kh,
        kw,
        pad_h,
        pad_w,
        ho,
        wo,
    })
}

fn bilinear_taps(pos: f64, size: usize) -> (usize, usize, f64) {
    let limit = (size - 1) as f64;
    let pc = pos.clamp(0.0, limit);
    let i0 = pc.floor() as usize;
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, pc - i0 as f64)
}

impl<E: Elem> Tensor<E> {
    /// 2D cross-correlation: input [B,C,H,W] * kernel [O,C,kh,kw].
    pub fn conv2d(&self, kernel: &Tensor<E>, stride: usize, padding: Padding) -> Result<Tensor<E>> {
        let g = conv_geometry(self, kernel, stride, padding)?;
        let cols = g.ho * g.wo;
        let krows = g.c * g.kh * g.kw;
        let mut col = vec![E::ZERO; krows * cols];
        let mut out = vec![E::ZERO; g.b * g.o * cols];
        let in_data = self.data();
        for b in 0..g.b {
            im2col(
                &in_data[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w],
                g.c,
                g.h,
                g.w,
                g.kh,
                g.kw,
                stride,
                g.pad_h,
                g.pad_w,
                g.ho,
                g.wo,
                &mut col,
            );
            unsafe {
                E::gemm(
                    g.o,
                    krows,
                    cols,
                    E::ONE,
                    kernel.data().as_ptr(),
                    krows as isize,
                    1,
                    col.as_ptr(),
                    cols as isize,
                    1,
                    E::ZERO,
                    out.as_mut_ptr().add(b * g.o * cols),
                    cols as isize,
                    1,
                );
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![g.b, g.o, g.ho, g.wo],
            Op::Conv2d {
                input: self.clone(),
                kernel: kernel.clone(),
                stride,
                padding,
            },
        ))
    }

    /// k x k average pooling with stride k; spatial dims must divide by k.
    pub fn avg_pool(&self, k: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!("avg_pool expects [B,C,H,W], got {:?}", s)));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h % k != 0 || w % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "avg_pool({k}) on {h}x{w}: dims must be divisible"
            )));
        }
        let (ho, wo) = (h / k, w / k);
        let inv = E::ONE / E::from_f64((k * k) as f64);
        let mut out = vec![E::ZERO; b * c * ho * wo];
        let data = self.data();
        for bc in 0..b * c {
            let plane = &data[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = E::ZERO;
                    for dy in 0..k {
                        let row = &plane[(oy * k + dy) * w + ox * k..];
                        for dx in 0..k {
                            acc += row[dx];
                        }
                    }
                    dst[oy * wo + ox] = acc * inv;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![b, c, ho, wo],
            Op::AvgPool { x: self.clone(), k },
        ))
    }

    /// Factor-2 bilinear upsampling, align-corners-false.
    pub fn bilinear_upsample2(&self) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "bilinear_upsample2 expects [B,C,H,W], got {:?}",
                s
            )));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![E::ZERO; b * c * ho * wo];
        let data = self.data();
        // precompute taps per output row/col
        let ytaps: Vec<(usize, usize, f64)> = (0..ho)
            .map(|i| bilinear_taps((i as f64 + 0.5) / 2.0 - 0.5, h))
            .collect();
        let xtaps: Vec<(usize, usize, f64)> = (0..wo)
            .map(|i| bilinear_taps((i as f64 + 0.5) / 2.0 - 0.5, w))
            .collect();
        for bc in 0..b * c {
            let plane = &data[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
            for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                let fy = E::from_f64(fy);
                for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                    let fx = E::from_f64(fx);
                    let v00 = plane[y0 * w + x0];
                    let v01 = plane[y0 * w + x1];
                    let v10 = plane[y1 * w + x0];
                    let v11 = plane[y1 * w + x1];
                    let top = v00 + (v01 - v00) * fx;
                    let bot = v10 + (v11 - v10) * fx;
                    dst[oy * wo + ox] = top + (bot - top) * fy;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![b, c, ho, wo],
            Op::BilinearUp { x: self.clone() },
        ))
    }

    /// Bilinear interpolation of `self` at continuous pixel coordinates.
    ///
    /// src is [C,H,W] with coords [H',W',2], or batched [B,C,H,W] with
    /// coords [B,H',W',2]. The last coord dim is (x, y) where integer values
    /// address exact source pixels. Out-of-range coordinates clamp to the
    /// edge; differentiable w.r.t. both source values and coordinates.
    pub fn bilinear_sample(&self, coords: &Tensor<E>) -> Result<Tensor<E>> {
        let (batched, b, c, h, w) = match self.shape() {
            [c, h, w] => (false, 1usize, *c, *h, *w),
            [b, c, h, w] => (true, *b, *c, *h, *w),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "bilinear_sample source must be [C,H,W] or [B,C,H,W], got {:?}",
                    s
                )))
            }
        };
        let (hp, wp) = match (batched, coords.shape()) {
            (false, [hp, wp, 2]) => (*hp, *wp),
            (true, [cb, hp, wp, 2]) if *cb == b => (*hp, *wp),
            (_, s) => {
                return Err(Error::ShapeMismatch(format!(
                    "bilinear_sample coords shape {:?} does not match source {:?}",
                    s,
                    self.shape()
                )))
            }
        };
        let mut out = vec![E::ZERO; b * c * hp * wp];
        let src = self.data();
        let cdat = coords.data();
        for bi in 0..b {
            let cbase = bi * hp * wp * 2;
            for p in 0..hp * wp {
                let x = cdat[cbase + p * 2].to_f64();
                let y = cdat[cbase + p * 2 + 1].to_f64();
                let (x0, x1, fx) = bilinear_taps(x, w);
                let (y0, y1, fy) = bilinear_taps(y, h);
                let (fx, fy) = (E::from_f64(fx), E::from_f64(fy));
                for ch in 0..c {
                    let plane = &src[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
                    let v00 = plane[y0 * w + x0];
                    let v01 = plane[y0 * w + x1];
                    let v10 = plane[y1 * w + x0];
                    let v11 = plane[y1 * w + x1];
                    let top = v00 + (v01 - v00) * fx;
                    let bot = v10 + (v11 - v10) * fx;
                    out[(bi * c + ch) * hp * wp + p] = top + (bot - top) * fy;
                }
            }
        }
        let out_shape = if batched {
            vec![b, c, hp, wp]
        } else {
            vec![c, hp, wp]
        };
        debug_assert_eq!(numel(&out_shape), out.len());
        Ok(Tensor::from_op(
            out,
            out_shape,
            Op::BilinearSample {
                src: self.clone(),
                coords: coords.clone(),
            },
        ))
    }
}
